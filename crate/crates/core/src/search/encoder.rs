use crate::textproc;

/// Maps text to a fixed-dimension L2-normalized embedding.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, text: &str) -> Vec<f64>;
}

/// Hashed bag-of-tokens embedding: each content token adds one count to the
/// bucket chosen by its FNV-1a hash. Text with no content tokens falls back
/// to all tokens; empty text embeds to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashedBagEncoder {
    dim: usize,
}

pub const DEFAULT_DIM: usize = 256;

impl HashedBagEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self { dim }
    }
}

impl Default for HashedBagEncoder {
    fn default() -> Self {
        Self::new(DEFAULT_DIM)
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

impl TextEncoder for HashedBagEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        let mut tokens = textproc::content_tokens(text);
        if tokens.is_empty() {
            tokens = textproc::tokens(text);
        }
        let mut v = vec![0.0; self.dim];
        for t in &tokens {
            v[(fnv1a(t.as_bytes()) % self.dim as u64) as usize] += 1.0;
        }
        l2_normalize(&mut v);
        v
    }
}

/// Normalize in place; zero vectors are left unchanged. Returns the
/// original norm.
pub fn l2_normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Cosine similarity; 0 when either side is the zero vector.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}
