use serde::{Deserialize, Serialize};

/// Minimum and mean generated-token probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TokenStats {
    pub s_min: f64,
    pub s_mean: f64,
    pub count: usize,
}

impl TokenStats {
    /// `None` for an empty sequence.
    ///
    /// The mean is the plain left-to-right sum divided by the count, clamped
    /// into `[s_min, max]` so rounding can never break `s_min <= s_mean`.
    pub fn from_probs(probs: &[f64]) -> Option<Self> {
        if probs.is_empty() {
            return None;
        }
        let min = probs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = probs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = probs.iter().sum::<f64>() / probs.len() as f64;
        Some(Self {
            s_min: min,
            s_mean: if min == max {
                min
            } else {
                mean.clamp(min, max)
            },
            count: probs.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_ones() {
        let s = TokenStats::from_probs(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((s.s_min, s.s_mean, s.count), (1.0, 1.0, 3));
    }

    #[test]
    fn mixed() {
        let s = TokenStats::from_probs(&[0.5, 1.0, 0.9]).unwrap();
        assert_eq!(s.s_min, 0.5);
        assert!((s.s_mean - 0.8).abs() < 1e-15);
    }

    #[test]
    fn empty_is_none() {
        assert!(TokenStats::from_probs(&[]).is_none());
    }

    proptest! {
        #[test]
        fn min_le_mean_le_one(milli in prop::collection::vec(1u32..=1000, 1..64)) {
            let probs: Vec<f64> = milli.iter().map(|m| f64::from(*m) / 1000.0).collect();
            let s = TokenStats::from_probs(&probs).unwrap();
            prop_assert!(s.s_min <= s.s_mean && s.s_mean <= 1.0);
            let all_equal = probs.iter().all(|p| *p == probs[0]);
            prop_assert_eq!(s.s_min == s.s_mean, all_equal);
        }
    }
}
