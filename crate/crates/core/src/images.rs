//! Image fixtures standing in for real pixels: per-image annotated regions
//! with precomputed embeddings.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::ImageRef;

#[derive(Debug, thiserror::Error)]
pub enum ImageStoreError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("duplicate image id `{0}`")]
    Duplicate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Pixel box `(x, y, w, h)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h }
    }

    /// Clamp into a `width` x `height` image, keeping at least one pixel.
    pub fn clamp_to(self, width: u32, height: u32) -> Self {
        let width = width.max(1);
        let height = height.max(1);
        let x = self.x.min(width - 1);
        let y = self.y.min(height - 1);
        let w = self.w.min(width - x).max(1);
        let h = self.h.min(height - y).max(1);
        Self { x, y, w, h }
    }

    pub fn center_x(&self) -> f64 {
        f64::from(self.x) + f64::from(self.w) / 2.0
    }

    pub fn center_y(&self) -> f64 {
        f64::from(self.y) + f64::from(self.h) / 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionFixture {
    pub label: String,
    pub bbox: BBox,
    pub embedding: Vec<f64>,
    #[serde(default = "one")]
    pub confidence: f64,
    /// Visible attribute used to tell same-label instances apart.
    #[serde(default)]
    pub attribute: Option<String>,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageFixture {
    pub image_id: String,
    #[serde(default = "default_side")]
    pub width: u32,
    #[serde(default = "default_side")]
    pub height: u32,
    /// Short scene description; stands in for visual features in the
    /// domain classifier.
    #[serde(default)]
    pub caption: String,
    #[serde(default)]
    pub regions: Vec<RegionFixture>,
    pub whole_embedding: Vec<f64>,
    /// KG urls that are visually consistent with this image, with the
    /// match score the entity verifier reports.
    #[serde(default)]
    pub visual_matches: BTreeMap<String, f64>,
}

fn default_side() -> u32 {
    1024
}

#[derive(Debug, Clone, Default)]
pub struct ImageStore {
    images: HashMap<String, ImageFixture>,
}

impl ImageStore {
    pub fn from_fixtures(
        fixtures: impl IntoIterator<Item = ImageFixture>,
    ) -> Result<Self, ImageStoreError> {
        let mut store = Self::default();
        for f in fixtures {
            if store.images.contains_key(&f.image_id) {
                return Err(ImageStoreError::Duplicate(f.image_id));
            }
            store.images.insert(f.image_id.clone(), f);
        }
        Ok(store)
    }

    /// Load a directory of `*.json` files (one image each) or a JSONL file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ImageStoreError> {
        let path = path.as_ref();
        let parse = |p: &Path, s: &str| {
            serde_json::from_str::<ImageFixture>(s).map_err(|e| ImageStoreError::Parse {
                path: p.display().to_string(),
                message: e.to_string(),
            })
        };
        let mut fixtures = Vec::new();
        if path.is_dir() {
            let mut files: Vec<_> = std::fs::read_dir(path)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            for f in files {
                fixtures.push(parse(&f, &std::fs::read_to_string(&f)?)?);
            }
        } else {
            let text = std::fs::read_to_string(path)?;
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                fixtures.push(parse(path, line)?);
            }
        }
        Self::from_fixtures(fixtures)
    }

    pub fn get(&self, image: &ImageRef) -> Option<&ImageFixture> {
        self.images.get(image.as_str())
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clamp_keeps_box_inside() {
        let b = BBox::new(900, 10, 300, 50).clamp_to(1000, 40);
        assert_eq!(b, BBox::new(900, 10, 100, 30));
        let b = BBox::new(2000, 2000, 10, 10).clamp_to(100, 100);
        assert_eq!(b, BBox::new(99, 99, 1, 1));
    }

    #[test]
    fn parses_fixture_json() {
        let json = r#"{"image_id":"street","regions":[{"label":"car","bbox":{"x":0,"y":0,"w":10,"h":10},"embedding":[1,0]}],"whole_embedding":[0,1]}"#;
        let f: ImageFixture = serde_json::from_str(json).unwrap();
        assert_eq!(f.width, 1024);
        assert_eq!(f.regions[0].confidence, 1.0);
    }
}
