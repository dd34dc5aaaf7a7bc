use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ImageAgentError;
use crate::images::{BBox, ImageStore};
use crate::textproc::normalize;
use crate::ImageRef;

/// Located instance of an object, with the embedding of its crop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bbox: BBox,
    pub label: String,
    pub detector_confidence: f64,
    #[serde(default)]
    pub attribute: Option<String>,
    #[serde(skip_serializing, default)]
    pub embedding: Vec<f64>,
}

/// Pluggable open-vocabulary detector.
pub trait RegionDetector: Send + Sync {
    /// All instances of `object_name`. `DetectorUnavailable` when the
    /// detector cannot process the image.
    fn detect(&self, image: &ImageRef, object_name: &str) -> Result<Vec<Region>, ImageAgentError>;

    /// Single region covering the whole image.
    fn whole_image(&self, image: &ImageRef, label: &str) -> Result<Vec<Region>, ImageAgentError>;
}

/// Reads annotated boxes from image fixtures.
pub struct FixtureDetector {
    images: Arc<ImageStore>,
}

impl FixtureDetector {
    pub fn new(images: Arc<ImageStore>) -> Self {
        Self { images }
    }
}

fn label_matches(label: &str, object_name: &str) -> bool {
    let label = normalize(label);
    let name = normalize(object_name);
    label == name || name.split(' ').next_back() == Some(label.as_str())
}

impl RegionDetector for FixtureDetector {
    fn detect(&self, image: &ImageRef, object_name: &str) -> Result<Vec<Region>, ImageAgentError> {
        let fixture = self
            .images
            .get(image)
            .ok_or_else(|| ImageAgentError::DetectorUnavailable(image.to_string()))?;
        Ok(fixture
            .regions
            .iter()
            .filter(|r| label_matches(&r.label, object_name))
            .map(|r| Region {
                bbox: r.bbox.clamp_to(fixture.width, fixture.height),
                label: r.label.clone(),
                detector_confidence: r.confidence.clamp(0.0, 1.0),
                attribute: r.attribute.clone(),
                embedding: r.embedding.clone(),
            })
            .collect())
    }

    fn whole_image(&self, image: &ImageRef, label: &str) -> Result<Vec<Region>, ImageAgentError> {
        let fixture = self
            .images
            .get(image)
            .ok_or_else(|| ImageAgentError::UnknownImage(image.to_string()))?;
        Ok(vec![Region {
            bbox: BBox::new(0, 0, fixture.width.max(1), fixture.height.max(1)),
            label: label.to_owned(),
            detector_confidence: 0.0,
            attribute: None,
            embedding: fixture.whole_embedding.clone(),
        }])
    }
}
