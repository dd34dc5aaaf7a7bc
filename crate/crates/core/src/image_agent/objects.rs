use serde::{Deserialize, Serialize};

use super::{ImageAgent, ImageAgentConfig, ImageAgentError};
use crate::gateway::{templates, CallContext};
use crate::textproc::{contains_phrase, last_json_object, normalize};
use crate::ImageRef;

const MAX_NAME_WORDS: usize = 3;

const POSITION_CUES: [(&str, &str); 8] = [
    ("left", "on the left"),
    ("right", "on the right"),
    ("top", "at the top"),
    ("bottom", "at the bottom"),
    ("front", "in front"),
    ("back", "in the back"),
    ("middle", "in the middle"),
    ("center", "in the middle"),
];

const COLOUR_CUES: [&str; 12] = [
    "red", "blue", "green", "yellow", "white", "black", "grey", "gray", "silver", "orange", "pink",
    "brown",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectCandidate {
    /// Category-level name of at most three words.
    pub name: String,
    /// Set when several candidates share the name.
    pub distinguishing_attribute: Option<String>,
}

impl ObjectCandidate {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            distinguishing_attribute: None,
        }
    }

    /// Name with its distinguishing attribute: "red car", "car on the right".
    pub fn label(&self) -> String {
        match &self.distinguishing_attribute {
            Some(a) if POSITION_CUES.iter().any(|(_, p)| p == a) => format!("{} {a}", self.name),
            Some(a) => format!("{a} {}", self.name),
            None => self.name.clone(),
        }
    }
}

/// Lowercase, map specific names to their category, cut to three words.
/// `None` for blacklisted or empty names.
pub fn normalize_object_name(raw: &str, config: &ImageAgentConfig) -> Option<String> {
    let folded = normalize(&raw.replace('-', " "));
    if folded.is_empty() {
        return None;
    }
    let raw_lower = raw.trim().to_lowercase();
    let mapped = config
        .categories
        .iter()
        .find(|(k, _)| contains_phrase(&raw_lower, k))
        .map(|(_, v)| normalize(v))
        .unwrap_or(folded);
    if config
        .blacklist
        .iter()
        .any(|b| mapped.split(' ').any(|w| w == b))
    {
        return None;
    }
    Some(
        mapped
            .split(' ')
            .take(MAX_NAME_WORDS)
            .collect::<Vec<_>>()
            .join(" "),
    )
}

impl ImageAgent {
    /// Ask the model for salient objects. Unusable replies give an empty
    /// list, which sends the caller to whole-image search.
    pub fn extract_objects(
        &self,
        ctx: &CallContext,
        image: &ImageRef,
        query: &str,
        object_num: usize,
    ) -> Vec<ObjectCandidate> {
        let object_num = object_num.max(1);
        let request = ctx
            .request(templates::OBJECT_LIST)
            .slot("query", query)
            .slot("object_num", object_num.to_string())
            .image(Some(image.clone()));
        let response = match self.gateway.generate_within(&request, ctx.deadline) {
            Ok(r) => r,
            Err(e) => {
                log::warn!("object list call failed: {e}");
                return Vec::new();
            }
        };
        let Some(items) = last_json_object(&response.text)
            .and_then(|m| m.get("object_list").cloned())
            .and_then(|v| serde_json::from_value::<Vec<String>>(v).ok())
        else {
            log::warn!("object list reply did not parse");
            return Vec::new();
        };
        items
            .iter()
            .filter_map(|s| normalize_object_name(s, &self.config))
            .take(object_num)
            .map(ObjectCandidate::new)
            .collect()
    }

    /// Choose the object the question is about. Same-name candidates get a
    /// distinguishing attribute from the query's colour or position cue.
    pub fn select_object(
        &self,
        ctx: &CallContext,
        candidates: &[ObjectCandidate],
        query: &str,
        image: &ImageRef,
    ) -> Result<ObjectCandidate, ImageAgentError> {
        let first = candidates.first().ok_or(ImageAgentError::EmptyCandidates)?;
        if candidates.len() == 1 {
            return Ok(first.clone());
        }
        let names: Vec<&str> = candidates.iter().map(|c| c.name.as_str()).collect();
        let mut chosen = self
            .ask_selection(ctx, &names, query, image)
            .unwrap_or_else(|| {
                // Without a usable reply, prefer a candidate the query names.
                candidates
                    .iter()
                    .find(|c| contains_phrase(query, &c.name))
                    .unwrap_or(first)
                    .clone()
            });
        if names.iter().filter(|n| **n == chosen.name).count() > 1 {
            chosen.distinguishing_attribute = self.distinguish(&chosen.name, query, image);
        }
        Ok(chosen)
    }

    fn ask_selection(
        &self,
        ctx: &CallContext,
        names: &[&str],
        query: &str,
        image: &ImageRef,
    ) -> Option<ObjectCandidate> {
        let list = serde_json::to_string(names).expect("string list serializes");
        let request = ctx
            .request(templates::OBJECT_SELECT)
            .slot("query", query)
            .slot("object_list", list)
            .image(Some(image.clone()));
        let response = self
            .gateway
            .generate_within(&request, ctx.deadline)
            .map_err(|e| log::warn!("object select call failed: {e}"))
            .ok()?;
        let picked = last_json_object(&response.text)?
            .get("object")?
            .as_str()?
            .trim()
            .to_lowercase();
        if let Some(n) = names.iter().find(|n| **n == picked) {
            return Some(ObjectCandidate::new(*n));
        }
        let nearest = names
            .iter()
            .max_by(|a, b| {
                strsim::normalized_levenshtein(a, &picked)
                    .total_cmp(&strsim::normalized_levenshtein(b, &picked))
                    .then_with(|| b.cmp(a))
            })
            .copied()?;
        log::warn!("selected object `{picked}` is not a candidate, using nearest `{nearest}`");
        Some(ObjectCandidate::new(nearest))
    }

    /// Attribute telling the queried instance apart: a colour the query
    /// names, else the fixture attribute of the instance at the queried
    /// position, else the position phrase itself.
    fn distinguish(&self, name: &str, query: &str, image: &ImageRef) -> Option<String> {
        if let Some(c) = COLOUR_CUES.iter().find(|c| contains_phrase(query, c)) {
            return Some((*c).to_owned());
        }
        let (cue, phrase) = POSITION_CUES
            .iter()
            .find(|(c, _)| contains_phrase(query, c))?;
        let from_fixture = self.images.as_ref().and_then(|store| {
            let fixture = store.get(image)?;
            let instances = fixture
                .regions
                .iter()
                .filter(|r| normalize(&r.label) == normalize(name));
            let key = |r: &&crate::images::RegionFixture| match *cue {
                "left" => -r.bbox.center_x(),
                "right" => r.bbox.center_x(),
                "top" | "back" => -r.bbox.center_y(),
                "bottom" | "front" => r.bbox.center_y(),
                _ => -(r.bbox.center_x() - f64::from(fixture.width) / 2.0).abs(),
            };
            instances
                .max_by(|a, b| key(a).total_cmp(&key(b)))?
                .attribute
                .clone()
        });
        Some(from_fixture.unwrap_or_else(|| (*phrase).to_owned()))
    }
}
