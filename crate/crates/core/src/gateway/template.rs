use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::OnceLock;

use regex::Regex;

use super::GatewayError;

/// Identifiers of the built-in templates.
pub mod templates {
    pub const EVALUATOR: &str = "evaluator";
    pub const DOMAIN_ROUTER: &str = "domain_router";
    pub const TOOL_ROUTER: &str = "tool_router";
    pub const OBJECT_LIST: &str = "object_list";
    pub const OBJECT_SELECT: &str = "object_select";
    pub const ENTITY_VERIFY: &str = "entity_verify";
    pub const DECOMPOSE: &str = "decompose";
    pub const POST_ANSWER: &str = "post_answer";
    pub const VERIFIER: &str = "verifier";
}

/// A prompt body with `{{slot}}` placeholders.
#[derive(Debug, Clone)]
pub struct Template {
    pub id: String,
    pub body: String,
    pub required_slots: BTreeSet<String>,
    pub requires_image: bool,
}

fn placeholder() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{([a-z_][a-z0-9_]*)\}\}").unwrap())
}

impl Template {
    /// Substitute slots. Required slots must be present; any other
    /// placeholder without a value renders empty.
    pub fn render(&self, slots: &BTreeMap<String, String>) -> Result<String, GatewayError> {
        if let Some(missing) = self.required_slots.iter().find(|s| !slots.contains_key(*s)) {
            return Err(GatewayError::MissingSlot {
                template: self.id.clone(),
                slot: missing.clone(),
            });
        }
        let rendered = placeholder().replace_all(&self.body, |caps: &regex::Captures<'_>| {
            slots.get(&caps[1]).cloned().unwrap_or_default()
        });
        Ok(rendered.into_owned())
    }
}

#[derive(Debug, Clone, Default)]
pub struct TemplateRegistry {
    templates: HashMap<String, Template>,
}

impl TemplateRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registry pre-loaded with the shipped prompt assets.
    pub fn with_defaults() -> Self {
        use templates::*;
        let mut reg = Self::new();
        let defaults: [(&str, &str, &[&str], bool); 9] = [
            (
                EVALUATOR,
                include_str!("../../assets/prompts/evaluator.txt"),
                &["query", "domain"],
                true,
            ),
            (
                DOMAIN_ROUTER,
                include_str!("../../assets/prompts/domain_router.txt"),
                &["query", "taxonomy"],
                true,
            ),
            (
                TOOL_ROUTER,
                include_str!("../../assets/prompts/tool_router.txt"),
                &["query", "reasoning"],
                true,
            ),
            (
                OBJECT_LIST,
                include_str!("../../assets/prompts/object_list.txt"),
                &["query", "object_num"],
                true,
            ),
            (
                OBJECT_SELECT,
                include_str!("../../assets/prompts/object_select.txt"),
                &["query", "object_list"],
                true,
            ),
            (
                ENTITY_VERIFY,
                include_str!("../../assets/prompts/entity_verify.txt"),
                &["query", "entity_name", "url"],
                true,
            ),
            (
                DECOMPOSE,
                include_str!("../../assets/prompts/decompose.txt"),
                &["query", "reasoning"],
                false,
            ),
            (
                POST_ANSWER,
                include_str!("../../assets/prompts/post_answer.txt"),
                &["question", "evidence"],
                true,
            ),
            (
                VERIFIER,
                include_str!("../../assets/prompts/verifier.txt"),
                &["question", "evidence", "answer"],
                true,
            ),
        ];
        for (id, body, slots, vision) in defaults {
            reg.insert(Template {
                id: id.to_owned(),
                body: body.to_owned(),
                required_slots: slots.iter().map(|s| s.to_string()).collect(),
                requires_image: vision,
            })
            .expect("default template ids are distinct");
        }
        reg
    }

    /// Register a text-only template.
    pub fn register(
        &mut self,
        template_id: &str,
        body: &str,
        required_slots: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<(), GatewayError> {
        self.insert(Template {
            id: template_id.to_owned(),
            body: body.to_owned(),
            required_slots: required_slots.into_iter().map(Into::into).collect(),
            requires_image: false,
        })
    }

    pub fn insert(&mut self, template: Template) -> Result<(), GatewayError> {
        if self.templates.contains_key(&template.id) {
            return Err(GatewayError::DuplicateTemplate(template.id));
        }
        self.templates.insert(template.id.clone(), template);
        Ok(())
    }

    pub fn get(&self, template_id: &str) -> Option<&Template> {
        self.templates.get(template_id)
    }

    pub fn contains(&self, template_id: &str) -> bool {
        self.templates.contains_key(template_id)
    }
}
