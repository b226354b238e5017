//! Prompt rendering from the template assets under `templates/`.
//!
//! Templates use `{name}` slots with no nesting; `{{` and `}}` are literal braces.
//! Substituted values are never rescanned, so model output embedded in a
//! validator prompt cannot inject placeholders.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsm::{identity_grid, render_grid, worst_case_dsm};

pub const RELATIONSHIP_TEMPLATE: &str = include_str!("../templates/relationship.txt");
pub const IDENTIFICATION_TEMPLATE: &str = include_str!("../templates/identification.txt");
pub const VALIDATOR_TEMPLATE: &str = include_str!("../templates/validator.txt");
pub const CORRECTION_TEMPLATE: &str = include_str!("../templates/correction.txt");
pub const CLASSIFICATION_TEMPLATE: &str = include_str!("../templates/classification.txt");
pub const GRAPH_EXTRACTION_TEMPLATE: &str = include_str!("../templates/graph_extraction.txt");
pub const GLEANING_TEMPLATE: &str = include_str!("../templates/gleaning.txt");
pub const COMMUNITY_SUMMARY_TEMPLATE: &str = include_str!("../templates/community_summary.txt");
pub const MAP_TEMPLATE: &str = include_str!("../templates/map.txt");
pub const REDUCE_TEMPLATE: &str = include_str!("../templates/reduce.txt");

/// Default character budget for the classification excerpt.
pub const CLASSIFICATION_BUDGET: usize = 4000;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PromptError {
    #[error("relationship prompt needs a nonempty component list")]
    MissingComponents,
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("context can only be injected into relationship, identification or update prompts, not {0:?}")]
    WrongKind(PromptKind),
    #[error("template has no value for placeholder {{{0}}}")]
    UnboundPlaceholder(String),
    #[error("unterminated placeholder in template")]
    Unterminated,
    #[error("invalid prompt spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PromptKind {
    Relationship,
    Identification,
    Update,
    Validator,
    Correction,
    Classification,
    GraphExtraction,
    Gleaning,
    CommunitySummary,
    Map,
    Reduce,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedPrompt {
    pub kind: PromptKind,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub concept_name: String,
    pub relationship_type: String,
    pub application_domain: String,
    pub components: Option<Vec<String>>,
    pub expected_n: usize,
}

impl PromptSpec {
    /// Spec with a component list; `expected_n` follows the list.
    pub fn with_components(
        concept_name: impl Into<String>,
        relationship_type: impl Into<String>,
        application_domain: impl Into<String>,
        components: Vec<String>,
    ) -> Self {
        let expected_n = components.len();
        PromptSpec {
            concept_name: concept_name.into(),
            relationship_type: relationship_type.into(),
            application_domain: application_domain.into(),
            components: Some(components),
            expected_n,
        }
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.expected_n == 0 {
            return Err(PromptError::InvalidSpec("expected_n must be positive".into()));
        }
        if let Some(c) = &self.components {
            if c.len() != self.expected_n {
                return Err(PromptError::InvalidSpec(format!(
                    "expected_n {} but {} components",
                    self.expected_n,
                    c.len()
                )));
            }
        }
        Ok(())
    }
}

/// Single-pass `{name}` substitution.
pub fn render(template: &str, vars: &HashMap<&str, String>) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() * 2);
    let mut chars = template.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        match c {
            '{' if chars.peek().map(|&(_, n)| n) == Some('{') => {
                chars.next();
                out.push('{');
            }
            '}' if chars.peek().map(|&(_, n)| n) == Some('}') => {
                chars.next();
                out.push('}');
            }
            '{' => {
                let start = i + 1;
                let end = loop {
                    match chars.next() {
                        Some((j, '}')) => break j,
                        Some(_) => {}
                        None => return Err(PromptError::Unterminated),
                    }
                };
                let name = &template[start..end];
                let value = vars
                    .get(name)
                    .ok_or_else(|| PromptError::UnboundPlaceholder(name.to_string()))?;
                out.push_str(value);
            }
            _ => out.push(c),
        }
    }
    Ok(out)
}

/// `["A", "B"]` with JSON string escaping.
pub fn render_component_list(components: &[String]) -> String {
    let items: Vec<String> = components
        .iter()
        .map(|c| serde_json::to_string(c).expect("string serializes"))
        .collect();
    format!("[{}]", items.join(", "))
}

fn relationship_text(spec: &PromptSpec) -> Result<String, PromptError> {
    let components = match &spec.components {
        Some(c) if !c.is_empty() => c,
        _ => return Err(PromptError::MissingComponents),
    };
    spec.validate()?;
    let n = components.len();
    let worst = worst_case_dsm(n).expect("n >= 1");
    let vars = HashMap::from([
        ("relationship_type", spec.relationship_type.clone()),
        ("concept_name", spec.concept_name.clone()),
        ("components", render_component_list(components)),
        ("n", n.to_string()),
        ("worst_case", render_grid(worst.cells())),
        ("format_example", render_grid(&identity_grid(n))),
    ]);
    render(RELATIONSHIP_TEMPLATE, &vars)
}

/// Relationship-determination prompt over a given component list.
pub fn relationship_prompt(spec: &PromptSpec) -> Result<RenderedPrompt, PromptError> {
    Ok(RenderedPrompt { kind: PromptKind::Relationship, text: relationship_text(spec)? })
}

/// Relationship prompt over model-identified components. Same body as
/// [`relationship_prompt`], tagged as an update.
pub fn update_prompt(spec: &PromptSpec) -> Result<RenderedPrompt, PromptError> {
    Ok(RenderedPrompt { kind: PromptKind::Update, text: relationship_text(spec)? })
}

pub fn identification_prompt(spec: &PromptSpec, k: usize) -> Result<RenderedPrompt, PromptError> {
    if k == 0 {
        return Err(PromptError::InvalidSpec("k must be positive".into()));
    }
    let vars = HashMap::from([
        ("concept_name", spec.concept_name.clone()),
        ("application_domain", spec.application_domain.clone()),
        ("relationship_type", spec.relationship_type.clone()),
        ("k", k.to_string()),
    ]);
    Ok(RenderedPrompt {
        kind: PromptKind::Identification,
        text: render(IDENTIFICATION_TEMPLATE, &vars)?,
    })
}

pub fn validator_prompt(original: &str, raw: &str) -> Result<RenderedPrompt, PromptError> {
    if original.is_empty() {
        return Err(PromptError::EmptyInput("original prompt"));
    }
    if raw.is_empty() {
        return Err(PromptError::EmptyInput("raw response"));
    }
    let vars = HashMap::from([
        ("original_prompt", original.to_string()),
        ("raw_response", raw.to_string()),
    ]);
    Ok(RenderedPrompt { kind: PromptKind::Validator, text: render(VALIDATOR_TEMPLATE, &vars)? })
}

/// Re-issue of an update prompt carrying the validator's feedback.
pub fn correction_prompt(original: &str, raw: &str, feedback: &str) -> Result<RenderedPrompt, PromptError> {
    if original.is_empty() {
        return Err(PromptError::EmptyInput("original prompt"));
    }
    let vars = HashMap::from([
        ("original_prompt", original.to_string()),
        ("raw_response", raw.to_string()),
        ("feedback", feedback.trim().to_string()),
    ]);
    Ok(RenderedPrompt { kind: PromptKind::Correction, text: render(CORRECTION_TEMPLATE, &vars)? })
}

/// Truncates to at most `budget` characters on a char boundary.
pub fn truncate_chars(text: &str, budget: usize) -> &str {
    match text.char_indices().nth(budget) {
        Some((i, _)) => &text[..i],
        None => text,
    }
}

pub fn classification_prompt(doc_excerpt: &str, budget: usize) -> Result<RenderedPrompt, PromptError> {
    if doc_excerpt.trim().is_empty() {
        return Err(PromptError::EmptyInput("document excerpt"));
    }
    let vars = HashMap::from([("excerpt", truncate_chars(doc_excerpt, budget).to_string())]);
    Ok(RenderedPrompt {
        kind: PromptKind::Classification,
        text: render(CLASSIFICATION_TEMPLATE, &vars)?,
    })
}

pub fn graph_extraction_prompt(concept_name: &str, text: &str) -> RenderedPrompt {
    let vars = HashMap::from([("concept_name", concept_name.to_string()), ("text", text.to_string())]);
    RenderedPrompt {
        kind: PromptKind::GraphExtraction,
        text: render(GRAPH_EXTRACTION_TEMPLATE, &vars).expect("static template"),
    }
}

pub fn gleaning_prompt(concept_name: &str, text: &str, previous: &str) -> RenderedPrompt {
    let vars = HashMap::from([
        ("concept_name", concept_name.to_string()),
        ("text", text.to_string()),
        ("previous", previous.to_string()),
    ]);
    RenderedPrompt { kind: PromptKind::Gleaning, text: render(GLEANING_TEMPLATE, &vars).expect("static template") }
}

pub fn community_summary_prompt(concept_name: &str, entities: &str, relations: &str) -> RenderedPrompt {
    let vars = HashMap::from([
        ("concept_name", concept_name.to_string()),
        ("entities", entities.to_string()),
        ("relations", relations.to_string()),
    ]);
    RenderedPrompt {
        kind: PromptKind::CommunitySummary,
        text: render(COMMUNITY_SUMMARY_TEMPLATE, &vars).expect("static template"),
    }
}

pub fn map_prompt(summary: &str, query: &str) -> RenderedPrompt {
    let vars = HashMap::from([("summary", summary.to_string()), ("query", query.to_string())]);
    RenderedPrompt { kind: PromptKind::Map, text: render(MAP_TEMPLATE, &vars).expect("static template") }
}

/// Reduce prompt; `partials` are `(community id, partial answer)` in the order given.
pub fn reduce_prompt(partials: &[(usize, String)], query: &str) -> RenderedPrompt {
    let body: Vec<String> = partials
        .iter()
        .map(|(id, p)| format!("Partial answer from community {id}:\n{p}"))
        .collect();
    let vars = HashMap::from([("partials", body.join("\n\n")), ("query", query.to_string())]);
    RenderedPrompt { kind: PromptKind::Reduce, text: render(REDUCE_TEMPLATE, &vars).expect("static template") }
}

pub const CONTEXT_HEADER: &str = "Context:";
pub const CONTEXT_DELIMITER: &str = "-----";

/// Prepends a delimited context block with the passages in retrieval order.
pub fn inject_context(prompt: &RenderedPrompt, passages: &[String]) -> Result<RenderedPrompt, PromptError> {
    if !matches!(
        prompt.kind,
        PromptKind::Relationship | PromptKind::Identification | PromptKind::Update
    ) {
        return Err(PromptError::WrongKind(prompt.kind));
    }
    let mut text = String::from(CONTEXT_HEADER);
    text.push('\n');
    for p in passages {
        text.push_str(CONTEXT_DELIMITER);
        text.push('\n');
        text.push_str(p);
        text.push('\n');
    }
    text.push_str(CONTEXT_DELIMITER);
    text.push_str("\n\n");
    text.push_str(&prompt.text);
    Ok(RenderedPrompt { kind: prompt.kind, text })
}
