//! Prompt composition for the report generator.
//!
//! The template lives in `resources/prompt_template_v1.txt` so its bytes can
//! be pinned by tests. The rendered prompt is
//!
//! ```text
//! You are an expert ophthalmologist. The classifier predicts: {P}. Relevant clinical context: {K}. Generate a concise diagnostic report for this fundus image.
//! ```
//!
//! where the classifier sentence is dropped when no prediction is supplied
//! and the context sentence is dropped when there are no snippets.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prediction::{format_confidence, DiagnosticPrediction};
use crate::retrieval::RetrievalResult;

pub const TEMPLATE_SOURCE: &str = include_str!("../resources/prompt_template_v1.txt");

/// Separator placed between snippets in the context sentence.
pub const SNIPPET_SEPARATOR: &str = " [SEP] ";

const PREDICTION_SLOT: &str = "{prediction}";
const CONTEXT_SLOT: &str = "{context}";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub version: String,
    pub persona: String,
    pub classifier: String,
    pub context: String,
    pub instruction: String,
}

impl PromptTemplate {
    /// Parses the `key = value` template resource. `#` lines are comments.
    pub fn parse(source: &str) -> Result<Self, String> {
        let mut fields: [Option<String>; 5] = Default::default();
        const KEYS: [&str; 5] = ["version", "persona", "classifier", "context", "instruction"];
        for (n, line) in source.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("template line {}: expected key = value", n + 1))?;
            let slot = KEYS
                .iter()
                .position(|k| *k == key.trim())
                .ok_or_else(|| format!("template line {}: unknown key {:?}", n + 1, key.trim()))?;
            fields[slot] = Some(value.trim().to_owned());
        }
        let [version, persona, classifier, context, instruction] = fields;
        let template = PromptTemplate {
            version: version.ok_or("template missing version")?,
            persona: persona.ok_or("template missing persona")?,
            classifier: classifier.ok_or("template missing classifier")?,
            context: context.ok_or("template missing context")?,
            instruction: instruction.ok_or("template missing instruction")?,
        };
        if !template.classifier.contains(PREDICTION_SLOT) || !template.context.contains(CONTEXT_SLOT) {
            return Err("template sentences must contain their slots".into());
        }
        Ok(template)
    }

    /// The template bundled with the crate.
    pub fn builtin() -> &'static PromptTemplate {
        static TEMPLATE: OnceLock<PromptTemplate> = OnceLock::new();
        TEMPLATE.get_or_init(|| PromptTemplate::parse(TEMPLATE_SOURCE).expect("bundled template is valid"))
    }

    pub fn render(&self, prediction_text: Option<&str>, snippets: &[&str]) -> String {
        let mut sentences: Vec<String> = vec![self.persona.clone()];
        if let Some(p) = prediction_text {
            sentences.push(self.classifier.replace(PREDICTION_SLOT, p));
        }
        if !snippets.is_empty() {
            sentences.push(self.context.replace(CONTEXT_SLOT, &snippets.join(SNIPPET_SEPARATOR)));
        }
        sentences.push(self.instruction.clone());
        sentences.join(" ")
    }
}

/// The composed generator input plus what is needed to trace it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub image_ref: String,
    /// `None` when the classifier is ablated.
    pub prediction_text: Option<String>,
    pub snippet_ids: Vec<String>,
    pub snippet_texts: Vec<String>,
    pub fallback: bool,
    pub rendered_prompt: String,
    pub template_version: String,
}

impl PromptBundle {
    /// Hex SHA-256 of the rendered prompt.
    pub fn fingerprint(&self) -> String {
        prompt_fingerprint(&self.rendered_prompt)
    }
}

pub fn prompt_fingerprint(rendered: &str) -> String {
    hex::encode(Sha256::digest(rendered.as_bytes()))
}

/// `DR grade 2 (Moderate), confidence 0.87; macular edema absent, confidence 0.91`
pub fn prediction_block(p: &DiagnosticPrediction) -> String {
    format!(
        "DR grade {} ({}), confidence {}; macular edema {}, confidence {}",
        p.grade().value(),
        p.grade().name(),
        format_confidence(p.grade_confidence()),
        if p.me_present() { "present" } else { "absent" },
        format_confidence(p.me_confidence()),
    )
}

pub fn compose_prompt(
    image_ref: &str,
    prediction: Option<&DiagnosticPrediction>,
    retrieval: Option<&RetrievalResult>,
) -> PromptBundle {
    compose_with(PromptTemplate::builtin(), image_ref, prediction, retrieval)
}

pub fn compose_with(
    template: &PromptTemplate,
    image_ref: &str,
    prediction: Option<&DiagnosticPrediction>,
    retrieval: Option<&RetrievalResult>,
) -> PromptBundle {
    let prediction_text = prediction.map(prediction_block);
    let snippets = retrieval.map(|r| r.snippets.as_slice()).unwrap_or_default();
    let snippet_texts: Vec<String> = snippets.iter().map(|s| s.entry.text.clone()).collect();
    let snippet_ids = snippets.iter().map(|s| s.entry.id.clone()).collect();
    let refs: Vec<&str> = snippet_texts.iter().map(String::as_str).collect();
    PromptBundle {
        image_ref: image_ref.to_owned(),
        rendered_prompt: template.render(prediction_text.as_deref(), &refs),
        prediction_text,
        snippet_ids,
        snippet_texts,
        fallback: retrieval.is_some_and(|r| r.fallback),
        template_version: template.version.clone(),
    }
}
