//! Contracts for the three model endpoints (embedder, classifier, report
//! generator), response validation, deterministic mocks, an HTTP client and a
//! mock model server speaking the same wire protocol.
//!
//! Every backend, mock or remote, returns through the validators in this
//! module, so a partially valid response never reaches the pipeline. Retries
//! are reserved for transport failures; validation failures are final.

pub mod http;
pub mod mock;
pub mod server;
pub mod wire;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prediction::{argmax, DiagnosticPrediction, DrGrade, NUM_GRADES};
use crate::prompt::PromptBundle;

/// Tolerance on the probability sum accepted from a classifier endpoint
/// before renormalization.
pub const WIRE_PROB_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("transport failure talking to {endpoint}: {message}")]
    Transport { endpoint: String, message: String },
    #[error("endpoint returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("inconsistent response: {0}")]
    Inconsistent(String),
    #[error("embedding {index} has dimension {got}, expected {expected}")]
    DimensionMismatch { index: usize, expected: usize, got: usize },
    #[error("generator returned an empty report")]
    EmptyGeneration,
    #[error("unknown image reference {0:?}")]
    UnknownImage(String),
    #[error("endpoint configuration: {0}")]
    Config(String),
}

impl GatewayError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, GatewayError::Transport { .. })
    }

    /// True when the error means the requested image does not exist.
    pub fn is_not_found(&self) -> bool {
        matches!(
            self,
            GatewayError::UnknownImage(_) | GatewayError::Status { status: 404, .. }
        )
    }
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    /// One vector per input text, all of the same dimension.
    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError>;
}

#[async_trait]
pub trait Classifier: Send + Sync {
    fn id(&self) -> &str;
    async fn classify(&self, image_ref: &str) -> Result<DiagnosticPrediction, GatewayError>;
}

#[async_trait]
pub trait Generator: Send + Sync {
    fn id(&self) -> &str;
    async fn generate(&self, bundle: &PromptBundle) -> Result<GeneratedReport, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub k_used: usize,
    pub fallback: bool,
    pub template_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedReport {
    pub text: String,
    pub prompt_fingerprint: String,
    pub generator_id: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub timeout_ms: u64,
    pub retries: u32,
    pub auth_token: Option<String>,
}

impl EndpointConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        EndpointConfig {
            base_url: base_url.into(),
            timeout_ms: 30_000,
            retries: 2,
            auth_token: None,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.timeout_ms == 0 {
            return Err(GatewayError::Config("timeout must be positive".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(GatewayError::Config(format!(
                "base_url {:?} must start with http:// or https://",
                self.base_url
            )));
        }
        Ok(())
    }
}

/// Rejects empty batches and empty texts before any backend is contacted.
pub fn check_embed_input(texts: &[String]) -> Result<(), GatewayError> {
    if texts.is_empty() {
        return Err(GatewayError::InvalidInput("no texts to embed".into()));
    }
    if let Some(i) = texts.iter().position(|t| t.trim().is_empty()) {
        return Err(GatewayError::InvalidInput(format!("text {i} is empty")));
    }
    Ok(())
}

pub fn validate_embeddings(
    n_texts: usize,
    response: wire::EmbedResponse,
) -> Result<Vec<Vec<f32>>, GatewayError> {
    if response.embeddings.len() != n_texts {
        return Err(GatewayError::Malformed(format!(
            "expected {n_texts} embeddings, got {}",
            response.embeddings.len()
        )));
    }
    if response.dim == 0 {
        return Err(GatewayError::Malformed("dim must be positive".into()));
    }
    for (index, v) in response.embeddings.iter().enumerate() {
        if v.len() != response.dim {
            return Err(GatewayError::DimensionMismatch {
                index,
                expected: response.dim,
                got: v.len(),
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(GatewayError::Malformed(format!("embedding {index} has non-finite values")));
        }
    }
    Ok(response.embeddings)
}

/// Checks a classifier response and turns it into a prediction.
///
/// Probabilities must sum to 1 within [`WIRE_PROB_TOLERANCE`]; they are then
/// renormalized. The reported grade must equal the argmax.
pub fn validate_classification(
    response: &wire::ClassifyResponse,
) -> Result<DiagnosticPrediction, GatewayError> {
    let grade = DrGrade::new(response.dr_grade).map_err(|e| GatewayError::Malformed(e.to_string()))?;
    if response.dr_probs.len() != NUM_GRADES {
        return Err(GatewayError::Malformed(format!(
            "dr_probs has {} entries, expected {NUM_GRADES}",
            response.dr_probs.len()
        )));
    }
    if response.dr_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(GatewayError::Malformed("dr_probs must be finite and non-negative".into()));
    }
    let sum: f64 = response.dr_probs.iter().sum();
    if (sum - 1.0).abs() > WIRE_PROB_TOLERANCE {
        return Err(GatewayError::Malformed(format!("dr_probs sum to {sum}, expected 1")));
    }
    let mut probs = [0.0; NUM_GRADES];
    for (dst, src) in probs.iter_mut().zip(&response.dr_probs) {
        *dst = src / sum;
    }
    let top = argmax(&probs);
    if top != grade.index() {
        return Err(GatewayError::Inconsistent(format!(
            "dr_grade {} but argmax(dr_probs) is {top}",
            grade.value()
        )));
    }
    DiagnosticPrediction::new(
        grade,
        response.me_present,
        response.dr_confidence,
        response.me_confidence,
        probs,
    )
    .map_err(|e| GatewayError::Malformed(e.to_string()))
}

/// Wraps generated text into a report carrying the bundle's provenance.
pub fn finish_generation(
    bundle: &PromptBundle,
    text: String,
    generator_id: &str,
) -> Result<GeneratedReport, GatewayError> {
    if text.trim().is_empty() {
        return Err(GatewayError::EmptyGeneration);
    }
    Ok(GeneratedReport {
        text,
        prompt_fingerprint: bundle.fingerprint(),
        generator_id: generator_id.to_owned(),
        provenance: Provenance {
            k_used: bundle.snippet_ids.len(),
            fallback: bundle.fallback,
            template_version: bundle.template_version.clone(),
        },
    })
}
