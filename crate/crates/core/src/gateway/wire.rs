//! JSON bodies for the model endpoints.
//!
//! ```text
//! POST /v1/embed     {"texts":[...]}                     -> {"dim":d,"embeddings":[[...],...]}
//! POST /v1/classify  {"image_ref":"...","image_b64":null} -> {"dr_grade":g,"dr_probs":[..5],"dr_confidence":r,"me_present":b,"me_confidence":r}
//! POST /v1/generate  {"prompt":"...","image_ref":"..."}   -> {"text":"..."}
//! ```
//!
//! Non-2xx responses carry `{"error":"..."}`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub dim: usize,
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyRequest {
    pub image_ref: String,
    pub image_b64: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifyResponse {
    pub dr_grade: i64,
    pub dr_probs: Vec<f64>,
    pub dr_confidence: f64,
    pub me_present: bool,
    pub me_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateRequest {
    pub prompt: String,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
}
