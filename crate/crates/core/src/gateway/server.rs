//! A model server that exposes the mock backends over the wire protocol, so
//! the HTTP clients and the bring-your-own-endpoints path can run offline.

use std::future::Future;
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use tokio::net::TcpListener;

use super::mock::{mock_report, MockClassifier, MockEmbedder};
use super::wire::{
    ClassifyRequest, EmbedRequest, EmbedResponse, ErrorBody, GenerateRequest, GenerateResponse,
};
use super::GatewayError;

#[derive(Debug, Clone)]
pub struct MockBackends {
    pub embedder: MockEmbedder,
    pub classifier: MockClassifier,
}

impl MockBackends {
    pub fn builtin(seed: u64) -> Self {
        MockBackends {
            embedder: MockEmbedder::default(),
            classifier: MockClassifier::builtin(seed),
        }
    }
}

pub(crate) fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    (status, Json(ErrorBody { error: message.into() })).into_response()
}

fn gateway_error(e: GatewayError) -> Response {
    let status = match &e {
        GatewayError::UnknownImage(_) => StatusCode::NOT_FOUND,
        GatewayError::InvalidInput(_) => StatusCode::BAD_REQUEST,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    error_response(status, e.to_string())
}

async fn embed(State(b): State<Arc<MockBackends>>, Json(req): Json<EmbedRequest>) -> Response {
    match b.embedder.embed_sync(&req.texts) {
        Ok(embeddings) => Json(EmbedResponse {
            dim: b.embedder.dim(),
            embeddings,
        })
        .into_response(),
        Err(e) => gateway_error(e),
    }
}

async fn classify(State(b): State<Arc<MockBackends>>, Json(req): Json<ClassifyRequest>) -> Response {
    match b.classifier.response(&req.image_ref) {
        Ok(r) => Json(r).into_response(),
        Err(e) => gateway_error(e),
    }
}

async fn generate(Json(req): Json<GenerateRequest>) -> Response {
    if req.prompt.trim().is_empty() {
        return error_response(StatusCode::BAD_REQUEST, "empty prompt");
    }
    Json(GenerateResponse {
        text: mock_report(&req.prompt),
    })
    .into_response()
}

pub fn mock_model_router(backends: MockBackends) -> Router {
    Router::new()
        .route("/v1/embed", post(embed))
        .route("/v1/classify", post(classify))
        .route("/v1/generate", post(generate))
        .with_state(Arc::new(backends))
}

pub async fn serve_mock_models(
    listener: TcpListener,
    backends: MockBackends,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, mock_model_router(backends))
        .with_graceful_shutdown(shutdown)
        .await
}
