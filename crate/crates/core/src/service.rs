//! HTTP front end for a loaded [`Pipeline`].
//!
//! `POST /v1/report` with `{"image_ref": "..."}` returns the report and its
//! trace; `GET /healthz` returns `ok`. Requests beyond the configured
//! concurrency wait for a slot.

use std::future::Future;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::net::TcpListener;
use tokio::sync::Semaphore;

use crate::gateway::server::error_response;
use crate::pipeline::{Pipeline, PipelineError, Trace};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportRequest {
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportResponse {
    pub report: String,
    pub generator_id: String,
    pub trace: Trace,
}

struct AppState {
    pipeline: Arc<Pipeline>,
    slots: Semaphore,
}

fn status_for(e: &PipelineError) -> StatusCode {
    if e.is_not_found() {
        StatusCode::NOT_FOUND
    } else if e.is_invalid_input() {
        StatusCode::BAD_REQUEST
    } else if matches!(e, PipelineError::Stage { .. }) {
        StatusCode::BAD_GATEWAY
    } else {
        StatusCode::INTERNAL_SERVER_ERROR
    }
}

async fn report(
    State(state): State<Arc<AppState>>,
    body: Result<Json<ReportRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(rejection) => return error_response(StatusCode::BAD_REQUEST, rejection.body_text()),
    };
    let Ok(_slot) = state.slots.acquire().await else {
        return error_response(StatusCode::SERVICE_UNAVAILABLE, "shutting down");
    };
    match state.pipeline.run_report(&req.image_ref).await {
        Ok(out) => Json(ReportResponse {
            report: out.report.text,
            generator_id: out.report.generator_id,
            trace: out.trace,
        })
        .into_response(),
        Err(e) => {
            tracing::warn!(image_ref = %req.image_ref, error = %e, "report request failed");
            error_response(status_for(&e), e.to_string())
        }
    }
}

async fn healthz() -> &'static str {
    "ok"
}

pub fn router(pipeline: Arc<Pipeline>) -> Router {
    let slots = Semaphore::new(pipeline.config().concurrency);
    Router::new()
        .route("/v1/report", post(report))
        .route("/healthz", get(healthz))
        .with_state(Arc::new(AppState { pipeline, slots }))
}

/// Serves until `shutdown` resolves, then drains in-flight requests.
pub async fn serve(
    pipeline: Arc<Pipeline>,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(pipeline))
        .with_graceful_shutdown(shutdown)
        .await
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::RunConfig;
    use axum::body::{to_bytes, Body};
    use axum::http::Request;
    use tower::ServiceExt;

    async fn app() -> Router {
        router(Arc::new(Pipeline::from_config(RunConfig::mock(0)).await.unwrap()))
    }

    async fn post_json(app: Router, body: &str) -> (StatusCode, serde_json::Value) {
        let res = app
            .oneshot(
                Request::post("/v1/report")
                    .header("content-type", "application/json")
                    .body(Body::from(body.to_owned()))
                    .unwrap(),
            )
            .await
            .unwrap();
        let status = res.status();
        let bytes = to_bytes(res.into_body(), 1 << 20).await.unwrap();
        (status, serde_json::from_slice(&bytes).unwrap())
    }

    #[tokio::test]
    async fn report_ok() {
        let (status, v) = post_json(app().await, r#"{"image_ref":"00804"}"#).await;
        assert_eq!(status, StatusCode::OK);
        assert!(v["report"].as_str().unwrap().contains("Moderate"));
        assert_eq!(v["trace"]["snippets"].as_array().unwrap().len(), 3);
    }

    #[tokio::test]
    async fn errors_have_bodies() {
        let (status, v) = post_json(app().await, r#"{"image_ref":"unknown"}"#).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert!(v["error"].as_str().unwrap().contains("unknown"));

        let (status, v) = post_json(app().await, r#"{"image":"x"}"#).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
        assert!(v["error"].is_string());

        let (status, _) = post_json(app().await, r#"{"image_ref":""}"#).await;
        assert_eq!(status, StatusCode::BAD_REQUEST);
    }

    #[tokio::test]
    async fn health() {
        let res = app()
            .await
            .oneshot(Request::get("/healthz").body(Body::empty()).unwrap())
            .await
            .unwrap();
        assert_eq!(res.status(), StatusCode::OK);
        assert_eq!(&to_bytes(res.into_body(), 64).await.unwrap()[..], b"ok");
    }
}
