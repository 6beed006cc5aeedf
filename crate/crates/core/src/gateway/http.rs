//! HTTP+JSON clients for remote model endpoints.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use serde::de::DeserializeOwned;
use serde::Serialize;
use tokio::sync::Semaphore;

use super::wire::{
    ClassifyRequest, ClassifyResponse, EmbedRequest, EmbedResponse, ErrorBody, GenerateRequest,
    GenerateResponse,
};
use super::{
    check_embed_input, finish_generation, validate_classification, validate_embeddings, Classifier,
    Embedder, EndpointConfig, GatewayError, GeneratedReport, Generator,
};
use crate::prediction::DiagnosticPrediction;
use crate::prompt::PromptBundle;

/// How the classifier receives the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ImageTransport {
    /// Only the path/URL is sent; the endpoint resolves it.
    #[default]
    Reference,
    /// The file at `image_ref` is read locally and sent base64-encoded.
    Base64,
}

/// A single remote endpoint with retry and an in-flight request limit.
#[derive(Debug, Clone)]
pub struct HttpEndpoint {
    config: EndpointConfig,
    client: reqwest::Client,
    permits: Arc<Semaphore>,
}

impl HttpEndpoint {
    pub fn new(config: EndpointConfig, max_in_flight: usize) -> Result<Self, GatewayError> {
        config.validate()?;
        let client = reqwest::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(HttpEndpoint {
            config,
            client,
            permits: Arc::new(Semaphore::new(max_in_flight.max(1))),
        })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url.trim_end_matches('/'), path)
    }

    /// POSTs `body` and decodes the JSON reply. Only transport failures are
    /// retried (idempotent endpoints are assumed); status and decoding
    /// failures return immediately.
    pub async fn post<Req, Resp>(&self, path: &str, body: &Req) -> Result<Resp, GatewayError>
    where
        Req: Serialize + Sync,
        Resp: DeserializeOwned,
    {
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        let url = self.url(path);
        let mut attempt = 0;
        loop {
            match self.post_once(&url, body).await {
                Err(e) if e.is_retryable() && attempt < self.config.retries => {
                    attempt += 1;
                    tracing::debug!(%url, attempt, error = %e, "retrying");
                    tokio::time::sleep(Duration::from_millis(25 * attempt as u64)).await;
                }
                other => return other,
            }
        }
    }

    async fn post_once<Req, Resp>(&self, url: &str, body: &Req) -> Result<Resp, GatewayError>
    where
        Req: Serialize + Sync,
        Resp: DeserializeOwned,
    {
        let transport = |e: reqwest::Error| GatewayError::Transport {
            endpoint: url.to_owned(),
            message: e.to_string(),
        };
        let mut request = self.client.post(url).json(body);
        if let Some(token) = &self.config.auth_token {
            request = request.bearer_auth(token);
        }
        let response = request.send().await.map_err(transport)?;
        let status = response.status();
        let bytes = response.bytes().await.map_err(transport)?;
        if !status.is_success() {
            let body = serde_json::from_slice::<ErrorBody>(&bytes)
                .map(|b| b.error)
                .unwrap_or_else(|_| String::from_utf8_lossy(&bytes).into_owned());
            return Err(GatewayError::Status {
                status: status.as_u16(),
                body,
            });
        }
        serde_json::from_slice(&bytes).map_err(|e| GatewayError::Malformed(e.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    endpoint: HttpEndpoint,
}

impl HttpEmbedder {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpEmbedder { endpoint }
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    fn id(&self) -> &str {
        &self.endpoint.config.base_url
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        check_embed_input(texts)?;
        let response: EmbedResponse = self
            .endpoint
            .post("/v1/embed", &EmbedRequest { texts: texts.to_vec() })
            .await?;
        validate_embeddings(texts.len(), response)
    }
}

#[derive(Debug, Clone)]
pub struct HttpClassifier {
    endpoint: HttpEndpoint,
    transport: ImageTransport,
}

impl HttpClassifier {
    pub fn new(endpoint: HttpEndpoint, transport: ImageTransport) -> Self {
        HttpClassifier { endpoint, transport }
    }
}

#[async_trait]
impl Classifier for HttpClassifier {
    fn id(&self) -> &str {
        &self.endpoint.config.base_url
    }

    async fn classify(&self, image_ref: &str) -> Result<DiagnosticPrediction, GatewayError> {
        if image_ref.trim().is_empty() {
            return Err(GatewayError::InvalidInput("empty image_ref".into()));
        }
        let image_b64 = match self.transport {
            ImageTransport::Reference => None,
            ImageTransport::Base64 => {
                let bytes = tokio::fs::read(image_ref)
                    .await
                    .map_err(|_| GatewayError::UnknownImage(image_ref.to_owned()))?;
                Some(base64::engine::general_purpose::STANDARD.encode(bytes))
            }
        };
        let request = ClassifyRequest {
            image_ref: image_ref.to_owned(),
            image_b64,
        };
        let response: ClassifyResponse = self.endpoint.post("/v1/classify", &request).await?;
        validate_classification(&response)
    }
}

#[derive(Debug, Clone)]
pub struct HttpGenerator {
    endpoint: HttpEndpoint,
}

impl HttpGenerator {
    pub fn new(endpoint: HttpEndpoint) -> Self {
        HttpGenerator { endpoint }
    }
}

#[async_trait]
impl Generator for HttpGenerator {
    fn id(&self) -> &str {
        &self.endpoint.config.base_url
    }

    async fn generate(&self, bundle: &PromptBundle) -> Result<GeneratedReport, GatewayError> {
        let request = GenerateRequest {
            prompt: bundle.rendered_prompt.clone(),
            image_ref: bundle.image_ref.clone(),
        };
        let response: GenerateResponse = self.endpoint.post("/v1/generate", &request).await?;
        finish_generation(bundle, response.text, &self.endpoint.config.base_url)
    }
}
