//! End-to-end orchestration: classify, serialize, embed, retrieve, compose,
//! generate. Stages are skipped according to the ablation flags in
//! [`RunConfig`].

mod config;
mod eval;
mod manifest;

pub use config::{RunConfig, ENDPOINT_NAMES};
pub use eval::{ClassBlock, EvalReport, FailureRow, RecordRow, RunSummary};
pub use manifest::{DatasetManifest, DatasetRecord};

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::http::{HttpClassifier, HttpEmbedder, HttpEndpoint, HttpGenerator};
use crate::gateway::mock::{parse_fixtures, MockClassifier, MockEmbedder, MockGenerator};
use crate::gateway::{Classifier, Embedder, GatewayError, GeneratedReport, Generator};
use crate::kb::{attach_texts, build_index, parse_kb, KbError, PersistError, VectorIndex};
use crate::prediction::DiagnosticPrediction;
use crate::prompt::{compose_prompt, prompt_fingerprint};
use crate::retrieval::{
    retrieve_top_k, serialize_query, QueryEmbedding, RetrievalError, RetrievalResult, RetrievedSnippet,
};

/// The bundled knowledge base used by mock runs that name no `kb`.
pub const FIXTURE_KB: &str = include_str!("../../fixtures/kb.jsonl");

/// The bundled 20-record evaluation manifest.
pub const FIXTURE_MANIFEST: &str = include_str!("../../fixtures/manifest.jsonl");

/// Salt separating the mock clinical-style similarity embedder from the
/// general one.
pub const CLINICAL_MOCK_SALT: u64 = 0x636c_696e_6963_616c;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Classify,
    Embed,
    Retrieve,
    Generate,
    Similarity,
    Metrics,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Classify => "classify",
            Stage::Embed => "embed",
            Stage::Retrieve => "retrieve",
            Stage::Generate => "generate",
            Stage::Similarity => "similarity",
            Stage::Metrics => "metrics",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StageError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("{0}")]
    Other(String),
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {message}", path.display())]
    Io { path: PathBuf, message: String },
    #[error("knowledge base: {0}")]
    Kb(#[from] KbError),
    #[error("index: {0}")]
    Persist(#[from] PersistError),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error("{stage} failed for {record:?}: {source}")]
    Stage {
        stage: Stage,
        record: String,
        #[source]
        source: StageError,
    },
    #[error("all {n} records failed; first error: {first}")]
    AllFailed { n: usize, first: String },
}

impl PipelineError {
    fn stage(stage: Stage, record: &str, source: impl Into<StageError>) -> Self {
        PipelineError::Stage {
            stage,
            record: record.to_owned(),
            source: source.into(),
        }
    }

    pub fn is_not_found(&self) -> bool {
        matches!(self, PipelineError::Stage { source: StageError::Gateway(g), .. } if g.is_not_found())
    }

    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self,
            PipelineError::Stage {
                source: StageError::Gateway(GatewayError::InvalidInput(_)),
                ..
            }
        )
    }
}

/// The backends a pipeline talks to. Similarity embedders are optional;
/// when absent the corresponding eval metric is reported as null.
#[derive(Clone)]
pub struct Backends {
    pub embedder: Option<Arc<dyn Embedder>>,
    pub classifier: Option<Arc<dyn Classifier>>,
    pub generator: Arc<dyn Generator>,
    pub sbert: Option<Arc<dyn Embedder>>,
    pub clinical: Option<Arc<dyn Embedder>>,
}

impl fmt::Debug for Backends {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Backends")
            .field("embedder", &self.embedder.as_ref().map(|e| e.id().to_owned()))
            .field("classifier", &self.classifier.as_ref().map(|c| c.id().to_owned()))
            .field("generator", &self.generator.id())
            .field("sbert", &self.sbert.as_ref().map(|e| e.id().to_owned()))
            .field("clinical", &self.clinical.as_ref().map(|e| e.id().to_owned()))
            .finish()
    }
}

fn io_err(path: &std::path::Path, e: std::io::Error) -> PipelineError {
    PipelineError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

impl Backends {
    /// HTTP clients for every endpoint with a URL, mocks for the rest when
    /// mock mode is on.
    pub fn from_config(config: &RunConfig) -> Result<Self, PipelineError> {
        let http = |name: &str| -> Result<Option<HttpEndpoint>, PipelineError> {
            config
                .endpoint(name)
                .map(|ep| HttpEndpoint::new(ep.clone(), config.concurrency))
                .transpose()
                .map_err(|e| PipelineError::Config(format!("{name}: {e}")))
        };
        let mock_embedder = |salt: u64| -> Option<Arc<dyn Embedder>> {
            config
                .mock
                .then(|| Arc::new(MockEmbedder::salted(config.mock_dim, salt)) as Arc<dyn Embedder>)
        };
        let embedder_for = |name: &str, salt: u64| -> Result<Option<Arc<dyn Embedder>>, PipelineError> {
            Ok(match http(name)? {
                Some(ep) => Some(Arc::new(HttpEmbedder::new(ep))),
                None => mock_embedder(salt),
            })
        };

        let classifier: Option<Arc<dyn Classifier>> = match http("classifier")? {
            Some(ep) => Some(Arc::new(HttpClassifier::new(ep, config.image_transport))),
            None if config.mock => Some(Arc::new(match &config.mock_fixtures {
                None => MockClassifier::builtin(config.seed),
                Some(path) => {
                    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                    let fixtures = parse_fixtures(&text)
                        .map_err(|e| PipelineError::Config(format!("mock.fixtures: {e}")))?;
                    MockClassifier::from_fixtures(config.seed, fixtures)
                        .map_err(|e| PipelineError::Config(format!("mock.fixtures: {e}")))?
                }
            })),
            None => None,
        };
        let generator: Arc<dyn Generator> = match http("generator")? {
            Some(ep) => Arc::new(HttpGenerator::new(ep)),
            None if config.mock => Arc::new(MockGenerator::new()),
            None => return Err(PipelineError::Config("generator.url is required when mock = false".into())),
        };

        Ok(Backends {
            embedder: embedder_for("embedder", 0)?,
            classifier,
            generator,
            sbert: embedder_for("sbert", 0)?,
            clinical: embedder_for("clinical", CLINICAL_MOCK_SALT)?,
        })
    }
}

/// A retrieved snippet as recorded in the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSnippet {
    pub id: String,
    pub score: f64,
}

/// Everything needed to audit one report: the prediction, the retrieval
/// query and results, and the fingerprint of the exact prompt sent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub image_ref: String,
    pub prediction: Option<DiagnosticPrediction>,
    pub query_text: Option<String>,
    pub snippets: Vec<TraceSnippet>,
    pub fallback: bool,
    pub prompt_fingerprint: String,
    pub template_version: String,
}

impl Trace {
    pub fn snippet_ids(&self) -> Vec<&str> {
        self.snippets.iter().map(|s| s.id.as_str()).collect()
    }

    /// Re-renders the prompt from the recorded prediction and snippet ids.
    /// `None` if a snippet id is not in `index`.
    pub fn reconstruct_prompt(&self, index: Option<&VectorIndex>) -> Option<String> {
        let retrieval = if self.snippets.is_empty() {
            None
        } else {
            let index = index?;
            let snippets = self
                .snippets
                .iter()
                .map(|s| {
                    index.get(&s.id).map(|e| RetrievedSnippet {
                        entry: e.entry.clone(),
                        score: s.score,
                    })
                })
                .collect::<Option<Vec<_>>>()?;
            Some(RetrievalResult {
                k_requested: snippets.len(),
                snippets,
                fallback: self.fallback,
            })
        };
        let bundle = compose_prompt(&self.image_ref, self.prediction.as_ref(), retrieval.as_ref());
        Some(bundle.rendered_prompt)
    }

    /// True iff the reconstructed prompt hashes to the recorded fingerprint.
    pub fn verify(&self, index: Option<&VectorIndex>) -> bool {
        self.reconstruct_prompt(index)
            .is_some_and(|p| prompt_fingerprint(&p) == self.prompt_fingerprint)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub report: GeneratedReport,
    pub trace: Trace,
    pub rendered_prompt: String,
}

/// A loaded pipeline. All state is read-only after construction, so one
/// instance can serve concurrent requests.
#[derive(Debug)]
pub struct Pipeline {
    config: RunConfig,
    backends: Backends,
    index: Option<Arc<VectorIndex>>,
}

impl Pipeline {
    pub fn new(config: RunConfig, backends: Backends, index: Option<VectorIndex>) -> Result<Self, PipelineError> {
        config.validate()?;
        if config.use_classifier && backends.classifier.is_none() {
            return Err(PipelineError::Config("use_classifier is set but no classifier is configured".into()));
        }
        if config.use_retrieval {
            if backends.embedder.is_none() {
                return Err(PipelineError::Config("use_retrieval is set but no embedder is configured".into()));
            }
            if index.as_ref().is_none_or(|i| i.is_empty()) {
                return Err(PipelineError::Config("use_retrieval is set but no index is loaded".into()));
            }
        }
        Ok(Pipeline {
            config,
            backends,
            index: index.map(Arc::new),
        })
    }

    /// Builds backends and loads (or builds) the index described by `config`.
    pub async fn from_config(config: RunConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let backends = Backends::from_config(&config)?;
        let index = if config.use_retrieval {
            Some(load_or_build_index(&config, &backends).await?)
        } else {
            None
        };
        Self::new(config, backends, index)
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub fn index(&self) -> Option<&VectorIndex> {
        self.index.as_deref()
    }

    pub async fn run_report(&self, image_ref: &str) -> Result<ReportOutcome, PipelineError> {
        if image_ref.trim().is_empty() {
            return Err(PipelineError::stage(
                Stage::Classify,
                image_ref,
                GatewayError::InvalidInput("empty image_ref".into()),
            ));
        }

        let prediction = match (&self.backends.classifier, self.config.use_classifier) {
            (Some(c), true) => Some(
                c.classify(image_ref)
                    .await
                    .map_err(|e| PipelineError::stage(Stage::Classify, image_ref, e))?,
            ),
            _ => None,
        };

        let mut query_text = None;
        let retrieval = match (&prediction, &self.backends.embedder, &self.index) {
            (Some(p), Some(embedder), Some(index)) if self.config.use_retrieval => {
                let query = serialize_query(p);
                let mut vectors = embedder
                    .embed(std::slice::from_ref(&query))
                    .await
                    .map_err(|e| PipelineError::stage(Stage::Embed, image_ref, e))?;
                let raw = vectors.pop().ok_or_else(|| {
                    PipelineError::stage(Stage::Embed, image_ref, StageError::Other("no embedding returned".into()))
                })?;
                let q = QueryEmbedding::new(raw).map_err(|e| PipelineError::stage(Stage::Embed, image_ref, e))?;
                query_text = Some(query);
                Some(
                    retrieve_top_k(index, &q, p, self.config.k)
                        .map_err(|e| PipelineError::stage(Stage::Retrieve, image_ref, e))?,
                )
            }
            _ => None,
        };

        let bundle = compose_prompt(image_ref, prediction.as_ref(), retrieval.as_ref());
        let report = self
            .backends
            .generator
            .generate(&bundle)
            .await
            .map_err(|e| PipelineError::stage(Stage::Generate, image_ref, e))?;

        let trace = Trace {
            image_ref: image_ref.to_owned(),
            prediction,
            query_text,
            snippets: retrieval
                .map(|r| {
                    r.snippets
                        .into_iter()
                        .map(|s| TraceSnippet {
                            id: s.entry.id,
                            score: s.score,
                        })
                        .collect()
                })
                .unwrap_or_default(),
            fallback: bundle.fallback,
            prompt_fingerprint: bundle.fingerprint(),
            template_version: bundle.template_version.clone(),
        };
        Ok(ReportOutcome {
            report,
            trace,
            rendered_prompt: bundle.rendered_prompt,
        })
    }
}

async fn load_or_build_index(config: &RunConfig, backends: &Backends) -> Result<VectorIndex, PipelineError> {
    let kb = match &config.kb {
        Some(path) => {
            let text = tokio::fs::read_to_string(path).await.map_err(|e| io_err(path, e))?;
            parse_kb(text.as_bytes())?
        }
        None => parse_kb(FIXTURE_KB.as_bytes())?,
    };
    match &config.index {
        Some(path) => {
            let bytes = tokio::fs::read(path).await.map_err(|e| io_err(path, e))?;
            let mut index = VectorIndex::from_bytes(&bytes)?;
            attach_texts(&mut index, &kb)?;
            Ok(index)
        }
        None => {
            let embedder = backends
                .embedder
                .as_deref()
                .ok_or_else(|| PipelineError::Config("no embedder to build the index with".into()))?;
            Ok(build_index(kb, embedder).await?)
        }
    }
}
