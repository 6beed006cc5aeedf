//! Run configuration, read from a flat `key = value` file.
//!
//! ```text
//! # offline run with the bundled mocks
//! mock = true
//! seed = 7
//! k = 3
//! use_classifier = true
//! use_retrieval = true
//! concurrency = 4
//! kb = kb.jsonl
//! index = kb.idx
//! generator.url = http://127.0.0.1:9000
//! generator.timeout_ms = 60000
//! ```
//!
//! Endpoint keys are `<name>.url`, `<name>.timeout_ms`, `<name>.retries` and
//! `<name>.token` for `embedder`, `classifier`, `generator`, `sbert` and
//! `clinical`; `classifier.transport` is `reference` or `base64`. Mock keys
//! are `mock.dim` and `mock.fixtures`. Relative paths resolve against the
//! config file's directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::gateway::http::ImageTransport;
use crate::gateway::mock::DEFAULT_MOCK_DIM;
use crate::gateway::EndpointConfig;
use crate::retrieval::DEFAULT_K;

use super::PipelineError;

pub const ENDPOINT_NAMES: [&str; 5] = ["embedder", "classifier", "generator", "sbert", "clinical"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    /// Serve any endpoint without a URL from the deterministic mocks.
    pub mock: bool,
    pub seed: u64,
    pub mock_dim: usize,
    pub mock_fixtures: Option<PathBuf>,
    pub embedder: Option<EndpointConfig>,
    pub classifier: Option<EndpointConfig>,
    pub generator: Option<EndpointConfig>,
    pub sbert: Option<EndpointConfig>,
    pub clinical: Option<EndpointConfig>,
    pub image_transport: ImageTransport,
    pub k: usize,
    pub use_classifier: bool,
    pub use_retrieval: bool,
    pub index: Option<PathBuf>,
    pub kb: Option<PathBuf>,
    pub concurrency: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            mock: false,
            seed: 0,
            mock_dim: DEFAULT_MOCK_DIM,
            mock_fixtures: None,
            embedder: None,
            classifier: None,
            generator: None,
            sbert: None,
            clinical: None,
            image_transport: ImageTransport::Reference,
            k: DEFAULT_K,
            use_classifier: true,
            use_retrieval: true,
            index: None,
            kb: None,
            concurrency: 4,
        }
    }
}

fn bad(line: usize, msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::Config(format!("line {line}: {msg}"))
}

fn parse_bool(line: usize, v: &str) -> Result<bool, PipelineError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(line, format!("expected true or false, got {v:?}"))),
    }
}

fn parse_num<T: std::str::FromStr>(line: usize, v: &str) -> Result<T, PipelineError> {
    v.parse().map_err(|_| bad(line, format!("invalid number {v:?}")))
}

impl RunConfig {
    /// Full pipeline on the bundled mocks.
    pub fn mock(seed: u64) -> Self {
        RunConfig {
            mock: true,
            seed,
            ..RunConfig::default()
        }
    }

    pub fn endpoint(&self, name: &str) -> Option<&EndpointConfig> {
        match name {
            "embedder" => self.embedder.as_ref(),
            "classifier" => self.classifier.as_ref(),
            "generator" => self.generator.as_ref(),
            "sbert" => self.sbert.as_ref(),
            "clinical" => self.clinical.as_ref(),
            _ => None,
        }
    }

    fn endpoint_slot(&mut self, name: &str) -> &mut Option<EndpointConfig> {
        match name {
            "embedder" => &mut self.embedder,
            "classifier" => &mut self.classifier,
            "generator" => &mut self.generator,
            "sbert" => &mut self.sbert,
            _ => &mut self.clinical,
        }
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(&text, path.parent())
    }

    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self, PipelineError> {
        let resolve = |v: &str| -> PathBuf {
            let p = PathBuf::from(v);
            match base_dir {
                Some(dir) if p.is_relative() => dir.join(p),
                _ => p,
            }
        };

        let mut seen: BTreeMap<String, usize> = BTreeMap::new();
        let mut endpoint_fields: BTreeMap<String, BTreeMap<String, (usize, String)>> = BTreeMap::new();
        let mut cfg = RunConfig::default();

        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| bad(line, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(first) = seen.insert(key.to_owned(), line) {
                return Err(bad(line, format!("duplicate key {key:?} (first on line {first})")));
            }
            match key {
                "mock" => cfg.mock = parse_bool(line, value)?,
                "seed" => cfg.seed = parse_num(line, value)?,
                "k" => cfg.k = parse_num(line, value)?,
                "use_classifier" => cfg.use_classifier = parse_bool(line, value)?,
                "use_retrieval" => cfg.use_retrieval = parse_bool(line, value)?,
                "index" => cfg.index = Some(resolve(value)),
                "kb" => cfg.kb = Some(resolve(value)),
                "concurrency" => cfg.concurrency = parse_num(line, value)?,
                "mock.dim" => cfg.mock_dim = parse_num(line, value)?,
                "mock.fixtures" => cfg.mock_fixtures = Some(resolve(value)),
                "classifier.transport" => {
                    cfg.image_transport = match value {
                        "reference" => ImageTransport::Reference,
                        "base64" => ImageTransport::Base64,
                        _ => return Err(bad(line, format!("unknown transport {value:?}"))),
                    }
                }
                _ => {
                    let (name, field) = key
                        .split_once('.')
                        .filter(|(n, f)| {
                            ENDPOINT_NAMES.contains(n) && ["url", "timeout_ms", "retries", "token"].contains(f)
                        })
                        .ok_or_else(|| bad(line, format!("unknown key {key:?}")))?;
                    endpoint_fields
                        .entry(name.to_owned())
                        .or_default()
                        .insert(field.to_owned(), (line, value.to_owned()));
                }
            }
        }

        for (name, fields) in endpoint_fields {
            let Some((_, url)) = fields.get("url") else {
                let line = fields.values().map(|f| f.0).min().unwrap_or(0);
                return Err(bad(line, format!("{name} settings given without {name}.url")));
            };
            let mut ep = EndpointConfig::new(url.clone());
            if let Some((line, v)) = fields.get("timeout_ms") {
                ep.timeout_ms = parse_num(*line, v)?;
            }
            if let Some((line, v)) = fields.get("retries") {
                ep.retries = parse_num(*line, v)?;
            }
            if let Some((_, v)) = fields.get("token") {
                ep.auth_token = Some(v.clone());
            }
            *cfg.endpoint_slot(&name) = Some(ep);
        }

        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: &str| Err(PipelineError::Config(m.to_owned()));
        if self.k == 0 {
            return err("k must be at least 1");
        }
        if self.concurrency == 0 {
            return err("concurrency must be at least 1");
        }
        if self.mock_dim == 0 {
            return err("mock.dim must be at least 1");
        }
        if self.use_retrieval && !self.use_classifier {
            return err("use_retrieval requires use_classifier: the query is built from the prediction");
        }
        for name in ENDPOINT_NAMES {
            if let Some(ep) = self.endpoint(name) {
                ep.validate()
                    .map_err(|e| PipelineError::Config(format!("{name}: {e}")))?;
            }
        }
        if !self.mock {
            let mut required = vec!["generator"];
            if self.use_classifier {
                required.push("classifier");
            }
            if self.use_retrieval {
                required.push("embedder");
            }
            for name in required {
                if self.endpoint(name).is_none() {
                    return Err(PipelineError::Config(format!(
                        "{name}.url is required when mock = false"
                    )));
                }
            }
            if self.use_retrieval && self.kb.is_none() {
                return err("kb is required for retrieval when mock = false");
            }
        }
        if self.index.is_some() && self.kb.is_none() {
            return err("index needs kb as well: snippet texts are read from the knowledge base");
        }
        Ok(())
    }
}
