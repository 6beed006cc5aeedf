//! Deterministic offline backends.
//!
//! All mocks are pure functions of their inputs plus a fixed seed, so two
//! processes on any platform produce identical bytes.
//!
//! # Mock embedding procedure
//!
//! 1. Lowercase the text and split it on every character that is not
//!    alphanumeric; drop empty pieces. Zero tokens is an error.
//! 2. Sort the tokens (byte order, duplicates kept).
//! 3. For each token, `seed = fnv1a64(token_utf8) ^ salt`; component `i` of
//!    its vector is `2 * u - 1` where `u = (splitmix64(seed + (i + 1) * 0x9E3779B97F4A7C15) >> 11) * 2^-53`
//!    (wrapping arithmetic).
//! 4. Sum the token vectors in f64, L2-normalize, and round each component
//!    to f32.

use std::collections::BTreeMap;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::wire::ClassifyResponse;
use super::{
    check_embed_input, finish_generation, validate_classification, Classifier, Embedder,
    GatewayError, GeneratedReport, Generator,
};
use crate::prediction::{DiagnosticPrediction, DrGrade, NUM_GRADES};
use crate::prompt::{PromptBundle, PromptTemplate, SNIPPET_SEPARATOR};

pub const DEFAULT_MOCK_DIM: usize = 64;
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const BUILTIN_FIXTURES: &str = include_str!("../../fixtures/classifier_fixtures.jsonl");

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn splitmix64(state: u64) -> u64 {
    let mut z = state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `counter`-th draw in `[0, 1)` of the stream keyed by `seed`.
fn unit_draw(seed: u64, counter: u64) -> f64 {
    let z = splitmix64(seed.wrapping_add((counter + 1).wrapping_mul(GOLDEN_GAMMA)));
    (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn mock_tokens(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut tokens: Vec<String> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect();
    tokens.sort();
    tokens
}

pub fn mock_embedding(text: &str, dim: usize, salt: u64) -> Result<Vec<f32>, GatewayError> {
    let tokens = mock_tokens(text);
    if tokens.is_empty() {
        return Err(GatewayError::InvalidInput(format!("text {text:?} has no tokens")));
    }
    let mut acc = vec![0.0f64; dim];
    for tok in &tokens {
        let seed = fnv1a64(tok.as_bytes()) ^ salt;
        for (i, a) in acc.iter_mut().enumerate() {
            *a += unit_draw(seed, i as u64) * 2.0 - 1.0;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok(acc.iter().map(|x| (x / norm) as f32).collect())
}

#[derive(Debug, Clone)]
pub struct MockEmbedder {
    id: String,
    dim: usize,
    salt: u64,
}

impl MockEmbedder {
    pub fn new(dim: usize) -> Self {
        Self::salted(dim, 0)
    }

    /// A variant whose vectors differ from the unsalted one, used to stand in
    /// for a second, independent embedding model.
    pub fn salted(dim: usize, salt: u64) -> Self {
        MockEmbedder {
            id: format!("mock-embedder/d{dim}/s{salt:x}"),
            dim,
            salt,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed_sync(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        check_embed_input(texts)?;
        texts.iter().map(|t| mock_embedding(t, self.dim, self.salt)).collect()
    }
}

impl Default for MockEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_MOCK_DIM)
    }
}

#[async_trait]
impl Embedder for MockEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>, GatewayError> {
        self.embed_sync(texts)
    }
}

/// One line of a classifier fixture file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierFixture {
    pub image_ref: String,
    pub dr_grade: u8,
    pub me_present: bool,
    /// Explicit distribution; synthesized from the seed when absent.
    #[serde(default)]
    pub dr_probs: Option<Vec<f64>>,
    #[serde(default)]
    pub me_confidence: Option<f64>,
}

pub fn parse_fixtures(source: &str) -> Result<Vec<ClassifierFixture>, GatewayError> {
    source
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| GatewayError::Config(format!("fixture line {}: {e}", i + 1)))
        })
        .collect()
}

/// Classifier that answers from a registry of known image references.
#[derive(Debug, Clone)]
pub struct MockClassifier {
    id: String,
    responses: BTreeMap<String, ClassifyResponse>,
}

impl MockClassifier {
    /// Registry of the bundled fixtures (`00800`..`00819`).
    pub fn builtin(seed: u64) -> Self {
        Self::from_fixtures(seed, parse_fixtures(BUILTIN_FIXTURES).expect("bundled fixtures parse"))
            .expect("bundled fixtures are valid")
    }

    pub fn from_fixtures(
        seed: u64,
        fixtures: impl IntoIterator<Item = ClassifierFixture>,
    ) -> Result<Self, GatewayError> {
        let mut responses = BTreeMap::new();
        for f in fixtures {
            let response = fixture_response(seed, &f);
            validate_classification(&response)
                .map_err(|e| GatewayError::Config(format!("fixture {:?}: {e}", f.image_ref)))?;
            if responses.insert(f.image_ref.clone(), response).is_some() {
                return Err(GatewayError::Config(format!("duplicate fixture {:?}", f.image_ref)));
            }
        }
        Ok(MockClassifier {
            id: format!("mock-classifier/s{seed:x}"),
            responses,
        })
    }

    pub fn image_refs(&self) -> impl Iterator<Item = &str> {
        self.responses.keys().map(String::as_str)
    }

    /// The raw wire response for `image_ref`, before validation.
    pub fn response(&self, image_ref: &str) -> Result<ClassifyResponse, GatewayError> {
        self.responses
            .get(image_ref)
            .cloned()
            .ok_or_else(|| GatewayError::UnknownImage(image_ref.to_owned()))
    }
}

fn fixture_response(seed: u64, f: &ClassifierFixture) -> ClassifyResponse {
    let stream = fnv1a64(f.image_ref.as_bytes()) ^ seed;
    let grade = f.dr_grade as usize;
    let probs = f.dr_probs.clone().unwrap_or_else(|| {
        let mut p: Vec<f64> = (0..NUM_GRADES as u64)
            .map(|j| 0.05 + 0.25 * unit_draw(stream, j))
            .collect();
        if grade < NUM_GRADES {
            p[grade] += 1.0 + 2.0 * unit_draw(stream, 5);
        }
        let sum: f64 = p.iter().sum();
        p.iter().map(|x| x / sum).collect()
    });
    let me_confidence = f
        .me_confidence
        .unwrap_or_else(|| 0.6 + 0.4 * unit_draw(stream, 6));
    ClassifyResponse {
        dr_grade: f.dr_grade as i64,
        dr_confidence: probs.get(grade).copied().unwrap_or(0.0),
        dr_probs: probs,
        me_present: f.me_present,
        me_confidence,
    }
}

#[async_trait]
impl Classifier for MockClassifier {
    fn id(&self) -> &str {
        &self.id
    }

    async fn classify(&self, image_ref: &str) -> Result<DiagnosticPrediction, GatewayError> {
        validate_classification(&self.response(image_ref)?)
    }
}

/// Findings recovered from a rendered prompt.
#[derive(Debug, Clone, PartialEq, Eq)]
struct PromptFindings {
    grade: Option<(DrGrade, bool)>,
    first_snippet: Option<String>,
}

fn parse_prompt(prompt: &str) -> PromptFindings {
    let template = PromptTemplate::builtin();
    let grade = prompt.find("DR grade ").and_then(|at| {
        let rest = &prompt[at + "DR grade ".len()..];
        let g = DrGrade::new(rest.get(..1)?.parse().ok()?).ok()?;
        let me = if rest.contains("macular edema present") {
            true
        } else if rest.contains("macular edema absent") {
            false
        } else {
            return None;
        };
        Some((g, me))
    });
    let ctx_prefix = template.context.split("{context}").next().unwrap_or_default();
    let tail = format!(". {}", template.instruction);
    let first_snippet = prompt.find(ctx_prefix).and_then(|at| {
        let rest = &prompt[at + ctx_prefix.len()..];
        let body = rest.strip_suffix(tail.as_str())?;
        Some(body.split(SNIPPET_SEPARATOR).next()?.to_owned())
    });
    PromptFindings { grade, first_snippet }
}

/// Deterministic template report echoing the grade, ME status and the
/// opening words of the first retrieved snippet found in `prompt`.
pub fn mock_report(prompt: &str) -> String {
    let findings = parse_prompt(prompt);
    let mut out = String::new();
    match findings.grade {
        Some((g, me)) => {
            out.push_str(&format!(
                "Fundus assessment: DR grade {} ({}).",
                g.value(),
                g.name()
            ));
            out.push_str(if me {
                " Findings are consistent with diabetic macular edema."
            } else {
                " There are no signs of diabetic macular edema."
            });
        }
        None => out.push_str("Fundus assessment: no classifier grading was provided."),
    }
    match findings.first_snippet {
        Some(s) => {
            let excerpt: Vec<&str> = s.split_whitespace().take(12).collect();
            out.push_str(&format!(" Supporting context: {}", excerpt.join(" ")));
            if !out.ends_with('.') {
                out.push('.');
            }
        }
        None => out.push_str(" No retrieved clinical context was used."),
    }
    out
}

#[derive(Debug, Clone)]
pub struct MockGenerator {
    id: String,
}

impl MockGenerator {
    pub fn new() -> Self {
        MockGenerator {
            id: "mock-generator/v1".into(),
        }
    }
}

impl Default for MockGenerator {
    fn default() -> Self {
        Self::new()
    }
}

#[async_trait]
impl Generator for MockGenerator {
    fn id(&self) -> &str {
        &self.id
    }

    async fn generate(&self, bundle: &PromptBundle) -> Result<GeneratedReport, GatewayError> {
        finish_generation(bundle, mock_report(&bundle.rendered_prompt), &self.id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::KnowledgeEntry;
    use crate::prompt::compose_prompt;
    use crate::retrieval::{cosine_similarity, RetrievalResult, RetrievedSnippet};

    fn cos(a: &[f32], b: &[f32]) -> f64 {
        let a: Vec<f64> = a.iter().map(|&x| x as f64).collect();
        let b: Vec<f64> = b.iter().map(|&x| x as f64).collect();
        cosine_similarity(&a, &b).unwrap()
    }

    // Frozen from tests/oracles/frozen_values.py, an independent implementation
    // of the documented procedure.
    #[test]
    fn pinned_mock_embedding() {
        let v = mock_embedding("moderate dr", 64, 0).unwrap();
        let bits: Vec<u32> = v[..8].iter().map(|x| x.to_bits()).collect();
        assert_eq!(
            bits,
            [
                0xbe64132f, 0xbe2e31fd, 0xbe1d1e15, 0xbe69fa77, 0x3d33a59a, 0x3e3d824d,
                0x3e6cec36, 0x3da04940
            ]
        );
    }

    #[test]
    fn tokenization_properties() {
        let e = |t| mock_embedding(t, 16, 0).unwrap();
        assert_eq!(e("x"), e("x "));
        assert_eq!(e("a b"), e("b a"));
        assert_eq!(e("Moderate, DR!"), e("moderate dr"));
        assert!(mock_embedding(" ,.; ", 16, 0).is_err());
    }

    #[test]
    fn related_text_is_closer() {
        let e = |t| mock_embedding(t, 64, 0).unwrap();
        let base = e("moderate retinopathy");
        let near = cos(&base, &e("moderate retinopathy lesions"));
        let far = cos(&base, &e("zebra quantum"));
        // Oracle values: 0.6094312846846135 and 0.036532738380481884.
        assert!((near - 0.609_431_284_684_613_5).abs() < 1e-6);
        assert!((far - 0.036_532_738_380_481_884).abs() < 1e-6);
        assert!(near > far);
    }

    #[test]
    fn salt_changes_vectors() {
        assert_ne!(
            mock_embedding("macula", 8, 0).unwrap(),
            mock_embedding("macula", 8, 1).unwrap()
        );
    }

    #[tokio::test]
    async fn embedder_contract() {
        let m = MockEmbedder::new(8);
        let out = m.embed(&["a".into(), "a".into()]).await.unwrap();
        assert_eq!(out[0], out[1]);
        assert!(matches!(m.embed(&[]).await, Err(GatewayError::InvalidInput(_))));
    }

    #[tokio::test]
    async fn fixture_00804_is_moderate_without_edema() {
        let c = MockClassifier::builtin(0);
        let p = c.classify("00804").await.unwrap();
        assert_eq!(p.grade(), DrGrade::MODERATE);
        assert!(!p.me_present());
        assert!(matches!(c.classify("99999").await, Err(GatewayError::UnknownImage(_))));
        assert_eq!(c.image_refs().count(), 20);
    }

    #[tokio::test]
    async fn classifier_seed_changes_probabilities_not_labels() {
        let a = MockClassifier::builtin(0);
        let b = MockClassifier::builtin(7);
        for id in a.image_refs() {
            let (pa, pb) = (a.classify(id).await.unwrap(), b.classify(id).await.unwrap());
            assert_eq!(pa.grade(), pb.grade());
            assert_eq!(pa.me_present(), pb.me_present());
        }
        assert_ne!(a.response("00804").unwrap(), b.response("00804").unwrap());
        assert_eq!(a.response("00804").unwrap(), MockClassifier::builtin(0).response("00804").unwrap());
    }

    #[test]
    fn invalid_fixture_rejected() {
        let f = ClassifierFixture {
            image_ref: "x".into(),
            dr_grade: 1,
            me_present: false,
            dr_probs: Some(vec![0.9, 0.1, 0.0, 0.0, 0.0]),
            me_confidence: None,
        };
        assert!(MockClassifier::from_fixtures(0, [f]).is_err());
    }

    fn bundle(grade: DrGrade, me: bool, snippets: &[&str]) -> PromptBundle {
        let p = DiagnosticPrediction::from_summary(grade, me, 0.8, 0.9).unwrap();
        let r = RetrievalResult {
            snippets: snippets
                .iter()
                .map(|t| RetrievedSnippet {
                    entry: KnowledgeEntry {
                        id: "k".into(),
                        dr_grade: None,
                        me_label: None,
                        text: (*t).into(),
                    },
                    score: 0.5,
                })
                .collect(),
            k_requested: 3,
            fallback: false,
        };
        compose_prompt("img", Some(&p), Some(&r))
    }

    #[tokio::test]
    async fn generator_contract() {
        let g = MockGenerator::new();
        let b = bundle(DrGrade::MODERATE, false, &["Moderate NPDR shows dot-and-blot hemorrhages.", "other"]);
        let r1 = g.generate(&b).await.unwrap();
        let r2 = g.generate(&b).await.unwrap();
        assert_eq!(r1, r2);
        assert!(r1.text.contains("Moderate"));
        assert!(r1.text.contains("no signs of diabetic macular edema"));
        assert!(r1.text.contains("Supporting context: Moderate NPDR shows dot-and-blot hemorrhages."));
        assert_eq!(r1.prompt_fingerprint, b.fingerprint());
        assert_eq!(r1.provenance.k_used, 2);

        let edema = g.generate(&bundle(DrGrade::SEVERE, true, &[])).await.unwrap();
        assert!(edema.text.contains("Severe"));
        assert!(edema.text.contains("consistent with diabetic macular edema"));
        assert!(edema.text.contains("No retrieved clinical context"));

        let zs = compose_prompt("img", None, None);
        assert!(g.generate(&zs).await.unwrap().text.contains("no classifier grading"));
    }

    #[test]
    fn empty_generation_is_an_error() {
        let b = bundle(DrGrade::MILD, false, &[]);
        assert_eq!(
            finish_generation(&b, "  ".into(), "x"),
            Err(GatewayError::EmptyGeneration)
        );
    }
}
