//! Report-generation and classification metrics.
//!
//! Text metrics operate on [`TokenSequence`]s produced by [`tokenize`], whose
//! behaviour is pinned by [`TOKENIZER_VERSION`]: lowercase, split on
//! whitespace, and every character that is neither alphanumeric nor
//! whitespace becomes a token of its own.
//!
//! Corpus-level figures are the mean of per-example scores.

use std::collections::HashMap;
use std::hash::Hash;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{Embedder, GatewayError};
use crate::retrieval::cosine_similarity;

pub const TOKENIZER_VERSION: &str = "rr-tok/1";

/// Floor applied to each modified n-gram precision before taking logs.
pub const BLEU_EPSILON: f64 = 1e-9;
const BLEU_MAX_ORDER: usize = 4;

/// Row-sum tolerance for probability matrices passed to [`macro_auc_ovr`].
pub const AUC_ROW_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("empty candidate")]
    EmptyCandidate,
    #[error("empty reference")]
    EmptyReference,
    #[error("n-gram order {n} exceeds sequence length {len}")]
    OrderTooLong { n: usize, len: usize },
    #[error("confusion matrix has no samples")]
    EmptyMatrix,
    #[error("{0}")]
    InvalidInput(String),
    #[error("AUC needs at least two distinct labels")]
    SingleClass,
    #[error("embedding failed: {0}")]
    Embedder(#[from] GatewayError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<String>,
}

impl TokenSequence {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Wraps already-tokenized input; used by tests that relabel tokens.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokenSequence {
            tokens: tokens.into_iter().map(Into::into).collect(),
        }
    }
}

pub fn tokenize(text: &str) -> TokenSequence {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.chars().flat_map(char::to_lowercase) {
        if c.is_whitespace() {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
        } else if c.is_alphanumeric() {
            word.push(c);
        } else {
            if !word.is_empty() {
                tokens.push(std::mem::take(&mut word));
            }
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    TokenSequence { tokens }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScore {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        PrfScore {
            precision,
            recall,
            f1,
        }
    }

    pub const PERFECT: PrfScore = PrfScore {
        precision: 1.0,
        recall: 1.0,
        f1: 1.0,
    };
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w).or_insert(0) += 1;
    }
    counts
}

/// Sentence BLEU-4 with clipped n-gram counts, an ε floor on each precision
/// and the brevity penalty against the closest reference length (shorter
/// length on ties).
///
/// Orders longer than the candidate have no n-grams and are left out of the
/// geometric mean, so a short sequence scored against itself is still 1.
pub fn bleu4(candidate: &TokenSequence, references: &[TokenSequence]) -> Result<f64, MetricError> {
    if candidate.is_empty() {
        return Err(MetricError::EmptyCandidate);
    }
    if references.is_empty() || references.iter().any(TokenSequence::is_empty) {
        return Err(MetricError::EmptyReference);
    }
    let c = candidate.len();
    let orders = c.min(BLEU_MAX_ORDER);
    let mut log_sum = 0.0;
    for n in 1..=orders {
        let cand = ngram_counts(&candidate.tokens, n);
        let mut max_ref: HashMap<&[String], usize> = HashMap::new();
        for r in references {
            for (g, k) in ngram_counts(&r.tokens, n) {
                let slot = max_ref.entry(g).or_insert(0);
                *slot = (*slot).max(k);
            }
        }
        let clipped: usize = cand
            .iter()
            .map(|(g, &k)| k.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
        let p = clipped as f64 / (c - n + 1) as f64;
        log_sum += p.max(BLEU_EPSILON).ln();
    }
    let r = references
        .iter()
        .map(TokenSequence::len)
        .min_by_key(|&len| (len.abs_diff(c), len))
        .expect("references non-empty");
    let bp = (1.0 - r as f64 / c as f64).exp().min(1.0);
    Ok(bp * (log_sum / orders as f64).exp())
}

pub fn rouge_n(
    candidate: &TokenSequence,
    reference: &TokenSequence,
    n: usize,
) -> Result<PrfScore, MetricError> {
    if candidate.is_empty() {
        return Err(MetricError::EmptyCandidate);
    }
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    if n == 0 {
        return Err(MetricError::InvalidInput("ROUGE-N needs n >= 1".into()));
    }
    for len in [candidate.len(), reference.len()] {
        if n > len {
            return Err(MetricError::OrderTooLong { n, len });
        }
    }
    let cand = ngram_counts(&candidate.tokens, n);
    let refs = ngram_counts(&reference.tokens, n);
    let overlap: usize = cand
        .iter()
        .map(|(g, &k)| k.min(refs.get(g).copied().unwrap_or(0)))
        .sum();
    Ok(PrfScore::from_pr(
        overlap as f64 / (candidate.len() - n + 1) as f64,
        overlap as f64 / (reference.len() - n + 1) as f64,
    ))
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(candidate: &TokenSequence, reference: &TokenSequence) -> Result<PrfScore, MetricError> {
    if candidate.is_empty() {
        return Err(MetricError::EmptyCandidate);
    }
    if reference.is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let lcs = lcs_len(&candidate.tokens, &reference.tokens) as f64;
    Ok(PrfScore::from_pr(
        lcs / candidate.len() as f64,
        lcs / reference.len() as f64,
    ))
}

/// Cosine similarity of the two texts' embeddings under `embedder`.
pub async fn semantic_similarity(
    candidate: &str,
    reference: &str,
    embedder: &dyn Embedder,
) -> Result<f64, MetricError> {
    if candidate.trim().is_empty() {
        return Err(MetricError::EmptyCandidate);
    }
    if reference.trim().is_empty() {
        return Err(MetricError::EmptyReference);
    }
    let v = embedder.embed(&[candidate.to_owned(), reference.to_owned()]).await?;
    let a: Vec<f64> = v[0].iter().map(|&x| x as f64).collect();
    let b: Vec<f64> = v[1].iter().map(|&x| x as f64).collect();
    cosine_similarity(&a, &b).map_err(|e| MetricError::InvalidInput(e.to_string()))
}

/// Square count matrix, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        ConfusionMatrix {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_rows(rows: &[Vec<u64>]) -> Result<Self, MetricError> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(MetricError::InvalidInput("confusion matrix must be square".into()));
        }
        Ok(ConfusionMatrix {
            n_classes: n,
            counts: rows.concat(),
        })
    }

    pub fn from_pairs(
        n_classes: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, MetricError> {
        let mut cm = Self::new(n_classes);
        for (t, p) in pairs {
            cm.record(t, p)?;
        }
        Ok(cm)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<(), MetricError> {
        if truth >= self.n_classes || predicted >= self.n_classes {
            return Err(MetricError::InvalidInput(format!(
                "class ({truth}, {predicted}) outside 0..{}",
                self.n_classes
            )));
        }
        self.counts[truth * self.n_classes + predicted] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn support(&self, class: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(class, p)).sum()
    }

    pub fn predicted(&self, class: usize) -> u64 {
        (0..self.n_classes).map(|t| self.get(t, class)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let correct: u64 = (0..self.n_classes).map(|c| self.get(c, c)).sum();
        correct as f64 / self.total() as f64
    }

    /// One-vs-rest scores for each class; precision is 0 for a class that is
    /// never predicted, recall is 0 for a class with no support.
    pub fn per_class(&self) -> Vec<PrfScore> {
        (0..self.n_classes)
            .map(|c| {
                let tp = self.get(c, c) as f64;
                let ratio = |d: u64| if d == 0 { 0.0 } else { tp / d as f64 };
                PrfScore::from_pr(ratio(self.predicted(c)), ratio(self.support(c)))
            })
            .collect()
    }
}

/// Support-weighted precision, recall and F1. Classes without support get
/// weight zero.
pub fn weighted_prf(cm: &ConfusionMatrix) -> Result<PrfScore, MetricError> {
    let total = cm.total();
    if total == 0 {
        return Err(MetricError::EmptyMatrix);
    }
    let mut out = PrfScore {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };
    for (c, s) in cm.per_class().into_iter().enumerate() {
        let support = cm.support(c);
        if support == 0 {
            continue;
        }
        let w = support as f64 / total as f64;
        out.precision += w * s.precision;
        out.recall += w * s.recall;
        out.f1 += w * s.f1;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub macro_auc: f64,
    /// `None` for classes skipped for lacking positives or negatives.
    pub per_class: Vec<Option<f64>>,
    pub skipped: Vec<usize>,
}

/// Mann–Whitney AUC of `scores` for the samples flagged `positive`, with
/// average ranks for ties. `None` if either group is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean.
        let avg_rank = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

/// Macro-averaged one-vs-rest AUC over classes that have both positive and
/// negative samples.
pub fn macro_auc_ovr(true_labels: &[usize], probs: &[Vec<f64>]) -> Result<AucReport, MetricError> {
    if true_labels.len() != probs.len() {
        return Err(MetricError::InvalidInput(format!(
            "{} labels but {} probability rows",
            true_labels.len(),
            probs.len()
        )));
    }
    let n_classes = probs.first().map_or(0, Vec::len);
    for (i, row) in probs.iter().enumerate() {
        if row.len() != n_classes {
            return Err(MetricError::InvalidInput(format!("row {i} has {} columns", row.len())));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > AUC_ROW_TOLERANCE {
            return Err(MetricError::InvalidInput(format!("row {i} sums to {sum}")));
        }
    }
    if let Some(&bad) = true_labels.iter().find(|&&l| l >= n_classes) {
        return Err(MetricError::InvalidInput(format!("label {bad} outside 0..{n_classes}")));
    }
    let mut distinct = true_labels.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(MetricError::SingleClass);
    }
    let mut per_class = Vec::with_capacity(n_classes);
    let mut skipped = Vec::new();
    for c in 0..n_classes {
        let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
        let positive: Vec<bool> = true_labels.iter().map(|&l| l == c).collect();
        let auc = binary_auc(&scores, &positive);
        if auc.is_none() {
            skipped.push(c);
        }
        per_class.push(auc);
    }
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    Ok(AucReport {
        macro_auc: present.iter().sum::<f64>() / present.len() as f64,
        per_class,
        skipped,
    })
}

/// Mean of per-example scores; `None` for an empty slice.
pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
