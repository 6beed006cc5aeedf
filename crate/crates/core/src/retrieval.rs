//! Classifier-guided retrieval: query serialization, class matching and exact
//! top-k cosine ranking over a [`VectorIndex`].

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kb::{l2_norm, EmbeddedEntry, KnowledgeEntry, VectorIndex};
use crate::prediction::{format_confidence, DiagnosticPrediction};

/// Default retrieval depth.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("zero-norm vector")]
    ZeroVector,
    #[error("index is empty")]
    EmptyIndex,
    #[error("k must be at least 1")]
    ZeroK,
}

/// Renders the prediction as the natural-language query that gets embedded,
/// e.g. `"Moderate DR, ME detected, confidence 0.87"`.
pub fn serialize_query(p: &DiagnosticPrediction) -> String {
    let grade = p.grade();
    let prefix = if grade.value() == 0 {
        grade.name().to_owned()
    } else {
        format!("{} DR", grade.name())
    };
    let me = if p.me_present() { "detected" } else { "not detected" };
    format!(
        "{prefix}, ME {me}, confidence {}",
        format_confidence(p.grade_confidence())
    )
}

/// Cosine of the angle between `a` and `b`, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64, RetrievalError> {
    if a.len() != b.len() {
        return Err(RetrievalError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(RetrievalError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Unit-norm query vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryEmbedding {
    vector: Vec<f32>,
}

impl QueryEmbedding {
    /// Normalizes `raw` to unit length.
    pub fn new(raw: Vec<f32>) -> Result<Self, RetrievalError> {
        let norm = l2_norm(&raw);
        if !(norm.is_finite() && norm > 0.0) {
            return Err(RetrievalError::ZeroVector);
        }
        Ok(QueryEmbedding {
            vector: raw.iter().map(|&x| (x as f64 / norm) as f32).collect(),
        })
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.vector
    }

    pub fn dimension(&self) -> usize {
        self.vector.len()
    }
}

/// Whether an entry's class tags are compatible with the prediction. A
/// missing tag matches any value.
pub fn matches_class(entry: &KnowledgeEntry, p: &DiagnosticPrediction) -> bool {
    entry.dr_grade.is_none_or(|g| g == p.grade()) && entry.me_label.is_none_or(|m| m == p.me_present())
}

#[derive(Debug, Clone)]
pub struct ClassMatch<'a> {
    pub candidates: Vec<&'a EmbeddedEntry>,
    /// Set when nothing matched and `candidates` is the whole index.
    pub fallback: bool,
}

pub fn class_match_filter<'a>(index: &'a VectorIndex, p: &DiagnosticPrediction) -> ClassMatch<'a> {
    let candidates: Vec<_> = index
        .entries()
        .iter()
        .filter(|e| matches_class(&e.entry, p))
        .collect();
    if candidates.is_empty() {
        ClassMatch {
            candidates: index.entries().iter().collect(),
            fallback: true,
        }
    } else {
        ClassMatch {
            candidates,
            fallback: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedSnippet {
    pub entry: KnowledgeEntry,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    /// Sorted by score descending, ties by ascending id.
    pub snippets: Vec<RetrievedSnippet>,
    pub k_requested: usize,
    pub fallback: bool,
}

impl RetrievalResult {
    /// True when the class filter was applied (no fallback).
    pub fn filtered(&self) -> bool {
        !self.fallback
    }

    pub fn ids(&self) -> Vec<&str> {
        self.snippets.iter().map(|s| s.entry.id.as_str()).collect()
    }
}

fn score(q: &[f32], v: &[f32]) -> f64 {
    let dot: f64 = q.iter().zip(v).map(|(&a, &b)| a as f64 * b as f64).sum();
    dot.clamp(-1.0, 1.0)
}

fn rank_order(a: &RetrievedSnippet, b: &RetrievedSnippet) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.entry.id.cmp(&b.entry.id))
}

/// Scores `candidates` against `q` and keeps the best `k`.
pub fn rank_top_k(candidates: &[&EmbeddedEntry], q: &QueryEmbedding, k: usize) -> Vec<RetrievedSnippet> {
    let mut scored: Vec<RetrievedSnippet> = candidates
        .iter()
        .map(|e| RetrievedSnippet {
            score: score(q.as_slice(), &e.vector),
            entry: e.entry.clone(),
        })
        .collect();
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_by(rank_order);
    scored
}

/// Class-matched exact top-k retrieval.
pub fn retrieve_top_k(
    index: &VectorIndex,
    q: &QueryEmbedding,
    p: &DiagnosticPrediction,
    k: usize,
) -> Result<RetrievalResult, RetrievalError> {
    if k == 0 {
        return Err(RetrievalError::ZeroK);
    }
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    if q.dimension() != index.dimension() {
        return Err(RetrievalError::DimensionMismatch {
            left: q.dimension(),
            right: index.dimension(),
        });
    }
    let matched = class_match_filter(index, p);
    if matched.fallback {
        tracing::warn!(
            grade = p.grade().value(),
            me = p.me_present(),
            "no knowledge entries match the predicted class; retrieving from the full index"
        );
    }
    Ok(RetrievalResult {
        snippets: rank_top_k(&matched.candidates, q, k),
        k_requested: k,
        fallback: matched.fallback,
    })
}
