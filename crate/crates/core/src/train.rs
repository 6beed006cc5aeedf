//! Small-scale numerical kernels for adapter fine-tuning: the low-rank
//! weight update `W' = W + (alpha / r) * B * A`, its gradients, the
//! assistant-masked causal LM loss, and inverse-frequency class weights.
//!
//! Everything is f64.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

/// Adapter rank used for the full-size vision-language model.
pub const VLM_LORA_RANK: usize = 64;
/// Adapter scale numerator used with [`VLM_LORA_RANK`].
pub const VLM_LORA_ALPHA: f64 = 128.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("no assistant positions in batch")]
    NoMaskedPositions,
    #[error("target id {id} at position {pos} outside vocabulary of {vocab}")]
    TargetOutOfRange { pos: usize, id: usize, vocab: usize },
    #[error("class {0} has zero count")]
    ZeroCount(usize),
}

/// Frozen base matrix `base` (m×n) with trainable factors `a` (r×n) and
/// `b` (m×r).
#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    base: DMatrix<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    alpha: f64,
    rank: usize,
}

impl LoraAdapter {
    pub fn new(
        base: DMatrix<f64>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        alpha: f64,
    ) -> Result<Self, KernelError> {
        let (m, n) = base.shape();
        let rank = a.nrows();
        if rank == 0 || rank > m.min(n) {
            return Err(KernelError::Shape(format!("rank {rank} must be in 1..={}", m.min(n))));
        }
        if a.ncols() != n {
            return Err(KernelError::Shape(format!("A is {:?}, expected ({rank}, {n})", a.shape())));
        }
        if b.shape() != (m, rank) {
            return Err(KernelError::Shape(format!("B is {:?}, expected ({m}, {rank})", b.shape())));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(KernelError::Parameter(format!("alpha {alpha} must be positive")));
        }
        Ok(LoraAdapter {
            base,
            a,
            b,
            alpha,
            rank,
        })
    }

    /// Standard initialization: `B = 0` so the adapter starts as the identity
    /// update, `A` uniform in `±1/sqrt(n)`.
    pub fn init<R: Rng + ?Sized>(
        base: DMatrix<f64>,
        rank: usize,
        alpha: f64,
        rng: &mut R,
    ) -> Result<Self, KernelError> {
        let (m, n) = base.shape();
        let bound = 1.0 / (n.max(1) as f64).sqrt();
        let a = DMatrix::from_fn(rank, n, |_, _| rng.random_range(-bound..=bound));
        let b = DMatrix::zeros(m, rank);
        Self::new(base, a, b, alpha)
    }

    pub fn base(&self) -> &DMatrix<f64> {
        &self.base
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// Replaces the trainable factors, keeping the base untouched.
    pub fn set_factors(&mut self, a: DMatrix<f64>, b: DMatrix<f64>) -> Result<(), KernelError> {
        let updated = LoraAdapter::new(self.base.clone(), a, b, self.alpha)?;
        *self = updated;
        Ok(())
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<(), KernelError> {
        if x.len() != self.base.ncols() {
            return Err(KernelError::Shape(format!(
                "input has {} entries, expected {}",
                x.len(),
                self.base.ncols()
            )));
        }
        Ok(())
    }
}

/// `(alpha / r) * B * A`.
pub fn lora_delta(adapter: &LoraAdapter) -> DMatrix<f64> {
    (&adapter.b * &adapter.a) * adapter.scale()
}

/// `W + lora_delta`; the adapter is not modified.
pub fn merge_weights(adapter: &LoraAdapter) -> DMatrix<f64> {
    &adapter.base + lora_delta(adapter)
}

/// `W x + (alpha / r) B (A x)` without materializing the update.
pub fn lora_forward(adapter: &LoraAdapter, x: &DVector<f64>) -> Result<DVector<f64>, KernelError> {
    adapter.check_input(x)?;
    let low = &adapter.a * x;
    Ok(&adapter.base * x + (&adapter.b * low) * adapter.scale())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrads {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// Gradients of `upstream · lora_forward(x)` with respect to `A` and `B`.
pub fn lora_grad(
    adapter: &LoraAdapter,
    x: &DVector<f64>,
    upstream: &DVector<f64>,
) -> Result<LoraGrads, KernelError> {
    adapter.check_input(x)?;
    if upstream.len() != adapter.base.nrows() {
        return Err(KernelError::Shape(format!(
            "upstream has {} entries, expected {}",
            upstream.len(),
            adapter.base.nrows()
        )));
    }
    let s = adapter.scale();
    let ax = &adapter.a * x;
    let bt_up = adapter.b.transpose() * upstream;
    Ok(LoraGrads {
        b: (upstream * ax.transpose()) * s,
        a: (bt_up * x.transpose()) * s,
    })
}

/// Logits for `T` positions over a vocabulary of `V`, the next-token targets,
/// and which positions belong to the assistant response.
#[derive(Debug, Clone, PartialEq)]
pub struct SftBatch {
    pub logits: DMatrix<f64>,
    pub target_ids: Vec<usize>,
    pub assistant_mask: Vec<bool>,
}

impl SftBatch {
    /// Mask for a sequence whose first `prompt_len` targets are prompt
    /// tokens and the rest are response tokens.
    pub fn response_mask(prompt_len: usize, total_len: usize) -> Vec<bool> {
        (0..total_len).map(|t| t >= prompt_len).collect()
    }
}

/// Mean token cross-entropy over assistant positions. Prompt positions are
/// never read.
pub fn sft_loss(batch: &SftBatch) -> Result<f64, KernelError> {
    let (t_len, vocab) = batch.logits.shape();
    if batch.target_ids.len() != t_len || batch.assistant_mask.len() != t_len {
        return Err(KernelError::Shape(format!(
            "{t_len} logit rows, {} targets, {} mask entries",
            batch.target_ids.len(),
            batch.assistant_mask.len()
        )));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for t in (0..t_len).filter(|&t| batch.assistant_mask[t]) {
        let id = batch.target_ids[t];
        if id >= vocab {
            return Err(KernelError::TargetOutOfRange { pos: t, id, vocab });
        }
        let row = batch.logits.row(t);
        let max = row.max();
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[id];
        count += 1;
    }
    if count == 0 {
        return Err(KernelError::NoMaskedPositions);
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Balanced inverse-frequency weights `N / (C * n_c)`, which keep the
/// weighted sample count equal to `N`.
pub fn inverse_frequency_weights(counts: &[u64]) -> Result<ClassWeights, KernelError> {
    if counts.is_empty() {
        return Err(KernelError::Parameter("no classes".into()));
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(KernelError::ZeroCount(c));
    }
    let total: u64 = counts.iter().sum();
    let classes = counts.len() as f64;
    Ok(ClassWeights {
        weights: counts
            .iter()
            .map(|&n| total as f64 / (classes * n as f64))
            .collect(),
        counts: counts.to_vec(),
    })
}

/// Integer class counts for `total` samples split by `fractions` (which
/// should sum to 1), using largest-remainder apportionment so the counts sum
/// exactly to `total`.
pub fn counts_from_fractions(total: u64, fractions: &[f64]) -> Result<Vec<u64>, KernelError> {
    if fractions.iter().any(|f| !(f.is_finite() && *f >= 0.0)) {
        return Err(KernelError::Parameter("fractions must be non-negative".into()));
    }
    let sum: f64 = fractions.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(KernelError::Parameter(format!("fractions sum to {sum}")));
    }
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<u64> = quotas.iter().map(|q| q.floor() as u64).collect();
    let mut leftover = total - counts.iter().sum::<u64>();
    let mut order: Vec<usize> = (0..quotas.len()).collect();
    order.sort_by(|&i, &j| {
        let (ri, rj) = (quotas[i] - quotas[i].floor(), quotas[j] - quotas[j].floor());
        rj.total_cmp(&ri).then(i.cmp(&j))
    });
    for &i in order.iter().cycle() {
        if leftover == 0 {
            break;
        }
        counts[i] += 1;
        leftover -= 1;
    }
    Ok(counts)
}
