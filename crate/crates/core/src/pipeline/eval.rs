use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use crate::metrics::{
    binary_auc, bleu4, macro_auc_ovr, mean, rouge_l, rouge_n, semantic_similarity, tokenize, weighted_prf,
    ConfusionMatrix, TOKENIZER_VERSION,
};
use crate::prediction::{DiagnosticPrediction, NUM_GRADES};

use super::{DatasetManifest, DatasetRecord, Pipeline, PipelineError, Stage, StageError};

/// Weighted precision/recall/F1 and macro AUC for one classification head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassBlock {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Null when fewer than two true classes are present.
    pub auc: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub generator: String,
    pub k: usize,
    pub use_classifier: bool,
    pub use_retrieval: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub image_ref: String,
    pub predicted_grade: Option<u8>,
    pub predicted_me: Option<bool>,
    pub true_grade: Option<u8>,
    pub true_me: Option<bool>,
    pub snippet_ids: Vec<String>,
    pub fallback: bool,
    pub prompt_fingerprint: String,
    pub report: String,
    pub bleu4: Option<f64>,
    #[serde(rename = "rougeL")]
    pub rouge_l: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub image_ref: String,
    pub stage: Stage,
    pub error: String,
}

/// Evaluation output. Serializes to the evaluation file with the keys in
/// declaration order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub bleu4: Option<f64>,
    pub rouge1: Option<f64>,
    #[serde(rename = "rougeL")]
    pub rouge_l: Option<f64>,
    pub sbert_sim: Option<f64>,
    pub clinical_sim: Option<f64>,
    pub dr: Option<ClassBlock>,
    pub me: Option<ClassBlock>,
    pub n_examples: usize,
    pub tokenizer_version: String,
    pub n_failed: usize,
    pub run: RunSummary,
    pub failures: Vec<FailureRow>,
    pub records: Vec<RecordRow>,
}

impl EvalReport {
    /// Pretty JSON with a trailing newline. Byte-identical for identical
    /// reports.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        let mut out = serde_json::to_vec_pretty(self).expect("eval report serializes");
        out.push(b'\n');
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), PipelineError> {
        std::fs::write(path, self.to_json_bytes()).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Default)]
struct TextScores {
    bleu4: f64,
    rouge1: f64,
    rouge_l: f64,
    sbert: Option<f64>,
    clinical: Option<f64>,
}

struct Scored {
    record: DatasetRecord,
    prediction: Option<DiagnosticPrediction>,
    row: RecordRow,
    text: Option<TextScores>,
}

fn metric_failure(record: &str, stage: Stage, e: impl ToString) -> PipelineError {
    PipelineError::Stage {
        stage,
        record: record.to_owned(),
        source: StageError::Other(e.to_string()),
    }
}

impl Pipeline {
    async fn score_record(&self, record: &DatasetRecord) -> Result<Scored, PipelineError> {
        let id = record.image_ref.as_str();
        let out = self.run_report(id).await?;

        let text = match &record.reference_report {
            None => None,
            Some(reference) => {
                let c = tokenize(&out.report.text);
                let r = tokenize(reference);
                let b = bleu4(&c, std::slice::from_ref(&r)).map_err(|e| metric_failure(id, Stage::Metrics, e))?;
                let r1 = rouge_n(&c, &r, 1).map_err(|e| metric_failure(id, Stage::Metrics, e))?;
                let rl = rouge_l(&c, &r).map_err(|e| metric_failure(id, Stage::Metrics, e))?;
                let mut scores = TextScores {
                    bleu4: b,
                    rouge1: r1.f1,
                    rouge_l: rl.f1,
                    ..TextScores::default()
                };
                if let Some(e) = &self.backends.sbert {
                    scores.sbert = Some(
                        semantic_similarity(&out.report.text, reference, e.as_ref())
                            .await
                            .map_err(|e| metric_failure(id, Stage::Similarity, e))?,
                    );
                }
                if let Some(e) = &self.backends.clinical {
                    scores.clinical = Some(
                        semantic_similarity(&out.report.text, reference, e.as_ref())
                            .await
                            .map_err(|e| metric_failure(id, Stage::Similarity, e))?,
                    );
                }
                Some(scores)
            }
        };

        let p = out.trace.prediction.clone();
        let row = RecordRow {
            image_ref: id.to_owned(),
            predicted_grade: p.as_ref().map(|p| p.grade().value()),
            predicted_me: p.as_ref().map(DiagnosticPrediction::me_present),
            true_grade: record.true_grade.map(|g| g.value()),
            true_me: record.true_me,
            snippet_ids: out.trace.snippets.iter().map(|s| s.id.clone()).collect(),
            fallback: out.trace.fallback,
            prompt_fingerprint: out.trace.prompt_fingerprint.clone(),
            report: out.report.text.clone(),
            bleu4: text.as_ref().map(|t| t.bleu4),
            rouge_l: text.as_ref().map(|t| t.rouge_l),
        };
        Ok(Scored {
            record: record.clone(),
            prediction: p,
            row,
            text,
        })
    }

    /// Runs every manifest record with at most `concurrency` in flight and
    /// aggregates the metrics. Failed records are listed and excluded; the
    /// run fails only if every record fails.
    pub async fn run_eval(&self, manifest: &DatasetManifest) -> Result<EvalReport, PipelineError> {
        let results: Vec<Result<Scored, PipelineError>> = stream::iter(manifest.records())
            .map(|r| self.score_record(r))
            .buffered(self.config.concurrency)
            .collect()
            .await;

        let mut scored = Vec::new();
        let mut failures = Vec::new();
        let mut first_error = None;
        for (record, result) in manifest.records().iter().zip(results) {
            match result {
                Ok(s) => scored.push(s),
                Err(e) => {
                    tracing::warn!(image_ref = %record.image_ref, error = %e, "record failed");
                    let stage = match &e {
                        PipelineError::Stage { stage, .. } => *stage,
                        _ => Stage::Generate,
                    };
                    let error = match &e {
                        PipelineError::Stage { source, .. } => source.to_string(),
                        other => other.to_string(),
                    };
                    first_error.get_or_insert_with(|| e.to_string());
                    failures.push(FailureRow {
                        image_ref: record.image_ref.clone(),
                        stage,
                        error,
                    });
                }
            }
        }
        if scored.is_empty() {
            return Err(PipelineError::AllFailed {
                n: failures.len(),
                first: first_error.unwrap_or_default(),
            });
        }

        let texts: Vec<&TextScores> = scored.iter().filter_map(|s| s.text.as_ref()).collect();
        let avg = |f: &dyn Fn(&TextScores) -> Option<f64>| -> Option<f64> {
            let v: Vec<f64> = texts.iter().filter_map(|t| f(t)).collect();
            if v.len() == texts.len() {
                mean(&v)
            } else {
                None
            }
        };

        Ok(EvalReport {
            bleu4: avg(&|t| Some(t.bleu4)),
            rouge1: avg(&|t| Some(t.rouge1)),
            rouge_l: avg(&|t| Some(t.rouge_l)),
            sbert_sim: avg(&|t| t.sbert),
            clinical_sim: avg(&|t| t.clinical),
            dr: dr_block(&scored),
            me: me_block(&scored),
            n_examples: scored.len(),
            tokenizer_version: TOKENIZER_VERSION.to_owned(),
            n_failed: failures.len(),
            run: RunSummary {
                generator: self.backends.generator.id().to_owned(),
                k: self.config.k,
                use_classifier: self.config.use_classifier,
                use_retrieval: self.config.use_retrieval,
                seed: self.config.seed,
            },
            failures,
            records: scored.into_iter().map(|s| s.row).collect(),
        })
    }
}

fn dr_block(scored: &[Scored]) -> Option<ClassBlock> {
    let pairs: Vec<(usize, &DiagnosticPrediction)> = scored
        .iter()
        .filter_map(|s| Some((s.record.true_grade?.index(), s.prediction.as_ref()?)))
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let mut cm = ConfusionMatrix::new(NUM_GRADES);
    for (t, p) in &pairs {
        cm.record(*t, p.grade().index()).ok()?;
    }
    let prf = weighted_prf(&cm).ok()?;
    let labels: Vec<usize> = pairs.iter().map(|(t, _)| *t).collect();
    let probs: Vec<Vec<f64>> = pairs.iter().map(|(_, p)| p.grade_probs().to_vec()).collect();
    Some(ClassBlock {
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        auc: macro_auc_ovr(&labels, &probs).ok().map(|r| r.macro_auc),
        n: pairs.len(),
    })
}

fn me_block(scored: &[Scored]) -> Option<ClassBlock> {
    let pairs: Vec<(bool, &DiagnosticPrediction)> = scored
        .iter()
        .filter_map(|s| Some((s.record.true_me?, s.prediction.as_ref()?)))
        .collect();
    if pairs.is_empty() {
        return None;
    }
    let mut cm = ConfusionMatrix::new(2);
    for (t, p) in &pairs {
        cm.record(*t as usize, p.me_present() as usize).ok()?;
    }
    let prf = weighted_prf(&cm).ok()?;
    let scores: Vec<f64> = pairs.iter().map(|(_, p)| p.me_probability()).collect();
    let truth: Vec<bool> = pairs.iter().map(|(t, _)| *t).collect();
    Some(ClassBlock {
        precision: prf.precision,
        recall: prf.recall,
        f1: prf.f1,
        auc: binary_auc(&scores, &truth),
        n: pairs.len(),
    })
}
