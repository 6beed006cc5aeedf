use std::collections::BTreeSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::prediction::DrGrade;

use super::PipelineError;

/// One evaluation record. Fields other than `image_ref` are optional and
/// only feed the metrics they are needed for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub image_ref: String,
    #[serde(default)]
    pub reference_report: Option<String>,
    #[serde(default)]
    pub true_grade: Option<DrGrade>,
    #[serde(default)]
    pub true_me: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    records: Vec<DatasetRecord>,
}

impl DatasetManifest {
    pub fn new(records: Vec<DatasetRecord>) -> Result<Self, PipelineError> {
        if records.is_empty() {
            return Err(PipelineError::Manifest("manifest has no records".into()));
        }
        let mut ids = BTreeSet::new();
        for r in &records {
            if r.image_ref.trim().is_empty() {
                return Err(PipelineError::Manifest("empty image_ref".into()));
            }
            if !ids.insert(r.image_ref.as_str()) {
                return Err(PipelineError::Manifest(format!("duplicate image_ref {:?}", r.image_ref)));
            }
            if r.reference_report.as_deref().is_some_and(|t| t.trim().is_empty()) {
                return Err(PipelineError::Manifest(format!(
                    "blank reference_report for {:?}",
                    r.image_ref
                )));
            }
        }
        Ok(DatasetManifest { records })
    }

    /// JSON lines; blank lines are skipped.
    pub fn parse<R: BufRead>(source: R) -> Result<Self, PipelineError> {
        let mut records = Vec::new();
        for (i, line) in source.lines().enumerate() {
            let line = line.map_err(|e| PipelineError::Manifest(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let r: DatasetRecord = serde_json::from_str(&line)
                .map_err(|e| PipelineError::Manifest(format!("line {}: {e}", i + 1)))?;
            records.push(r);
        }
        Self::new(records)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PipelineError> {
        let file = std::fs::File::open(path).map_err(|e| PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Self::parse(std::io::BufReader::new(file))
    }

    pub fn records(&self) -> &[DatasetRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}
