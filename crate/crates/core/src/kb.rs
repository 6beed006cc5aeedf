//! Knowledge base ingestion and the exact (flat) vector index.
//!
//! The KB source is line-delimited JSON, one flat object per line:
//!
//! ```text
//! {"id":"g2-01","dr_grade":2,"me_label":false,"text":"Moderate NPDR: ..."}
//! ```
//!
//! Every stored vector is L2-normalized at build time, so cosine similarity
//! against a unit query is a plain dot product. A built index is immutable.
//!
//! # Persistence format
//!
//! All integers little-endian:
//!
//! | field | size |
//! |---|---|
//! | magic `RRAGIDX` + version byte `1` | 8 |
//! | dimension `d` (u32) | 4 |
//! | entry count `n` (u32) | 4 |
//! | `n` records | variable |
//! | SHA-256 of all preceding bytes | 32 |
//!
//! A record is `u32` id length, id bytes, a metadata byte (bit 0: grade
//! present, bit 1: ME label present), grade `u8`, ME `u8`, then `d` f32 values.
//! The trailing hash doubles as the index fingerprint.

use std::collections::HashSet;
use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{Embedder, GatewayError};
use crate::prediction::DrGrade;

const MAGIC: &[u8; 7] = b"RRAGIDX";
pub const FORMAT_VERSION: u8 = b'1';
const HEADER_LEN: usize = 16;
const FOOTER_LEN: usize = 32;
const EMBED_BATCH: usize = 32;

/// Maximum deviation of a stored vector's L2 norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: entry {id:?} has empty text")]
    EmptyText { line: usize, id: String },
    #[error("line {line}: entry {id:?} has dr_grade {grade} outside 0..=4")]
    GradeOutOfRange { line: usize, id: String, grade: i64 },
    #[error("cannot build an index from zero entries")]
    NoEntries,
    #[error("embedding failed for entries {ids:?}: {source}")]
    Embedder {
        ids: Vec<String>,
        #[source]
        source: GatewayError,
    },
    #[error("entry {id:?} has embedding dimension {got}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, got: usize },
    #[error("entry {id:?} has a zero or non-finite embedding and cannot be normalized")]
    ZeroVector { id: String },
    #[error("{0}")]
    Invalid(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("not an index file (bad magic)")]
    BadMagic,
    #[error("unsupported index format version {found:?} (expected {expected:?})")]
    Version { found: char, expected: char },
    #[error("index payload truncated: {0}")]
    Truncated(&'static str),
    #[error("{0} unexpected trailing bytes after index footer")]
    TrailingBytes(usize),
    #[error("index fingerprint mismatch: payload is corrupt")]
    FingerprintMismatch,
    #[error("corrupt index: {0}")]
    Corrupt(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// A curated clinical snippet with optional class tags used for class matching.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub id: String,
    pub dr_grade: Option<DrGrade>,
    pub me_label: Option<bool>,
    pub text: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    id: String,
    #[serde(default)]
    dr_grade: Option<i64>,
    #[serde(default)]
    me_label: Option<bool>,
    #[serde(default)]
    text: Option<String>,
}

/// Parses a line-delimited KB file. Blank lines are skipped; line numbers in
/// errors are 1-based.
pub fn parse_kb<R: BufRead>(source: R) -> Result<Vec<KnowledgeEntry>, KbError> {
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in source.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(&line).map_err(|e| KbError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        let text = match raw.text {
            Some(t) if !t.trim().is_empty() => t,
            _ => {
                return Err(KbError::EmptyText {
                    line: line_no,
                    id: raw.id,
                })
            }
        };
        let dr_grade = match raw.dr_grade {
            None => None,
            Some(g) => Some(DrGrade::new(g).map_err(|_| KbError::GradeOutOfRange {
                line: line_no,
                id: raw.id.clone(),
                grade: g,
            })?),
        };
        if !seen.insert(raw.id.clone()) {
            return Err(KbError::DuplicateId {
                line: line_no,
                id: raw.id,
            });
        }
        entries.push(KnowledgeEntry {
            id: raw.id,
            dr_grade,
            me_label: raw.me_label,
            text,
        });
    }
    Ok(entries)
}

/// A knowledge entry paired with its unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedEntry {
    pub entry: KnowledgeEntry,
    pub vector: Vec<f32>,
}

/// Exact flat index over embedded knowledge entries, in ingestion order.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    dimension: usize,
    entries: Vec<EmbeddedEntry>,
    fingerprint: [u8; 32],
}

impl VectorIndex {
    /// Builds an index from entries and their raw (unnormalized) embeddings.
    pub fn from_vectors(
        entries: Vec<KnowledgeEntry>,
        vectors: Vec<Vec<f32>>,
    ) -> Result<Self, KbError> {
        if entries.is_empty() {
            return Err(KbError::NoEntries);
        }
        if entries.len() != vectors.len() {
            return Err(KbError::Invalid(format!(
                "{} entries but {} vectors",
                entries.len(),
                vectors.len()
            )));
        }
        let mut ids = HashSet::new();
        for e in &entries {
            if !ids.insert(e.id.as_str()) {
                return Err(KbError::Invalid(format!("duplicate id {:?}", e.id)));
            }
            if e.text.trim().is_empty() {
                return Err(KbError::Invalid(format!("entry {:?} has empty text", e.id)));
            }
        }
        let dimension = vectors[0].len();
        let mut embedded = Vec::with_capacity(entries.len());
        for (entry, vector) in entries.into_iter().zip(vectors) {
            if vector.len() != dimension || dimension == 0 {
                return Err(KbError::DimensionMismatch {
                    id: entry.id,
                    expected: dimension,
                    got: vector.len(),
                });
            }
            let vector = match normalize_f32(&vector) {
                Some(v) => v,
                None => return Err(KbError::ZeroVector { id: entry.id }),
            };
            embedded.push(EmbeddedEntry { entry, vector });
        }
        let mut index = VectorIndex {
            dimension,
            entries: embedded,
            fingerprint: [0; 32],
        };
        index.fingerprint = sha256(&index.encode_body());
        Ok(index)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[EmbeddedEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Option<&EmbeddedEntry> {
        self.entries.iter().find(|e| e.entry.id == id)
    }

    /// SHA-256 of the serialized body; equal to the persisted footer.
    pub fn fingerprint(&self) -> &[u8; 32] {
        &self.fingerprint
    }

    pub fn fingerprint_hex(&self) -> String {
        hex::encode(self.fingerprint)
    }

    fn encode_body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            HEADER_LEN + self.entries.len() * (self.dimension * 4 + 16) + FOOTER_LEN,
        );
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            let id = e.entry.id.as_bytes();
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id);
            let mut meta = 0u8;
            if e.entry.dr_grade.is_some() {
                meta |= 1;
            }
            if e.entry.me_label.is_some() {
                meta |= 2;
            }
            out.push(meta);
            out.push(e.entry.dr_grade.map_or(0, DrGrade::value));
            out.push(e.entry.me_label.map_or(0, u8::from));
            for v in &e.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.encode_body();
        out.extend_from_slice(&self.fingerprint);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PersistError> {
        decode(bytes)
    }
}

/// Entries persist only `id`, class tags and vectors; snippet text is part
/// of the KB, not the index, so loaded entries need their text reattached.
/// See [`attach_texts`].
pub fn save_index<W: Write>(index: &VectorIndex, mut sink: W) -> Result<(), PersistError> {
    sink.write_all(&index.to_bytes())?;
    sink.flush()?;
    Ok(())
}

pub fn load_index<R: Read>(mut source: R) -> Result<VectorIndex, PersistError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    decode(&bytes)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], PersistError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(PersistError::Truncated(what)),
        }
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, PersistError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, PersistError> {
        Ok(self.take(1, what)?[0])
    }
}

fn decode(bytes: &[u8]) -> Result<VectorIndex, PersistError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(7, "magic")?;
    if magic != MAGIC {
        return Err(PersistError::BadMagic);
    }
    let version = cur.u8("version")?;
    if version != FORMAT_VERSION {
        return Err(PersistError::Version {
            found: version as char,
            expected: FORMAT_VERSION as char,
        });
    }
    let dimension = cur.u32("dimension")? as usize;
    let count = cur.u32("entry count")? as usize;
    if dimension == 0 {
        return Err(PersistError::Corrupt("zero dimension".into()));
    }
    let mut entries = Vec::with_capacity(count.min(bytes.len() / (dimension * 4 + 7)));
    for _ in 0..count {
        let id_len = cur.u32("id length")? as usize;
        let id = std::str::from_utf8(cur.take(id_len, "id")?)
            .map_err(|_| PersistError::Corrupt("id is not UTF-8".into()))?
            .to_owned();
        let meta = cur.u8("metadata")?;
        let grade = cur.u8("grade")?;
        let me = cur.u8("me label")?;
        if meta & !3 != 0 {
            return Err(PersistError::Corrupt(format!("entry {id:?}: bad metadata byte")));
        }
        let dr_grade = if meta & 1 != 0 {
            Some(DrGrade::new(grade as i64).map_err(|e| PersistError::Corrupt(e.to_string()))?)
        } else {
            None
        };
        let me_label = if meta & 2 != 0 {
            match me {
                0 => Some(false),
                1 => Some(true),
                _ => return Err(PersistError::Corrupt(format!("entry {id:?}: bad ME byte"))),
            }
        } else {
            None
        };
        let raw = cur.take(dimension * 4, "vector")?;
        let vector: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        entries.push(EmbeddedEntry {
            entry: KnowledgeEntry {
                id,
                dr_grade,
                me_label,
                text: String::new(),
            },
            vector,
        });
    }
    let body_len = cur.pos;
    let footer = cur.take(FOOTER_LEN, "fingerprint footer")?;
    if cur.pos != bytes.len() {
        return Err(PersistError::TrailingBytes(bytes.len() - cur.pos));
    }
    let fingerprint = sha256(&bytes[..body_len]);
    if fingerprint[..] != footer[..] {
        return Err(PersistError::FingerprintMismatch);
    }
    for e in &entries {
        let norm = l2_norm(&e.vector);
        if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(PersistError::Corrupt(format!(
                "entry {:?} vector norm {norm} is not unit",
                e.entry.id
            )));
        }
    }
    Ok(VectorIndex {
        dimension,
        entries,
        fingerprint,
    })
}

/// Reattaches snippet text from the KB to a loaded index, matching on id.
/// Fails if any indexed id is missing from the KB.
pub fn attach_texts(index: &mut VectorIndex, kb: &[KnowledgeEntry]) -> Result<(), KbError> {
    for e in &mut index.entries {
        let src = kb
            .iter()
            .find(|k| k.id == e.entry.id)
            .ok_or_else(|| KbError::Invalid(format!("indexed id {:?} not in KB", e.entry.id)))?;
        if src.dr_grade != e.entry.dr_grade || src.me_label != e.entry.me_label {
            return Err(KbError::Invalid(format!(
                "class tags for {:?} differ between KB and index",
                e.entry.id
            )));
        }
        e.entry.text = src.text.clone();
    }
    Ok(())
}

/// Embeds every entry with `embedder` (in batches) and builds the index.
pub async fn build_index(
    entries: Vec<KnowledgeEntry>,
    embedder: &dyn Embedder,
) -> Result<VectorIndex, KbError> {
    if entries.is_empty() {
        return Err(KbError::NoEntries);
    }
    let mut vectors: Vec<Vec<f32>> = Vec::with_capacity(entries.len());
    for batch in entries.chunks(EMBED_BATCH) {
        let texts: Vec<String> = batch.iter().map(|e| e.text.clone()).collect();
        let out = embedder.embed(&texts).await.map_err(|source| KbError::Embedder {
            ids: batch.iter().map(|e| e.id.clone()).collect(),
            source,
        })?;
        if let Some(first) = vectors.first() {
            let expected = first.len();
            for (e, v) in batch.iter().zip(&out) {
                if v.len() != expected {
                    return Err(KbError::DimensionMismatch {
                        id: e.id.clone(),
                        expected,
                        got: v.len(),
                    });
                }
            }
        }
        vectors.extend(out);
    }
    VectorIndex::from_vectors(entries, vectors)
}

fn sha256(bytes: &[u8]) -> [u8; 32] {
    let digest = Sha256::digest(bytes);
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

pub(crate) fn l2_norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

fn normalize_f32(v: &[f32]) -> Option<Vec<f32>> {
    let norm = l2_norm(v);
    if !(norm.is_finite() && norm > 0.0) {
        return None;
    }
    Some(v.iter().map(|&x| (x as f64 / norm) as f32).collect())
}
