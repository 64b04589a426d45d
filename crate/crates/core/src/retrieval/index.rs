use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::micg::Reader;

const MAGIC: &[u8; 8] = b"MIRAVEC1";

#[derive(Debug, Clone, PartialEq)]
pub struct IndexRecord {
    pub doc_id: String,
    pub group_id: u32,
    /// Unit norm.
    pub vector: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VectorIndex {
    pub dim: usize,
    pub records: Vec<IndexRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RetrievalResult {
    /// (doc_id, score), scores non-increasing, doc ids unique.
    pub hits: Vec<(String, f64)>,
}

impl RetrievalResult {
    pub fn doc_ids(&self) -> Vec<String> {
        self.hits.iter().map(|(d, _)| d.clone()).collect()
    }
}

/// Normalizes and stores one vector per (doc_id, group_id).
pub fn build_index(vectors: Vec<(String, u32, Vec<f64>)>) -> Result<VectorIndex> {
    let dim = vectors.first().map_or(0, |v| v.2.len());
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(vectors.len());
    for (doc_id, group_id, v) in vectors {
        if v.len() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                got: v.len(),
            });
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::ZeroRecord { doc: doc_id, group: group_id });
        }
        if !seen.insert((doc_id.clone(), group_id)) {
            return Err(Error::BadFormat(format!("duplicate record ({doc_id},{group_id})")));
        }
        records.push(IndexRecord {
            doc_id,
            group_id,
            vector: v.iter().map(|x| (x / norm) as f32).collect(),
        });
    }
    Ok(VectorIndex { dim, records })
}

/// Scores every record against the normalized query, keeps each document's
/// best record, and returns the top k by score (doc_id ascending on ties).
pub fn search(index: &VectorIndex, query: &[f64], k: usize) -> Result<RetrievalResult> {
    if k == 0 || index.records.is_empty() {
        return Ok(RetrievalResult::default());
    }
    if query.len() != index.dim {
        return Err(Error::DimMismatch {
            expected: index.dim,
            got: query.len(),
        });
    }
    let norm = query.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::ZeroVector);
    }
    let q: Vec<f64> = query.iter().map(|x| x / norm).collect();
    let scores: Vec<f64> = index
        .records
        .par_iter()
        .map(|r| r.vector.iter().zip(&q).map(|(&a, b)| a as f64 * b).sum())
        .collect();
    let mut best: BTreeMap<&str, f64> = BTreeMap::new();
    for (r, &s) in index.records.iter().zip(&scores) {
        best.entry(r.doc_id.as_str())
            .and_modify(|b| *b = b.max(s))
            .or_insert(s);
    }
    let mut hits: Vec<(String, f64)> = best.into_iter().map(|(d, s)| (d.to_string(), s)).collect();
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    hits.truncate(k);
    Ok(RetrievalResult { hits })
}

impl VectorIndex {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.records.len() * (16 + 4 * self.dim));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.doc_id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.doc_id.as_bytes());
            out.extend_from_slice(&r.group_id.to_le_bytes());
            for v in &r.vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::BadFormat("vectors: bad magic".into()));
        }
        let dim = r.u32()? as usize;
        let mut records = Vec::new();
        while r.pos < bytes.len() {
            let doc_id = r.string()?;
            let group_id = r.u32()?;
            let mut vector = Vec::with_capacity(dim);
            for _ in 0..dim {
                vector.push(r.f32()?);
            }
            records.push(IndexRecord {
                doc_id,
                group_id,
                vector,
            });
        }
        Ok(Self { dim, records })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
