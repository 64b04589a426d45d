//! Documents, click logs and relevance judgments.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceTag {
    Title,
    Url,
    Anchor,
}

impl SourceTag {
    pub const ORDER: [SourceTag; 3] = [SourceTag::Title, SourceTag::Url, SourceTag::Anchor];
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentRecord {
    pub doc_id: String,
    /// Always in `SourceTag::ORDER`; any text may be empty.
    pub sources: Vec<(SourceTag, String)>,
}

impl DocumentRecord {
    pub fn new(doc_id: impl Into<String>, title: &str, url: &str, anchor: &str) -> Self {
        Self {
            doc_id: doc_id.into(),
            sources: vec![
                (SourceTag::Title, title.to_owned()),
                (SourceTag::Url, url.to_owned()),
                (SourceTag::Anchor, anchor.to_owned()),
            ],
        }
    }

    pub fn source(&self, tag: SourceTag) -> &str {
        self.sources
            .iter()
            .find(|(t, _)| *t == tag)
            .map(|(_, s)| s.as_str())
            .unwrap_or("")
    }
}

#[derive(Serialize, Deserialize)]
struct DocumentLine {
    doc_id: String,
    #[serde(default)]
    title: String,
    #[serde(default)]
    url: String,
    #[serde(default)]
    anchor: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClickRecord {
    pub doc_id: String,
    /// Normalized click key.
    pub query_text: String,
    pub frequency: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Judgment {
    pub query_text: String,
    pub doc_id: String,
    pub rel: u8,
}

/// Per-document clicks, each list sorted by (frequency desc, key asc).
pub type ClickLog = BTreeMap<String, Vec<ClickRecord>>;

/// query text -> (doc_id -> rel) over the judged non-bad documents.
pub type Judgments = BTreeMap<String, BTreeMap<String, u8>>;

/// The key that defines click identity for graph edges.
pub fn normalize_click_key(query_text: &str) -> String {
    text::normalize(query_text)
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn parse_corpus(raw: &str) -> Result<Vec<DocumentRecord>> {
    let mut seen = HashSet::new();
    let mut docs = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: DocumentLine =
            serde_json::from_str(line).map_err(|_| Error::MalformedLine(i + 1))?;
        if rec.doc_id.is_empty() {
            return Err(Error::MalformedLine(i + 1));
        }
        if !seen.insert(rec.doc_id.clone()) {
            return Err(Error::DuplicateDoc(rec.doc_id));
        }
        docs.push(DocumentRecord::new(rec.doc_id, &rec.title, &rec.url, &rec.anchor));
    }
    Ok(docs)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<DocumentRecord>> {
    parse_corpus(&read(path.as_ref())?)
}

pub fn write_corpus(docs: &[DocumentRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for d in docs {
        let line = DocumentLine {
            doc_id: d.doc_id.clone(),
            title: d.source(SourceTag::Title).to_owned(),
            url: d.source(SourceTag::Url).to_owned(),
            anchor: d.source(SourceTag::Anchor).to_owned(),
        };
        serde_json::to_writer(&mut out, &line).expect("serialize document");
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn parse_clicks(raw: &str) -> Result<ClickLog> {
    let mut merged: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for (i, line) in raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [doc_id, query, freq] = fields[..] else {
            return Err(Error::MalformedLine(i + 1));
        };
        let freq: u64 = freq.trim().parse().map_err(|_| Error::MalformedLine(i + 1))?;
        if doc_id.is_empty() {
            return Err(Error::MalformedLine(i + 1));
        }
        if freq == 0 {
            continue;
        }
        *merged
            .entry(doc_id.to_owned())
            .or_default()
            .entry(normalize_click_key(query))
            .or_default() += freq;
    }
    Ok(merged
        .into_iter()
        .map(|(doc_id, keys)| {
            let mut clicks: Vec<ClickRecord> = keys
                .into_iter()
                .map(|(query_text, frequency)| ClickRecord {
                    doc_id: doc_id.clone(),
                    query_text,
                    frequency,
                })
                .collect();
            sort_by_importance(&mut clicks);
            (doc_id, clicks)
        })
        .collect())
}

/// Frequency descending, then normalized key ascending.
pub fn sort_by_importance(clicks: &mut [ClickRecord]) {
    clicks.sort_by(|a, b| {
        b.frequency
            .cmp(&a.frequency)
            .then_with(|| a.query_text.cmp(&b.query_text))
    });
}

pub fn load_clicks(path: impl AsRef<Path>) -> Result<ClickLog> {
    parse_clicks(&read(path.as_ref())?)
}

pub fn write_clicks(log: &ClickLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for clicks in log.values() {
        for c in clicks {
            writeln!(out, "{}\t{}\t{}", c.doc_id, c.query_text, c.frequency).expect("write");
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Documents that appear in the click log but not in the corpus.
pub fn dangling_clicks(docs: &[DocumentRecord], log: &ClickLog) -> Vec<String> {
    let known: HashSet<&str> = docs.iter().map(|d| d.doc_id.as_str()).collect();
    log.keys()
        .filter(|d| !known.contains(d.as_str()))
        .cloned()
        .collect()
}

pub fn parse_judgments(raw: &str) -> Result<Vec<Judgment>> {
    let mut out = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [query, doc_id, rel] = fields[..] else {
            return Err(Error::MalformedLine(i + 1));
        };
        let rel: u8 = rel.trim().parse().map_err(|_| Error::MalformedLine(i + 1))?;
        if !(1..=4).contains(&rel) {
            return Err(Error::MalformedLine(i + 1));
        }
        out.push(Judgment {
            query_text: query.to_owned(),
            doc_id: doc_id.to_owned(),
            rel,
        });
    }
    Ok(out)
}

pub fn load_judgments(path: impl AsRef<Path>) -> Result<Vec<Judgment>> {
    parse_judgments(&read(path.as_ref())?)
}

pub fn write_judgments(judgments: &[Judgment], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for j in judgments {
        writeln!(out, "{}\t{}\t{}", j.query_text, j.doc_id, j.rel).expect("write");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Groups judgments per query. A repeated (query, doc) pair keeps the last label.
pub fn judgments_by_query(judgments: &[Judgment]) -> Judgments {
    let mut out = Judgments::new();
    for j in judgments {
        out.entry(j.query_text.clone())
            .or_default()
            .insert(j.doc_id.clone(), j.rel);
    }
    out
}

pub fn doc_index(docs: &[DocumentRecord]) -> HashMap<&str, &DocumentRecord> {
    docs.iter().map(|d| (d.doc_id.as_str(), d)).collect()
}
