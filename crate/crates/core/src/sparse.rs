//! Okapi BM25 over tool texts.
//!
//! Each tool is indexed as `"name. description"`. Scoring:
//!
//! ```text
//! score(q, d) = Σ_{t ∈ q} IDF(t) · tf·(k1+1) / (tf + k1·(1 − b + b·|d|/avgdl))
//! IDF(t)      = ln(1 + (N − df + 0.5) / (df + 0.5))
//! ```
//!
//! Query terms are summed with multiplicity. The `+1` inside the log keeps IDF
//! positive, so a document scores zero exactly when it shares no query term.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::ToolCollection;
use crate::error::{Error, Result};
use crate::jsonl;
use crate::ranked::{top_k, RankedItem, RankedList};

pub const INDEX_FORMAT_VERSION: u32 = 1;

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.5, b: 0.75 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bm25Index {
    pub format_version: u32,
    pub params: Bm25Params,
    pub tool_ids: Vec<String>,
    pub doc_lengths: Vec<usize>,
    pub avg_doc_length: f64,
    /// term → (doc ordinal, term frequency), ordinals ascending.
    pub postings: BTreeMap<String, Vec<(usize, u32)>>,
}

pub fn build_index(tools: &ToolCollection, params: Bm25Params) -> Result<Bm25Index> {
    if tools.is_empty() {
        return Err(Error::Data("cannot build a BM25 index over an empty corpus".into()));
    }
    let mut postings: BTreeMap<String, Vec<(usize, u32)>> = BTreeMap::new();
    let mut tool_ids = Vec::with_capacity(tools.len());
    let mut doc_lengths = Vec::with_capacity(tools.len());
    for (ord, tool) in tools.iter().enumerate() {
        let tokens = tokenize(&tool.lexical_text());
        doc_lengths.push(tokens.len());
        tool_ids.push(tool.id.clone());
        let mut tf: BTreeMap<String, u32> = BTreeMap::new();
        for t in tokens {
            *tf.entry(t).or_default() += 1;
        }
        for (term, f) in tf {
            postings.entry(term).or_default().push((ord, f));
        }
    }
    let avg_doc_length = doc_lengths.iter().sum::<usize>() as f64 / doc_lengths.len() as f64;
    Ok(Bm25Index {
        format_version: INDEX_FORMAT_VERSION,
        params,
        tool_ids,
        doc_lengths,
        avg_doc_length,
        postings,
    })
}

impl Bm25Index {
    pub fn doc_count(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn idf(&self, term: &str) -> f64 {
        idf(self.doc_count(), self.doc_freq(term))
    }

    fn term_weight(&self, idf: f64, tf: u32, doc_len: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        let norm = if self.avg_doc_length > 0.0 {
            doc_len as f64 / self.avg_doc_length
        } else {
            0.0
        };
        idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * norm))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let index: Bm25Index = jsonl::read_json(path)?;
        if index.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported BM25 index format version {}",
                index.format_version
            )));
        }
        Ok(index)
    }
}

pub fn idf(doc_count: usize, doc_freq: usize) -> f64 {
    let n = doc_count as f64;
    let df = doc_freq as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

pub fn bm25_score(index: &Bm25Index, query_tokens: &[String], doc: usize) -> Result<f64> {
    if doc >= index.doc_count() {
        return Err(Error::Data(format!(
            "document ordinal {doc} out of range (corpus has {})",
            index.doc_count()
        )));
    }
    let mut score = 0.0;
    for term in query_tokens {
        let Some(list) = index.postings.get(term) else {
            continue;
        };
        if let Ok(pos) = list.binary_search_by_key(&doc, |&(d, _)| d) {
            let idf = idf(index.doc_count(), list.len());
            score += index.term_weight(idf, list[pos].1, index.doc_lengths[doc]);
        }
    }
    Ok(score)
}

/// Top-`k` tools by BM25, ties broken by ascending tool id. Tools sharing no
/// query term are never returned.
pub fn search(index: &Bm25Index, query_text: &str, k: usize) -> RankedList {
    let tokens = tokenize(query_text);
    let mut acc: HashMap<usize, f64> = HashMap::new();
    for term in &tokens {
        let Some(list) = index.postings.get(term) else {
            continue;
        };
        let idf = idf(index.doc_count(), list.len());
        for &(doc, tf) in list {
            *acc.entry(doc).or_default() += index.term_weight(idf, tf, index.doc_lengths[doc]);
        }
    }
    let items = acc
        .into_iter()
        .filter(|&(_, s)| s > 0.0)
        .map(|(doc, s)| RankedItem::new(index.tool_ids[doc].clone(), s))
        .collect();
    RankedList::new("", "bm25", top_k(items, k))
}
