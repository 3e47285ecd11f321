//! Exact cosine retrieval over embedded tool texts.
//!
//! Rows are stored unit-norm so scoring is a dot product. When an adapter is
//! supplied it maps both the tool rows and every query vector.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterModel;
use crate::corpus::ToolCollection;
use crate::embedding::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::ranked::{top_k, RankedItem, RankedList};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseIndex {
    pub format_version: u32,
    pub tool_ids: Vec<String>,
    pub dim: usize,
    pub rows: Vec<EmbeddingVector>,
    pub provider_fingerprint: String,
    pub adapter_fingerprint: Option<String>,
}

fn project(v: &EmbeddingVector, adapter: Option<&AdapterModel>) -> Result<EmbeddingVector> {
    match adapter {
        Some(a) => a.apply(v),
        None => v.normalized(),
    }
}

fn check_adapter(provider_dim: usize, adapter: Option<&AdapterModel>) -> Result<()> {
    match adapter {
        Some(a) if a.dim() != provider_dim => Err(Error::DimensionMismatch {
            expected: provider_dim,
            found: a.dim(),
        }),
        _ => Ok(()),
    }
}

/// Embeds each tool as `"name: description"`.
pub fn build_dense(
    tools: &ToolCollection,
    provider: &dyn EmbeddingProvider,
    adapter: Option<&AdapterModel>,
) -> Result<DenseIndex> {
    check_adapter(provider.dim(), adapter)?;
    let texts: Vec<String> = tools.iter().map(|t| t.embedding_text()).collect();
    let raw = if texts.is_empty() {
        Vec::new()
    } else {
        provider.embed_batch(&texts)?
    };
    let rows = raw
        .iter()
        .map(|v| project(v, adapter))
        .collect::<Result<Vec<_>>>()?;
    Ok(DenseIndex {
        format_version: FORMAT_VERSION,
        tool_ids: tools.iter().map(|t| t.id.clone()).collect(),
        dim: provider.dim(),
        rows,
        provider_fingerprint: provider.fingerprint(),
        adapter_fingerprint: adapter.map(|a| a.fingerprint().to_string()),
    })
}

impl DenseIndex {
    pub fn len(&self) -> usize {
        self.tool_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tool_ids.is_empty()
    }

    pub fn check_compatible(
        &self,
        provider: &dyn EmbeddingProvider,
        adapter: Option<&AdapterModel>,
    ) -> Result<()> {
        let provider_fp = provider.fingerprint();
        if provider_fp != self.provider_fingerprint {
            return Err(Error::FingerprintMismatch {
                what: "provider",
                expected: Some(self.provider_fingerprint.clone()),
                found: Some(provider_fp),
            });
        }
        let adapter_fp = adapter.map(|a| a.fingerprint().to_string());
        if adapter_fp != self.adapter_fingerprint {
            return Err(Error::FingerprintMismatch {
                what: "adapter",
                expected: self.adapter_fingerprint.clone(),
                found: adapter_fp,
            });
        }
        Ok(())
    }

    /// Ranks against an already projected (unit-norm) query vector.
    pub fn search_projected(&self, query: &EmbeddingVector, k: usize) -> Result<Vec<RankedItem>> {
        if query.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: query.dim(),
            });
        }
        let items = self
            .rows
            .iter()
            .zip(&self.tool_ids)
            .map(|(row, id)| RankedItem::new(id.clone(), row.dot(query).clamp(-1.0, 1.0)))
            .collect();
        Ok(top_k(items, k))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        jsonl::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let index: DenseIndex = jsonl::read_json(path)?;
        if index.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported dense index format version {}",
                index.format_version
            )));
        }
        if index.rows.len() != index.tool_ids.len() {
            return Err(Error::Data("dense index row count does not match tool ids".into()));
        }
        Ok(index)
    }

    /// Loads and refuses an index built for a different provider or adapter.
    pub fn load_checked(
        path: &Path,
        provider: &dyn EmbeddingProvider,
        adapter: Option<&AdapterModel>,
    ) -> Result<Self> {
        let index = Self::load(path)?;
        index.check_compatible(provider, adapter)?;
        Ok(index)
    }
}

pub fn dense_search(
    index: &DenseIndex,
    text: &str,
    provider: &dyn EmbeddingProvider,
    adapter: Option<&AdapterModel>,
    k: usize,
) -> Result<RankedList> {
    let mut lists = dense_search_batch(index, &[text.to_string()], provider, adapter, k)?;
    Ok(lists.pop().expect("one list per text"))
}

/// Embeds all texts in one provider call and searches them in parallel.
pub fn dense_search_batch(
    index: &DenseIndex,
    texts: &[String],
    provider: &dyn EmbeddingProvider,
    adapter: Option<&AdapterModel>,
    k: usize,
) -> Result<Vec<RankedList>> {
    index.check_compatible(provider, adapter)?;
    if texts.is_empty() {
        return Ok(Vec::new());
    }
    let raw = provider.embed_batch(texts)?;
    raw.par_iter()
        .map(|v| {
            let q = project(v, adapter)?;
            Ok(RankedList::new("", "dense", index.search_projected(&q, k)?))
        })
        .collect()
}
