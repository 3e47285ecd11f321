use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub tool_id: String,
    pub score: f64,
}

impl RankedItem {
    pub fn new(tool_id: impl Into<String>, score: f64) -> Self {
        Self {
            tool_id: tool_id.into(),
            score,
        }
    }
}

/// Ordered `(tool_id, score)` list for one search vector or one fused result.
///
/// Tool ids are unique and scores non-increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub source_tag: String,
    pub items: Vec<RankedItem>,
}

impl RankedList {
    pub fn new(query_id: impl Into<String>, source_tag: impl Into<String>, items: Vec<RankedItem>) -> Self {
        Self {
            query_id: query_id.into(),
            source_tag: source_tag.into(),
            items,
        }
    }

    pub fn labeled(mut self, query_id: impl Into<String>, source_tag: impl Into<String>) -> Self {
        self.query_id = query_id.into();
        self.source_tag = source_tag.into();
        self
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn tool_ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|i| i.tool_id.as_str())
    }
}

/// Descending score, then ascending tool id.
pub(crate) fn by_score_then_id(a: &RankedItem, b: &RankedItem) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.tool_id.cmp(&b.tool_id))
}

/// Sorts by [`by_score_then_id`] and keeps the first `k`.
pub(crate) fn top_k(mut items: Vec<RankedItem>, k: usize) -> Vec<RankedItem> {
    items.sort_by(by_score_then_id);
    items.truncate(k);
    items
}
