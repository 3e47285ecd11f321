//! Merging the per-vector ranked lists of a query.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Query, ToolCollection};
use crate::error::{Error, Result};
use crate::hypothesizer::fill_template;
use crate::llm::{CompletionRequest, LlmProvider, Purpose};
use crate::ranked::{by_score_then_id, RankedItem, RankedList};

pub const DEFAULT_K_CONST: f64 = 60.0;
pub const FUSION_TEMPLATE: &str = include_str!("../prompts/llm_fusion.txt");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    #[default]
    Rrf,
    Llm,
}

impl std::str::FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rrf" => Ok(FusionMethod::Rrf),
            "llm" => Ok(FusionMethod::Llm),
            _ => Err(Error::Config(format!("unknown fusion method {s:?}"))),
        }
    }
}

fn check_lists(lists: &[RankedList]) -> Result<&str> {
    let first = lists
        .first()
        .ok_or_else(|| Error::Data("nothing to fuse: no ranked lists".into()))?;
    if let Some(other) = lists.iter().find(|l| l.query_id != first.query_id) {
        return Err(Error::Data(format!(
            "cannot fuse lists of different queries ({} and {})",
            first.query_id, other.query_id
        )));
    }
    Ok(&first.query_id)
}

/// Reciprocal rank fusion: `score(d) = Σ 1 / (k_const + rank_d)` over the
/// lists containing `d`, ranks from 1. Ties go to the smaller tool id.
pub fn rrf(lists: &[RankedList], k_const: f64, top_k: usize) -> Result<RankedList> {
    let query_id = check_lists(lists)?;
    let mut ranks: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for list in lists {
        for (i, item) in list.items.iter().enumerate() {
            ranks.entry(&item.tool_id).or_default().push(i + 1);
        }
    }
    let mut items: Vec<RankedItem> = ranks
        .into_iter()
        .map(|(id, mut r)| {
            // fixed summation order keeps scores independent of list order
            r.sort_unstable();
            RankedItem::new(id, r.iter().map(|&rank| 1.0 / (k_const + rank as f64)).sum())
        })
        .collect();
    items.sort_by(by_score_then_id);
    items.truncate(top_k);
    Ok(RankedList::new(query_id, "fused", items))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionWarning {
    pub query_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutcome {
    pub list: RankedList,
    pub warning: Option<FusionWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankEntry {
    pub name: String,
    pub score: Option<f64>,
}

/// Reads repeated `Tool:` / `Score:` blocks; a score belongs to the most
/// recent tool line.
pub fn parse_rerank(raw: &str) -> Vec<RerankEntry> {
    let mut out: Vec<RerankEntry> = Vec::new();
    for line in raw.lines() {
        let s = line.trim().trim_start_matches(['-', '*', '#', '>', ' ']);
        let s = s.trim_start_matches(|c: char| c.is_ascii_digit());
        let s = s.strip_prefix(['.', ')']).unwrap_or(s).trim_start();
        let Some(colon) = s.find(':') else { continue };
        let label = s[..colon].replace('*', "").trim().to_lowercase();
        let value = s[colon + 1..].trim_matches(|c: char| c.is_whitespace() || "*`[]".contains(c));
        match label.as_str() {
            "tool" | "tool name" if !value.is_empty() => out.push(RerankEntry {
                name: value.to_string(),
                score: None,
            }),
            "score" => {
                if let Some(last) = out.last_mut().filter(|e| e.score.is_none()) {
                    last.score = value
                        .split_whitespace()
                        .next()
                        .and_then(|v| v.parse::<f64>().ok())
                        .filter(|v| v.is_finite());
                }
            }
            _ => {}
        }
    }
    out
}

pub fn render_fusion_prompt(question: &str, candidates: &[(String, String)], top_k: usize) -> String {
    let tools: String = candidates
        .iter()
        .map(|(name, desc)| format!("- {name}: {desc}\n"))
        .collect();
    fill_template(
        FUSION_TEMPLATE,
        &[("k", &top_k.to_string()), ("question", question), ("tools", &tools)],
    )
}

/// LLM reranking of the union of `lists`.
///
/// Entries naming tools outside the candidate set, and repeats, are dropped.
/// The kept entries are truncated to `top_k`; remaining slots are filled in
/// RRF order with score 0. Scores are clamped to `[0, 1]` and to a running
/// minimum so the list stays non-increasing. If the provider fails, the RRF
/// result is returned with a warning.
pub fn llm_fuse(
    query: &Query,
    lists: &[RankedList],
    tools: &ToolCollection,
    provider: &dyn LlmProvider,
    top_k: usize,
    k_const: f64,
) -> Result<FusionOutcome> {
    let fallback = rrf(lists, k_const, usize::MAX)?;
    let candidates: Vec<(String, String)> = fallback
        .items
        .iter()
        .map(|item| {
            tools
                .get(&item.tool_id)
                .map(|t| (t.name.clone(), t.description.clone()))
                .ok_or_else(|| Error::Data(format!("ranked list holds unknown tool {}", item.tool_id)))
        })
        .collect::<Result<_>>()?;
    let mut by_name: HashMap<String, &str> = HashMap::new();
    for (item, (name, _)) in fallback.items.iter().zip(&candidates) {
        by_name.entry(name.to_lowercase()).or_insert(&item.tool_id);
        by_name.entry(item.tool_id.to_lowercase()).or_insert(&item.tool_id);
    }

    let prompt = render_fusion_prompt(&query.text, &candidates, top_k);
    let request = CompletionRequest {
        query_id: &query.id,
        purpose: Purpose::Fusion,
        prompt: &prompt,
        attempt: 0,
    };
    let raw = match provider.complete(&request) {
        Ok(raw) => raw,
        Err(e) => {
            let mut list = fallback;
            list.items.truncate(top_k);
            return Ok(FusionOutcome {
                list,
                warning: Some(FusionWarning {
                    query_id: query.id.clone(),
                    message: format!("llm fusion failed, used rrf: {e}"),
                }),
            });
        }
    };

    let mut seen: HashSet<&str> = HashSet::new();
    let mut items = Vec::with_capacity(top_k);
    let mut floor = 1.0f64;
    for entry in parse_rerank(&raw) {
        if items.len() == top_k {
            break;
        }
        let Some(&id) = by_name.get(&entry.name.to_lowercase()) else {
            continue;
        };
        if !seen.insert(id) {
            continue;
        }
        floor = entry.score.unwrap_or(floor).clamp(0.0, 1.0).min(floor);
        items.push(RankedItem::new(id, floor));
    }
    let parsed = items.len();
    for item in &fallback.items {
        if items.len() == top_k {
            break;
        }
        if seen.insert(&item.tool_id) {
            items.push(RankedItem::new(item.tool_id.clone(), 0.0));
        }
    }
    let warning = (parsed == 0).then(|| FusionWarning {
        query_id: query.id.clone(),
        message: "llm fusion returned no usable entries, used rrf order".into(),
    });
    Ok(FusionOutcome {
        list: RankedList::new(query.id.clone(), "llm_fused", items),
        warning,
    })
}
