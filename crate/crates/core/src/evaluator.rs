//! Ranking metrics with binary relevance, and per-split reports.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize, Serializer};

use crate::corpus::{QueryCollection, Split};
use crate::error::{Error, Result};
use crate::ranked::RankedList;

fn gold_set<G: AsRef<str>>(gold: &[G]) -> HashSet<&str> {
    gold.iter().map(AsRef::as_ref).collect()
}

fn require_gold<G: AsRef<str>>(gold: &[G]) -> Result<()> {
    if gold.is_empty() {
        return Err(Error::Data("metric needs at least one gold tool".into()));
    }
    Ok(())
}

fn require_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Data("cutoff k must be at least 1".into()));
    }
    Ok(())
}

/// Ranks (1-based) within the first `k` positions that hold a gold tool.
fn hit_ranks<S: AsRef<str>, G: AsRef<str>>(ranked: &[S], gold: &[G], k: usize) -> Vec<usize> {
    let gold = gold_set(gold);
    let mut seen: HashSet<&str> = HashSet::new();
    let mut ranks = Vec::new();
    for (i, id) in ranked.iter().take(k).enumerate() {
        let id = id.as_ref();
        if gold.contains(id) && seen.insert(id) {
            ranks.push(i + 1);
        }
    }
    ranks
}

/// Hits in the top `k` divided by `k`, even for shorter lists.
pub fn precision_at_k<S: AsRef<str>, G: AsRef<str>>(ranked: &[S], gold: &[G], k: usize) -> Result<f64> {
    require_k(k)?;
    Ok(hit_ranks(ranked, gold, k).len() as f64 / k as f64)
}

pub fn recall_at_k<S: AsRef<str>, G: AsRef<str>>(ranked: &[S], gold: &[G], k: usize) -> Result<f64> {
    require_k(k)?;
    require_gold(gold)?;
    Ok(hit_ranks(ranked, gold, k).len() as f64 / gold_set(gold).len() as f64)
}

/// Reciprocal rank of the first gold anywhere in the list; 0 on a miss.
pub fn mrr<S: AsRef<str>, G: AsRef<str>>(ranked: &[S], gold: &[G]) -> f64 {
    hit_ranks(ranked, gold, usize::MAX)
        .first()
        .map_or(0.0, |&r| 1.0 / r as f64)
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

pub fn ndcg_at_k<S: AsRef<str>, G: AsRef<str>>(ranked: &[S], gold: &[G], k: usize) -> Result<f64> {
    require_k(k)?;
    require_gold(gold)?;
    let dcg: f64 = hit_ranks(ranked, gold, k).into_iter().map(discount).sum();
    let ideal: f64 = (1..=gold_set(gold).len().min(k)).map(discount).sum();
    Ok(dcg / ideal)
}

fn round2<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64((v * 100.0).round() / 100.0)
}

/// Metric means in percent. Serialized rounded to two decimals.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricSet {
    #[serde(serialize_with = "round2")]
    pub ndcg: f64,
    #[serde(serialize_with = "round2")]
    pub precision: f64,
    #[serde(serialize_with = "round2")]
    pub recall: f64,
    #[serde(serialize_with = "round2")]
    pub mrr: f64,
}

impl MetricSet {
    fn mean<'a>(sets: impl IntoIterator<Item = &'a MetricSet>) -> MetricSet {
        let mut acc = MetricSet::default();
        let mut n = 0usize;
        for s in sets {
            acc.ndcg += s.ndcg;
            acc.precision += s.precision;
            acc.recall += s.recall;
            acc.mrr += s.mrr;
            n += 1;
        }
        if n > 0 {
            let n = n as f64;
            acc.ndcg /= n;
            acc.precision /= n;
            acc.recall /= n;
            acc.mrr /= n;
        }
        acc
    }

    pub fn values(&self) -> [f64; 4] {
        [self.ndcg, self.precision, self.recall, self.mrr]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryMetrics {
    pub query_id: String,
    pub split: Split,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub query_count: usize,
    pub metrics: MetricSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub k: usize,
    pub query_count: usize,
    pub splits: BTreeMap<Split, SplitResult>,
    /// Unweighted mean over splits; the headline average.
    pub avg_macro: MetricSet,
    /// Mean over all queries.
    pub avg_micro: MetricSet,
    pub metadata: BTreeMap<String, serde_json::Value>,
}

pub fn query_metrics<S: AsRef<str>, G: AsRef<str>>(ranked: &[S], gold: &[G], k: usize) -> Result<MetricSet> {
    let top: Vec<&str> = ranked.iter().take(k).map(AsRef::as_ref).collect();
    Ok(MetricSet {
        ndcg: 100.0 * ndcg_at_k(&top, gold, k)?,
        precision: 100.0 * precision_at_k(&top, gold, k)?,
        recall: 100.0 * recall_at_k(&top, gold, k)?,
        mrr: 100.0 * mrr(&top, gold),
    })
}

/// Scores every list of a run against its query's gold tools at cutoff `k`.
pub fn score_run(run: &[RankedList], queries: &QueryCollection, k: usize) -> Result<Vec<QueryMetrics>> {
    if run.is_empty() {
        return Err(Error::Data("empty run: nothing to evaluate".into()));
    }
    let mut seen = HashSet::new();
    let mut out: Vec<QueryMetrics> = run
        .iter()
        .map(|list| {
            let query = queries
                .get(&list.query_id)
                .ok_or_else(|| Error::Data(format!("run references unknown query {}", list.query_id)))?;
            if !seen.insert(&list.query_id) {
                return Err(Error::Data(format!("run lists query {} twice", list.query_id)));
            }
            let ids: Vec<&str> = list.tool_ids().collect();
            Ok(QueryMetrics {
                query_id: query.id.clone(),
                split: query.split,
                metrics: query_metrics(&ids, &query.gold_tool_ids, k)?,
            })
        })
        .collect::<Result<_>>()?;
    out.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    Ok(out)
}

pub fn aggregate(per_query: &[QueryMetrics], k: usize, metadata: BTreeMap<String, serde_json::Value>) -> EvalReport {
    let mut by_split: BTreeMap<Split, Vec<&MetricSet>> = BTreeMap::new();
    for q in per_query {
        by_split.entry(q.split).or_default().push(&q.metrics);
    }
    let splits: BTreeMap<Split, SplitResult> = by_split
        .into_iter()
        .map(|(split, sets)| {
            (
                split,
                SplitResult {
                    query_count: sets.len(),
                    metrics: MetricSet::mean(sets),
                },
            )
        })
        .collect();
    EvalReport {
        k,
        query_count: per_query.len(),
        avg_macro: MetricSet::mean(splits.values().map(|s| &s.metrics)),
        avg_micro: MetricSet::mean(per_query.iter().map(|q| &q.metrics)),
        splits,
        metadata,
    }
}

pub fn evaluate_run(
    run: &[RankedList],
    queries: &QueryCollection,
    k: usize,
    metadata: BTreeMap<String, serde_json::Value>,
) -> Result<EvalReport> {
    Ok(aggregate(&score_run(run, queries, k)?, k, metadata))
}

fn title(split: Split) -> &'static str {
    match split {
        Split::Web => "Web",
        Split::Code => "Code",
        Split::Customized => "Customized",
        Split::Other => "Other",
    }
}

impl EvalReport {
    /// Plain-text table with one column group per split plus the average.
    pub fn to_table(&self, label: &str) -> String {
        let mut columns: Vec<(String, Option<&MetricSet>)> = [Split::Web, Split::Code, Split::Customized]
            .into_iter()
            .map(|s| (title(s).to_string(), self.splits.get(&s).map(|r| &r.metrics)))
            .collect();
        if let Some(other) = self.splits.get(&Split::Other) {
            columns.push((title(Split::Other).to_string(), Some(&other.metrics)));
        }
        columns.push(("Avg.".to_string(), Some(&self.avg_macro)));

        let cell = 7;
        let group = cell * 4;
        let label_w = label.len().max(8);
        let mut out = String::new();
        let _ = write!(out, "{:label_w$}", "");
        for (name, _) in &columns {
            let _ = write!(out, " | {name:^group$}");
        }
        out.push('\n');
        let _ = write!(out, "{:label_w$}", "");
        let k = self.k;
        for _ in &columns {
            let heads = [format!("N@{k}"), format!("P@{k}"), format!("R@{k}"), "MRR".into()];
            let _ = write!(out, " | ");
            for h in heads {
                let _ = write!(out, "{h:>cell$}");
            }
        }
        out.push('\n');
        let _ = write!(out, "{label:label_w$}");
        for (_, metrics) in &columns {
            let _ = write!(out, " | ");
            match metrics {
                Some(m) => {
                    for v in m.values() {
                        let _ = write!(out, "{v:>cell$.2}");
                    }
                }
                None => {
                    for _ in 0..4 {
                        let _ = write!(out, "{:>cell$}", "-");
                    }
                }
            }
        }
        out.push('\n');
        out
    }
}
