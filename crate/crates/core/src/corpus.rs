//! Tool corpus and query sets: loading, filtration and training-set sampling.
//!
//! Records are JSONL. Tools carry `{id, name, description, split}`; queries carry
//! `{id, text, gold, negative, split}`. Loading validates syntax and id uniqueness
//! only; content defects are handled by [`filter_dataset`], which never fails and
//! reports what it removed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Web,
    Code,
    #[serde(alias = "customised")]
    Customized,
    Other,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Web, Split::Code, Split::Customized, Split::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Web => "web",
            Split::Code => "code",
            Split::Customized => "customized",
            Split::Other => "other",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "web" => Ok(Split::Web),
            "code" => Ok(Split::Code),
            "customized" | "customised" => Ok(Split::Customized),
            "other" => Ok(Split::Other),
            _ => Err(Error::Data(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tool {
    pub id: String,
    pub name: String,
    pub description: String,
    pub split: Split,
}

impl Tool {
    /// Text used when embedding the tool for dense retrieval and alignment.
    pub fn embedding_text(&self) -> String {
        format!("{}: {}", self.name, self.description)
    }

    /// Text indexed by BM25.
    pub fn lexical_text(&self) -> String {
        format!("{}. {}", self.name, self.description)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub text: String,
    #[serde(rename = "gold")]
    pub gold_tool_ids: Vec<String>,
    #[serde(rename = "negative", default)]
    pub negative_tool_ids: Vec<String>,
    pub split: Split,
}

/// Immutable, id-indexed collection. Iteration follows insertion order.
#[derive(Debug, Clone, PartialEq)]
pub struct Collection<T> {
    items: Vec<T>,
    by_id: HashMap<String, usize>,
}

impl<T> Default for Collection<T> {
    fn default() -> Self {
        Self {
            items: Vec::new(),
            by_id: HashMap::new(),
        }
    }
}

pub type ToolCollection = Collection<Tool>;
pub type QueryCollection = Collection<Query>;

pub trait HasId {
    fn id(&self) -> &str;
}

impl HasId for Tool {
    fn id(&self) -> &str {
        &self.id
    }
}

impl HasId for Query {
    fn id(&self) -> &str {
        &self.id
    }
}

impl<T: HasId> Collection<T> {
    pub fn new(items: Vec<T>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            if by_id.insert(item.id().to_string(), idx).is_some() {
                return Err(Error::Data(format!("duplicate id {:?}", item.id())));
            }
        }
        Ok(Self { items, by_id })
    }

    fn from_records(path: &Path, records: Vec<(usize, T)>) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(records.len());
        let mut items = Vec::with_capacity(records.len());
        for (line, item) in records {
            if by_id.contains_key(item.id()) {
                return Err(Error::DuplicateId {
                    path: path.to_path_buf(),
                    line,
                    id: item.id().to_string(),
                });
            }
            by_id.insert(item.id().to_string(), items.len());
            items.push(item);
        }
        Ok(Self { items, by_id })
    }

    pub fn get(&self, id: &str) -> Option<&T> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.items.iter()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn into_vec(self) -> Vec<T> {
        self.items
    }

    fn sorted_by_id(mut items: Vec<T>) -> Self {
        items.sort_by(|a, b| a.id().cmp(b.id()));
        Self::new(items).expect("ids already unique")
    }
}

impl<'a, T> IntoIterator for &'a Collection<T> {
    type Item = &'a T;
    type IntoIter = std::slice::Iter<'a, T>;

    fn into_iter(self) -> Self::IntoIter {
        self.items.iter()
    }
}

pub fn load_tools(path: &Path) -> Result<ToolCollection> {
    Collection::from_records(path, jsonl::read_records(path)?)
}

pub fn load_queries(path: &Path) -> Result<QueryCollection> {
    Collection::from_records(path, jsonl::read_records(path)?)
}

/// Loads `tools.jsonl` and `queries.jsonl` from a dataset directory.
pub fn load_corpus(dir: &Path) -> Result<(ToolCollection, QueryCollection)> {
    let tools = load_tools(&dir.join("tools.jsonl"))?;
    let queries = load_queries(&dir.join("queries.jsonl"))?;
    Ok((tools, queries))
}

pub fn save_tools(path: &Path, tools: &ToolCollection) -> Result<()> {
    jsonl::write(path, tools.iter())
}

pub fn save_queries(path: &Path, queries: &QueryCollection) -> Result<()> {
    jsonl::write(path, queries.iter())
}

pub mod reason {
    pub const EMPTY_DESCRIPTION: &str = "empty_description";
    pub const EMPTY_NAME: &str = "empty_name";
    pub const EMPTY_TEXT: &str = "empty_text";
    pub const EMPTY_GOLD: &str = "empty_gold";
    pub const DANGLING_REFERENCE: &str = "dangling_reference";
    pub const NO_NEGATIVES: &str = "no_negatives";
    pub const OVERLAP_NO_NEGATIVES: &str = "overlap_no_negatives";
    pub const DUPLICATE_QUERY: &str = "duplicate_query";
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiltrationReport {
    pub tools_removed: usize,
    pub queries_removed: usize,
    /// Surviving queries whose negative set lost ids that were also gold.
    pub negatives_pruned: usize,
    pub reasons: BTreeMap<String, usize>,
}

impl FiltrationReport {
    fn bump(&mut self, reason: &str) {
        *self.reasons.entry(reason.to_string()).or_default() += 1;
    }

    pub fn is_clean(&self) -> bool {
        self.tools_removed == 0 && self.queries_removed == 0 && self.negatives_pruned == 0
    }
}

/// Extra per-query screening rule (e.g. a content lexicon). Returns a reason
/// code when the query should be dropped.
pub type QueryScreen<'a> = &'a dyn Fn(&Query) -> Option<&'static str>;

pub fn filter_dataset(
    tools: &ToolCollection,
    queries: &QueryCollection,
) -> (ToolCollection, QueryCollection, FiltrationReport) {
    filter_dataset_with(tools, queries, None)
}

/// Removes defective tools and queries. Outputs are sorted by id.
///
/// Queries are checked against every per-query rule and count once per rule
/// they trip; duplicate detection (trimmed exact text, first occurrence in
/// input order wins) runs over the survivors so that a second pass is a no-op.
pub fn filter_dataset_with(
    tools: &ToolCollection,
    queries: &QueryCollection,
    screen: Option<QueryScreen<'_>>,
) -> (ToolCollection, QueryCollection, FiltrationReport) {
    let mut report = FiltrationReport::default();

    let mut kept_tools = Vec::with_capacity(tools.len());
    for tool in tools {
        let mut bad = false;
        if tool.description.trim().is_empty() {
            report.bump(reason::EMPTY_DESCRIPTION);
            bad = true;
        }
        if tool.name.trim().is_empty() {
            report.bump(reason::EMPTY_NAME);
            bad = true;
        }
        if bad {
            report.tools_removed += 1;
        } else {
            kept_tools.push(tool.clone());
        }
    }
    let valid: HashSet<&str> = kept_tools.iter().map(|t| t.id.as_str()).collect();

    let mut survivors = Vec::with_capacity(queries.len());
    for query in queries {
        let mut q = query.clone();
        q.gold_tool_ids = dedup(&q.gold_tool_ids);
        q.negative_tool_ids = dedup(&q.negative_tool_ids);

        let mut tripped: Vec<&'static str> = Vec::new();
        if q.text.trim().is_empty() {
            tripped.push(reason::EMPTY_TEXT);
        }
        if q.gold_tool_ids.is_empty() {
            tripped.push(reason::EMPTY_GOLD);
        }

        let gold: HashSet<&str> = q.gold_tool_ids.iter().map(String::as_str).collect();
        let had_negatives = !q.negative_tool_ids.is_empty();
        let before = q.negative_tool_ids.len();
        let pruned: Vec<String> = q
            .negative_tool_ids
            .iter()
            .filter(|id| !gold.contains(id.as_str()))
            .cloned()
            .collect();
        let overlapped = pruned.len() != before;
        q.negative_tool_ids = pruned;

        if !had_negatives {
            tripped.push(reason::NO_NEGATIVES);
        } else if q.negative_tool_ids.is_empty() {
            tripped.push(reason::OVERLAP_NO_NEGATIVES);
        }

        let dangling = q
            .gold_tool_ids
            .iter()
            .chain(&q.negative_tool_ids)
            .any(|id| !valid.contains(id.as_str()));
        if dangling {
            tripped.push(reason::DANGLING_REFERENCE);
        }

        if let Some(code) = screen.and_then(|f| f(&q)) {
            tripped.push(code);
        }

        if tripped.is_empty() {
            if overlapped {
                report.negatives_pruned += 1;
            }
            survivors.push(q);
        } else {
            report.queries_removed += 1;
            for code in tripped {
                report.bump(code);
            }
        }
    }

    let mut seen_text = HashSet::new();
    let mut kept_queries = Vec::with_capacity(survivors.len());
    for q in survivors {
        if seen_text.insert(q.text.trim().to_string()) {
            kept_queries.push(q);
        } else {
            report.queries_removed += 1;
            report.bump(reason::DUPLICATE_QUERY);
        }
    }

    (
        Collection::sorted_by_id(kept_tools),
        Collection::sorted_by_id(kept_queries),
        report,
    )
}

fn dedup(ids: &[String]) -> Vec<String> {
    let mut seen = BTreeSet::new();
    ids.iter().filter(|id| seen.insert(id.as_str())).cloned().collect()
}

/// Uniform sample of `n` queries without replacement.
///
/// Candidates are ordered by id, then a partial Fisher-Yates shuffle driven by
/// ChaCha8 seeded with `seed` picks the first `n` slots. Output is sorted by id.
pub fn sample_training(queries: &QueryCollection, n: usize, seed: u64) -> Result<QueryCollection> {
    if n > queries.len() {
        return Err(Error::Data(format!(
            "cannot sample {n} queries from a set of {}",
            queries.len()
        )));
    }
    let mut pool: Vec<&Query> = queries.iter().collect();
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    let picked = pool[..n].iter().map(|q| (*q).clone()).collect();
    Ok(Collection::sorted_by_id(picked))
}
