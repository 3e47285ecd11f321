//! One-to-one alignment of hypothetical tools to gold tools.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{Query, Tool, ToolCollection};
use crate::embedding::{cosine_similarity, EmbeddingProvider};
use crate::error::{Error, Result};
use crate::hypothesizer::{GenerationMode, GenerationRecord, HypotheticalTool};

/// Filler for rectangular inputs; below any cosine.
const PAD: f64 = -2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignMethod {
    #[default]
    Hungarian,
    Greedy,
}

impl fmt::Display for AlignMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AlignMethod::Hungarian => "hungarian",
            AlignMethod::Greedy => "greedy",
        })
    }
}

impl FromStr for AlignMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hungarian" => Ok(AlignMethod::Hungarian),
            "greedy" => Ok(AlignMethod::Greedy),
            _ => Err(Error::Config(format!("unknown alignment method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Vec<Vec<f64>>,
    /// Hypothetical tool ordinals.
    pub row_labels: Vec<usize>,
    /// Gold tool ids.
    pub col_labels: Vec<String>,
}

impl SimilarityMatrix {
    /// Unlabelled matrix; rows are numbered and columns get their index as id.
    pub fn from_values(values: Vec<Vec<f64>>) -> Result<Self> {
        let cols = values.first().map_or(0, Vec::len);
        if values.iter().any(|r| r.len() != cols) {
            return Err(Error::Data("similarity matrix rows differ in length".into()));
        }
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Data("similarity matrix has non-finite entries".into()));
        }
        Ok(Self {
            row_labels: (0..values.len()).collect(),
            col_labels: (0..cols).map(|c| c.to_string()).collect(),
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn total(&self, assignment: &[(usize, usize)]) -> f64 {
        assignment.iter().map(|&(r, c)| self.values[r][c]).sum()
    }

    fn check_non_empty(&self) -> Result<()> {
        if self.rows() == 0 || self.cols() == 0 {
            return Err(Error::Data("similarity matrix is empty".into()));
        }
        Ok(())
    }

    fn padded(&self) -> Vec<Vec<f64>> {
        let n = self.rows().max(self.cols());
        (0..n)
            .map(|r| {
                (0..n)
                    .map(|c| self.values.get(r).and_then(|row| row.get(c)).copied().unwrap_or(PAD))
                    .collect()
            })
            .collect()
    }
}

/// Cosine between each HT (TND rendering) and each gold (`name: description`).
pub fn similarity_matrix(
    hts: &[HypotheticalTool],
    golds: &[&Tool],
    provider: &dyn EmbeddingProvider,
) -> Result<SimilarityMatrix> {
    if hts.is_empty() || golds.is_empty() {
        return Err(Error::Data("cannot align an empty tool list".into()));
    }
    let texts: Vec<String> = hts
        .iter()
        .map(HypotheticalTool::tnd_text)
        .chain(golds.iter().map(|g| g.embedding_text()))
        .collect();
    let vecs = provider.embed_batch(&texts)?;
    let (ht_vecs, gold_vecs) = vecs.split_at(hts.len());
    let values = ht_vecs
        .iter()
        .map(|h| gold_vecs.iter().map(|g| cosine_similarity(h, g)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    Ok(SimilarityMatrix {
        values,
        row_labels: (0..hts.len()).collect(),
        col_labels: golds.iter().map(|g| g.id.clone()).collect(),
    })
}

/// Minimum-cost assignment on a square cost matrix by shortest augmenting
/// paths with dual potentials. Returns the column of each row.
fn solve_min_cost(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        owner[0] = row;
        let mut col0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[col0] = true;
            let r0 = owner[col0];
            let mut delta = f64::INFINITY;
            let mut col1 = 0;
            for c in 1..=n {
                if used[c] {
                    continue;
                }
                let reduced = cost[r0 - 1][c - 1] - u[r0] - v[c];
                if reduced < minv[c] {
                    minv[c] = reduced;
                    way[c] = col0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for c in 0..=n {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
            if owner[col0] == 0 {
                break;
            }
        }
        loop {
            let prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
            if col0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for c in 1..=n {
        assignment[owner[c] - 1] = c - 1;
    }
    assignment
}

fn max_total(values: &[Vec<f64>], rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let cost: Vec<Vec<f64>> = rows
        .iter()
        .map(|&r| cols.iter().map(|&c| -values[r][c]).collect())
        .collect();
    let a = solve_min_cost(&cost);
    rows.iter().zip(a).map(|(&r, c)| values[r][cols[c]]).sum()
}

/// Maximum-similarity complete assignment.
///
/// Among optimal assignments the lexicographically smallest `(row, col)`
/// sequence wins: rows are fixed in order to the smallest column that still
/// admits an optimal completion. Rectangular input is padded and padded
/// pairs are dropped.
pub fn hungarian_match(sim: &SimilarityMatrix) -> Result<Vec<(usize, usize)>> {
    sim.check_non_empty()?;
    let values = sim.padded();
    let n = values.len();
    let all: Vec<usize> = (0..n).collect();
    let best = max_total(&values, &all, &all);
    let tol = 1e-12 * (1.0 + best.abs());

    let mut fixed = 0.0;
    let mut free_cols = all.clone();
    let mut assignment = Vec::with_capacity(n);
    for r in 0..n {
        let rest_rows: Vec<usize> = (r + 1..n).collect();
        let pick = free_cols
            .iter()
            .position(|&c| {
                let rest_cols: Vec<usize> = free_cols.iter().copied().filter(|&x| x != c).collect();
                fixed + values[r][c] + max_total(&values, &rest_rows, &rest_cols) >= best - tol
            })
            .expect("some column completes an optimal assignment");
        let c = free_cols.remove(pick);
        fixed += values[r][c];
        assignment.push((r, c));
    }
    Ok(assignment
        .into_iter()
        .filter(|&(r, c)| r < sim.rows() && c < sim.cols())
        .collect())
}

/// Repeatedly takes the largest remaining entry; ties go to the smallest
/// `(row, col)`. Returned sorted by row.
pub fn greedy_match(sim: &SimilarityMatrix) -> Result<Vec<(usize, usize)>> {
    sim.check_non_empty()?;
    let mut row_used = vec![false; sim.rows()];
    let mut col_used = vec![false; sim.cols()];
    let mut assignment = Vec::new();
    for _ in 0..sim.rows().min(sim.cols()) {
        let mut best: Option<(f64, usize, usize)> = None;
        for (r, row) in sim.values.iter().enumerate() {
            if row_used[r] {
                continue;
            }
            for (c, &v) in row.iter().enumerate() {
                if !col_used[c] && best.is_none_or(|(b, _, _)| v > b) {
                    best = Some((v, r, c));
                }
            }
        }
        let (_, r, c) = best.expect("a free cell remains");
        row_used[r] = true;
        col_used[c] = true;
        assignment.push((r, c));
    }
    assignment.sort_unstable();
    Ok(assignment)
}

pub fn assign(sim: &SimilarityMatrix, method: AlignMethod) -> Result<Vec<(usize, usize)>> {
    match method {
        AlignMethod::Hungarian => hungarian_match(sim),
        AlignMethod::Greedy => greedy_match(sim),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignedPair {
    pub query_id: String,
    pub ht: HypotheticalTool,
    pub gold_tool_id: String,
    pub similarity: f64,
    pub method: AlignMethod,
}

/// Pairs each hypothetical tool of an ok train record with one gold tool.
pub fn align(
    query: &Query,
    record: &GenerationRecord,
    tools: &ToolCollection,
    provider: &dyn EmbeddingProvider,
    method: AlignMethod,
) -> Result<Vec<AlignedPair>> {
    if !record.is_ok() || !matches!(record.mode, GenerationMode::Train { .. }) {
        return Err(Error::Data(format!(
            "query {} has no usable train generation ({:?})",
            query.id, record.status
        )));
    }
    if record.tools.len() != query.gold_tool_ids.len() {
        return Err(Error::Data(format!(
            "query {}: {} hypothetical tools for {} gold tools",
            query.id,
            record.tools.len(),
            query.gold_tool_ids.len()
        )));
    }
    let golds = query
        .gold_tool_ids
        .iter()
        .map(|id| {
            tools
                .get(id)
                .ok_or_else(|| Error::Data(format!("query {}: unknown gold tool {id}", query.id)))
        })
        .collect::<Result<Vec<_>>>()?;
    let sim = similarity_matrix(&record.tools, &golds, provider)?;
    Ok(assign(&sim, method)?
        .into_iter()
        .map(|(r, c)| AlignedPair {
            query_id: query.id.clone(),
            ht: record.tools[r].clone(),
            gold_tool_id: sim.col_labels[c].clone(),
            similarity: sim.values[r][c],
            method,
        })
        .collect())
}
