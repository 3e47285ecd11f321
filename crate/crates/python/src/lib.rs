//! Python bindings: alignment, fusion, metrics, loss, parsing and the
//! full pipeline.

use std::path::PathBuf;

use hypotool::aligner::{self, SimilarityMatrix};
use hypotool::config::PipelineConfig;
use hypotool::pipeline::Pipeline;
use hypotool::ranked::{RankedItem, RankedList};
use hypotool::{evaluator, fusion, hypothesizer, sparse, trainer};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;

create_exception!(hypotool_py, HypotoolError, PyException);

fn to_py(e: hypotool::Error) -> PyErr {
    HypotoolError::new_err(e.to_string())
}

fn matrix(values: Vec<Vec<f64>>) -> PyResult<SimilarityMatrix> {
    SimilarityMatrix::from_values(values).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Maximum-similarity one-to-one matching as sorted `(row, col)` pairs.
#[pyfunction]
fn hungarian_match(similarity: Vec<Vec<f64>>) -> PyResult<Vec<(usize, usize)>> {
    aligner::hungarian_match(&matrix(similarity)?).map_err(to_py)
}

#[pyfunction]
fn greedy_match(similarity: Vec<Vec<f64>>) -> PyResult<Vec<(usize, usize)>> {
    aligner::greedy_match(&matrix(similarity)?).map_err(to_py)
}

/// Reciprocal rank fusion over lists of tool ids, best first.
#[pyfunction]
#[pyo3(signature = (lists, k_const = fusion::DEFAULT_K_CONST, top_k = 10))]
fn rrf(lists: Vec<Vec<String>>, k_const: f64, top_k: usize) -> PyResult<Vec<(String, f64)>> {
    let ranked: Vec<RankedList> = lists
        .into_iter()
        .enumerate()
        .map(|(i, ids)| {
            let n = ids.len() as f64;
            let items = ids
                .into_iter()
                .enumerate()
                .map(|(r, id)| RankedItem::new(id, n - r as f64))
                .collect();
            RankedList::new("", format!("list:{i}"), items)
        })
        .collect();
    let fused = fusion::rrf(&ranked, k_const, top_k).map_err(to_py)?;
    Ok(fused.items.into_iter().map(|i| (i.tool_id, i.score)).collect())
}

#[pyfunction]
#[pyo3(signature = (ranked, gold, k = 10))]
fn ndcg_at_k(ranked: Vec<String>, gold: Vec<String>, k: usize) -> PyResult<f64> {
    evaluator::ndcg_at_k(&ranked, &gold, k).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (ranked, gold, k = 10))]
fn precision_at_k(ranked: Vec<String>, gold: Vec<String>, k: usize) -> PyResult<f64> {
    evaluator::precision_at_k(&ranked, &gold, k).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (ranked, gold, k = 10))]
fn recall_at_k(ranked: Vec<String>, gold: Vec<String>, k: usize) -> PyResult<f64> {
    evaluator::recall_at_k(&ranked, &gold, k).map_err(to_py)
}

#[pyfunction]
fn mrr(ranked: Vec<String>, gold: Vec<String>) -> f64 {
    evaluator::mrr(&ranked, &gold)
}

/// InfoNCE loss from the positive and negative similarities.
#[pyfunction]
#[pyo3(signature = (positive, negatives, temperature = 1.0))]
fn info_nce_loss(positive: f64, negatives: Vec<f64>, temperature: f64) -> PyResult<f64> {
    if !(temperature > 0.0) {
        return Err(PyValueError::new_err("temperature must be positive"));
    }
    Ok(trainer::loss_from_similarities(positive, &negatives, temperature))
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    sparse::tokenize(text)
}

/// Hypothetical tools as `(thought, name, description)`; raises ValueError
/// when the field counts disagree.
#[pyfunction]
fn parse_generation(raw: &str) -> PyResult<Vec<(String, String, String)>> {
    match hypothesizer::parse_generation(raw) {
        Ok(tools) => Ok(tools.into_iter().map(|t| (t.thought, t.name, t.description)).collect()),
        Err(f) => Err(PyValueError::new_err(format!(
            "unbalanced generation: {} thoughts, {} names, {} descriptions",
            f.thoughts, f.names, f.descriptions
        ))),
    }
}

/// Runs every stage for a config file and returns the report as JSON text.
#[pyfunction]
#[pyo3(signature = (config, output_dir = None, seed = None, workers = None))]
fn run_all(
    py: Python<'_>,
    config: PathBuf,
    output_dir: Option<PathBuf>,
    seed: Option<u64>,
    workers: Option<usize>,
) -> PyResult<String> {
    py.detach(|| {
        let mut c = PipelineConfig::load(&config)?.with_overrides(seed, workers)?;
        if let Some(dir) = output_dir {
            c.paths.output_dir = dir;
        }
        let p = Pipeline::new(c)?;
        p.run_all()?;
        let path = p.layout().report();
        std::fs::read_to_string(&path).map_err(|e| hypotool::Error::Data(format!("{}: {e}", path.display())))
    })
    .map_err(to_py)
}

#[pymodule]
fn hypotool_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HypotoolError", m.py().get_type::<HypotoolError>())?;
    m.add_function(wrap_pyfunction!(hungarian_match, m)?)?;
    m.add_function(wrap_pyfunction!(greedy_match, m)?)?;
    m.add_function(wrap_pyfunction!(rrf, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(precision_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(recall_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(mrr, m)?)?;
    m.add_function(wrap_pyfunction!(info_nce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(parse_generation, m)?)?;
    m.add_function(wrap_pyfunction!(run_all, m)?)?;
    Ok(())
}
