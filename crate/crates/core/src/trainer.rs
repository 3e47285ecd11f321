//! Contrastive training of the linear adapter.
//!
//! Each triplet pulls an anchor (a rendered hypothetical tool) toward its
//! aligned gold tool and away from `k` negatives under the InfoNCE objective
//! with cosine similarity. The adapter is applied to every vector, so the
//! gradient flows through both the query and the tool side.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adapter::AdapterModel;
use crate::aligner::AlignedPair;
use crate::corpus::{QueryCollection, ToolCollection};
use crate::digest::stable_hash64;
use crate::embedding::{EmbeddingProvider, EmbeddingVector};
use crate::error::{Error, Result};
use crate::hypothesizer::SearchStyle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub k_negatives: usize,
    pub seed: u64,
    pub temperature: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            epochs: 1,
            batch_size: 1,
            k_negatives: 7,
            seed: 0,
            temperature: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature must be positive, got {}", self.temperature)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.k_negatives == 0 {
            return Err(Error::Config("k_negatives must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    Annotated,
    Corpus,
    /// Annotated negatives topped up from the corpus.
    Mixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTriplet {
    pub query_id: String,
    pub anchor_text: String,
    pub gold_tool_id: String,
    pub negative_tool_ids: Vec<String>,
    pub negative_source: NegativeSource,
}

fn sample_without_replacement<T: Clone>(pool: &[T], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut pool = pool.to_vec();
    let k = k.min(pool.len());
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Renders anchors and draws `k_negatives` per pair.
///
/// Negatives come from the query's annotated list first, topped up uniformly
/// from the rest of the corpus (golds excluded). Each pair gets its own RNG
/// stream derived from `seed`, the query id and the gold id, so results do not
/// depend on pair order.
pub fn build_triplets(
    pairs: &[AlignedPair],
    queries: &QueryCollection,
    tools: &ToolCollection,
    style: SearchStyle,
    k_negatives: usize,
    seed: u64,
) -> Result<Vec<TrainingTriplet>> {
    if style == SearchStyle::Q {
        return Err(Error::Config("training anchors need the TND or QTND style".into()));
    }
    if k_negatives == 0 {
        return Err(Error::Config("k_negatives must be at least 1".into()));
    }
    pairs
        .iter()
        .map(|pair| {
            let query = queries
                .get(&pair.query_id)
                .ok_or_else(|| Error::Data(format!("aligned pair for unknown query {}", pair.query_id)))?;
            if !tools.contains(&pair.gold_tool_id) {
                return Err(Error::Data(format!("unknown gold tool {}", pair.gold_tool_id)));
            }
            let golds: BTreeSet<&str> = query
                .gold_tool_ids
                .iter()
                .map(String::as_str)
                .chain([pair.gold_tool_id.as_str()])
                .collect();
            let annotated: Vec<String> = query
                .negative_tool_ids
                .iter()
                .filter(|id| tools.contains(id) && !golds.contains(id.as_str()))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .cloned()
                .collect();

            let stream = stable_hash64(format!("{}\u{0}{}", pair.query_id, pair.gold_tool_id).as_bytes());
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stream);
            let mut negatives = sample_without_replacement(&annotated, k_negatives, &mut rng);
            let mut source = NegativeSource::Annotated;
            if negatives.len() < k_negatives {
                let taken: BTreeSet<String> = negatives.iter().cloned().collect();
                let pool: Vec<String> = tools
                    .iter()
                    .map(|t| t.id.clone())
                    .filter(|id| !golds.contains(id.as_str()) && !taken.contains(id))
                    .collect();
                let need = k_negatives - negatives.len();
                if pool.len() < need {
                    return Err(Error::Data(format!(
                        "corpus too small for {k_negatives} negatives on query {}",
                        query.id
                    )));
                }
                source = if negatives.is_empty() {
                    NegativeSource::Corpus
                } else {
                    NegativeSource::Mixed
                };
                negatives.extend(sample_without_replacement(&pool, need, &mut rng));
            }
            let anchor_text = match style {
                SearchStyle::Qtnd => pair.ht.qtnd_text(&query.text),
                _ => pair.ht.tnd_text(),
            };
            Ok(TrainingTriplet {
                query_id: pair.query_id.clone(),
                anchor_text,
                gold_tool_id: pair.gold_tool_id.clone(),
                negative_tool_ids: negatives,
                negative_source: source,
            })
        })
        .collect()
}

/// `-ln(e^{s0/τ} / Σ_j e^{s_j/τ})` where `s0` is the positive similarity.
pub fn loss_from_similarities(positive: f64, negatives: &[f64], temperature: f64) -> f64 {
    let scaled: Vec<f64> = std::iter::once(positive)
        .chain(negatives.iter().copied())
        .map(|s| s / temperature)
        .collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scaled.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
    let loss = lse - scaled[0];
    // rounding can dip below zero; NaN must survive
    if loss < 0.0 { 0.0 } else { loss }
}

fn cosine_parts(u: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(u.dot(v) / (nu * nv))
}

pub fn info_nce_loss(
    anchor: &EmbeddingVector,
    gold: &EmbeddingVector,
    negatives: &[EmbeddingVector],
    temperature: f64,
) -> Result<f64> {
    let a = DVector::from_column_slice(anchor.values());
    let sim = |t: &EmbeddingVector| -> Result<f64> {
        if t.dim() != anchor.dim() {
            return Err(Error::DimensionMismatch {
                expected: anchor.dim(),
                found: t.dim(),
            });
        }
        cosine_parts(&a, &DVector::from_column_slice(t.values()))
    };
    let pos = sim(gold)?;
    let negs = negatives.iter().map(sim).collect::<Result<Vec<_>>>()?;
    Ok(loss_from_similarities(pos, &negs, temperature))
}

/// Loss of one triplet after mapping every vector through `weight`.
pub fn adapted_loss(
    weight: &DMatrix<f64>,
    anchor: &DVector<f64>,
    gold: &DVector<f64>,
    negatives: &[DVector<f64>],
    temperature: f64,
) -> Result<f64> {
    Ok(loss_and_gradient(weight, anchor, gold, negatives, temperature)?.0)
}

/// Loss and its analytic gradient with respect to `weight`.
pub fn loss_and_gradient(
    weight: &DMatrix<f64>,
    anchor: &DVector<f64>,
    gold: &DVector<f64>,
    negatives: &[DVector<f64>],
    temperature: f64,
) -> Result<(f64, DMatrix<f64>)> {
    let dim = weight.nrows();
    for v in std::iter::once(anchor).chain([gold]).chain(negatives) {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
    }
    let u = weight * anchor;
    let nu = u.norm();
    if nu == 0.0 {
        return Err(Error::ZeroVector);
    }
    let u_hat = &u / nu;

    let targets: Vec<&DVector<f64>> = std::iter::once(gold).chain(negatives).collect();
    let mut mapped = Vec::with_capacity(targets.len());
    for t in &targets {
        let v = weight * *t;
        let nv = v.norm();
        if nv == 0.0 {
            return Err(Error::ZeroVector);
        }
        let v_hat = v / nv;
        let cos = u_hat.dot(&v_hat);
        mapped.push((v_hat, nv, cos));
    }
    let sims: Vec<f64> = mapped.iter().map(|m| m.2).collect();
    let loss = loss_from_similarities(sims[0], &sims[1..], temperature);

    let max = sims.iter().map(|s| s / temperature).fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = sims.iter().map(|s| (s / temperature - max).exp()).collect();
    let z: f64 = exps.iter().sum();

    let mut du = DVector::zeros(dim);
    let mut grad = DMatrix::zeros(dim, dim);
    for (j, ((v_hat, nv, cos), t)) in mapped.iter().zip(&targets).enumerate() {
        let coeff = (exps[j] / z - if j == 0 { 1.0 } else { 0.0 }) / temperature;
        if coeff == 0.0 {
            continue;
        }
        du.axpy(coeff / nu, &(v_hat - &u_hat * *cos), 1.0);
        let dv = (&u_hat - v_hat * *cos) * (coeff / nv);
        grad.ger(1.0, &dv, t, 1.0);
    }
    grad.ger(1.0, &du, anchor, 1.0);
    Ok((loss, grad))
}

pub fn loss_gradient(
    weight: &DMatrix<f64>,
    anchor: &DVector<f64>,
    gold: &DVector<f64>,
    negatives: &[DVector<f64>],
    temperature: f64,
) -> Result<DMatrix<f64>> {
    Ok(loss_and_gradient(weight, anchor, gold, negatives, temperature)?.1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub adapter: AdapterModel,
    /// Mean batch loss per optimizer step, measured before the update.
    pub losses: Vec<StepLoss>,
    /// Mean loss over all triplets at the identity start.
    pub initial_mean_loss: f64,
    /// Mean loss over all triplets with the trained weights.
    pub final_mean_loss: f64,
}

struct Embedded {
    anchor: DVector<f64>,
    gold: DVector<f64>,
    negatives: Vec<DVector<f64>>,
}

fn embed_triplets(
    triplets: &[TrainingTriplet],
    tools: &ToolCollection,
    provider: &dyn EmbeddingProvider,
) -> Result<Vec<Embedded>> {
    let mut texts: Vec<String> = Vec::new();
    let mut slot: HashMap<String, usize> = HashMap::new();
    let mut intern = |text: String| -> usize {
        let next = slot.len();
        *slot.entry(text.clone()).or_insert_with(|| {
            texts.push(text);
            next
        })
    };
    let tool_text = |id: &str| -> Result<String> {
        tools
            .get(id)
            .map(|t| t.embedding_text())
            .ok_or_else(|| Error::Data(format!("triplet references unknown tool {id}")))
    };
    let mut layout = Vec::with_capacity(triplets.len());
    for t in triplets {
        let anchor = intern(t.anchor_text.clone());
        let gold = intern(tool_text(&t.gold_tool_id)?);
        let negs = t
            .negative_tool_ids
            .iter()
            .map(|id| Ok(intern(tool_text(id)?)))
            .collect::<Result<Vec<_>>>()?;
        layout.push((anchor, gold, negs));
    }
    let vecs: Vec<DVector<f64>> = provider
        .embed_batch(&texts)?
        .iter()
        .map(|v| DVector::from_column_slice(v.values()))
        .collect();
    Ok(layout
        .into_iter()
        .map(|(a, g, n)| Embedded {
            anchor: vecs[a].clone(),
            gold: vecs[g].clone(),
            negatives: n.into_iter().map(|i| vecs[i].clone()).collect(),
        })
        .collect())
}

fn mean_loss(weight: &DMatrix<f64>, data: &[Embedded], temperature: f64) -> Result<f64> {
    let mut total = 0.0;
    for e in data {
        total += adapted_loss(weight, &e.anchor, &e.gold, &e.negatives, temperature)?;
    }
    Ok(total / data.len() as f64)
}

/// Mini-batch SGD from the identity map; the triplet order is reshuffled
/// every epoch from `config.seed`.
pub fn train(
    triplets: &[TrainingTriplet],
    tools: &ToolCollection,
    provider: &dyn EmbeddingProvider,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if triplets.is_empty() {
        return Err(Error::Data("no training triplets".into()));
    }
    let data = embed_triplets(triplets, tools, provider)?;
    let dim = provider.dim();
    let mut weight = DMatrix::<f64>::identity(dim, dim);
    let initial_mean_loss = mean_loss(&weight, &data, config.temperature)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::new();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            let mut grad = DMatrix::zeros(dim, dim);
            let mut loss = 0.0;
            for &i in batch {
                let e = &data[i];
                let (l, g) = loss_and_gradient(&weight, &e.anchor, &e.gold, &e.negatives, config.temperature)?;
                loss += l;
                grad += g;
            }
            loss /= batch.len() as f64;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { step });
            }
            weight -= grad * (config.learning_rate / batch.len() as f64);
            losses.push(StepLoss { step, loss });
            step += 1;
        }
    }
    let final_mean_loss = mean_loss(&weight, &data, config.temperature)?;
    if !final_mean_loss.is_finite() {
        return Err(Error::NonFiniteLoss { step });
    }
    let echo = serde_json::json!({
        "train": config,
        "provider": provider.fingerprint(),
        "triplets": triplets.len(),
    });
    Ok(TrainOutcome {
        adapter: AdapterModel::from_weight(weight, echo)?,
        losses,
        initial_mean_loss,
        final_mean_loss,
    })
}

pub fn write_loss_log(path: &Path, losses: &[StepLoss]) -> Result<()> {
    let to_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for l in losses {
        w.serialize(l).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_loss_log(path: &Path) -> Result<Vec<StepLoss>> {
    let to_err = |e: csv::Error| Error::Data(format!("{}: {e}", path.display()));
    csv::Reader::from_path(path)
        .map_err(to_err)?
        .deserialize()
        .map(|r| r.map_err(to_err))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aligner::AlignMethod;
    use crate::corpus::{Collection, Query, Split, Tool};
    use crate::embedding::DeterministicProvider;
    use crate::hypothesizer::HypotheticalTool;
    use rand_distr::StandardNormal;

    fn ev(v: &[f64]) -> EmbeddingVector {
        EmbeddingVector(v.to_vec())
    }

    #[test]
    fn worked_losses() {
        let l = info_nce_loss(&ev(&[1.0, 0.0]), &ev(&[1.0, 0.0]), &[ev(&[-1.0, 0.0])], 1.0).unwrap();
        assert!((l - (1.0 + (-2.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.126928).abs() < 1e-6);

        let same = info_nce_loss(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0]), &[ev(&[0.0, 1.0])], 1.0).unwrap();
        assert!((same - 2f64.ln()).abs() < 1e-12);
        let k = 5;
        let negs = vec![ev(&[0.0, 3.0]); k];
        let l = info_nce_loss(&ev(&[1.0, 0.0]), &ev(&[0.0, 1.0]), &negs, 1.0).unwrap();
        assert!((l - ((k + 1) as f64).ln()).abs() < 1e-12);

        let sat = info_nce_loss(&ev(&[1.0, 0.0]), &ev(&[2.0, 0.0]), &[ev(&[-1.0, 0.0])], 0.1).unwrap();
        assert!(sat < 1e-8);
        assert!(matches!(
            info_nce_loss(&ev(&[0.0, 0.0]), &ev(&[1.0, 0.0]), &[], 1.0),
            Err(Error::ZeroVector)
        ));
    }

    #[test]
    fn loss_is_scale_invariant_and_monotone() {
        let a = ev(&[0.3, 0.4, 0.5]);
        let g = ev(&[0.1, 0.9, 0.2]);
        let n = [ev(&[0.7, -0.1, 0.2]), ev(&[-0.2, 0.3, 0.9])];
        let base = info_nce_loss(&a, &g, &n, 1.0).unwrap();
        let scale = |v: &EmbeddingVector, c: f64| ev(&v.values().iter().map(|x| x * c).collect::<Vec<_>>());
        let scaled = info_nce_loss(&scale(&a, 3.0), &scale(&g, 0.5), &[scale(&n[0], 7.0), scale(&n[1], 2.0)], 1.0).unwrap();
        assert!((base - scaled).abs() < 1e-12);
        let mut prev = f64::INFINITY;
        for s in [-0.5, 0.0, 0.3, 0.8, 1.0] {
            let l = loss_from_similarities(s, &[0.2, 0.1], 1.0);
            assert!(l < prev);
            prev = l;
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
        DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)))
    }

    fn finite_difference(
        w: &DMatrix<f64>,
        a: &DVector<f64>,
        g: &DVector<f64>,
        n: &[DVector<f64>],
        tau: f64,
    ) -> DMatrix<f64> {
        let h = 1e-5;
        DMatrix::from_fn(w.nrows(), w.ncols(), |r, c| {
            let mut plus = w.clone();
            plus[(r, c)] += h;
            let mut minus = w.clone();
            minus[(r, c)] -= h;
            (adapted_loss(&plus, a, g, n, tau).unwrap() - adapted_loss(&minus, a, g, n, tau).unwrap()) / (2.0 * h)
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 8;
        let mut passed = 0;
        for _ in 0..100 {
            let w = DMatrix::<f64>::identity(dim, dim) + DMatrix::from_fn(dim, dim, |_, _| 0.2 * rng.sample::<f64, _>(StandardNormal));
            let a = random_vec(&mut rng, dim);
            let g = random_vec(&mut rng, dim);
            let n: Vec<_> = (0..rng.random_range(1..5)).map(|_| random_vec(&mut rng, dim)).collect();
            let tau = [1.0, 0.5, 0.2][rng.random_range(0..3)];
            let analytic = loss_gradient(&w, &a, &g, &n, tau).unwrap();
            let numeric = finite_difference(&w, &a, &g, &n, tau);
            let rel = (&analytic - &numeric).norm() / analytic.norm().max(numeric.norm()).max(1e-12);
            if rel < 1e-4 {
                passed += 1;
            }
        }
        assert!(passed >= 95, "{passed}/100 gradient checks passed");
    }

    #[test]
    fn descent_step_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let dim = 8;
        for _ in 0..50 {
            let w = DMatrix::<f64>::identity(dim, dim);
            let a = random_vec(&mut rng, dim);
            let g = random_vec(&mut rng, dim);
            let n: Vec<_> = (0..3).map(|_| random_vec(&mut rng, dim)).collect();
            let (l0, grad) = loss_and_gradient(&w, &a, &g, &n, 1.0).unwrap();
            let stepped = &w - &grad * 1e-3;
            assert!(adapted_loss(&stepped, &a, &g, &n, 1.0).unwrap() < l0);
        }
    }

    #[test]
    fn saturated_gradient_is_smaller_than_conflicting() {
        let w = DMatrix::<f64>::identity(3, 3);
        let e = |x: &[f64]| DVector::from_column_slice(x);
        let sat = loss_gradient(&w, &e(&[1.0, 0.0, 0.0]), &e(&[1.0, 0.0, 0.0]), &[e(&[-1.0, 0.0, 0.0])], 0.1).unwrap();
        let conflict = loss_gradient(&w, &e(&[1.0, 0.0, 0.0]), &e(&[0.0, 1.0, 0.0]), &[e(&[0.9, 0.1, 0.0])], 0.1).unwrap();
        assert!(sat.norm() < 1e-6);
        assert!(sat.norm() < conflict.norm());
    }

    fn fixture() -> (ToolCollection, QueryCollection, Vec<AlignedPair>) {
        let tools: Vec<Tool> = (0..12)
            .map(|i| Tool {
                id: format!("t{i:02}"),
                name: format!("tool{i}"),
                description: format!("handles task {i} kind{}", i % 3),
                split: Split::Web,
            })
            .collect();
        let queries: Vec<Query> = (0..4)
            .map(|i| Query {
                id: format!("q{i}"),
                text: format!("please do task {i}"),
                gold_tool_ids: vec![format!("t{i:02}")],
                negative_tool_ids: if i == 0 {
                    vec![]
                } else {
                    vec!["t05".into(), "t06".into(), "t07".into(), format!("t{i:02}")]
                },
                split: Split::Web,
            })
            .collect();
        let pairs = (0..4)
            .map(|i| AlignedPair {
                query_id: format!("q{i}"),
                ht: HypotheticalTool {
                    thought: "need it".into(),
                    name: format!("tool{i}"),
                    description: format!("performs task {i}"),
                },
                gold_tool_id: format!("t{i:02}"),
                similarity: 0.5,
                method: AlignMethod::Hungarian,
            })
            .collect();
        (
            Collection::new(tools).unwrap(),
            Collection::new(queries).unwrap(),
            pairs,
        )
    }

    #[test]
    fn triplets_sample_annotated_first() {
        let (tools, queries, pairs) = fixture();
        let t = build_triplets(&pairs, &queries, &tools, SearchStyle::Tnd, 2, 1).unwrap();
        assert_eq!(t, build_triplets(&pairs, &queries, &tools, SearchStyle::Tnd, 2, 1).unwrap());
        assert_eq!(t[1].negative_source, NegativeSource::Annotated);
        assert_eq!(t[1].negative_tool_ids.len(), 2);
        assert!(t[1].negative_tool_ids.iter().all(|n| ["t05", "t06", "t07"].contains(&n.as_str())));
        assert!(t[1].anchor_text.starts_with("Thoughts:"));

        // q0 has no stored negatives: everything but the gold is eligible.
        assert_eq!(t[0].negative_source, NegativeSource::Corpus);
        assert!(!t[0].negative_tool_ids.contains(&"t00".to_string()));
        let allowed: BTreeSet<String> = tools.iter().map(|x| x.id.clone()).filter(|id| id != "t00").collect();
        assert!(t[0].negative_tool_ids.iter().all(|n| allowed.contains(n)));

        let mixed = build_triplets(&pairs, &queries, &tools, SearchStyle::Qtnd, 5, 1).unwrap();
        assert_eq!(mixed[2].negative_source, NegativeSource::Mixed);
        let set: BTreeSet<&String> = mixed[2].negative_tool_ids.iter().collect();
        assert_eq!(set.len(), 5);
        assert!(!set.contains(&"t02".to_string()));
        for n in ["t05", "t06", "t07"] {
            assert!(set.contains(&n.to_string()));
        }
        assert!(mixed[2].anchor_text.starts_with("Question:please do task 2 Thoughts:"));

        assert!(build_triplets(&pairs, &queries, &tools, SearchStyle::Tnd, 12, 1).is_err());
        assert!(build_triplets(&pairs, &queries, &tools, SearchStyle::Q, 2, 1).is_err());
        let rev: Vec<_> = pairs.iter().rev().cloned().collect();
        let mut back = build_triplets(&rev, &queries, &tools, SearchStyle::Tnd, 2, 1).unwrap();
        back.reverse();
        assert_eq!(back, t);
    }

    #[test]
    fn training_is_deterministic_and_lowers_loss() {
        let (tools, queries, pairs) = fixture();
        let p = DeterministicProvider::with_granularity(32, crate::embedding::Granularity::Tokens);
        let triplets = build_triplets(&pairs, &queries, &tools, SearchStyle::Tnd, 3, 0).unwrap();
        let config = TrainConfig {
            learning_rate: 0.05,
            epochs: 5,
            ..TrainConfig::default()
        };
        let a = train(&triplets, &tools, &p, &config).unwrap();
        let b = train(&triplets, &tools, &p, &config).unwrap();
        assert_eq!(a.adapter.fingerprint(), b.adapter.fingerprint());
        assert_eq!(a.losses.len(), 20);
        assert!(a.final_mean_loss < a.initial_mean_loss);

        let none = train(&triplets, &tools, &p, &TrainConfig { epochs: 0, ..config.clone() }).unwrap();
        assert!(none.adapter.is_identity());
        assert!(none.losses.is_empty());

        let batched = train(&triplets, &tools, &p, &TrainConfig { batch_size: 3, ..config.clone() }).unwrap();
        assert_eq!(batched.losses.len(), 10);

        assert!(train(&[], &tools, &p, &config).is_err());
        assert!(train(&triplets, &tools, &p, &TrainConfig { learning_rate: 0.0, ..config.clone() }).is_err());
    }

    struct Poisoned;

    impl EmbeddingProvider for Poisoned {
        fn kind(&self) -> crate::embedding::ProviderKind {
            crate::embedding::ProviderKind::DeterministicTest
        }
        fn dim(&self) -> usize {
            2
        }
        fn fingerprint(&self) -> String {
            "poisoned".into()
        }
        fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
            Ok(texts.iter().map(|_| ev(&[f64::NAN, 1.0])).collect())
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_step() {
        let (tools, queries, pairs) = fixture();
        let triplets = build_triplets(&pairs, &queries, &tools, SearchStyle::Tnd, 3, 0).unwrap();
        let err = train(&triplets, &tools, &Poisoned, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { step: 0 }));
    }

    #[test]
    fn loss_log_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        let log = vec![StepLoss { step: 0, loss: 0.5 }, StepLoss { step: 1, loss: 0.25 }];
        write_loss_log(&path, &log).unwrap();
        assert!(std::fs::read_to_string(&path).unwrap().starts_with("step,loss\n0,0.5\n"));
        assert_eq!(read_loss_log(&path).unwrap(), log);
    }
}
