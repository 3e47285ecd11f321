//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails.

mod common;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use common::{fixture_config, fixture_dir, pipeline, read};
use hypotool::aligner::{assign, greedy_match, hungarian_match, AlignMethod, SimilarityMatrix};
use hypotool::config::{AdapterChoice, RetrieverKind};
use hypotool::corpus::{self, filter_dataset, Query, Split, Tool, ToolCollection};
use hypotool::evaluator::{mrr, ndcg_at_k, precision_at_k, recall_at_k, EvalReport};
use hypotool::fusion::{llm_fuse, rrf};
use hypotool::hypothesizer::{GenerationRecord, SearchStyle};
use hypotool::jsonl;
use hypotool::llm::{MockLlmProvider, MockResponse, Purpose};
use hypotool::pipeline::TrainSummary;
use hypotool::ranked::{RankedItem, RankedList};
use hypotool::sparse::{bm25_score, build_index, search, tokenize, Bm25Params};
use hypotool::trainer::{loss_and_gradient, loss_from_similarities};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::tempdir;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn dyadic(rng: &mut ChaCha8Rng) -> f64 {
    // multiples of 2^-20 keep every permutation sum exact
    rng.random_range(-(1i64 << 20)..=(1i64 << 20)) as f64 / (1u64 << 20) as f64
}

fn random_matrices() -> Vec<Vec<Vec<f64>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..500)
        .map(|i| {
            let n = 2 + i % 6;
            (0..n).map(|_| (0..n).map(|_| dyadic(&mut rng)).collect()).collect()
        })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn brute_force_max(m: &[Vec<f64>]) -> f64 {
    permutations(m.len())
        .iter()
        .map(|p| p.iter().enumerate().map(|(r, &c)| m[r][c]).sum::<f64>())
        .fold(f64::NEG_INFINITY, f64::max)
}

fn assignment_total(m: &[Vec<f64>], pairs: &[(usize, usize)]) -> f64 {
    let mut by_row = pairs.to_vec();
    by_row.sort();
    by_row.iter().map(|&(r, c)| m[r][c]).sum()
}

fn c1_hungarian_oracle() -> Check {
    let start = Instant::now();
    let mats = random_matrices();
    for (i, m) in mats.iter().enumerate() {
        let sim = SimilarityMatrix::from_values(m.clone()).map_err(|e| e.to_string())?;
        let pairs = hungarian_match(&sim).map_err(|e| e.to_string())?;
        let rows: HashSet<usize> = pairs.iter().map(|p| p.0).collect();
        let cols: HashSet<usize> = pairs.iter().map(|p| p.1).collect();
        ensure(rows.len() == m.len() && cols.len() == m.len(), || {
            format!("matrix {i}: not a perfect matching")
        })?;
        let (got, want) = (assignment_total(m, &pairs), brute_force_max(m));
        ensure(got == want, || format!("matrix {i}: total {got} != brute force {want}"))?;
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 5.0, || format!("took {secs:.2}s"))?;
    Ok(format!("{} matrices, n in 2..=7, exact, {secs:.2}s", mats.len()))
}

fn c2_greedy_dominance() -> Check {
    let mut strict = 0;
    for (i, m) in random_matrices().iter().enumerate() {
        let sim = SimilarityMatrix::from_values(m.clone()).map_err(|e| e.to_string())?;
        let h = assignment_total(m, &hungarian_match(&sim).map_err(|e| e.to_string())?);
        let g = assignment_total(m, &greedy_match(&sim).map_err(|e| e.to_string())?);
        ensure(h >= g, || format!("matrix {i}: hungarian {h} < greedy {g}"))?;
        if h > g {
            strict += 1;
        }
    }
    let conflict: Vec<Vec<f64>> = jsonl::read_json(&fixture_dir("conflict_similarity.json")).map_err(|e| e.to_string())?;
    let sim = SimilarityMatrix::from_values(conflict.clone()).map_err(|e| e.to_string())?;
    let h = assignment_total(&conflict, &assign(&sim, AlignMethod::Hungarian).map_err(|e| e.to_string())?);
    let g = assignment_total(&conflict, &assign(&sim, AlignMethod::Greedy).map_err(|e| e.to_string())?);
    ensure(h > g, || format!("conflict fixture: hungarian {h} not above greedy {g}"))?;

    // both alignment paths run end to end
    let mut sums = Vec::new();
    for method in [AlignMethod::Hungarian, AlignMethod::Greedy] {
        let dir = tempdir().map_err(|e| e.to_string())?;
        let mut c = fixture_config("noisy", dir.path());
        c.training.alignment = method;
        let p = pipeline(c);
        p.cmd_prepare().map_err(|e| e.to_string())?;
        let summary = p.cmd_train().map_err(|e| format!("{method}: {e}"))?;
        sums.push(summary.pairs);
    }
    Ok(format!(
        "conflict fixture {h:.2} > {g:.2}; strict on {strict}/500 random; both pipelines trained on {sums:?} pairs"
    ))
}

fn oracle_rrf(lists: &[Vec<&str>], k: f64) -> BTreeMap<String, f64> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for list in lists {
        for (i, id) in list.iter().enumerate() {
            out.entry(id.to_string()).or_default().push(1.0 / (k + (i + 1) as f64));
        }
    }
    out.into_iter()
        .map(|(id, mut parts)| {
            parts.sort_by(f64::total_cmp);
            (id, parts.iter().sum())
        })
        .collect()
}

fn to_list(ids: &[&str]) -> RankedList {
    let n = ids.len() as f64;
    let items = ids.iter().enumerate().map(|(i, id)| RankedItem::new(*id, n - i as f64)).collect();
    RankedList::new("q", "v", items)
}

fn c3_rrf_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let pool: Vec<String> = (0..30).map(|i| format!("t{i:02}")).collect();
    let mut worst: f64 = 0.0;
    for case in 0..200 {
        let n_lists = rng.random_range(1..=5);
        let lists: Vec<Vec<&str>> = (0..n_lists)
            .map(|_| {
                let len = rng.random_range(1..=10);
                let mut ids: Vec<&str> = pool.iter().map(String::as_str).collect();
                for i in 0..len {
                    let j = rng.random_range(i..ids.len());
                    ids.swap(i, j);
                }
                ids.truncate(len);
                ids
            })
            .collect();
        let k = [1.0, 10.0, 60.0][case % 3];
        let ranked: Vec<RankedList> = lists.iter().map(|l| to_list(l)).collect();
        let fused = rrf(&ranked, k, usize::MAX).map_err(|e| e.to_string())?;
        let want = oracle_rrf(&lists, k);
        ensure(fused.len() == want.len(), || format!("case {case}: size mismatch"))?;
        for item in &fused.items {
            let diff = (item.score - want[&item.tool_id]).abs();
            worst = worst.max(diff);
            ensure(diff <= 1e-12, || format!("case {case}: {} off by {diff:e}", item.tool_id))?;
        }
        let mut order: Vec<(&String, &f64)> = want.iter().collect();
        order.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
        let got: Vec<&str> = fused.tool_ids().collect();
        let exp: Vec<&str> = order.iter().map(|(id, _)| id.as_str()).collect();
        ensure(got == exp, || format!("case {case}: order {got:?} != {exp:?}"))?;
    }
    let fused = rrf(&[to_list(&["A", "B"]), to_list(&["B", "C"])], 60.0, 10).map_err(|e| e.to_string())?;
    let got: Vec<&str> = fused.tool_ids().collect();
    ensure(got == ["B", "A", "C"], || format!("worked example gave {got:?}"))?;
    let scores: Vec<f64> = fused.items.iter().map(|i| i.score).collect();
    let want = [1.0 / 62.0 + 1.0 / 61.0, 1.0 / 61.0, 1.0 / 62.0];
    for (s, w) in scores.iter().zip(want) {
        ensure((s - w).abs() <= 1e-12, || format!("worked example score {s} != {w}"))?;
    }
    ensure((scores[1] - 0.016393).abs() < 5e-7 && (scores[2] - 0.016129).abs() < 5e-7, || {
        format!("worked example singles {scores:?}")
    })?;
    Ok(format!("200 fixtures, max |diff| {worst:.1e}; [B,A,C] with B={:.7}", scores[0]))
}

fn oracle_metrics(ranked: &[String], gold: &HashSet<String>, k: usize) -> [f64; 4] {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (i, id) in ranked.iter().take(k).enumerate() {
        if gold.contains(id) {
            hits += 1;
            dcg += 1.0 / ((i + 2) as f64).log2();
        }
    }
    let idcg: f64 = (0..gold.len().min(k)).map(|i| 1.0 / ((i + 2) as f64).log2()).sum();
    let rr = ranked
        .iter()
        .position(|id| gold.contains(id))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64);
    [dcg / idcg, hits as f64 / k as f64, hits as f64 / gold.len() as f64, rr]
}

fn c4_metric_oracles() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pool: Vec<String> = (0..25).map(|i| format!("d{i}")).collect();
    let mut worst: f64 = 0.0;
    for case in 0..1000 {
        let mut ids = pool.clone();
        for i in 0..ids.len() {
            let j = rng.random_range(i..ids.len());
            ids.swap(i, j);
        }
        let len = rng.random_range(0..=15);
        let ranked: Vec<String> = ids[..len].to_vec();
        let n_gold = rng.random_range(1..=5);
        let gold: Vec<String> = (0..n_gold).map(|_| pool[rng.random_range(0..pool.len())].clone()).collect();
        let gold_set: HashSet<String> = gold.iter().cloned().collect();
        let k = rng.random_range(1..=12);
        let want = oracle_metrics(&ranked, &gold_set, k);
        let got = [
            ndcg_at_k(&ranked, &gold, k).map_err(|e| e.to_string())?,
            precision_at_k(&ranked, &gold, k).map_err(|e| e.to_string())?,
            recall_at_k(&ranked, &gold, k).map_err(|e| e.to_string())?,
            mrr(&ranked, &gold),
        ];
        for (g, w) in got.iter().zip(want) {
            let d = (g - w).abs();
            worst = worst.max(d);
            ensure(d <= 1e-9, || format!("case {case}: {got:?} vs {want:?}"))?;
        }
    }
    let r4 = |x: f64| (x * 1e4).round() / 1e4;
    let short = precision_at_k(&["g"], &["g"], 10).map_err(|e| e.to_string())?;
    let recall = recall_at_k(&["a", "x", "b"], &["a", "b", "c"], 10).map_err(|e| e.to_string())?;
    let rank2 = ndcg_at_k(&["x", "g"], &["g"], 10).map_err(|e| e.to_string())?;
    let ranks13 = ndcg_at_k(&["a", "x", "b"], &["a", "b"], 10).map_err(|e| e.to_string())?;
    let worked = [(short, 0.1), (r4(recall), 0.6667), (r4(rank2), 0.6309), (r4(ranks13), 0.9197)];
    for (got, want) in worked {
        ensure(got == want, || format!("worked value {got} != {want}"))?;
    }
    Ok(format!("1000 fixtures, max |diff| {worst:.1e}; worked values 0.1, 0.6667, 0.6309, 0.9197"))
}

fn numeric_gradient(w: &DMatrix<f64>, a: &DVector<f64>, g: &DVector<f64>, n: &[DVector<f64>], t: f64) -> DMatrix<f64> {
    let h = 1e-6;
    let loss = |w: &DMatrix<f64>| loss_and_gradient(w, a, g, n, t).unwrap().0;
    DMatrix::from_fn(w.nrows(), w.ncols(), |r, c| {
        let mut plus = w.clone();
        plus[(r, c)] += h;
        let mut minus = w.clone();
        minus[(r, c)] -= h;
        (loss(&plus) - loss(&minus)) / (2.0 * h)
    })
}

fn c5_info_nce() -> Check {
    for k in 1..=16usize {
        for s in [-0.3, 0.0, 0.7] {
            let loss = loss_from_similarities(s, &vec![s; k], 1.0);
            let want = ((k + 1) as f64).ln();
            ensure((loss - want).abs() <= 1e-12, || format!("k={k}: {loss} != ln({})", k + 1))?;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dim = 8;
    let mut passed = 0;
    for _ in 0..100 {
        let mut v = |n: usize| DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let a = v(dim);
        let g = v(dim);
        let negs: Vec<DVector<f64>> = (0..4).map(|_| v(dim)).collect();
        let w = DMatrix::identity(dim, dim) + DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-0.3..0.3));
        let t = rng.random_range(0.2..2.0);
        let (_, analytic) = loss_and_gradient(&w, &a, &g, &negs, t).map_err(|e| e.to_string())?;
        let numeric = numeric_gradient(&w, &a, &g, &negs, t);
        let ok = analytic
            .iter()
            .zip(numeric.iter())
            .all(|(x, y)| (x - y).abs() <= 1e-4 * y.abs().max(x.abs()) + 1e-8);
        if ok {
            passed += 1;
        }
    }
    ensure(passed >= 95, || format!("gradient check passed on {passed}/100"))?;
    Ok(format!("ln(k+1) exact for k=1..16; gradient check {passed}/100 at rtol 1e-4"))
}

fn report(p: &hypotool::pipeline::Pipeline) -> Result<EvalReport, String> {
    jsonl::read_json(&p.layout().report()).map_err(|e| e.to_string())
}

fn c6_training_efficacy() -> Check {
    let start = Instant::now();
    let trained_dir = tempdir().map_err(|e| e.to_string())?;
    let p = pipeline(fixture_config("synthetic", trained_dir.path()));
    let trained = p.run_all().map_err(|e| e.to_string())?;
    let summary: TrainSummary = jsonl::read_json(&p.layout().file("train", "summary.json")).map_err(|e| e.to_string())?;

    let base_dir = tempdir().map_err(|e| e.to_string())?;
    let mut c = fixture_config("synthetic", base_dir.path());
    c.retrieval.adapter = AdapterChoice::None;
    let identity = pipeline(c).run_all().map_err(|e| e.to_string())?;

    let (rt, ri) = (trained.avg_macro.recall, identity.avg_macro.recall);
    ensure(rt > ri, || format!("trained R@10 {rt} not above identity {ri}"))?;
    let drop = 1.0 - summary.final_mean_loss / summary.initial_mean_loss;
    ensure(drop >= 0.2, || {
        format!("mean loss {:.4} -> {:.4} ({:.1}%)", summary.initial_mean_loss, summary.final_mean_loss, drop * 100.0)
    })?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "R@10 trained {rt:.2} > identity {ri:.2}; mean loss {:.4} -> {:.4} (-{:.1}%); {secs:.1}s",
        summary.initial_mean_loss,
        summary.final_mean_loss,
        drop * 100.0
    ))
}

fn c7_style_ordering() -> Check {
    let mut recall = Vec::new();
    for style in [SearchStyle::Qtnd, SearchStyle::Tnd, SearchStyle::Q] {
        let dir = tempdir().map_err(|e| e.to_string())?;
        let mut c = fixture_config("synthetic", dir.path());
        c.retrieval.adapter = AdapterChoice::None;
        c.retrieval.style = style;
        let p = pipeline(c);
        p.run_all().map_err(|e| e.to_string())?;
        recall.push(report(&p)?.avg_macro.recall);
    }
    ensure(recall[0] >= recall[1] && recall[1] >= recall[2], || {
        format!("QTND {} / TND {} / Q {}", recall[0], recall[1], recall[2])
    })?;
    Ok(format!(
        "zero-shot dense R@10: QTND {:.2} >= TND {:.2} >= Q {:.2}",
        recall[0], recall[1], recall[2]
    ))
}

fn lists_by_query(path: &Path) -> Result<HashMap<String, RankedList>, String> {
    let run: Vec<RankedList> = jsonl::read(path).map_err(|e| e.to_string())?;
    Ok(run.into_iter().map(|l| (l.query_id.clone(), l)).collect())
}

fn c8_fallback() -> Check {
    let mut checked = Vec::new();
    for retriever in [RetrieverKind::Dense, RetrieverKind::Bm25] {
        let full_dir = tempdir().map_err(|e| e.to_string())?;
        let mut c = fixture_config("noisy", full_dir.path());
        c.retrieval.retriever = retriever;
        if retriever == RetrieverKind::Bm25 {
            c.retrieval.adapter = AdapterChoice::None;
        }
        let full = pipeline(c.clone());
        full.run_all().map_err(|e| e.to_string())?;

        let q_dir = tempdir().map_err(|e| e.to_string())?;
        let mut qc = c;
        qc.paths.output_dir = q_dir.path().to_path_buf();
        qc.retrieval.style = SearchStyle::Q;
        let q_only = pipeline(qc);
        q_only.cmd_prepare().map_err(|e| e.to_string())?;
        if retriever == RetrieverKind::Dense {
            std::fs::create_dir_all(q_only.layout().file("train", "")).map_err(|e| e.to_string())?;
            std::fs::copy(full.layout().adapter(), q_only.layout().adapter()).map_err(|e| e.to_string())?;
        }
        q_only.cmd_index().map_err(|e| e.to_string())?;
        q_only.cmd_retrieve().map_err(|e| e.to_string())?;

        let gens: Vec<GenerationRecord> =
            jsonl::read(&full.layout().file("infer", "generations.jsonl")).map_err(|e| e.to_string())?;
        let failed: Vec<&str> = gens.iter().filter(|g| !g.is_ok()).map(|g| g.query_id.as_str()).collect();
        let manifest: serde_json::Value =
            jsonl::read_json(&fixture_dir("noisy").join("manifest.json")).map_err(|e| e.to_string())?;
        let expected: Vec<&str> = manifest["fallback_queries"]
            .as_array()
            .map(|a| a.iter().filter_map(|v| v.as_str()).collect())
            .unwrap_or_default();
        ensure(failed == expected, || format!("malformed queries {failed:?}, manifest {expected:?}"))?;

        let a = lists_by_query(&full.layout().run())?;
        let b = lists_by_query(&q_only.layout().run())?;
        for id in &failed {
            let (x, y) = (&a[*id], &b[*id]);
            let bits = |l: &RankedList| -> Vec<(String, u64)> {
                l.items.iter().map(|i| (i.tool_id.clone(), i.score.to_bits())).collect()
            };
            ensure(bits(x) == bits(y) && x.source_tag == y.source_tag, || {
                format!("{retriever:?} {id}: fused list differs from question-only run")
            })?;
        }
        checked.push(format!("{retriever:?} {}", failed.len()));
    }
    Ok(format!("fallback queries bit-identical to question-only runs ({})", checked.join(", ")))
}

fn c9_filtration() -> Check {
    let dir = fixture_dir("noisy");
    let tools = corpus::load_tools(&dir.join("tools.jsonl")).map_err(|e| e.to_string())?;
    let queries = corpus::load_queries(&dir.join("queries.jsonl")).map_err(|e| e.to_string())?;
    let manifest: serde_json::Value = jsonl::read_json(&dir.join("manifest.json")).map_err(|e| e.to_string())?;
    ensure(tools.len() as u64 == manifest["tools_total"].as_u64().unwrap_or(0), || "tool count".into())?;
    ensure(queries.len() as u64 == manifest["queries_total"].as_u64().unwrap_or(0), || "query count".into())?;

    let (t1, q1, report) = filter_dataset(&tools, &queries);
    let reasons: BTreeMap<String, usize> =
        serde_json::from_value(manifest["reasons"].clone()).map_err(|e| e.to_string())?;
    let counts = [
        (report.tools_removed, "tools_removed"),
        (report.queries_removed, "queries_removed"),
        (report.negatives_pruned, "negatives_pruned"),
        (q1.len(), "surviving_queries"),
    ];
    for (got, key) in counts {
        let want = manifest[key].as_u64().unwrap_or(u64::MAX);
        ensure(got as u64 == want, || format!("{key}: {got} != manifest {want}"))?;
    }
    ensure(report.reasons == reasons, || format!("reasons {:?} != {reasons:?}", report.reasons))?;
    ensure(reasons.values().sum::<usize>() >= report.queries_removed, || "reason sum".into())?;

    let (t2, q2, again) = filter_dataset(&t1, &q1);
    ensure(t1 == t2 && q1 == q2 && again.is_clean(), || "second pass changed the data".into())?;
    for q in &q1 {
        for id in q.gold_tool_ids.iter().chain(&q.negative_tool_ids) {
            let t = t1.get(id).ok_or_else(|| format!("{}: dangling {id}", q.id))?;
            ensure(!t.description.trim().is_empty(), || format!("{id}: empty description"))?;
        }
        ensure(!q.gold_tool_ids.iter().any(|g| q.negative_tool_ids.contains(g)), || {
            format!("{}: gold/negative overlap", q.id)
        })?;
    }
    Ok(format!(
        "{} tools and {} queries removed as in the manifest; idempotent",
        report.tools_removed, report.queries_removed
    ))
}

fn oracle_bm25(docs: &[Vec<String>], query: &[String], doc: usize, k1: f64, b: f64) -> f64 {
    let n = docs.len() as f64;
    let avg = docs.iter().map(Vec::len).sum::<usize>() as f64 / n;
    let len = docs[doc].len() as f64;
    query
        .iter()
        .map(|term| {
            let tf = docs[doc].iter().filter(|t| *t == term).count() as f64;
            if tf == 0.0 {
                return 0.0;
            }
            let df = docs.iter().filter(|d| d.contains(term)).count() as f64;
            let idf = (1.0 + (n - df + 0.5) / (df + 0.5)).ln();
            idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len / avg))
        })
        .sum()
}

fn tool(id: &str, name: &str, desc: &str) -> Tool {
    Tool {
        id: id.into(),
        name: name.into(),
        description: desc.into(),
        split: Split::Web,
    }
}

fn c10_bm25() -> Check {
    let raw = [
        ("kitten_image", "Fetches a random kitten image."),
        ("currency", "Convert currency amounts between currency codes."),
        ("weather", "Current weather and weather forecast for a city."),
        ("translate", "Translate text between two languages."),
        ("stocks", "Stock price quotes and market data for a ticker."),
        ("news", "Latest news headlines by topic."),
        ("kitten_facts", "Random facts about cats and kitten care."),
        ("images", "Search image libraries for a photo by keyword."),
        ("city_guide", "Travel guide for a city with weather tips."),
        ("calc", "Evaluate a math expression."),
    ];
    let tools = ToolCollection::new(
        raw.iter().enumerate().map(|(i, (n, d))| tool(&format!("t{i}"), n, d)).collect(),
    )
    .map_err(|e| e.to_string())?;
    let docs: Vec<Vec<String>> = raw.iter().map(|(n, d)| tokenize(&format!("{n}. {d}"))).collect();
    let queries = ["kitten image", "weather city", "currency currency convert", "random facts data", "zebra", "a for"];
    let mut worst: f64 = 0.0;
    for params in [Bm25Params::default(), Bm25Params { k1: 3.0, b: 0.75 }, Bm25Params { k1: 1.2, b: 0.3 }] {
        let index = build_index(&tools, params).map_err(|e| e.to_string())?;
        for q in queries {
            let tokens = tokenize(q);
            for d in 0..docs.len() {
                let got = bm25_score(&index, &tokens, d).map_err(|e| e.to_string())?;
                let want = oracle_bm25(&docs, &tokens, d, params.k1, params.b);
                let diff = (got - want).abs();
                worst = worst.max(diff);
                ensure(diff <= 1e-9, || format!("{q:?} doc {d}: {got} vs {want}"))?;
            }
        }
    }
    // "kitten. " tokenizes to the single token of the worked example
    let single = ToolCollection::new(vec![tool("k", "kitten", "")]).map_err(|e| e.to_string())?;
    let index = build_index(&single, Bm25Params::default()).map_err(|e| e.to_string())?;
    let value = bm25_score(&index, &["kitten".to_string()], 0).map_err(|e| e.to_string())?;
    ensure(format!("{value:.6}") == "0.287682", || format!("single-doc value {value:.6}"))?;
    let top = search(&build_index(&tools, Bm25Params::default()).map_err(|e| e.to_string())?, "kitten", 10);
    ensure(top.items.len() == 2, || format!("kitten search {:?}", top.items))?;
    Ok(format!("10-doc corpus, 3 parameter sets, max |diff| {worst:.1e}; single doc {value:.6}"))
}

fn c11_llm_fusion_guard() -> Check {
    let ids: Vec<String> = (0..14).map(|i| format!("c{i:02}")).collect();
    let tools = ToolCollection::new(
        ids.iter().map(|id| tool(id, &format!("tool_{id}"), &format!("Candidate {id}."))).collect(),
    )
    .map_err(|e| e.to_string())?;
    let query = Query {
        id: "q".into(),
        text: "find the right tool".into(),
        gold_tool_ids: vec!["c00".into()],
        negative_tool_ids: vec!["c13".into()],
        split: Split::Web,
    };
    let a = RankedList::new("q", "TND:0", ids[..10].iter().map(|id| RankedItem::new(id.clone(), 1.0)).collect());
    let b = RankedList::new("q", "TND:1", ids[4..].iter().rev().map(|id| RankedItem::new(id.clone(), 1.0)).collect());
    let lists = [a, b];
    let rrf_order: Vec<String> = rrf(&lists, 60.0, usize::MAX)
        .map_err(|e| e.to_string())?
        .tool_ids()
        .map(String::from)
        .collect();

    let block = |name: &str, score: f64| format!("Tool: {name}\nScore: {score}\n");
    // 12 entries: 9 distinct candidates, one invented tool, two repeats
    let mut reply = String::new();
    let picks = ["c12", "c03", "c07", "c01", "c09", "c11", "c05", "c02", "c13"];
    for (i, id) in picks.iter().enumerate() {
        if i == 4 {
            reply.push_str(&block("tool_weather_oracle", 0.95));
        }
        reply.push_str(&block(&format!("tool_{id}"), 0.9 - i as f64 * 0.05));
    }
    reply.push_str(&block("tool_c03", 0.2));
    reply.push_str(&block("tool_c12", 0.1));
    let mut provider = MockLlmProvider::default();
    provider.insert("q", Purpose::Fusion, vec![MockResponse::Text(reply)]);
    let out = llm_fuse(&query, &lists, &tools, &provider, 10, 60.0).map_err(|e| e.to_string())?;
    let got: Vec<&str> = out.list.tool_ids().collect();
    ensure(got.len() == 10, || format!("{} entries", got.len()))?;
    ensure(got.iter().all(|id| rrf_order.iter().any(|c| c == id)), || "out-of-candidate id kept".into())?;
    let unique: HashSet<&&str> = got.iter().collect();
    ensure(unique.len() == 10, || "duplicate ids".into())?;
    ensure(got[..9] == picks, || format!("kept order {got:?}"))?;
    let backfill = rrf_order.iter().find(|id| !picks.contains(&id.as_str())).cloned().unwrap_or_default();
    ensure(got[9] == backfill, || format!("backfill {} != rrf pick {backfill}", got[9]))?;

    // 12 valid entries are cut to the first 10
    let mut reply = String::new();
    for (i, id) in ids[..12].iter().enumerate() {
        reply.push_str(&block(&format!("tool_{id}"), 1.0 - i as f64 * 0.01));
    }
    let mut provider = MockLlmProvider::default();
    provider.insert("q", Purpose::Fusion, vec![MockResponse::Text(reply)]);
    let out = llm_fuse(&query, &lists, &tools, &provider, 10, 60.0).map_err(|e| e.to_string())?;
    let got: Vec<&str> = out.list.tool_ids().collect();
    ensure(got == ids[..10].iter().map(String::as_str).collect::<Vec<_>>(), || format!("truncation gave {got:?}"))?;
    Ok(format!("invented name dropped, repeats dropped, slot 10 backfilled with {backfill}; 12 -> 10"))
}

fn c12_determinism() -> Check {
    let root = tempdir().map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for (i, workers) in ["1", "4"].iter().enumerate() {
        let dir = root.path().join(format!("run{i}"));
        std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
        let src = fixture_dir("noisy");
        let text = std::fs::read_to_string(src.join("config.toml")).map_err(|e| e.to_string())?;
        let mut text = text.replace("output_dir = \"out\"", &format!("output_dir = {:?}", dir.join("out")));
        for f in ["tools.jsonl", "queries.jsonl", "train_queries.jsonl", "llm_mock.jsonl"] {
            text = text.replace(&format!("\"{f}\""), &format!("{:?}", src.join(f)));
        }
        let config = dir.join("config.toml");
        std::fs::write(&config, text).map_err(|e| e.to_string())?;
        let status = Command::new(env!("CARGO_BIN_EXE_hypotool"))
            .args(["--seed", "5", "--workers", workers, "--config"])
            .arg(&config)
            .arg("run-all")
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        let out = dir.join("out");
        let summary: TrainSummary = jsonl::read_json(&out.join("train/summary.json")).map_err(|e| e.to_string())?;
        outputs.push((
            read(&out.join("infer/run.jsonl")),
            read(&out.join("train/adapter.txt")),
            summary.adapter_fingerprint,
            read(&out.join("eval/report.json")),
        ));
    }
    let (a, b) = (&outputs[0], &outputs[1]);
    ensure(a.0 == b.0, || "run files differ".into())?;
    ensure(a.1 == b.1 && a.2 == b.2, || "adapters differ".into())?;
    ensure(a.3 == b.3, || "reports differ".into())?;
    Ok(format!("two run-all invocations (1 and 4 workers) identical; adapter {}", a.2))
}

fn main() {
    let checks: [(&str, fn() -> Check); 12] = [
        ("hungarian oracle", c1_hungarian_oracle),
        ("greedy dominance", c2_greedy_dominance),
        ("rrf oracle", c3_rrf_oracle),
        ("metric oracles", c4_metric_oracles),
        ("infonce correctness", c5_info_nce),
        ("training efficacy", c6_training_efficacy),
        ("style ordering", c7_style_ordering),
        ("fallback correctness", c8_fallback),
        ("filtration", c9_filtration),
        ("bm25", c10_bm25),
        ("llm fusion guard", c11_llm_fusion_guard),
        ("end-to-end determinism", c12_determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        match std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into())) {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
