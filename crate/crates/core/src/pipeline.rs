//! Stage orchestration behind the CLI.
//!
//! Every stage reads and writes fixed files under the configured output
//! directory, so any stage can be rerun on its own:
//!
//! ```text
//! config.resolved.toml
//! prepared/  tools.jsonl queries.jsonl train_queries.jsonl filtration_report.json
//! index/     bm25.json dense.json
//! train/     sample.jsonl generations.jsonl dropped_queries.jsonl aligned_pairs.jsonl
//!            triplets.jsonl adapter.txt loss_log.csv summary.json
//! infer/     generations.jsonl search_vectors.jsonl per_vector_runs.jsonl run.jsonl
//!            fusion_warnings.jsonl
//! eval/      report.json report.txt per_query.jsonl
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::adapter::AdapterModel;
use crate::aligner::{align, AlignedPair};
use crate::config::{AdapterChoice, PipelineConfig, PromptKind, RetrieverKind};
use crate::corpus::{self, filter_dataset, sample_training, FiltrationReport, Query, QueryCollection, ToolCollection};
use crate::dense::{build_dense, dense_search_batch, DenseIndex};
use crate::embedding::EmbeddingProvider;
use crate::error::{Error, Result, StageExt};
use crate::evaluator::{aggregate, score_run, EvalReport};
use crate::fusion::{llm_fuse, rrf, FusionMethod, FusionWarning};
use crate::hypothesizer::{build_search_vectors, generate, GenerationMode, GenerationRecord, SearchStyle, SearchVector};
use crate::jsonl;
use crate::llm::LlmProvider;
use crate::ranked::RankedList;
use crate::sparse::{self, Bm25Index, Bm25Params};
use crate::trainer::{build_triplets, train, write_loss_log, TrainingTriplet};

/// Artifact locations under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn file(&self, stage: &str, name: &str) -> PathBuf {
        self.root.join(stage).join(name)
    }

    fn create(&self, stage: &str, name: &str) -> Result<PathBuf> {
        let dir = self.root.join(stage);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir.join(name))
    }

    pub fn resolved_config(&self) -> PathBuf {
        self.root.join("config.resolved.toml")
    }
    pub fn prepared_tools(&self) -> PathBuf {
        self.file("prepared", "tools.jsonl")
    }
    pub fn prepared_queries(&self) -> PathBuf {
        self.file("prepared", "queries.jsonl")
    }
    pub fn prepared_train_queries(&self) -> PathBuf {
        self.file("prepared", "train_queries.jsonl")
    }
    pub fn bm25_index(&self) -> PathBuf {
        self.file("index", "bm25.json")
    }
    pub fn dense_index(&self) -> PathBuf {
        self.file("index", "dense.json")
    }
    pub fn adapter(&self) -> PathBuf {
        self.file("train", "adapter.txt")
    }
    pub fn run(&self) -> PathBuf {
        self.file("infer", "run.jsonl")
    }
    pub fn per_vector_runs(&self) -> PathBuf {
        self.file("infer", "per_vector_runs.jsonl")
    }
    pub fn report(&self) -> PathBuf {
        self.file("eval", "report.json")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepareOutcome {
    pub report: FiltrationReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_report: Option<FiltrationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedQuery {
    pub query_id: String,
    pub status: crate::hypothesizer::GenerationStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub sampled_queries: usize,
    pub trained_queries: usize,
    pub dropped_queries: usize,
    pub pairs: usize,
    pub triplets: usize,
    pub k_negatives: usize,
    pub steps: usize,
    pub initial_mean_loss: f64,
    pub final_mean_loss: f64,
    pub adapter_fingerprint: String,
}

pub struct Pipeline {
    config: PipelineConfig,
    layout: Layout,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            layout: Layout::new(&config.paths.output_dir),
            config,
            pool,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Runs `f` over `items` on the worker pool, keeping input order.
    fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> Result<R> + Sync + Send) -> Result<Vec<R>> {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    fn write_resolved_config(&self) -> Result<()> {
        let path = self.layout.resolved_config();
        std::fs::create_dir_all(self.layout.root()).map_err(|e| Error::io(self.layout.root(), e))?;
        std::fs::write(&path, self.config.to_redacted_toml()?).map_err(|e| Error::io(&path, e))
    }

    fn load_prepared(&self) -> Result<(ToolCollection, QueryCollection)> {
        let tools = self.layout.prepared_tools();
        if !tools.exists() {
            return Err(Error::Data(format!(
                "{} not found; run the prepare stage first",
                tools.display()
            )));
        }
        Ok((corpus::load_tools(&tools)?, corpus::load_queries(&self.layout.prepared_queries())?))
    }

    fn adapter(&self) -> Result<Option<AdapterModel>> {
        match self.config.retrieval.adapter {
            AdapterChoice::None => Ok(None),
            AdapterChoice::Trained => {
                let path = self.layout.adapter();
                if !path.exists() {
                    return Err(Error::Data(format!(
                        "{} not found; run the train stage first",
                        path.display()
                    )));
                }
                Ok(Some(AdapterModel::load(&path)?))
            }
        }
    }

    // prepare

    pub fn cmd_prepare(&self) -> Result<PrepareOutcome> {
        self.prepare().stage("prepare")
    }

    fn prepare(&self) -> Result<PrepareOutcome> {
        self.write_resolved_config()?;
        let paths = &self.config.paths;
        let tools = corpus::load_tools(&paths.tools)?;
        let queries = corpus::load_queries(&paths.queries)?;
        let (tools, queries, report) = filter_dataset(&tools, &queries);
        corpus::save_tools(&self.layout.create("prepared", "tools.jsonl")?, &tools)?;
        corpus::save_queries(&self.layout.prepared_queries(), &queries)?;
        jsonl::write_json(&self.layout.file("prepared", "filtration_report.json"), &report)?;
        info!(
            "prepared {} tools and {} queries ({} tools, {} queries removed)",
            tools.len(),
            queries.len(),
            report.tools_removed,
            report.queries_removed
        );

        let train_report = match &paths.train_queries {
            Some(path) => {
                let pool = corpus::load_queries(path)?;
                let (_, pool, report) = filter_dataset(&tools, &pool);
                corpus::save_queries(&self.layout.prepared_train_queries(), &pool)?;
                jsonl::write_json(&self.layout.file("prepared", "train_filtration_report.json"), &report)?;
                Some(report)
            }
            None => None,
        };
        Ok(PrepareOutcome { report, train_report })
    }

    // index

    pub fn cmd_index(&self) -> Result<()> {
        self.index().stage("index")
    }

    fn index(&self) -> Result<()> {
        let (tools, _) = self.load_prepared()?;
        let bm25 = sparse::build_index(&tools, Bm25Params::default())?;
        bm25.save(&self.layout.create("index", "bm25.json")?)?;
        if self.config.retrieval.retriever == RetrieverKind::Dense {
            let provider = self.config.embedding_provider()?;
            let adapter = self.adapter()?;
            let dense = build_dense(&tools, provider.as_ref(), adapter.as_ref())?;
            dense.save(&self.layout.dense_index())?;
        }
        Ok(())
    }

    // training phase

    fn train_pool(&self) -> Result<QueryCollection> {
        let path = self.layout.prepared_train_queries();
        if self.config.paths.train_queries.is_none() {
            return Err(Error::Config("training needs paths.train_queries".into()));
        }
        if !path.exists() {
            return Err(Error::Data(format!("{} not found; run the prepare stage first", path.display())));
        }
        corpus::load_queries(&path)
    }

    fn generate_all(
        &self,
        queries: &[Query],
        llm: &dyn LlmProvider,
        mode_for: impl Fn(&Query) -> GenerationMode + Sync + Send,
        retries: u32,
    ) -> Result<Vec<GenerationRecord>> {
        self.par_map(queries, |q| generate(q, llm, mode_for(q), retries))
    }

    pub fn cmd_hypothesize_train(&self) -> Result<Vec<GenerationRecord>> {
        self.hypothesize_train().stage("hypothesize")
    }

    fn hypothesize_train(&self) -> Result<Vec<GenerationRecord>> {
        let pool = self.train_pool()?;
        let n = self.config.training.sample_size.unwrap_or(pool.len());
        let sample = sample_training(&pool, n, self.config.seed)?;
        corpus::save_queries(&self.layout.create("train", "sample.jsonl")?, &sample)?;
        let llm = self.config.llm_provider()?;
        let records = self.generate_all(
            sample.as_slice(),
            llm.as_ref(),
            |q| GenerationMode::Train {
                n_required: q.gold_tool_ids.len(),
            },
            self.config.training.retries,
        )?;
        jsonl::write(&self.layout.file("train", "generations.jsonl"), &records)?;
        let dropped: Vec<DroppedQuery> = records
            .iter()
            .filter(|r| !r.is_ok())
            .map(|r| DroppedQuery {
                query_id: r.query_id.clone(),
                status: r.status,
            })
            .collect();
        if !dropped.is_empty() {
            warn!("{} training queries dropped after generation", dropped.len());
        }
        jsonl::write(&self.layout.file("train", "dropped_queries.jsonl"), &dropped)?;
        Ok(records)
    }

    pub fn cmd_align(&self) -> Result<Vec<AlignedPair>> {
        self.align().stage("align")
    }

    fn align(&self) -> Result<Vec<AlignedPair>> {
        let (tools, _) = self.load_prepared()?;
        let sample = corpus::load_queries(&self.layout.file("train", "sample.jsonl"))?;
        let records: Vec<GenerationRecord> = jsonl::read(&self.layout.file("train", "generations.jsonl"))?;
        let usable: Vec<(&Query, &GenerationRecord)> = records
            .iter()
            .filter(|r| r.is_ok())
            .map(|r| {
                sample
                    .get(&r.query_id)
                    .map(|q| (q, r))
                    .ok_or_else(|| Error::Data(format!("generation for unknown query {}", r.query_id)))
            })
            .collect::<Result<_>>()?;
        let provider = self.config.embedding_provider()?;
        let method = self.config.training.alignment;
        let nested = self.par_map(&usable, |(q, r)| align(q, r, &tools, provider.as_ref(), method))?;
        let pairs: Vec<AlignedPair> = nested.into_iter().flatten().collect();
        jsonl::write(&self.layout.create("train", "aligned_pairs.jsonl")?, &pairs)?;
        Ok(pairs)
    }

    /// Generation, alignment, triplet construction and adapter training.
    pub fn cmd_train(&self) -> Result<TrainSummary> {
        self.write_resolved_config()?;
        let records = self.cmd_hypothesize_train()?;
        let pairs = self.cmd_align()?;
        self.fit(&records, &pairs).stage("train")
    }

    fn fit(&self, records: &[GenerationRecord], pairs: &[AlignedPair]) -> Result<TrainSummary> {
        if pairs.is_empty() {
            return Err(Error::Data("no training queries survived generation".into()));
        }
        let (tools, _) = self.load_prepared()?;
        let sample = corpus::load_queries(&self.layout.file("train", "sample.jsonl"))?;
        let t = &self.config.training;
        let triplets: Vec<TrainingTriplet> = build_triplets(
            pairs,
            &sample,
            &tools,
            t.anchor_style,
            t.optimizer.k_negatives,
            self.config.seed,
        )?;
        jsonl::write(&self.layout.file("train", "triplets.jsonl"), &triplets)?;
        let provider = self.config.embedding_provider()?;
        let outcome = train(&triplets, &tools, provider.as_ref(), &t.optimizer)?;
        outcome.adapter.save(&self.layout.adapter())?;
        write_loss_log(&self.layout.file("train", "loss_log.csv"), &outcome.losses)?;
        let trained: BTreeSet<&str> = pairs.iter().map(|p| p.query_id.as_str()).collect();
        let summary = TrainSummary {
            sampled_queries: records.len(),
            trained_queries: trained.len(),
            dropped_queries: records.iter().filter(|r| !r.is_ok()).count(),
            pairs: pairs.len(),
            triplets: triplets.len(),
            k_negatives: t.optimizer.k_negatives,
            steps: outcome.losses.len(),
            initial_mean_loss: outcome.initial_mean_loss,
            final_mean_loss: outcome.final_mean_loss,
            adapter_fingerprint: outcome.adapter.fingerprint().to_string(),
        };
        jsonl::write_json(&self.layout.file("train", "summary.json"), &summary)?;
        info!(
            "trained adapter {} on {} triplets: mean loss {:.4} -> {:.4}",
            summary.adapter_fingerprint, summary.triplets, summary.initial_mean_loss, summary.final_mean_loss
        );
        Ok(summary)
    }

    // inference phase

    pub fn cmd_hypothesize_test(&self) -> Result<Vec<GenerationRecord>> {
        self.hypothesize_test().stage("hypothesize")
    }

    fn hypothesize_test(&self) -> Result<Vec<GenerationRecord>> {
        if self.config.retrieval.style == SearchStyle::Q {
            return Err(Error::Config("style Q searches with the question only; nothing to hypothesize".into()));
        }
        let (_, queries) = self.load_prepared()?;
        let llm = self.config.llm_provider()?;
        let mode = match self.config.retrieval.prompt {
            PromptKind::Standard => GenerationMode::Test,
            PromptKind::Inferior => GenerationMode::Inferior,
        };
        let records = self.generate_all(queries.as_slice(), llm.as_ref(), |_| mode, self.config.retrieval.retries)?;
        jsonl::write(&self.layout.create("infer", "generations.jsonl")?, &records)?;
        Ok(records)
    }

    /// Search vectors, per-vector top-k lists and the fused run.
    pub fn cmd_retrieve(&self) -> Result<Vec<RankedList>> {
        self.write_resolved_config()?;
        let records = match self.config.retrieval.style {
            SearchStyle::Q => Vec::new(),
            _ => self.cmd_hypothesize_test()?,
        };
        self.retrieve(&records).stage("retrieve")
    }

    fn retrieve(&self, records: &[GenerationRecord]) -> Result<Vec<RankedList>> {
        let (tools, queries) = self.load_prepared()?;
        let r = &self.config.retrieval;
        let by_query: BTreeMap<&str, &GenerationRecord> =
            records.iter().map(|g| (g.query_id.as_str(), g)).collect();
        let vectors: Vec<Vec<SearchVector>> = queries
            .iter()
            .map(|q| build_search_vectors(q, by_query.get(q.id.as_str()).copied(), r.style))
            .collect();
        let flat: Vec<&SearchVector> = vectors.iter().flatten().collect();
        jsonl::write(&self.layout.create("infer", "search_vectors.jsonl")?, flat.iter().copied())?;
        let fallbacks = vectors
            .iter()
            .filter(|v| r.style != SearchStyle::Q && v[0].style == SearchStyle::Q)
            .count();
        if fallbacks > 0 {
            warn!("{fallbacks} queries fell back to question-only search");
        }

        let searcher = Searcher::open(self)?;
        let per_query: Vec<(&Query, &Vec<SearchVector>)> = queries.iter().zip(&vectors).collect();
        let lists: Vec<Vec<RankedList>> = self.par_map(&per_query, |(q, vs)| searcher.search(q, vs, r.k))?;
        let per_vector: Vec<&RankedList> = lists.iter().flatten().collect();
        jsonl::write(&self.layout.per_vector_runs(), per_vector.iter().copied())?;
        self.fuse_lists(&tools, &queries, lists)
    }

    pub fn cmd_fuse(&self) -> Result<Vec<RankedList>> {
        self.fuse().stage("fuse")
    }

    fn fuse(&self) -> Result<Vec<RankedList>> {
        let (tools, queries) = self.load_prepared()?;
        let lists: Vec<RankedList> = jsonl::read(&self.layout.per_vector_runs())?;
        let mut grouped: BTreeMap<String, Vec<RankedList>> = BTreeMap::new();
        for list in lists {
            grouped.entry(list.query_id.clone()).or_default().push(list);
        }
        let ordered: Vec<Vec<RankedList>> = queries
            .iter()
            .map(|q| {
                grouped
                    .remove(&q.id)
                    .ok_or_else(|| Error::Data(format!("no per-vector lists for query {}", q.id)))
            })
            .collect::<Result<_>>()?;
        if let Some(extra) = grouped.keys().next() {
            return Err(Error::Data(format!("per-vector lists for unknown query {extra}")));
        }
        self.fuse_lists(&tools, &queries, ordered)
    }

    fn fuse_lists(
        &self,
        tools: &ToolCollection,
        queries: &QueryCollection,
        lists: Vec<Vec<RankedList>>,
    ) -> Result<Vec<RankedList>> {
        let r = &self.config.retrieval;
        let per_query: Vec<(&Query, Vec<RankedList>)> = queries.iter().zip(lists).collect();
        let (fused, warnings): (Vec<RankedList>, Vec<Option<FusionWarning>>) = match r.fusion {
            FusionMethod::Rrf => (
                self.par_map(&per_query, |(_, l)| rrf(l, r.k_const, r.k))?,
                Vec::new(),
            ),
            FusionMethod::Llm => {
                let llm = self.config.llm_provider()?;
                self.par_map(&per_query, |(q, l)| {
                    let out = llm_fuse(q, l, tools, llm.as_ref(), r.k, r.k_const)?;
                    Ok((out.list, out.warning))
                })?
                .into_iter()
                .unzip()
            }
        };
        let warnings: Vec<FusionWarning> = warnings.into_iter().flatten().collect();
        for w in &warnings {
            warn!("query {}: {}", w.query_id, w.message);
        }
        jsonl::write(&self.layout.create("infer", "fusion_warnings.jsonl")?, &warnings)?;
        jsonl::write(&self.layout.run(), &fused)?;
        Ok(fused)
    }

    // evaluation

    pub fn cmd_evaluate(&self, run_path: Option<&Path>) -> Result<EvalReport> {
        self.evaluate(run_path).stage("evaluate")
    }

    fn evaluate(&self, run_path: Option<&Path>) -> Result<EvalReport> {
        let (_, queries) = self.load_prepared()?;
        let default_run = self.layout.run();
        let run: Vec<RankedList> = jsonl::read(run_path.unwrap_or(&default_run))?;
        let covered: BTreeSet<&str> = run.iter().map(|l| l.query_id.as_str()).collect();
        if let Some(missing) = queries.iter().find(|q| !covered.contains(q.id.as_str())) {
            return Err(Error::Data(format!("run has no list for query {}", missing.id)));
        }
        let k = self.config.retrieval.k;
        let per_query = score_run(&run, &queries, k)?;
        let report = aggregate(&per_query, k, self.metadata()?);
        jsonl::write_json(&self.layout.create("eval", "report.json")?, &report)?;
        let label = format!("{:?} {}", self.config.retrieval.retriever, self.config.retrieval.style);
        let table = report.to_table(&label);
        std::fs::write(self.layout.file("eval", "report.txt"), &table)
            .map_err(|e| Error::io(self.layout.file("eval", "report.txt"), e))?;
        jsonl::write(&self.layout.file("eval", "per_query.jsonl"), &per_query)?;
        Ok(report)
    }

    fn metadata(&self) -> Result<BTreeMap<String, Value>> {
        let c = &self.config;
        let r = &c.retrieval;
        let adapter = match self.adapter()? {
            Some(a) => json!(a.fingerprint()),
            None => Value::Null,
        };
        let mut m = BTreeMap::new();
        m.insert("retriever".into(), serde_json::to_value(r.retriever).unwrap_or_default());
        m.insert("style".into(), serde_json::to_value(r.style).unwrap_or_default());
        m.insert("fusion".into(), serde_json::to_value(r.fusion).unwrap_or_default());
        m.insert("prompt".into(), serde_json::to_value(r.prompt).unwrap_or_default());
        m.insert("k_const".into(), json!(r.k_const));
        m.insert("seed".into(), json!(c.seed));
        m.insert("adapter_fingerprint".into(), adapter);
        m.insert("alignment".into(), serde_json::to_value(c.training.alignment).unwrap_or_default());
        m.insert("k_negatives".into(), json!(c.training.optimizer.k_negatives));
        if r.retriever == RetrieverKind::Dense {
            m.insert("embedding_fingerprint".into(), json!(c.embedding_provider()?.fingerprint()));
        }
        Ok(m)
    }

    /// prepare, train (when a trained adapter is configured), index, retrieve, evaluate.
    pub fn run_all(&self) -> Result<EvalReport> {
        self.cmd_prepare()?;
        if self.config.retrieval.adapter == AdapterChoice::Trained {
            self.cmd_train()?;
        }
        self.cmd_index()?;
        self.cmd_retrieve()?;
        self.cmd_evaluate(None)
    }
}

enum Backend {
    Bm25(Bm25Index),
    Dense {
        index: DenseIndex,
        provider: Box<dyn EmbeddingProvider>,
        adapter: Option<AdapterModel>,
    },
}

struct Searcher {
    backend: Backend,
}

impl Searcher {
    fn open(p: &Pipeline) -> Result<Self> {
        let missing = |path: &Path| {
            Error::Data(format!("{} not found; run the index stage first", path.display()))
        };
        let backend = match p.config.retrieval.retriever {
            RetrieverKind::Bm25 => {
                let path = p.layout.bm25_index();
                if !path.exists() {
                    return Err(missing(&path));
                }
                Backend::Bm25(Bm25Index::load(&path)?)
            }
            RetrieverKind::Dense => {
                let path = p.layout.dense_index();
                if !path.exists() {
                    return Err(missing(&path));
                }
                let provider = p.config.embedding_provider()?;
                let adapter = p.adapter()?;
                let index = DenseIndex::load_checked(&path, provider.as_ref(), adapter.as_ref())?;
                Backend::Dense {
                    index,
                    provider,
                    adapter,
                }
            }
        };
        Ok(Self { backend })
    }

    /// One top-k list per search vector, tagged `STYLE:i`.
    fn search(&self, query: &Query, vectors: &[SearchVector], k: usize) -> Result<Vec<RankedList>> {
        let texts: Vec<String> = vectors.iter().map(|v| v.text.clone()).collect();
        let lists = match &self.backend {
            Backend::Bm25(index) => texts.iter().map(|t| sparse::search(index, t, k)).collect(),
            Backend::Dense {
                index,
                provider,
                adapter,
            } => dense_search_batch(index, &texts, provider.as_ref(), adapter.as_ref(), k)?,
        };
        Ok(lists
            .into_iter()
            .zip(vectors)
            .enumerate()
            .map(|(i, (list, v))| list.labeled(query.id.clone(), format!("{}:{i}", v.style)))
            .collect())
    }
}
