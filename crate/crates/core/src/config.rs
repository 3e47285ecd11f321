//! Declarative pipeline configuration (TOML) with `${VAR}` interpolation.
//!
//! Relative paths are resolved against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aligner::AlignMethod;
use crate::embedding::{
    DeterministicProvider, EmbeddingProvider, FileBackedProvider, Granularity, RemoteProvider,
};
use crate::error::{Error, Result};
use crate::fusion::{FusionMethod, DEFAULT_K_CONST};
use crate::http::HttpSettings;
use crate::hypothesizer::SearchStyle;
use crate::llm::{HttpLlmProvider, LlmProvider, MockLlmProvider};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub tools: PathBuf,
    pub queries: PathBuf,
    /// Pool the training sample is drawn from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_queries: Option<PathBuf>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    pub endpoint: String,
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_timeout() -> u64 {
    60
}

fn default_retries() -> u32 {
    2
}

impl HttpConfig {
    fn settings(&self) -> HttpSettings {
        HttpSettings {
            token: self.token.clone(),
            timeout: std::time::Duration::from_secs(self.timeout_secs),
            max_retries: self.max_retries,
            ..HttpSettings::new(self.endpoint.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LlmConfig {
    Mock {
        fixtures: PathBuf,
    },
    Http {
        #[serde(flatten)]
        http: HttpConfig,
        #[serde(default)]
        temperature: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbeddingConfig {
    Deterministic {
        dim: usize,
        #[serde(default)]
        granularity: Granularity,
    },
    File {
        store: PathBuf,
    },
    Http {
        #[serde(flatten)]
        http: HttpConfig,
        dim: usize,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
}

fn default_batch() -> usize {
    64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Bm25,
    #[default]
    Dense,
}

/// Which adapter the dense retriever maps vectors through.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdapterChoice {
    #[default]
    None,
    Trained,
}

/// Prompt used to generate hypothetical tools at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    #[default]
    Standard,
    Inferior,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub retriever: RetrieverKind,
    pub style: SearchStyle,
    pub fusion: FusionMethod,
    pub adapter: AdapterChoice,
    pub prompt: PromptKind,
    pub k: usize,
    pub k_const: f64,
    pub retries: u32,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            retriever: RetrieverKind::Dense,
            style: SearchStyle::Qtnd,
            fusion: FusionMethod::Rrf,
            adapter: AdapterChoice::None,
            prompt: PromptKind::Standard,
            k: 10,
            k_const: DEFAULT_K_CONST,
            retries: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    /// Size of the training sample; `None` uses the whole pool.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_size: Option<usize>,
    pub alignment: AlignMethod,
    pub anchor_style: SearchStyle,
    pub retries: u32,
    #[serde(flatten)]
    pub optimizer: TrainConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            sample_size: None,
            alignment: AlignMethod::Hungarian,
            anchor_style: SearchStyle::Qtnd,
            retries: 2,
            optimizer: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub paths: PathsConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub llm: Option<LlmConfig>,
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub training: TrainingConfig,
}

fn default_workers() -> usize {
    4
}

/// Replaces `${NAME}` with the variable's value; `$$` escapes a dollar sign.
pub fn interpolate(text: &str, lookup: &dyn Fn(&str) -> Option<String>) -> Result<String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(i) = rest.find('$') {
        out.push_str(&rest[..i]);
        let tail = &rest[i..];
        if let Some(after) = tail.strip_prefix("$$") {
            out.push('$');
            rest = after;
        } else if let Some(body) = tail.strip_prefix("${") {
            let end = body
                .find('}')
                .ok_or_else(|| Error::Config(format!("unterminated variable reference in {text:?}")))?;
            let name = &body[..end];
            let value = lookup(name)
                .ok_or_else(|| Error::Config(format!("environment variable {name} is not set")))?;
            out.push_str(&value);
            rest = &body[end + 1..];
        } else {
            out.push('$');
            rest = &tail[1..];
        }
    }
    out.push_str(rest);
    Ok(out)
}

fn interpolate_value(value: &mut toml::Value, lookup: &dyn Fn(&str) -> Option<String>) -> Result<()> {
    match value {
        toml::Value::String(s) => *s = interpolate(s, lookup)?,
        toml::Value::Array(items) => {
            for v in items {
                interpolate_value(v, lookup)?;
            }
        }
        toml::Value::Table(t) => {
            for (_, v) in t.iter_mut() {
                interpolate_value(v, lookup)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, &|name| std::env::var(name).ok())
    }

    /// Parses, interpolates string values, resolves paths against `base`.
    pub fn parse(text: &str, base: &Path, env: &dyn Fn(&str) -> Option<String>) -> Result<Self> {
        let mut tree: toml::Value =
            toml::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))?;
        interpolate_value(&mut tree, env)?;
        let mut config: PipelineConfig = tree
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(format!("invalid config: {e}")))?;
        config.resolve_paths(base);
        config.training.optimizer.seed = config.seed;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let p = &mut self.paths;
        resolve(base, &mut p.tools);
        resolve(base, &mut p.queries);
        resolve(base, &mut p.output_dir);
        if let Some(t) = &mut p.train_queries {
            resolve(base, t);
        }
        if let Some(LlmConfig::Mock { fixtures }) = &mut self.llm {
            resolve(base, fixtures);
        }
        if let EmbeddingConfig::File { store } = &mut self.embedding {
            resolve(base, store);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.retrieval;
        if r.k == 0 {
            return Err(Error::Config("retrieval.k must be at least 1".into()));
        }
        if !(r.k_const > 0.0) {
            return Err(Error::Config("retrieval.k_const must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if r.fusion == FusionMethod::Llm && self.llm.is_none() {
            return Err(Error::Config("llm fusion requires an [llm] provider".into()));
        }
        if r.style != SearchStyle::Q && self.llm.is_none() {
            return Err(Error::Config(format!(
                "style {} needs an [llm] provider to generate hypothetical tools",
                r.style
            )));
        }
        if r.adapter == AdapterChoice::Trained && r.retriever != RetrieverKind::Dense {
            return Err(Error::Config("a trained adapter only applies to the dense retriever".into()));
        }
        if self.training.anchor_style == SearchStyle::Q {
            return Err(Error::Config("training.anchor_style must be TND or QTND".into()));
        }
        self.training.optimizer.validate()
    }

    /// Applies CLI overrides; the seed also drives sampling and training.
    pub fn with_overrides(mut self, seed: Option<u64>, workers: Option<usize>) -> Result<Self> {
        if let Some(seed) = seed {
            self.seed = seed;
        }
        if let Some(w) = workers {
            self.workers = w;
        }
        self.training.optimizer.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    /// TOML of the resolved config with secrets masked.
    pub fn to_redacted_toml(&self) -> Result<String> {
        let mut copy = self.clone();
        let mask = |h: &mut HttpConfig| {
            if h.token.is_some() {
                h.token = Some("<redacted>".into());
            }
        };
        if let Some(LlmConfig::Http { http, .. }) = &mut copy.llm {
            mask(http);
        }
        if let EmbeddingConfig::Http { http, .. } = &mut copy.embedding {
            mask(http);
        }
        toml::to_string_pretty(&copy).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn embedding_provider(&self) -> Result<Box<dyn EmbeddingProvider>> {
        Ok(match &self.embedding {
            EmbeddingConfig::Deterministic { dim, granularity } => {
                Box::new(DeterministicProvider::with_granularity(*dim, *granularity))
            }
            EmbeddingConfig::File { store } => Box::new(FileBackedProvider::load(store)?),
            EmbeddingConfig::Http { http, dim, batch_size } => Box::new(
                RemoteProvider::new(http.settings(), http.model.clone(), *dim)?.with_batch_size(*batch_size),
            ),
        })
    }

    pub fn llm_provider(&self) -> Result<Box<dyn LlmProvider>> {
        match &self.llm {
            None => Err(Error::Config("no [llm] provider configured".into())),
            Some(LlmConfig::Mock { fixtures }) => Ok(Box::new(MockLlmProvider::load(fixtures)?)),
            Some(LlmConfig::Http { http, temperature }) => Ok(Box::new(HttpLlmProvider::new(
                http.settings(),
                http.model.clone(),
                *temperature,
            )?)),
        }
    }
}
