//! Dense text embeddings behind a pluggable provider, plus cosine similarity.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::digest::{sha256_hex, stable_hash64};
use crate::error::{Error, Result};
use crate::http::{HttpSettings, JsonClient};
use crate::sparse::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &EmbeddingVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn normalized(&self) -> Result<EmbeddingVector> {
        let n = self.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::ZeroVector);
        }
        Ok(EmbeddingVector(self.0.iter().map(|v| v / n).collect()))
    }
}

impl From<Vec<f64>> for EmbeddingVector {
    fn from(v: Vec<f64>) -> Self {
        EmbeddingVector(v)
    }
}

pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok((a.dot(b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    FileBacked,
    RemoteHttp,
    DeterministicTest,
}

pub trait EmbeddingProvider: Send + Sync {
    fn kind(&self) -> ProviderKind;
    fn dim(&self) -> usize;
    /// Identifies the embedding space; indexes refuse queries from another one.
    fn fingerprint(&self) -> String;
    /// One vector per input, in input order.
    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>>;

    fn embed(&self, text: &str) -> Result<EmbeddingVector> {
        let mut v = self.embed_batch(&[text.to_string()])?;
        Ok(v.pop().expect("one vector per input"))
    }
}

fn reject_empty(texts: &[String]) -> Result<()> {
    if let Some(i) = texts.iter().position(|t| t.is_empty()) {
        return Err(Error::Data(format!("cannot embed empty text (batch index {i})")));
    }
    Ok(())
}

/// What the deterministic provider hashes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One pseudo-random direction per distinct text.
    #[default]
    Text,
    /// Sum of unit pseudo-random directions, one per token occurrence; texts
    /// sharing words end up correlated.
    Tokens,
}

/// Offline provider whose vectors depend only on the input bytes.
#[derive(Debug, Clone)]
pub struct DeterministicProvider {
    dim: usize,
    granularity: Granularity,
}

impl DeterministicProvider {
    pub fn new(dim: usize) -> Self {
        Self::with_granularity(dim, Granularity::Text)
    }

    pub fn with_granularity(dim: usize, granularity: Granularity) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim, granularity }
    }

    fn gaussian_unit(&self, bytes: &[u8]) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64(bytes));
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        v
    }

    fn vector_for(&self, text: &str) -> EmbeddingVector {
        match self.granularity {
            Granularity::Text => EmbeddingVector(self.gaussian_unit(text.as_bytes())),
            Granularity::Tokens => {
                let tokens = tokenize(text);
                if tokens.is_empty() {
                    return EmbeddingVector(self.gaussian_unit(text.as_bytes()));
                }
                let mut acc = vec![0.0; self.dim];
                for tok in &tokens {
                    for (a, t) in acc.iter_mut().zip(self.gaussian_unit(tok.as_bytes())) {
                        *a += t;
                    }
                }
                let n = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
                if n == 0.0 {
                    return EmbeddingVector(self.gaussian_unit(text.as_bytes()));
                }
                EmbeddingVector(acc.into_iter().map(|x| x / n).collect())
            }
        }
    }
}

impl EmbeddingProvider for DeterministicProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::DeterministicTest
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        let g = match self.granularity {
            Granularity::Text => "text",
            Granularity::Tokens => "tokens",
        };
        format!("deterministic_test:{g}:{}", self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        reject_empty(texts)?;
        Ok(texts.iter().map(|t| self.vector_for(t)).collect())
    }
}

/// Key under which a text's vector is stored in a file-backed store.
pub fn text_hash(text: &str) -> String {
    sha256_hex(text.as_bytes())
}

#[derive(Serialize, Deserialize)]
struct StoreHeader {
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct StoreEntry {
    text_hash: String,
    embedding: Vec<f64>,
}

/// Precomputed vectors keyed by [`text_hash`].
///
/// File layout: a header line `{"dim": n}` followed by one
/// `{"text_hash": str, "embedding": [float]}` per line.
#[derive(Debug, Clone)]
pub struct FileBackedProvider {
    dim: usize,
    vectors: HashMap<String, EmbeddingVector>,
    fingerprint: String,
}

impl FileBackedProvider {
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut lines = BufReader::new(file).lines().enumerate();
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let header: StoreHeader = loop {
            match lines.next() {
                None => return Err(parse_err(1, "missing header line".into())),
                Some((i, l)) => {
                    let l = l.map_err(|e| Error::io(path, e))?;
                    if l.trim().is_empty() {
                        continue;
                    }
                    break serde_json::from_str(&l).map_err(|e| parse_err(i + 1, e.to_string()))?;
                }
            }
        };
        let mut vectors = HashMap::new();
        for (i, l) in lines {
            let l = l.map_err(|e| Error::io(path, e))?;
            if l.trim().is_empty() {
                continue;
            }
            let entry: StoreEntry =
                serde_json::from_str(&l).map_err(|e| parse_err(i + 1, e.to_string()))?;
            if entry.embedding.len() != header.dim {
                return Err(Error::DimensionMismatch {
                    expected: header.dim,
                    found: entry.embedding.len(),
                });
            }
            vectors.insert(entry.text_hash, EmbeddingVector(entry.embedding));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            dim: header.dim,
            vectors,
            fingerprint: format!("file_backed:{}", &sha256_hex(&bytes)[..16]),
        })
    }

    pub fn from_entries<I, S>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut vectors = HashMap::new();
        let mut hasher_input = format!("dim={dim}");
        for (text, v) in entries {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            let key = text_hash(text.as_ref());
            hasher_input.push_str(&format!("|{key}:{v:?}"));
            vectors.insert(key, EmbeddingVector(v));
        }
        Ok(Self {
            dim,
            vectors,
            fingerprint: format!("file_backed:{}", &sha256_hex(hasher_input.as_bytes())[..16]),
        })
    }

    /// Writes a store in the on-disk layout, entries in the given order.
    pub fn write_store<I, S>(path: &Path, dim: usize, entries: I) -> Result<()>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = serde_json::to_string(&StoreHeader { dim }).expect("header serializes");
        writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
        for (text, embedding) in entries {
            if embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: embedding.len(),
                });
            }
            let line = serde_json::to_string(&StoreEntry {
                text_hash: text_hash(text.as_ref()),
                embedding,
            })
            .map_err(|e| Error::Data(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

impl EmbeddingProvider for FileBackedProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::FileBacked
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        reject_empty(texts)?;
        texts
            .iter()
            .map(|t| {
                let hash = text_hash(t);
                self.vectors
                    .get(&hash)
                    .cloned()
                    .ok_or_else(|| Error::EmbeddingNotFound {
                        text: t.clone(),
                        hash,
                    })
            })
            .collect()
    }
}

/// Embedding service speaking `{"input": [str], "model": str}` →
/// `{"data": [{"embedding": [float]}]}`.
pub struct RemoteProvider {
    client: JsonClient,
    model: String,
    dim: usize,
    batch_size: usize,
}

impl RemoteProvider {
    pub fn new(settings: HttpSettings, model: impl Into<String>, dim: usize) -> Result<Self> {
        Ok(Self {
            client: JsonClient::new(settings)?,
            model: model.into(),
            dim,
            batch_size: 64,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn embed_chunk(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        let resp = self.client.post(&json!({ "input": texts, "model": self.model }))?;
        let data = resp
            .get("data")
            .and_then(|d| d.as_array())
            .ok_or_else(|| Error::Provider("response has no \"data\" array".into()))?;
        if data.len() != texts.len() {
            return Err(Error::Provider(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        let mut slots: Vec<Option<EmbeddingVector>> = vec![None; texts.len()];
        for (pos, item) in data.iter().enumerate() {
            let idx = item
                .get("index")
                .and_then(|i| i.as_u64())
                .map(|i| i as usize)
                .unwrap_or(pos);
            let values: Vec<f64> = item
                .get("embedding")
                .and_then(|e| e.as_array())
                .ok_or_else(|| Error::Provider("item has no \"embedding\" array".into()))?
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| Error::Provider("non-numeric embedding".into())))
                .collect::<Result<_>>()?;
            if values.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    found: values.len(),
                });
            }
            let slot = slots
                .get_mut(idx)
                .ok_or_else(|| Error::Provider(format!("embedding index {idx} out of range")))?;
            *slot = Some(EmbeddingVector(values));
        }
        slots
            .into_iter()
            .map(|s| s.ok_or_else(|| Error::Provider("missing embedding in response".into())))
            .collect()
    }
}

impl EmbeddingProvider for RemoteProvider {
    fn kind(&self) -> ProviderKind {
        ProviderKind::RemoteHttp
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("remote_http:{}:{}:{}", self.client.endpoint(), self.model, self.dim)
    }

    fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>> {
        reject_empty(texts)?;
        let chunks: Vec<Vec<EmbeddingVector>> = texts
            .par_chunks(self.batch_size)
            .map(|c| self.embed_chunk(c))
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }
}
