//! Square linear map applied to frozen provider embeddings, then re-normalized.
//!
//! On disk: one JSON header line (`format_version`, `dim`, `fingerprint`,
//! `config`) followed by `dim` lines of row-major weights.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::digest::sha256_hex;
use crate::embedding::EmbeddingVector;
use crate::error::{Error, Result};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct AdapterModel {
    weight: DMatrix<f64>,
    config: Value,
    fingerprint: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dim: usize,
    fingerprint: String,
    config: Value,
}

impl AdapterModel {
    pub fn identity(dim: usize) -> Self {
        Self::from_weight(DMatrix::identity(dim, dim), Value::Null)
            .expect("identity is finite and square")
    }

    pub fn from_weight(weight: DMatrix<f64>, config: Value) -> Result<Self> {
        if weight.nrows() != weight.ncols() {
            return Err(Error::Data(format!(
                "adapter weight must be square, got {}x{}",
                weight.nrows(),
                weight.ncols()
            )));
        }
        if weight.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("adapter weight has non-finite entries".into()));
        }
        let fingerprint = compute_fingerprint(&weight, &config);
        Ok(Self {
            weight,
            config,
            fingerprint,
        })
    }

    pub fn dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn weight(&self) -> &DMatrix<f64> {
        &self.weight
    }

    pub fn config(&self) -> &Value {
        &self.config
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn is_identity(&self) -> bool {
        self.weight == DMatrix::identity(self.dim(), self.dim())
    }

    /// `normalize(W · x)`.
    pub fn apply(&self, v: &EmbeddingVector) -> Result<EmbeddingVector> {
        if v.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: v.dim(),
            });
        }
        let mapped = &self.weight * DVector::from_column_slice(v.values());
        EmbeddingVector(mapped.iter().copied().collect()).normalized()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            format_version: FORMAT_VERSION,
            dim: self.dim(),
            fingerprint: self.fingerprint.clone(),
            config: self.config.clone(),
        };
        let mut out = serde_json::to_string(&header).map_err(|e| Error::Data(e.to_string()))?;
        out.push('\n');
        for r in 0..self.dim() {
            let row: Vec<String> = (0..self.dim()).map(|c| format!("{:?}", self.weight[(r, c)])).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines();
        let header: Header = serde_json::from_str(lines.next().unwrap_or(""))
            .map_err(|e| parse_err(1, e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(parse_err(1, format!("unsupported format version {}", header.format_version)));
        }
        let mut values = Vec::with_capacity(header.dim * header.dim);
        for r in 0..header.dim {
            let line = lines
                .next()
                .ok_or_else(|| parse_err(r + 2, "missing weight row".into()))?;
            let row: Vec<f64> = line
                .split_whitespace()
                .map(|tok| tok.parse::<f64>().map_err(|e| parse_err(r + 2, e.to_string())))
                .collect::<Result<_>>()?;
            if row.len() != header.dim {
                return Err(parse_err(r + 2, format!("expected {} weights, got {}", header.dim, row.len())));
            }
            values.extend(row);
        }
        let model = Self::from_weight(DMatrix::from_row_slice(header.dim, header.dim, &values), header.config)?;
        if model.fingerprint != header.fingerprint {
            return Err(Error::FingerprintMismatch {
                what: "adapter",
                expected: Some(header.fingerprint),
                found: Some(model.fingerprint),
            });
        }
        Ok(model)
    }
}

fn compute_fingerprint(weight: &DMatrix<f64>, config: &Value) -> String {
    let mut bytes = Vec::with_capacity(weight.len() * 8 + 64);
    bytes.extend_from_slice(&(weight.nrows() as u64).to_le_bytes());
    for r in 0..weight.nrows() {
        for c in 0..weight.ncols() {
            bytes.extend_from_slice(&weight[(r, c)].to_le_bytes());
        }
    }
    bytes.extend_from_slice(config.to_string().as_bytes());
    sha256_hex(&bytes)[..32].to_string()
}
