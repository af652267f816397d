//! Frozen token embeddings standing in for a contextual encoder.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{EmgfError, Result};
use crate::tensor::Tensor;

/// 64-bit FNV-1a. Stable across platforms and releases, unlike `DefaultHasher`.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic pseudo-random vector for `token`, entries `N(0, 1/dim)`.
pub fn hashed_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(token.as_bytes()) ^ seed.rotate_left(17));
    Tensor::randn(1, dim, 1.0 / (dim as f64).sqrt(), &mut rng).into_vec()
}

#[derive(Debug, Clone)]
pub enum EmbeddingSource {
    Hashed,
    Table(HashMap<String, Vec<f64>>),
}

#[derive(Debug)]
pub struct EmbeddingProvider {
    dim: usize,
    seed: u64,
    source: EmbeddingSource,
    warned_missing: AtomicBool,
}

impl Clone for EmbeddingProvider {
    fn clone(&self) -> Self {
        EmbeddingProvider {
            dim: self.dim,
            seed: self.seed,
            source: self.source.clone(),
            warned_missing: AtomicBool::new(self.warned_missing.load(Ordering::Relaxed)),
        }
    }
}

impl EmbeddingProvider {
    pub fn hashed(dim: usize, seed: u64) -> Self {
        EmbeddingProvider {
            dim,
            seed,
            source: EmbeddingSource::Hashed,
            warned_missing: AtomicBool::new(false),
        }
    }

    pub fn with_table(dim: usize, seed: u64, table: HashMap<String, Vec<f64>>) -> Result<Self> {
        if let Some((tok, v)) = table.iter().find(|(_, v)| v.len() != dim) {
            return Err(EmgfError::Config(format!(
                "embedding for '{tok}' has width {}, expected {dim}",
                v.len()
            )));
        }
        Ok(EmbeddingProvider {
            dim,
            seed,
            source: EmbeddingSource::Table(table),
            warned_missing: AtomicBool::new(false),
        })
    }

    /// Reads a table file: one token per line followed by `dim` numbers,
    /// whitespace-separated.
    pub fn from_file(path: impl AsRef<Path>, dim: usize, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| EmgfError::io(path, e))?;
        let mut table = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(tok) = parts.next() else { continue };
            let vals: std::result::Result<Vec<f64>, _> = parts.map(str::parse).collect();
            let vals = vals.map_err(|e| EmgfError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                msg: e.to_string(),
            })?;
            if vals.len() != dim {
                return Err(EmgfError::Record {
                    path: path.to_path_buf(),
                    line: i + 1,
                    msg: format!("expected {dim} values, found {}", vals.len()),
                });
            }
            table.insert(tok.to_string(), vals);
        }
        EmbeddingProvider::with_table(dim, seed, table)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `n×dim` matrix for `tokens`.
    pub fn embed(&self, tokens: &[String]) -> Tensor {
        let mut out = Tensor::zeros(tokens.len(), self.dim);
        for (i, tok) in tokens.iter().enumerate() {
            let row = match &self.source {
                EmbeddingSource::Hashed => hashed_vector(tok, self.dim, self.seed),
                EmbeddingSource::Table(table) => match table.get(tok) {
                    Some(v) => v.clone(),
                    None => {
                        if !self.warned_missing.swap(true, Ordering::Relaxed) {
                            log::warn!("token '{tok}' not in embedding table; using hashed vectors for missing tokens");
                        }
                        hashed_vector(tok, self.dim, self.seed)
                    }
                },
            };
            out.row_mut(i).copy_from_slice(&row);
        }
        out
    }
}
