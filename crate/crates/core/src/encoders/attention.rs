//! Attention-score adjacency over tokens.
//!
//! Each head scores token pairs with scaled dot products
//! `(H Wq_h)(H Wk_h)^T / sqrt(head_dim)`; the head score matrices are
//! averaged and then softmax-normalized per row.

use rand::Rng;

use super::gcn::glorot;
use crate::error::{EmgfError, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct AttentionConfig {
    pub heads: usize,
    pub head_dim: usize,
    query: Vec<ParamId>,
    key: Vec<ParamId>,
}

impl AttentionConfig {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(EmgfError::Config(format!(
                "{heads} attention heads do not divide width {dim}"
            )));
        }
        let head_dim = dim / heads;
        let mut query = Vec::with_capacity(heads);
        let mut key = Vec::with_capacity(heads);
        for h in 0..heads {
            query.push(store.add(format!("attention/{h}.query"), glorot(dim, head_dim, rng)));
            key.push(store.add(format!("attention/{h}.key"), glorot(dim, head_dim, rng)));
        }
        Ok(AttentionConfig {
            heads,
            head_dim,
            query,
            key,
        })
    }

    pub fn query(&self, head: usize) -> ParamId {
        self.query[head]
    }

    pub fn key(&self, head: usize) -> ParamId {
        self.key[head]
    }

    /// `n×n` row-stochastic attention matrix for `n×d` token states.
    pub fn attention_matrix(&self, tape: &mut Tape, store: &ParamStore, h: Var) -> Result<Var> {
        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut scores = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let wq = tape.param(store, self.query[head]);
            let wk = tape.param(store, self.key[head]);
            let q = tape.matmul(h, wq)?;
            let k = tape.matmul(h, wk)?;
            let kt = tape.transpose(k);
            let s = tape.matmul(q, kt)?;
            scores.push(s);
        }
        let total = tape.add_all(&scores)?;
        let mean = tape.scale(total, scale / self.heads as f64);
        tape.softmax_rows(mean)
    }
}
