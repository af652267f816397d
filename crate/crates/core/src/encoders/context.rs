use crate::data::AspectInstance;
use crate::error::Result;
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

use super::embedding::EmbeddingProvider;

/// Frozen token embeddings plus a trainable vector added on aspect rows.
#[derive(Debug, Clone)]
pub struct TokenEncoder {
    provider: EmbeddingProvider,
    marker: ParamId,
}

impl TokenEncoder {
    pub fn new(store: &mut ParamStore, provider: EmbeddingProvider) -> Self {
        let marker = store.add(
            "encoder/aspect_marker",
            Tensor::full(1, provider.dim(), 1.0 / (provider.dim() as f64).sqrt()),
        );
        TokenEncoder { provider, marker }
    }

    pub fn provider(&self) -> &EmbeddingProvider {
        &self.provider
    }

    pub fn marker(&self) -> ParamId {
        self.marker
    }

    /// `n×d` contextual states for the instance.
    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, inst: &AspectInstance) -> Result<Var> {
        let n = inst.len();
        let base = tape.constant(self.provider.embed(inst.tokens()));
        let (s, e) = inst.aspect();
        let mut mask = Tensor::zeros(n, 1);
        for i in s..e {
            mask.set(i, 0, 1.0);
        }
        let mask = tape.constant(mask);
        let marker = tape.param(store, self.marker);
        let marked = tape.matmul(mask, marker)?;
        tape.add(base, marked)
    }
}
