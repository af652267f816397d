//! Knowledge channel: projected external vectors, or learned per-token
//! defaults when an instance carries none.

use rand::Rng;

use super::embedding::fnv1a;
use super::gcn::glorot;
use crate::data::AspectInstance;
use crate::error::{EmgfError, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone)]
pub struct KnowledgeChannel {
    input_width: Option<usize>,
    buckets: usize,
    projection: Option<ParamId>,
    bias: ParamId,
    defaults: ParamId,
}

impl KnowledgeChannel {
    /// `input_width` is the width of the external vectors, `None` when the
    /// data has none. Tokens without vectors hash into one of `buckets`
    /// learned rows.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        input_width: Option<usize>,
        dim: usize,
        buckets: usize,
        rng: &mut R,
    ) -> Self {
        let projection =
            input_width.map(|w| store.add("knowledge/projection", glorot(w, dim, rng)));
        let bias = store.add("knowledge/bias", Tensor::zeros(1, dim));
        let defaults = store.add(
            "knowledge/defaults",
            Tensor::randn(buckets.max(1), dim, 1.0 / (dim as f64).sqrt(), rng),
        );
        KnowledgeChannel {
            input_width,
            buckets: buckets.max(1),
            projection,
            bias,
            defaults,
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a(token.as_bytes()) % self.buckets as u64) as usize
    }

    pub fn projection(&self) -> Option<ParamId> {
        self.projection
    }

    pub fn bias(&self) -> ParamId {
        self.bias
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, inst: &AspectInstance) -> Result<Var> {
        match (inst.kge(), self.projection) {
            (Some(vectors), Some(proj)) => {
                let width = inst.kge_width().unwrap_or(0);
                if Some(width) != self.input_width {
                    return Err(EmgfError::Instance(format!(
                        "knowledge vectors have width {width}, model expects {}",
                        self.input_width.unwrap_or(0)
                    )));
                }
                let k = tape.constant(Tensor::from_rows(vectors)?);
                let w = tape.param(store, proj);
                let b = tape.param(store, self.bias);
                let kw = tape.matmul(k, w)?;
                tape.add_row(kw, b)
            }
            (Some(_), None) => Err(EmgfError::Instance(
                "instance carries knowledge vectors but the model was built without a knowledge projection".into(),
            )),
            (None, _) => {
                let ids: Vec<usize> = inst.tokens().iter().map(|t| self.bucket(t)).collect();
                let table = tape.param(store, self.defaults);
                tape.select_rows(table, &ids)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Polarity;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst(tokens: &[&str], kge: Option<Vec<Vec<f64>>>) -> AspectInstance {
        let n = tokens.len();
        let heads: Vec<usize> = (0..n).collect();
        let tree = format!("(S {})", tokens.join(" "));
        AspectInstance::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            (0, 1),
            Polarity::Neutral,
            heads,
            tree,
            kge,
        )
        .unwrap()
    }

    #[test]
    fn projects_external_vectors() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = KnowledgeChannel::new(&mut store, Some(8), 32, 16, &mut rng);
        let i = inst(&["a", "b", "c"], Some(vec![vec![0.5; 8]; 3]));
        let mut tape = Tape::new();
        let out = ch.forward(&mut tape, &store, &i).unwrap();
        assert_eq!(tape.value(out).shape(), [3, 32]);
    }

    #[test]
    fn zero_vectors_give_bias_rows() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = KnowledgeChannel::new(&mut store, Some(4), 6, 16, &mut rng);
        let bias = Tensor::row_vector(&[0.1, 0.2, 0.3, -0.4, 0.5, 0.0]);
        store.get_mut(ch.bias()).value = bias.clone();
        let i = inst(&["a", "b"], Some(vec![vec![0.0; 4]; 2]));
        let mut tape = Tape::new();
        let out = ch.forward(&mut tape, &store, &i).unwrap();
        for r in 0..2 {
            assert_eq!(tape.value(out).row(r), bias.data());
        }
    }

    #[test]
    fn defaults_are_per_token() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = KnowledgeChannel::new(&mut store, None, 32, 64, &mut rng);
        let mut tape = Tape::new();
        let a = ch.forward(&mut tape, &store, &inst(&["x", "y", "z"], None)).unwrap();
        let b = ch.forward(&mut tape, &store, &inst(&["z", "x"], None)).unwrap();
        let (a, b) = (tape.value(a), tape.value(b));
        assert_eq!(a.shape(), [3, 32]);
        assert_eq!(a.row(0), b.row(1));
        assert_eq!(a.row(2), b.row(0));
    }

    #[test]
    fn width_mismatch_is_an_error() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ch = KnowledgeChannel::new(&mut store, Some(4), 8, 8, &mut rng);
        let mut tape = Tape::new();
        let i = inst(&["a"], Some(vec![vec![1.0; 5]]));
        assert!(ch.forward(&mut tape, &store, &i).is_err());
    }
}
