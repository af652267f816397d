//! Graph convolution: `h_i^l = relu(sum_j A_ij W^l h_j^(l-1) + b^l)`.
//!
//! In row form this is `relu(A · H · W + b)`. Fixed (binary) adjacencies are
//! divided by their row degree before use; the learned attention adjacency is
//! already row-stochastic and is used as given.

use rand::Rng;

use crate::error::{EmgfError, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcnKind {
    Dep,
    Con,
    Sem,
}

impl GcnKind {
    pub fn name(self) -> &'static str {
        match self {
            GcnKind::Dep => "dep",
            GcnKind::Con => "con",
            GcnKind::Sem => "sem",
        }
    }
}

/// Graph operand of a GCN stack.
#[derive(Debug, Clone, Copy)]
pub enum Adjacency<'a> {
    /// One binary matrix shared by every layer.
    Fixed(&'a Tensor),
    /// One binary matrix per layer, bottom-up.
    Stack(&'a [Tensor]),
    /// A row-stochastic matrix already on the tape.
    Learned(Var),
}

#[derive(Debug, Clone)]
pub struct GcnStack {
    pub kind: GcnKind,
    weights: Vec<ParamId>,
    biases: Vec<ParamId>,
}

/// Glorot-uniform `rows×cols` matrix.
pub(crate) fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::uniform(rows, cols, bound, rng)
}

impl GcnStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        kind: GcnKind,
        layers: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let group = format!("gcn_{}", kind.name());
            weights.push(store.add(format!("{group}/{l}.weight"), glorot(dim, dim, rng)));
            biases.push(store.add(format!("{group}/{l}.bias"), Tensor::zeros(1, dim)));
        }
        GcnStack {
            kind,
            weights,
            biases,
        }
    }

    pub fn layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weight(&self, layer: usize) -> ParamId {
        self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> ParamId {
        self.biases[layer]
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        input: Var,
        adj: Adjacency<'_>,
    ) -> Result<Var> {
        let n = tape.value(input).rows();
        let per_layer: Vec<Var> = match adj {
            Adjacency::Fixed(a) => {
                check_square(a, n)?;
                let v = tape.constant(a.row_normalized());
                vec![v; self.layers()]
            }
            Adjacency::Stack(slices) => {
                if slices.len() != self.layers() {
                    return Err(EmgfError::Config(format!(
                        "{} GCN has {} layers but the adjacency stack has {} slices",
                        self.kind.name(),
                        self.layers(),
                        slices.len()
                    )));
                }
                slices
                    .iter()
                    .map(|a| {
                        check_square(a, n)?;
                        Ok(tape.constant(a.row_normalized()))
                    })
                    .collect::<Result<_>>()?
            }
            Adjacency::Learned(v) => {
                check_square(tape.value(v), n)?;
                vec![v; self.layers()]
            }
        };

        let mut h = input;
        for (l, a) in per_layer.into_iter().enumerate() {
            let w = tape.param(store, self.weights[l]);
            let b = tape.param(store, self.biases[l]);
            let ah = tape.matmul(a, h)?;
            let ahw = tape.matmul(ah, w)?;
            let pre = tape.add_row(ahw, b)?;
            h = tape.relu(pre);
        }
        Ok(h)
    }
}

fn check_square(a: &Tensor, n: usize) -> Result<()> {
    if a.shape() != [n, n] {
        return Err(EmgfError::Shape {
            op: "gcn adjacency",
            left: a.shape(),
            right: [n, n],
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(layers: usize, dim: usize) -> (ParamStore, GcnStack) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let g = GcnStack::new(&mut store, GcnKind::Dep, layers, dim, &mut rng);
        (store, g)
    }

    #[test]
    fn identity_graph_identity_weight_is_relu() {
        let (mut store, g) = setup(1, 3);
        store.get_mut(g.weight(0)).value = Tensor::identity(3);
        let h = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![-0.1, 0.0, 4.0]]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(h.clone());
        let eye = Tensor::identity(2);
        let out = g.forward(&mut tape, &store, x, Adjacency::Fixed(&eye)).unwrap();
        assert_eq!(tape.value(out), &h.map(|v| v.max(0.0)));
    }

    #[test]
    fn full_graph_identical_rows_stay_identical() {
        let (store, g) = setup(2, 4);
        let row = vec![0.3, -0.2, 0.8, 0.1];
        let h = Tensor::from_rows(&vec![row; 5]).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(h);
        let full = Tensor::ones(5, 5);
        let out = g.forward(&mut tape, &store, x, Adjacency::Fixed(&full)).unwrap();
        let v = tape.value(out);
        for r in 1..5 {
            assert_eq!(v.row(r), v.row(0));
        }
    }

    #[test]
    fn path_graph_matches_hand_computation() {
        // 3-node path 0-1-2 with self-loops; degrees 2, 3, 2.
        let (mut store, g) = setup(1, 2);
        let w = Tensor::from_rows(&[vec![1.0, -1.0], vec![0.5, 2.0]]).unwrap();
        let b = Tensor::row_vector(&[0.1, -0.3]);
        store.get_mut(g.weight(0)).value = w;
        store.get_mut(g.bias(0)).value = b;
        let h = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![2.0, -1.0]]).unwrap();
        let adj = Tensor::from_rows(&[
            vec![1.0, 1.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![0.0, 1.0, 1.0],
        ])
        .unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(h);
        let out = g.forward(&mut tape, &store, x, Adjacency::Fixed(&adj)).unwrap();

        // node 0: mean(h0, h1) = [0.5, 0.5]; ·W = [0.5+0.25, -0.5+1.0] = [0.75, 0.5]; +b = [0.85, 0.2]
        // node 1: mean(h0, h1, h2) = [1, 0]; ·W = [1, -1]; +b = [1.1, -1.3] -> relu [1.1, 0]
        // node 2: mean(h1, h2) = [1, 0]; same as node 1
        let expected = [[0.85, 0.2], [1.1, 0.0], [1.1, 0.0]];
        let v = tape.value(out);
        for (i, row) in expected.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                assert!((v.get(i, j) - e).abs() < 1e-12, "({i},{j}) {} vs {e}", v.get(i, j));
            }
        }
    }

    #[test]
    fn stack_slice_count_must_match_layers() {
        let (store, g) = setup(3, 2);
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::ones(2, 2));
        let slices = vec![Tensor::identity(2); 2];
        let err = g.forward(&mut tape, &store, x, Adjacency::Stack(&slices)).unwrap_err();
        assert!(err.to_string().contains("3 layers"), "{err}");
    }
}
