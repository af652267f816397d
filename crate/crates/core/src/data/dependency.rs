use super::instance::AspectInstance;
use crate::tensor::Tensor;

/// Undirected dependency adjacency with self-loops.
#[derive(Debug, Clone, PartialEq)]
pub struct DepGraph {
    pub adj: Tensor,
}

/// Adjacency from 1-based heads (0 = root): `adj[i][j] = 1` when an arc joins
/// `i` and `j` in either direction, and on the diagonal.
pub fn adjacency_from_heads(heads: &[usize]) -> Tensor {
    let n = heads.len();
    let mut adj = Tensor::identity(n);
    for (i, &h) in heads.iter().enumerate() {
        if h > 0 {
            adj.set(i, h - 1, 1.0);
            adj.set(h - 1, i, 1.0);
        }
    }
    adj
}

pub fn build_dep_adj(instance: &AspectInstance) -> DepGraph {
    DepGraph {
        adj: adjacency_from_heads(instance.dep_heads()),
    }
}
