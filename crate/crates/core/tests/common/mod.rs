#![allow(dead_code)]

use std::collections::BTreeSet;

use emgf::preprocess::{DualViewGraph, Slot, View};
use emgf::tensor::Tensor;
use rand::Rng;

/// Random symmetric 0/1 matrix with unit diagonal.
pub fn random_adjacency<R: Rng>(n: usize, density: f64, rng: &mut R) -> Tensor {
    let mut a = Tensor::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(density) {
                a.set(i, j, 1.0);
                a.set(j, i, 1.0);
            }
        }
    }
    a
}

pub fn random_dual_graph<R: Rng>(n: usize, rng: &mut R) -> DualViewGraph {
    let dc = rng.random_range(0.0..1.0);
    let dd = rng.random_range(0.0..1.0);
    let con = random_adjacency(n, dc, rng);
    let dep = random_adjacency(n, dd, rng);
    DualViewGraph::new(con, dep).unwrap()
}

/// Enumerates every slot and tests the three positive scenarios one by one.
pub fn label_oracle(graph: &DualViewGraph, anchor: Slot) -> (BTreeSet<Slot>, BTreeSet<Slot>) {
    let n = graph.len();
    let adj = graph.adjacency(anchor.view);
    let connected = |j: usize| j != anchor.node && adj.get(anchor.node, j) == 1.0;
    let mut pos = BTreeSet::new();
    let mut neg = BTreeSet::new();
    for view in [View::Con, View::Dep] {
        for j in 0..n {
            let slot = Slot::new(view, j);
            if slot == anchor {
                continue;
            }
            let same_view_neighbour = view == anchor.view && connected(j);
            let homologous = view != anchor.view && j == anchor.node;
            let neighbour_homologue = view != anchor.view && connected(j);
            if same_view_neighbour || homologous || neighbour_homologue {
                pos.insert(slot);
            } else {
                neg.insert(slot);
            }
        }
    }
    (pos, neg)
}

/// `clamp(round(c * ln(n)^2), 1, n)` for the fixed n and c grid, worked out by hand.
pub const ANCHOR_TABLE: [(usize, f64, usize); 15] = [
    // ln 1 = 0
    (1, 0.5, 1),
    (1, 1.0, 1),
    (1, 2.0, 1),
    // ln(2)^2 = 0.4805
    (2, 0.5, 1),
    (2, 1.0, 1),
    (2, 2.0, 1),
    // ln(5)^2 = 2.5903
    (5, 0.5, 1),
    (5, 1.0, 3),
    (5, 2.0, 5),
    // ln(20)^2 = 8.9744
    (20, 0.5, 4),
    (20, 1.0, 9),
    (20, 2.0, 18),
    // ln(100)^2 = 21.2076
    (100, 0.5, 11),
    (100, 1.0, 21),
    (100, 2.0, 42),
];

/// Phrase spans `(start, end, height)` read straight from the bracket string.
pub fn phrase_spans(s: &str) -> Vec<(usize, usize, usize)> {
    let toks: Vec<String> = s
        .replace('(', " ( ")
        .replace(')', " ) ")
        .split_whitespace()
        .map(str::to_string)
        .collect();
    // stack entries: (start leaf, max child height)
    let mut stack: Vec<(usize, usize)> = Vec::new();
    let mut spans = Vec::new();
    let mut leaves = 0;
    let mut i = 0;
    while i < toks.len() {
        match toks[i].as_str() {
            "(" => {
                stack.push((leaves, 0));
                i += 2; // skip the label
                continue;
            }
            ")" => {
                let (start, h) = stack.pop().unwrap();
                let height = h + 1;
                spans.push((start, leaves, height));
                if let Some(parent) = stack.last_mut() {
                    parent.1 = parent.1.max(height);
                }
            }
            _ => leaves += 1,
        }
        i += 1;
    }
    spans
}

pub fn slice_oracle(spans: &[(usize, usize, usize)], n: usize, level: usize) -> Vec<Vec<f64>> {
    let mut m = vec![vec![0.0; n]; n];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let shared = i == j
                || spans
                    .iter()
                    .any(|&(s, e, h)| h <= level && (s..e).contains(&i) && (s..e).contains(&j));
            *v = if shared { 1.0 } else { 0.0 };
        }
    }
    m
}

pub fn is_equivalence(m: &[Vec<f64>]) -> bool {
    let n = m.len();
    (0..n).all(|i| m[i][i] == 1.0)
        && (0..n).all(|i| (0..n).all(|j| m[i][j] == m[j][i] && (m[i][j] == 0.0 || m[i][j] == 1.0)))
        && (0..n).all(|i| {
            (0..n).all(|j| (0..n).all(|k| !(m[i][j] == 1.0 && m[j][k] == 1.0) || m[i][k] == 1.0))
        })
}
