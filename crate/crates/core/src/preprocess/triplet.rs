//! Multi-anchor triplet learning across the constituent and dependency views.
//!
//! Each token appears once per view. For an anchor at token `i` in view `V`
//! (other view `V'`), the positive slots are
//!
//! - the neighbours of `i` in `V`,
//! - the homologous node `(V', i)`,
//! - the homologous nodes `(V', j)` of every neighbour `j` of `i` in `V`,
//!
//! and every other slot except the anchor itself is negative.

use std::fmt;

use crate::error::{EmgfError, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    Con,
    Dep,
}

impl View {
    pub fn other(self) -> View {
        match self {
            View::Con => View::Dep,
            View::Dep => View::Con,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            View::Con => "con",
            View::Dep => "dep",
        }
    }
}

/// A node in one of the two views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Slot {
    pub view: View,
    pub node: usize,
}

impl Slot {
    pub fn new(view: View, node: usize) -> Self {
        Slot { view, node }
    }

    /// Row of this slot in the `[H_con; H_dep]` stacked matrix.
    pub fn stacked_row(self, n: usize) -> usize {
        match self.view {
            View::Con => self.node,
            View::Dep => n + self.node,
        }
    }
}

impl fmt::Display for Slot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.view.name(), self.node)
    }
}

/// Constituent and dependency adjacencies over the same tokens.
#[derive(Debug, Clone)]
pub struct DualViewGraph {
    con: Tensor,
    dep: Tensor,
}

impl DualViewGraph {
    pub fn new(con: Tensor, dep: Tensor) -> Result<Self> {
        if con.shape() != dep.shape() || con.rows() != con.cols() {
            return Err(EmgfError::Shape {
                op: "dual_view_graph",
                left: con.shape(),
                right: dep.shape(),
            });
        }
        for (name, a) in [("con", &con), ("dep", &dep)] {
            if !a.is_symmetric() || (0..a.rows()).any(|i| a.get(i, i) != 1.0) {
                return Err(EmgfError::Instance(format!(
                    "{name} view adjacency must be symmetric with unit diagonal"
                )));
            }
        }
        Ok(DualViewGraph { con, dep })
    }

    pub fn len(&self) -> usize {
        self.con.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.con.rows() == 0
    }

    pub fn adjacency(&self, view: View) -> &Tensor {
        match view {
            View::Con => &self.con,
            View::Dep => &self.dep,
        }
    }
}

/// Positive and negative slots for `anchor`, each sorted.
pub fn label_pos_neg(graph: &DualViewGraph, anchor: Slot) -> (Vec<Slot>, Vec<Slot>) {
    let n = graph.len();
    let adj = graph.adjacency(anchor.view);
    let other = anchor.view.other();
    let i = anchor.node;

    let mut is_pos = vec![false; 2 * n];
    is_pos[Slot::new(other, i).stacked_row(n)] = true;
    for j in (0..n).filter(|&j| j != i && adj.get(i, j) != 0.0) {
        is_pos[Slot::new(anchor.view, j).stacked_row(n)] = true;
        is_pos[Slot::new(other, j).stacked_row(n)] = true;
    }

    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for view in [View::Con, View::Dep] {
        for node in 0..n {
            let s = Slot::new(view, node);
            if s == anchor {
                continue;
            }
            if is_pos[s.stacked_row(n)] {
                pos.push(s);
            } else {
                neg.push(s);
            }
        }
    }
    (pos, neg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorTriplet {
    pub anchor: Slot,
    pub pos: Vec<Slot>,
    pub neg: Vec<Slot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletSet {
    /// Anchors per view.
    pub k: usize,
    pub margin: f64,
    pub triplets: Vec<AnchorTriplet>,
}

/// Labels every anchor index in both views: constituent anchors first.
pub fn build_triplets(graph: &DualViewGraph, anchors: &[usize], margin: f64) -> TripletSet {
    let triplets = [View::Con, View::Dep]
        .into_iter()
        .flat_map(|view| anchors.iter().map(move |&i| Slot::new(view, i)))
        .map(|anchor| {
            let (pos, neg) = label_pos_neg(graph, anchor);
            AnchorTriplet { anchor, pos, neg }
        })
        .collect();
    TripletSet {
        k: anchors.len(),
        margin,
        triplets,
    }
}

/// `sum_anchors relu(mean_pos ||h_a - h_p|| - mean_neg ||h_a - h_q|| + margin)`.
///
/// An empty positive or negative set contributes 0 for its mean.
pub fn triplet_loss(tape: &mut Tape, h_con: Var, h_dep: Var, set: &TripletSet) -> Result<Var> {
    let n = tape.value(h_con).rows();
    if tape.value(h_dep).shape() != tape.value(h_con).shape() {
        return Err(EmgfError::Shape {
            op: "triplet_loss",
            left: tape.value(h_con).shape(),
            right: tape.value(h_dep).shape(),
        });
    }
    if set.triplets.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }

    // One distance row per (anchor, pos|neg slot) pair. `entries` holds
    // (anchor, distance row, weight) with weight +1/|pos| or -1/|neg|, so
    // that mixing the distance column yields mean_pos - mean_neg per anchor.
    let mut anchor_rows = Vec::new();
    let mut other_rows = Vec::new();
    let mut entries = Vec::new();
    for (t, trip) in set.triplets.iter().enumerate() {
        for (group, sign) in [(&trip.pos, 1.0), (&trip.neg, -1.0)] {
            let w = sign / group.len().max(1) as f64;
            for s in group {
                entries.push((t, other_rows.len(), w));
                anchor_rows.push(trip.anchor.stacked_row(n));
                other_rows.push(s.stacked_row(n));
            }
        }
    }

    let total_rows = other_rows.len();
    let num_anchors = set.triplets.len();
    let mut mix = Tensor::zeros(num_anchors, total_rows.max(1));
    for (t, r, w) in entries {
        mix.set(t, r, w);
    }

    let stacked = tape.concat_rows(&[h_con, h_dep])?;
    let hinge_input = if total_rows == 0 {
        tape.constant(Tensor::zeros(num_anchors, 1))
    } else {
        let a = tape.select_rows(stacked, &anchor_rows)?;
        let o = tape.select_rows(stacked, &other_rows)?;
        let diff = tape.sub(a, o)?;
        let dist = tape.l2norm_rows(diff)?;
        let mix = tape.constant(mix);
        tape.matmul(mix, dist)?
    };
    let shifted = tape.add_scalar(hinge_input, set.margin);
    let hinge = tape.relu(shifted);
    tape.sum(hinge)
}
