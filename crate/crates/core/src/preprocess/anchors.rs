use crate::error::{EmgfError, Result};
use crate::tensor::Tensor;

/// Anchors per view: `clamp(round(c · (ln n)²), 1, n)`.
pub fn anchor_count(n: usize, c: f64) -> usize {
    if n == 0 {
        return 0;
    }
    let ln = (n as f64).ln();
    let k = (c * ln * ln).round();
    (k.max(1.0) as usize).min(n)
}

/// Per-node score: mean plus max of the node's attention row.
pub fn anchor_scores(a_sem: &Tensor) -> Vec<f64> {
    (0..a_sem.rows())
        .map(|r| {
            let row = a_sem.row(r);
            let mean = row.iter().sum::<f64>() / row.len() as f64;
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            mean + max
        })
        .collect()
}

/// Indices of the `k` largest scores, highest first; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

pub fn select_anchors(a_sem: &Tensor, c: f64) -> Result<Vec<usize>> {
    let n = a_sem.rows();
    if n == 0 {
        return Err(EmgfError::Empty { op: "select_anchors" });
    }
    Ok(top_k(&anchor_scores(a_sem), anchor_count(n, c)))
}
