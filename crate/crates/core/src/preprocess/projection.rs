//! Orthogonal projection of syntactic features away from semantic ones.

use crate::error::Result;
use crate::tensor::{Tape, Var};

/// Directions with norm below this are treated as degenerate.
pub const MIN_NORM: f64 = 1e-12;

/// Component of `x` along `y`: `(x·y / |y|) · y / |y|`; zero when `|y| < MIN_NORM`.
pub fn project(x: &[f64], y: &[f64]) -> Vec<f64> {
    let yy: f64 = y.iter().map(|v| v * v).sum();
    if yy.sqrt() < MIN_NORM {
        return vec![0.0; x.len()];
    }
    let xy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let coef = xy / yy;
    y.iter().map(|v| coef * v).collect()
}

/// Row-wise [`project`] on the tape.
pub fn project_rows(tape: &mut Tape, x: Var, y: Var) -> Result<Var> {
    let xy = tape.rows_dot(x, y)?;
    let yy = tape.rows_dot(y, y)?;
    // |y| < 1e-12  <=>  y·y < 1e-24 = DIV_EPS
    let coef = tape.div_or_zero(xy, yy)?;
    tape.scale_rows(y, coef)
}

/// Removes from each row of `h_syn` its component along the matching row of
/// `h_sem`, as the double projection `Proj(x, x - Proj(x, y))`.
pub fn purify(tape: &mut Tape, h_syn: Var, h_sem: Var) -> Result<Var> {
    let along = project_rows(tape, h_syn, h_sem)?;
    let residual = tape.sub(h_syn, along)?;
    project_rows(tape, h_syn, residual)
}
