//! Reverse-mode gradient tape.
//!
//! Every operation appends a node holding its forward value and the ids of
//! its inputs. `backward` walks the node list from the end, so operations
//! are replayed in exact reverse execution order. A fresh tape is built for
//! each training step; parameters enter as leaves linked to a
//! [`ParamStore`] slot and their gradients are copied back after the pass.

use rand::Rng;

use super::dense::Tensor;
use super::params::{ParamId, ParamStore};
use crate::error::{EmgfError, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Denominators below this magnitude make [`Tape::div_or_zero`] output zero.
pub const DIV_EPS: f64 = 1e-24;

#[derive(Debug, Clone)]
enum Op {
    Leaf { param: Option<ParamId> },
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    ScaleRows(Var, Var),
    SoftmaxRows(Var),
    MeanRows(Var),
    MeanAll(Var),
    Sum(Var),
    L2NormRows(Var),
    RowsDot(Var, Var),
    DivOrZero(Var, Var),
    SelectRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    Pick(Var, usize, usize),
    LnClamped(Var, f64),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Relu(..) => "relu",
            Op::AddRow(..) => "add_row",
            Op::MulRow(..) => "mul_row",
            Op::ScaleRows(..) => "scale_rows",
            Op::SoftmaxRows(..) => "softmax_rows",
            Op::MeanRows(..) => "mean_rows",
            Op::MeanAll(..) => "mean_all",
            Op::Sum(..) => "sum",
            Op::L2NormRows(..) => "l2norm_rows",
            Op::RowsDot(..) => "rows_dot",
            Op::DivOrZero(..) => "div_or_zero",
            Op::SelectRows(..) => "select_rows",
            Op::ConcatRows(..) => "concat_rows",
            Op::Pick(..) => "pick",
            Op::LnClamped(..) => "ln_clamped",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<[usize; 2]>,
    visited: Vec<usize>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`; zeros when `v` is unreachable or constant.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    /// Node indices whose backward rule ran, in the order they ran.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> EmgfError {
    EmgfError::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn clear(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// A constant leaf (no gradient).
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { param: None }, false)
    }

    /// A free leaf that receives gradients but is not tied to a parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf { param: None }, true)
    }

    /// Leaf holding a copy of a stored parameter.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let p = store.get(id);
        let frozen = p.frozen;
        self.push(p.value.clone(), Op::Leaf { param: Some(id) }, !frozen)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(value, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        let rg = self.rg(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        let rg = self.rg(&[a]);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Adds a `1×d` row vector to every row of an `n×d` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("add_row", av, rv));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, &b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *x += b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// Multiplies every row of an `n×d` matrix elementwise by a `1×d` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.rows() != 1 || rv.cols() != av.cols() {
            return Err(shape_err("mul_row", av, rv));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            for (x, &b) in value.row_mut(r).iter_mut().zip(rv.data()) {
                *x *= b;
            }
        }
        let rg = self.rg(&[a, row]);
        Ok(self.push(value, Op::MulRow(a, row), rg))
    }

    /// Scales row `i` of an `n×d` matrix by entry `i` of an `n×1` column.
    pub fn scale_rows(&mut self, a: Var, col: Var) -> Result<Var> {
        let (av, cv) = (self.value(a), self.value(col));
        if cv.cols() != 1 || cv.rows() != av.rows() {
            return Err(shape_err("scale_rows", av, cv));
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            let s = cv.get(r, 0);
            value.row_mut(r).iter_mut().for_each(|x| *x *= s);
        }
        let rg = self.rg(&[a, col]);
        Ok(self.push(value, Op::ScaleRows(a, col), rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if !av.is_finite() {
            return Err(EmgfError::NonFinite { op: "softmax_rows" });
        }
        let mut value = av.clone();
        for r in 0..value.rows() {
            let row = value.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SoftmaxRows(a), rg))
    }

    /// Per-row mean, `n×d → n×1`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(EmgfError::Empty { op: "mean_rows" });
        }
        let cols = av.cols() as f64;
        let data = (0..av.rows()).map(|r| av.row(r).iter().sum::<f64>() / cols).collect();
        let value = Tensor::from_vec(av.rows(), 1, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MeanRows(a), rg))
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(EmgfError::Empty { op: "mean_all" });
        }
        let value = Tensor::scalar(av.sum() / av.len() as f64);
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::MeanAll(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(EmgfError::Empty { op: "sum" });
        }
        let value = Tensor::scalar(av.sum());
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Sum(a), rg))
    }

    /// Euclidean norm of each row, `n×d → n×1`. The gradient at a zero row is zero.
    pub fn l2norm_rows(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.is_empty() {
            return Err(EmgfError::Empty { op: "l2norm_rows" });
        }
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        let value = Tensor::from_vec(av.rows(), 1, data)?;
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::L2NormRows(a), rg))
    }

    /// Row-wise inner product, `n×d, n×d → n×1`.
    pub fn rows_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("rows_dot", av, bv));
        }
        let data = (0..av.rows())
            .map(|r| av.row(r).iter().zip(bv.row(r)).map(|(x, y)| x * y).sum())
            .collect();
        let value = Tensor::from_vec(av.rows(), 1, data)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::RowsDot(a, b), rg))
    }

    /// Elementwise `a / b`, yielding 0 (with zero gradient) where `|b| < DIV_EPS`.
    pub fn div_or_zero(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "div_or_zero", |x, y| {
            if y.abs() < DIV_EPS {
                0.0
            } else {
                x / y
            }
        })?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, Op::DivOrZero(a, b), rg))
    }

    /// Gathers rows by index; repeated indices are allowed.
    pub fn select_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(EmgfError::Shape {
                op: "select_rows",
                left: av.shape(),
                right: [bad, 0],
            });
        }
        let mut value = Tensor::zeros(idx.len(), av.cols());
        for (k, &i) in idx.iter().enumerate() {
            value.row_mut(k).copy_from_slice(av.row(i));
        }
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::SelectRows(a, idx.to_vec()), rg))
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(EmgfError::Empty { op: "concat_rows" })?;
        let cols = self.value(*first).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return Err(shape_err("concat_rows", self.value(*first), pv));
            }
            data.extend_from_slice(pv.data());
            rows += pv.rows();
        }
        let value = Tensor::from_vec(rows, cols, data)?;
        let rg = self.rg(parts);
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Single entry as a `1×1` tensor.
    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let av = self.value(a);
        if r >= av.rows() || c >= av.cols() {
            return Err(EmgfError::Shape {
                op: "pick",
                left: av.shape(),
                right: [r, c],
            });
        }
        let value = Tensor::scalar(av.get(r, c));
        let rg = self.rg(&[a]);
        Ok(self.push(value, Op::Pick(a, r, c), rg))
    }

    /// `ln(max(a, floor))` elementwise; no gradient flows through clamped entries.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Var {
        let value = self.value(a).map(|x| x.max(floor).ln());
        let rg = self.rg(&[a]);
        self.push(value, Op::LnClamped(a, floor), rg)
    }

    /// Inverted dropout: keeps each entry with probability `1 - p` and
    /// rescales survivors by `1 / (1 - p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        let [r, c] = self.value(a).shape();
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = self.constant(Tensor::from_vec(r, c, mask)?);
        self.mul(a, mask)
    }

    /// `ℓ2`-normalizes each row; zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let norms = self.l2norm_rows(a)?;
        let [n, _] = self.value(norms).shape();
        let ones = self.constant(Tensor::ones(n, 1));
        let inv = self.div_or_zero(ones, norms)?;
        self.scale_rows(a, inv)
    }

    /// Mean over rows, `n×d → 1×d`.
    pub fn mean_over_rows(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).rows();
        if n == 0 {
            return Err(EmgfError::Empty { op: "mean_over_rows" });
        }
        let avg = self.constant(Tensor::full(1, n, 1.0 / n as f64));
        self.matmul(avg, a)
    }

    /// Sum of several same-shape vars.
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or(EmgfError::Empty { op: "add_all" })?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// Backpropagates from a scalar `loss` with upstream gradient `seed`.
    pub fn backward_with_seed(&self, loss: Var, seed: f64) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.shape() != [1, 1] {
            return Err(EmgfError::Shape {
                op: "backward",
                left: lv.shape(),
                right: [1, 1],
            });
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(seed));
        let mut visited = Vec::new();

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            visited.push(idx);
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            visited,
        })
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.backward_with_seed(loss, 1.0)
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf { .. } => {}
            &Op::MatMul(a, b) => {
                if self.nodes[a.0].requires_grad {
                    let ga = g.matmul(&val(b).transpose()).expect("matmul grad shape");
                    self.accumulate(grads, a, ga);
                }
                if self.nodes[b.0].requires_grad {
                    let gb = val(a).transpose().matmul(g).expect("matmul grad shape");
                    self.accumulate(grads, b, gb);
                }
            }
            &Op::Transpose(a) => self.accumulate(grads, a, g.transpose()),
            &Op::Add(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.clone());
            }
            &Op::Sub(a, b) => {
                self.accumulate(grads, a, g.clone());
                self.accumulate(grads, b, g.map(|x| -x));
            }
            &Op::Mul(a, b) => {
                let ga = g.zip_map(val(b), "mul", |x, y| x * y).expect("same shape");
                let gb = g.zip_map(val(a), "mul", |x, y| x * y).expect("same shape");
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            &Op::Scale(a, s) => self.accumulate(grads, a, g.map(|x| x * s)),
            &Op::AddScalar(a) => self.accumulate(grads, a, g.clone()),
            &Op::Relu(a) => {
                let ga = g
                    .zip_map(val(a), "relu", |x, inp| if inp > 0.0 { x } else { 0.0 })
                    .expect("same shape");
                self.accumulate(grads, a, ga);
            }
            &Op::AddRow(a, row) => {
                self.accumulate(grads, a, g.clone());
                let mut gr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (acc, &x) in gr.data_mut().iter_mut().zip(g.row(r)) {
                        *acc += x;
                    }
                }
                self.accumulate(grads, row, gr);
            }
            &Op::MulRow(a, row) => {
                let (av, rv) = (val(a), val(row));
                let mut ga = g.clone();
                let mut gr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for c in 0..g.cols() {
                        ga.set(r, c, g.get(r, c) * rv.get(0, c));
                        gr.data_mut()[c] += g.get(r, c) * av.get(r, c);
                    }
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, row, gr);
            }
            &Op::ScaleRows(a, col) => {
                let (av, cv) = (val(a), val(col));
                let mut ga = g.clone();
                let mut gc = Tensor::zeros(g.rows(), 1);
                for r in 0..g.rows() {
                    let s = cv.get(r, 0);
                    let mut acc = 0.0;
                    for c in 0..g.cols() {
                        ga.set(r, c, g.get(r, c) * s);
                        acc += g.get(r, c) * av.get(r, c);
                    }
                    gc.set(r, 0, acc);
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, col, gc);
            }
            &Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(x, p)| x * p).sum();
                    for c in 0..y.cols() {
                        ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                    }
                }
                self.accumulate(grads, a, ga);
            }
            &Op::MeanRows(a) => {
                let av = val(a);
                let inv = 1.0 / av.cols() as f64;
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let gr = g.get(r, 0) * inv;
                    ga.row_mut(r).iter_mut().for_each(|x| *x = gr);
                }
                self.accumulate(grads, a, ga);
            }
            &Op::MeanAll(a) => {
                let av = val(a);
                let ga = Tensor::full(av.rows(), av.cols(), g.item() / av.len() as f64);
                self.accumulate(grads, a, ga);
            }
            &Op::Sum(a) => {
                let av = val(a);
                self.accumulate(grads, a, Tensor::full(av.rows(), av.cols(), g.item()));
            }
            &Op::L2NormRows(a) => {
                let av = val(a);
                let norms = &node.value;
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let nrm = norms.get(r, 0);
                    if nrm > 0.0 {
                        let k = g.get(r, 0) / nrm;
                        for (o, &x) in ga.row_mut(r).iter_mut().zip(av.row(r)) {
                            *o = k * x;
                        }
                    }
                }
                self.accumulate(grads, a, ga);
            }
            &Op::RowsDot(a, b) => {
                let (av, bv) = (val(a), val(b));
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                let mut gb = Tensor::zeros(av.rows(), av.cols());
                for r in 0..av.rows() {
                    let k = g.get(r, 0);
                    for c in 0..av.cols() {
                        ga.set(r, c, k * bv.get(r, c));
                        gb.set(r, c, k * av.get(r, c));
                    }
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            &Op::DivOrZero(a, b) => {
                let (av, bv) = (val(a), val(b));
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                let mut gb = Tensor::zeros(av.rows(), av.cols());
                for i in 0..av.len() {
                    let y = bv.data()[i];
                    if y.abs() >= DIV_EPS {
                        ga.data_mut()[i] = g.data()[i] / y;
                        gb.data_mut()[i] = -g.data()[i] * av.data()[i] / (y * y);
                    }
                }
                self.accumulate(grads, a, ga);
                self.accumulate(grads, b, gb);
            }
            Op::SelectRows(a, idx) => {
                let av = val(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &x) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += x;
                    }
                }
                self.accumulate(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let [r, c] = val(p).shape();
                    let slice = g.data()[offset * c..(offset + r) * c].to_vec();
                    offset += r;
                    let gp = Tensor::from_vec(r, c, slice).expect("concat grad shape");
                    self.accumulate(grads, p, gp);
                }
            }
            &Op::Pick(a, r, c) => {
                let av = val(a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                ga.set(r, c, g.item());
                self.accumulate(grads, a, ga);
            }
            &Op::LnClamped(a, floor) => {
                let ga = g
                    .zip_map(val(a), "ln", |x, inp| if inp > floor { x / inp } else { 0.0 })
                    .expect("same shape");
                self.accumulate(grads, a, ga);
            }
        }
    }

    /// Adds the gradients of every parameter leaf into the store's grad buffers.
    pub fn accumulate_param_grads(&self, grads: &Gradients, store: &mut ParamStore) {
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(id) } = node.op {
                if let Some(g) = &grads.grads[idx] {
                    store.get_mut(id).grad.add_assign(g);
                }
            }
        }
    }
}
