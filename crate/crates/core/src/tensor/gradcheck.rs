//! Central-difference gradient checking against the tape.

use super::dense::Tensor;
use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use crate::error::{EmgfError, Result};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub tol: f64,
    /// Denominator floor for the relative error, so that gradients that
    /// are zero in both routes do not divide by zero.
    pub abs_floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-6,
        }
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub id: ParamId,
    pub name: String,
    pub max_rel_error: f64,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// Largest analytic gradient magnitude; zero means no gradient reached it.
    pub grad_max_abs: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_error() < self.tol
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.max_rel_error >= self.tol)
    }

    /// Worst check per group, where the group is the parameter name up to
    /// the first `/` (the whole name when there is none). Groups keep first-seen order.
    pub fn by_group(&self) -> Vec<(String, &ParamCheck)> {
        let mut out: Vec<(String, &ParamCheck)> = Vec::new();
        for p in &self.params {
            let group = p.name.split('/').next().unwrap_or(&p.name).to_string();
            match out.iter_mut().find(|(g, _)| *g == group) {
                Some((_, worst)) => {
                    if p.max_rel_error > worst.max_rel_error {
                        *worst = p;
                    }
                }
                None => out.push((group, p)),
            }
        }
        out
    }
}

fn eval_scalar<F>(store: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(store, &mut tape)?;
    let v = tape.value(out);
    if v.shape() != [1, 1] {
        return Err(EmgfError::Shape {
            op: "grad_check",
            left: v.shape(),
            right: [1, 1],
        });
    }
    Ok(v.item())
}

/// Analytic gradients of `f` for every parameter in `store`.
pub fn analytic_grads<F>(store: &ParamStore, f: &F) -> Result<Vec<Tensor>>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let out = f(store, &mut tape)?;
    let grads = tape.backward(out).map_err(|_| EmgfError::Shape {
        op: "grad_check",
        left: tape.value(out).shape(),
        right: [1, 1],
    })?;
    let mut scratch = store.clone();
    scratch.zero_grad();
    tape.accumulate_param_grads(&grads, &mut scratch);
    Ok(scratch.iter().map(|(_, p)| p.grad.clone()).collect())
}

/// Compares tape gradients of the scalar function `f` against central
/// differences `(f(x+eps) - f(x-eps)) / (2 eps)` for every element of
/// every non-frozen parameter selected by `filter`.
pub fn grad_check<F>(
    store: &ParamStore,
    f: F,
    opts: GradCheckOptions,
    filter: impl Fn(&str) -> bool,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<Var>,
{
    let analytic = analytic_grads(store, &f)?;
    let mut work = store.clone();
    let mut params = Vec::new();

    for id in store.ids() {
        let p = store.get(id);
        if p.frozen || !filter(&p.name) {
            continue;
        }
        let mut check = ParamCheck {
            id,
            name: p.name.clone(),
            max_rel_error: 0.0,
            worst_index: 0,
            analytic: 0.0,
            numeric: 0.0,
            grad_max_abs: analytic[id.index()].max_abs(),
        };
        for i in 0..p.value.len() {
            let orig = p.value.data()[i];
            work.get_mut(id).value.data_mut()[i] = orig + opts.eps;
            let plus = eval_scalar(&work, &f)?;
            work.get_mut(id).value.data_mut()[i] = orig - opts.eps;
            let minus = eval_scalar(&work, &f)?;
            work.get_mut(id).value.data_mut()[i] = orig;

            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic[id.index()].data()[i];
            let err = relative_error(a, numeric, opts.abs_floor);
            if i == 0 || err > check.max_rel_error {
                check.max_rel_error = err;
                check.worst_index = i;
                check.analytic = a;
                check.numeric = numeric;
            }
        }
        params.push(check);
    }

    Ok(GradCheckReport {
        params,
        tol: opts.tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, t);
        (s, id)
    }

    #[test]
    fn linear_function_is_near_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (store, id) = store_with("w", Tensor::randn(3, 3, 1.0, &mut rng));
        let c = Tensor::randn(3, 3, 1.0, &mut rng);
        let report = grad_check(
            &store,
            |s, tape| {
                let w = tape.param(s, id);
                let k = tape.constant(c.clone());
                let p = tape.mul(w, k)?;
                tape.sum(p)
            },
            GradCheckOptions::default(),
            |_| true,
        )
        .unwrap();
        assert!(report.max_rel_error() < 1e-9, "{report:?}");
    }

    #[test]
    fn relu_away_from_kink_passes() {
        let (store, id) = store_with(
            "x",
            Tensor::from_rows(&[vec![0.5, -0.7, 1.3, -2.0]]).unwrap(),
        );
        let report = grad_check(
            &store,
            |s, tape| {
                let x = tape.param(s, id);
                let r = tape.relu(x);
                let sq = tape.mul(r, r)?;
                tape.sum(sq)
            },
            GradCheckOptions::default(),
            |_| true,
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn non_scalar_output_is_an_error() {
        let (store, id) = store_with("x", Tensor::ones(2, 2));
        let res = grad_check(
            &store,
            |s, tape| Ok(tape.param(s, id)),
            GradCheckOptions::default(),
            |_| true,
        );
        assert!(res.is_err());
    }

    #[test]
    fn groups_split_on_slash() {
        let mut store = ParamStore::new();
        let a = store.add("gcn/w0", Tensor::ones(1, 2));
        let b = store.add("gcn/w1", Tensor::ones(1, 2));
        let c = store.add("head/w", Tensor::ones(1, 2));
        let report = grad_check(
            &store,
            |s, tape| {
                let vars = [tape.param(s, a), tape.param(s, b), tape.param(s, c)];
                let x = tape.add_all(&vars)?;
                let sq = tape.mul(x, x)?;
                tape.sum(sq)
            },
            GradCheckOptions::default(),
            |_| true,
        )
        .unwrap();
        let groups: Vec<_> = report.by_group().into_iter().map(|(g, _)| g).collect();
        assert_eq!(groups, vec!["gcn", "head"]);
    }
}
