//! Dense `f64` matrices and a reverse-mode tape over them.

mod dense;
pub mod gradcheck;
mod params;
mod tape;

pub use dense::Tensor;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport, ParamCheck};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var, DIV_EPS};
