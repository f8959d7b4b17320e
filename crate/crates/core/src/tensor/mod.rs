//! Dense tensors, a reverse-mode differentiation tape, deterministic random
//! streams and a finite-difference gradient checker.

mod gradcheck;
mod rng;
mod tape;
mod value;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, ParamCheck};
pub use rng::RngStream;
pub use tape::{Padding, Tape, Var, OP_NAMES};
pub use value::Tensor;

/// Numerically stable log-sum-exp of a slice of plain values.
pub fn logsumexp_slice(v: &[f64]) -> Option<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if v.is_empty() {
        return None;
    }
    if m == f64::NEG_INFINITY {
        return Some(m);
    }
    Some(m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln())
}
