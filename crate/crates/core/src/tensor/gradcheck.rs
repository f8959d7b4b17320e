//! Central finite-difference verification of tape gradients.

use super::rng::RngStream;
use super::tape::{Tape, Var};
use super::value::Tensor;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    /// Finite-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Denominator floor of the relative error,
    /// `|tape - fd| / max(|tape|, |fd|, floor)`.
    pub floor: f64,
    /// Check at most this many randomly chosen entries per parameter.
    pub max_entries: Option<usize>,
    pub seed: u64,
    /// Op whose backward rule is deliberately broken on the analytic pass.
    pub fault: Option<String>,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-5,
            tol: 1e-4,
            floor: 1e-4,
            max_entries: None,
            seed: 0,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<(usize, f64, f64)>,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tol: f64,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_rel_err() <= self.tol
    }
}

/// Compares tape gradients of `f` against central differences for every
/// parameter in `params`. `f` receives a fresh tape and the parameter
/// variables in order, and must be deterministic.
pub fn grad_check<F>(
    f: F,
    params: &[(String, Tensor)],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    if let Some(op) = &cfg.fault {
        tape.inject_fault(op);
    }
    let vars: Vec<Var> = params.iter().map(|(_, t)| tape.param(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(v, (_, t))| {
            tape.grad(*v)
                .unwrap_or_else(|| Tensor::zeros(t.shape().to_vec()))
        })
        .collect();

    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item())
    };

    let mut rng = RngStream::new(cfg.seed, 0x6772_6164);
    let mut values: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let mut report = Vec::with_capacity(params.len());
    for (p, (name, t)) in params.iter().enumerate() {
        let mut idx: Vec<usize> = (0..t.len()).collect();
        if let Some(k) = cfg.max_entries {
            if k < idx.len() {
                rng.shuffle(&mut idx);
                idx.truncate(k);
                idx.sort_unstable();
            }
        }
        let mut check = ParamCheck {
            name: name.clone(),
            checked: idx.len(),
            max_rel_err: 0.0,
            worst: None,
        };
        for &i in &idx {
            let orig = values[p].data()[i];
            values[p].data_mut()[i] = orig + cfg.h;
            let up = eval(&values)?;
            values[p].data_mut()[i] = orig - cfg.h;
            let down = eval(&values)?;
            values[p].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * cfg.h);
            let tape_g = analytic[p].data()[i];
            let rel = (tape_g - fd).abs() / tape_g.abs().max(fd.abs()).max(cfg.floor);
            if rel > check.max_rel_err || check.worst.is_none() {
                check.max_rel_err = check.max_rel_err.max(rel);
                check.worst = Some((i, tape_g, fd));
            }
        }
        report.push(check);
    }
    Ok(GradCheckReport {
        params: report,
        tol: cfg.tol,
    })
}
