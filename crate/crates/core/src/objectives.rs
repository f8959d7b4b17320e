//! Decoder likelihood, the sampling objectives and the Adam optimizer.
//!
//! With `l_i = log p(y | z_i, x)` for `T` latent draws and `KL` the
//! recognition divergence, per-example objective values are
//!
//! | kind        | draws        | value                                  |
//! |-------------|--------------|----------------------------------------|
//! | `mc`        | prior        | `logsumexp(l) - log T`                 |
//! | `cvae`      | recognition  | `mean(l) - KL`                         |
//! | `ms`        | recognition  | `logsumexp(l) - log T - KL`            |
//! | `bms`       | recognition  | `max(l) - log T - KL`                  |
//! | `hybrid`    | both         | `(1 - a) mc + a cvae`                  |
//! | `prior_bms` | prior        | `max(l)`                               |
//! | `regression`| none         | `l` (latent-free model, one pass)      |
//!
//! Losses are the negated batch mean of these values.

use crate::error::{Error, Result};
use crate::latent::kl_standard_normal;
use crate::models::{LatentSource, Model, SequenceBatch};
use crate::nn::{Graph, ParamStore};
use crate::tensor::{logsumexp_slice, RngStream, Tensor, Var};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    Mc,
    Cvae,
    Ms,
    Bms,
    Hybrid,
    PriorBms,
    Regression,
}

impl ObjectiveKind {
    pub const ALL: [ObjectiveKind; 7] = [
        ObjectiveKind::Mc,
        ObjectiveKind::Cvae,
        ObjectiveKind::Ms,
        ObjectiveKind::Bms,
        ObjectiveKind::Hybrid,
        ObjectiveKind::PriorBms,
        ObjectiveKind::Regression,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveKind::Mc => "mc",
            ObjectiveKind::Cvae => "cvae",
            ObjectiveKind::Ms => "ms",
            ObjectiveKind::Bms => "bms",
            ObjectiveKind::Hybrid => "hybrid",
            ObjectiveKind::PriorBms => "prior_bms",
            ObjectiveKind::Regression => "regression",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Whether the objective trains the recognition network.
    pub fn uses_recognition(self) -> bool {
        matches!(
            self,
            ObjectiveKind::Cvae | ObjectiveKind::Ms | ObjectiveKind::Bms | ObjectiveKind::Hybrid
        )
    }

    pub fn uses_prior(self) -> bool {
        matches!(
            self,
            ObjectiveKind::Mc | ObjectiveKind::PriorBms | ObjectiveKind::Hybrid
        )
    }
}

/// Isotropic Gaussian decoder likelihood.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodConfig {
    pub sigma_dec: f64,
    pub include_normalizer: bool,
}

impl Default for LikelihoodConfig {
    fn default() -> Self {
        LikelihoodConfig {
            sigma_dec: 1.0,
            include_normalizer: false,
        }
    }
}

impl LikelihoodConfig {
    pub fn eval(sigma: f64) -> Self {
        LikelihoodConfig {
            sigma_dec: sigma,
            include_normalizer: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_dec > 0.0 && self.sigma_dec.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(format!(
                "sigma_dec must be positive, got {}",
                self.sigma_dec
            )))
        }
    }

    fn normalizer(&self, d: usize) -> f64 {
        if self.include_normalizer {
            0.5 * d as f64 * (2.0 * PI * self.sigma_dec * self.sigma_dec).ln()
        } else {
            0.0
        }
    }
}

/// `-||pred - y||^2 / (2 sigma^2)`, minus `D/2 log(2 pi sigma^2)` when the
/// normalizer is on, for each row of `[R, D]` inputs. Returns `[R]`.
pub fn decoder_loglik(
    g: &mut Graph,
    pred: Var,
    target: Var,
    cfg: &LikelihoodConfig,
) -> Result<Var> {
    cfg.validate()?;
    let shape = g.tape.shape(pred).to_vec();
    if shape.len() != 2 || g.tape.shape(target) != shape.as_slice() {
        return Err(Error::shape(
            "decoder_loglik",
            format!("{:?} vs {:?}", shape, g.tape.shape(target)),
        ));
    }
    let d = g.tape.sub(pred, target)?;
    let d = g.tape.square(d)?;
    let s = g.tape.sum_axis(d, 1)?;
    let s = g.tape.scale(s, -0.5 / (cfg.sigma_dec * cfg.sigma_dec))?;
    let c = cfg.normalizer(shape[1]);
    if c == 0.0 {
        Ok(s)
    } else {
        g.tape.offset(s, -c)
    }
}

/// Plain-value counterpart of [`decoder_loglik`] for one flattened sequence.
pub fn decoder_loglik_values(pred: &[f64], target: &[f64], cfg: &LikelihoodConfig) -> Result<f64> {
    cfg.validate()?;
    if pred.len() != target.len() {
        return Err(Error::shape(
            "decoder_loglik",
            format!("{} vs {}", pred.len(), target.len()),
        ));
    }
    let sq: f64 = pred
        .iter()
        .zip(target)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(-sq / (2.0 * cfg.sigma_dec * cfg.sigma_dec) - cfg.normalizer(pred.len()))
}

fn non_empty(l: &[f64]) -> Result<()> {
    if l.is_empty() {
        Err(Error::EmptyInput { op: "objective" })
    } else {
        Ok(())
    }
}

pub fn value_mc(l: &[f64]) -> Result<f64> {
    non_empty(l)?;
    Ok(logsumexp_slice(l).unwrap() - (l.len() as f64).ln())
}

pub fn value_cvae(l: &[f64], kl: f64) -> Result<f64> {
    non_empty(l)?;
    Ok(l.iter().sum::<f64>() / l.len() as f64 - kl)
}

pub fn value_ms(l: &[f64], kl: f64) -> Result<f64> {
    Ok(value_mc(l)? - kl)
}

/// Many-sample value through a direct `log(mean(exp(l)))`; underflows for
/// very negative log-likelihoods, unlike [`value_ms`].
pub fn value_ms_direct(l: &[f64], kl: f64) -> Result<f64> {
    non_empty(l)?;
    let m = l.iter().map(|v| v.exp()).sum::<f64>() / l.len() as f64;
    Ok(m.ln() - kl)
}

/// Index of the first maximal entry.
pub fn argmax(l: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in l.iter().enumerate() {
        if best.is_none_or(|b| v > l[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn value_bms(l: &[f64], kl: f64) -> Result<f64> {
    Ok(value_prior_bms(l)? - (l.len() as f64).ln() - kl)
}

pub fn value_prior_bms(l: &[f64]) -> Result<f64> {
    non_empty(l)?;
    Ok(l[argmax(l).unwrap()])
}

pub fn value_hybrid(mc: f64, cvae: f64, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok((1.0 - alpha) * mc + alpha * cvae)
}

fn check_alpha(alpha: f64) -> Result<()> {
    if (0.0..=1.0).contains(&alpha) {
        Ok(())
    } else {
        Err(Error::InvalidAlpha(alpha))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub kind: ObjectiveKind,
    /// Latent draws per example.
    pub samples: usize,
    pub alpha: f64,
    pub likelihood: LikelihoodConfig,
}

impl ObjectiveConfig {
    pub fn new(kind: ObjectiveKind, samples: usize) -> Self {
        ObjectiveConfig {
            kind,
            samples,
            alpha: 0.5,
            likelihood: LikelihoodConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::InvalidSpec("at least one sample is required".into()));
        }
        if self.kind == ObjectiveKind::Hybrid {
            check_alpha(self.alpha)?;
        }
        self.likelihood.validate()
    }
}

/// Per-example record of one objective evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveReport {
    pub kind: ObjectiveKind,
    /// Log-likelihoods of the objective's main sample set (recognition draws
    /// when the objective uses them, prior draws otherwise).
    pub per_sample_loglik: Vec<f64>,
    /// Prior-draw log-likelihoods of the Monte-Carlo term (hybrid only).
    pub prior_loglik: Option<Vec<f64>>,
    pub kl: Option<f64>,
    pub value: f64,
    pub best_index: Option<usize>,
    pub alpha: Option<f64>,
}

impl ObjectiveReport {
    /// Recomputes the value from the stored terms.
    pub fn recompute(&self) -> Result<f64> {
        let l = &self.per_sample_loglik;
        let kl = self.kl.unwrap_or(0.0);
        match self.kind {
            ObjectiveKind::Mc => value_mc(l),
            ObjectiveKind::Cvae => value_cvae(l, kl),
            ObjectiveKind::Ms => value_ms(l, kl),
            ObjectiveKind::Bms => value_bms(l, kl),
            ObjectiveKind::PriorBms => value_prior_bms(l),
            ObjectiveKind::Regression => value_cvae(l, 0.0),
            ObjectiveKind::Hybrid => {
                let p = self.prior_loglik.as_deref().unwrap_or(&[]);
                value_hybrid(value_mc(p)?, value_cvae(l, kl)?, self.alpha.unwrap_or(0.5))
            }
        }
    }
}

/// Reports for a whole batch; `value` is the mean of per-example values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub kind: ObjectiveKind,
    pub value: f64,
    pub examples: Vec<ObjectiveReport>,
}

impl BatchReport {
    pub fn mean_kl(&self) -> Option<f64> {
        let kls: Vec<f64> = self.examples.iter().filter_map(|e| e.kl).collect();
        (!kls.is_empty()).then(|| kls.iter().sum::<f64>() / kls.len() as f64)
    }

    /// Mean and max over every per-sample log-likelihood in the batch.
    pub fn loglik_stats(&self) -> (f64, f64) {
        let all: Vec<f64> = self
            .examples
            .iter()
            .flat_map(|e| e.per_sample_loglik.iter().copied())
            .collect();
        let mean = all.iter().sum::<f64>() / all.len().max(1) as f64;
        let max = all.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (mean, max)
    }
}

fn rows_of(t: &Tensor, b: usize) -> Vec<Vec<f64>> {
    let per = t.len() / b.max(1);
    t.data().chunks(per.max(1)).map(|c| c.to_vec()).collect()
}

/// Builds the objective on `g` for `batch` and returns the loss node
/// (negated batch mean) with the batch report. Latent noise for the
/// recognition branch comes from `rng.substream(0)` and for the prior branch
/// from `rng.substream(1)`; see [`Model::draw_latent`] for the per-example
/// layout, with `first` the dataset index of the batch's first example.
pub fn objective(
    model: &Model,
    g: &mut Graph,
    batch: &SequenceBatch,
    cfg: &ObjectiveConfig,
    rng: &RngStream,
    first: usize,
) -> Result<(Var, BatchReport)> {
    cfg.validate()?;
    let kind = cfg.kind;
    let regression = kind == ObjectiveKind::Regression;
    if regression == model.has_latent() {
        return Err(Error::InvalidSpec(format!(
            "objective {} does not fit a model {} latent variable",
            kind.name(),
            if model.has_latent() {
                "with a"
            } else {
                "without a"
            }
        )));
    }
    let y = batch.y()?;
    let b = batch.len();
    let t_fut = y.shape()[1];
    let reps = if regression { 1 } else { cfg.samples };
    let ln_t = (reps as f64).ln();
    let ctx = model.encode(g, batch)?;
    let target = g.tape.constant(y.flatten_rows().repeat_rows(reps));

    let loglik = |g: &mut Graph, z: Option<Var>| -> Result<Var> {
        let out = model.decode(g, &ctx, z, reps, t_fut, Some(y))?;
        let l = decoder_loglik(g, out, target, &cfg.likelihood)?;
        g.tape.reshape(l, &[b, reps])
    };

    let mut rec = None;
    if kind.uses_recognition() {
        let (z, lat) = model
            .draw_latent(
                g,
                batch,
                reps,
                &rng.substream(0),
                first,
                LatentSource::Recognition,
            )?
            .expect("latent model");
        let l = loglik(g, Some(z))?;
        let kl = kl_standard_normal(g, lat.expect("recognition draw"))?;
        rec = Some((l, kl));
    }
    let mut prior = None;
    if kind.uses_prior() {
        let z = model
            .draw_latent(
                g,
                batch,
                reps,
                &rng.substream(1),
                first,
                LatentSource::Prior,
            )?
            .map(|(z, _)| z);
        prior = Some(loglik(g, z)?);
    }
    if regression {
        prior = Some(loglik(g, None)?);
    }

    let values = match kind {
        ObjectiveKind::Mc => {
            let s = g.tape.logsumexp_axis(prior.unwrap(), 1)?;
            g.tape.offset(s, -ln_t)?
        }
        ObjectiveKind::PriorBms => g.tape.max_axis(prior.unwrap(), 1)?,
        ObjectiveKind::Regression => g.tape.reshape(prior.unwrap(), &[b])?,
        ObjectiveKind::Cvae | ObjectiveKind::Ms | ObjectiveKind::Bms | ObjectiveKind::Hybrid => {
            let (l, kl) = rec.unwrap();
            let s = match kind {
                ObjectiveKind::Ms => {
                    let s = g.tape.logsumexp_axis(l, 1)?;
                    g.tape.offset(s, -ln_t)?
                }
                ObjectiveKind::Bms => {
                    let s = g.tape.max_axis(l, 1)?;
                    g.tape.offset(s, -ln_t)?
                }
                _ => {
                    let s = g.tape.sum_axis(l, 1)?;
                    g.tape.scale(s, 1.0 / reps as f64)?
                }
            };
            let v = g.tape.sub(s, kl)?;
            if kind == ObjectiveKind::Hybrid {
                let m = g.tape.logsumexp_axis(prior.unwrap(), 1)?;
                let m = g.tape.offset(m, -ln_t)?;
                let m = g.tape.scale(m, 1.0 - cfg.alpha)?;
                let v = g.tape.scale(v, cfg.alpha)?;
                g.tape.add(m, v)?
            } else {
                v
            }
        }
    };
    let mean = g.tape.mean(values)?;
    let loss = g.tape.neg(mean)?;

    let vals = g.value(values).data().to_vec();
    let rec_l = rec.map(|(l, _)| rows_of(g.value(l), b));
    let kls = rec.map(|(_, kl)| g.value(kl).data().to_vec());
    let prior_l = prior.map(|l| rows_of(g.value(l), b));
    let examples = (0..b)
        .map(|i| {
            let (main, prior_loglik) = match (&rec_l, &prior_l) {
                (Some(r), Some(p)) => (r[i].clone(), Some(p[i].clone())),
                (Some(r), None) => (r[i].clone(), None),
                (None, Some(p)) => (p[i].clone(), None),
                (None, None) => unreachable!(),
            };
            let best_index = matches!(kind, ObjectiveKind::Bms | ObjectiveKind::PriorBms)
                .then(|| argmax(&main).unwrap());
            ObjectiveReport {
                kind,
                per_sample_loglik: main,
                prior_loglik,
                kl: kls.as_ref().map(|k| k[i]),
                value: vals[i],
                best_index,
                alpha: (kind == ObjectiveKind::Hybrid).then_some(cfg.alpha),
            }
        })
        .collect();
    Ok((
        loss,
        BatchReport {
            kind,
            value: g.value(mean).item(),
            examples,
        },
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = params
            .entries()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape().to_vec()))
            .collect();
        Adam {
            config,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// Applies one update with learning rate `lr` (use `config.lr` for a
    /// constant schedule).
    pub fn step_with_lr(
        &mut self,
        params: &mut ParamStore,
        grads: &[Tensor],
        lr: f64,
    ) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::shape(
                "adam",
                format!(
                    "{} params, {} grads, {} moments",
                    params.len(),
                    grads.len(),
                    self.m.len()
                ),
            ));
        }
        for ((p, g), m) in params.tensors_mut().zip(grads).zip(&self.m) {
            if p.shape() != g.shape() || p.shape() != m.shape() {
                return Err(Error::shape(
                    "adam",
                    format!("{:?} vs {:?}", p.shape(), g.shape()),
                ));
            }
        }
        self.t += 1;
        let AdamConfig {
            beta1, beta2, eps, ..
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let mh = *mi / c1;
                let vh = *vi / c2;
                *pi -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &[Tensor]) -> Result<()> {
        self.step_with_lr(params, grads, self.config.lr)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn loglik_examples() {
        let off = LikelihoodConfig::default();
        assert_eq!(
            decoder_loglik_values(&[1.0, 2.0], &[1.0, 2.0], &off).unwrap(),
            0.0
        );
        assert_eq!(decoder_loglik_values(&[1.0], &[0.0], &off).unwrap(), -0.5);
        let on = LikelihoodConfig::eval(1.0);
        let v = decoder_loglik_values(&[0.0; 4], &[0.0; 4], &on).unwrap();
        assert!(close(v, -2.0 * (2.0 * PI).ln(), 1e-12));
        assert!(close(v, -3.675754, 1e-6));
        assert!(decoder_loglik_values(&[0.0], &[0.0, 1.0], &off).is_err());
        let bad = LikelihoodConfig {
            sigma_dec: 0.0,
            ..off
        };
        assert!(decoder_loglik_values(&[0.0], &[0.0], &bad).is_err());
    }

    #[test]
    fn loglik_node_matches_values() {
        let store = ParamStore::new();
        let mut g = Graph::frozen(&store);
        let p = Tensor::matrix(2, 3, vec![0.1, -0.2, 0.3, 1.0, 2.0, 3.0]).unwrap();
        let y = Tensor::matrix(2, 3, vec![0.0, 0.0, 0.0, 1.5, 2.0, 2.0]).unwrap();
        let cfg = LikelihoodConfig::eval(0.7);
        let pv = g.tape.constant(p.clone());
        let yv = g.tape.constant(y.clone());
        let l = decoder_loglik(&mut g, pv, yv, &cfg).unwrap();
        for r in 0..2 {
            let want = decoder_loglik_values(p.row(r), y.row(r), &cfg).unwrap();
            assert!(close(g.value(l).data()[r], want, 1e-12));
        }
    }

    #[test]
    fn value_examples() {
        let l = [-1.0, -2.0, -3.0];
        let mc = value_mc(&l).unwrap();
        let want = ((-1f64).exp() + (-2f64).exp() + (-3f64).exp()).ln() - 3f64.ln();
        assert!(close(mc, want, 1e-12));
        assert!(close(mc, -1.691, 1e-3));
        assert_eq!(value_mc(&[-4.5]).unwrap(), -4.5);
        assert!(close(value_mc(&[-7.0; 5]).unwrap(), -7.0, 1e-12));

        assert!(close(value_cvae(&l, 0.2).unwrap(), -2.2, 1e-12));
        assert_eq!(value_cvae(&[-3.0], 0.0).unwrap(), -3.0);

        assert!(close(value_ms(&l, 0.2).unwrap(), -1.891, 1e-3));
        assert_eq!(
            value_ms(&[-3.0], 0.4).unwrap(),
            value_cvae(&[-3.0], 0.4).unwrap()
        );

        assert!(close(
            value_bms(&l, 0.2).unwrap(),
            -1.0 - 3f64.ln() - 0.2,
            1e-12
        ));
        assert!(close(value_bms(&l, 0.2).unwrap(), -2.298612, 1e-6));
        let eq = [-2.5; 4];
        assert!(close(
            value_ms(&eq, 0.1).unwrap() - value_bms(&eq, 0.1).unwrap(),
            4f64.ln(),
            1e-12
        ));
        assert_eq!(
            value_bms(&[-3.0], 0.4).unwrap(),
            value_ms(&[-3.0], 0.4).unwrap()
        );

        assert_eq!(value_hybrid(-2.0, -3.0, 0.5).unwrap(), -2.5);
        assert_eq!(value_hybrid(-2.0, -3.0, 1.0).unwrap(), -3.0);
        assert_eq!(value_hybrid(-2.0, -3.0, 0.0).unwrap(), -2.0);
        assert!(matches!(
            value_hybrid(-2.0, -3.0, 1.5),
            Err(Error::InvalidAlpha(_))
        ));

        assert_eq!(value_prior_bms(&[-4.0, -1.0, -7.0]).unwrap(), -1.0);
        assert_eq!(argmax(&[-4.0, -1.0, -7.0]), Some(1));
        assert_eq!(argmax(&[2.0, 5.0, 5.0]), Some(1));
        let gap = value_prior_bms(&l).unwrap() - value_bms(&l, 0.2).unwrap();
        assert!(close(gap, 3f64.ln() + 0.2, 1e-12));
    }

    #[test]
    fn ms_survives_underflow() {
        let l = [-900.0, -850.0, -1000.0];
        assert!(value_ms(&l, 0.0).unwrap().is_finite());
        assert_eq!(value_ms_direct(&l, 0.0).unwrap(), f64::NEG_INFINITY);
        let l = [-1.5, -0.2, -3.0];
        assert!(close(
            value_ms(&l, 0.3).unwrap(),
            value_ms_direct(&l, 0.3).unwrap(),
            1e-12
        ));
    }

    #[test]
    fn adam_examples() {
        let mut store = ParamStore::new();
        store.add("w", Tensor::vector(vec![1.0, -2.0]));
        let mut opt = Adam::new(AdamConfig::default(), &store);
        opt.step(&mut store, &[Tensor::zeros(vec![2])]).unwrap();
        assert_eq!(store.entries()[0].1.data(), &[1.0, -2.0]);

        let mut opt = Adam::new(AdamConfig::default(), &store);
        opt.step(&mut store, &[Tensor::vector(vec![0.5, -3.0])])
            .unwrap();
        let p = store.entries()[0].1.data();
        assert!(close(p[0], 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8), 1e-15));
        assert!(close(p[1], -2.0 + 1e-3 * 3.0 / (3.0 + 1e-8), 1e-15));
        assert!(opt.step(&mut store, &[Tensor::zeros(vec![3])]).is_err());
    }
}
