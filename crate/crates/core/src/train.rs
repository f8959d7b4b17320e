//! Minibatch training with Adam.

use crate::error::{Error, Result};
use crate::models::{Model, SequenceBatch};
use crate::nn::Graph;
use crate::objectives::{objective, Adam, AdamConfig, BatchReport, ObjectiveConfig};
use crate::tensor::RngStream;
use serde::{Deserialize, Serialize};

pub const STREAM_BATCHES: u64 = 0x20;
pub const STREAM_OBJECTIVE: u64 = 0x21;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Cosine decay from the base rate to `final_frac` times it.
    Cosine {
        final_frac: f64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: ObjectiveConfig,
    pub steps: usize,
    pub batch: usize,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    /// Rescale gradients whose global norm exceeds this value.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(objective: ObjectiveConfig, steps: usize, batch: usize, seed: u64) -> Self {
        TrainConfig {
            objective,
            steps,
            batch,
            adam: AdamConfig::default(),
            schedule: LrSchedule::Constant,
            clip_norm: None,
            seed,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.adam.lr,
            LrSchedule::Cosine { final_frac } => {
                let p = step as f64 / self.steps.max(1) as f64;
                let w = 0.5 * (1.0 + (std::f64::consts::PI * p).cos());
                self.adam.lr * (final_frac + (1.0 - final_frac) * w)
            }
        }
    }
}

/// One logged optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub value: f64,
    pub kl: Option<f64>,
    pub loglik_mean: f64,
    pub loglik_max: f64,
}

impl StepRecord {
    pub fn from_report(step: usize, r: &BatchReport) -> Self {
        let (loglik_mean, loglik_max) = r.loglik_stats();
        StepRecord {
            step,
            value: r.value,
            kl: r.mean_kl(),
            loglik_mean,
            loglik_max,
        }
    }
}

/// Draws minibatch indices: a fresh permutation per epoch.
#[derive(Clone, Debug)]
pub struct BatchSampler {
    n: usize,
    rng: RngStream,
    order: Vec<usize>,
    pos: usize,
}

impl BatchSampler {
    pub fn new(n: usize, seed: u64) -> Self {
        BatchSampler {
            n,
            rng: RngStream::new(seed, STREAM_BATCHES),
            order: Vec::new(),
            pos: n,
        }
    }

    pub fn next(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size.min(self.n) {
            if self.pos >= self.order.len() {
                self.order = (0..self.n).collect();
                self.rng.shuffle(&mut self.order);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Runs one optimizer step on `batch`; parameters are left untouched when
/// the loss or any gradient is non-finite.
pub fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    batch: &SequenceBatch,
    cfg: &TrainConfig,
    step: usize,
) -> Result<BatchReport> {
    let rng = RngStream::new(cfg.seed, STREAM_OBJECTIVE).substream(step as u64);
    let mut g = Graph::new(&model.params);
    let (loss, report) = objective(model, &mut g, batch, &cfg.objective, &rng, 0)?;
    let mut grads = g.backward(loss)?;
    if !g.value(loss).is_finite() || grads.iter().any(|t| !t.is_finite()) {
        return Err(Error::NonFinite { op: "train_step" });
    }
    if let Some(max) = cfg.clip_norm {
        let norm = grads
            .iter()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > max {
            let s = max / norm;
            for t in &mut grads {
                t.data_mut().iter_mut().for_each(|v| *v *= s);
            }
        }
    }
    opt.step_with_lr(&mut model.params, &grads, cfg.lr_at(step))?;
    Ok(report)
}

/// Trains `model` on `data` for `cfg.steps` steps. `on_step` sees every
/// record and the current model, for logging and checkpointing.
pub fn train(
    model: &mut Model,
    data: &SequenceBatch,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(&StepRecord, &Model) -> Result<()>,
) -> Result<Vec<StepRecord>> {
    cfg.objective.validate()?;
    if cfg.batch == 0 || data.is_empty() {
        return Err(Error::InvalidSpec(
            "batch size and dataset must be non-empty".into(),
        ));
    }
    let mut opt = Adam::new(cfg.adam, &model.params);
    let mut sampler = BatchSampler::new(data.len(), cfg.seed);
    let mut log = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let idx = sampler.next(cfg.batch);
        let batch = data.select(&idx);
        let report = train_step(model, &mut opt, &batch, cfg, step)?;
        let rec = StepRecord::from_report(step, &report);
        on_step(&rec, model)?;
        log.push(rec);
    }
    Ok(log)
}
