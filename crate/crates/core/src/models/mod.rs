//! Assembled conditional generative models: the trajectory predictor (with an
//! optional scene encoder) and the Conv-LSTM image sequence predictor.

mod batch;
mod image;
mod trajectory;

pub use batch::{DataKind, SequenceBatch};
pub use image::{ImageSeqConfig, ImageSeqModel};
pub use trajectory::{TrajectoryConfig, TrajectoryModel, VisualConfig};

use crate::error::{Error, Result};
use crate::latent::{reparameterize, row_noise, GaussianLatent};
use crate::nn::{Graph, ParamStore};
use crate::objectives::{decoder_loglik_values, LikelihoodConfig};
use crate::tensor::{RngStream, Tensor, Var};
use serde::{Deserialize, Serialize};

/// Stream id used to draw initial parameters from the model seed.
pub const INIT_STREAM: u64 = 0x1;

/// Encoder output for a batch.
#[derive(Clone, Copy, Debug)]
pub struct Context {
    /// Summary of the observed sequence: `[B, H]` or `[B, F, h, w]`.
    pub v: Var,
    /// Last observed step (trajectory models only).
    pub last: Option<Var>,
    /// Scene summary (visual models only).
    pub visual: Option<Var>,
    pub rows: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelConfig {
    Trajectory(TrajectoryConfig),
    Image(ImageSeqConfig),
}

impl ModelConfig {
    pub fn data_kind(&self) -> DataKind {
        match self {
            ModelConfig::Trajectory(_) => DataKind::Trajectory,
            ModelConfig::Image(_) => DataKind::Image,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Trajectory(c) if c.visual.is_some() => "visual_trajectory",
            ModelConfig::Trajectory(_) => "trajectory",
            ModelConfig::Image(_) => "image_seq",
        }
    }
}

#[derive(Clone, Debug)]
enum Net {
    Traj(TrajectoryModel),
    Image(ImageSeqModel),
}

/// Where latent samples come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LatentSource {
    Prior,
    Recognition,
}

/// A model architecture together with its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    pub params: ParamStore,
    net: Net,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = RngStream::new(seed, INIT_STREAM);
        let mut params = ParamStore::new();
        let net = match &config {
            ModelConfig::Trajectory(c) => {
                Net::Traj(TrajectoryModel::new(&mut params, c.clone(), &mut rng)?)
            }
            ModelConfig::Image(c) => {
                Net::Image(ImageSeqModel::new(&mut params, c.clone(), &mut rng)?)
            }
        };
        Ok(Model {
            config,
            params,
            net,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kind(&self) -> DataKind {
        self.config.data_kind()
    }

    pub fn trajectory(&self) -> Option<&TrajectoryModel> {
        match &self.net {
            Net::Traj(m) => Some(m),
            Net::Image(_) => None,
        }
    }

    pub fn image(&self) -> Option<&ImageSeqModel> {
        match &self.net {
            Net::Image(m) => Some(m),
            Net::Traj(_) => None,
        }
    }

    /// Per-example latent shape; empty when the model has no latent.
    pub fn latent_dims(&self) -> Vec<usize> {
        match &self.config {
            ModelConfig::Trajectory(c) if c.latent > 0 => vec![c.latent],
            ModelConfig::Image(c) if c.latent > 0 => vec![c.latent, c.bottleneck(), c.bottleneck()],
            _ => vec![],
        }
    }

    pub fn has_latent(&self) -> bool {
        !self.latent_dims().is_empty()
    }

    pub fn encode(&self, g: &mut Graph, batch: &SequenceBatch) -> Result<Context> {
        if batch.kind() != self.kind() {
            return Err(Error::InvalidSpec(format!(
                "{:?} model given {:?} data",
                self.kind(),
                batch.kind()
            )));
        }
        match &self.net {
            Net::Traj(m) => m.encode(g, batch),
            Net::Image(m) => m.encode(g, batch),
        }
    }

    /// Decodes `t_fut` steps for each context row repeated `reps` times;
    /// output rows are `[B * reps, t_fut * frame]` with row `b * reps + s`.
    /// `teacher` is the ground-truth future, used only when the model is
    /// configured for teacher forcing.
    pub fn decode(
        &self,
        g: &mut Graph,
        ctx: &Context,
        z: Option<Var>,
        reps: usize,
        t_fut: usize,
        teacher: Option<&Tensor>,
    ) -> Result<Var> {
        match &self.net {
            Net::Traj(m) => m.decode(g, ctx, z, reps, t_fut, teacher),
            Net::Image(m) => m.decode(g, ctx, z, reps, t_fut),
        }
    }

    pub fn recognize(&self, g: &mut Graph, batch: &SequenceBatch) -> Result<GaussianLatent> {
        match &self.net {
            Net::Traj(m) => m.recognize(g, batch),
            Net::Image(m) => m.recognize(g, batch),
        }
    }

    /// Latent rows for `batch` repeated `reps` times. Sample `s` of example
    /// `first + b` uses noise from `rng.substream(first + b).substream(s)`.
    pub fn draw_latent(
        &self,
        g: &mut Graph,
        batch: &SequenceBatch,
        reps: usize,
        rng: &RngStream,
        first: usize,
        source: LatentSource,
    ) -> Result<Option<(Var, Option<GaussianLatent>)>> {
        let dims = self.latent_dims();
        if dims.is_empty() {
            return Ok(None);
        }
        let eps = example_noise(rng, first, batch.len(), reps, &dims);
        match source {
            LatentSource::Prior => Ok(Some((g.tape.constant(eps), None))),
            LatentSource::Recognition => {
                let lat = self.recognize(g, batch)?;
                let rep = GaussianLatent {
                    mu: g.tape.repeat_rows(lat.mu, reps)?,
                    log_var: g.tape.repeat_rows(lat.log_var, reps)?,
                };
                let z = reparameterize(g, rep, eps)?;
                Ok(Some((z, Some(lat))))
            }
        }
    }

    /// Draws `n` futures per example. Returns `[B, n, t_fut, frame...]`.
    pub fn sample_futures(
        &self,
        batch: &SequenceBatch,
        t_fut: usize,
        n: usize,
        rng: &RngStream,
        source: LatentSource,
    ) -> Result<Tensor> {
        if source == LatentSource::Recognition && batch.y.is_none() {
            return Err(Error::MissingY);
        }
        let frame: Vec<usize> = batch.frame_shape().to_vec();
        let row_len = t_fut * frame.iter().product::<usize>();
        let rows = (SAMPLE_CHUNK_VALUES / row_len.max(1)).max(1);
        let per = (rows / n.max(1)).max(1);
        let mut data = Vec::new();
        let mut start = 0;
        while start < batch.len() {
            let len = per.min(batch.len() - start);
            let chunk = batch.range(start, len);
            let mut g = Graph::frozen(&self.params);
            let ctx = self.encode(&mut g, &chunk)?;
            let z = self
                .draw_latent(&mut g, &chunk, n, rng, start, source)?
                .map(|(z, _)| z);
            let out = self.decode(&mut g, &ctx, z, n, t_fut, None)?;
            data.extend_from_slice(g.value(out).data());
            start += len;
        }
        let mut shape = vec![batch.len(), n, t_fut];
        shape.extend(frame);
        Tensor::new(shape, data)
    }
}

/// Output values decoded per chunk by `sample_futures`; bounds the size of
/// the recorded graph.
const SAMPLE_CHUNK_VALUES: usize = 1 << 16;

/// Noise rows for examples `first..first + count`, `reps` rows each.
pub fn example_noise(
    rng: &RngStream,
    first: usize,
    count: usize,
    reps: usize,
    dims: &[usize],
) -> Tensor {
    let parts: Vec<Tensor> = (first..first + count)
        .map(|e| row_noise(&rng.substream(e as u64), reps, dims))
        .collect();
    let data = parts.into_iter().flat_map(|t| t.into_data()).collect();
    let mut shape = vec![count * reps];
    shape.extend_from_slice(dims);
    Tensor::new(shape, data).expect("length matches shape")
}

/// Outcome of comparing the whole-sequence decoder log-likelihood with the
/// sum of its per-step terms.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorizationReport {
    pub whole: f64,
    pub per_step: Vec<f64>,
    pub sum: f64,
    pub tol: f64,
}

impl FactorizationReport {
    pub fn passed(&self) -> bool {
        (self.whole - self.sum).abs() <= self.tol
    }
}

/// Decodes one future for the single example in `batch` with latent `z`
/// (per-example shape, or `None` for latent-free models) and checks that
/// `log p(y | x, z)` equals the sum over steps of `log p(y_t | y_<t, z, x)`.
/// `corrupt_step` perturbs one step of the per-step path, as a negative
/// control.
pub fn factorization_check(
    model: &Model,
    batch: &SequenceBatch,
    z: Option<&Tensor>,
    lik: &LikelihoodConfig,
    corrupt_step: Option<usize>,
) -> Result<FactorizationReport> {
    let y = batch.y()?;
    if batch.len() != 1 {
        return Err(Error::shape(
            "factorization_check",
            "expects a single example",
        ));
    }
    let t_fut = y.shape()[1];
    let mut g = Graph::frozen(&model.params);
    let ctx = model.encode(&mut g, batch)?;
    let z = match z {
        Some(z) => {
            let mut shape = vec![1];
            shape.extend_from_slice(z.shape());
            Some(g.tape.constant(z.clone().reshape(shape)?))
        }
        None => None,
    };
    let out = model.decode(&mut g, &ctx, z, 1, t_fut, Some(y))?;
    let pred = g.value(out).data();
    let target = y.data();
    let whole = decoder_loglik_values(pred, target, lik)?;
    let step = target.len() / t_fut;
    let mut per_step = Vec::with_capacity(t_fut);
    for t in 0..t_fut {
        let r = t * step..(t + 1) * step;
        let mut p = pred[r.clone()].to_vec();
        if corrupt_step == Some(t) {
            p[0] += 1.0;
        }
        per_step.push(decoder_loglik_values(&p, &target[r], lik)?);
    }
    let sum = per_step.iter().sum();
    Ok(FactorizationReport {
        whole,
        per_step,
        sum,
        tol: 1e-10,
    })
}
