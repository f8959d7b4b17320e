use super::{Context, SequenceBatch};
use crate::error::{Error, Result};
use crate::latent::{GaussianLatent, TrajRecognition};
use crate::nn::{Activation, CnnEncoder, CnnEncoderConfig, Dense, Graph, LstmCell, ParamStore};
use crate::tensor::{RngStream, Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualConfig {
    pub cnn: CnnEncoderConfig,
    /// Width of the dense layer that mixes the latent into the step input.
    pub latent_embed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub channels: usize,
    pub embed: usize,
    pub enc_hidden: usize,
    pub dec_embed: usize,
    pub dec_hidden: usize,
    /// Latent size; 0 gives the plain encoder-decoder regression model.
    pub latent: usize,
    pub rec_embed: usize,
    pub rec_hidden: usize,
    #[serde(default)]
    pub visual: Option<VisualConfig>,
    #[serde(default)]
    pub teacher_forcing: bool,
}

impl TrajectoryConfig {
    pub fn desk() -> Self {
        TrajectoryConfig {
            channels: 2,
            embed: 16,
            enc_hidden: 32,
            dec_embed: 16,
            dec_hidden: 32,
            latent: 8,
            rec_embed: 16,
            rec_hidden: 32,
            visual: None,
            teacher_forcing: false,
        }
    }

    pub fn paper() -> Self {
        TrajectoryConfig {
            channels: 2,
            embed: 32,
            enc_hidden: 48,
            dec_embed: 64,
            dec_hidden: 48,
            latent: 64,
            rec_embed: 64,
            rec_hidden: 128,
            visual: None,
            teacher_forcing: false,
        }
    }

    pub fn desk_visual() -> Self {
        TrajectoryConfig {
            dec_embed: 32,
            visual: Some(VisualConfig {
                cnn: CnnEncoderConfig::desk(),
                latent_embed: 32,
            }),
            ..Self::desk()
        }
    }

    pub fn paper_visual() -> Self {
        TrajectoryConfig {
            dec_embed: 64,
            dec_hidden: 64,
            visual: Some(VisualConfig {
                cnn: CnnEncoderConfig::paper(),
                latent_embed: 64,
            }),
            ..Self::paper()
        }
    }

    pub fn regression(mut self) -> Self {
        self.latent = 0;
        self
    }
}

/// LSTM encoder-decoder over displacement sequences. The decoder is
/// autoregressive: each step reads the previous output (the last observed
/// displacement at the first step), the summary `v` and the latent `z`.
///
/// With a visual branch the step input is built in two dense stages:
/// `relu(W2 [prev, v, cnn(scene)])`, then `relu(W3 [., z])`.
#[derive(Clone, Debug)]
pub struct TrajectoryModel {
    pub config: TrajectoryConfig,
    pub enc_embed: Dense,
    pub encoder: LstmCell,
    pub dec_embed: Dense,
    pub latent_embed: Option<Dense>,
    pub decoder: LstmCell,
    pub out: Dense,
    pub cnn: Option<CnnEncoder>,
    pub recognition: Option<TrajRecognition>,
}

impl TrajectoryModel {
    pub fn new(
        store: &mut ParamStore,
        config: TrajectoryConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let c = &config;
        if c.channels == 0
            || c.embed == 0
            || c.enc_hidden == 0
            || c.dec_embed == 0
            || c.dec_hidden == 0
        {
            return Err(Error::InvalidSpec(
                "trajectory layer sizes must be positive".into(),
            ));
        }
        let enc_embed = Dense::new(store, "enc.emb", c.channels, c.embed, Activation::Relu, rng);
        let encoder = LstmCell::new(store, "enc.lstm", c.embed, c.enc_hidden, rng);
        let cnn = c
            .visual
            .as_ref()
            .map(|v| CnnEncoder::new(store, "cnn", v.cnn.clone(), rng));
        let (dec_embed, latent_embed, step_dim) = match &c.visual {
            None => {
                let d_in = c.channels + c.enc_hidden + c.latent;
                let e = Dense::new(store, "dec.emb", d_in, c.dec_embed, Activation::Relu, rng);
                (e, None, c.dec_embed)
            }
            Some(v) => {
                let d_in = c.channels + c.enc_hidden + v.cnn.out_dim;
                let e = Dense::new(store, "dec.emb", d_in, c.dec_embed, Activation::Relu, rng);
                let l = Dense::new(
                    store,
                    "dec.emb_z",
                    c.dec_embed + c.latent,
                    v.latent_embed,
                    Activation::Relu,
                    rng,
                );
                (e, Some(l), v.latent_embed)
            }
        };
        let decoder = LstmCell::new(store, "dec.lstm", step_dim, c.dec_hidden, rng);
        let out = Dense::new(
            store,
            "dec.out",
            c.dec_hidden,
            c.channels,
            Activation::None,
            rng,
        );
        let recognition = (c.latent > 0).then(|| {
            TrajRecognition::new(
                store,
                "rec",
                c.channels,
                c.rec_embed,
                c.rec_hidden,
                c.latent,
                rng,
            )
        });
        Ok(TrajectoryModel {
            config,
            enc_embed,
            encoder,
            dec_embed,
            latent_embed,
            decoder,
            out,
            cnn,
            recognition,
        })
    }

    fn check(&self, batch: &SequenceBatch) -> Result<()> {
        if batch.x.rank() != 3 || batch.x.shape()[2] != self.config.channels {
            return Err(Error::shape(
                "trajectory_model",
                format!("observed {:?}", batch.x.shape()),
            ));
        }
        if self.cnn.is_some() && batch.scene.is_none() {
            return Err(Error::InvalidSpec(
                "visual model needs a scene image".into(),
            ));
        }
        Ok(())
    }

    pub fn encode(&self, g: &mut Graph, batch: &SequenceBatch) -> Result<Context> {
        self.check(batch)?;
        let b = batch.len();
        let (mut h, mut c) = self.encoder.zero_state(g, b);
        for t in 0..batch.t_obs() {
            let x = g.tape.constant(batch.x.time_step(t));
            let e = self.enc_embed.forward(g, x)?;
            (h, c) = self.encoder.step(g, e, h, c)?;
        }
        let last = g.tape.constant(batch.x.time_step(batch.t_obs() - 1));
        let visual = match (&self.cnn, &batch.scene) {
            (Some(cnn), Some(scene)) => {
                let s = g.tape.constant(scene.clone());
                Some(cnn.encode(g, s)?)
            }
            _ => None,
        };
        Ok(Context {
            v: h,
            last: Some(last),
            visual,
            rows: b,
        })
    }

    /// Rolls out `t_fut` steps for every context row repeated `reps` times.
    /// `z` must have `rows * reps` rows. Returns `[rows * reps, t_fut * C]`.
    pub fn decode(
        &self,
        g: &mut Graph,
        ctx: &Context,
        z: Option<Var>,
        reps: usize,
        t_fut: usize,
        teacher: Option<&Tensor>,
    ) -> Result<Var> {
        let rows = ctx.rows * reps;
        check_latent(g, z, rows, self.config.latent)?;
        let rep = |g: &mut Graph, v: Var| {
            if reps == 1 {
                Ok(v)
            } else {
                g.tape.repeat_rows(v, reps)
            }
        };
        let v = rep(g, ctx.v)?;
        let last = ctx
            .last
            .ok_or_else(|| Error::shape("decode", "missing last observation"))?;
        let mut prev = rep(g, last)?;
        let visual = match ctx.visual {
            Some(vis) => Some(rep(g, vis)?),
            None => None,
        };
        let teacher = match (self.config.teacher_forcing, teacher) {
            (true, Some(y)) => Some(y.repeat_rows(reps)),
            _ => None,
        };
        let (mut h, mut c) = self.decoder.zero_state(g, rows);
        let mut outs = Vec::with_capacity(t_fut);
        for t in 0..t_fut {
            let step_in = match (visual, &self.latent_embed) {
                (Some(vis), Some(lz)) => {
                    let a = g.tape.concat(&[prev, v, vis], 1)?;
                    let a = self.dec_embed.forward(g, a)?;
                    let a = match z {
                        Some(z) => g.tape.concat(&[a, z], 1)?,
                        None => a,
                    };
                    lz.forward(g, a)?
                }
                _ => {
                    let mut parts = vec![prev, v];
                    parts.extend(z);
                    let a = g.tape.concat(&parts, 1)?;
                    self.dec_embed.forward(g, a)?
                }
            };
            (h, c) = self.decoder.step(g, step_in, h, c)?;
            let o = self.out.forward(g, h)?;
            outs.push(o);
            prev = match &teacher {
                Some(y) => g.tape.constant(y.time_step(t)),
                None => o,
            };
        }
        g.tape.concat(&outs, 1)
    }

    pub fn recognize(&self, g: &mut Graph, batch: &SequenceBatch) -> Result<GaussianLatent> {
        let rec = self
            .recognition
            .as_ref()
            .ok_or_else(|| Error::InvalidSpec("model has no latent variable".into()))?;
        rec.recognize(g, batch.y()?)
    }
}

pub(super) fn check_latent(g: &Graph, z: Option<Var>, rows: usize, latent: usize) -> Result<()> {
    match z {
        None if latent == 0 => Ok(()),
        Some(z) if latent > 0 && g.tape.shape(z).first() == Some(&rows) => Ok(()),
        _ => Err(Error::shape(
            "decode",
            format!(
                "latent {:?} for {rows} rows",
                z.map(|z| g.tape.shape(z).to_vec())
            ),
        )),
    }
}
