use super::trajectory::check_latent;
use super::{Context, SequenceBatch};
use crate::error::{Error, Result};
use crate::latent::{GaussianLatent, ImageRecognition};
use crate::nn::{Activation, Conv, ConvLstmCell, Graph, ParamStore};
use crate::tensor::{RngStream, Var};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageSeqConfig {
    pub channels: usize,
    /// Frame side length; must be divisible by 4.
    pub grid: usize,
    pub embed: usize,
    pub enc1: usize,
    pub enc2: usize,
    pub dec_embed: usize,
    pub dec1: usize,
    pub dec2: usize,
    pub out_hidden: usize,
    /// Channels of the spatial latent on the `grid / 4` bottleneck.
    pub latent: usize,
    pub rec_embed: usize,
    pub rec1: usize,
    pub rec2: usize,
}

impl ImageSeqConfig {
    pub fn desk() -> Self {
        ImageSeqConfig {
            channels: 1,
            grid: 16,
            embed: 8,
            enc1: 8,
            enc2: 16,
            dec_embed: 8,
            dec1: 16,
            dec2: 16,
            out_hidden: 8,
            latent: 4,
            rec_embed: 8,
            rec1: 8,
            rec2: 16,
        }
    }

    pub fn paper() -> Self {
        ImageSeqConfig {
            channels: 1,
            grid: 100,
            embed: 32,
            enc1: 32,
            enc2: 64,
            dec_embed: 32,
            dec1: 64,
            dec2: 64,
            out_hidden: 32,
            latent: 64,
            rec_embed: 32,
            rec1: 32,
            rec2: 64,
        }
    }

    pub fn bottleneck(&self) -> usize {
        self.grid / 4
    }
}

/// Conv-LSTM encoder-decoder with a spatial latent tensor. The summary `v`
/// is the final state of the second encoder cell on the quarter-resolution
/// grid; every decoder step reads `[v, z]` stacked along channels.
#[derive(Clone, Debug)]
pub struct ImageSeqModel {
    pub config: ImageSeqConfig,
    pub enc_embed: Conv,
    pub enc1: ConvLstmCell,
    pub enc2: ConvLstmCell,
    pub dec_embed: Conv,
    pub dec1: ConvLstmCell,
    pub dec2: ConvLstmCell,
    pub out1: Conv,
    pub out2: Conv,
    pub recognition: Option<ImageRecognition>,
}

impl ImageSeqModel {
    pub fn new(
        store: &mut ParamStore,
        config: ImageSeqConfig,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let c = &config;
        if c.grid == 0 || !c.grid.is_multiple_of(4) {
            return Err(Error::InvalidSpec(format!(
                "grid {} not divisible by 4",
                c.grid
            )));
        }
        let enc_embed = Conv::new(
            store,
            "enc.cemb",
            c.channels,
            c.embed,
            3,
            Activation::Relu,
            rng,
        );
        let enc1 = ConvLstmCell::new(store, "enc.clstm1", c.embed, c.enc1, 3, rng);
        let enc2 = ConvLstmCell::new(store, "enc.clstm2", c.enc1, c.enc2, 3, rng);
        let dec_embed = Conv::new(
            store,
            "dec.cemb",
            c.enc2 + c.latent,
            c.dec_embed,
            3,
            Activation::Relu,
            rng,
        );
        let dec1 = ConvLstmCell::new(store, "dec.clstm1", c.dec_embed, c.dec1, 3, rng);
        let dec2 = ConvLstmCell::new(store, "dec.clstm2", c.dec1, c.dec2, 3, rng);
        let out1 = Conv::new(
            store,
            "dec.out1",
            c.dec2,
            c.out_hidden,
            3,
            Activation::Relu,
            rng,
        );
        let out2 = Conv::new(
            store,
            "dec.out2",
            c.out_hidden,
            c.channels,
            3,
            Activation::None,
            rng,
        );
        let recognition = (c.latent > 0).then(|| {
            ImageRecognition::new(
                store,
                "rec",
                c.channels,
                c.rec_embed,
                c.rec1,
                c.rec2,
                c.latent,
                rng,
            )
        });
        Ok(ImageSeqModel {
            config,
            enc_embed,
            enc1,
            enc2,
            dec_embed,
            dec1,
            dec2,
            out1,
            out2,
            recognition,
        })
    }

    fn check(&self, batch: &SequenceBatch) -> Result<()> {
        let c = &self.config;
        let s = batch.x.shape();
        if s.len() != 5 || s[2] != c.channels || s[3] != c.grid || s[4] != c.grid {
            return Err(Error::shape(
                "image_seq_model",
                format!(
                    "observed {:?}, expected [B, T, {}, {}, {}]",
                    s, c.channels, c.grid, c.grid
                ),
            ));
        }
        Ok(())
    }

    pub fn encode(&self, g: &mut Graph, batch: &SequenceBatch) -> Result<Context> {
        self.check(batch)?;
        let (b, n) = (batch.len(), self.config.grid);
        let (mut h1, mut c1) = self.enc1.zero_state(g, b, n / 2, n / 2);
        let (mut h2, mut c2) = self.enc2.zero_state(g, b, n / 4, n / 4);
        for t in 0..batch.t_obs() {
            let x = g.tape.constant(batch.x.time_step(t));
            let e = self.enc_embed.forward(g, x)?;
            let e = g.tape.maxpool2(e)?;
            (h1, c1) = self.enc1.step(g, e, h1, c1)?;
            let p = g.tape.maxpool2(h1)?;
            (h2, c2) = self.enc2.step(g, p, h2, c2)?;
        }
        Ok(Context {
            v: h2,
            last: None,
            visual: None,
            rows: b,
        })
    }

    /// Returns `[rows * reps, t_fut * C * H * W]`.
    pub fn decode(
        &self,
        g: &mut Graph,
        ctx: &Context,
        z: Option<Var>,
        reps: usize,
        t_fut: usize,
    ) -> Result<Var> {
        let c = &self.config;
        let rows = ctx.rows * reps;
        check_latent(g, z, rows, c.latent)?;
        if let Some(z) = z {
            let want = [rows, c.latent, c.bottleneck(), c.bottleneck()];
            if g.tape.shape(z) != want {
                return Err(Error::shape(
                    "image_decode",
                    format!("latent {:?}, want {:?}", g.tape.shape(z), want),
                ));
            }
        }
        let v = if reps == 1 {
            ctx.v
        } else {
            g.tape.repeat_rows(ctx.v, reps)?
        };
        let inp = match z {
            Some(z) => g.tape.concat(&[v, z], 1)?,
            None => v,
        };
        let q = c.bottleneck();
        let (mut h1, mut c1) = self.dec1.zero_state(g, rows, q, q);
        let (mut h2, mut c2) = self.dec2.zero_state(g, rows, 2 * q, 2 * q);
        let frame = c.channels * c.grid * c.grid;
        let mut outs = Vec::with_capacity(t_fut);
        for _ in 0..t_fut {
            let e = self.dec_embed.forward(g, inp)?;
            (h1, c1) = self.dec1.step(g, e, h1, c1)?;
            let u = g.tape.upsample2(h1)?;
            (h2, c2) = self.dec2.step(g, u, h2, c2)?;
            let u = g.tape.upsample2(h2)?;
            let o = self.out1.forward(g, u)?;
            let o = self.out2.forward(g, o)?;
            outs.push(g.tape.reshape(o, &[rows, frame])?);
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
