//! Diagonal Gaussian latents: recognition networks `q(z | y)`, the standard
//! normal prior, reparameterized sampling and the closed-form KL divergence.

use crate::error::{Error, Result};
use crate::nn::{Activation, Conv, ConvLstmCell, Dense, Graph, LstmCell, ParamStore};
use crate::tensor::{RngStream, Tensor, Var};

/// Mean and log-variance nodes of a diagonal Gaussian, one row per example.
#[derive(Clone, Copy, Debug)]
pub struct GaussianLatent {
    pub mu: Var,
    pub log_var: Var,
}

/// Draws `z = mu + exp(log_var / 2) * eps` with `eps` supplied by the caller.
pub fn reparameterize(g: &mut Graph, lat: GaussianLatent, eps: Tensor) -> Result<Var> {
    if g.tape.shape(lat.mu) != eps.shape() || g.tape.shape(lat.log_var) != eps.shape() {
        return Err(Error::shape(
            "reparameterize",
            format!("mu {:?}, eps {:?}", g.tape.shape(lat.mu), eps.shape()),
        ));
    }
    let half = g.tape.scale(lat.log_var, 0.5)?;
    let sigma = g.tape.exp(half)?;
    let eps = g.tape.constant(eps);
    let noise = g.tape.mul(sigma, eps)?;
    g.tape.add(lat.mu, noise)
}

/// `KL(q || N(0, I))` for every row: `0.5 * sum(mu^2 + e^lv - 1 - lv)` over
/// all non-leading axes. Returns a `[B]` node.
pub fn kl_standard_normal(g: &mut Graph, lat: GaussianLatent) -> Result<Var> {
    let shape = g.tape.shape(lat.mu).to_vec();
    if shape.is_empty() || g.tape.shape(lat.log_var) != shape.as_slice() {
        return Err(Error::shape("kl", format!("{:?}", shape)));
    }
    let flat = [shape[0], shape[1..].iter().product()];
    let mu = g.tape.reshape(lat.mu, &flat)?;
    let lv = g.tape.reshape(lat.log_var, &flat)?;
    let m2 = g.tape.square(mu)?;
    let var = g.tape.exp(lv)?;
    let a = g.tape.add(m2, var)?;
    let a = g.tape.sub(a, lv)?;
    let a = g.tape.offset(a, -1.0)?;
    let s = g.tape.sum_axis(a, 1)?;
    g.tape.scale(s, 0.5)
}

/// Closed-form KL on plain values.
pub fn kl_values(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Standard-normal draws of the given shape (the prior `p(z | x) = N(0, I)`).
pub fn prior_sample(shape: impl Into<Vec<usize>>, rng: &mut RngStream) -> Tensor {
    rng.normal_tensor(shape)
}

/// Noise for `rows` latent rows of per-row shape `dims`. Row `r` is drawn
/// from its own substream of `rng`, so values do not depend on how many rows
/// are requested.
pub fn row_noise(rng: &RngStream, rows: usize, dims: &[usize]) -> Tensor {
    let per: usize = dims.iter().product();
    let mut data = Vec::with_capacity(rows * per);
    for r in 0..rows {
        let mut s = rng.substream(r as u64);
        data.extend((0..per).map(|_| s.normal()));
    }
    let mut shape = vec![rows];
    shape.extend_from_slice(dims);
    Tensor::new(shape, data).expect("length matches shape")
}

/// Recognition network for trajectories: dense ReLU embedding, LSTM over the
/// future, two linear heads for mean and log-variance.
#[derive(Clone, Debug)]
pub struct TrajRecognition {
    pub embed: Dense,
    pub lstm: LstmCell,
    pub mu: Dense,
    pub log_var: Dense,
}

impl TrajRecognition {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        embed: usize,
        hidden: usize,
        latent: usize,
        rng: &mut RngStream,
    ) -> Self {
        TrajRecognition {
            embed: Dense::new(
                store,
                &format!("{name}.emb"),
                channels,
                embed,
                Activation::Relu,
                rng,
            ),
            lstm: LstmCell::new(store, &format!("{name}.lstm"), embed, hidden, rng),
            mu: Dense::new(
                store,
                &format!("{name}.mu"),
                hidden,
                latent,
                Activation::None,
                rng,
            ),
            log_var: Dense::new(
                store,
                &format!("{name}.lv"),
                hidden,
                latent,
                Activation::None,
                rng,
            ),
        }
    }

    /// `y: [B, T, C]`.
    pub fn recognize(&self, g: &mut Graph, y: &Tensor) -> Result<GaussianLatent> {
        if y.rank() != 3 || y.shape()[1] == 0 {
            return Err(Error::shape("recognize", format!("future {:?}", y.shape())));
        }
        let (mut h, mut c) = self.lstm.zero_state(g, y.shape()[0]);
        for t in 0..y.shape()[1] {
            let x = g.tape.constant(y.time_step(t));
            let e = self.embed.forward(g, x)?;
            (h, c) = self.lstm.step(g, e, h, c)?;
        }
        Ok(GaussianLatent {
            mu: self.mu.forward(g, h)?,
            log_var: self.log_var.forward(g, h)?,
        })
    }
}

/// Recognition network for image sequences. Produces spatial latents on the
/// quarter-resolution grid.
#[derive(Clone, Debug)]
pub struct ImageRecognition {
    pub embed: Conv,
    pub rec1: ConvLstmCell,
    pub rec2: ConvLstmCell,
    pub mu: Conv,
    pub log_var: Conv,
}

impl ImageRecognition {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        embed: usize,
        f1: usize,
        f2: usize,
        latent: usize,
        rng: &mut RngStream,
    ) -> Self {
        ImageRecognition {
            embed: Conv::new(
                store,
                &format!("{name}.cemb"),
                channels,
                embed,
                3,
                Activation::Relu,
                rng,
            ),
            rec1: ConvLstmCell::new(store, &format!("{name}.clstm1"), embed, f1, 3, rng),
            rec2: ConvLstmCell::new(store, &format!("{name}.clstm2"), f1, f2, 3, rng),
            mu: Conv::new(
                store,
                &format!("{name}.mu"),
                f2,
                latent,
                3,
                Activation::None,
                rng,
            ),
            log_var: Conv::new(
                store,
                &format!("{name}.lv"),
                f2,
                latent,
                3,
                Activation::None,
                rng,
            ),
        }
    }

    /// `y: [B, T, C, H, W]` with `H, W` divisible by 4.
    pub fn recognize(&self, g: &mut Graph, y: &Tensor) -> Result<GaussianLatent> {
        let s = y.shape();
        if s.len() != 5 || s[1] == 0 || !s[3].is_multiple_of(4) || !s[4].is_multiple_of(4) {
            return Err(Error::shape("recognize", format!("future {:?}", s)));
        }
        let (b, h, w) = (s[0], s[3], s[4]);
        let (mut h1, mut c1) = self.rec1.zero_state(g, b, h / 2, w / 2);
        let (mut h2, mut c2) = self.rec2.zero_state(g, b, h / 4, w / 4);
        for t in 0..s[1] {
            let x = g.tape.constant(y.time_step(t));
            let e = self.embed.forward(g, x)?;
            let e = g.tape.maxpool2(e)?;
            (h1, c1) = self.rec1.step(g, e, h1, c1)?;
            let p = g.tape.maxpool2(h1)?;
            (h2, c2) = self.rec2.step(g, p, h2, c2)?;
        }
        Ok(GaussianLatent {
            mu: self.mu.forward(g, h2)?,
            log_var: self.log_var.forward(g, h2)?,
        })
    }
}
