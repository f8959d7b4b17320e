use super::params::{glorot_uniform, Graph, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Padding, RngStream, Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    None,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, g: &mut Graph, x: Var) -> Result<Var> {
        match self {
            Activation::None => Ok(x),
            Activation::Relu => g.tape.relu(x),
            Activation::Tanh => g.tape.tanh(x),
        }
    }
}

/// Fully connected layer, `activation(x W^T + b)` with `W: [out, in]`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub act: Activation,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        act: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            glorot_uniform(vec![out_dim, in_dim], in_dim, out_dim, rng),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![out_dim]));
        Dense {
            w,
            b,
            act,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g.tape.linear(x, g.param(self.w), Some(g.param(self.b)))?;
        self.act.apply(g, y)
    }
}

/// Standard LSTM cell without peepholes. Gate blocks are ordered
/// input, forget, candidate, output in `w_x: [4H, D]`, `w_h: [4H, H]`, `b: [4H]`.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut RngStream,
    ) -> Self {
        let w_x = store.add(
            format!("{name}.w_x"),
            glorot_uniform(vec![4 * hidden, input], input, 4 * hidden, rng),
        );
        let w_h = store.add(
            format!("{name}.w_h"),
            glorot_uniform(vec![4 * hidden, hidden], hidden, 4 * hidden, rng),
        );
        let mut bias = Tensor::zeros(vec![4 * hidden]);
        bias.data_mut()[hidden..2 * hidden]
            .iter_mut()
            .for_each(|v| *v = 1.0);
        let b = store.add(format!("{name}.b"), bias);
        LstmCell {
            w_x,
            w_h,
            b,
            input,
            hidden,
        }
    }

    /// Zero hidden and cell state for `rows` sequences.
    pub fn zero_state(&self, g: &mut Graph, rows: usize) -> (Var, Var) {
        let h = g.tape.constant(Tensor::zeros(vec![rows, self.hidden]));
        let c = g.tape.constant(Tensor::zeros(vec![rows, self.hidden]));
        (h, c)
    }

    /// One step. `x: [..., D]`, `h, c: [..., H]`; returns `(h', c')`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        if g.tape.shape(h) != g.tape.shape(c) || g.tape.shape(h).last() != Some(&self.hidden) {
            return Err(Error::shape(
                "lstm_step",
                format!(
                    "h {:?}, c {:?}, hidden {}",
                    g.tape.shape(h),
                    g.tape.shape(c),
                    self.hidden
                ),
            ));
        }
        let gx = g.tape.linear(x, g.param(self.w_x), Some(g.param(self.b)))?;
        let gh = g.tape.linear(h, g.param(self.w_h), None)?;
        let gates = g.tape.add(gx, gh)?;
        let axis = g.tape.shape(gates).len() - 1;
        gate_update(g, gates, c, axis, self.hidden)
    }
}

fn gate_update(g: &mut Graph, gates: Var, c: Var, axis: usize, n: usize) -> Result<(Var, Var)> {
    let i = g.tape.slice(gates, axis, 0, n)?;
    let f = g.tape.slice(gates, axis, n, n)?;
    let cand = g.tape.slice(gates, axis, 2 * n, n)?;
    let o = g.tape.slice(gates, axis, 3 * n, n)?;
    let i = g.tape.sigmoid(i)?;
    let f = g.tape.sigmoid(f)?;
    let cand = g.tape.tanh(cand)?;
    let o = g.tape.sigmoid(o)?;
    let keep = g.tape.mul(f, c)?;
    let write = g.tape.mul(i, cand)?;
    let c_new = g.tape.add(keep, write)?;
    let squashed = g.tape.tanh(c_new)?;
    let h_new = g.tape.mul(o, squashed)?;
    Ok((h_new, c_new))
}

/// Convolutional LSTM cell: the LSTM gate algebra with same-padded
/// convolutions in place of matrix products, so `h` and `c` keep the spatial
/// extent of the input.
#[derive(Clone, Debug)]
pub struct ConvLstmCell {
    pub k_x: ParamId,
    pub k_h: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub filters: usize,
    pub kernel: usize,
}

impl ConvLstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        filters: usize,
        kernel: usize,
        rng: &mut RngStream,
    ) -> Self {
        let kk = kernel * kernel;
        let k_x = store.add(
            format!("{name}.k_x"),
            glorot_uniform(
                vec![4 * filters, input, kernel, kernel],
                input * kk,
                4 * filters * kk,
                rng,
            ),
        );
        let k_h = store.add(
            format!("{name}.k_h"),
            glorot_uniform(
                vec![4 * filters, filters, kernel, kernel],
                filters * kk,
                4 * filters * kk,
                rng,
            ),
        );
        let mut bias = Tensor::zeros(vec![4 * filters]);
        bias.data_mut()[filters..2 * filters]
            .iter_mut()
            .for_each(|v| *v = 1.0);
        let b = store.add(format!("{name}.b"), bias);
        ConvLstmCell {
            k_x,
            k_h,
            b,
            input,
            filters,
            kernel,
        }
    }

    pub fn zero_state(&self, g: &mut Graph, batch: usize, h: usize, w: usize) -> (Var, Var) {
        let shape = vec![batch, self.filters, h, w];
        let hs = g.tape.constant(Tensor::zeros(shape.clone()));
        let cs = g.tape.constant(Tensor::zeros(shape));
        (hs, cs)
    }

    /// One step. `x: [B, C, H, W]` (or `[C, H, W]`), `h, c: [B, F, H, W]`.
    pub fn step(&self, g: &mut Graph, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let sx = g.tape.shape(x).to_vec();
        let sh = g.tape.shape(h).to_vec();
        let spatial_ok =
            sx.len() == sh.len() && sx.len() >= 3 && sx[sx.len() - 2..] == sh[sh.len() - 2..];
        if !spatial_ok || g.tape.shape(c) != sh.as_slice() || sh[sh.len() - 3] != self.filters {
            return Err(Error::shape(
                "conv_lstm_step",
                format!("x {:?}, h {:?}, c {:?}", sx, sh, g.tape.shape(c)),
            ));
        }
        let gx = g
            .tape
            .conv2d(x, g.param(self.k_x), Some(g.param(self.b)), Padding::Same)?;
        let gh = g.tape.conv2d(h, g.param(self.k_h), None, Padding::Same)?;
        let gates = g.tape.add(gx, gh)?;
        let axis = g.tape.shape(gates).len() - 3;
        gate_update(g, gates, c, axis, self.filters)
    }
}

/// Same-padded 2-D convolution layer.
#[derive(Clone, Debug)]
pub struct Conv {
    pub k: ParamId,
    pub b: ParamId,
    pub act: Activation,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        act: Activation,
        rng: &mut RngStream,
    ) -> Self {
        let kk = kernel * kernel;
        let k = store.add(
            format!("{name}.k"),
            glorot_uniform(
                vec![out_ch, in_ch, kernel, kernel],
                in_ch * kk,
                out_ch * kk,
                rng,
            ),
        );
        let b = store.add(format!("{name}.b"), Tensor::zeros(vec![out_ch]));
        Conv {
            k,
            b,
            act,
            in_ch,
            out_ch,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let y = g
            .tape
            .conv2d(x, g.param(self.k), Some(g.param(self.b)), Padding::Same)?;
        self.act.apply(g, y)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CnnEncoderConfig {
    pub in_channels: usize,
    /// Filters of each conv block; every block is conv 3x3 + tanh + 2x2 max pool.
    pub filters: Vec<usize>,
    pub input_size: usize,
    pub fc_hidden: usize,
    pub out_dim: usize,
}

impl CnnEncoderConfig {
    /// Layer sizes of the reference visual encoder (64x64 input).
    pub fn paper() -> Self {
        CnnEncoderConfig {
            in_channels: 1,
            filters: vec![32, 64, 128, 256],
            input_size: 64,
            fc_hidden: 1024,
            out_dim: 32,
        }
    }

    pub fn desk() -> Self {
        CnnEncoderConfig {
            in_channels: 1,
            filters: vec![4, 8, 8, 16],
            input_size: 64,
            fc_hidden: 32,
            out_dim: 16,
        }
    }
}

/// Visual encoder: conv blocks followed by two tanh dense layers.
#[derive(Clone, Debug)]
pub struct CnnEncoder {
    pub config: CnnEncoderConfig,
    pub convs: Vec<Conv>,
    pub fc1: Dense,
    pub fc2: Dense,
}

impl CnnEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        config: CnnEncoderConfig,
        rng: &mut RngStream,
    ) -> Self {
        let mut convs = Vec::new();
        let mut ch = config.in_channels;
        for (i, &f) in config.filters.iter().enumerate() {
            convs.push(Conv::new(
                store,
                &format!("{name}.c{}", i + 1),
                ch,
                f,
                3,
                Activation::Tanh,
                rng,
            ));
            ch = f;
        }
        let side = config.input_size >> config.filters.len();
        let flat = ch * side * side;
        let fc1 = Dense::new(
            store,
            &format!("{name}.fc1"),
            flat,
            config.fc_hidden,
            Activation::Tanh,
            rng,
        );
        let fc2 = Dense::new(
            store,
            &format!("{name}.fc2"),
            config.fc_hidden,
            config.out_dim,
            Activation::Tanh,
            rng,
        );
        CnnEncoder {
            config,
            convs,
            fc1,
            fc2,
        }
    }

    /// `img: [B, C, H, W]` (or `[C, H, W]`) to a `[B, out_dim]` summary.
    pub fn encode(&self, g: &mut Graph, img: Var) -> Result<Var> {
        let s = g.tape.shape(img).to_vec();
        let div = 1usize << self.convs.len();
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        if s.len() < 3
            || h % div != 0
            || w % div != 0
            || h != self.config.input_size
            || w != self.config.input_size
        {
            return Err(Error::shape(
                "cnn_encode",
                format!(
                    "image {:?} must be {}x{} and divisible by {}",
                    s, self.config.input_size, self.config.input_size, div
                ),
            ));
        }
        let batch = if s.len() == 4 { s[0] } else { 1 };
        let mut x = img;
        for conv in &self.convs {
            x = conv.forward(g, x)?;
            x = g.tape.maxpool2(x)?;
        }
        let flat = g.tape.value(x).len() / batch;
        let x = g.tape.reshape(x, &[batch, flat])?;
        let x = self.fc1.forward(g, x)?;
        self.fc2.forward(g, x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, GradCheckConfig};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn lstm_zero_params_zero_state() {
        let mut rng = RngStream::new(0, 0);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 3, 4, &mut rng);
        store.zero_prefix("l");
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Tensor::zeros(vec![3]));
        let h = g.tape.constant(Tensor::zeros(vec![4]));
        let (h2, c2) = cell.step(&mut g, x, h, h).unwrap();
        assert_eq!(g.value(h2).data(), &[0.0; 4]);
        assert_eq!(g.value(c2).data(), &[0.0; 4]);
    }

    #[test]
    fn lstm_forget_bias_keeps_memory() {
        let mut rng = RngStream::new(0, 0);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 2, 3, &mut rng);
        store.zero_prefix("l.w");
        let b = store.get(cell.b).data().to_vec();
        assert_eq!(&b[3..6], &[1.0; 3]);
        assert!(b[..3].iter().chain(&b[6..]).all(|&v| v == 0.0));
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Tensor::zeros(vec![2]));
        let h = g.tape.constant(Tensor::zeros(vec![3]));
        let c = g.tape.constant(Tensor::full(vec![3], 1.0));
        let (_, c2) = cell.step(&mut g, x, h, c).unwrap();
        for v in g.value(c2).data() {
            assert!(close(*v, 0.731_058_578_630_004_9, 1e-12));
        }
    }

    #[test]
    fn lstm_saturated_gates_are_pure_memory() {
        let mut rng = RngStream::new(0, 0);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 2, 3, &mut rng);
        store.zero_prefix("l.w");
        let b = store.get_mut(cell.b);
        // i -> 0, f -> 1
        b.data_mut()[..3].iter_mut().for_each(|v| *v = -800.0);
        b.data_mut()[3..6].iter_mut().for_each(|v| *v = 800.0);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Tensor::vector(vec![0.3, -0.7]));
        let h = g.tape.constant(Tensor::vector(vec![0.1, 0.2, 0.3]));
        let c = g.tape.constant(Tensor::vector(vec![-1.5, 0.25, 2.0]));
        let (_, c2) = cell.step(&mut g, x, h, c).unwrap();
        assert_eq!(g.value(c2).data(), &[-1.5, 0.25, 2.0]);
    }

    #[test]
    fn lstm_output_shapes() {
        let mut rng = RngStream::new(1, 0);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 32, 48, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(rng.normal_tensor(vec![32]));
        let h = g.tape.constant(Tensor::zeros(vec![48]));
        let (h2, c2) = cell.step(&mut g, x, h, h).unwrap();
        assert_eq!(g.value(h2).shape(), &[48]);
        assert_eq!(g.value(c2).shape(), &[48]);
        let bad = g.tape.constant(Tensor::zeros(vec![47]));
        assert!(cell.step(&mut g, x, bad, bad).is_err());
    }

    #[test]
    fn conv_lstm_shapes_and_zero() {
        let mut rng = RngStream::new(2, 0);
        let mut store = ParamStore::new();
        let cell = ConvLstmCell::new(&mut store, "c", 1, 32, 3, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(rng.normal_tensor(vec![1, 1, 16, 16]));
        let (h, c) = cell.zero_state(&mut g, 1, 16, 16);
        let (h2, _) = cell.step(&mut g, x, h, c).unwrap();
        assert_eq!(g.value(h2).shape(), &[1, 32, 16, 16]);

        store.zero_prefix("c");
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Tensor::zeros(vec![1, 1, 6, 6]));
        let (h, c) = cell.zero_state(&mut g, 1, 6, 6);
        let (h2, c2) = cell.step(&mut g, x, h, c).unwrap();
        assert!(g.value(h2).data().iter().all(|&v| v == 0.0));
        assert!(g.value(c2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_examples() {
        let mut store = ParamStore::new();
        let mut rng = RngStream::new(0, 0);
        let d = Dense::new(&mut store, "d", 2, 2, Activation::None, &mut rng);
        *store.get_mut(d.w) = Tensor::eye(2);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Tensor::vector(vec![1.5, -2.0]));
        let y = d.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), &[1.5, -2.0]);

        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 1, 2, Activation::Relu, &mut rng);
        *store.get_mut(d.w) = Tensor::matrix(2, 1, vec![1.0, 1.0]).unwrap();
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Tensor::vector(vec![0.0]));
        let bias = g.tape.constant(Tensor::vector(vec![-1.0, 2.0]));
        let y = g.tape.linear(x, g.param(d.w), Some(bias)).unwrap();
        let y = g.tape.relu(y).unwrap();
        assert_eq!(g.value(y).data(), &[0.0, 2.0]);

        let mut store = ParamStore::new();
        let d = Dense::new(&mut store, "d", 2, 1, Activation::None, &mut rng);
        *store.get_mut(d.w) = Tensor::matrix(1, 2, vec![1.0, 1.0]).unwrap();
        *store.get_mut(d.b) = Tensor::vector(vec![1.0]);
        let mut g = Graph::new(&store);
        let x = g.tape.constant(Tensor::vector(vec![2.0, 3.0]));
        let y = d.forward(&mut g, x).unwrap();
        assert_eq!(g.value(y).data(), &[6.0]);
    }

    #[test]
    fn cnn_encoder_shapes() {
        let mut rng = RngStream::new(0, 0);
        let mut store = ParamStore::new();
        let enc = CnnEncoder::new(&mut store, "cnn", CnnEncoderConfig::paper(), &mut rng);
        assert_eq!(enc.fc2.out_dim, 32);
        assert_eq!(
            store.by_name("cnn.c4.k").unwrap().shape(),
            &[256, 128, 3, 3]
        );
        assert_eq!(
            store.by_name("cnn.fc1.w").unwrap().shape(),
            &[1024, 256 * 4 * 4]
        );

        let mut store = ParamStore::new();
        let enc = CnnEncoder::new(&mut store, "cnn", CnnEncoderConfig::desk(), &mut rng);
        let mut g = Graph::new(&store);
        let img = g.tape.constant(rng.normal_tensor(vec![1, 64, 64]));
        let out = enc.encode(&mut g, img).unwrap();
        assert_eq!(g.value(out).shape(), &[1, 16]);
        assert!(g.value(out).data().iter().all(|v| v.abs() < 1.0));
        let bad = g.tape.constant(Tensor::zeros(vec![1, 50, 50]));
        assert!(matches!(
            enc.encode(&mut g, bad),
            Err(Error::ShapeMismatch { .. })
        ));

        store.zero_prefix("cnn");
        let mut g = Graph::new(&store);
        let img = g.tape.constant(Tensor::zeros(vec![2, 1, 64, 64]));
        let out = enc.encode(&mut g, img).unwrap();
        assert!(g.value(out).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_deterministic_with_glorot_bound() {
        let build = || {
            let mut rng = RngStream::new(5, 0);
            let mut s = ParamStore::new();
            LstmCell::new(&mut s, "l", 3, 4, &mut rng);
            Dense::new(&mut s, "d", 4, 2, Activation::Relu, &mut rng);
            s
        };
        assert_eq!(build(), build());

        let mut rng = RngStream::new(0, 0);
        let bound = 3f64.sqrt();
        let t = glorot_uniform(vec![10_000], 1, 1, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= bound));
        assert!(t.data().iter().any(|v| v.abs() > 0.95 * bound));
    }

    #[test]
    fn cells_pass_grad_check() {
        let mut rng = RngStream::new(17, 0);
        let mut store = ParamStore::new();
        let cell = LstmCell::new(&mut store, "l", 3, 4, &mut rng);
        let x = rng.normal_tensor(vec![2, 3]);
        let h0 = rng.normal_tensor(vec![2, 4]);
        let c0 = rng.normal_tensor(vec![2, 4]);
        let report = grad_check(
            |t, v| {
                let mut g = Graph::from_parts(std::mem::take(t), v.to_vec());
                let x = g.tape.constant(x.clone());
                let h = g.tape.constant(h0.clone());
                let c = g.tape.constant(c0.clone());
                let (h, c) = cell.step(&mut g, x, h, c)?;
                let (h, _) = cell.step(&mut g, x, h, c)?;
                let s = g.tape.square(h)?;
                let l = g.tape.sum(s)?;
                *t = g.tape;
                Ok(l)
            },
            store.entries(),
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{report:?}");
    }
}
