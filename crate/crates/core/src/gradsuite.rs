//! Finite-difference suite over every tape op, layer, latent path,
//! objective and assembled model, on small random instances.

use crate::error::Result;
use crate::latent::{
    kl_standard_normal, reparameterize, GaussianLatent, ImageRecognition, TrajRecognition,
};
use crate::models::{
    ImageSeqConfig, Model, ModelConfig, SequenceBatch, TrajectoryConfig, VisualConfig,
};
use crate::nn::{
    Activation, CnnEncoder, CnnEncoderConfig, Conv, ConvLstmCell, Dense, Graph, LstmCell,
    ParamStore,
};
use crate::objectives::{objective, ObjectiveConfig, ObjectiveKind};
use crate::tensor::{
    grad_check, GradCheckConfig, GradCheckReport, Padding, RngStream, Tape, Tensor, Var, OP_NAMES,
};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteEntry {
    /// `op`, `cell`, `latent`, `objective` or `model`.
    pub group: &'static str,
    pub component: String,
    pub instances: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Parameter holding the largest error.
    pub worst: String,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteReport {
    pub entries: Vec<SuiteEntry>,
    pub tol: f64,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn instances(&self) -> usize {
        self.entries.iter().map(|e| e.instances).sum()
    }

    pub fn failures(&self) -> impl Iterator<Item = &SuiteEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }
}

#[derive(Clone, Debug)]
pub struct SuiteConfig {
    pub check: GradCheckConfig,
    /// Random instances per tape op.
    pub op_instances: usize,
    /// Entries sampled per parameter tensor in layer and model checks.
    pub max_entries: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            check: GradCheckConfig::default(),
            op_instances: 4,
            max_entries: 6,
        }
    }
}

type Loss<'a> = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var> + 'a>;

struct Acc {
    entry: SuiteEntry,
}

impl Acc {
    fn new(group: &'static str, component: impl Into<String>) -> Self {
        Acc {
            entry: SuiteEntry {
                group,
                component: component.into(),
                instances: 0,
                checked: 0,
                max_rel_err: 0.0,
                worst: String::new(),
                passed: true,
            },
        }
    }

    fn add(&mut self, r: &GradCheckReport) {
        let e = &mut self.entry;
        e.instances += 1;
        e.passed &= r.passed();
        for p in &r.params {
            e.checked += p.checked;
            if p.max_rel_err > e.max_rel_err || e.worst.is_empty() {
                e.max_rel_err = e.max_rel_err.max(p.max_rel_err);
                e.worst = p.name.clone();
            }
        }
    }
}

/// Contracts `y` with fixed random weights so every output entry matters.
fn contract(t: &mut Tape, y: Var, rng: &mut RngStream) -> Result<Var> {
    let w = rng.normal_tensor(t.shape(y).to_vec());
    let w = t.constant(w);
    let p = t.mul(y, w)?;
    t.sum(p)
}

/// Values bounded away from zero, for ops with a kink there.
fn away_from_zero(rng: &mut RngStream, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.uniform_range(0.1, 2.0);
            if rng.uniform() < 0.5 {
                -v
            } else {
                v
            }
        })
        .collect();
    Tensor::new(shape, data).expect("length matches shape")
}

fn positive(rng: &mut RngStream, shape: Vec<usize>) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.uniform_range(0.5, 2.0)).collect())
        .expect("length matches shape")
}

fn dims(rng: &mut RngStream, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| 1 + rng.below(3)).collect()
}

/// Inputs and loss for instance `i` of `op`.
fn op_instance(op: &str, rng: &mut RngStream) -> (Vec<(String, Tensor)>, Loss<'static>) {
    let mut r = rng.substream(0x77);
    let w = rng.substream(0x78);
    let named = |ts: Vec<Tensor>| -> Vec<(String, Tensor)> {
        ts.into_iter()
            .enumerate()
            .map(|(i, t)| (format!("{op}.in{i}"), t))
            .collect()
    };
    let rank = 1 + r.below(3);
    let shape = dims(&mut r, rank);
    macro_rules! unary {
        ($input:expr, $f:expr) => {{
            let inputs = named(vec![$input]);
            let f: Loss = Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = $f(t, v[0])?;
                contract(t, y, &mut w.clone())
            });
            (inputs, f)
        }};
    }
    macro_rules! binary {
        ($a:expr, $b:expr, $f:expr) => {{
            let inputs = named(vec![$a, $b]);
            let f: Loss = Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = $f(t, v[0], v[1])?;
                contract(t, y, &mut w.clone())
            });
            (inputs, f)
        }};
    }
    match op {
        "matmul" => {
            let (m, k, n) = (1 + r.below(3), 1 + r.below(3), 1 + r.below(3));
            binary!(
                r.normal_tensor(vec![m, k]),
                r.normal_tensor(vec![k, n]),
                |t: &mut Tape, a, b| t.matmul(a, b)
            )
        }
        "linear" => {
            let (m, k, n) = (1 + r.below(3), 1 + r.below(3), 1 + r.below(3));
            let inputs = named(vec![
                r.normal_tensor(vec![m, k]),
                r.normal_tensor(vec![n, k]),
                r.normal_tensor(vec![n]),
            ]);
            let f: Loss = Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.linear(v[0], v[1], Some(v[2]))?;
                contract(t, y, &mut w.clone())
            });
            (inputs, f)
        }
        "add" => binary!(
            r.normal_tensor(shape.clone()),
            r.normal_tensor(shape),
            |t: &mut Tape, a, b| t.add(a, b)
        ),
        "sub" => binary!(
            r.normal_tensor(shape.clone()),
            r.normal_tensor(shape),
            |t: &mut Tape, a, b| t.sub(a, b)
        ),
        "mul" => binary!(
            r.normal_tensor(shape.clone()),
            r.normal_tensor(shape),
            |t: &mut Tape, a, b| t.mul(a, b)
        ),
        "div" => binary!(
            r.normal_tensor(shape.clone()),
            away_from_zero(&mut r, shape),
            |t: &mut Tape, a, b| t.div(a, b)
        ),
        "add_bias" => {
            let last = *shape.last().expect("rank >= 1");
            binary!(
                r.normal_tensor(shape),
                r.normal_tensor(vec![last]),
                |t: &mut Tape, a, b| t.add_bias(a, b)
            )
        }
        "scale" => {
            let c = r.uniform_range(-2.0, 2.0);
            unary!(r.normal_tensor(shape), move |t: &mut Tape, a| t.scale(a, c))
        }
        "offset" => {
            let c = r.uniform_range(-2.0, 2.0);
            unary!(r.normal_tensor(shape), move |t: &mut Tape, a| t
                .offset(a, c))
        }
        "tanh" => unary!(r.normal_tensor(shape), |t: &mut Tape, a| t.tanh(a)),
        "sigmoid" => unary!(r.normal_tensor(shape), |t: &mut Tape, a| t.sigmoid(a)),
        "relu" => unary!(away_from_zero(&mut r, shape), |t: &mut Tape, a| t.relu(a)),
        "exp" => unary!(r.normal_tensor(shape), |t: &mut Tape, a| t.exp(a)),
        "log" => unary!(positive(&mut r, shape), |t: &mut Tape, a| t.log(a)),
        "square" => unary!(r.normal_tensor(shape), |t: &mut Tape, a| t.square(a)),
        "sum" => unary!(r.normal_tensor(shape), |t: &mut Tape, a| t.sum(a)),
        "mean" => unary!(r.normal_tensor(shape), |t: &mut Tape, a| t.mean(a)),
        "sum_axis" => {
            let axis = r.below(rank);
            unary!(r.normal_tensor(shape), move |t: &mut Tape, a| t
                .sum_axis(a, axis))
        }
        "max_axis" => {
            let axis = r.below(rank);
            unary!(r.normal_tensor(shape), move |t: &mut Tape, a| t
                .max_axis(a, axis))
        }
        "logsumexp" => {
            let axis = r.below(rank);
            unary!(r.normal_tensor(shape), move |t: &mut Tape, a| t
                .logsumexp_axis(a, axis))
        }
        "concat" => {
            let axis = r.below(rank);
            let mut other = shape.clone();
            other[axis] = 1 + r.below(3);
            binary!(
                r.normal_tensor(shape),
                r.normal_tensor(other),
                move |t: &mut Tape, a, b| t.concat(&[a, b], axis)
            )
        }
        "slice" => {
            let axis = r.below(rank);
            let mut s = shape.clone();
            s[axis] += 2;
            let start = r.below(3);
            let len = s[axis] - start - r.below(s[axis] - start);
            unary!(r.normal_tensor(s), move |t: &mut Tape, a| t
                .slice(a, axis, start, len))
        }
        "reshape" => {
            let n: usize = shape.iter().product();
            unary!(r.normal_tensor(shape), move |t: &mut Tape, a| t
                .reshape(a, &[n]))
        }
        "repeat" => {
            let times = 1 + r.below(3);
            unary!(r.normal_tensor(shape), move |t: &mut Tape, a| t
                .repeat_rows(a, times))
        }
        "conv2d" => {
            let (b, c, o) = (1 + r.below(2), 1 + r.below(2), 1 + r.below(2));
            let (h, wd) = (3 + r.below(3), 3 + r.below(3));
            let k = if r.below(2) == 0 { 1 } else { 3 };
            let padding = if r.below(2) == 0 {
                Padding::Same
            } else {
                Padding::Valid
            };
            let inputs = named(vec![
                r.normal_tensor(vec![b, c, h, wd]),
                r.normal_tensor(vec![o, c, k, k]),
                r.normal_tensor(vec![o]),
            ]);
            let f: Loss = Box::new(move |t: &mut Tape, v: &[Var]| {
                let y = t.conv2d(v[0], v[1], Some(v[2]), padding)?;
                contract(t, y, &mut w.clone())
            });
            (inputs, f)
        }
        "maxpool2" => {
            let s = vec![
                1 + r.below(2),
                1 + r.below(2),
                2 * (1 + r.below(2)),
                2 * (1 + r.below(2)),
            ];
            unary!(r.normal_tensor(s), |t: &mut Tape, a| t.maxpool2(a))
        }
        "upsample2" => {
            let s = vec![
                1 + r.below(2),
                1 + r.below(2),
                1 + r.below(3),
                1 + r.below(3),
            ];
            unary!(r.normal_tensor(s), |t: &mut Tape, a| t.upsample2(a))
        }
        other => panic!("no gradient instance for op {other}"),
    }
}

/// Runs `f` on a graph whose parameters are the checked variables.
fn on_graph<'a>(
    f: impl Fn(&mut Graph) -> Result<Var> + 'a,
) -> impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'a {
    move |t: &mut Tape, v: &[Var]| {
        let mut g = Graph::from_parts(std::mem::take(t), v.to_vec());
        let out = f(&mut g);
        *t = std::mem::take(&mut g.tape);
        out
    }
}

fn sum_sq(g: &mut Graph, y: Var) -> Result<Var> {
    let s = g.tape.square(y)?;
    g.tape.sum(s)
}

fn tiny_traj(latent: usize, visual: bool) -> TrajectoryConfig {
    TrajectoryConfig {
        channels: 2,
        embed: 3,
        enc_hidden: 4,
        dec_embed: 3,
        dec_hidden: 4,
        latent,
        rec_embed: 3,
        rec_hidden: 3,
        visual: visual.then(|| VisualConfig {
            cnn: CnnEncoderConfig {
                in_channels: 1,
                filters: vec![2],
                input_size: 8,
                fc_hidden: 4,
                out_dim: 3,
            },
            latent_embed: 3,
        }),
        teacher_forcing: false,
    }
}

fn tiny_image() -> ImageSeqConfig {
    ImageSeqConfig {
        channels: 1,
        grid: 8,
        embed: 2,
        enc1: 2,
        enc2: 2,
        dec_embed: 2,
        dec1: 2,
        dec2: 2,
        out_hidden: 2,
        latent: 1,
        rec_embed: 2,
        rec1: 2,
        rec2: 2,
    }
}

fn traj_batch(rng: &mut RngStream, b: usize, visual: bool) -> Result<SequenceBatch> {
    let scene = visual.then(|| positive(rng, vec![b, 1, 8, 8]));
    SequenceBatch::new(
        rng.normal_tensor(vec![b, 3, 2]),
        Some(rng.normal_tensor(vec![b, 3, 2])),
        scene,
    )
}

fn image_batch(rng: &mut RngStream, b: usize) -> Result<SequenceBatch> {
    SequenceBatch::new(
        positive(rng, vec![b, 2, 1, 8, 8]),
        Some(positive(rng, vec![b, 2, 1, 8, 8])),
        None,
    )
}

/// Runs the whole suite. With `cfg.check.fault` set, the named op's backward
/// rule is broken and every component that uses it should fail.
pub fn run_suite(cfg: &SuiteConfig) -> Result<SuiteReport> {
    let exact = cfg.check.clone();
    let sampled = GradCheckConfig {
        max_entries: Some(cfg.max_entries),
        ..cfg.check.clone()
    };
    let mut entries = Vec::new();
    let root = RngStream::new(cfg.check.seed, 0x5c17);

    for (k, op) in OP_NAMES.iter().enumerate() {
        let mut acc = Acc::new("op", *op);
        for i in 0..cfg.op_instances {
            let mut rng = root.substream(k as u64).substream(i as u64);
            let (inputs, f) = op_instance(op, &mut rng);
            acc.add(&grad_check(f, &inputs, &exact)?);
        }
        entries.push(acc.entry);
    }

    let mut rng = root.substream(0x100);
    let mut layer = |name: &str,
                     build: &dyn Fn(
        &mut ParamStore,
        &mut RngStream,
    ) -> Box<dyn Fn(&mut Graph) -> Result<Var>>|
     -> Result<SuiteEntry> {
        let mut acc = Acc::new("cell", name);
        let mut store = ParamStore::new();
        let f = build(&mut store, &mut rng);
        acc.add(&grad_check(on_graph(f), store.entries(), &sampled)?);
        Ok(acc.entry)
    };
    entries.push(layer("dense", &|s, r| {
        let d = Dense::new(s, "dense", 3, 4, Activation::Tanh, r);
        let x = r.normal_tensor(vec![2, 3]);
        Box::new(move |g| {
            let x = g.tape.constant(x.clone());
            let y = d.forward(g, x)?;
            sum_sq(g, y)
        })
    })?);
    entries.push(layer("lstm_cell", &|s, r| {
        let cell = LstmCell::new(s, "lstm", 3, 4, r);
        let (x, h0, c0) = (
            r.normal_tensor(vec![2, 3]),
            r.normal_tensor(vec![2, 4]),
            r.normal_tensor(vec![2, 4]),
        );
        Box::new(move |g| {
            let x = g.tape.constant(x.clone());
            let (h, c) = (g.tape.constant(h0.clone()), g.tape.constant(c0.clone()));
            let (h, c) = cell.step(g, x, h, c)?;
            let (h, c) = cell.step(g, x, h, c)?;
            let s = g.tape.add(h, c)?;
            sum_sq(g, s)
        })
    })?);
    entries.push(layer("conv_lstm_cell", &|s, r| {
        let cell = ConvLstmCell::new(s, "clstm", 2, 2, 3, r);
        let (x, h0, c0) = (
            r.normal_tensor(vec![1, 2, 5, 5]),
            r.normal_tensor(vec![1, 2, 5, 5]),
            r.normal_tensor(vec![1, 2, 5, 5]),
        );
        Box::new(move |g| {
            let x = g.tape.constant(x.clone());
            let (h, c) = (g.tape.constant(h0.clone()), g.tape.constant(c0.clone()));
            let (h, c) = cell.step(g, x, h, c)?;
            let (h, c) = cell.step(g, x, h, c)?;
            let s = g.tape.add(h, c)?;
            sum_sq(g, s)
        })
    })?);
    entries.push(layer("conv", &|s, r| {
        let conv = Conv::new(s, "conv", 2, 3, 3, Activation::Tanh, r);
        let x = r.normal_tensor(vec![2, 2, 4, 4]);
        Box::new(move |g| {
            let x = g.tape.constant(x.clone());
            let y = conv.forward(g, x)?;
            sum_sq(g, y)
        })
    })?);
    entries.push(layer("cnn_encoder", &|s, r| {
        let cfg = CnnEncoderConfig {
            in_channels: 1,
            filters: vec![2, 2],
            input_size: 8,
            fc_hidden: 4,
            out_dim: 3,
        };
        let enc = CnnEncoder::new(s, "cnn", cfg, r);
        let x = r.normal_tensor(vec![2, 1, 8, 8]);
        Box::new(move |g| {
            let x = g.tape.constant(x.clone());
            let y = enc.encode(g, x)?;
            sum_sq(g, y)
        })
    })?);

    let latent = |name: &str,
                  build: &dyn Fn(
        &mut ParamStore,
        &mut RngStream,
    ) -> Box<dyn Fn(&mut Graph) -> Result<Var>>|
     -> Result<SuiteEntry> {
        let mut acc = Acc::new("latent", name);
        let mut store = ParamStore::new();
        let f = build(&mut store, &mut root.substream(0x200 + name.len() as u64));
        acc.add(&grad_check(on_graph(f), store.entries(), &sampled)?);
        Ok(acc.entry)
    };
    entries.push(latent("reparameterize_kl", &|s, r| {
        let mu = s.add("mu", r.normal_tensor(vec![3, 2]));
        let lv = s.add("log_var", r.normal_tensor(vec![3, 2]).map(|v| 0.5 * v));
        let eps = r.normal_tensor(vec![3, 2]);
        Box::new(move |g| {
            let lat = GaussianLatent {
                mu: g.param(mu),
                log_var: g.param(lv),
            };
            let z = reparameterize(g, lat, eps.clone())?;
            let kl = kl_standard_normal(g, lat)?;
            let a = sum_sq(g, z)?;
            let b = g.tape.sum(kl)?;
            g.tape.add(a, b)
        })
    })?);
    entries.push(latent("traj_recognition", &|s, r| {
        let rec = TrajRecognition::new(s, "rec", 2, 3, 3, 2, r);
        let y = r.normal_tensor(vec![2, 3, 2]);
        Box::new(move |g| {
            let lat = rec.recognize(g, &y)?;
            let kl = kl_standard_normal(g, lat)?;
            g.tape.sum(kl)
        })
    })?);
    entries.push(latent("image_recognition", &|s, r| {
        let rec = ImageRecognition::new(s, "rec", 1, 2, 2, 2, 1, r);
        let y = positive(r, vec![1, 2, 1, 8, 8]);
        Box::new(move |g| {
            let lat = rec.recognize(g, &y)?;
            let kl = kl_standard_normal(g, lat)?;
            let m = sum_sq(g, lat.mu)?;
            let k = g.tape.sum(kl)?;
            g.tape.add(m, k)
        })
    })?);

    let model_check = |group: &'static str,
                       name: String,
                       config: ModelConfig,
                       batch: &SequenceBatch,
                       obj: ObjectiveConfig,
                       seed: u64|
     -> Result<SuiteEntry> {
        let mut model = Model::new(config, seed)?;
        // Zero biases put ReLU inputs exactly on the kink wherever a
        // receptive field is all zeros; jitter every parameter off it.
        let mut jitter = RngStream::new(seed, 0x22);
        for t in model.params.tensors_mut() {
            t.data_mut()
                .iter_mut()
                .for_each(|v| *v += 0.1 * jitter.normal());
        }
        let noise = RngStream::new(seed, 0x21);
        let mut acc = Acc::new(group, name);
        let f =
            |g: &mut Graph| -> Result<Var> { Ok(objective(&model, g, batch, &obj, &noise, 0)?.0) };
        acc.add(&grad_check(on_graph(f), model.params.entries(), &sampled)?);
        Ok(acc.entry)
    };
    let mut data_rng = root.substream(0x300);
    let batch = traj_batch(&mut data_rng, 2, false)?;
    for (i, kind) in ObjectiveKind::ALL.iter().enumerate() {
        let latent = if *kind == ObjectiveKind::Regression {
            0
        } else {
            2
        };
        let samples = if *kind == ObjectiveKind::Regression {
            1
        } else {
            3
        };
        entries.push(model_check(
            "objective",
            kind.name().to_string(),
            ModelConfig::Trajectory(tiny_traj(latent, false)),
            &batch,
            ObjectiveConfig::new(*kind, samples),
            10 + i as u64,
        )?);
    }
    let visual = traj_batch(&mut data_rng, 2, true)?;
    entries.push(model_check(
        "model",
        "visual_trajectory".into(),
        ModelConfig::Trajectory(tiny_traj(2, true)),
        &visual,
        ObjectiveConfig::new(ObjectiveKind::Bms, 3),
        30,
    )?);
    let teacher = TrajectoryConfig {
        teacher_forcing: true,
        ..tiny_traj(2, false)
    };
    entries.push(model_check(
        "model",
        "trajectory_teacher_forcing".into(),
        ModelConfig::Trajectory(teacher),
        &batch,
        ObjectiveConfig::new(ObjectiveKind::Cvae, 2),
        31,
    )?);
    let images = image_batch(&mut data_rng, 1)?;
    for (i, kind) in [ObjectiveKind::Bms, ObjectiveKind::Cvae].iter().enumerate() {
        entries.push(model_check(
            "model",
            format!("image_seq_{}", kind.name()),
            ModelConfig::Image(tiny_image()),
            &images,
            ObjectiveConfig::new(*kind, 2),
            40 + i as u64,
        )?);
    }
    Ok(SuiteReport {
        entries,
        tol: cfg.check.tol,
    })
}
