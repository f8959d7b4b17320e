//! Subcommands: gen-data, train, eval, sample, compare and gradcheck.

use crate::config::{Dataset, Profile, RunConfig, Task};
use crate::container::{blobs_to_container, Checkpoint};
use crate::error::{CliError, Result};
use crate::output::{fmt_num, frame_grid, line_chart, trajectory_plot, Series, Table};
use bms_core::data::{self, ForkSpec};
use bms_core::gradsuite::{run_suite, SuiteConfig, SuiteReport};
use bms_core::metrics::{self, EvalConfig, ForecastMetrics, STREAM_EVAL};
use bms_core::models::{LatentSource, Model, SequenceBatch};
use bms_core::objectives::Adam;
use bms_core::tensor::GradCheckConfig;
use bms_core::train::{train_step, BatchSampler, StepRecord, TrainConfig};
use bms_core::RngStream;
use serde::Serialize;
use std::path::{Path, PathBuf};

fn create_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub task: Task,
    pub count: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub spec: serde_json::Value,
    pub files: Vec<String>,
}

/// Writes the full synthetic dataset of `cfg` (train and test examples
/// together; training splits it again with the same seed) and a manifest.
pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<Manifest> {
    let d = &cfg.data;
    let n = d.n_train + d.n_test;
    let spec = match cfg.task {
        Task::Blobs => {
            d.blobs.validate()?;
            serde_json::to_value(&d.blobs)?
        }
        Task::Jsonl => {
            return Err(CliError::Config(
                "task jsonl reads an existing dataset".into(),
            ))
        }
        _ => {
            d.fork.validate()?;
            serde_json::to_value(&d.fork)?
        }
    };
    if n == 0 {
        return Err(CliError::Config("n_train + n_test must be positive".into()));
    }
    let file = match cfg.task {
        Task::Fork => ("dataset.jsonl", data::gen_fork(&d.fork, n, cfg.seed)?),
        Task::Star => ("dataset.jsonl", data::gen_star(&d.fork, n, cfg.seed)?),
        Task::ForkMap => (
            "dataset.jsonl",
            data::gen_fork_with_map(&d.fork, n, cfg.seed)?,
        ),
        Task::Blobs => {
            let ds = data::gen_blobs(&d.blobs, n, cfg.seed)?;
            create_dir(out)?;
            blobs_to_container(&ds)?.save(&out.join("dataset.bms"))?;
            return finish_manifest(cfg, out, n, spec, "dataset.bms");
        }
        Task::Jsonl => unreachable!(),
    };
    create_dir(out)?;
    data::save_jsonl(&file.1, out.join(file.0))?;
    finish_manifest(cfg, out, n, spec, file.0)
}

fn finish_manifest(
    cfg: &RunConfig,
    out: &Path,
    n: usize,
    spec: serde_json::Value,
    file: &str,
) -> Result<Manifest> {
    let m = Manifest {
        task: cfg.task,
        count: n,
        n_train: cfg.data.n_train,
        n_test: cfg.data.n_test,
        seed: cfg.seed,
        spec,
        files: vec![file.to_string()],
    };
    write_json(&out.join("manifest.json"), &m)?;
    Ok(m)
}

/// Step-by-step optimizer state over one training set.
pub struct Trainer {
    pub model: Model,
    pub config: TrainConfig,
    opt: Adam,
    sampler: BatchSampler,
    data: SequenceBatch,
    pub step: usize,
}

impl Trainer {
    pub fn new(cfg: &RunConfig, train: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let model = Model::new(cfg.model_config(), cfg.seed)?;
        if model.kind() != train.kind() {
            return Err(kind_mismatch(&model, train));
        }
        let config = cfg.train_config();
        let data = train.all()?;
        if data.is_empty() {
            return Err(CliError::Config("training set is empty".into()));
        }
        Ok(Trainer {
            opt: Adam::new(config.adam, &model.params),
            sampler: BatchSampler::new(data.len(), config.seed),
            model,
            config,
            data,
            step: 0,
        })
    }

    pub fn done(&self) -> bool {
        self.step >= self.config.steps
    }

    /// One optimizer step. On a non-finite loss or gradient the model is
    /// left as it was and the error is returned.
    pub fn step(&mut self) -> Result<StepRecord> {
        let idx = self.sampler.next(self.config.batch);
        let batch = self.data.select(&idx);
        let report = train_step(
            &mut self.model,
            &mut self.opt,
            &batch,
            &self.config,
            self.step,
        )?;
        let rec = StepRecord::from_report(self.step, &report);
        self.step += 1;
        Ok(rec)
    }
}

fn kind_mismatch(model: &Model, data: &Dataset) -> CliError {
    CliError::KindMismatch {
        model: format!("{:?}", model.kind()).to_lowercase(),
        data: format!("{:?}", data.kind()).to_lowercase(),
    }
}

/// Trains without writing files.
pub fn fit(cfg: &RunConfig, train: &Dataset) -> Result<(Model, Vec<StepRecord>)> {
    let mut t = Trainer::new(cfg, train)?;
    let mut log = Vec::with_capacity(cfg.steps);
    while !t.done() {
        log.push(t.step()?);
    }
    Ok((t.model, log))
}

pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<StepRecord>,
    pub checkpoint: PathBuf,
    pub test: Dataset,
}

/// Mean NCLL over the first `cfg.eval_examples` test examples.
pub fn quick_ncll(model: &Model, test: &Dataset, cfg: &RunConfig) -> Result<f64> {
    let n = cfg.eval_examples.min(test.len());
    let idx: Vec<usize> = (0..n).collect();
    let batch = test.batch(&idx)?;
    let rng = RngStream::new(cfg.eval.seed, STREAM_EVAL).substream(0);
    let v = metrics::ncll(
        model,
        &batch,
        cfg.eval.t_samples_cll,
        cfg.eval.sigma_eval,
        &rng,
    )?;
    Ok(metrics::mean(&v))
}

/// Trains with logging and checkpoints under `out`:
/// `metrics.csv` (step, value, kl, loglik_mean, loglik_max, lr),
/// `eval.csv` (step, ncll), `ckpt_<step>.bms`, `final.bms` and `config.json`.
/// A non-finite step stops training after saving `last_good.bms`.
pub fn train(cfg: &RunConfig, out: &Path) -> Result<TrainOutcome> {
    cfg.validate()?;
    let (train_set, test) = cfg.datasets()?;
    let mut t = Trainer::new(cfg, &train_set)?;
    create_dir(out)?;
    write_json(&out.join("config.json"), cfg)?;
    let mut metrics_csv = csv::Writer::from_path(out.join("metrics.csv"))?;
    metrics_csv.write_record(["step", "value", "kl", "loglik_mean", "loglik_max", "lr"])?;
    let mut eval_csv = csv::Writer::from_path(out.join("eval.csv"))?;
    eval_csv.write_record(["step", "ncll"])?;
    let checkpoint = |model: &Model, step: usize, name: &str| -> Result<PathBuf> {
        let path = out.join(name);
        Checkpoint {
            model: model.clone(),
            profile: cfg.profile,
            run_config: Some(cfg.clone()),
            step,
        }
        .save(&path)?;
        Ok(path)
    };
    let mut log = Vec::with_capacity(cfg.steps);
    while !t.done() {
        let step = t.step;
        let lr = t.config.lr_at(step);
        let rec = match t.step() {
            Ok(r) => r,
            Err(CliError::Core(bms_core::Error::NonFinite { .. })) => {
                metrics_csv.flush()?;
                let path = checkpoint(&t.model, step, "last_good.bms")?;
                return Err(CliError::Numerical {
                    step,
                    checkpoint: Some(path),
                });
            }
            Err(e) => return Err(e),
        };
        metrics_csv.write_record([
            rec.step.to_string(),
            fmt_num(Some(rec.value)),
            fmt_num(rec.kl),
            fmt_num(Some(rec.loglik_mean)),
            fmt_num(Some(rec.loglik_max)),
            fmt_num(Some(lr)),
        ])?;
        log.push(rec);
        let done = step + 1;
        if cfg.eval_every > 0 && done % cfg.eval_every == 0 && !test.is_empty() {
            let v = quick_ncll(&t.model, &test, cfg)?;
            eval_csv.write_record([done.to_string(), fmt_num(Some(v))])?;
            eval_csv.flush()?;
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 && done < cfg.steps {
            checkpoint(&t.model, done, &format!("ckpt_{done:06}.bms"))?;
        }
    }
    metrics_csv.flush()?;
    eval_csv.flush()?;
    let path = checkpoint(&t.model, t.step, "final.bms")?;
    Ok(TrainOutcome {
        model: t.model,
        log,
        checkpoint: path,
        test,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub examples: usize,
    pub ncll_mean: f64,
    pub ncll_median: f64,
    #[serde(skip)]
    pub ncll: Vec<f64>,
    /// Mean exact NCLL of the generating mixture.
    pub floor: Option<f64>,
    /// Mean exact NCLL given the true mode.
    pub floor_known_mode: Option<f64>,
    pub horizons: Vec<usize>,
    /// Oracle top-k error per horizon, averaged over examples.
    pub oracle: Option<Vec<f64>>,
    pub forecast: Option<ForecastMetrics>,
}

impl EvalReport {
    pub fn table(&self) -> Table {
        let mut header: Vec<String> = [
            "examples",
            "ncll_mean",
            "ncll_median",
            "floor",
            "floor_known_mode",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend(self.horizons.iter().map(|h| format!("err@{h}")));
        header.extend(["csi", "far", "pod", "correlation"].map(String::from));
        let mut row = vec![
            self.examples.to_string(),
            fmt_num(Some(self.ncll_mean)),
            fmt_num(Some(self.ncll_median)),
            fmt_num(self.floor),
            fmt_num(self.floor_known_mode),
        ];
        for i in 0..self.horizons.len() {
            row.push(fmt_num(self.oracle.as_ref().map(|o| o[i])));
        }
        let f = self.forecast.as_ref();
        row.push(fmt_num(f.and_then(|f| f.csi)));
        row.push(fmt_num(f.and_then(|f| f.far)));
        row.push(fmt_num(f.and_then(|f| f.pod)));
        row.push(fmt_num(f.and_then(|f| f.correlation)));
        let mut t = Table::new(header);
        t.push(row);
        t
    }
}

/// Samples per example as flattened futures.
fn split_samples(samples: &bms_core::Tensor, b: usize, n: usize) -> Vec<Vec<f64>> {
    samples
        .row(b)
        .chunks(samples.len() / (samples.shape()[0] * n))
        .map(|c| c.to_vec())
        .collect()
}

/// NCLL with prior samples, oracle errors for trajectories and thresholded
/// scores of a single prior sample per example for image sequences.
pub fn evaluate(
    model: &Model,
    data: &Dataset,
    eval: &EvalConfig,
    fork: Option<&ForkSpec>,
) -> Result<EvalReport> {
    if model.kind() != data.kind() {
        return Err(kind_mismatch(model, data));
    }
    let batch = data.all()?;
    let y = batch.y()?.clone();
    let t_fut = y.shape()[1];
    let rng = RngStream::new(eval.seed, STREAM_EVAL);
    let ncll = metrics::ncll(
        model,
        &batch,
        eval.t_samples_cll,
        eval.sigma_eval,
        &rng.substream(0),
    )?;
    let mut report = EvalReport {
        examples: batch.len(),
        ncll_mean: metrics::mean(&ncll),
        ncll_median: metrics::median(&ncll),
        ncll,
        floor: None,
        floor_known_mode: None,
        horizons: Vec::new(),
        oracle: None,
        forecast: None,
    };
    match data {
        Dataset::Traj(ds) => {
            eval.validate(t_fut)?;
            report.horizons = eval.horizons.clone();
            let samples = model.sample_futures(
                &batch.without_y(),
                t_fut,
                eval.t_samples_oracle,
                &rng.substream(1),
                LatentSource::Prior,
            )?;
            let mut acc = vec![0.0; eval.horizons.len()];
            for b in 0..batch.len() {
                let s = split_samples(&samples, b, eval.t_samples_oracle);
                let e = metrics::oracle_topk_error(&s, y.row(b), eval.topk_frac, &eval.horizons)?;
                acc.iter_mut()
                    .zip(e)
                    .for_each(|(a, v)| *a += v / batch.len() as f64);
            }
            report.oracle = Some(acc);
            if let Some(spec) = fork {
                let modes: Option<Vec<usize>> = ds.examples.iter().map(|e| e.meta.mode).collect();
                if let Some(modes) = modes {
                    let n = ds.len() as f64;
                    report.floor = Some(
                        ds.examples
                            .iter()
                            .map(|e| data::fork_analytic_ncll(spec, e))
                            .sum::<f64>()
                            / n,
                    );
                    report.floor_known_mode = Some(
                        ds.examples
                            .iter()
                            .zip(&modes)
                            .map(|(e, &m)| data::fork_conditional_ncll(spec, e, m))
                            .sum::<f64>()
                            / n,
                    );
                }
            }
        }
        Dataset::Image(_) => {
            let pred = model.sample_futures(
                &batch.without_y(),
                t_fut,
                1,
                &rng.substream(2),
                LatentSource::Prior,
            )?;
            report.forecast = Some(metrics::forecast_metrics(
                pred.data(),
                y.data(),
                eval.csi_threshold,
            )?);
        }
    }
    Ok(report)
}

/// Resolves the run configuration and dataset for a checkpoint command:
/// an explicit dataset file wins, else the test split of the run config.
fn checkpoint_inputs(
    ckpt: &Path,
    cfg: Option<&RunConfig>,
    data_path: Option<&Path>,
) -> Result<(Checkpoint, RunConfig, Dataset)> {
    let ck = Checkpoint::load(ckpt)?;
    let run = cfg
        .cloned()
        .or_else(|| ck.run_config.clone())
        .ok_or_else(|| CliError::Config("checkpoint has no run config; pass --config".into()))?;
    let data = match data_path {
        Some(p) => Dataset::load(p)?,
        None => run.datasets()?.1,
    };
    if ck.model.kind() != data.kind() {
        return Err(kind_mismatch(&ck.model, &data));
    }
    Ok((ck, run, data))
}

fn fork_spec(run: &RunConfig) -> Option<&ForkSpec> {
    matches!(run.task, Task::Fork | Task::Star | Task::ForkMap).then_some(&run.data.fork)
}

/// Evaluates a checkpoint and writes `eval.csv` and `eval.txt`.
pub fn eval(
    ckpt: &Path,
    cfg: Option<&RunConfig>,
    data_path: Option<&Path>,
    out: &Path,
) -> Result<EvalReport> {
    let (ck, run, data) = checkpoint_inputs(ckpt, cfg, data_path)?;
    let report = evaluate(&ck.model, &data, &run.eval, fork_spec(&run))?;
    create_dir(out)?;
    let table = report.table();
    table.write_csv(&out.join("eval.csv"))?;
    std::fs::write(out.join("eval.txt"), table.to_text())?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectorySamples {
    pub index: usize,
    pub observed: Vec<[f64; 2]>,
    pub truth: Vec<[f64; 2]>,
    /// Absolute sampled paths, continuing from the last observed point.
    pub samples: Vec<Vec<[f64; 2]>>,
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<[f64; 2]>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageSamples {
    pub index: usize,
    pub grid: usize,
    pub best_index: usize,
    /// Frames of `t_fut` images, each row-major `grid x grid`.
    pub truth: Vec<Vec<f64>>,
    pub best: Vec<Vec<f64>>,
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum SampleDump {
    Trajectory(TrajectorySamples),
    Image(ImageSamples),
}

fn shift(path: Vec<[f64; 2]>, by: [f64; 2]) -> Vec<[f64; 2]> {
    path.into_iter()
        .map(|p| [p[0] + by[0], p[1] + by[1]])
        .collect()
}

/// Draws `t` prior samples for one example and writes `samples.svg` and
/// `samples.json`. Trajectory samples are colored by k-means cluster; image
/// samples are summarized as ground truth, best, mean and variance rows.
pub fn sample(
    ckpt: &Path,
    cfg: Option<&RunConfig>,
    data_path: Option<&Path>,
    index: usize,
    t: usize,
    k: usize,
    out: &Path,
) -> Result<SampleDump> {
    if k == 0 || k > t {
        return Err(CliError::Config(format!(
            "need 1 <= clusters <= samples, got {k} and {t}"
        )));
    }
    let (ck, run, data) = checkpoint_inputs(ckpt, cfg, data_path)?;
    if index >= data.len() {
        return Err(CliError::IndexOutOfRange {
            index,
            len: data.len(),
        });
    }
    let batch = data.batch(&[index])?;
    let y = batch.y()?.clone();
    let t_fut = y.shape()[1];
    let rng = RngStream::new(run.eval.seed, STREAM_EVAL)
        .substream(3)
        .substream(index as u64);
    let samples =
        ck.model
            .sample_futures(&batch.without_y(), t_fut, t, &rng, LatentSource::Prior)?;
    let flat = split_samples(&samples, 0, t);
    create_dir(out)?;
    let dump = match &data {
        Dataset::Traj(_) => {
            let mut observed = vec![[0.0, 0.0]];
            observed.extend(metrics::positions(batch.x.row(0)));
            let last = *observed.last().expect("non-empty");
            let km = metrics::kmeans(&flat, k, 50, run.eval.seed)?;
            let dump = TrajectorySamples {
                index,
                truth: shift(metrics::positions(y.row(0)), last),
                samples: flat
                    .iter()
                    .map(|s| shift(metrics::positions(s), last))
                    .collect(),
                labels: km.labels,
                centroids: km
                    .centroids
                    .iter()
                    .map(|c| shift(metrics::positions(c), last))
                    .collect(),
                observed,
            };
            let svg = trajectory_plot(
                &format!("example {index}: {t} samples, {k} clusters"),
                &dump.observed,
                &dump.truth,
                &dump.samples,
                &dump.labels,
            );
            std::fs::write(out.join("samples.svg"), svg)?;
            SampleDump::Trajectory(dump)
        }
        Dataset::Image(ds) => {
            let g = ds.spec.grid;
            let st = metrics::sample_statistics(&flat, y.row(0))?;
            let frames =
                |v: &[f64]| -> Vec<Vec<f64>> { v.chunks(g * g).map(|c| c.to_vec()).collect() };
            let dump = ImageSamples {
                index,
                grid: g,
                best_index: st.best_index,
                truth: frames(y.row(0)),
                best: frames(&st.best),
                mean: frames(&st.mean),
                variance: frames(&st.variance),
            };
            let rows = vec![
                ("observed".to_string(), frames(batch.x.row(0)), false),
                ("groundtruth".to_string(), dump.truth.clone(), false),
                ("best".to_string(), dump.best.clone(), false),
                ("mean".to_string(), dump.mean.clone(), false),
                ("variance".to_string(), dump.variance.clone(), true),
            ];
            std::fs::write(
                out.join("samples.svg"),
                frame_grid(&format!("example {index}: {t} samples"), g, &rows),
            )?;
            SampleDump::Image(dump)
        }
    };
    write_json(&out.join("samples.json"), &dump)?;
    Ok(dump)
}

pub struct CompareRun {
    pub name: String,
    pub config: RunConfig,
    pub log: Vec<StepRecord>,
    pub eval: EvalReport,
    pub final_kl: Option<f64>,
}

/// Window of trailing steps averaged for the final KL.
pub const FINAL_KL_WINDOW: usize = 1000;

pub fn final_kl(log: &[StepRecord]) -> Option<f64> {
    let tail = &log[log.len().saturating_sub(FINAL_KL_WINDOW)..];
    let kl: Vec<f64> = tail.iter().filter_map(|r| r.kl).collect();
    (!kl.is_empty()).then(|| metrics::mean(&kl))
}

fn comparable(cfg: &RunConfig) -> Result<serde_json::Value> {
    let mut v = serde_json::to_value(cfg)?;
    if let Some(m) = v.as_object_mut() {
        for key in ["objective", "t_train", "alpha"] {
            m.remove(key);
        }
    }
    Ok(v)
}

/// Trains every config (which may differ only in objective, `t_train` and
/// `alpha`) on the same data and writes `comparison.csv`, `comparison.txt`,
/// `kl.svg` (moving average of the logged KL) and `oracle.svg`.
pub fn compare(configs: &[RunConfig], out: &Path) -> Result<Vec<CompareRun>> {
    if configs.len() < 2 {
        return Err(CliError::Config(
            "compare needs at least two configs".into(),
        ));
    }
    let base = comparable(&configs[0])?;
    for c in &configs[1..] {
        if comparable(c)? != base {
            return Err(CliError::Config(
                "compared configs may differ only in objective, t_train and alpha".into(),
            ));
        }
    }
    let mut names: Vec<String> = configs
        .iter()
        .map(|c| c.objective.name().to_string())
        .collect();
    for i in 0..names.len() {
        if names.iter().filter(|n| **n == names[i]).count() > 1 {
            let c = &configs[i];
            names[i] = format!("{}_t{}_a{}", names[i], c.t_train(), c.alpha);
        }
    }
    create_dir(out)?;
    let mut runs = Vec::new();
    for (name, cfg) in names.into_iter().zip(configs) {
        let r = train(cfg, &out.join(&name))?;
        let eval = evaluate(&r.model, &r.test, &cfg.eval, fork_spec(cfg))?;
        runs.push(CompareRun {
            final_kl: final_kl(&r.log),
            name,
            config: cfg.clone(),
            log: r.log,
            eval,
        });
    }
    let horizons = runs[0].eval.horizons.clone();
    let mut header: Vec<String> = [
        "method",
        "objective",
        "t_train",
        "alpha",
        "ncll_mean",
        "ncll_median",
        "floor",
    ]
    .map(String::from)
    .to_vec();
    header.extend(horizons.iter().map(|h| format!("err@{h}")));
    header.extend(["csi", "final_kl"].map(String::from));
    let mut table = Table::new(header);
    for r in &runs {
        let mut row = vec![
            r.name.clone(),
            r.config.objective.name().to_string(),
            r.config.t_train().to_string(),
            fmt_num(Some(r.config.alpha)),
            fmt_num(Some(r.eval.ncll_mean)),
            fmt_num(Some(r.eval.ncll_median)),
            fmt_num(r.eval.floor),
        ];
        for i in 0..horizons.len() {
            row.push(fmt_num(r.eval.oracle.as_ref().map(|o| o[i])));
        }
        row.push(fmt_num(r.eval.forecast.and_then(|f| f.csi)));
        row.push(fmt_num(r.final_kl));
        table.push(row);
    }
    table.write_csv(&out.join("comparison.csv"))?;
    std::fs::write(out.join("comparison.txt"), table.to_text())?;
    let kl: Vec<Series> = runs
        .iter()
        .filter_map(|r| {
            let curve = metrics::kl_curve(&r.log);
            if curve.is_empty() {
                return None;
            }
            let values: Vec<f64> = curve.iter().map(|c| c.1).collect();
            let smooth = metrics::moving_average(&values, 100);
            Some(Series {
                name: r.name.clone(),
                points: curve
                    .iter()
                    .zip(smooth)
                    .map(|(c, v)| [c.0 as f64, v])
                    .collect(),
            })
        })
        .collect();
    std::fs::write(
        out.join("kl.svg"),
        line_chart("recognition KL", "step", "KL", &kl),
    )?;
    let oracle: Vec<Series> = runs
        .iter()
        .filter_map(|r| {
            r.eval.oracle.as_ref().map(|o| Series {
                name: r.name.clone(),
                points: horizons
                    .iter()
                    .zip(o)
                    .map(|(&h, &e)| [h as f64, e])
                    .collect(),
            })
        })
        .collect();
    std::fs::write(
        out.join("oracle.svg"),
        line_chart("oracle top-k error", "horizon (steps)", "error", &oracle),
    )?;
    Ok(runs)
}

/// The gradient suite; `paper` checks more instances and entries.
pub fn gradcheck(
    profile: Profile,
    fault: Option<&str>,
    seed: u64,
    out: Option<&Path>,
) -> Result<SuiteReport> {
    let mut cfg = SuiteConfig {
        check: GradCheckConfig {
            fault: fault.map(String::from),
            seed,
            ..GradCheckConfig::default()
        },
        ..SuiteConfig::default()
    };
    if profile == Profile::Paper {
        cfg.op_instances = 8;
        cfg.max_entries = 16;
    }
    let report = run_suite(&cfg)?;
    if let Some(out) = out {
        create_dir(out)?;
        gradcheck_table(&report).write_csv(&out.join("gradcheck.csv"))?;
    }
    Ok(report)
}

pub fn gradcheck_table(report: &SuiteReport) -> Table {
    let mut t = Table::new([
        "group",
        "component",
        "instances",
        "checked",
        "max_rel_err",
        "worst",
        "passed",
    ]);
    for e in &report.entries {
        t.push(vec![
            e.group.to_string(),
            e.component.clone(),
            e.instances.to_string(),
            e.checked.to_string(),
            format!("{:e}", e.max_rel_err),
            e.worst.clone(),
            e.passed.to_string(),
        ]);
    }
    t
}
