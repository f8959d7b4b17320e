//! Run configuration (JSON) and the datasets and models it describes.
//!
//! Every field has a default, so `{}` is a valid config (fork task, BMS
//! objective, desk profile). `BMS_SEED` in the environment overrides `seed`.

use crate::container::Container;
use crate::error::{CliError, Result};
use bms_core::data::{self, BlobSpec, ForkSpec, ImageSequenceDataset, TrajectoryDataset};
use bms_core::metrics::EvalConfig;
use bms_core::models::{DataKind, ImageSeqConfig, ModelConfig, SequenceBatch, TrajectoryConfig};
use bms_core::objectives::{AdamConfig, LikelihoodConfig, ObjectiveConfig, ObjectiveKind};
use bms_core::train::{LrSchedule, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Fork,
    Star,
    ForkMap,
    Blobs,
    Jsonl,
}

impl Task {
    pub fn data_kind(self) -> DataKind {
        match self {
            Task::Blobs => DataKind::Image,
            _ => DataKind::Trajectory,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub schedule: LrSchedule,
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        OptimizerConfig {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            schedule: LrSchedule::Constant,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub fork: ForkSpec,
    pub blobs: BlobSpec,
    /// JSONL file for the `jsonl` task, or a `BMS1` blob dataset for
    /// `blobs`; split by `train_frac`. Synthetic tasks ignore it otherwise.
    pub path: Option<PathBuf>,
    pub train_frac: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train: 2000,
            n_test: 200,
            fork: ForkSpec::default(),
            blobs: BlobSpec::default(),
            path: None,
            train_frac: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: Task,
    pub objective: ObjectiveKind,
    /// Latent samples per example during training; task default when absent.
    pub t_train: Option<usize>,
    pub alpha: f64,
    pub profile: Profile,
    pub steps: usize,
    /// Batch size; task default when absent.
    pub batch: Option<usize>,
    pub seed: u64,
    pub sigma_dec: f64,
    pub teacher_forcing: bool,
    pub optimizer: OptimizerConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
    /// Evaluate on the test split every this many steps (0 disables).
    pub eval_every: usize,
    /// Test examples used by the periodic evaluation.
    pub eval_examples: usize,
    /// Write a checkpoint every this many steps (0 keeps only the final one).
    pub checkpoint_every: usize,
    /// Replaces the profile's model layout when present.
    pub model: Option<ModelConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            task: Task::Fork,
            objective: ObjectiveKind::Bms,
            t_train: None,
            alpha: 0.5,
            profile: Profile::Desk,
            steps: 2000,
            batch: None,
            seed: 0,
            sigma_dec: 1.0,
            teacher_forcing: false,
            optimizer: OptimizerConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            eval_every: 200,
            eval_examples: 100,
            checkpoint_every: 200,
            model: None,
        }
    }
}

impl RunConfig {
    /// Defaults for `task`; the star task gets four directions.
    pub fn for_task(task: Task) -> Self {
        let mut c = RunConfig {
            task,
            ..RunConfig::default()
        };
        if task == Task::Star {
            c.data.fork = ForkSpec::star(4);
        }
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Applies `BMS_SEED` when set.
    pub fn with_env(mut self) -> Result<Self> {
        if let Ok(s) = std::env::var("BMS_SEED") {
            self.seed = s.trim().parse().map_err(|_| {
                CliError::Config(format!("BMS_SEED={s} is not an unsigned integer"))
            })?;
        }
        Ok(self)
    }

    pub fn t_train(&self) -> usize {
        self.t_train.unwrap_or(match self.task {
            Task::Blobs => 5,
            _ => 10,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch.unwrap_or(match self.task {
            Task::Blobs => 4,
            _ => 32,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_train() == 0 {
            return Err(CliError::Config("t_train must be at least 1".into()));
        }
        if self.batch() == 0 {
            return Err(CliError::Config("batch must be at least 1".into()));
        }
        if self.task == Task::Jsonl || self.data.path.is_some() && self.task == Task::Blobs {
            match &self.data.path {
                Some(p) if p.exists() => {}
                Some(p) => {
                    return Err(CliError::Config(format!(
                        "dataset {} does not exist",
                        p.display()
                    )))
                }
                None => return Err(CliError::Config("task jsonl needs data.path".into())),
            }
        }
        self.objective_config().validate()?;
        Ok(())
    }

    pub fn objective_config(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            kind: self.objective,
            samples: if self.objective == ObjectiveKind::Regression {
                1
            } else {
                self.t_train()
            },
            alpha: self.alpha,
            likelihood: LikelihoodConfig {
                sigma_dec: self.sigma_dec,
                include_normalizer: false,
            },
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let o = &self.optimizer;
        TrainConfig {
            objective: self.objective_config(),
            steps: self.steps,
            batch: self.batch(),
            adam: AdamConfig {
                lr: o.lr,
                beta1: o.beta1,
                beta2: o.beta2,
                eps: o.eps,
            },
            schedule: o.schedule,
            clip_norm: o.clip_norm,
            seed: self.seed,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let mut m = self
            .model
            .clone()
            .unwrap_or_else(|| match (self.task, self.profile) {
                (Task::Blobs, Profile::Desk) => ModelConfig::Image(ImageSeqConfig {
                    grid: self.data.blobs.grid,
                    ..ImageSeqConfig::desk()
                }),
                (Task::Blobs, Profile::Paper) => ModelConfig::Image(ImageSeqConfig {
                    grid: self.data.blobs.grid,
                    ..ImageSeqConfig::paper()
                }),
                (Task::ForkMap, Profile::Desk) => {
                    ModelConfig::Trajectory(TrajectoryConfig::desk_visual())
                }
                (Task::ForkMap, Profile::Paper) => {
                    ModelConfig::Trajectory(TrajectoryConfig::paper_visual())
                }
                (_, Profile::Desk) => ModelConfig::Trajectory(TrajectoryConfig::desk()),
                (_, Profile::Paper) => ModelConfig::Trajectory(TrajectoryConfig::paper()),
            });
        match &mut m {
            ModelConfig::Trajectory(c) => {
                if self.objective == ObjectiveKind::Regression {
                    c.latent = 0;
                }
                c.teacher_forcing = self.teacher_forcing;
            }
            ModelConfig::Image(c) => {
                if self.objective == ObjectiveKind::Regression {
                    c.latent = 0;
                }
            }
        }
        m
    }

    /// Train/test datasets. Synthetic tasks draw `n_train + n_test` examples
    /// from `seed` and split them with the same seed.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        let d = &self.data;
        let total = d.n_train + d.n_test;
        let frac = d.n_train as f64 / total.max(1) as f64;
        let seed = self.seed;
        let traj = |ds: TrajectoryDataset, frac: f64| -> Result<(Dataset, Dataset)> {
            let (a, b) = data::split(&ds, frac, seed)?;
            Ok((Dataset::Traj(a), Dataset::Traj(b)))
        };
        match self.task {
            Task::Fork => traj(data::gen_fork(&d.fork, total, seed)?, frac),
            Task::Star => traj(data::gen_star(&d.fork, total, seed)?, frac),
            Task::ForkMap => traj(data::gen_fork_with_map(&d.fork, total, seed)?, frac),
            Task::Jsonl => {
                let path = d
                    .path
                    .as_ref()
                    .ok_or_else(|| CliError::Config("task jsonl needs data.path".into()))?;
                traj(data::load_jsonl(path)?, d.train_frac)
            }
            Task::Blobs => {
                let (ds, frac) = match &d.path {
                    Some(p) => (
                        crate::container::blobs_from_container(&Container::load(p)?)?,
                        d.train_frac,
                    ),
                    None => (data::gen_blobs(&d.blobs, total, seed)?, frac),
                };
                let (a, b) = data::split_indices(ds.len(), frac, seed)?;
                Ok((Dataset::Image(ds.subset(&a)), Dataset::Image(ds.subset(&b))))
            }
        }
    }
}

/// A loaded dataset of either kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Traj(TrajectoryDataset),
    Image(ImageSequenceDataset),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Traj(d) => d.len(),
            Dataset::Image(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn kind(&self) -> DataKind {
        match self {
            Dataset::Traj(_) => DataKind::Trajectory,
            Dataset::Image(_) => DataKind::Image,
        }
    }

    pub fn all(&self) -> Result<SequenceBatch> {
        Ok(match self {
            Dataset::Traj(d) => d.all()?,
            Dataset::Image(d) => d.all()?,
        })
    }

    pub fn batch(&self, idx: &[usize]) -> Result<SequenceBatch> {
        Ok(match self {
            Dataset::Traj(d) => d.batch(idx)?,
            Dataset::Image(d) => d.batch(idx)?,
        })
    }

    /// Reads a JSONL trajectory file or a `BMS1` blob dataset.
    pub fn load(path: &Path) -> Result<Self> {
        if path.extension().is_some_and(|e| e == "jsonl") {
            Ok(Dataset::Traj(data::load_jsonl(path)?))
        } else {
            Ok(Dataset::Image(crate::container::blobs_from_container(
                &Container::load(path)?,
            )?))
        }
    }
}
