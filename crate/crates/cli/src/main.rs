use bms_cli::commands;
use bms_cli::{CliError, Profile, Result, RunConfig};
use bms_core::objectives::ObjectiveKind;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

/// Train and evaluate Gaussian-latent sequence models under multi-sample objectives.
#[derive(Parser)]
#[command(name = "bms", version)]
struct Cli {
    /// JSON run configuration; every field is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed (and BMS_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[arg(long, global = true, value_enum)]
    profile: Option<Profile>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset and a manifest.
    GenData,
    /// Train one model; writes metrics.csv, eval.csv and checkpoints.
    Train,
    /// Evaluate a checkpoint on the test split or on --data.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSONL trajectories or a BMS1 blob dataset.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Draw samples for one example and plot them.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 4)]
        clusters: usize,
    },
    /// Train several objectives on shared data and tabulate them.
    Compare {
        /// Objectives applied to the base config.
        #[arg(long, value_delimiter = ',', default_value = "regression,mc,cvae,bms")]
        objectives: Vec<String>,
        /// Full configs to compare instead of --objectives.
        #[arg(long, num_args = 1..)]
        configs: Vec<PathBuf>,
    },
    /// Finite-difference check of every op, layer, objective and model.
    Gradcheck {
        /// Break the backward rule of this op.
        #[arg(long)]
        inject_fault: Option<String>,
    },
}

impl Cli {
    fn load(&self, path: Option<&PathBuf>) -> Result<RunConfig> {
        let mut cfg = match path {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        }
        .with_env()?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.profile {
            cfg.profile = p;
        }
        Ok(cfg)
    }

    fn explicit(&self) -> Result<Option<RunConfig>> {
        if self.config.is_some() || self.seed.is_some() || self.profile.is_some() {
            self.load(self.config.as_ref()).map(Some)
        } else {
            Ok(None)
        }
    }
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::GenData => {
            let m = commands::gen_data(&cli.load(cli.config.as_ref())?, &cli.out)?;
            println!(
                "wrote {} examples to {}",
                m.count,
                cli.out.join(&m.files[0]).display()
            );
        }
        Command::Train => {
            let cfg = cli.load(cli.config.as_ref())?;
            let r = commands::train(&cfg, &cli.out)?;
            let last = r.log.last();
            println!(
                "trained {} steps; final objective {:.4}; checkpoint {}",
                r.log.len(),
                last.map_or(f64::NAN, |l| l.value),
                r.checkpoint.display()
            );
        }
        Command::Eval { checkpoint, data } => {
            let r = commands::eval(
                checkpoint,
                cli.explicit()?.as_ref(),
                data.as_deref(),
                &cli.out,
            )?;
            print!("{}", r.table().to_text());
        }
        Command::Sample {
            checkpoint,
            data,
            index,
            samples,
            clusters,
        } => {
            commands::sample(
                checkpoint,
                cli.explicit()?.as_ref(),
                data.as_deref(),
                *index,
                *samples,
                *clusters,
                &cli.out,
            )?;
            println!("wrote {}", cli.out.join("samples.svg").display());
        }
        Command::Compare {
            objectives,
            configs,
        } => {
            let list = if configs.is_empty() {
                let base = cli.load(cli.config.as_ref())?;
                objectives
                    .iter()
                    .map(|o| {
                        let kind = ObjectiveKind::parse(o)
                            .ok_or_else(|| CliError::Config(format!("unknown objective {o}")))?;
                        Ok(RunConfig {
                            objective: kind,
                            ..base.clone()
                        })
                    })
                    .collect::<Result<Vec<_>>>()?
            } else {
                configs
                    .iter()
                    .map(|p| cli.load(Some(p)))
                    .collect::<Result<Vec<_>>>()?
            };
            commands::compare(&list, &cli.out)?;
            print!(
                "{}",
                std::fs::read_to_string(cli.out.join("comparison.txt"))?
            );
        }
        Command::Gradcheck { inject_fault } => {
            let cfg = cli.load(cli.config.as_ref())?;
            let report = commands::gradcheck(
                cfg.profile,
                inject_fault.as_deref(),
                cfg.seed,
                Some(&cli.out),
            )?;
            print!("{}", commands::gradcheck_table(&report).to_text());
            for e in report.failures() {
                eprintln!(
                    "FAIL {} {} (max relative error {:e} in {})",
                    e.group, e.component, e.max_rel_err, e.worst
                );
            }
            println!(
                "{} components, {} instances: {}",
                report.entries.len(),
                report.instances(),
                if report.passed() { "pass" } else { "FAIL" }
            );
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
