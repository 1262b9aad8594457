//! `febm`: train, sample, condition and evaluate energy-based function models.

mod commands;
mod config;
mod domain;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::RunConfig;

/// Bad input or usage; exit code 1.
#[derive(Debug)]
pub struct Usage(pub String);

/// Numeric failure; exit code 2.
#[derive(Debug)]
pub struct NumericFailure(pub String);

macro_rules! message_error {
    ($t:ty) => {
        impl std::fmt::Display for $t {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(&self.0)
            }
        }
        impl std::error::Error for $t {}
    };
}
message_error!(Usage);
message_error!(NumericFailure);

#[derive(Parser)]
#[command(name = "febm", version, about = "Energy-based models over functions")]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_name = "DIR")]
    out_dir: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides one config key; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes the checkpoint, history.csv and the resolved config.
    Train,
    /// Draw functions from a trained model on any mesh.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// uniform:lo:hi:n, grid:W:H or auto.
        #[arg(long)]
        mesh: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Posterior draws and means given context observations.
    Infer {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Long CSV of context observations.
        #[arg(long)]
        context: Option<PathBuf>,
        #[arg(long)]
        mesh: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Predictive MSE on held-out functions for each split strategy and p.
    Evaluate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma list of random, middle, downsample.
        #[arg(long)]
        strategy: Option<String>,
        /// Comma list of context fractions.
        #[arg(long)]
        p: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Two-sample test power of model samples against held-out functions.
    Test {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build (or read from a checkpoint) and export the eigensystem.
    Eigsys {
        #[arg(long)]
        from_checkpoint: bool,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        mesh: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print every config key with its default.
    Config,
}

fn path_str(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

impl Cli {
    /// Config keys set by subcommand flags.
    fn flag_keys(&self) -> Vec<(&'static str, Option<String>)> {
        let num = |n: &Option<usize>| n.map(|n| n.to_string());
        match &self.command {
            Command::Train | Command::Config => vec![],
            Command::Sample {
                checkpoint,
                mesh,
                n,
                ..
            } => vec![
                ("checkpoint", path_str(checkpoint)),
                ("sample.mesh", mesh.clone()),
                ("sample.n", num(n)),
            ],
            Command::Infer {
                checkpoint,
                context,
                mesh,
                n,
                ..
            } => vec![
                ("checkpoint", path_str(checkpoint)),
                ("infer.context", path_str(context)),
                ("infer.mesh", mesh.clone()),
                ("infer.n", num(n)),
            ],
            Command::Evaluate {
                checkpoint,
                strategy,
                p,
                ..
            } => vec![
                ("checkpoint", path_str(checkpoint)),
                ("split.strategy", strategy.clone()),
                ("split.p", p.clone()),
            ],
            Command::Test {
                checkpoint, trials, ..
            } => vec![
                ("checkpoint", path_str(checkpoint)),
                ("test.trials", num(trials)),
            ],
            Command::Eigsys {
                checkpoint, mesh, ..
            } => vec![
                ("checkpoint", path_str(checkpoint)),
                ("sample.mesh", mesh.clone()),
            ],
        }
    }

    /// Config file, global flags, `--set` and subcommand flags, in that order.
    fn apply_user_layer(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(path) = &self.config {
            cfg.merge_file(path)?;
        }
        if let Some(seed) = self.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        if let Some(dir) = &self.out_dir {
            cfg.set("out_dir", &dir.display().to_string())?;
        }
        for kv in &self.set {
            cfg.assign(kv).context("--set")?;
        }
        for (key, value) in self.flag_keys() {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        Ok(())
    }

    /// Commands that read a checkpoint start from its training config, so
    /// data and preprocessing settings carry over unless overridden.
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        self.apply_user_layer(&mut cfg)?;
        let uses_checkpoint = match &self.command {
            Command::Train | Command::Config => false,
            _ => true,
        };
        let snapshot = cfg.checkpoint().join("config.txt");
        if uses_checkpoint && snapshot.is_file() {
            let ckpt = cfg.checkpoint();
            let mut layered = RunConfig::default();
            layered.merge_file(&snapshot)?;
            self.apply_user_layer(&mut layered)?;
            layered.set("checkpoint", &ckpt.display().to_string())?;
            cfg = layered;
        }
        Ok(cfg)
    }
}

fn out(p: &Option<PathBuf>) -> Option<&Path> {
    p.as_deref()
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure the thread pool")?;
    }
    let cfg = cli.resolve()?;
    match &cli.command {
        Command::Train => commands::train(&cfg),
        Command::Sample { out: o, .. } => commands::sample(&cfg, out(o)),
        Command::Infer { out: o, .. } => commands::infer(&cfg, out(o)),
        Command::Evaluate { out: o, .. } => commands::evaluate(&cfg, out(o)),
        Command::Test { out: o, .. } => commands::test(&cfg, out(o)),
        Command::Eigsys {
            from_checkpoint,
            out: o,
            ..
        } => commands::eigsys(&cfg, *from_checkpoint, out(o)),
        Command::Config => {
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<NumericFailure>() {
            return 2;
        }
        if let Some(e) = cause.downcast_ref::<febm::Error>() {
            return match e {
                febm::Error::Numeric(_) | febm::Error::Diverged { .. } => 2,
                _ => 1,
            };
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
