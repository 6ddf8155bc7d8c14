use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dcan::Result;

use crate::commands::{cmd_evaluate, cmd_predict, cmd_preprocess, cmd_synth, cmd_train};
use crate::config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "dcan", version, about = "Dilated convolutional attention network for multi-label text classification")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key, e.g. `--set train.lr=0.01`. Repeatable; applied in order.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Seed for both corpus generation and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory of the command.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Generate the synthetic train/dev/test corpus (writes `paths.data_dir`).
    Synth,
    /// Build vocabulary, label list and encoded splits (writes `paths.prep_dir`).
    Preprocess,
    /// Train a model (writes `paths.run_dir`).
    Train,
    /// Score a split with a checkpoint (writes `paths.report_dir`).
    Evaluate,
    /// Rank label codes for raw documents (writes `paths.predict_dir`).
    Predict,
}

impl Cli {
    /// The effective configuration: file, `--set` overrides, then `--seed` and `--out`.
    pub fn config(&self) -> Result<RunConfig> {
        let mut overrides = self.global.overrides.clone();
        if let Some(seed) = self.global.seed {
            overrides.push(format!("train.seed={seed}"));
            overrides.push(format!("synth.seed={seed}"));
        }
        let mut cfg = RunConfig::load(self.global.config.as_deref(), &overrides)?;
        if let Some(out) = &self.global.out {
            let p = &mut cfg.paths;
            let slot = match self.command {
                Command::Synth => &mut p.data_dir,
                Command::Preprocess => &mut p.prep_dir,
                Command::Train => &mut p.run_dir,
                Command::Evaluate => &mut p.report_dir,
                Command::Predict => &mut p.predict_dir,
            };
            *slot = out.clone();
        }
        Ok(cfg)
    }
}

/// Runs one command, writing progress lines to `log`.
pub fn run(command: Command, cfg: &RunConfig, log: &mut dyn Write) -> Result<()> {
    match command {
        Command::Synth => cmd_synth(cfg, log),
        Command::Preprocess => cmd_preprocess(cfg, log),
        Command::Train => cmd_train(cfg, log),
        Command::Evaluate => cmd_evaluate(cfg, log),
        Command::Predict => cmd_predict(cfg, log),
    }
}
