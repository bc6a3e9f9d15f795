//! The `lvm` command-line driver. Every subcommand reads a [`RunConfig`],
//! writes only inside its output directory, and leaves the resolved config
//! there as `run.cfg`.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
use lvm_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "lvm", version, about = "Train and prompt a desk-scale large vision model")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Root seed; every random stream derives from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// key=value config file applied over the defaults.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; nothing is written outside it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model preset, e.g. desk-micro, desk-small, desk-med.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Optimizer steps; 0 trains one epoch over the shards.
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    /// Accepted for scripts; all reductions already run on one thread.
    #[arg(long, global = true)]
    pub deterministic: bool,
    /// Override any config key, e.g. `--set tokens=50000`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, PartialEq, Eq)]
pub enum Command {
    /// Write synthetic corpus and tokenizer images with their manifests.
    GenData,
    /// Train the VQ tokenizer on the tokenizer manifest.
    TrainTokenizer,
    /// Encode the corpus manifest into a token stream file.
    Tokenize,
    /// Pack token streams into fixed-length windows and write shards.
    Pack,
    /// Train the transformer on packed shards, optionally resuming.
    Train,
    /// Context sweep, few-shot perplexity, analogy scores or checkpoint verification.
    Eval {
        #[arg(value_enum)]
        what: EvalKind,
    },
    /// Complete the prompts of a prompt manifest and write the predictions.
    Prompt,
    /// Token share per data category of the corpus manifest.
    Stats,
    /// Train each of `presets` on the same shards and compare loss curves.
    Scaling,
    /// Train one model per data mix at an equal token budget and compare few-shot perplexity.
    Ablation,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalKind {
    ContextSweep,
    FewShot,
    Analogy,
    Checkpoint,
}

impl Cli {
    /// Config file, then `--set` overrides, then the dedicated flags.
    pub fn resolve_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {o:?}")))?;
            cfg.set(k, v)?;
        }
        if let Some(s) = self.seed {
            cfg.set("seed", &s.to_string())?;
        }
        if let Some(o) = &self.out {
            cfg.set("out", &o.to_string_lossy())?;
        }
        if let Some(p) = &self.preset {
            cfg.set("preset", p)?;
        }
        if let Some(s) = self.steps {
            cfg.set("steps", &s.to_string())?;
        }
        if self.deterministic {
            cfg.set("deterministic", "true")?;
        }
        Ok(cfg)
    }
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match cli.resolve_config().and_then(|cfg| commands::execute(&cli.command, cfg)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("lvm: {e}");
            e.exit_code()
        }
    }
}
