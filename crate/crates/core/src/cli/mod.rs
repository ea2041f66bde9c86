//! The `metaphor-er` command line.
//!
//! Every subcommand reads an optional flat TOML configuration (`--config`),
//! applies flag overrides and writes its artifacts under `--out` together
//! with a `manifest.json`. Exit status is 0 on success, 1 on a domain error
//! and 2 on a usage error.

mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::corpus::CorpusError;
use crate::encoding::EncodeError;
use crate::evaluation::EvalError;
use crate::llm_baseline::LlmError;
use crate::model::{Architecture, ModelError};
use crate::splits::SplitError;
use crate::training::TrainError;
pub use commands::{EvalSummary, SeedEval};
pub use config::{ExperimentConfig, Protocol};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Split(#[from] SplitError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("missing prerequisite: {0}")]
    Precondition(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ArchArg {
    Er,
    Rspv,
}

impl From<ArchArg> for Architecture {
    fn from(a: ArchArg) -> Self {
        match a {
            ArchArg::Er => Architecture::Er,
            ArchArg::Rspv => Architecture::Rspv,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitModeArg {
    Wid,
    Ood,
    Novel,
}

#[derive(Debug, Parser)]
#[command(name = "metaphor-er", version, about = "Expectation-realization metaphor detection experiments")]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand; each overrides the config file.
#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Flat TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// VUA20, LCC or TROFI.
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    #[arg(long, global = true, value_enum)]
    pub protocol: Option<Protocol>,
    #[arg(long = "arch", global = true, value_enum)]
    pub architecture: Option<ArchArg>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Comma-separated run seeds.
    #[arg(long, global = true, value_delimiter = ',')]
    pub seeds: Option<Vec<u64>>,
    /// Comma-separated folds to train (default: all).
    #[arg(long, global = true, value_delimiter = ',')]
    pub folds: Option<Vec<usize>>,
    /// Parallel training runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a source file into the canonical TSV.
    Ingest {
        #[arg(long)]
        data: Option<PathBuf>,
        /// vua20, lcc, trofi or canonical.
        #[arg(long)]
        format: Option<String>,
    },
    /// Print and store dataset statistics.
    Stats,
    /// Build a fold plan or the novel subset.
    Split {
        #[arg(long, value_enum)]
        mode: SplitModeArg,
        #[arg(long)]
        seed: Option<u64>,
        /// File of novel positive instance ids (novel mode).
        #[arg(long)]
        novel_ids: Option<PathBuf>,
    },
    /// Train every fold x seed run of one architecture.
    Train(TrainArgs),
    /// Pool test predictions into per-seed metrics.
    Evaluate,
    /// Average member probabilities per fold.
    Ensemble {
        #[arg(long)]
        size: Option<usize>,
    },
    /// Zero-shot chat-model features plus logistic regression.
    LlmBaseline(LlmArgs),
    /// Render the comparison table of one protocol.
    Report,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub peak_lr: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub max_len: Option<usize>,
    #[arg(long)]
    pub alpha1: Option<f64>,
    #[arg(long)]
    pub alpha2: Option<f64>,
    #[arg(long)]
    pub encoder: Option<String>,
    #[arg(long)]
    pub encoder_weights: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub base_url: Option<String>,
    /// Use only cached responses; never contact the endpoint.
    #[arg(long)]
    pub replay: bool,
    #[arg(long)]
    pub concurrency: Option<usize>,
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let c = &cli.common;
    let mut cfg = match &c.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &c.out {
        cfg.out = v.clone();
    }
    if let Some(v) = &c.dataset {
        cfg.dataset = v.parse()?;
    }
    if let Some(v) = c.protocol {
        cfg.protocol = v;
    }
    if let Some(v) = c.architecture {
        cfg.architecture = v.into();
    }
    if let Some(v) = c.k {
        cfg.k = v;
    }
    if let Some(v) = &c.seeds {
        cfg.seeds = v.clone();
    }
    if let Some(v) = &c.folds {
        cfg.folds = v.clone();
    }
    if let Some(v) = c.jobs {
        cfg.jobs = v;
    }
    match &cli.command {
        Command::Ingest { data, format } => {
            if data.is_some() {
                cfg.data = data.clone();
            }
            if format.is_some() {
                cfg.format = format.clone();
            }
        }
        Command::Split { seed, novel_ids, mode } => {
            if let Some(s) = seed {
                match mode {
                    SplitModeArg::Novel => cfg.novel_seed = *s,
                    _ => cfg.split_seed = *s,
                }
            }
            if novel_ids.is_some() {
                cfg.novel_ids = novel_ids.clone();
            }
        }
        Command::Train(t) => {
            macro_rules! set {
                ($($flag:ident => $field:ident),*) => {$(
                    if let Some(v) = &t.$flag { cfg.$field = v.clone(); }
                )*};
            }
            set!(peak_lr => peak_lr, warmup_epochs => warmup_epochs, epochs => total_epochs,
                 batch_size => batch_size, dropout => dropout, max_len => max_len,
                 encoder => encoder);
            if t.alpha1.is_some() {
                cfg.alpha1 = t.alpha1;
            }
            if t.alpha2.is_some() {
                cfg.alpha2 = t.alpha2;
            }
            if t.encoder_weights.is_some() {
                cfg.encoder_weights = t.encoder_weights.clone();
            }
            if t.vocab.is_some() {
                cfg.vocab = t.vocab.clone();
            }
        }
        Command::Ensemble { size } => {
            if let Some(s) = size {
                cfg.ensemble_size = *s;
            }
        }
        Command::LlmBaseline(l) => {
            if let Some(m) = &l.model {
                cfg.llm_model = m.clone();
            }
            if let Some(u) = &l.base_url {
                cfg.llm_base_url = u.clone();
            }
            if let Some(c) = l.concurrency {
                cfg.llm_concurrency = c;
            }
            cfg.llm_replay |= l.replay;
        }
        Command::Stats | Command::Evaluate | Command::Report => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one parsed command.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    match &cli.command {
        Command::Ingest { .. } => commands::ingest(&cfg),
        Command::Stats => commands::stats(&cfg),
        Command::Split { mode, .. } => commands::split(&cfg, *mode),
        Command::Train(_) => commands::train(&cfg),
        Command::Evaluate => commands::evaluate(&cfg),
        Command::Ensemble { .. } => commands::ensemble(&cfg),
        Command::LlmBaseline(_) => commands::llm_baseline(&cfg),
        Command::Report => commands::report(&cfg),
    }
}

/// Parses `argv` (program name first), runs it and returns the exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
