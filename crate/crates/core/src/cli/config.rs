//! Flat experiment configuration read from TOML and overridden by flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::CliError;
use crate::corpus::DatasetId;
use crate::model::Architecture;
use crate::training::{LossConfig, ScheduleConfig};

/// Evaluation protocol of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "UPPERCASE")]
pub enum Protocol {
    Wid,
    Ood,
    Novel,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Wid => "WID",
            Protocol::Ood => "OOD",
            Protocol::Novel => "NOVEL",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetId,
    /// Source file for `ingest`.
    pub data: Option<PathBuf>,
    /// Adapter name: `vua20`, `lcc`, `trofi` or `canonical`.
    pub format: Option<String>,
    pub protocol: Protocol,
    pub architecture: Architecture,
    pub k: usize,
    pub split_seed: u64,
    pub seeds: Vec<u64>,
    /// Restricts training, evaluation and ensembling to these folds; empty
    /// means all.
    pub folds: Vec<usize>,
    /// Predefined test set (one id per line). `split --mode wid` then builds
    /// a two-fold plan with these ids as fold 0; pair it with `k = 2` and
    /// `folds = [0]`.
    pub test_ids: Option<PathBuf>,
    pub dev_fraction: f64,
    pub out: PathBuf,
    pub jobs: usize,

    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_len: usize,
    /// Similarity weights; unset means 1.0 for WID and 0.0 for OOD.
    pub alpha1: Option<f64>,
    pub alpha2: Option<f64>,

    /// `tiny` (randomly initialised) or `bert-base` (needs weights and vocab).
    pub encoder: String,
    pub encoder_weights: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub encoder_hidden: usize,
    pub encoder_layers: usize,
    pub encoder_seed: u64,
    pub head_dims: Vec<usize>,
    pub head_activation: String,
    pub precision: String,

    pub novel_ids: Option<PathBuf>,
    pub novel_seed: u64,
    pub ensemble_size: usize,

    pub llm_model: String,
    pub llm_base_url: String,
    pub llm_api_key_env: String,
    pub llm_concurrency: usize,
    pub llm_replay: bool,
    pub llm_l2: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let s = ScheduleConfig::default();
        let c = crate::llm_baseline::ClientConfig::default();
        Self {
            dataset: DatasetId::Vua20,
            data: None,
            format: None,
            protocol: Protocol::Wid,
            architecture: Architecture::Er,
            k: 10,
            split_seed: 7,
            seeds: vec![1, 2, 3, 4, 5],
            folds: Vec::new(),
            test_ids: None,
            dev_fraction: 0.1,
            out: PathBuf::from("out"),
            jobs: 1,
            peak_lr: s.peak_lr,
            warmup_epochs: s.warmup_epochs,
            total_epochs: s.total_epochs,
            batch_size: s.batch_size,
            dropout: s.dropout,
            max_len: s.max_len,
            alpha1: None,
            alpha2: None,
            encoder: "tiny".into(),
            encoder_weights: None,
            vocab: None,
            encoder_hidden: 32,
            encoder_layers: 2,
            encoder_seed: 0,
            head_dims: Vec::new(),
            head_activation: "relu".into(),
            precision: "f32".into(),
            novel_ids: None,
            novel_seed: 7,
            ensemble_size: 5,
            llm_model: c.model,
            llm_base_url: c.base_url,
            llm_api_key_env: c.api_key_env,
            llm_concurrency: 4,
            llm_replay: false,
            llm_l2: crate::llm_baseline::DEFAULT_L2,
        }
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seed list is empty".into()));
        }
        if self.k < 2 {
            return Err(CliError::Config("k must be at least 2".into()));
        }
        if let Some(f) = self.folds.iter().find(|&&f| f >= self.k) {
            return Err(CliError::Config(format!("fold {f} is out of range for k={}", self.k)));
        }
        if self.test_ids.is_some() && self.k != 2 {
            return Err(CliError::Config("a predefined test set needs k = 2".into()));
        }
        if !(0.0..1.0).contains(&self.dev_fraction) {
            return Err(CliError::Config("dev_fraction must lie in [0, 1)".into()));
        }
        self.schedule().validate()?;
        let l = self.loss();
        LossConfig::new(l.alpha1, l.alpha2)?;
        Ok(())
    }

    pub fn schedule(&self) -> ScheduleConfig {
        ScheduleConfig {
            peak_lr: self.peak_lr,
            warmup_epochs: self.warmup_epochs,
            total_epochs: self.total_epochs,
            batch_size: self.batch_size,
            dropout: self.dropout,
            max_len: self.max_len,
        }
    }

    pub fn loss(&self) -> LossConfig {
        let base = match self.protocol {
            Protocol::Ood => LossConfig::ood(),
            Protocol::Wid | Protocol::Novel => LossConfig::wid(),
        };
        LossConfig {
            alpha1: self.alpha1.unwrap_or(base.alpha1),
            alpha2: self.alpha2.unwrap_or(base.alpha2),
        }
    }

    pub fn folds(&self) -> Vec<usize> {
        if self.folds.is_empty() {
            (0..self.k).collect()
        } else {
            self.folds.clone()
        }
    }

    /// SHA-256 of the configuration without the output directory and
    /// parallelism, which do not affect results.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.jobs = 1;
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data").join(self.dataset.to_string())
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.data_dir().join("corpus.tsv")
    }

    pub fn vocab_path(&self) -> PathBuf {
        self.vocab.clone().unwrap_or_else(|| self.data_dir().join("vocab.txt"))
    }

    pub fn splits_dir(&self) -> PathBuf {
        self.out.join("splits").join(self.dataset.to_string())
    }

    /// Fold plan (`wid.tsv`, `ood.tsv`) or the novel subset (`novel.tsv`).
    pub fn plan_path(&self, protocol: Protocol) -> PathBuf {
        self.splits_dir().join(format!("{}.tsv", protocol.as_str().to_lowercase()))
    }

    pub fn arch_dir(&self, protocol: Protocol, system: &str) -> PathBuf {
        self.out.join("runs").join(self.dataset.to_string()).join(protocol.as_str()).join(system)
    }

    pub fn run_dir(&self, protocol: Protocol, system: &str, fold: usize, seed: Option<u64>) -> PathBuf {
        let name = match seed {
            Some(s) => format!("fold{fold}_seed{s}"),
            None => format!("fold{fold}"),
        };
        self.arch_dir(protocol, system).join(name)
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval").join(self.dataset.to_string())
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.out.join("reports").join(self.dataset.to_string())
    }
}
