//! Anchored loss, learning-rate schedule and the training loop.

mod tuning;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use candle_core::{DType, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::EncodedPair;
use crate::evaluation::{ConfusionCounts, EvalError, ModelTag};
use crate::model::{Architecture, BatchOutput, Dropout, ErRepresentations, MetaphorModel, ModelConfig, ModelError};
pub use tuning::{select_best, tune_hyperparameters, Candidate, TuningGrid, TuningResult};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("step {step} is beyond the schedule ({total} steps)")]
    ScheduleOverrun { step: usize, total: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha1: f64,
    pub alpha2: f64,
}

impl LossConfig {
    pub fn new(alpha1: f64, alpha2: f64) -> Result<Self, TrainError> {
        if !(alpha1 >= 0.0 && alpha2 >= 0.0 && alpha1.is_finite() && alpha2.is_finite()) {
            return Err(TrainError::Config(format!("similarity weights must be non-negative, got {alpha1}, {alpha2}")));
        }
        Ok(Self { alpha1, alpha2 })
    }

    /// Within-distribution setting.
    pub fn wid() -> Self {
        Self { alpha1: 1.0, alpha2: 1.0 }
    }

    /// Out-of-distribution setting: cross-entropy only.
    pub fn ood() -> Self {
        Self { alpha1: 0.0, alpha2: 0.0 }
    }
}

impl Default for LossConfig {
    fn default() -> Self {
        Self::wid()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub ce: f64,
    pub sim_local: f64,
    pub sim_global: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn combine(ce: f64, sim_local: f64, sim_global: f64, cfg: &LossConfig) -> Result<Self, TrainError> {
        for (v, name) in [(ce, "cross-entropy"), (sim_local, "local similarity"), (sim_global, "global similarity")] {
            if !v.is_finite() {
                return Err(TrainError::NonFinite(name));
            }
        }
        Ok(Self {
            ce,
            sim_local,
            sim_global,
            total: ce - cfg.alpha1 * sim_local - cfg.alpha2 * sim_global,
        })
    }
}

/// Cosine similarity; equal vectors give exactly 1.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    dot / (na * nb).max(EPS * EPS).sqrt()
}

pub fn cross_entropy(y: u8, y_hat: f64) -> f64 {
    let p = y_hat.clamp(EPS, 1.0 - EPS);
    if y == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Loss of a single instance.
pub fn compute_loss(y: u8, y_hat: f64, reps: &ErRepresentations, cfg: &LossConfig) -> Result<LossTerms, TrainError> {
    if !y_hat.is_finite() {
        return Err(TrainError::NonFinite("probability"));
    }
    LossTerms::combine(
        cross_entropy(y, y_hat),
        cosine(&reps.u_m_t, &reps.v_m_t),
        cosine(&reps.u_m, &reps.v_m),
        cfg,
    )
}

fn cosine_rows(u: &Tensor, v: &Tensor) -> Result<Tensor, TrainError> {
    let dot = (u * v)?.sum(1)?;
    let nn = (u.sqr()?.sum(1)? * v.sqr()?.sum(1)?)?;
    Ok(dot.div(&nn.maximum(EPS * EPS)?.sqrt()?)?)
}

/// Differentiable batch-mean loss and its logged terms.
pub fn batch_loss(out: &BatchOutput, labels: &Tensor, cfg: &LossConfig) -> Result<(Tensor, LossTerms), TrainError> {
    let p = out.probs.clamp(EPS, 1.0 - EPS)?;
    let one_minus = p.affine(-1.0, 1.0)?;
    let ll = ((labels * p.log()?)? + (labels.affine(-1.0, 1.0)? * one_minus.log()?)?)?;
    let ce = ll.mean_all()?.neg()?;
    let scalar = |t: &Tensor| -> Result<f64, TrainError> { Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
    let r = &out.reps;
    match (&r.u_m_t, &r.v_m_t, &r.u_m, &r.v_m) {
        (Some(u_t), Some(v_t), Some(u), Some(v)) => {
            let sl = cosine_rows(u_t, v_t)?.mean_all()?;
            let sg = cosine_rows(u, v)?.mean_all()?;
            let total = ((&ce - (&sl * cfg.alpha1)?)? - (&sg * cfg.alpha2)?)?;
            let terms = LossTerms::combine(scalar(&ce)?, scalar(&sl)?, scalar(&sg)?, cfg)?;
            Ok((total, terms))
        }
        _ => {
            let terms = LossTerms::combine(scalar(&ce)?, 0.0, 0.0, cfg)?;
            Ok((ce, terms))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub peak_lr: f64,
    pub warmup_epochs: usize,
    pub total_epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub max_len: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            peak_lr: 5e-5,
            warmup_epochs: 2,
            total_epochs: 12,
            batch_size: 32,
            dropout: 0.0,
            max_len: crate::encoding::MAX_SEQUENCE_LENGTH,
        }
    }
}

impl ScheduleConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.warmup_epochs >= self.total_epochs {
            return Err(TrainError::Config("warmup_epochs must be below total_epochs".into()));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config("dropout must lie in [0, 1)".into()));
        }
        if !(self.peak_lr.is_finite() && self.peak_lr >= 0.0) {
            return Err(TrainError::Config("peak_lr must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.batch_size)
    }
}

/// Linear warmup from 0 to the peak, then linear decay to 0.
pub fn lr_at_step(step: usize, steps_per_epoch: usize, cfg: &ScheduleConfig) -> Result<f64, TrainError> {
    let warm = cfg.warmup_epochs * steps_per_epoch;
    let total = cfg.total_epochs * steps_per_epoch;
    if step > total {
        return Err(TrainError::ScheduleOverrun { step, total });
    }
    Ok(if step <= warm {
        if warm == 0 {
            cfg.peak_lr
        } else {
            cfg.peak_lr * step as f64 / warm as f64
        }
    } else {
        cfg.peak_lr * (total - step) as f64 / (total - warm) as f64
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    /// Loss on the first batch before any update.
    Init,
    Epoch,
}

/// One line of the training log. Epoch records hold means over the epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub kind: RecordKind,
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub ce: f64,
    pub sim_local: f64,
    pub sim_global: f64,
    pub total: f64,
    pub dev_f1: Option<f64>,
}

pub fn write_log(path: &Path, log: &[LogRecord]) -> Result<(), TrainError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in log {
        writeln!(f, "{}", serde_json::to_string(r).expect("log record serializes"))?;
    }
    f.flush()?;
    Ok(())
}

pub struct TrainOutcome {
    pub model: MetaphorModel,
    pub log: Vec<LogRecord>,
    /// 1-based epoch with the highest dev F1 (first on ties).
    pub dev_best_epoch: Option<usize>,
    pub warnings: Vec<String>,
}

/// Everything a run needs besides the data.
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub loss: LossConfig,
    pub seed: u64,
    pub pad_id: u32,
}

fn dev_f1(model: &MetaphorModel, dev: &[EncodedPair], spec: &RunSpec, warnings: &mut Vec<String>, epoch: usize) -> Result<Option<f64>, TrainError> {
    if dev.is_empty() {
        return Ok(None);
    }
    let tag = ModelTag::new(model.architecture().to_string(), Some(spec.seed), None);
    let preds = model.predict(dev, spec.pad_id, spec.schedule.batch_size, &tag)?;
    let counts = ConfusionCounts::from_predictions(&preds);
    if counts.tp + counts.fp == 0 || counts.fn_ + counts.tn == 0 {
        let msg = format!("epoch {epoch}: dev predictions are all one class; F1 is degenerate");
        log::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(Some(counts.prf().f1))
}

/// Trains a fresh model for `spec.schedule.total_epochs` epochs and returns
/// the final-epoch state.
pub fn train_run(
    spec: &RunSpec,
    encoder_weights: &BTreeMap<String, Tensor>,
    train: &[EncodedPair],
    dev: &[EncodedPair],
) -> Result<TrainOutcome, TrainError> {
    spec.schedule.validate()?;
    if train.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    {
        let ids: std::collections::HashSet<&str> = train.iter().map(|p| p.instance_id.as_str()).collect();
        if let Some(p) = dev.iter().find(|p| ids.contains(p.instance_id.as_str())) {
            return Err(TrainError::Config(format!("`{}` is in both train and dev", p.instance_id)));
        }
    }
    let loss_cfg = match spec.model.architecture {
        Architecture::Er => spec.loss,
        Architecture::Rspv => LossConfig::ood(),
    };
    let model = MetaphorModel::new(spec.model.clone(), encoder_weights, spec.seed)?;
    let mut opt = AdamW::new(
        model.params().vars(),
        ParamsAdamW {
            lr: 0.0,
            weight_decay: 0.0,
            ..Default::default()
        },
    )?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    shuffle_rng.set_stream(2);
    let mut dropout = Dropout::new(spec.schedule.dropout, spec.seed, 3);

    let spe = spec.schedule.steps_per_epoch(train.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut warnings = Vec::new();
    let mut step = 0usize;
    for epoch in 1..=spec.schedule.total_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 4];
        let mut lr_sum = 0.0;
        for chunk in order.chunks(spec.schedule.batch_size) {
            let pairs: Vec<&EncodedPair> = chunk.iter().map(|&i| &train[i]).collect();
            let batch = model.batch(&pairs, spec.pad_id)?;
            let out = model.forward(&batch, &mut dropout)?;
            let (loss, terms) = batch_loss(&out, batch.label_tensor(), &loss_cfg)?;
            let lr = lr_at_step(step, spe, &spec.schedule)?;
            if step == 0 {
                log.push(LogRecord {
                    kind: RecordKind::Init,
                    step: 0,
                    epoch: 0,
                    lr,
                    ce: terms.ce,
                    sim_local: terms.sim_local,
                    sim_global: terms.sim_global,
                    total: terms.total,
                    dev_f1: None,
                });
            }
            opt.set_learning_rate(lr);
            opt.backward_step(&loss)?;
            sums[0] += terms.ce;
            sums[1] += terms.sim_local;
            sums[2] += terms.sim_global;
            sums[3] += terms.total;
            lr_sum += lr;
            step += 1;
        }
        let n = spe as f64;
        log.push(LogRecord {
            kind: RecordKind::Epoch,
            step,
            epoch,
            lr: lr_sum / n,
            ce: sums[0] / n,
            sim_local: sums[1] / n,
            sim_global: sums[2] / n,
            total: sums[3] / n,
            dev_f1: dev_f1(&model, dev, spec, &mut warnings, epoch)?,
        });
        log::debug!("epoch {epoch}: total {:.4} ce {:.4}", sums[3] / n, sums[0] / n);
    }
    let dev_best_epoch = log
        .iter()
        .filter(|r| r.kind == RecordKind::Epoch)
        .filter_map(|r| r.dev_f1.map(|f| (r.epoch, f)))
        .fold(None::<(usize, f64)>, |best, (e, f)| match best {
            Some((_, bf)) if bf >= f => best,
            _ => Some((e, f)),
        })
        .map(|(e, _)| e);
    Ok(TrainOutcome {
        model,
        log,
        dev_best_epoch,
        warnings,
    })
}
