//! Exhaustive hyperparameter grid search by dev F1.

use serde::{Deserialize, Serialize};

use super::{LossConfig, ScheduleConfig, TrainError};
use crate::model::{Activation, HeadConfig};

/// Axes of the search. A similarity weight sets both α1 and α2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningGrid {
    pub learning_rates: Vec<f64>,
    pub dropouts: Vec<f64>,
    pub similarity_weights: Vec<f64>,
    pub hidden_dims: Vec<Vec<usize>>,
    pub activations: Vec<Activation>,
}

impl TuningGrid {
    /// The published search ranges for a `d`-wide encoder.
    pub fn published(d: usize) -> Self {
        Self {
            learning_rates: vec![1e-5, 3e-5, 5e-5],
            dropouts: vec![0.0, 0.1, 0.2],
            similarity_weights: vec![0.0, 0.5, 1.0, 2.0, 4.0],
            hidden_dims: vec![vec![d], vec![d, d / 2]],
            activations: vec![Activation::None, Activation::Relu],
        }
    }

    /// Grid with one point: the given configuration.
    pub fn singleton(schedule: &ScheduleConfig, loss: &LossConfig, head: &HeadConfig) -> Self {
        Self {
            learning_rates: vec![schedule.peak_lr],
            dropouts: vec![schedule.dropout],
            similarity_weights: vec![loss.alpha1],
            hidden_dims: vec![head.hidden_dims.clone()],
            activations: vec![head.activation],
        }
    }

    pub fn candidates(&self, base: &ScheduleConfig) -> Result<Vec<Candidate>, TrainError> {
        if self.learning_rates.is_empty()
            || self.dropouts.is_empty()
            || self.similarity_weights.is_empty()
            || self.hidden_dims.is_empty()
            || self.activations.is_empty()
        {
            return Err(TrainError::Config("tuning grid has an empty axis".into()));
        }
        let mut out = Vec::new();
        for &lr in &self.learning_rates {
            for &dropout in &self.dropouts {
                for &alpha in &self.similarity_weights {
                    for dims in &self.hidden_dims {
                        for &activation in &self.activations {
                            let head = HeadConfig {
                                hidden_dims: dims.clone(),
                                activation,
                            };
                            head.validate()?;
                            out.push(Candidate {
                                schedule: ScheduleConfig {
                                    peak_lr: lr,
                                    dropout,
                                    ..*base
                                },
                                loss: LossConfig::new(alpha, alpha)?,
                                head,
                            });
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub schedule: ScheduleConfig,
    pub loss: LossConfig,
    pub head: HeadConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningResult {
    pub best: Candidate,
    pub best_f1: f64,
    pub scores: Vec<(Candidate, f64)>,
}

/// Highest dev F1; ties go to the smaller head, then the lower learning
/// rate, then the earlier candidate.
pub fn select_best(scores: &[(Candidate, f64)]) -> Result<(Candidate, f64), TrainError> {
    let mut best: Option<&(Candidate, f64)> = None;
    for entry in scores {
        if !entry.1.is_finite() {
            continue;
        }
        best = match best {
            None => Some(entry),
            Some(b) => {
                let better = entry.1 > b.1
                    || (entry.1 == b.1
                        && (entry.0.head.size() < b.0.head.size()
                            || (entry.0.head.size() == b.0.head.size() && entry.0.schedule.peak_lr < b.0.schedule.peak_lr)));
                Some(if better { entry } else { b })
            }
        };
    }
    best.cloned()
        .ok_or_else(|| TrainError::Config("no candidate produced a finite dev F1".into()))
}

/// Scores every grid point with `evaluate` (typically a training run
/// returning dev F1) and selects the best.
pub fn tune_hyperparameters<F>(grid: &TuningGrid, base: &ScheduleConfig, mut evaluate: F) -> Result<TuningResult, TrainError>
where
    F: FnMut(&Candidate) -> Result<f64, TrainError>,
{
    let candidates = grid.candidates(base)?;
    let mut scores = Vec::with_capacity(candidates.len());
    for c in candidates {
        let f1 = evaluate(&c)?;
        scores.push((c, f1));
    }
    let (best, best_f1) = select_best(&scores)?;
    Ok(TuningResult { best, best_f1, scores })
}
