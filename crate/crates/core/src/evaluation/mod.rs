//! Metrics, pooling across folds, ensembles, significance tests and reports.

mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

pub use report::{emit_report, render_table, Comparison, ReportRow, RunReport, SeedMetrics};

/// `label = 1` iff the probability reaches this value.
pub const DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("ensemble members disagree: {0}")]
    InstanceMismatch(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("empty report")]
    EmptyReport,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

/// Which model produced a prediction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ModelTag {
    pub architecture: String,
    pub seed: Option<u64>,
    pub fold: Option<usize>,
}

impl ModelTag {
    pub fn new(architecture: impl Into<String>, seed: Option<u64>, fold: Option<usize>) -> Self {
        Self {
            architecture: architecture.into(),
            seed,
            fold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub instance_id: String,
    pub gold: u8,
    pub probability: f64,
    pub label: u8,
    pub model_tag: ModelTag,
}

impl Prediction {
    pub fn new(instance_id: impl Into<String>, gold: u8, probability: f64, model_tag: ModelTag) -> Self {
        Self {
            instance_id: instance_id.into(),
            gold,
            probability,
            label: u8::from(probability >= DECISION_THRESHOLD),
            model_tag,
        }
    }
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<(), EvalError> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io)?;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for p in preds {
        let line = serde_json::to_string(p).expect("prediction serializes");
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let io = |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let f = std::fs::File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(&line).map_err(|e| EvalError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn from_labels(gold: &[u8], predicted: &[u8]) -> Self {
        let mut c = Self::default();
        for (&g, &p) in gold.iter().zip(predicted) {
            c.record(g, p);
        }
        c
    }

    pub fn from_predictions(preds: &[Prediction]) -> Self {
        let mut c = Self::default();
        for p in preds {
            c.record(p.gold, p.label);
        }
        c
    }

    pub fn record(&mut self, gold: u8, predicted: u8) {
        match (gold, predicted) {
            (1, 1) => self.tp += 1,
            (0, 1) => self.fp += 1,
            (1, 0) => self.fn_ += 1,
            _ => self.tn += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn prf(&self) -> Prf {
        prf(self)
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.tp + o.tp, self.fp + o.fp, self.fn_ + o.fn_, self.tn + o.tn)
    }
}

/// Precision, recall and F1 as fractions in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn as_percent(&self) -> Self {
        Self {
            precision: 100.0 * self.precision,
            recall: 100.0 * self.recall,
            f1: 100.0 * self.f1,
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Zero denominators give zero.
pub fn prf(c: &ConfusionCounts) -> Prf {
    let precision = ratio(c.tp, c.tp + c.fp);
    let recall = ratio(c.tp, c.tp + c.fn_);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Prf { precision, recall, f1 }
}

/// Pools confusion counts over all folds. Every id of `gold` must be scored
/// exactly once and no other id may appear.
pub fn micro_average(folds: &[Vec<Prediction>], gold: &BTreeMap<String, u8>) -> Result<(ConfusionCounts, Prf), EvalError> {
    let mut seen = BTreeSet::new();
    let mut counts = ConfusionCounts::default();
    for p in folds.iter().flatten() {
        let Some(&g) = gold.get(&p.instance_id) else {
            return Err(EvalError::Coverage(format!("`{}` is not a test instance", p.instance_id)));
        };
        if !seen.insert(p.instance_id.as_str()) {
            return Err(EvalError::Coverage(format!("`{}` scored more than once", p.instance_id)));
        }
        if g != p.gold {
            return Err(EvalError::Invalid(format!("gold label of `{}` disagrees", p.instance_id)));
        }
        counts.record(g, p.label);
    }
    if seen.len() != gold.len() {
        let missing: Vec<&str> = gold
            .keys()
            .filter(|k| !seen.contains(k.as_str()))
            .take(5)
            .map(String::as_str)
            .collect();
        return Err(EvalError::Coverage(format!(
            "{} instance(s) never scored, e.g. {missing:?}",
            gold.len() - seen.len()
        )));
    }
    Ok((counts, prf(&counts)))
}

/// Gold map built from the predictions themselves.
pub fn gold_of(preds: &[Prediction]) -> BTreeMap<String, u8> {
    preds.iter().map(|p| (p.instance_id.clone(), p.gold)).collect()
}

/// Mean-probability ensemble. Output follows the first member's order.
/// Members that agree exactly on an instance pass their probability through
/// unchanged, so an ensemble of identical members reproduces each member.
pub fn ensemble(members: &[Vec<Prediction>], tag: ModelTag) -> Result<Vec<Prediction>, EvalError> {
    let first = members
        .first()
        .ok_or_else(|| EvalError::Invalid("ensemble needs at least one member".into()))?;
    let mut sums: BTreeMap<&str, (u8, f64, f64, usize, bool)> = BTreeMap::new();
    for p in first {
        if sums.insert(p.instance_id.as_str(), (p.gold, p.probability, 0.0, 0, true)).is_some() {
            return Err(EvalError::InstanceMismatch(format!("`{}` repeated", p.instance_id)));
        }
    }
    for (m, preds) in members.iter().enumerate() {
        if preds.len() != first.len() {
            return Err(EvalError::InstanceMismatch(format!(
                "member {m} scored {} instances, member 0 scored {}",
                preds.len(),
                first.len()
            )));
        }
        for p in preds {
            let entry = sums
                .get_mut(p.instance_id.as_str())
                .ok_or_else(|| EvalError::InstanceMismatch(format!("member {m} scored unknown `{}`", p.instance_id)))?;
            entry.2 += p.probability;
            entry.3 += 1;
            entry.4 &= p.probability.to_bits() == entry.1.to_bits();
        }
    }
    let n = members.len();
    first
        .iter()
        .map(|p| {
            let (gold, _, sum, count, same) = sums[p.instance_id.as_str()];
            if count != n {
                return Err(EvalError::InstanceMismatch(format!("`{}` scored {count} times", p.instance_id)));
            }
            let probability = if same { p.probability } else { sum / n as f64 };
            Ok(Prediction::new(p.instance_id.clone(), gold, probability, tag.clone()))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTestResult {
    pub n: usize,
    pub mean_diff: f64,
    pub t: f64,
    pub p_value: f64,
    pub significant: bool,
    /// Differences had zero variance; `t` is infinite or zero.
    pub zero_variance: bool,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

/// One-tailed paired t-test of `a > b`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTestResult, EvalError> {
    if a.len() != b.len() {
        return Err(EvalError::Invalid(format!("paired lists differ in length: {} vs {}", a.len(), b.len())));
    }
    let n = a.len();
    if n < 2 {
        return Err(EvalError::Invalid("paired t-test needs at least 2 pairs".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(EvalError::Invalid("non-finite score".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let (t, p, zero_variance) = if var == 0.0 {
        if mean > 0.0 {
            (f64::INFINITY, 0.0, true)
        } else if mean < 0.0 {
            (f64::NEG_INFINITY, 1.0, true)
        } else {
            (0.0, 0.5, true)
        }
    } else {
        let t = mean / (var / n as f64).sqrt();
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| EvalError::Invalid(e.to_string()))?;
        (t, dist.sf(t), false)
    };
    Ok(TTestResult {
        n,
        mean_diff: mean,
        t,
        p_value: p,
        significant: p < SIGNIFICANCE_LEVEL,
        zero_variance,
    })
}
