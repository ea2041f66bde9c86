//! L2-regularised logistic regression over the answer features, fitted by
//! Newton's method.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{AnswerFeatures, LlmError, N_FEATURES};
use crate::evaluation::{ModelTag, Prediction};
use crate::splits::FoldPlan;

/// Penalty on the weights (the intercept is not penalised).
pub const DEFAULT_L2: f64 = 1.0;

/// Features are centred at 0.5 so an abstaining row scores the intercept.
const CENTER: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub weights: Vec<f64>,
    pub l2: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticModel {
    pub fn fit(rows: &[&AnswerFeatures], labels: &[u8], l2: f64) -> Result<Self, LlmError> {
        if rows.len() != labels.len() {
            return Err(LlmError::Classifier("feature and label counts differ".into()));
        }
        if !labels.contains(&0) || !labels.contains(&1) {
            return Err(LlmError::Classifier("training labels contain a single class".into()));
        }
        if !(l2 > 0.0 && l2.is_finite()) {
            return Err(LlmError::Classifier("L2 penalty must be positive".into()));
        }
        let n = rows.len();
        let p = N_FEATURES + 1;
        let mut x = DMatrix::<f64>::zeros(n, p);
        for (i, r) in rows.iter().enumerate() {
            if r.features.len() != N_FEATURES {
                return Err(LlmError::Classifier(format!("`{}` has {} features", r.instance_id, r.features.len())));
            }
            x[(i, 0)] = 1.0;
            for (j, v) in r.features.iter().enumerate() {
                x[(i, j + 1)] = v - CENTER;
            }
        }
        let y = DVector::from_iterator(n, labels.iter().map(|&l| l as f64));
        let mut penalty = DMatrix::<f64>::identity(p, p) * l2;
        penalty[(0, 0)] = 0.0;
        let mut theta = DVector::<f64>::zeros(p);
        for _ in 0..100 {
            let probs = (&x * &theta).map(sigmoid);
            let grad = x.transpose() * (&probs - &y) + &penalty * &theta;
            let w = probs.map(|q| q * (1.0 - q));
            let xw = DMatrix::from_fn(n, p, |i, j| x[(i, j)] * w[i]);
            let hess = x.transpose() * xw + &penalty;
            let step = hess
                .clone()
                .cholesky()
                .map(|c| c.solve(&grad))
                .or_else(|| hess.lu().solve(&grad))
                .ok_or_else(|| LlmError::Classifier("singular Hessian".into()))?;
            theta -= &step;
            if step.amax() < 1e-12 {
                break;
            }
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(LlmError::Classifier("fit diverged".into()));
        }
        Ok(Self {
            intercept: theta[0],
            weights: theta.iter().skip(1).copied().collect(),
            l2,
        })
    }

    pub fn probability(&self, f: &AnswerFeatures) -> f64 {
        let z = self.intercept
            + self
                .weights
                .iter()
                .zip(&f.features)
                .map(|(w, v)| w * (v - CENTER))
                .sum::<f64>();
        sigmoid(z)
    }

    pub fn predict(&self, f: &AnswerFeatures, gold: u8, tag: &ModelTag) -> Prediction {
        Prediction::new(f.instance_id.clone(), gold, self.probability(f), tag.clone())
    }
}

/// Trains one classifier per fold on that fold's training ids and scores its
/// test ids. Returns predictions per fold.
pub fn fold_aligned_predictions(
    features: &BTreeMap<String, AnswerFeatures>,
    gold: &BTreeMap<String, u8>,
    plan: &FoldPlan,
    l2: f64,
    system: &str,
) -> Result<Vec<Vec<Prediction>>, LlmError> {
    let lookup = |id: &str| -> Result<(&AnswerFeatures, u8), LlmError> {
        let f = features
            .get(id)
            .ok_or_else(|| LlmError::Classifier(format!("no features for `{id}`")))?;
        let g = *gold
            .get(id)
            .ok_or_else(|| LlmError::Classifier(format!("no gold label for `{id}`")))?;
        Ok((f, g))
    };
    (0..plan.k)
        .map(|fold| {
            let (rows, labels): (Vec<&AnswerFeatures>, Vec<u8>) = plan
                .train_ids(fold)
                .into_iter()
                .map(lookup)
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .unzip();
            let model = LogisticModel::fit(&rows, &labels, l2)?;
            let tag = ModelTag::new(system, None, Some(fold));
            plan.test_ids(fold)
                .into_iter()
                .map(|id| {
                    let (f, g) = lookup(id)?;
                    Ok(model.predict(f, g, &tag))
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm_baseline::ParseStatus;

    fn row(id: &str, first: f64) -> AnswerFeatures {
        let mut features = vec![0.5; N_FEATURES];
        features[0] = first;
        AnswerFeatures {
            instance_id: id.into(),
            features,
            parse_status: ParseStatus::Clean,
        }
    }

    #[test]
    fn separable_feature() {
        let rows: Vec<AnswerFeatures> = (0..20).map(|i| row(&i.to_string(), (i % 2) as f64)).collect();
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let refs: Vec<&AnswerFeatures> = rows.iter().collect();
        let m = LogisticModel::fit(&refs, &labels, DEFAULT_L2).unwrap();
        assert!(m.weights[0] > 0.0);
        let acc = rows
            .iter()
            .zip(&labels)
            .filter(|(r, &l)| u8::from(m.probability(r) >= 0.5) == l)
            .count();
        assert_eq!(acc, 20);
    }

    #[test]
    fn failed_rows_give_base_rate() {
        let rows: Vec<AnswerFeatures> = (0..10).map(|i| AnswerFeatures::failed(i.to_string())).collect();
        let labels = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0];
        let refs: Vec<&AnswerFeatures> = rows.iter().collect();
        let m = LogisticModel::fit(&refs, &labels, DEFAULT_L2).unwrap();
        assert!((m.probability(&rows[0]) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn single_class_is_error() {
        let rows = [row("a", 1.0), row("b", 0.0)];
        let refs: Vec<&AnswerFeatures> = rows.iter().collect();
        assert!(LogisticModel::fit(&refs, &[1, 1], DEFAULT_L2).is_err());
    }

    #[test]
    fn serde_round_trip_preserves_predictions() {
        let rows: Vec<AnswerFeatures> = (0..30).map(|i| row(&i.to_string(), ((i * 7) % 3) as f64 / 2.0)).collect();
        let labels: Vec<u8> = (0..30).map(|i| u8::from(i % 3 == 0)).collect();
        let refs: Vec<&AnswerFeatures> = rows.iter().collect();
        let m = LogisticModel::fit(&refs, &labels, 0.5).unwrap();
        let back: LogisticModel = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        for r in &rows {
            assert_eq!(m.probability(r).to_bits(), back.probability(r).to_bits());
        }
    }
}
