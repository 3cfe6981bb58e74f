//! Accuracy and F1 for hard predictions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Acc,
    F1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub metric: Metric,
    pub value: f64,
    pub n: usize,
}

fn check(pred: &[i8], truth: &[i8]) -> Result<()> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::contract(format!(
            "{} predictions vs {} ground-truth labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(())
}

pub fn accuracy(pred: &[i8], truth: &[i8]) -> Result<f64> {
    check(pred, truth)?;
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// F1 with `positive` as the positive class. Defined as 0 when there are no
/// true positives (including empty prediction or truth sets).
pub fn f1(pred: &[i8], truth: &[i8], positive: i8) -> Result<f64> {
    check(pred, truth)?;
    let tp = pred.iter().zip(truth).filter(|&(&p, &t)| p == positive && t == positive).count() as f64;
    let pp = pred.iter().filter(|&&p| p == positive).count() as f64;
    let ap = truth.iter().filter(|&&t| t == positive).count() as f64;
    if tp == 0.0 {
        return Ok(0.0);
    }
    let precision = tp / pp;
    let recall = tp / ap;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Hard labels from prediction rows: a single column is a probability of
/// `+1` thresholded at `threshold` (ties to `+1`); `C` columns give the
/// 1-based argmax (ties to the lowest class).
pub fn hard_predictions(rows: &[Vec<f64>], threshold: f64) -> Vec<i8> {
    rows.iter()
        .map(|row| {
            if row.len() == 1 {
                if row[0] >= threshold { 1 } else { -1 }
            } else {
                let mut best = 0;
                for (k, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = k;
                    }
                }
                (best + 1) as i8
            }
        })
        .collect()
}

pub fn evaluate(pred: &[i8], truth: &[i8], metric: Metric, positive: i8) -> Result<Evaluation> {
    let value = match metric {
        Metric::Acc => accuracy(pred, truth)?,
        Metric::F1 => f1(pred, truth, positive)?,
    };
    Ok(Evaluation { metric, value, n: pred.len() })
}
