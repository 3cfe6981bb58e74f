//! Fine-tuning on revealed ground-truth labels, and one-vs-rest multi-class
//! inference with the binary model.

use crate::error::{Error, Result};
use crate::gradkernel::{AdamConfig, AdamState};
use crate::hlmnet::{forward, ModelParams};
use crate::labelcore::{LabelMatrix, LabelMode};
use crate::scalar::Scalar;
use crate::trainer::loss_and_grads;

/// Revealed labels for a subset of the data points.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSubset {
    indices: Vec<usize>,
    labels: Vec<i8>,
}

impl LabeledSubset {
    /// Binary labels (`+-1`) at unique indices below `n`.
    pub fn new(pairs: &[(usize, i8)], n: usize) -> Result<Self> {
        let mut seen = vec![false; n];
        for &(i, y) in pairs {
            if i >= n {
                return Err(Error::contract(format!("index {i} out of range for n = {n}")));
            }
            if seen[i] {
                return Err(Error::contract(format!("index {i} appears twice")));
            }
            seen[i] = true;
            if y != 1 && y != -1 {
                return Err(Error::contract(format!("label {y} at index {i} is not +1/-1")));
            }
        }
        Ok(Self { indices: pairs.iter().map(|p| p.0).collect(), labels: pairs.iter().map(|p| p.1).collect() })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    fn targets<T: Scalar>(&self) -> Vec<(usize, T)> {
        self.indices
            .iter()
            .zip(&self.labels)
            .map(|(&i, &y)| (i, if y == 1 { T::one() } else { T::zero() }))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FinetuneConfig {
    /// Defaults to `1e-4`.
    pub lr: Option<f64>,
    /// Defaults to `round(sqrt(|I|))`, at least 1.
    pub epochs: Option<usize>,
}

pub const DEFAULT_FINETUNE_LR: f64 = 1e-4;

pub fn default_epochs(revealed: usize) -> usize {
    ((revealed as f64).sqrt().round() as usize).max(1)
}

/// Mean cross-entropy of the model on the revealed points only.
pub fn restricted_loss<T: Scalar>(params: &ModelParams<T>, x: &LabelMatrix, subset: &LabeledSubset) -> Result<T> {
    Ok(loss_and_grads(params, x, &subset.targets())?.0)
}

/// Full-batch Adam steps on the cross-entropy restricted to the revealed
/// points, one step per epoch. Returns new parameters.
pub fn finetune<T: Scalar>(
    params: &ModelParams<T>,
    x: &LabelMatrix,
    subset: &LabeledSubset,
    cfg: FinetuneConfig,
) -> Result<ModelParams<T>> {
    x.require_binary()?;
    if subset.is_empty() {
        return Err(Error::contract("fine-tuning needs at least one revealed label"));
    }
    if let Some(&bad) = subset.indices.iter().find(|&&i| i >= x.n()) {
        return Err(Error::contract(format!("index {bad} out of range for n = {}", x.n())));
    }
    let epochs = cfg.epochs.unwrap_or_else(|| default_epochs(subset.len()));
    let lr = cfg.lr.unwrap_or(DEFAULT_FINETUNE_LR);
    let mut tuned = params.clone();
    let mut adam = AdamState::new(tuned.tensors(), AdamConfig { lr, ..AdamConfig::default() });
    let targets = subset.targets();
    for epoch in 0..epochs {
        let (_, grads) = loss_and_grads(&tuned, x, &targets)?;
        if !grads.iter().all(|g| g.is_finite()) {
            return Err(Error::NonFinite(format!("fine-tuning gradient at epoch {epoch}")));
        }
        adam.step(&mut tuned.tensors_mut(), &grads)?;
    }
    Ok(tuned)
}

/// `X_c`: `+1` where `X = c`, `0` where `X` abstains, `-1` elsewhere.
pub fn one_vs_rest(x: &LabelMatrix, class: u8) -> Result<LabelMatrix> {
    let entries = x
        .entries()
        .iter()
        .map(|&v| if v == 0 { 0 } else if v == class as i8 { 1 } else { -1 })
        .collect();
    LabelMatrix::binary(x.n(), x.m(), entries)
}

/// Soft labels (`n x C`): the per-class probabilities of the one-vs-rest
/// matrices, normalized per row.
pub fn multiclass_infer<T: Scalar>(params: &ModelParams<T>, x: &LabelMatrix) -> Result<Vec<Vec<T>>> {
    let LabelMode::Multiclass(classes) = x.mode() else {
        return Err(Error::contract("multi-class inference needs a multi-class label matrix"));
    };
    if classes < 2 {
        return Err(Error::contract("need at least two classes"));
    }
    if x.count_nonzero() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let per_class = (1..=classes)
        .map(|c| forward(params, &one_vs_rest(x, c)?))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..x.n())
        .map(|i| {
            let total: T = per_class.iter().map(|p| p.0[i]).sum();
            per_class.iter().map(|p| p.0[i] / total).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hlmnet::init_params;

    #[test]
    fn default_epoch_counts() {
        assert_eq!(default_epochs(100), 10);
        assert_eq!(default_epochs(300), 17);
        assert_eq!(default_epochs(1), 1);
        assert_eq!(default_epochs(0), 1);
    }

    #[test]
    fn subset_validation() {
        assert!(LabeledSubset::new(&[(0, 1), (0, -1)], 3).is_err());
        assert!(LabeledSubset::new(&[(3, 1)], 3).is_err());
        assert!(LabeledSubset::new(&[(1, 0)], 3).is_err());
        let p = init_params::<f64>(1, 2, 0).unwrap();
        let x = LabelMatrix::from_rows(&[vec![1, 1]]).unwrap();
        assert!(finetune(&p, &x, &LabeledSubset::new(&[], 1).unwrap(), FinetuneConfig::default()).is_err());
    }

    #[test]
    fn zero_epochs_returns_input() {
        let p = init_params::<f64>(2, 3, 0).unwrap();
        let x = LabelMatrix::from_rows(&[vec![1, -1], vec![1, 1]]).unwrap();
        let s = LabeledSubset::new(&[(0, 1)], 2).unwrap();
        let out = finetune(&p, &x, &s, FinetuneConfig { epochs: Some(0), lr: None }).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn one_vs_rest_encoding() {
        let x = LabelMatrix::new(2, 3, LabelMode::Multiclass(3), vec![1, 2, 0, 3, 3, 1]).unwrap();
        assert_eq!(one_vs_rest(&x, 3).unwrap().entries(), &[-1, -1, 0, 1, 1, -1]);
    }

    #[test]
    fn multiclass_rows_are_distributions() {
        let p = init_params::<f64>(2, 4, 1).unwrap();
        let x = LabelMatrix::new(3, 2, LabelMode::Multiclass(4), vec![1, 2, 0, 0, 4, 4]).unwrap();
        let soft = multiclass_infer(&p, &x).unwrap();
        for row in &soft {
            assert_eq!(row.len(), 4);
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        // all-abstain row: every class gets 0.5 before normalization
        assert!(soft[1].iter().all(|&v| (v - 0.25).abs() < 1e-15));
        assert!(multiclass_infer(&p, &LabelMatrix::from_rows(&[vec![1]]).unwrap()).is_err());
    }
}
