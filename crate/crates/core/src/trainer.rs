//! Pre-training on synthetic batches generated on the fly, and selection
//! among independent runs by mean validation accuracy.
//!
//! Each iteration draws a fresh batch, averages the per-pair loss (mean
//! binary cross-entropy over the pair's rows) and takes one Adam step. A
//! run stops when its smoothed loss has not reached a new minimum for
//! `patience` iterations, or at `max_iterations`. Validation accuracy is
//! only recorded; it never stops a run early.

use serde::{Deserialize, Serialize};

use crate::datagen::{gen_batch, gen_condind_dataset, CondIndConfig, CondIndDataset, GenConfig, SyntheticPair};
use crate::error::{Error, Result};
use crate::gradkernel::{AdamConfig, AdamState, Tape, Tensor};
use crate::hlmnet::{encode, forward_graph, init_params, record_bce, record_forward, ModelParams, ParamVars};
use crate::labelcore::{LabelMatrix, LabelVector, ProbVector};
use crate::rng::derive_seed;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidationConfig {
    pub num_datasets: usize,
    pub seed: u64,
    pub datasets: CondIndConfig,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self { num_datasets: 100, seed: 1, datasets: CondIndConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub gen: GenConfig,
    #[serde(rename = "K")]
    pub num_layers: usize,
    #[serde(rename = "d")]
    pub dim: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Iterations without a new minimum of the smoothed loss before stopping.
    pub patience: u64,
    pub max_iterations: u64,
    pub num_runs: usize,
    pub validation_every: u64,
    pub validation: ValidationConfig,
    pub master_seed: u64,
    /// Exponential smoothing factor for the training loss used by the
    /// stopping rule.
    pub loss_smoothing: f64,
    /// Emit a progress record every this many iterations.
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainConfig {
    pub fn desk() -> Self {
        Self {
            gen: GenConfig::desk(),
            num_layers: 4,
            dim: 16,
            batch_size: 50,
            adam: AdamConfig::default(),
            patience: 1_000,
            max_iterations: 20_000,
            num_runs: 3,
            validation_every: 250,
            validation: ValidationConfig::default(),
            master_seed: 0,
            loss_smoothing: 0.99,
            log_every: 100,
        }
    }

    pub fn paper() -> Self {
        Self {
            gen: GenConfig::paper(),
            dim: 32,
            patience: 10_000,
            max_iterations: 1_000_000,
            num_runs: 10,
            validation: ValidationConfig {
                datasets: CondIndConfig { n_range: (100, 2000), m_range: (2, 60), ..CondIndConfig::default() },
                ..ValidationConfig::default()
            },
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen.validate()?;
        if self.batch_size == 0 || self.num_runs == 0 || self.num_layers == 0 || self.dim == 0 {
            return Err(Error::contract("batch_size, num_runs, K and d must be at least 1"));
        }
        if self.max_iterations == 0 || self.patience > self.max_iterations {
            return Err(Error::contract("need 1 <= max_iterations and patience <= max_iterations"));
        }
        if self.validation_every == 0 || self.validation.num_datasets == 0 {
            return Err(Error::contract("validation_every and the validation set size must be positive"));
        }
        if !(0.0..1.0).contains(&self.loss_smoothing) {
            return Err(Error::contract("loss_smoothing must be in [0, 1)"));
        }
        Ok(())
    }

    /// Seed for the run's parameter initialization.
    pub fn init_seed(&self, run: usize) -> u64 {
        derive_seed(derive_seed(self.master_seed, run as u64), 0)
    }

    /// Generator config for the run's training stream.
    pub fn run_gen(&self, run: usize) -> GenConfig {
        GenConfig {
            master_seed: derive_seed(derive_seed(self.master_seed, run as u64), 1) ^ self.gen.master_seed,
            ..self.gen.clone()
        }
    }

    pub fn validation_set(&self) -> Result<Vec<CondIndDataset>> {
        gen_condind_dataset(self.validation.num_datasets, &self.validation.datasets, self.validation.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iteration: u64,
    pub train_loss: f64,
    pub smoothed_loss: f64,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: usize,
    pub init_seed: u64,
    pub data_seed: u64,
    pub iterations: u64,
    pub stop_reason: StopReason,
    pub final_smoothed_loss: f64,
    pub checkpoints: Vec<Checkpoint>,
    /// Arithmetic mean of the recorded validation accuracies.
    pub mean_validation_accuracy: Option<f64>,
    /// Where the run's final parameters were written, if anywhere.
    pub final_model: Option<String>,
}

/// One line of training progress.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Progress {
    pub run: usize,
    pub iteration: u64,
    pub loss: f64,
    pub smoothed_loss: f64,
    pub validation_accuracy: Option<f64>,
}

pub struct RunOutcome<T> {
    pub report: RunReport,
    pub params: ModelParams<T>,
}

fn targets<T: Scalar>(y: &LabelVector) -> Vec<(usize, T)> {
    y.as_slice()
        .iter()
        .enumerate()
        .map(|(i, &v)| (i, if v == 1 { T::one() } else { T::zero() }))
        .collect()
}

/// Mean binary cross-entropy between the model output and `(1 + y) / 2`.
pub fn loss<T: Scalar>(params: &ModelParams<T>, x: &LabelMatrix, y: &LabelVector) -> Result<T> {
    if y.len() != x.n() {
        return Err(Error::contract("label vector length differs from the matrix row count"));
    }
    let graph = encode(x)?;
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params)?;
    let logits = record_forward(&mut tape, &pv, &graph, params.dim)?;
    let l = record_bce(&mut tape, logits, &graph, &targets(y))?;
    Ok(tape.value(l).data()[0])
}

/// Loss and parameter gradients (in [`ModelParams::tensors`] order) for one
/// pair.
pub fn loss_and_grads<T: Scalar>(
    params: &ModelParams<T>,
    x: &LabelMatrix,
    targets: &[(usize, T)],
) -> Result<(T, Vec<Tensor<T>>)> {
    let graph = encode(x)?;
    let mut tape = Tape::new();
    let pv = ParamVars::register(&mut tape, params)?;
    let logits = record_forward(&mut tape, &pv, &graph, params.dim)?;
    let l = record_bce(&mut tape, logits, &graph, targets)?;
    let mut grads = tape.backward(l)?;
    let out = pv
        .vars()
        .iter()
        .zip(params.tensors())
        .map(|(&v, t)| grads.take_or_zeros(v, t))
        .collect();
    Ok((tape.value(l).data()[0], out))
}

fn batch_step<T: Scalar>(params: &ModelParams<T>, batch: &[SyntheticPair]) -> Result<(T, Vec<Tensor<T>>)> {
    let mut total = T::zero();
    let mut sum: Option<Vec<Tensor<T>>> = None;
    for pair in batch {
        let (l, g) = loss_and_grads(params, &pair.x, &targets(&pair.y))?;
        total += l;
        match &mut sum {
            None => sum = Some(g),
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| a.add_assign(b)),
        }
    }
    let inv = T::one() / T::from_usize_lossy(batch.len());
    let grads = sum.expect("non-empty batch").into_iter().map(|t| t.map(|v| v * inv)).collect();
    Ok((total * inv, grads))
}

/// Hard-label accuracy of `probs` (threshold 0.5, ties to `+1`).
pub fn accuracy<T: Scalar>(probs: &ProbVector<T>, y: &LabelVector) -> f64 {
    let pred = probs.hard_labels();
    let hits = pred.as_slice().iter().zip(y.as_slice()).filter(|(a, b)| a == b).count();
    hits as f64 / y.len() as f64
}

/// Mean accuracy of the model over `datasets`. Matrices with no votes at
/// all are scored as a constant `0.5` prediction.
pub fn validation_accuracy<T: Scalar>(params: &ModelParams<T>, datasets: &[CondIndDataset]) -> Result<f64> {
    let mut total = 0.0;
    for ds in datasets {
        let graph = encode(&ds.x)?;
        let probs = match forward_graph(params, &graph) {
            Ok(p) => p,
            Err(Error::EmptyMatrix) => ProbVector(vec![T::half(); ds.x.n()]),
            Err(e) => return Err(e),
        };
        total += accuracy(&probs, &ds.y);
    }
    Ok(total / datasets.len() as f64)
}

pub fn train_single_run<T: Scalar>(
    cfg: &TrainConfig,
    run_id: usize,
    validation: &[CondIndDataset],
    progress: &(dyn Fn(&Progress) + Sync),
) -> Result<RunOutcome<T>> {
    cfg.validate()?;
    let init_seed = cfg.init_seed(run_id);
    let gen = cfg.run_gen(run_id);
    let mut params: ModelParams<T> = init_params(cfg.num_layers, cfg.dim, init_seed)?;
    let mut adam = AdamState::new(params.tensors(), cfg.adam);
    let mut report = RunReport {
        run_id,
        init_seed,
        data_seed: gen.master_seed,
        iterations: 0,
        stop_reason: StopReason::MaxIterations,
        final_smoothed_loss: f64::NAN,
        checkpoints: Vec::new(),
        mean_validation_accuracy: None,
        final_model: None,
    };
    let mut smoothed: Option<f64> = None;
    let mut best = f64::INFINITY;
    let mut best_at = 0u64;
    for it in 0..cfg.max_iterations {
        let batch = gen_batch(&gen, cfg.batch_size, it)?;
        let (batch_loss, grads) = match batch_step(&params, &batch) {
            Ok((l, g)) if l.is_finite() && g.iter().all(Tensor::is_finite) => (l.to_f64_lossy(), g),
            Err(e) if !matches!(e, Error::NonFinite(_)) => return Err(e),
            _ => {
                report.stop_reason = StopReason::Diverged;
                break;
            }
        };
        adam.step(&mut params.tensors_mut(), &grads)?;
        report.iterations = it + 1;
        let s = match smoothed {
            None => batch_loss,
            Some(prev) => cfg.loss_smoothing * prev + (1.0 - cfg.loss_smoothing) * batch_loss,
        };
        smoothed = Some(s);
        if s < best {
            best = s;
            best_at = it;
        }
        let last = it + 1 == cfg.max_iterations || it - best_at >= cfg.patience;
        let validate = (it + 1) % cfg.validation_every == 0 || last;
        let acc = if validate { Some(validation_accuracy(&params, validation)?) } else { None };
        if let Some(a) = acc {
            report.checkpoints.push(Checkpoint {
                iteration: it + 1,
                train_loss: batch_loss,
                smoothed_loss: s,
                validation_accuracy: a,
            });
        }
        if acc.is_some() || (it + 1) % cfg.log_every.max(1) == 0 {
            progress(&Progress { run: run_id, iteration: it + 1, loss: batch_loss, smoothed_loss: s, validation_accuracy: acc });
        }
        if last {
            if it - best_at >= cfg.patience {
                report.stop_reason = StopReason::Patience;
            }
            break;
        }
    }
    report.final_smoothed_loss = smoothed.unwrap_or(f64::NAN);
    if !report.checkpoints.is_empty() {
        let sum: f64 = report.checkpoints.iter().map(|c| c.validation_accuracy).sum();
        report.mean_validation_accuracy = Some(sum / report.checkpoints.len() as f64);
    }
    Ok(RunOutcome { report, params })
}

pub struct Selection<T> {
    pub params: ModelParams<T>,
    pub selected_run: usize,
    pub reports: Vec<RunReport>,
    /// Final parameters of every run, indexed by run id.
    pub run_params: Vec<ModelParams<T>>,
}

/// Trains `num_runs` independent runs (concurrently) and keeps the final
/// parameters of the run with the highest mean validation accuracy. Ties
/// go to the lower run id; diverged runs are never selected.
pub fn train_select<T: Scalar>(cfg: &TrainConfig, progress: &(dyn Fn(&Progress) + Sync)) -> Result<Selection<T>> {
    cfg.validate()?;
    let validation = cfg.validation_set()?;
    let outcomes: Vec<Result<RunOutcome<T>>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.num_runs)
            .map(|run| {
                let validation = &validation;
                s.spawn(move || train_single_run(cfg, run, validation, progress))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let mut selected: Option<(usize, f64)> = None;
    for o in &outcomes {
        let r = &o.report;
        if r.stop_reason == StopReason::Diverged {
            continue;
        }
        let Some(acc) = r.mean_validation_accuracy else { continue };
        if selected.is_none_or(|(_, best)| acc > best) {
            selected = Some((r.run_id, acc));
        }
    }
    let reports: Vec<RunReport> = outcomes.iter().map(|o| o.report.clone()).collect();
    let Some((selected_run, _)) = selected else {
        return Err(Error::AllRunsDiverged { reports });
    };
    let run_params: Vec<ModelParams<T>> = outcomes.into_iter().map(|o| o.params).collect();
    Ok(Selection { params: run_params[selected_run].clone(), selected_run, reports, run_params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hlmnet::init_params;

    fn tiny() -> TrainConfig {
        TrainConfig {
            gen: GenConfig { n_range: (6, 12), m_range: (3, 5), ..GenConfig::desk() },
            num_layers: 2,
            dim: 4,
            batch_size: 4,
            patience: 15,
            max_iterations: 30,
            num_runs: 2,
            validation_every: 10,
            validation: ValidationConfig {
                num_datasets: 5,
                seed: 3,
                datasets: CondIndConfig { n_range: (10, 20), m_range: (3, 5), ..CondIndConfig::default() },
            },
            ..TrainConfig::desk()
        }
    }

    #[test]
    fn loss_examples() {
        let p = init_params::<f64>(1, 3, 0).unwrap();
        let x = LabelMatrix::from_rows(&[vec![0, 0], vec![0, 0], vec![1, -1]]).unwrap();
        let y = LabelVector::binary(vec![1, -1, 1]).unwrap();
        let l = loss(&p, &x, &y).unwrap();
        assert!(l.is_finite() && l > 0.0);
        // permuting rows of (X, y) together leaves the loss unchanged
        let perm = [2, 0, 1];
        let lp = loss(&p, &x.permute_rows(&perm), &y.permute(&perm)).unwrap();
        assert!((l - lp).abs() < 1e-12);
        assert!(loss(&p, &x, &LabelVector::binary(vec![1]).unwrap()).is_err());
    }

    #[test]
    fn constant_half_prediction_costs_ln2() {
        // zero the last head layer so every logit is 0
        let mut p = init_params::<f64>(1, 3, 0).unwrap();
        p.head[2].weight = Tensor::zeros(&[1, 3]);
        p.head[2].bias = Tensor::zeros(&[1, 1]);
        let x = LabelMatrix::from_rows(&[vec![1, 1], vec![-1, 1]]).unwrap();
        let y = LabelVector::binary(vec![1, -1]).unwrap();
        assert!((loss(&p, &x, &y).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn confident_correct_prediction_has_small_loss() {
        let mut p = init_params::<f64>(1, 2, 0).unwrap();
        p.head[2].weight = Tensor::zeros(&[1, 2]);
        p.head[2].bias = Tensor::row_vector(vec![40.0]);
        let x = LabelMatrix::from_rows(&[vec![1, 1]]).unwrap();
        let y = LabelVector::binary(vec![1]).unwrap();
        assert!(loss(&p, &x, &y).unwrap() < 1e-15);
    }

    #[test]
    fn runs_are_deterministic() {
        let cfg = tiny();
        let val = cfg.validation_set().unwrap();
        let a = train_single_run::<f64>(&cfg, 0, &val, &|_| {}).unwrap();
        let b = train_single_run::<f64>(&cfg, 0, &val, &|_| {}).unwrap();
        assert_eq!(a.report, b.report);
        assert_eq!(a.params, b.params);
        let c = train_single_run::<f64>(&cfg, 1, &val, &|_| {}).unwrap();
        assert_ne!(a.params, c.params);
        let r = &a.report;
        assert!(r.checkpoints.windows(2).all(|w| w[0].iteration < w[1].iteration));
        let mean = r.checkpoints.iter().map(|c| c.validation_accuracy).sum::<f64>() / r.checkpoints.len() as f64;
        assert_eq!(r.mean_validation_accuracy, Some(mean));
    }

    #[test]
    fn patience_stops_the_run() {
        // lr = 0 freezes the model, so the smoothed loss only reaches new
        // minima by chance; the run must stop within patience of the last one
        let cfg = TrainConfig {
            adam: AdamConfig { lr: 0.0, ..AdamConfig::default() },
            patience: 5,
            max_iterations: 200,
            loss_smoothing: 0.0,
            ..tiny()
        };
        let val = cfg.validation_set().unwrap();
        let out = train_single_run::<f64>(&cfg, 0, &val, &|_| {}).unwrap();
        assert_eq!(out.report.stop_reason, StopReason::Patience);
        assert!(out.report.iterations < 200);
    }

    #[test]
    fn selection_picks_best_mean_accuracy() {
        let cfg = tiny();
        let sel = train_select::<f64>(&cfg, &|_| {}).unwrap();
        assert_eq!(sel.reports.len(), 2);
        let best = sel.reports[sel.selected_run].mean_validation_accuracy.unwrap();
        for r in &sel.reports {
            assert!(best >= r.mean_validation_accuracy.unwrap());
        }
        assert_eq!(sel.params, sel.run_params[sel.selected_run]);

        let single = TrainConfig { num_runs: 1, ..tiny() };
        let sel = train_select::<f64>(&single, &|_| {}).unwrap();
        assert_eq!(sel.selected_run, 0);
        let val = single.validation_set().unwrap();
        assert_eq!(sel.params, train_single_run::<f64>(&single, 0, &val, &|_| {}).unwrap().params);
    }

    #[test]
    fn divergence_is_reported() {
        let cfg = TrainConfig { adam: AdamConfig { lr: f64::INFINITY, ..AdamConfig::default() }, num_runs: 1, ..tiny() };
        match train_select::<f64>(&cfg, &|_| {}) {
            Err(Error::AllRunsDiverged { reports }) => assert_eq!(reports[0].stop_reason, StopReason::Diverged),
            other => panic!("unexpected {:?}", other.map(|s| s.selected_run)),
        }
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..tiny() }.validate().is_err());
        assert!(TrainConfig { patience: 100, max_iterations: 10, ..tiny() }.validate().is_err());
        assert!(TrainConfig::paper().validate().is_ok());
        let paper = TrainConfig::paper();
        assert_eq!((paper.num_layers, paper.dim, paper.batch_size, paper.num_runs), (4, 32, 50, 10));
        assert_eq!(paper.patience, 10_000);
    }
}
