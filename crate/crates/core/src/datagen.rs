//! Synthetic data.
//!
//! Training pairs come from shape sampling plus rejection: draw `(m, n)`
//! uniformly from the configured ranges, fill `X` uniformly over
//! `{-1, 0, +1}` and `y` uniformly over `{-1, +1}`, and keep the pair only if
//! it passes the validity predicate. Conditioned on `X`, accepted label
//! vectors are therefore uniform over the valid set.
//!
//! Validation datasets follow a conditionally independent LF model and are
//! not filtered.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelcore::{is_valid_unchecked, LabelMatrix, LabelVector};
use crate::rng::StreamId;

/// Stream ids inside a batch are `iteration << BATCH_STREAM_BITS | index`.
pub const BATCH_STREAM_BITS: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EntryDistribution {
    /// Each entry uniform over `{-1, 0, +1}`.
    #[default]
    Uniform3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// Inclusive range for the number of LFs.
    pub m_range: (usize, usize),
    /// Inclusive range for the number of data points.
    pub n_range: (usize, usize),
    pub entry_distribution: EntryDistribution,
    pub master_seed: u64,
    pub max_attempts_per_shape: u64,
    pub max_shapes: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl GenConfig {
    pub fn desk() -> Self {
        Self {
            m_range: (3, 15),
            n_range: (20, 200),
            entry_distribution: EntryDistribution::Uniform3,
            master_seed: 0,
            max_attempts_per_shape: 10_000,
            max_shapes: 100,
        }
    }

    pub fn paper() -> Self {
        Self {
            m_range: (2, 60),
            n_range: (100, 2000),
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lm, hm) = self.m_range;
        let (ln, hn) = self.n_range;
        if lm < 2 || lm > hm {
            return Err(Error::contract(format!("need 2 <= L_m <= H_m, got [{lm}, {hm}]")));
        }
        if ln < 1 || ln > hn {
            return Err(Error::contract(format!("need 1 <= L_n <= H_n, got [{ln}, {hn}]")));
        }
        if self.max_attempts_per_shape == 0 || self.max_shapes == 0 {
            return Err(Error::contract("rejection caps must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub x: LabelMatrix,
    pub y: LabelVector,
    pub lineage: StreamId,
    /// Rejection trials consumed, including the accepted one.
    pub attempts: u64,
}

pub fn draw_uniform_labels<R: Rng + ?Sized>(rng: &mut R, y: &mut [i8]) {
    for v in y.iter_mut() {
        *v = if rng.gen::<bool>() { 1 } else { -1 };
    }
}

pub fn draw_uniform_entries<R: Rng + ?Sized>(rng: &mut R, entries: &mut [i8]) {
    for v in entries.iter_mut() {
        *v = rng.gen_range(-1i8..=1);
    }
}

/// Draws one `(X, y)` pair; entries of `X` uniform over `{-1,0,+1}`.
pub fn draw_uniform_pair<R: Rng + ?Sized>(rng: &mut R, n: usize, m: usize) -> (LabelMatrix, Vec<i8>) {
    let mut entries = vec![0i8; n * m];
    draw_uniform_entries(rng, &mut entries);
    let mut y = vec![0i8; n];
    draw_uniform_labels(rng, &mut y);
    (LabelMatrix::binary(n, m, entries).expect("shape is positive"), y)
}

/// Rejection sampler for label vectors at a pinned matrix: draws `y`
/// uniformly and returns the first valid one.
pub struct ValidLabelSampler<'a, R> {
    x: &'a LabelMatrix,
    rng: R,
    y: Vec<i8>,
    draws: u64,
    max_draws: u64,
    accepted: usize,
}

impl<'a, R: Rng> ValidLabelSampler<'a, R> {
    pub fn new(x: &'a LabelMatrix, rng: R, max_draws: u64) -> Result<Self> {
        x.require_binary()?;
        Ok(Self { x, rng, y: vec![0; x.n()], draws: 0, max_draws, accepted: 0 })
    }

    pub fn next_valid(&mut self) -> Result<&[i8]> {
        loop {
            if self.draws >= self.max_draws {
                return Err(Error::TooSparse { draws: self.draws, accepted: self.accepted });
            }
            self.draws += 1;
            draw_uniform_labels(&mut self.rng, &mut self.y);
            if is_valid_unchecked(self.x, &self.y) {
                self.accepted += 1;
                return Ok(&self.y);
            }
        }
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }
}

pub fn gen_pair(cfg: &GenConfig, stream: StreamId) -> Result<SyntheticPair> {
    cfg.validate()?;
    let mut rng = stream.rng();
    let mut attempts = 0u64;
    for _ in 0..cfg.max_shapes {
        let m = rng.gen_range(cfg.m_range.0..=cfg.m_range.1);
        let n = rng.gen_range(cfg.n_range.0..=cfg.n_range.1);
        for _ in 0..cfg.max_attempts_per_shape {
            attempts += 1;
            let (x, y) = draw_uniform_pair(&mut rng, n, m);
            if is_valid_unchecked(&x, &y) {
                return Ok(SyntheticPair { x, y: LabelVector::from_raw(y), lineage: stream, attempts });
            }
        }
    }
    Err(Error::GenerationExhausted { shapes: cfg.max_shapes, attempts })
}

pub fn batch_stream(seed: u64, iteration: u64, index: usize) -> StreamId {
    StreamId::new(seed, (iteration << BATCH_STREAM_BITS) | index as u64)
}

/// `batch_size` pairs on disjoint streams derived from
/// `(cfg.master_seed, iteration)`.
pub fn gen_batch(cfg: &GenConfig, batch_size: usize, iteration: u64) -> Result<Vec<SyntheticPair>> {
    if batch_size == 0 || batch_size >= 1 << BATCH_STREAM_BITS {
        return Err(Error::contract(format!("batch size {batch_size} out of range")));
    }
    if iteration >= 1 << (64 - BATCH_STREAM_BITS) {
        return Err(Error::contract("iteration index too large"));
    }
    (0..batch_size)
        .map(|k| gen_pair(cfg, batch_stream(cfg.master_seed, iteration, k)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CondIndConfig {
    pub n_range: (usize, usize),
    pub m_range: (usize, usize),
    /// Range for the probability of class `+1`.
    pub prior_range: (f64, f64),
    /// Range for each LF's accuracy on non-abstain votes.
    pub accuracy_range: (f64, f64),
    /// Range for each LF's probability of voting at all.
    pub propensity_range: (f64, f64),
}

impl Default for CondIndConfig {
    fn default() -> Self {
        Self {
            n_range: (20, 200),
            m_range: (3, 15),
            prior_range: (0.3, 0.7),
            accuracy_range: (0.55, 0.95),
            propensity_range: (0.1, 0.9),
        }
    }
}

/// A dataset drawn from the conditionally independent LF model.
#[derive(Debug, Clone, PartialEq)]
pub struct CondIndDataset {
    pub x: LabelMatrix,
    pub y: LabelVector,
    pub prior: f64,
    pub accuracies: Vec<f64>,
    pub propensities: Vec<f64>,
    pub lineage: StreamId,
}

fn check_unit_range(name: &str, (lo, hi): (f64, f64)) -> Result<()> {
    if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
        return Err(Error::contract(format!("{name} must be a sub-range of [0, 1], got [{lo}, {hi}]")));
    }
    Ok(())
}

pub fn gen_condind_dataset(num_datasets: usize, cfg: &CondIndConfig, seed: u64) -> Result<Vec<CondIndDataset>> {
    if num_datasets == 0 {
        return Err(Error::contract("need at least one dataset"));
    }
    if cfg.n_range.0 < 1 || cfg.n_range.0 > cfg.n_range.1 || cfg.m_range.0 < 1 || cfg.m_range.0 > cfg.m_range.1 {
        return Err(Error::contract("invalid shape ranges"));
    }
    check_unit_range("prior_range", cfg.prior_range)?;
    check_unit_range("accuracy_range", cfg.accuracy_range)?;
    check_unit_range("propensity_range", cfg.propensity_range)?;
    Ok((0..num_datasets as u64).map(|k| condind_one(cfg, StreamId::new(seed, k))).collect())
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    lo + (hi - lo) * rng.gen::<f64>()
}

fn condind_one(cfg: &CondIndConfig, lineage: StreamId) -> CondIndDataset {
    let mut rng = lineage.rng();
    let n = rng.gen_range(cfg.n_range.0..=cfg.n_range.1);
    let m = rng.gen_range(cfg.m_range.0..=cfg.m_range.1);
    let prior = uniform(&mut rng, cfg.prior_range);
    let accuracies: Vec<f64> = (0..m).map(|_| uniform(&mut rng, cfg.accuracy_range)).collect();
    let propensities: Vec<f64> = (0..m).map(|_| uniform(&mut rng, cfg.propensity_range)).collect();
    let y: Vec<i8> = (0..n).map(|_| if rng.gen::<f64>() < prior { 1 } else { -1 }).collect();
    let mut entries = Vec::with_capacity(n * m);
    for &yi in &y {
        for j in 0..m {
            let v = if rng.gen::<f64>() >= propensities[j] {
                0
            } else if rng.gen::<f64>() < accuracies[j] {
                yi
            } else {
                -yi
            };
            entries.push(v);
        }
    }
    CondIndDataset {
        x: LabelMatrix::binary(n, m, entries).expect("shape is positive"),
        y: LabelVector::from_raw(y),
        prior,
        accuracies,
        propensities,
        lineage,
    }
}
