//! The optimal estimator `h*(X)`: the component-wise mean of every label
//! vector that is valid for `X`.
//!
//! [`exact_hstar`] enumerates all `2^n` candidates in Gray-code order. Each
//! step flips one label, which touches only that row's contribution to the
//! per-LF, per-class margins, so a step costs `O(m)`. [`mc_hstar`] estimates
//! the same mean by rejection sampling.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::{draw_uniform_pair, ValidLabelSampler};
use crate::error::{Error, Result};
use crate::labelcore::{is_valid_unchecked, LabelMatrix};
use crate::rng::stream_rng;

pub const DEFAULT_ENUMERATION_CAP: usize = 20;
pub const DEFAULT_MAX_DRAWS: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMethod {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// `h*` in `[-1, 1]`, one entry per data point.
    pub estimate: Vec<f64>,
    pub valid_count: u64,
    pub method: OracleMethod,
    pub samples_drawn: Option<u64>,
    /// Integer sums of the accepted label vectors; `estimate = sums / valid_count`.
    #[serde(skip)]
    pub sums: Vec<i64>,
}

impl OracleResult {
    fn from_sums(sums: Vec<i64>, valid_count: u64, method: OracleMethod, samples_drawn: Option<u64>) -> Self {
        let estimate = sums.iter().map(|&s| s as f64 / valid_count as f64).collect();
        Self { estimate, valid_count, method, samples_drawn, sums }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleConfig {
    pub enumeration_cap: usize,
    pub max_draws: u64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self { enumeration_cap: DEFAULT_ENUMERATION_CAP, max_draws: DEFAULT_MAX_DRAWS }
    }
}

pub fn exact_hstar(x: &LabelMatrix) -> Result<OracleResult> {
    exact_hstar_with(x, &OracleConfig::default())
}

/// Incrementally maintained margins (`correct - wrong`) for every LF and
/// class, plus how many LFs currently have a positive margin per class.
struct MarginState<'a> {
    x: &'a LabelMatrix,
    margin: [Vec<i32>; 2],
    positive: [usize; 2],
}

impl<'a> MarginState<'a> {
    /// Starts from `y = (-1, ..., -1)`.
    fn all_negative(x: &'a LabelMatrix) -> Self {
        let m = x.m();
        let mut neg = vec![0i32; m];
        for i in 0..x.n() {
            for (acc, &v) in neg.iter_mut().zip(x.row(i)) {
                *acc -= v as i32;
            }
        }
        let positive = [0, neg.iter().filter(|&&d| d > 0).count()];
        Self { x, margin: [vec![0; m], neg], positive }
    }

    /// Moves row `i` from label `from` to `-from`.
    fn flip(&mut self, i: usize, from: i8) {
        let (src, dst) = if from == 1 { (0, 1) } else { (1, 0) };
        let s = from as i32;
        let row = self.x.row(i);
        let [pos, neg] = &mut self.margin;
        let (a, b) = if src == 0 { (pos, neg) } else { (neg, pos) };
        for (j, &v) in row.iter().enumerate() {
            if v == 0 {
                continue;
            }
            let v = v as i32;
            // leaving class `from`: remove +1 if it agreed, -1 if it disagreed
            let before = a[j] > 0;
            a[j] -= v * s;
            if before != (a[j] > 0) {
                if before {
                    self.positive[src] -= 1;
                } else {
                    self.positive[src] += 1;
                }
            }
            let before = b[j] > 0;
            b[j] -= v * s;
            if before != (b[j] > 0) {
                if before {
                    self.positive[dst] -= 1;
                } else {
                    self.positive[dst] += 1;
                }
            }
        }
    }

    fn valid(&self) -> bool {
        let m = self.x.m();
        2 * self.positive[0] > m && 2 * self.positive[1] > m
    }
}

pub fn exact_hstar_with(x: &LabelMatrix, cfg: &OracleConfig) -> Result<OracleResult> {
    x.require_binary()?;
    let n = x.n();
    if n > cfg.enumeration_cap || n >= 63 {
        return Err(Error::EnumerationCap { n, cap: cfg.enumeration_cap.min(62) });
    }
    let mut state = MarginState::all_negative(x);
    let mut y = vec![-1i8; n];
    let mut sums = vec![0i64; n];
    // valid candidates seen while row i held its current label started at since[i]
    let mut since = vec![0u64; n];
    let mut valid = u64::from(state.valid());
    for k in 1u64..(1u64 << n) {
        let i = k.trailing_zeros() as usize;
        sums[i] += y[i] as i64 * (valid - since[i]) as i64;
        since[i] = valid;
        state.flip(i, y[i]);
        y[i] = -y[i];
        if state.valid() {
            valid += 1;
        }
    }
    for i in 0..n {
        sums[i] += y[i] as i64 * (valid - since[i]) as i64;
    }
    if valid == 0 {
        return Err(Error::NoValidLabeling);
    }
    Ok(OracleResult::from_sums(sums, valid, OracleMethod::Exact, None))
}

pub fn mc_hstar(x: &LabelMatrix, num_accepted: usize, seed: u64) -> Result<OracleResult> {
    mc_hstar_with(x, num_accepted, seed, &OracleConfig::default())
}

/// Mean of `num_accepted` uniformly drawn valid label vectors.
pub fn mc_hstar_with(x: &LabelMatrix, num_accepted: usize, seed: u64, cfg: &OracleConfig) -> Result<OracleResult> {
    if num_accepted == 0 {
        return Err(Error::contract("num_accepted must be at least 1"));
    }
    let mut sampler = ValidLabelSampler::new(x, stream_rng(seed, 0), cfg.max_draws)?;
    let mut sums = vec![0i64; x.n()];
    for _ in 0..num_accepted {
        let y = sampler.next_valid()?;
        for (s, &v) in sums.iter_mut().zip(y) {
            *s += v as i64;
        }
    }
    Ok(OracleResult::from_sums(sums, num_accepted as u64, OracleMethod::MonteCarlo, Some(sampler.draws())))
}

/// Number of LFs per trial for [`valid_pair_probability`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LfCount {
    Fixed(usize),
    /// Uniform over the inclusive range.
    Uniform(usize, usize),
}

/// Fraction of uniformly drawn `(X, y)` pairs that are valid.
pub fn valid_pair_probability(n: usize, m: LfCount, trials: u64, seed: u64) -> Result<f64> {
    if trials == 0 || n == 0 {
        return Err(Error::contract("need trials >= 1 and n >= 1"));
    }
    let (lo, hi) = match m {
        LfCount::Fixed(m) => (m, m),
        LfCount::Uniform(lo, hi) => (lo, hi),
    };
    if lo == 0 || lo > hi {
        return Err(Error::contract(format!("invalid LF count range [{lo}, {hi}]")));
    }
    let mut rng = stream_rng(seed, 0);
    let mut hits = 0u64;
    for _ in 0..trials {
        let m = rng.gen_range(lo..=hi);
        let (x, y) = draw_uniform_pair(&mut rng, n, m);
        if is_valid_unchecked(&x, &y) {
            hits += 1;
        }
    }
    Ok(hits as f64 / trials as f64)
}

fn ln_choose(ln_fact: &[f64], n: usize, k: usize) -> f64 {
    ln_fact[n] - ln_fact[k] - ln_fact[n - k]
}

fn ln_factorials(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for k in 1..=n {
        out[k] = out[k - 1] + (k as f64).ln();
    }
    out
}

/// Exact probability that a uniformly drawn pair with `n` points and `m`
/// LFs (entries uniform over `{-1,0,+1}`) is valid, counting ties.
///
/// Given the number `k` of points in a class, the per-LF margins on that
/// class are i.i.d. random walks of `k` steps in `{-1, 0, +1}`, and the two
/// classes use disjoint rows, so the probability factorizes over classes.
pub fn valid_pair_probability_exact(n: usize, m: usize) -> f64 {
    assert!(m >= 1);
    let ln_fact = ln_factorials(n.max(m));
    // q[k] = P(walk of k steps ends strictly positive)
    let mut q = vec![0.0; n + 1];
    let mut walk = vec![1.0f64];
    for qk in q.iter_mut().skip(1) {
        let mut next = vec![0.0; walk.len() + 2];
        for (d, &p) in walk.iter().enumerate() {
            next[d] += p / 3.0;
            next[d + 1] += p / 3.0;
            next[d + 2] += p / 3.0;
        }
        walk = next;
        let zero = walk.len() / 2;
        *qk = walk[zero + 1..].iter().sum();
    }
    let majority = |p: f64| -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return 1.0;
        }
        ((m / 2 + 1)..=m)
            .map(|s| (ln_choose(&ln_fact, m, s) + s as f64 * p.ln() + (m - s) as f64 * (1.0 - p).ln()).exp())
            .sum()
    };
    let tail: Vec<f64> = q.iter().map(|&p| majority(p)).collect();
    (0..=n)
        .map(|k| (ln_choose(&ln_fact, n, k) - n as f64 * std::f64::consts::LN_2).exp() * tail[k] * tail[n - k])
        .sum()
}

/// The tie-free approximation: `1/4` for odd `m`, and
/// `(1 - C(m, m/2) / 2^m) / 4` for even `m`.
pub fn tie_free_valid_pair_probability(m: usize) -> f64 {
    if m % 2 == 1 {
        0.25
    } else {
        let ln_fact = ln_factorials(m);
        let central = (ln_choose(&ln_fact, m, m / 2) - m as f64 * std::f64::consts::LN_2).exp();
        (1.0 - central) / 4.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeMinimizerCheck {
    /// Per-element cross-entropy minimizer over the sampled valid vectors,
    /// mapped back to `[-1, 1]`.
    pub empirical_mean: Vec<f64>,
    pub hstar: Vec<f64>,
}

/// Minimizes summed binary cross-entropy over `num_samples` uniformly
/// sampled valid label vectors and returns it next to the exact `h*`.
///
/// For targets `t_s in {0, 1}` the per-element loss
/// `-sum_s t_s ln q + (1 - t_s) ln(1 - q)` is minimized at `q = mean(t_s)`.
pub fn ce_minimizer_check(x: &LabelMatrix, num_samples: usize, seed: u64) -> Result<CeMinimizerCheck> {
    let hstar = exact_hstar(x)?.estimate;
    if num_samples == 0 {
        return Err(Error::contract("num_samples must be at least 1"));
    }
    let mut sampler = ValidLabelSampler::new(x, stream_rng(seed, 0), DEFAULT_MAX_DRAWS)?;
    let mut positives = vec![0u64; x.n()];
    for _ in 0..num_samples {
        for (c, &v) in positives.iter_mut().zip(sampler.next_valid()?) {
            *c += u64::from(v == 1);
        }
    }
    let empirical_mean = positives
        .iter()
        .map(|&c| 2.0 * (c as f64 / num_samples as f64) - 1.0)
        .collect();
    Ok(CeMinimizerCheck { empirical_mean, hstar })
}
