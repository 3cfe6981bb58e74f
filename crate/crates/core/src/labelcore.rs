//! Label matrices, the better-than-random validity predicate, and the
//! majority-vote baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Alphabet of a label matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LabelMode {
    /// Entries in `{-1, 0, +1}`.
    Binary,
    /// Entries in `{0, 1, ..., C}` with `C >= 2`.
    Multiclass(u8),
}

/// `n x m` matrix of weak labels, row-major. `0` is always abstention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    n: usize,
    m: usize,
    mode: LabelMode,
    entries: Vec<i8>,
}

impl LabelMatrix {
    pub fn new(n: usize, m: usize, mode: LabelMode, entries: Vec<i8>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::contract(format!("label matrix must be at least 1x1, got {n}x{m}")));
        }
        if entries.len() != n * m {
            return Err(Error::contract(format!(
                "expected {} entries for a {n}x{m} matrix, got {}",
                n * m,
                entries.len()
            )));
        }
        if let LabelMode::Multiclass(c) = mode {
            if !(2..=127).contains(&c) {
                return Err(Error::contract(format!("class count must be in [2, 127], got {c}")));
            }
        }
        for (k, &v) in entries.iter().enumerate() {
            if !value_allowed(mode, v) {
                return Err(Error::contract(format!(
                    "entry ({}, {}) = {v} is outside the {mode:?} alphabet",
                    k / m,
                    k % m
                )));
            }
        }
        Ok(Self { n, m, mode, entries })
    }

    pub fn binary(n: usize, m: usize, entries: Vec<i8>) -> Result<Self> {
        Self::new(n, m, LabelMode::Binary, entries)
    }

    /// Builds a binary matrix from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::contract("ragged rows"));
        }
        Self::binary(n, m, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mode(&self) -> LabelMode {
        self.mode
    }

    pub fn is_binary(&self) -> bool {
        self.mode == LabelMode::Binary
    }

    pub fn entries(&self) -> &[i8] {
        &self.entries
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> i8 {
        self.entries[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[i8] {
        &self.entries[i * self.m..(i + 1) * self.m]
    }

    pub fn count_nonzero(&self) -> usize {
        self.entries.iter().filter(|&&v| v != 0).count()
    }

    pub(crate) fn require_binary(&self) -> Result<()> {
        if self.is_binary() {
            Ok(())
        } else {
            Err(Error::contract("operation requires a binary label matrix"))
        }
    }

    /// `X[perm, :]`: output row `r` is input row `perm[r]`.
    pub fn permute_rows(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.n);
        let entries = perm.iter().flat_map(|&r| self.row(r).iter().copied()).collect();
        Self { entries, ..self.clone() }
    }

    /// `X[:, perm]`: output column `c` is input column `perm[c]`.
    pub fn permute_cols(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.m);
        let mut entries = Vec::with_capacity(self.entries.len());
        for i in 0..self.n {
            let row = self.row(i);
            entries.extend(perm.iter().map(|&c| row[c]));
        }
        Self { entries, ..self.clone() }
    }

    /// Swaps `+1` and `-1`, keeps abstentions. Binary mode only.
    pub fn negated(&self) -> Self {
        debug_assert!(self.is_binary());
        Self {
            entries: self.entries.iter().map(|v| -v).collect(),
            ..self.clone()
        }
    }
}

fn value_allowed(mode: LabelMode, v: i8) -> bool {
    match mode {
        LabelMode::Binary => (-1..=1).contains(&v),
        LabelMode::Multiclass(c) => v >= 0 && v <= c as i8,
    }
}

/// Hard labels: `{-1, +1}` in binary mode, `{1..C}` in multi-class mode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector(Vec<i8>);

impl LabelVector {
    pub fn binary(labels: Vec<i8>) -> Result<Self> {
        if let Some(k) = labels.iter().position(|&v| v != 1 && v != -1) {
            return Err(Error::contract(format!("label {k} = {} is not +1/-1", labels[k])));
        }
        Ok(Self(labels))
    }

    pub fn multiclass(labels: Vec<i8>, classes: u8) -> Result<Self> {
        if let Some(k) = labels.iter().position(|&v| v < 1 || v > classes as i8) {
            return Err(Error::contract(format!("label {k} = {} is not in 1..={classes}", labels[k])));
        }
        Ok(Self(labels))
    }

    pub(crate) fn from_raw(labels: Vec<i8>) -> Self {
        Self(labels)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<i8> {
        self.0
    }

    pub fn permute(&self, perm: &[usize]) -> Self {
        Self(perm.iter().map(|&r| self.0[r]).collect())
    }

    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|v| -v).collect())
    }
}

/// Per-point probability of class `+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbVector<T = f64>(pub Vec<T>);

impl<T: Scalar> ProbVector<T> {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    /// Thresholds at 0.5; ties go to `+1`.
    pub fn hard_labels(&self) -> LabelVector {
        self.hard_labels_at(T::half())
    }

    pub fn hard_labels_at(&self, threshold: T) -> LabelVector {
        LabelVector(self.0.iter().map(|&p| if p >= threshold { 1 } else { -1 }).collect())
    }

    /// Maps each probability to `2p - 1` in `[-1, 1]`.
    pub fn to_signed(&self) -> Vec<T> {
        let two = T::one() + T::one();
        self.0.iter().map(|&p| two * p - T::one()).collect()
    }
}

fn check_pair(x: &LabelMatrix, y: &LabelVector) -> Result<()> {
    x.require_binary()?;
    if y.len() != x.n() {
        return Err(Error::contract(format!(
            "label vector has length {} but the matrix has {} rows",
            y.len(),
            x.n()
        )));
    }
    Ok(())
}

/// Whether LF `j` is better than random on class `c`: among points whose
/// label is `c`, votes for `c` strictly outnumber votes for `-c`.
pub fn lf_better_than_random(x: &LabelMatrix, y: &LabelVector, j: usize, c: i8) -> Result<bool> {
    check_pair(x, y)?;
    if j >= x.m() {
        return Err(Error::contract(format!("LF index {j} out of range for m = {}", x.m())));
    }
    if c != 1 && c != -1 {
        return Err(Error::contract(format!("class must be +1 or -1, got {c}")));
    }
    Ok(better_than_random_unchecked(x, y.as_slice(), j, c))
}

fn better_than_random_unchecked(x: &LabelMatrix, y: &[i8], j: usize, c: i8) -> bool {
    let mut correct = 0usize;
    let mut wrong = 0usize;
    for (i, &yi) in y.iter().enumerate() {
        if yi != c {
            continue;
        }
        let v = x.get(i, j);
        if v == c {
            correct += 1;
        } else if v == -c {
            wrong += 1;
        }
    }
    correct > wrong
}

/// The validity predicate: for each class, strictly more than half of the
/// LFs are better than random.
pub fn is_valid(x: &LabelMatrix, y: &LabelVector) -> Result<bool> {
    check_pair(x, y)?;
    Ok(is_valid_unchecked(x, y.as_slice()))
}

/// Row-major single pass; `y` must have length `n` and entries `+-1`.
pub(crate) fn is_valid_unchecked(x: &LabelMatrix, y: &[i8]) -> bool {
    let m = x.m();
    // margin[c][j] = correct - wrong for LF j restricted to class c
    let mut margin_pos = vec![0i32; m];
    let mut margin_neg = vec![0i32; m];
    for (i, &yi) in y.iter().enumerate() {
        let row = x.row(i);
        let margin = if yi == 1 { &mut margin_pos } else { &mut margin_neg };
        let yi = yi as i32;
        for (acc, &v) in margin.iter_mut().zip(row) {
            *acc += v as i32 * yi;
        }
    }
    let pos = margin_pos.iter().filter(|&&d| d > 0).count();
    let neg = margin_neg.iter().filter(|&&d| d > 0).count();
    2 * pos > m && 2 * neg > m
}

/// Fraction of non-abstain votes that are `+1`, per row; `0.5` when a row
/// has no votes.
pub fn majority_vote(x: &LabelMatrix) -> Result<ProbVector<f64>> {
    x.require_binary()?;
    let probs = (0..x.n())
        .map(|i| {
            let (pos, neg) = x.row(i).iter().fold((0usize, 0usize), |(p, q), &v| match v {
                1 => (p + 1, q),
                -1 => (p, q + 1),
                _ => (p, q),
            });
            if pos + neg == 0 {
                0.5
            } else {
                pos as f64 / (pos + neg) as f64
            }
        })
        .collect();
    Ok(ProbVector(probs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m(rows: &[&[i8]]) -> LabelMatrix {
        LabelMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn y(v: &[i8]) -> LabelVector {
        LabelVector::binary(v.to_vec()).unwrap()
    }

    #[test]
    fn better_than_random_examples() {
        assert!(lf_better_than_random(&m(&[&[1], &[-1]]), &y(&[1, -1]), 0, 1).unwrap());
        assert!(!lf_better_than_random(&m(&[&[-1], &[1]]), &y(&[1, -1]), 0, 1).unwrap());
        assert!(!lf_better_than_random(&m(&[&[0], &[0]]), &y(&[1, -1]), 0, 1).unwrap());
    }

    #[test]
    fn better_than_random_rejects_bad_input() {
        let x = m(&[&[1], &[-1]]);
        assert!(lf_better_than_random(&x, &y(&[1]), 0, 1).is_err());
        assert!(lf_better_than_random(&x, &y(&[1, -1]), 1, 1).is_err());
        assert!(lf_better_than_random(&x, &y(&[1, -1]), 0, 0).is_err());
    }

    #[test]
    fn validity_examples() {
        let x = m(&[&[1, 1, 1], &[-1, -1, -1]]);
        assert!(is_valid(&x, &y(&[1, -1])).unwrap());
        assert!(!is_valid(&x, &y(&[-1, 1])).unwrap());
        assert!(!is_valid(&x, &y(&[1, 1])).unwrap());
        assert!(is_valid(&x, &y(&[1])).is_err());
    }

    #[test]
    fn validity_ties_are_invalid() {
        // LF 0 ties on class +1 (one right, one wrong); two of three LFs is still a majority
        let x = m(&[&[1, 1, 1], &[-1, 1, 1], &[-1, -1, -1]]);
        assert!(is_valid(&x, &y(&[1, 1, -1])).unwrap());
        // with m = 2 a single tie leaves exactly m/2 and fails the strict test
        let x = m(&[&[1, 1], &[-1, 1], &[-1, -1]]);
        assert!(!is_valid(&x, &y(&[1, 1, -1])).unwrap());
    }

    #[test]
    fn majority_vote_examples() {
        let x = LabelMatrix::binary(3, 4, vec![1, 1, -1, 0, 0, 0, 0, 0, 1, -1, 0, 0]).unwrap();
        let p = majority_vote(&x).unwrap();
        assert!((p.0[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.0[1], 0.5);
        assert_eq!(p.0[2], 0.5);
        assert_eq!(p.hard_labels().as_slice(), &[1, 1, 1]);
    }

    #[test]
    fn matrix_rejects_bad_entries() {
        assert!(LabelMatrix::binary(1, 2, vec![1, 2]).is_err());
        assert!(LabelMatrix::binary(0, 2, vec![]).is_err());
        assert!(LabelMatrix::new(1, 2, LabelMode::Multiclass(3), vec![3, 0]).is_ok());
        assert!(LabelMatrix::new(1, 2, LabelMode::Multiclass(3), vec![4, 0]).is_err());
        assert!(LabelMatrix::new(1, 2, LabelMode::Multiclass(3), vec![-1, 0]).is_err());
        assert!(LabelMatrix::new(1, 1, LabelMode::Multiclass(1), vec![1]).is_err());
    }

    fn random_pair(rng: &mut ChaCha8Rng) -> (LabelMatrix, LabelVector) {
        let n = rng.gen_range(1..12);
        let m = rng.gen_range(1..8);
        let entries = (0..n * m).map(|_| rng.gen_range(-1i8..=1)).collect();
        let labels = (0..n).map(|_| if rng.gen::<bool>() { 1 } else { -1 }).collect();
        (LabelMatrix::binary(n, m, entries).unwrap(), LabelVector::binary(labels).unwrap())
    }

    fn reference_is_valid(x: &LabelMatrix, y: &LabelVector) -> bool {
        let count = |c| (0..x.m()).filter(|&j| lf_better_than_random(x, y, j, c).unwrap()).count();
        2 * count(1) > x.m() && 2 * count(-1) > x.m()
    }

    proptest! {
        #[test]
        fn validity_symmetries(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, lab) = random_pair(&mut rng);
            let base = is_valid(&x, &lab).unwrap();
            prop_assert_eq!(base, reference_is_valid(&x, &lab));

            let mut rows: Vec<usize> = (0..x.n()).collect();
            rows.shuffle(&mut rng);
            let mut cols: Vec<usize> = (0..x.m()).collect();
            cols.shuffle(&mut rng);
            prop_assert_eq!(base, is_valid(&x.permute_rows(&rows), &lab.permute(&rows)).unwrap());
            prop_assert_eq!(base, is_valid(&x.permute_cols(&cols), &lab).unwrap());
            if base {
                prop_assert!(is_valid(&x.negated(), &lab.negated()).unwrap());
            }

            let ones = LabelVector::binary(vec![1; x.n()]).unwrap();
            prop_assert!(!is_valid(&x, &ones).unwrap());
            prop_assert!(!is_valid(&x, &ones.negated()).unwrap());
        }

        #[test]
        fn majority_vote_permutations(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, _) = random_pair(&mut rng);
            let base = majority_vote(&x).unwrap();
            let mut rows: Vec<usize> = (0..x.n()).collect();
            rows.shuffle(&mut rng);
            let mut cols: Vec<usize> = (0..x.m()).collect();
            cols.shuffle(&mut rng);
            prop_assert_eq!(&base, &majority_vote(&x.permute_cols(&cols)).unwrap());
            let permuted = majority_vote(&x.permute_rows(&rows)).unwrap();
            for (r, &src) in rows.iter().enumerate() {
                prop_assert_eq!(permuted.0[r], base.0[src]);
            }
        }
    }
}
