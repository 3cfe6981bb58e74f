use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Row-major dense tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::contract(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn row_vector(data: Vec<T>) -> Self {
        Self { shape: vec![1, data.len()], data }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![1, 1], data: vec![v] }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Leading dimension of a matrix; `1` for vectors.
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 { self.shape[0] } else { 1 }
    }

    /// Trailing dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn is_finite(&self) -> bool {
        all_finite(&self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::from_f64_lossy(v.to_f64_lossy())).collect() }
    }
}

/// `x - x` is zero for finite `x` and NaN otherwise; summing it in
/// independent lanes keeps the scan branch-free and vectorizable.
#[allow(clippy::eq_op)]
pub(crate) fn all_finite<T: Scalar>(data: &[T]) -> bool {
    let mut acc = [T::zero(); 8];
    let chunks = data.chunks_exact(8);
    let rest = chunks.remainder();
    for c in chunks {
        for l in 0..8 {
            acc[l] += c[l] - c[l];
        }
    }
    for (a, &v) in acc.iter_mut().zip(rest) {
        *a += v - v;
    }
    acc.iter().all(|a| a.is_finite())
}

/// Runs `$body` compiled with AVX2 enabled when the CPU has it. Every
/// kernel below updates each output element in the same order either way,
/// so results are bit-identical across the two paths.
macro_rules! dispatch {
    ($generic:ident, $wide:ident, ($($arg:ident),*)) => {{
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: the required CPU feature was detected at runtime.
                return unsafe { $wide($($arg),*) };
            }
        }
        $generic($($arg),*)
    }};
}

/// `out (r x c) += a (r x k) * b (k x c)`.
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    dispatch!(nn_kernel, nn_avx2, (a, b, out, r, k, c))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn nn_avx2<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    nn_kernel(a, b, out, r, k, c)
}

#[inline(always)]
fn nn_kernel<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let o = &mut out[i * c..(i + 1) * c];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (ov, &bv) in o.iter_mut().zip(&b[p * c..(p + 1) * c]) {
                *ov += av * bv;
            }
        }
    }
}

/// `out (r x c) += a (r x k) * b^T` where `b` is `c x k`. Transposes `b`
/// (always the small operand here) so the inner loop is an axpy, which
/// vectorizes where a dot-product reduction does not.
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    let mut bt = vec![T::zero(); k * c];
    for j in 0..c {
        for p in 0..k {
            bt[p * c + j] = b[j * k + p];
        }
    }
    gemm_nn(a, &bt, out, r, k, c);
}

/// `out (k x c) += a^T * b` where `a` is `r x k` and `b` is `r x c`.
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    dispatch!(tn_kernel, tn_avx2, (a, b, out, r, k, c))
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tn_avx2<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    tn_kernel(a, b, out, r, k, c)
}

#[inline(always)]
fn tn_kernel<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, k: usize, c: usize) {
    for i in 0..r {
        let br = &b[i * c..(i + 1) * c];
        for (p, &av) in a[i * k..(i + 1) * k].iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            for (ov, &bv) in out[p * c..(p + 1) * c].iter_mut().zip(br) {
                *ov += av * bv;
            }
        }
    }
}
