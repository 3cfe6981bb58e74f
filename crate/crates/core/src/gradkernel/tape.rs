use std::sync::Arc;

use super::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row groups in compressed form. Every group is non-empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Groups {
    offsets: Vec<usize>,
    members: Vec<usize>,
    max_member: Option<usize>,
}

impl Groups {
    pub fn new(lists: &[Vec<usize>]) -> Result<Self> {
        let mut offsets = Vec::with_capacity(lists.len() + 1);
        let mut members = Vec::new();
        offsets.push(0);
        for (g, list) in lists.iter().enumerate() {
            if list.is_empty() {
                return Err(Error::contract(format!("group {g} is empty")));
            }
            members.extend_from_slice(list);
            offsets.push(members.len());
        }
        let max_member = members.iter().copied().max();
        Ok(Self { offsets, members, max_member })
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn members(&self, g: usize) -> &[usize] {
        &self.members[self.offsets[g]..self.offsets[g + 1]]
    }

    fn max_member(&self) -> Option<usize> {
        self.max_member
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, T),
    AddScalar(Var),
    GroupMean(Var, Arc<Groups>),
    GatherRows(Var, Arc<Vec<usize>>),
    AddGathered { base: Var, parts: Vec<(Var, Arc<Vec<usize>>)>, bias: Var, relu: bool },
    SliceRows(Var, usize),
    BceLogitsMean(Var, Vec<T>),
    MeanAll(Var),
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::MatMulT(..) => "matmul_t",
            Op::Add(..) => "add",
            Op::AddRow(..) => "add_row",
            Op::Concat(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::GroupMean(..) => "group_mean",
            Op::GatherRows(..) => "gather_rows",
            Op::AddGathered { relu: false, .. } => "add_gathered",
            Op::AddGathered { relu: true, .. } => "add_gathered_relu",
            Op::SliceRows(..) => "slice_rows",
            Op::BceLogitsMean(..) => "bce_with_logits_mean",
            Op::MeanAll(..) => "mean_all",
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Records operations in creation order; parents always precede children,
/// so reverse creation order is a valid reverse topological order.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of one scalar with respect to every recorded value.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient for `v`, or zeros shaped like `like` when nothing reached it.
    pub fn take_or_zeros(&mut self, v: Var, like: &Tensor<T>) -> Tensor<T> {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn column_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let c = g.cols();
    let mut out = vec![T::zero(); c];
    for row in g.data().chunks_exact(c) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::row_vector(out)
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::contract(format!("{op}: {detail}"))
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(op.name().to_string()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Trainable input.
    pub fn param(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, t: Tensor<T>) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.rows() {
            return Err(shape_err("matmul", format!("{:?} x {:?}", x.shape(), y.shape())));
        }
        let (r, k, c) = (x.rows(), x.cols(), y.cols());
        let mut out = vec![T::zero(); r * c];
        gemm_nn(x.data(), y.data(), &mut out, r, k, c);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(r, c, out)?, Op::MatMul(a, b), rg)
    }

    /// `a * b^T`; with `b` stored as `out x in` this applies a linear map to
    /// every row of `a`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.cols() != y.cols() {
            return Err(shape_err("matmul_t", format!("{:?} x {:?}^T", x.shape(), y.shape())));
        }
        let (r, k, c) = (x.rows(), x.cols(), y.rows());
        let mut out = vec![T::zero(); r * c];
        gemm_nt(x.data(), y.data(), &mut out, r, k, c);
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::matrix(r, c, out)?, Op::MatMulT(a, b), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", format!("{:?} + {:?}", x.shape(), y.shape())));
        }
        let mut out = x.clone();
        out.add_assign(y);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    /// Adds the `1 x c` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.rows() != 1 || b.cols() != x.cols() {
            return Err(shape_err("add_row", format!("{:?} + row {:?}", x.shape(), b.shape())));
        }
        let mut out = x.clone();
        let c = x.cols();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            *v += b.data()[k % c];
        }
        let rg = self.rg(a) || self.rg(bias);
        self.push(out, Op::AddRow(a, bias), rg)
    }

    /// Concatenates along the last dimension.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs".into()));
        };
        let r = self.value(first).rows();
        if parts.iter().any(|&p| self.value(p).rows() != r) {
            return Err(shape_err("concat_cols", "row counts differ".into()));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Tensor::matrix(r, total, out)?, Op::Concat(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.cols() || len == 0 {
            return Err(shape_err("slice_cols", format!("[{start}, {}) of {:?}", start + len, x.shape())));
        }
        let out: Vec<T> = (0..x.rows()).flat_map(|i| x.row(i)[start..start + len].iter().copied()).collect();
        let t = Tensor::matrix(x.rows(), len, out)?;
        let rg = self.rg(a);
        self.push(t, Op::SliceCols(a, start), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        if start + len > x.rows() || len == 0 {
            return Err(shape_err("slice_rows", format!("[{start}, {}) of {:?}", start + len, x.shape())));
        }
        let c = x.cols();
        let t = Tensor::matrix(len, c, x.data()[start * c..(start + len) * c].to_vec())?;
        let rg = self.rg(a);
        self.push(t, Op::SliceRows(a, start), rg)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: T) -> Result<Var> {
        let out = self.value(a).map(|v| v + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    /// One output row per group: the mean of that group's rows of `a`,
    /// divided by the group's member count.
    pub fn group_mean(&mut self, a: Var, groups: Arc<Groups>) -> Result<Var> {
        let x = self.value(a);
        if groups.max_member().is_some_and(|mx| mx >= x.rows()) {
            return Err(shape_err("group_mean", format!("member index out of range for {} rows", x.rows())));
        }
        let c = x.cols();
        let mut out = vec![T::zero(); groups.len() * c];
        for g in 0..groups.len() {
            let members = groups.members(g);
            let o = &mut out[g * c..(g + 1) * c];
            for &r in members {
                for (ov, &xv) in o.iter_mut().zip(x.row(r)) {
                    *ov += xv;
                }
            }
            let inv = T::one() / T::from_usize_lossy(members.len());
            o.iter_mut().for_each(|v| *v *= inv);
        }
        let t = Tensor::matrix(groups.len(), c, out)?;
        let rg = self.rg(a);
        self.push(t, Op::GroupMean(a, groups), rg)
    }

    /// Output row `k` is row `index[k]` of `a`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<Vec<usize>>) -> Result<Var> {
        let x = self.value(a);
        if index.iter().any(|&r| r >= x.rows()) {
            return Err(shape_err("gather_rows", format!("index out of range for {} rows", x.rows())));
        }
        let out: Vec<T> = index.iter().flat_map(|&r| x.row(r).iter().copied()).collect();
        let t = Tensor::matrix(index.len(), x.cols(), out)?;
        let rg = self.rg(a);
        self.push(t, Op::GatherRows(a, index), rg)
    }

    /// `base + sum_q gather_rows(parts[q]) + bias`: broadcasts per-group
    /// rows back onto the rows of `base` in one pass.
    pub fn add_gathered(&mut self, base: Var, parts: &[(Var, Arc<Vec<usize>>)], bias: Var) -> Result<Var> {
        self.gathered(base, parts, bias, false)
    }

    /// [`Tape::add_gathered`] followed by relu, without the intermediate.
    pub fn add_gathered_relu(&mut self, base: Var, parts: &[(Var, Arc<Vec<usize>>)], bias: Var) -> Result<Var> {
        self.gathered(base, parts, bias, true)
    }

    fn gathered(&mut self, base: Var, parts: &[(Var, Arc<Vec<usize>>)], bias: Var, relu: bool) -> Result<Var> {
        let (x, b) = (self.value(base), self.value(bias));
        let c = x.cols();
        if b.rows() != 1 || b.cols() != c {
            return Err(shape_err("add_gathered", format!("{:?} + row {:?}", x.shape(), b.shape())));
        }
        for (p, index) in parts {
            let pv = self.value(*p);
            if pv.cols() != c || index.len() != x.rows() || index.iter().any(|&r| r >= pv.rows()) {
                return Err(shape_err("add_gathered", format!("part {:?} does not broadcast onto {:?}", pv.shape(), x.shape())));
            }
        }
        let mut out = x.clone();
        for (i, o) in out.data_mut().chunks_exact_mut(c).enumerate() {
            for (ov, &bv) in o.iter_mut().zip(b.data()) {
                *ov += bv;
            }
            for (p, index) in parts {
                for (ov, &pv) in o.iter_mut().zip(self.value(*p).row(index[i])) {
                    *ov += pv;
                }
            }
            if relu {
                o.iter_mut().for_each(|v| *v = v.max(T::zero()));
            }
        }
        let rg = self.rg(base) || self.rg(bias) || parts.iter().any(|(p, _)| self.rg(*p));
        self.push(out, Op::AddGathered { base, parts: parts.to_vec(), bias, relu }, rg)
    }

    /// Mean binary cross-entropy of an `r x 1` column of logits against
    /// targets in `[0, 1]`, computed as
    /// `max(z, 0) - z t + ln(1 + exp(-|z|))`.
    pub fn bce_with_logits_mean(&mut self, logits: Var, targets: Vec<T>) -> Result<Var> {
        let z = self.value(logits);
        if z.cols() != 1 || z.rows() != targets.len() || targets.is_empty() {
            return Err(shape_err("bce_with_logits_mean", format!("{:?} vs {} targets", z.shape(), targets.len())));
        }
        let mut total = T::zero();
        for (&zi, &t) in z.data().iter().zip(&targets) {
            total += zi.max(T::zero()) - zi * t + (-zi.abs()).exp().ln_1p();
        }
        let loss = total / T::from_usize_lossy(targets.len());
        let rg = self.rg(logits);
        self.push(Tensor::scalar(loss), Op::BceLogitsMean(logits, targets), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(shape_err("mean_all", "empty tensor".into()));
        }
        let mean = x.data().iter().copied().sum::<T>() / T::from_usize_lossy(x.len());
        let rg = self.rg(a);
        self.push(Tensor::scalar(mean), Op::MeanAll(a), rg)
    }

    /// Reverse pass from the `1 x 1` value `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).len() != 1 {
            return Err(Error::contract("backward needs a scalar loss"));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(T::one()));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let contributions = self.local_grads(node, g);
            for (parent, contrib) in contributions {
                if !contrib.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of {}", node.op.name())));
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.add_assign(&contrib),
                    slot => *slot = Some(contrib),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn local_grads(&self, node: &Node<T>, g: Tensor<T>) -> Vec<(Var, Tensor<T>)> {
        let mut out = Vec::new();
        let mut emit = |v: Var, t: Tensor<T>| {
            if self.rg(v) {
                out.push((v, t));
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (r, k, c) = (x.rows(), x.cols(), y.cols());
                if self.rg(*a) {
                    let mut da = vec![T::zero(); r * k];
                    gemm_nt(g.data(), y.data(), &mut da, r, c, k);
                    emit(*a, Tensor::matrix(r, k, da).expect("shape"));
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); k * c];
                    gemm_tn(x.data(), g.data(), &mut db, r, k, c);
                    emit(*b, Tensor::matrix(k, c, db).expect("shape"));
                }
            }
            Op::MatMulT(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (r, k, c) = (x.rows(), x.cols(), y.rows());
                if self.rg(*a) {
                    let mut da = vec![T::zero(); r * k];
                    gemm_nn(g.data(), y.data(), &mut da, r, c, k);
                    emit(*a, Tensor::matrix(r, k, da).expect("shape"));
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); c * k];
                    gemm_tn(g.data(), x.data(), &mut db, r, c, k);
                    emit(*b, Tensor::matrix(c, k, db).expect("shape"));
                }
            }
            Op::Add(a, b) => {
                emit(*a, g.clone());
                emit(*b, g);
            }
            Op::AddRow(a, bias) => {
                if self.rg(*bias) {
                    emit(*bias, column_sums(&g));
                }
                emit(*a, g);
            }
            Op::AddGathered { base, parts, bias, relu } => {
                let mut g = g;
                if *relu {
                    for (d, &v) in g.data_mut().iter_mut().zip(node.value.data()) {
                        if v <= T::zero() {
                            *d = T::zero();
                        }
                    }
                }
                if self.rg(*bias) {
                    emit(*bias, column_sums(&g));
                }
                for (p, index) in parts {
                    if self.rg(*p) {
                        let x = self.value(*p);
                        let c = x.cols();
                        let mut dp = Tensor::zeros(x.shape());
                        for (i, gr) in g.data().chunks_exact(c).enumerate() {
                            let r = index[i];
                            for (d, &v) in dp.data_mut()[r * c..(r + 1) * c].iter_mut().zip(gr) {
                                *d += v;
                            }
                        }
                        emit(*p, dp);
                    }
                }
                emit(*base, g);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let data = (0..g.rows()).flat_map(|i| g.row(i)[offset..offset + w].iter().copied()).collect();
                        emit(p, Tensor::matrix(g.rows(), w, data).expect("shape"));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut da = Tensor::zeros(x.shape());
                let (c, w) = (x.cols(), g.cols());
                for i in 0..g.rows() {
                    da.data_mut()[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                emit(*a, da);
            }
            Op::SliceRows(a, start) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut da = Tensor::zeros(x.shape());
                da.data_mut()[start * c..start * c + g.len()].copy_from_slice(g.data());
                emit(*a, da);
            }
            Op::Relu(a) => {
                let mut g = g;
                for (d, &v) in g.data_mut().iter_mut().zip(self.value(*a).data()) {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                }
                emit(*a, g);
            }
            Op::Sigmoid(a) => {
                let mut g = g;
                for (d, &s) in g.data_mut().iter_mut().zip(node.value.data()) {
                    *d = *d * s * (T::one() - s);
                }
                emit(*a, g);
            }
            Op::Scale(a, s) => emit(*a, g.map(|v| v * *s)),
            Op::AddScalar(a) => emit(*a, g),
            Op::GroupMean(a, groups) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut da = Tensor::zeros(x.shape());
                for grp in 0..groups.len() {
                    let members = groups.members(grp);
                    let inv = T::one() / T::from_usize_lossy(members.len());
                    let gr = g.row(grp);
                    for &r in members {
                        for (d, &v) in da.data_mut()[r * c..(r + 1) * c].iter_mut().zip(gr) {
                            *d += v * inv;
                        }
                    }
                }
                emit(*a, da);
            }
            Op::GatherRows(a, index) => {
                let x = self.value(*a);
                let c = x.cols();
                let mut da = Tensor::zeros(x.shape());
                for (k, &r) in index.iter().enumerate() {
                    for (d, &v) in da.data_mut()[r * c..(r + 1) * c].iter_mut().zip(g.row(k)) {
                        *d += v;
                    }
                }
                emit(*a, da);
            }
            Op::BceLogitsMean(z, targets) => {
                let zt = self.value(*z);
                let scale = g.data()[0] / T::from_usize_lossy(targets.len());
                let data = zt.data().iter().zip(targets).map(|(&zi, &t)| (sigmoid(zi) - t) * scale).collect();
                emit(*z, Tensor::new(zt.shape().to_vec(), data).expect("shape"));
            }
            Op::MeanAll(a) => {
                let x = self.value(*a);
                let v = g.data()[0] / T::from_usize_lossy(x.len());
                emit(*a, Tensor::new(x.shape().to_vec(), vec![v; x.len()]).expect("shape"));
            }
        }
        out
    }
}
