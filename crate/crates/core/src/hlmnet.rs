//! The hyper label model.
//!
//! Every non-abstain entry `X[i, j]` becomes a node. Nodes in the same
//! column (same LF) and in the same row (same data point) are neighbours.
//! Each of the `K` layers computes, for every node, the mean embedding of its
//! column, of its row and of the whole graph (each mean includes the node
//! itself), maps them and the node's own embedding with `W1..W4`,
//! concatenates the four results and applies the affine map `f_k` plus
//! ReLU. Row means of the final embeddings feed a three-layer MLP with a
//! sigmoid output.
//!
//! Edges are never materialized: the three means are computed once per
//! column, row and graph, so a layer costs `O(nodes * d^2 + (n + m) * d^2)`.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradkernel::{gemm_nt, Groups, Tape, Tensor, Var};
use crate::labelcore::{LabelMatrix, ProbVector};
use crate::rng::stream_rng;
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

/// Weights of one message-passing layer. Matrices are stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// Applied to the column mean.
    pub w_col: Tensor<T>,
    /// Applied to the row mean.
    pub w_row: Tensor<T>,
    /// Applied to the global mean.
    pub w_global: Tensor<T>,
    /// Applied to the node's own embedding.
    pub w_self: Tensor<T>,
    /// `d x 4d`, input order (column, row, global, self).
    pub f_weight: Tensor<T>,
    pub f_bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub dim: usize,
    /// `2 x d`: row 0 embeds `+1`, row 1 embeds `-1`.
    pub embedding: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    /// `d -> d`, `d -> d`, `d -> 1`.
    pub head: [Linear<T>; 3],
}

impl<T: Scalar> ModelParams<T> {
    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// All tensors in a fixed order (embedding, layers, head).
    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out = vec![&self.embedding];
        for l in &self.layers {
            out.extend([&l.w_col, &l.w_row, &l.w_global, &l.w_self, &l.f_weight, &l.f_bias]);
        }
        for h in &self.head {
            out.extend([&h.weight, &h.bias]);
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![&mut self.embedding];
        for l in &mut self.layers {
            out.extend([&mut l.w_col, &mut l.w_row, &mut l.w_global, &mut l.w_self, &mut l.f_weight, &mut l.f_bias]);
        }
        for h in &mut self.head {
            out.extend([&mut h.weight, &mut h.bias]);
        }
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            dim: self.dim,
            embedding: self.embedding.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    w_col: l.w_col.cast(),
                    w_row: l.w_row.cast(),
                    w_global: l.w_global.cast(),
                    w_self: l.w_self.cast(),
                    f_weight: l.f_weight.cast(),
                    f_bias: l.f_bias.cast(),
                })
                .collect(),
            head: self.head.each_ref().map(|h| Linear { weight: h.weight.cast(), bias: h.bias.cast() }),
        }
    }
}

fn uniform_tensor<T: Scalar, R: Rng>(rng: &mut R, rows: usize, cols: usize, fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let data = (0..rows * cols).map(|_| T::from_f64_lossy(rng.gen_range(-bound..=bound))).collect();
    Tensor::matrix(rows, cols, data).expect("shape")
}

/// Fan-in scaled uniform initialization: every weight and bias of a map
/// with `fan_in` inputs lies in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_params<T: Scalar>(num_layers: usize, dim: usize, seed: u64) -> Result<ModelParams<T>> {
    if num_layers == 0 || dim == 0 {
        return Err(Error::contract("K and d must be at least 1"));
    }
    let mut rng = stream_rng(seed, 0);
    let d = dim;
    let embedding = uniform_tensor(&mut rng, 2, d, 1);
    let layers = (0..num_layers)
        .map(|_| LayerParams {
            w_col: uniform_tensor(&mut rng, d, d, d),
            w_row: uniform_tensor(&mut rng, d, d, d),
            w_global: uniform_tensor(&mut rng, d, d, d),
            w_self: uniform_tensor(&mut rng, d, d, d),
            f_weight: uniform_tensor(&mut rng, d, 4 * d, 4 * d),
            f_bias: uniform_tensor(&mut rng, 1, d, 4 * d),
        })
        .collect();
    let mut linear = |out| Linear { weight: uniform_tensor(&mut rng, out, d, d), bias: uniform_tensor(&mut rng, 1, out, d) };
    let head = [linear(d), linear(d), linear(1)];
    Ok(ModelParams { dim, embedding, layers, head })
}

/// Compressed lists that may be empty.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Lists {
    offsets: Vec<usize>,
    items: Vec<usize>,
}

impl Lists {
    fn get(&self, k: usize) -> &[usize] {
        &self.items[self.offsets[k]..self.offsets[k + 1]]
    }
}

/// Node structure of a label matrix. Nodes are numbered in row-major order
/// of the non-zero entries.
#[derive(Debug, Clone)]
pub struct GraphView {
    n: usize,
    m: usize,
    node_row: Vec<usize>,
    node_col: Vec<usize>,
    /// 0 for `+1`, 1 for `-1`.
    node_value: Arc<Vec<usize>>,
    rows: Lists,
    cols: Lists,
    /// Rows / columns that own at least one node, ascending.
    present_rows: Vec<usize>,
    present_cols: Vec<usize>,
    row_groups: Arc<Groups>,
    col_groups: Arc<Groups>,
    global_group: Arc<Groups>,
    /// Column groups, then row groups, then the global group.
    pool_groups: Arc<Groups>,
    /// For each node, the index of its row (column) among the present ones.
    node_row_group: Arc<Vec<usize>>,
    node_col_group: Arc<Vec<usize>>,
    node_global: Arc<Vec<usize>>,
}

fn build_lists(keys: &[usize], count: usize) -> Lists {
    let mut offsets = vec![0usize; count + 1];
    for &k in keys {
        offsets[k + 1] += 1;
    }
    for k in 0..count {
        offsets[k + 1] += offsets[k];
    }
    let mut fill = offsets.clone();
    let mut items = vec![0; keys.len()];
    for (node, &k) in keys.iter().enumerate() {
        items[fill[k]] = node;
        fill[k] += 1;
    }
    Lists { offsets, items }
}

pub fn encode(x: &LabelMatrix) -> Result<GraphView> {
    x.require_binary()?;
    let (n, m) = (x.n(), x.m());
    let mut node_row = Vec::new();
    let mut node_col = Vec::new();
    let mut node_value = Vec::new();
    for i in 0..n {
        for (j, &v) in x.row(i).iter().enumerate() {
            if v != 0 {
                node_row.push(i);
                node_col.push(j);
                node_value.push(if v == 1 { 0 } else { 1 });
            }
        }
    }
    let rows = build_lists(&node_row, n);
    let cols = build_lists(&node_col, m);
    let present_rows: Vec<usize> = (0..n).filter(|&i| !rows.get(i).is_empty()).collect();
    let present_cols: Vec<usize> = (0..m).filter(|&j| !cols.get(j).is_empty()).collect();
    let groups = |present: &[usize], lists: &Lists| {
        let l: Vec<Vec<usize>> = present.iter().map(|&k| lists.get(k).to_vec()).collect();
        Groups::new(&l).expect("present lists are non-empty")
    };
    let row_groups = groups(&present_rows, &rows);
    let col_groups = groups(&present_cols, &cols);
    let global_lists: Vec<Vec<usize>> =
        if node_row.is_empty() { Vec::new() } else { vec![(0..node_row.len()).collect()] };
    let global_group = Groups::new(&global_lists).expect("non-empty");
    let pool_lists: Vec<Vec<usize>> = present_cols
        .iter()
        .map(|&j| cols.get(j).to_vec())
        .chain(present_rows.iter().map(|&i| rows.get(i).to_vec()))
        .chain(global_lists)
        .collect();
    let pool_groups = Groups::new(&pool_lists).expect("present lists are non-empty");
    let rank = |present: &[usize], size: usize| {
        let mut r = vec![usize::MAX; size];
        for (k, &p) in present.iter().enumerate() {
            r[p] = k;
        }
        r
    };
    let row_rank = rank(&present_rows, n);
    let col_rank = rank(&present_cols, m);
    let node_row_group = node_row.iter().map(|&i| row_rank[i]).collect();
    let node_col_group = node_col.iter().map(|&j| col_rank[j]).collect();
    let num_nodes = node_row.len();
    Ok(GraphView {
        n,
        m,
        node_row,
        node_col,
        node_value: Arc::new(node_value),
        rows,
        cols,
        present_rows,
        present_cols,
        row_groups: Arc::new(row_groups),
        col_groups: Arc::new(col_groups),
        global_group: Arc::new(global_group),
        pool_groups: Arc::new(pool_groups),
        node_row_group: Arc::new(node_row_group),
        node_col_group: Arc::new(node_col_group),
        node_global: Arc::new(vec![0; num_nodes]),
    })
}

impl GraphView {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_nodes(&self) -> usize {
        self.node_row.len()
    }

    /// Node ids in row `i` (empty when the row abstains everywhere).
    pub fn row_nodes(&self, i: usize) -> &[usize] {
        self.rows.get(i)
    }

    pub fn col_nodes(&self, j: usize) -> &[usize] {
        self.cols.get(j)
    }

    pub fn node_position(&self, node: usize) -> (usize, usize) {
        (self.node_row[node], self.node_col[node])
    }

    pub fn present_rows(&self) -> &[usize] {
        &self.present_rows
    }

    pub fn present_cols(&self) -> &[usize] {
        &self.present_cols
    }
}

/// Column block `q` of `f_weight` times `w`: the folded map `F_q W_q`.
fn folded<T: Scalar>(f_weight: &Tensor<T>, q: usize, w: &Tensor<T>) -> Vec<T> {
    let d = w.rows();
    let mut out = vec![T::zero(); d * d];
    for r in 0..d {
        let f = &f_weight.row(r)[q * d..(q + 1) * d];
        for (p, &fv) in f.iter().enumerate() {
            for (o, &wv) in out[r * d..(r + 1) * d].iter_mut().zip(w.row(p)) {
                *o += fv * wv;
            }
        }
    }
    out
}

/// `out[k] = M x[k]` for each `d`-row of `x`.
fn apply_rows<T: Scalar>(mat: &[T], x: &[T], d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    gemm_nt(x, mat, &mut out, x.len() / d, d, d);
    out
}

fn group_means<T: Scalar>(v: &[T], groups: &Groups, d: usize) -> Vec<T> {
    let mut out = vec![T::zero(); groups.len() * d];
    for g in 0..groups.len() {
        let members = groups.members(g);
        let o = &mut out[g * d..(g + 1) * d];
        for &node in members {
            for (a, &b) in o.iter_mut().zip(&v[node * d..(node + 1) * d]) {
                *a += b;
            }
        }
        let inv = T::one() / T::from_usize_lossy(members.len());
        o.iter_mut().for_each(|a| *a *= inv);
    }
    out
}

fn check_params<T: Scalar>(params: &ModelParams<T>) -> Result<()> {
    if params.layers.is_empty() || params.dim == 0 {
        return Err(Error::ModelShape("K and d must be at least 1".into()));
    }
    Ok(())
}

/// Probability of class `+1` for every row; rows with no votes get `0.5`.
pub fn forward<T: Scalar>(params: &ModelParams<T>, x: &LabelMatrix) -> Result<ProbVector<T>> {
    let graph = encode(x)?;
    forward_graph(params, &graph)
}

pub fn forward_graph<T: Scalar>(params: &ModelParams<T>, graph: &GraphView) -> Result<ProbVector<T>> {
    check_params(params)?;
    if graph.num_nodes() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let d = params.dim;
    let mut v: Vec<T> = Vec::with_capacity(graph.num_nodes() * d);
    for &val in graph.node_value.iter() {
        v.extend_from_slice(params.embedding.row(val));
    }
    for (k, layer) in params.layers.iter().enumerate() {
        let col_mean = group_means(&v, &graph.col_groups, d);
        let row_mean = group_means(&v, &graph.row_groups, d);
        let global_mean = group_means(&v, &graph.global_group, d);
        let col_part = apply_rows(&folded(&layer.f_weight, 0, &layer.w_col), &col_mean, d);
        let row_part = apply_rows(&folded(&layer.f_weight, 1, &layer.w_row), &row_mean, d);
        let mut constant = apply_rows(&folded(&layer.f_weight, 2, &layer.w_global), &global_mean, d);
        for (c, &b) in constant.iter_mut().zip(layer.f_bias.data()) {
            *c += b;
        }
        let mut next = apply_rows(&folded(&layer.f_weight, 3, &layer.w_self), &v, d);
        for (node, out) in next.chunks_exact_mut(d).enumerate() {
            let cg = graph.node_col_group[node];
            let rg = graph.node_row_group[node];
            let cp = &col_part[cg * d..(cg + 1) * d];
            let rp = &row_part[rg * d..(rg + 1) * d];
            for t in 0..d {
                let z = out[t] + cp[t] + rp[t] + constant[t];
                out[t] = if z > T::zero() { z } else { T::zero() };
            }
        }
        if next.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite(format!("message-passing layer {k}")));
        }
        v = next;
    }
    let pooled = group_means(&v, &graph.row_groups, d);
    let mut h = pooled;
    for (idx, lin) in params.head.iter().enumerate() {
        let out = lin.weight.rows();
        let width = lin.weight.cols();
        let mut next = vec![T::zero(); (h.len() / width) * out];
        for (row, o) in h.chunks_exact(width).zip(next.chunks_exact_mut(out)) {
            for (r, ov) in o.iter_mut().enumerate() {
                let mut acc = lin.bias.data()[r];
                for (&a, &b) in lin.weight.row(r).iter().zip(row) {
                    acc += a * b;
                }
                *ov = if idx < 2 && acc < T::zero() { T::zero() } else { acc };
            }
        }
        if next.iter().any(|z| !z.is_finite()) {
            return Err(Error::NonFinite(format!("head layer {idx}")));
        }
        h = next;
    }
    let mut probs = vec![T::half(); graph.n()];
    for (&row, &logit) in graph.present_rows.iter().zip(&h) {
        probs[row] = crate::gradkernel::sigmoid_scalar(logit);
    }
    Ok(ProbVector(probs))
}

/// Model weights registered on a tape.
pub struct ParamVars {
    vars: Vec<Var>,
    num_layers: usize,
}

impl ParamVars {
    pub fn register<T: Scalar>(tape: &mut Tape<T>, params: &ModelParams<T>) -> Result<Self> {
        check_params(params)?;
        let vars = params.tensors().into_iter().map(|t| tape.param(t.clone())).collect::<Result<Vec<_>>>()?;
        Ok(Self { vars, num_layers: params.layers.len() })
    }

    /// Vars in [`ModelParams::tensors`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    fn embedding(&self) -> Var {
        self.vars[0]
    }

    fn layer(&self, k: usize) -> &[Var] {
        &self.vars[1 + 6 * k..1 + 6 * (k + 1)]
    }

    fn head(&self, h: usize) -> (Var, Var) {
        let base = 1 + 6 * self.num_layers + 2 * h;
        (self.vars[base], self.vars[base + 1])
    }
}

/// Records the forward pass; returns logits for the present rows
/// (in [`GraphView::present_rows`] order) as an `r x 1` column.
pub fn record_forward<T: Scalar>(tape: &mut Tape<T>, pv: &ParamVars, graph: &GraphView, dim: usize) -> Result<Var> {
    if graph.num_nodes() == 0 {
        return Err(Error::EmptyMatrix);
    }
    let mut v = tape.gather_rows(pv.embedding(), graph.node_value.clone())?;
    for k in 0..pv.num_layers {
        let &[w_col, w_row, w_global, w_self, f_weight, f_bias] = pv.layer(k) else {
            unreachable!("six tensors per layer")
        };
        // f_k(concat(a, b, c, s)) = sum_q F_q (part q) + bias with F_q the
        // q-th column block of f_weight, so each block is folded into its W
        // and applied before broadcasting the pooled parts to nodes.
        let mut fold = |q: usize, w: Var| -> Result<Var> {
            let block = tape.slice_cols(f_weight, q * dim, dim)?;
            tape.matmul(block, w)
        };
        let m_col = fold(0, w_col)?;
        let m_row = fold(1, w_row)?;
        let m_global = fold(2, w_global)?;
        let m_self = fold(3, w_self)?;
        // one pass over the nodes for all three poolings
        let (gc, gr) = (graph.present_cols.len(), graph.present_rows.len());
        let pooled = tape.group_mean(v, graph.pool_groups.clone())?;
        let col_mean = tape.slice_rows(pooled, 0, gc)?;
        let row_mean = tape.slice_rows(pooled, gc, gr)?;
        let global_mean = tape.slice_rows(pooled, gc + gr, 1)?;
        let col_part = tape.matmul_t(col_mean, m_col)?;
        let row_part = tape.matmul_t(row_mean, m_row)?;
        let global_part = tape.matmul_t(global_mean, m_global)?;
        let self_part = tape.matmul_t(v, m_self)?;
        let parts = [
            (col_part, graph.node_col_group.clone()),
            (row_part, graph.node_row_group.clone()),
            (global_part, graph.node_global.clone()),
        ];
        v = tape.add_gathered_relu(self_part, &parts, f_bias)?;
    }
    let mut h = tape.group_mean(v, graph.row_groups.clone())?;
    for idx in 0..3 {
        let (w, b) = pv.head(idx);
        h = tape.matmul_t(h, w)?;
        h = tape.add_row(h, b)?;
        if idx < 2 {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Mean binary cross-entropy over `targets` (`(row, target in [0, 1])`).
/// Rows without votes predict exactly `0.5` and contribute the constant
/// `-t ln 0.5 - (1 - t) ln 0.5 = ln 2`.
pub fn record_bce<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    graph: &GraphView,
    targets: &[(usize, T)],
) -> Result<Var> {
    if targets.is_empty() {
        return Err(Error::contract("no targets"));
    }
    let mut rank = vec![usize::MAX; graph.n()];
    for (k, &r) in graph.present_rows.iter().enumerate() {
        rank[r] = k;
    }
    let mut index = Vec::new();
    let mut t = Vec::new();
    for &(row, target) in targets {
        if row >= graph.n() {
            return Err(Error::contract(format!("target row {row} out of range")));
        }
        if rank[row] != usize::MAX {
            index.push(rank[row]);
            t.push(target);
        }
    }
    let total = T::from_usize_lossy(targets.len());
    let silent = targets.len() - index.len();
    let constant = T::from_usize_lossy(silent) * T::from_f64_lossy(std::f64::consts::LN_2) / total;
    if index.is_empty() {
        let zero = tape.constant(Tensor::scalar(T::zero()))?;
        return tape.add_scalar(zero, constant);
    }
    let weight = T::from_usize_lossy(index.len()) / total;
    let picked = tape.gather_rows(logits, Arc::new(index))?;
    let bce = tape.bce_with_logits_mean(picked, t)?;
    let scaled = tape.scale(bce, weight)?;
    tape.add_scalar(scaled, constant)
}

#[derive(Serialize, Deserialize)]
struct EmbeddingFile {
    positive: Vec<f64>,
    negative: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    w_col: Vec<Vec<f64>>,
    w_row: Vec<Vec<f64>>,
    w_global: Vec<Vec<f64>>,
    w_self: Vec<Vec<f64>>,
    f_weight: Vec<Vec<f64>>,
    f_bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LinearFile {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    embedding: EmbeddingFile,
    layers: Vec<LayerFile>,
    head: Vec<LinearFile>,
}

fn nested<T: Scalar>(t: &Tensor<T>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|r| t.row(r).iter().map(|v| v.to_f64_lossy()).collect()).collect()
}

fn flat<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64_lossy()).collect()
}

fn from_nested<T: Scalar>(name: &str, rows: &[Vec<f64>], r: usize, c: usize) -> Result<Tensor<T>> {
    if rows.len() != r || rows.iter().any(|row| row.len() != c) {
        return Err(Error::ModelShape(format!("{name} must be {r}x{c}")));
    }
    Tensor::matrix(r, c, rows.iter().flatten().map(|&v| T::from_f64_lossy(v)).collect())
}

fn from_flat<T: Scalar>(name: &str, v: &[f64], c: usize) -> Result<Tensor<T>> {
    if v.len() != c {
        return Err(Error::ModelShape(format!("{name} must have {c} entries, got {}", v.len())));
    }
    Ok(Tensor::row_vector(v.iter().map(|&x| T::from_f64_lossy(x)).collect()))
}

pub fn params_to_json<T: Scalar>(params: &ModelParams<T>) -> Result<String> {
    let file = ModelFile {
        version: FORMAT_VERSION,
        k: params.layers.len(),
        d: params.dim,
        embedding: EmbeddingFile {
            positive: params.embedding.row(0).iter().map(|v| v.to_f64_lossy()).collect(),
            negative: params.embedding.row(1).iter().map(|v| v.to_f64_lossy()).collect(),
        },
        layers: params
            .layers
            .iter()
            .map(|l| LayerFile {
                w_col: nested(&l.w_col),
                w_row: nested(&l.w_row),
                w_global: nested(&l.w_global),
                w_self: nested(&l.w_self),
                f_weight: nested(&l.f_weight),
                f_bias: flat(&l.f_bias),
            })
            .collect(),
        head: params.head.iter().map(|h| LinearFile { weight: nested(&h.weight), bias: flat(&h.bias) }).collect(),
    };
    Ok(serde_json::to_string(&file)?)
}

pub fn params_from_json<T: Scalar>(text: &str) -> Result<ModelParams<T>> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::ModelCorrupt(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| Error::ModelCorrupt("missing version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(Error::ModelVersion { found: version as u32, expected: FORMAT_VERSION });
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| Error::ModelCorrupt(e.to_string()))?;
    let d = file.d;
    if file.k == 0 || d == 0 {
        return Err(Error::ModelShape("K and d must be at least 1".into()));
    }
    if file.layers.len() != file.k {
        return Err(Error::ModelShape(format!("K = {} but {} layers stored", file.k, file.layers.len())));
    }
    if file.head.len() != 3 {
        return Err(Error::ModelShape(format!("head needs 3 linear maps, got {}", file.head.len())));
    }
    let embedding = Tensor::matrix(2, d, {
        let pos = from_flat::<T>("embedding.positive", &file.embedding.positive, d)?;
        let neg = from_flat::<T>("embedding.negative", &file.embedding.negative, d)?;
        pos.data().iter().chain(neg.data()).copied().collect()
    })?;
    let layers = file
        .layers
        .iter()
        .map(|l| {
            Ok(LayerParams {
                w_col: from_nested("w_col", &l.w_col, d, d)?,
                w_row: from_nested("w_row", &l.w_row, d, d)?,
                w_global: from_nested("w_global", &l.w_global, d, d)?,
                w_self: from_nested("w_self", &l.w_self, d, d)?,
                f_weight: from_nested("f_weight", &l.f_weight, d, 4 * d)?,
                f_bias: from_flat("f_bias", &l.f_bias, d)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let lin = |k: usize, out: usize| -> Result<Linear<T>> {
        Ok(Linear {
            weight: from_nested(&format!("head[{k}].weight"), &file.head[k].weight, out, d)?,
            bias: from_flat(&format!("head[{k}].bias"), &file.head[k].bias, out)?,
        })
    };
    let head = [lin(0, d)?, lin(1, d)?, lin(2, 1)?];
    let params = ModelParams { dim: d, embedding, layers, head };
    if params.tensors().iter().any(|t| !t.is_finite()) {
        return Err(Error::ModelCorrupt("non-finite weight".into()));
    }
    Ok(params)
}

pub fn save_params<T: Scalar>(params: &ModelParams<T>, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, params_to_json(params)?.as_bytes())
}

pub fn load_params<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    params_from_json(&text)
}
