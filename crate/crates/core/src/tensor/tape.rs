use std::collections::HashMap;
use std::sync::Arc;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Fixed sparse linear map: output row `i` is `sum_j coef * input[j]` over `rows[i]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    pub input_rows: usize,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    /// Sum over each group of input rows.
    pub fn segment_sum(groups: &[Vec<usize>], input_rows: usize) -> Self {
        SparseRows {
            input_rows,
            rows: groups
                .iter()
                .map(|g| g.iter().map(|&j| (j, 1.0)).collect())
                .collect(),
        }
    }

    /// Mean over each group; empty groups produce zero rows.
    pub fn segment_mean(groups: &[Vec<usize>], input_rows: usize) -> Self {
        SparseRows {
            input_rows,
            rows: groups
                .iter()
                .map(|g| {
                    let w = 1.0 / g.len().max(1) as f64;
                    g.iter().map(|&j| (j, w)).collect()
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    RowScale(Var, Var),
    Scale(Var, f64),
    GradScale(Var, f64),
    Relu(Var),
    Tanh(Var),
    LogSigmoid(Var),
    Sum(Var),
    Mean(Var),
    RowDot(Var, Var),
    GatherRows(Var, Vec<usize>),
    PickFlat(Var, Vec<usize>),
    SliceCols { input: Var, start: usize },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Reshape(Var),
    SparseMix(Var, Arc<SparseRows>),
    /// Per output element, the input flat index that won (or none for empty groups).
    SegmentExtreme { input: Var, winners: Vec<Option<usize>> },
    SegmentStd { input: Var, groups: Arc<Vec<Vec<usize>>>, means: Vec<f64> },
    SegmentSoftmax { input: Var, groups: Arc<Vec<Vec<usize>>> },
    CrossEntropySum { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::RowScale(..) => "row_scale",
            Op::Scale(..) => "scale",
            Op::GradScale(..) => "grad_scale",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::LogSigmoid(..) => "log_sigmoid",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowDot(..) => "row_dot",
            Op::GatherRows(..) => "gather_rows",
            Op::PickFlat(..) => "pick_flat",
            Op::SliceCols { .. } => "slice_cols",
            Op::ConcatCols(..) => "concat_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::Reshape(..) => "reshape",
            Op::SparseMix(..) => "sparse_mix",
            Op::SegmentExtreme { .. } => "segment_extreme",
            Op::SegmentStd { .. } => "segment_std",
            Op::SegmentSoftmax { .. } => "segment_softmax",
            Op::CrossEntropySum { .. } => "cross_entropy",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Dynamic reverse-mode tape, rebuilt for every forward pass.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and backward is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_lookup: HashMap<String, Var>,
}

fn dims2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape {
            op,
            detail: format!("expected a matrix, got shape {:?}", s),
        }),
    }
}

fn dims1(t: &Tensor, op: &'static str) -> Result<usize> {
    match t.shape() {
        [n] => Ok(*n),
        s => Err(Error::Shape {
            op,
            detail: format!("expected a vector, got shape {:?}", s),
        }),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            detail: format!("{:?} vs {:?}", a.shape(), b.shape()),
        });
    }
    Ok(())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    // -softplus(-x), stable on both tails
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.push(value, Op::Leaf)
    }

    /// Records the named parameter; repeated lookups return the same leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.param_lookup.get(name) {
            return Ok(v);
        }
        let value = store
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter `{name}`")))?
            .clone();
        let v = self.push(value, Op::Leaf)?;
        self.params.push((name.to_string(), v));
        self.param_lookup.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                detail: format!("[{m}, {k}] x [{k2}, {n}]"),
            });
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        same_shape(self.value(a), self.value(b), op.name())?;
        let ta = self.value(a);
        let data = ta
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = ta.shape().to_vec();
        self.push(Tensor::new(shape, data)?, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// `[m, n] + [n]`, bias broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(a), "add_bias")?;
        let bn = dims1(self.value(bias), "add_bias")?;
        if bn != n {
            return Err(Error::Shape {
                op: "add_bias",
                detail: format!("[{m}, {n}] + [{bn}]"),
            });
        }
        let b = self.value(bias).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for row in data.chunks_mut(n.max(1)) {
            for (x, bv) in row.iter_mut().zip(&b) {
                *x += bv;
            }
        }
        self.push(Tensor::new(vec![m, n], data)?, Op::AddBias(a, bias))
    }

    /// `[m, n] * [m]`, each row scaled by its weight.
    pub fn row_scale(&mut self, a: Var, weights: Var) -> Result<Var> {
        let (m, n) = dims2(self.value(a), "row_scale")?;
        let wm = dims1(self.value(weights), "row_scale")?;
        if wm != m {
            return Err(Error::Shape {
                op: "row_scale",
                detail: format!("[{m}, {n}] * [{wm}]"),
            });
        }
        let w = self.value(weights).data().to_vec();
        let mut data = self.value(a).data().to_vec();
        for (i, row) in data.chunks_mut(n.max(1)).enumerate().take(m) {
            for x in row.iter_mut() {
                *x *= w[i];
            }
        }
        self.push(Tensor::new(vec![m, n], data)?, Op::RowScale(a, weights))
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let t = self.value(a);
        let data = t.data().iter().map(|&x| f(x)).collect();
        let shape = t.shape().to_vec();
        self.push(Tensor::new(shape, data)?, op)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.map(a, Op::Scale(a, factor), |x| x * factor)
    }

    /// Identity on the forward pass; multiplies the incoming gradient by `factor`.
    pub fn grad_scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        self.map(a, Op::GradScale(a, factor), |x| x)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Relu(a), |x| x.max(0.0))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::Tanh(a), f64::tanh)
    }

    /// Elementwise `log(sigmoid(x))`.
    pub fn log_sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, Op::LogSigmoid(a), log_sigmoid)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Shape {
                op: "mean",
                detail: "mean of an empty tensor".into(),
            });
        }
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Row-wise dot products of two `[m, n]` matrices, giving `[m]`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self.value(a), self.value(b), "row_dot")?;
        let (m, n) = dims2(self.value(a), "row_dot")?;
        let (da, db) = (self.value(a).data(), self.value(b).data());
        let out = (0..m)
            .map(|i| (0..n).map(|j| da[i * n + j] * db[i * n + j]).sum())
            .collect();
        self.push(Tensor::vector(out), Op::RowDot(a, b))
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if t.shape().is_empty() {
            return Err(Error::Shape {
                op: "gather_rows",
                detail: "cannot gather rows of a scalar".into(),
            });
        }
        let (rows, cols) = (t.rows(), t.cols());
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(Error::Shape {
                    op: "gather_rows",
                    detail: format!("row {i} out of range for {rows} rows"),
                });
            }
            data.extend_from_slice(t.row(i));
        }
        let mut shape = t.shape().to_vec();
        shape[0] = indices.len();
        self.push(Tensor::new(shape, data)?, Op::GatherRows(a, indices.to_vec()))
    }

    /// Selects flat elements, giving a vector.
    pub fn pick_flat(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let mut data = Vec::with_capacity(indices.len());
        for &i in indices {
            data.push(*t.data().get(i).ok_or_else(|| Error::Shape {
                op: "pick_flat",
                detail: format!("index {i} out of range for {} elements", t.len()),
            })?);
        }
        self.push(Tensor::vector(data), Op::PickFlat(a, indices.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (m, n) = dims2(self.value(a), "slice_cols")?;
        if start + len > n {
            return Err(Error::Shape {
                op: "slice_cols",
                detail: format!("columns {start}..{} of {n}", start + len),
            });
        }
        let t = self.value(a);
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&t.row(i)[start..start + len]);
        }
        self.push(Tensor::new(vec![m, len], data)?, Op::SliceCols { input: a, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape {
                op: "concat_cols",
                detail: "nothing to concatenate".into(),
            });
        }
        let (m, _) = dims2(self.value(parts[0]), "concat_cols")?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pm, pn) = dims2(self.value(p), "concat_cols")?;
            if pm != m {
                return Err(Error::Shape {
                    op: "concat_cols",
                    detail: format!("row counts {m} vs {pm}"),
                });
            }
            widths.push(pn);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(Tensor::new(vec![m, total], data)?, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape {
                op: "concat_rows",
                detail: "nothing to concatenate".into(),
            });
        }
        let (_, n) = dims2(self.value(parts[0]), "concat_rows")?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pm, pn) = dims2(self.value(p), "concat_rows")?;
            if pn != n {
                return Err(Error::Shape {
                    op: "concat_rows",
                    detail: format!("column counts {n} vs {pn}"),
                });
            }
            rows += pm;
            data.extend_from_slice(self.value(p).data());
        }
        self.push(Tensor::new(vec![rows, n], data)?, Op::ConcatRows(parts.to_vec()))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshaped(shape.to_vec())?;
        self.push(t, Op::Reshape(a))
    }

    /// Applies a fixed sparse row-mixing matrix: `out = S * a`.
    pub fn sparse_mix(&mut self, a: Var, mix: Arc<SparseRows>) -> Result<Var> {
        let (m, n) = dims2(self.value(a), "sparse_mix")?;
        if mix.input_rows != m {
            return Err(Error::Shape {
                op: "sparse_mix",
                detail: format!("mix expects {} input rows, got {m}", mix.input_rows),
            });
        }
        let t = self.value(a);
        let mut data = vec![0.0; mix.rows.len() * n];
        for (i, entries) in mix.rows.iter().enumerate() {
            let out = &mut data[i * n..(i + 1) * n];
            for &(j, c) in entries {
                if j >= m {
                    return Err(Error::Shape {
                        op: "sparse_mix",
                        detail: format!("row {j} out of range for {m} rows"),
                    });
                }
                for (o, x) in out.iter_mut().zip(t.row(j)) {
                    *o += c * x;
                }
            }
        }
        let rows = mix.rows.len();
        self.push(Tensor::new(vec![rows, n], data)?, Op::SparseMix(a, mix))
    }

    fn segment_extreme(&mut self, a: Var, groups: &[Vec<usize>], want_max: bool) -> Result<Var> {
        let op = if want_max { "segment_max" } else { "segment_min" };
        let (m, n) = dims2(self.value(a), op)?;
        let t = self.value(a);
        let mut data = vec![0.0; groups.len() * n];
        let mut winners = vec![None; groups.len() * n];
        for (g, members) in groups.iter().enumerate() {
            for c in 0..n {
                let mut best: Option<(usize, f64)> = None;
                for &j in members {
                    if j >= m {
                        return Err(Error::Shape {
                            op,
                            detail: format!("row {j} out of range for {m} rows"),
                        });
                    }
                    let v = t.data()[j * n + c];
                    let better = match best {
                        None => true,
                        Some((_, b)) => {
                            if want_max {
                                v > b
                            } else {
                                v < b
                            }
                        }
                    };
                    if better {
                        best = Some((j * n + c, v));
                    }
                }
                if let Some((idx, v)) = best {
                    data[g * n + c] = v;
                    winners[g * n + c] = Some(idx);
                }
            }
        }
        let rows = groups.len();
        self.push(
            Tensor::new(vec![rows, n], data)?,
            Op::SegmentExtreme { input: a, winners },
        )
    }

    /// Per-group columnwise maximum; empty groups give zeros.
    pub fn segment_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        self.segment_extreme(a, groups, true)
    }

    /// Per-group columnwise minimum; empty groups give zeros.
    pub fn segment_min(&mut self, a: Var, groups: &[Vec<usize>]) -> Result<Var> {
        self.segment_extreme(a, groups, false)
    }

    /// Per-group columnwise population standard deviation; empty groups give zeros.
    pub fn segment_std(&mut self, a: Var, groups: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let (m, n) = dims2(self.value(a), "segment_std")?;
        let t = self.value(a);
        let mut data = vec![0.0; groups.len() * n];
        let mut means = vec![0.0; groups.len() * n];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            if let Some(&bad) = members.iter().find(|&&j| j >= m) {
                return Err(Error::Shape {
                    op: "segment_std",
                    detail: format!("row {bad} out of range for {m} rows"),
                });
            }
            let count = members.len() as f64;
            for c in 0..n {
                let mean = members.iter().map(|&j| t.data()[j * n + c]).sum::<f64>() / count;
                let var = members
                    .iter()
                    .map(|&j| {
                        let d = t.data()[j * n + c] - mean;
                        d * d
                    })
                    .sum::<f64>()
                    / count;
                means[g * n + c] = mean;
                data[g * n + c] = var.sqrt();
            }
        }
        let rows = groups.len();
        self.push(
            Tensor::new(vec![rows, n], data)?,
            Op::SegmentStd { input: a, groups, means },
        )
    }

    /// Softmax of a vector within each group of entries.
    pub fn segment_softmax(&mut self, a: Var, groups: Arc<Vec<Vec<usize>>>) -> Result<Var> {
        let m = dims1(self.value(a), "segment_softmax")?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m];
        for members in groups.iter() {
            if let Some(&bad) = members.iter().find(|&&j| j >= m) {
                return Err(Error::Shape {
                    op: "segment_softmax",
                    detail: format!("entry {bad} out of range for {m} entries"),
                });
            }
            let max = members.iter().map(|&j| x[j]).fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for &j in members {
                let e = (x[j] - max).exp();
                out[j] = e;
                total += e;
            }
            for &j in members {
                out[j] /= total;
            }
        }
        self.push(Tensor::vector(out), Op::SegmentSoftmax { input: a, groups })
    }

    /// Sum over rows of `-log softmax(logits_i)[targets_i]`.
    pub fn cross_entropy_sum(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let (m, k) = dims2(self.value(logits), "cross_entropy")?;
        if targets.len() != m {
            return Err(Error::Shape {
                op: "cross_entropy",
                detail: format!("{m} rows but {} targets", targets.len()),
            });
        }
        let t = self.value(logits);
        let mut probs = Vec::with_capacity(m * k);
        let mut loss = 0.0;
        for (i, &target) in targets.iter().enumerate() {
            if target >= k {
                return Err(Error::Shape {
                    op: "cross_entropy",
                    detail: format!("target class {target} out of range for {k} classes"),
                });
            }
            let row = t.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[target];
            probs.extend(row.iter().map(|v| (v - lse).exp()));
        }
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropySum {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidInput("backward on an empty tape".into()));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Shape {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Backward, then adds parameter gradients into `store` (zeros for unreached parameters).
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<Gradients> {
        let grads = self.backward(loss)?;
        store.ensure_grads();
        for (name, v) in &self.params {
            if let Some(g) = grads.get(*v) {
                store.accumulate_grad(name, g)?;
            }
        }
        Ok(grads)
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = dims2(self.value(*a), "matmul")?;
                let (_, n) = dims2(self.value(*b), "matmul")?;
                let bt = transpose_raw(self.value(*b).data(), k, n);
                let ga = matmul_raw(gd, &bt, m, n, k);
                let at = transpose_raw(self.value(*a).data(), m, k);
                let gb = matmul_raw(&at, gd, k, m, n);
                accumulate(grads, *a, self.value(*a).shape(), ga);
                accumulate(grads, *b, self.value(*b).shape(), gb);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, g.shape(), gd.to_vec());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, g.shape(), gd.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let ga = gd.iter().zip(vb).map(|(x, y)| x * y).collect();
                let gb = gd.iter().zip(va).map(|(x, y)| x * y).collect();
                accumulate(grads, *a, g.shape(), ga);
                accumulate(grads, *b, g.shape(), gb);
            }
            Op::AddBias(a, b) => {
                let n = self.value(*b).len();
                let mut gb = vec![0.0; n];
                for row in gd.chunks(n.max(1)) {
                    for (acc, x) in gb.iter_mut().zip(row) {
                        *acc += x;
                    }
                }
                accumulate(grads, *a, g.shape(), gd.to_vec());
                accumulate(grads, *b, self.value(*b).shape(), gb);
            }
            Op::RowScale(a, w) => {
                let (m, n) = dims2(self.value(*a), "row_scale")?;
                let va = self.value(*a).data();
                let vw = self.value(*w).data();
                let mut ga = vec![0.0; m * n];
                let mut gw = vec![0.0; m];
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = gd[i * n + j] * vw[i];
                        gw[i] += gd[i * n + j] * va[i * n + j];
                    }
                }
                accumulate(grads, *a, g.shape(), ga);
                accumulate(grads, *w, self.value(*w).shape(), gw);
            }
            Op::Scale(a, f) | Op::GradScale(a, f) => {
                accumulate(grads, *a, g.shape(), gd.iter().map(|x| x * f).collect());
            }
            Op::Relu(a) => {
                let va = self.value(*a).data();
                let ga = gd
                    .iter()
                    .zip(va)
                    .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                    .collect();
                accumulate(grads, *a, g.shape(), ga);
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let ga = gd.iter().zip(y).map(|(x, y)| x * (1.0 - y * y)).collect();
                accumulate(grads, *a, g.shape(), ga);
            }
            Op::LogSigmoid(a) => {
                let va = self.value(*a).data();
                let ga = gd.iter().zip(va).map(|(x, &v)| x * sigmoid(-v)).collect();
                accumulate(grads, *a, g.shape(), ga);
            }
            Op::Sum(a) => {
                let t = self.value(*a);
                accumulate(grads, *a, t.shape(), vec![gd[0]; t.len()]);
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                accumulate(grads, *a, t.shape(), vec![gd[0] / t.len() as f64; t.len()]);
            }
            Op::RowDot(a, b) => {
                let (m, n) = dims2(self.value(*a), "row_dot")?;
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let mut ga = vec![0.0; m * n];
                let mut gb = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        ga[i * n + j] = gd[i] * vb[i * n + j];
                        gb[i * n + j] = gd[i] * va[i * n + j];
                    }
                }
                accumulate(grads, *a, self.value(*a).shape(), ga);
                accumulate(grads, *b, self.value(*b).shape(), gb);
            }
            Op::GatherRows(a, indices) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut ga = vec![0.0; t.len()];
                for (r, &i) in indices.iter().enumerate() {
                    for j in 0..c {
                        ga[i * c + j] += gd[r * c + j];
                    }
                }
                accumulate(grads, *a, t.shape(), ga);
            }
            Op::PickFlat(a, indices) => {
                let t = self.value(*a);
                let mut ga = vec![0.0; t.len()];
                for (r, &i) in indices.iter().enumerate() {
                    ga[i] += gd[r];
                }
                accumulate(grads, *a, t.shape(), ga);
            }
            Op::SliceCols { input, start } => {
                let (m, n) = dims2(self.value(*input), "slice_cols")?;
                let len = node.value.cols();
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    ga[i * n + start..i * n + start + len].copy_from_slice(&gd[i * len..(i + 1) * len]);
                }
                accumulate(grads, *input, self.value(*input).shape(), ga);
            }
            Op::ConcatCols(parts) => {
                let m = node.value.rows();
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    let mut gp = vec![0.0; m * w];
                    for i in 0..m {
                        gp[i * w..(i + 1) * w].copy_from_slice(&gd[i * total + offset..i * total + offset + w]);
                    }
                    accumulate(grads, p, self.value(p).shape(), gp);
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = self.value(p).len();
                    accumulate(grads, p, self.value(p).shape(), gd[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::Reshape(a) => {
                accumulate(grads, *a, self.value(*a).shape(), gd.to_vec());
            }
            Op::SparseMix(a, mix) => {
                let t = self.value(*a);
                let n = t.cols();
                let mut ga = vec![0.0; t.len()];
                for (i, entries) in mix.rows.iter().enumerate() {
                    for &(j, c) in entries {
                        for k in 0..n {
                            ga[j * n + k] += c * gd[i * n + k];
                        }
                    }
                }
                accumulate(grads, *a, t.shape(), ga);
            }
            Op::SegmentExtreme { input, winners } => {
                let t = self.value(*input);
                let mut ga = vec![0.0; t.len()];
                for (o, w) in winners.iter().enumerate() {
                    if let Some(i) = w {
                        ga[*i] += gd[o];
                    }
                }
                accumulate(grads, *input, t.shape(), ga);
            }
            Op::SegmentStd { input, groups, means } => {
                let t = self.value(*input);
                let n = t.cols();
                let std = node.value.data();
                let mut ga = vec![0.0; t.len()];
                for (gi, members) in groups.iter().enumerate() {
                    let count = members.len() as f64;
                    for c in 0..n {
                        let s = std[gi * n + c];
                        // zero spread: use the zero subgradient
                        if s == 0.0 {
                            continue;
                        }
                        let mean = means[gi * n + c];
                        let up = gd[gi * n + c];
                        for &j in members.iter() {
                            ga[j * n + c] += up * (t.data()[j * n + c] - mean) / (count * s);
                        }
                    }
                }
                accumulate(grads, *input, t.shape(), ga);
            }
            Op::SegmentSoftmax { input, groups } => {
                let y = node.value.data();
                let mut ga = vec![0.0; y.len()];
                for members in groups.iter() {
                    let dot: f64 = members.iter().map(|&j| gd[j] * y[j]).sum();
                    for &j in members {
                        ga[j] = y[j] * (gd[j] - dot);
                    }
                }
                accumulate(grads, *input, self.value(*input).shape(), ga);
            }
            Op::CrossEntropySum { logits, targets, probs } => {
                let k = self.value(*logits).cols();
                let mut ga = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    ga[i * k + t] -= 1.0;
                }
                for v in ga.iter_mut() {
                    *v *= gd[0];
                }
                accumulate(grads, *logits, self.value(*logits).shape(), ga);
            }
        }
        Ok(())
    }

    /// Names and leaves of every parameter referenced on this tape.
    pub fn params(&self) -> &[(String, Var)] {
        &self.params
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.data_mut().iter_mut().zip(&g) {
                *e += x;
            }
        }
        slot @ None => {
            *slot = Some(Tensor {
                shape: shape.to_vec(),
                data: g,
            });
        }
    }
}

/// Gradients of a loss with respect to every recorded value.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// `None` when the value does not influence the loss.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}
