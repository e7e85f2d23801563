//! Dense row-major `f64` tensors and a tape-based reverse-mode autodiff engine.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a scalar node walks the tape once in reverse and
//! accumulates gradients into the leaves that were registered with
//! `requires_grad = true`.
//!
//! In debug and test builds every recorded value is checked for NaN/Inf and
//! the offending operation returns [`Error::Numeric`]. Release builds skip the
//! scan.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense tensor of rank 0, 1 or 2 (higher ranks are stored but only the
/// elementwise operations accept them).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTensor")]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawTensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    fn try_from(raw: RawTensor) -> Result<Self> {
        Tensor::new(raw.shape, raw.data)
    }
}

fn numel_of(shape: &[usize]) -> Option<usize> {
    shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        match numel_of(&shape) {
            Some(n) if n == data.len() => Ok(Self { shape, data }),
            _ => Err(Error::dim(format!(
                "shape {:?} does not match {} values",
                shape,
                data.len()
            ))),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = numel_of(shape).expect("tensor size overflow");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from equally sized rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim("ragged rows"));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(format!(
                "expected a matrix, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    pub fn cols(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[1]
        } else {
            1
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::dim(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::dim(format!(
                "add_scaled {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul inner dimensions {k} and {k2} differ"
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &self.data, false, &other.data, false, &mut out, 0.0);
        Tensor::matrix(m, n, out)
    }

    /// Rows selected by `index`, in order.
    pub fn gather_rows(&self, index: &[usize]) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= r {
                return Err(Error::dim(format!("row {i} out of range for {r} rows")));
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(index.len(), c, data)
    }

    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        let c = match parts.first() {
            Some(p) => p.dims2()?.1,
            None => return Err(Error::dim("concat of zero tensors")),
        };
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, pc) = p.dims2()?;
            if pc != c {
                return Err(Error::dim("concat_rows column mismatch"));
            }
            rows += r;
            data.extend_from_slice(&p.data);
        }
        Tensor::matrix(rows, c, data)
    }

    /// Row-wise argmax of a matrix.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let (r, _) = self.dims2()?;
        Ok((0..r)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// `c = op(a)·op(b) + beta·c` where `a` is logically `m×k` and `b` is `k×n`.
/// A transposed flag means the operand is stored as its transpose.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths are checked above against the logical dimensions
    // and the strides address exactly those elements.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    AddBias(Var, Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    LogClamped(Var, f64),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumCols(Var),
    LogSumExpRows(Var),
    SoftmaxRows(Var, f64),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    NormalizeRows(Var),
    StandardizeCols(Var, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// Recorded computation graph. Nodes are appended in evaluation order, so the
/// tape is always topologically sorted.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn check_finite(t: &Tensor, what: &str) -> Result<()> {
    if cfg!(debug_assertions) && !t.is_finite() {
        return Err(Error::Numeric(format!("{what} produced a non-finite value")));
    }
    Ok(())
}

fn row_logsumexp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
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

    /// Registers an input tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<Var> {
        check_finite(&value, "leaf")?;
        Ok(self.push_node(value, Op::Leaf, requires_grad))
    }

    /// Registers an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of a leaf, or zeros when the leaf was disconnected from the root.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(self.value(v).shape()))
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push_node(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, what: &str) -> Result<Var> {
        check_finite(&value, what)?;
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::MatMul(a, b) | Op::AddBias(a, b) => {
                self.requires_grad(*a) || self.requires_grad(*b)
            }
            Op::ConcatRows(parts) => parts.iter().any(|p| self.requires_grad(*p)),
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::LeakyRelu(a, _)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::LogClamped(a, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::SumCols(a)
            | Op::LogSumExpRows(a)
            | Op::SoftmaxRows(a, _)
            | Op::GatherRows(a, _)
            | Op::SliceRows(a, _)
            | Op::NormalizeRows(a)
            | Op::StandardizeCols(a, _) => self.requires_grad(*a),
        };
        Ok(self.push_node(value, op, requires_grad))
    }

    fn binary_same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape != tb.shape {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                ta.shape, tb.shape
            )));
        }
        Ok(())
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        Tensor {
            shape: ta.shape.clone(),
            data: ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect(),
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "add")?;
        let out = self.zip_with(a, b, |x, y| x + y);
        self.push(out, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "sub")?;
        let out = self.zip_with(a, b, |x, y| x - y);
        self.push(out, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape(a, b, "mul")?;
        let out = self.zip_with(a, b, |x, y| x * y);
        self.push(out, Op::Mul(a, b), "mul")
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|v| v * s);
        self.push(out, Op::Scale(a, s), "scale")
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b), "matmul")
    }

    /// `x[n×m] + bias[m]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (_, m) = self.value(x).dims2()?;
        let tb = self.value(bias);
        if tb.shape != [m] {
            return Err(Error::dim(format!(
                "bias of shape {:?} for {m} columns",
                tb.shape
            )));
        }
        let mut out = self.value(x).clone();
        for row in out.data.chunks_mut(m) {
            for (v, b) in row.iter_mut().zip(&tb.data) {
                *v += b;
            }
        }
        self.push(out, Op::AddBias(x, bias), "add_bias")
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a), "relu")
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push(out, Op::LeakyRelu(a, slope), "leaky_relu")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push(out, Op::Exp(a), "exp")
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push(out, Op::Log(a), "log")
    }

    /// `ln(max(a, floor))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Result<Var> {
        if floor <= 0.0 || !floor.is_finite() {
            return Err(Error::param(format!("log clamp floor must be > 0, got {floor}")));
        }
        let out = self.value(a).map(|v| v.max(floor).ln());
        self.push(out, Op::LogClamped(a, floor), "log_clamped")
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a), "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.numel() == 0 {
            return Err(Error::dim("mean of an empty tensor"));
        }
        let out = Tensor::scalar(t.sum() / t.numel() as f64);
        self.push(out, Op::Mean(a), "mean")
    }

    /// Average over rows: `[n×c] -> [c]`.
    ///
    /// Each column is summed in ascending value order, so the result is
    /// bit-identical under any reordering of the rows.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (n, c) = t.dims2()?;
        if n == 0 {
            return Err(Error::dim("mean_rows of zero rows"));
        }
        let mut col = Vec::with_capacity(n);
        let out = (0..c)
            .map(|j| {
                col.clear();
                col.extend(t.data.iter().skip(j).step_by(c).copied());
                col.sort_by(f64::total_cmp);
                col.iter().sum::<f64>() / n as f64
            })
            .collect();
        self.push(Tensor::vector(out), Op::MeanRows(a), "mean_rows")
    }

    /// Sum within each row: `[n×c] -> [n]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, c) = t.dims2()?;
        let out = if c == 0 {
            vec![0.0; t.rows()]
        } else {
            t.data.chunks(c).map(|r| r.iter().sum()).collect()
        };
        self.push(Tensor::vector(out), Op::SumCols(a), "sum_cols")
    }

    /// Per-row `ln Σ_j exp(t_ij)` with max subtraction: `[n×c] -> [n]`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, c) = t.dims2()?;
        if c == 0 {
            return Err(Error::dim("logsumexp over an empty row"));
        }
        let out: Vec<f64> = t.data.chunks(c).map(row_logsumexp).collect();
        self.push(Tensor::vector(out), Op::LogSumExpRows(a), "logsumexp_rows")
    }

    /// Row-wise softmax of `t / tau`.
    pub fn softmax_rows(&mut self, a: Var, tau: f64) -> Result<Var> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::param(format!("temperature must be > 0, got {tau}")));
        }
        let t = self.value(a);
        let (_, c) = t.dims2()?;
        if c == 0 {
            return Err(Error::dim("softmax over an empty row"));
        }
        let mut out = t.clone();
        for row in out.data.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = ((*v - max) / tau).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        self.push(out, Op::SoftmaxRows(a, tau), "softmax_rows")
    }

    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let out = self.value(a).gather_rows(index)?;
        self.push(out, Op::GatherRows(a, index.to_vec()), "gather_rows")
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor> = parts.iter().map(|p| self.value(*p)).collect();
        let out = Tensor::concat_rows(&values)?;
        self.push(out, Op::ConcatRows(parts.to_vec()), "concat_rows")
    }

    /// Rows `start..end` of a matrix, or elements `start..end` of a vector.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = match t.rank() {
            1 => (t.numel(), 1),
            _ => t.dims2()?,
        };
        if start > end || end > r {
            return Err(Error::dim(format!("row slice {start}..{end} of {r} rows")));
        }
        let data = t.data[start * c..end * c].to_vec();
        let out = if t.rank() == 1 {
            Tensor::vector(data)
        } else {
            Tensor::matrix(end - start, c, data)?
        };
        self.push(out, Op::SliceRows(a, start), "slice_rows")
    }

    /// Scales each row to unit L2 norm. Zero rows are a numeric error.
    pub fn normalize_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (_, c) = t.dims2()?;
        let mut out = t.clone();
        for row in out.data.chunks_mut(c.max(1)) {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::Numeric("cannot normalize a zero-norm row".into()));
            }
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
        self.push(out, Op::NormalizeRows(a), "normalize_rows")
    }

    /// Per-column standardization with batch statistics:
    /// `(x - mean) / sqrt(var + eps)`.
    pub fn standardize_cols(&mut self, a: Var, eps: f64) -> Result<Var> {
        let t = self.value(a);
        let (n, c) = t.dims2()?;
        if n == 0 {
            return Err(Error::dim("standardize of zero rows"));
        }
        let (mean, inv_std) = column_stats(t, eps);
        let mut out = t.clone();
        for row in out.data.chunks_mut(c) {
            for j in 0..c {
                row[j] = (row[j] - mean[j]) * inv_std[j];
            }
        }
        self.push(out, Op::StandardizeCols(a, eps), "standardize_cols")
    }

    /// Reverse pass from a scalar root. Leaf gradients accumulate across calls
    /// until [`Tape::zero_grad`].
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; root.0 + 1];
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));
        let mut leaf_grads = Vec::new();
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad && !matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                if self.nodes[i].requires_grad {
                    leaf_grads.push((i, g));
                }
                continue;
            }
            for (input, contribution) in self.local_grads(i, &g)? {
                match &mut grads[input.0] {
                    Some(acc) => {
                        for (a, b) in acc.data.iter_mut().zip(&contribution.data) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(contribution),
                }
            }
        }
        for (i, g) in leaf_grads {
            check_finite(&g, "backward")?;
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => {
                    for (a, b) in acc.data.iter_mut().zip(&g.data) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(g),
            }
        }
        Ok(())
    }

    /// Gradients flowing from node `i` (with upstream gradient `g`) into the
    /// inputs that require them.
    fn local_grads(&self, i: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[i];
        let y = &node.value;
        let wants = |v: &Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::new();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if wants(a) {
                    out.push((*a, g.clone()));
                }
                if wants(b) {
                    out.push((*b, g.clone()));
                }
            }
            Op::Sub(a, b) => {
                if wants(a) {
                    out.push((*a, g.clone()));
                }
                if wants(b) {
                    out.push((*b, g.map(|v| -v)));
                }
            }
            Op::Mul(a, b) => {
                if wants(a) {
                    let mut d = g.clone();
                    for (x, w) in d.data.iter_mut().zip(&self.value(*b).data) {
                        *x *= w;
                    }
                    out.push((*a, d));
                }
                if wants(b) {
                    let mut d = g.clone();
                    for (x, w) in d.data.iter_mut().zip(&self.value(*a).data) {
                        *x *= w;
                    }
                    out.push((*b, d));
                }
            }
            Op::Scale(a, s) => out.push((*a, g.map(|v| v * s))),
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k) = ta.dims2()?;
                let n = tb.dims2()?.1;
                if wants(a) {
                    let mut d = vec![0.0; m * k];
                    gemm(m, n, k, &g.data, false, &tb.data, true, &mut d, 0.0);
                    out.push((*a, Tensor::matrix(m, k, d)?));
                }
                if wants(b) {
                    let mut d = vec![0.0; k * n];
                    gemm(k, m, n, &ta.data, true, &g.data, false, &mut d, 0.0);
                    out.push((*b, Tensor::matrix(k, n, d)?));
                }
            }
            Op::AddBias(x, bias) => {
                if wants(x) {
                    out.push((*x, g.clone()));
                }
                if wants(bias) {
                    let m = g.cols();
                    let mut d = vec![0.0; m];
                    for row in g.data.chunks(m) {
                        for (o, v) in d.iter_mut().zip(row) {
                            *o += v;
                        }
                    }
                    out.push((*bias, Tensor::vector(d)));
                }
            }
            Op::Relu(a) => {
                let mut d = g.clone();
                for (x, v) in d.data.iter_mut().zip(&self.value(*a).data) {
                    if *v <= 0.0 {
                        *x = 0.0;
                    }
                }
                out.push((*a, d));
            }
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                for (x, v) in d.data.iter_mut().zip(&self.value(*a).data) {
                    if *v <= 0.0 {
                        *x *= slope;
                    }
                }
                out.push((*a, d));
            }
            Op::Exp(a) => {
                let mut d = g.clone();
                for (x, v) in d.data.iter_mut().zip(&y.data) {
                    *x *= v;
                }
                out.push((*a, d));
            }
            Op::Log(a) => {
                let mut d = g.clone();
                for (x, v) in d.data.iter_mut().zip(&self.value(*a).data) {
                    *x /= v;
                }
                out.push((*a, d));
            }
            Op::LogClamped(a, floor) => {
                let mut d = g.clone();
                for (x, v) in d.data.iter_mut().zip(&self.value(*a).data) {
                    *x = if *v > *floor { *x / v } else { 0.0 };
                }
                out.push((*a, d));
            }
            Op::Sum(a) => {
                let s = g.data[0];
                out.push((*a, Tensor::full(self.value(*a).shape(), s)));
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                let s = g.data[0] / t.numel() as f64;
                out.push((*a, Tensor::full(t.shape(), s)));
            }
            Op::MeanRows(a) => {
                let t = self.value(*a);
                let (n, c) = t.dims2()?;
                let mut d = Vec::with_capacity(n * c);
                for _ in 0..n {
                    d.extend(g.data.iter().map(|v| v / n as f64));
                }
                out.push((*a, Tensor::matrix(n, c, d)?));
            }
            Op::SumCols(a) => {
                let t = self.value(*a);
                let (n, c) = t.dims2()?;
                let mut d = Vec::with_capacity(n * c);
                for gi in &g.data {
                    d.extend(std::iter::repeat_n(*gi, c));
                }
                out.push((*a, Tensor::matrix(n, c, d)?));
            }
            Op::LogSumExpRows(a) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut d = t.clone();
                for ((row, lse), gi) in d.data.chunks_mut(c).zip(&y.data).zip(&g.data) {
                    for v in row.iter_mut() {
                        *v = gi * (*v - lse).exp();
                    }
                }
                out.push((*a, d));
            }
            Op::SoftmaxRows(a, tau) => {
                let c = y.cols();
                let mut d = g.clone();
                for (drow, yrow) in d.data.chunks_mut(c).zip(y.data.chunks(c)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (dv, yv) in drow.iter_mut().zip(yrow) {
                        *dv = yv * (*dv - dot) / tau;
                    }
                }
                out.push((*a, d));
            }
            Op::GatherRows(a, index) => {
                let t = self.value(*a);
                let mut d = Tensor::zeros(t.shape());
                for (k, &i) in index.iter().enumerate() {
                    for (o, v) in d.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += v;
                    }
                }
                out.push((*a, d));
            }
            Op::ConcatRows(parts) => {
                let c = g.cols();
                let mut offset = 0;
                for p in parts {
                    let r = self.value(*p).rows();
                    if wants(p) {
                        let slice = g.data[offset * c..(offset + r) * c].to_vec();
                        out.push((*p, Tensor::matrix(r, c, slice)?));
                    }
                    offset += r;
                }
            }
            Op::SliceRows(a, start) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut d = Tensor::zeros(t.shape());
                d.data[start * c..start * c + g.numel()].copy_from_slice(&g.data);
                out.push((*a, d));
            }
            Op::NormalizeRows(a) => {
                let t = self.value(*a);
                let c = t.cols();
                let mut d = g.clone();
                for ((drow, yrow), xrow) in d
                    .data
                    .chunks_mut(c)
                    .zip(y.data.chunks(c))
                    .zip(t.data.chunks(c))
                {
                    let norm = xrow.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                    for (dv, yv) in drow.iter_mut().zip(yrow) {
                        *dv = (*dv - yv * dot) / norm;
                    }
                }
                out.push((*a, d));
            }
            Op::StandardizeCols(a, eps) => {
                let t = self.value(*a);
                let (n, c) = t.dims2()?;
                let (_, inv_std) = column_stats(t, *eps);
                let mut mean_g = vec![0.0; c];
                let mut mean_gy = vec![0.0; c];
                for (grow, yrow) in g.data.chunks(c).zip(y.data.chunks(c)) {
                    for j in 0..c {
                        mean_g[j] += grow[j] / n as f64;
                        mean_gy[j] += grow[j] * yrow[j] / n as f64;
                    }
                }
                let mut d = g.clone();
                for (drow, yrow) in d.data.chunks_mut(c).zip(y.data.chunks(c)) {
                    for j in 0..c {
                        drow[j] = inv_std[j] * (drow[j] - mean_g[j] - yrow[j] * mean_gy[j]);
                    }
                }
                out.push((*a, d));
            }
        }
        Ok(out)
    }
}

fn column_stats(t: &Tensor, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let (n, c) = (t.rows(), t.cols());
    let mut mean = vec![0.0; c];
    for row in t.data.chunks(c) {
        for j in 0..c {
            mean[j] += row[j] / n as f64;
        }
    }
    let mut var = vec![0.0; c];
    for row in t.data.chunks(c) {
        for j in 0..c {
            let d = row[j] - mean[j];
            var[j] += d * d / n as f64;
        }
    }
    let inv_std = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    (mean, inv_std)
}
