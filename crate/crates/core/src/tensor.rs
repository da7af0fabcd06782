//! Row-major 2-D `f64` tensors and a reverse-mode tape.
//!
//! Vectors are `1 x n` rows and scalars `1 x 1`. Every op records its
//! inputs on the [`Tape`]; [`Tape::backward`] walks the records in reverse
//! creation order, which is a valid topological order because inputs
//! always exist before their consumers.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("segment id {id} out of range for {n} segments")]
    InvalidSegmentId { id: usize, n: usize },
    #[error("loss must be a 1x1 scalar, got {0:?}")]
    NonScalarLoss((usize, usize)),
}

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "tensor data length must equal rows * cols");
        Tensor { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::new(1, 1, vec![v])
    }

    pub fn row(v: Vec<f64>) -> Self {
        let n = v.len();
        Tensor::new(1, n, v)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        let data: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Tensor::new(rows.len(), cols, data)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.rows, self.cols, self.data.iter().map(|&x| f(x)).collect())
    }

    fn add_assign(&mut self, other: &Tensor) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    fn transpose(&self) -> Tensor {
        let mut out = Tensor::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// `self (n x k) * other (k x m)`.
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let (n, k, m) = (self.rows, self.cols, other.cols);
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let a = self.data[i * k + p];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * m..(p + 1) * m];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(n, m, out)
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    LogSumExpRows(Var),
    Sum(Var),
    Mean(Var),
    ConcatCols(Vec<Var>),
    L2NormalizeRows(Var),
    LayerNormRows(Var),
    SegmentSum(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    ScaleRows(Var, Vec<f64>),
    SelectPerRow(Var, Vec<usize>),
    Transpose(Var),
    Dropout(Var, Vec<f64>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Guards 1/norm in row normalizations.
const NORM_EPS: f64 = 1e-12;
const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    /// Gradient, or zeros when `v` is off the loss path.
    pub fn get_or_zero(&self, v: Var) -> Tensor {
        self.grads[v.0].clone().unwrap_or_else(|| {
            let (r, c) = self.shapes[v.0];
            Tensor::zeros(r, c)
        })
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: t,
            op: Op::Leaf,
            requires_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != tb.rows {
            return Err(mismatch("matmul", ta, tb));
        }
        let out = ta.matmul(tb);
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    fn zip(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.rows, ta.cols, data);
        Ok(self.push(out, op, &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn row_broadcast(&mut self, name: &'static str, a: Var, r: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (ta, tr) = (self.value(a), self.value(r));
        if tr.rows != 1 || tr.cols != ta.cols {
            return Err(mismatch(name, ta, tr));
        }
        let data = ta.data.iter().enumerate().map(|(i, &x)| f(x, tr.data[i % ta.cols])).collect();
        let out = Tensor::new(ta.rows, ta.cols, data);
        Ok(self.push(out, op, &[a, r]))
    }

    /// `a + bias` with a `1 x cols` bias broadcast over rows.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        self.row_broadcast("add_row", a, bias, |x, y| x + y, Op::AddRow(a, bias))
    }

    /// `a * gain` with a `1 x cols` gain broadcast over rows.
    pub fn mul_row(&mut self, a: Var, gain: Var) -> Result<Var> {
        self.row_broadcast("mul_row", a, gain, |x, y| x * y, Op::MulRow(a, gain))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x * k);
        self.push(out, Op::Scale(a, k), &[a])
    }

    /// `a * s` for a `1 x 1` variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let ts = self.value(s);
        if ts.shape() != (1, 1) {
            return Err(mismatch("scale_by", self.value(a), ts));
        }
        let k = ts.data[0];
        let out = self.value(a).map(|x| x * k);
        Ok(self.push(out, Op::ScaleBy(a, s), &[a, s]))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a).map(|x| x + k);
        self.push(out, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    /// `ln(1 + e^x)`, computed stably.
    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        self.push(out, Op::Softplus(a), &[a])
    }

    /// Per-row log-sum-exp, `n x 1`.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let data = (0..t.rows)
            .map(|r| {
                let row = t.row_slice(r);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let out = Tensor::new(t.rows, 1, data);
        self.push(out, Op::LogSumExpRows(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data.iter().sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Mean over all entries; the mean of an empty tensor is 0.
    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.data.len();
        let v = if n == 0 { 0.0 } else { t.data.iter().sum::<f64>() / n as f64 };
        self.push(Tensor::scalar(v), Op::Mean(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows;
        for &p in parts {
            if self.value(p).rows != rows {
                return Err(mismatch("concat_cols", self.value(parts[0]), self.value(p)));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        Ok(self.push(Tensor::new(rows, cols, data), Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Each row divided by its Euclidean norm (floored at 1e-12).
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..t.rows {
            let norm = t.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
            for x in &mut out.data[r * t.cols..(r + 1) * t.cols] {
                *x /= norm;
            }
        }
        self.push(out, Op::L2NormalizeRows(a), &[a])
    }

    /// Per-row standardization without affine terms.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let mut out = t.clone();
        for r in 0..t.rows {
            let row = t.row_slice(r);
            let n = row.len() as f64;
            let mu = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            let sd = (var + LAYER_NORM_EPS).sqrt();
            for (o, &x) in out.data[r * t.cols..(r + 1) * t.cols].iter_mut().zip(row) {
                *o = (x - mu) / sd;
            }
        }
        self.push(out, Op::LayerNormRows(a), &[a])
    }

    /// Row `i` of `a` is added into output row `ids[i]`; `n x cols` output.
    pub fn segment_sum(&mut self, a: Var, ids: &[usize], n: usize) -> Result<Var> {
        let t = self.value(a);
        if ids.len() != t.rows {
            return Err(TensorError::ShapeMismatch {
                op: "segment_sum",
                lhs: t.shape(),
                rhs: (ids.len(), 1),
            });
        }
        if let Some(&id) = ids.iter().find(|&&id| id >= n) {
            return Err(TensorError::InvalidSegmentId { id, n });
        }
        let c = t.cols;
        let mut out = Tensor::zeros(n, c);
        for (i, &id) in ids.iter().enumerate() {
            for (o, &x) in out.data[id * c..(id + 1) * c].iter_mut().zip(t.row_slice(i)) {
                *o += x;
            }
        }
        Ok(self.push(out, Op::SegmentSum(a, ids.to_vec()), &[a]))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if let Some(&id) = idx.iter().find(|&&id| id >= t.rows) {
            return Err(TensorError::InvalidSegmentId { id, n: t.rows });
        }
        let mut data = Vec::with_capacity(idx.len() * t.cols);
        for &i in idx {
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(idx.len(), t.cols, data);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec()), &[a]))
    }

    /// Row `i` multiplied by the constant `w[i]`.
    pub fn scale_rows(&mut self, a: Var, w: &[f64]) -> Result<Var> {
        let t = self.value(a);
        if w.len() != t.rows {
            return Err(TensorError::ShapeMismatch {
                op: "scale_rows",
                lhs: t.shape(),
                rhs: (w.len(), 1),
            });
        }
        let mut out = t.clone();
        for (r, &k) in w.iter().enumerate() {
            for x in &mut out.data[r * t.cols..(r + 1) * t.cols] {
                *x *= k;
            }
        }
        Ok(self.push(out, Op::ScaleRows(a, w.to_vec()), &[a]))
    }

    /// `out[i] = a[i, cols[i]]`, an `n x 1` column.
    pub fn select_per_row(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let t = self.value(a);
        if cols.len() != t.rows || cols.iter().any(|&c| c >= t.cols) {
            return Err(TensorError::ShapeMismatch {
                op: "select_per_row",
                lhs: t.shape(),
                rhs: (cols.len(), 1),
            });
        }
        let data = cols.iter().enumerate().map(|(r, &c)| t.get(r, c)).collect();
        let out = Tensor::new(t.rows, 1, data);
        Ok(self.push(out, Op::SelectPerRow(a, cols.to_vec()), &[a]))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a), &[a])
    }

    /// Inverted dropout with an explicit keep mask (entries 0 or 1).
    pub fn dropout_mask(&mut self, a: Var, keep: Vec<bool>, p: f64) -> Result<Var> {
        let t = self.value(a);
        if keep.len() != t.data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "dropout",
                lhs: t.shape(),
                rhs: (keep.len(), 1),
            });
        }
        let scale = if p < 1.0 { 1.0 / (1.0 - p) } else { 0.0 };
        let mask: Vec<f64> = keep.iter().map(|&k| if k { scale } else { 0.0 }).collect();
        let data = t.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        let out = Tensor::new(t.rows, t.cols, data);
        Ok(self.push(out, Op::Dropout(a, mask), &[a]))
    }

    /// Dropout with probability `p`, drawing the mask from `rng`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl rand::Rng) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        let n = self.value(a).data.len();
        let keep = (0..n).map(|_| rng.gen::<f64>() >= p).collect();
        self.dropout_mask(a, keep, p)
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, d: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(t) => t.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul(&val(*b).transpose()));
                acc(*b, val(*a).transpose().matmul(g));
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, Tensor::new(g.rows, g.cols, g.data.iter().zip(&tb.data).map(|(x, y)| x * y).collect()));
                acc(*b, Tensor::new(g.rows, g.cols, g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect()));
            }
            Op::AddRow(a, r) => {
                acc(*a, g.clone());
                acc(*r, column_sums(g));
            }
            Op::MulRow(a, r) => {
                let (ta, tr) = (val(*a), val(*r));
                let c = g.cols;
                let da = g.data.iter().enumerate().map(|(i, &x)| x * tr.data[i % c]).collect();
                acc(*a, Tensor::new(g.rows, c, da));
                let prod = Tensor::new(g.rows, c, g.data.iter().zip(&ta.data).map(|(x, y)| x * y).collect());
                acc(*r, column_sums(&prod));
            }
            Op::Scale(a, k) => acc(*a, g.map(|x| x * k)),
            Op::ScaleBy(a, s) => {
                let k = val(*s).data[0];
                acc(*a, g.map(|x| x * k));
                let ds: f64 = g.data.iter().zip(&val(*a).data).map(|(x, y)| x * y).sum();
                acc(*s, Tensor::scalar(ds));
            }
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Relu(a) => {
                let ta = val(*a);
                let d = g.data.iter().zip(&ta.data).map(|(&x, &y)| if y > 0.0 { x } else { 0.0 }).collect();
                acc(*a, Tensor::new(g.rows, g.cols, d));
            }
            Op::Sigmoid(a) => {
                let d = g.data.iter().zip(&node.value.data).map(|(x, y)| x * y * (1.0 - y)).collect();
                acc(*a, Tensor::new(g.rows, g.cols, d));
            }
            Op::Softplus(a) => {
                let d = g.data.iter().zip(&val(*a).data).map(|(x, &y)| x * sigmoid(y)).collect();
                acc(*a, Tensor::new(g.rows, g.cols, d));
            }
            Op::LogSumExpRows(a) => {
                let ta = val(*a);
                let mut d = Tensor::zeros(ta.rows, ta.cols);
                for r in 0..ta.rows {
                    let lse = node.value.data[r];
                    for c in 0..ta.cols {
                        d.data[r * ta.cols + c] = g.data[r] * (ta.get(r, c) - lse).exp();
                    }
                }
                acc(*a, d);
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Tensor::new(r, c, vec![g.data[0]; r * c]));
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                let n = (r * c).max(1) as f64;
                acc(*a, Tensor::new(r, c, vec![g.data[0] / n; r * c]));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pc = val(p).cols;
                    let mut d = Tensor::zeros(g.rows, pc);
                    for r in 0..g.rows {
                        d.data[r * pc..(r + 1) * pc].copy_from_slice(&g.data[r * g.cols + offset..r * g.cols + offset + pc]);
                    }
                    offset += pc;
                    acc(p, d);
                }
            }
            Op::L2NormalizeRows(a) => {
                let ta = val(*a);
                let y = &node.value;
                let mut d = Tensor::zeros(ta.rows, ta.cols);
                for r in 0..ta.rows {
                    let norm = ta.row_slice(r).iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_EPS);
                    let yr = y.row_slice(r);
                    let gr = g.row_slice(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for c in 0..ta.cols {
                        d.data[r * ta.cols + c] = (gr[c] - yr[c] * dot) / norm;
                    }
                }
                acc(*a, d);
            }
            Op::LayerNormRows(a) => {
                let ta = val(*a);
                let y = &node.value;
                let mut d = Tensor::zeros(ta.rows, ta.cols);
                let n = ta.cols as f64;
                for r in 0..ta.rows {
                    let row = ta.row_slice(r);
                    let mu = row.iter().sum::<f64>() / n;
                    let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
                    let sd = (var + LAYER_NORM_EPS).sqrt();
                    let (yr, gr) = (y.row_slice(r), g.row_slice(r));
                    let gm = gr.iter().sum::<f64>() / n;
                    let gym = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n;
                    for c in 0..ta.cols {
                        d.data[r * ta.cols + c] = (gr[c] - gm - yr[c] * gym) / sd;
                    }
                }
                acc(*a, d);
            }
            Op::SegmentSum(a, ids) => {
                let c = g.cols;
                let mut d = Tensor::zeros(ids.len(), c);
                for (i, &id) in ids.iter().enumerate() {
                    d.data[i * c..(i + 1) * c].copy_from_slice(g.row_slice(id));
                }
                acc(*a, d);
            }
            Op::GatherRows(a, idx) => {
                let ta = val(*a);
                let c = ta.cols;
                let mut d = Tensor::zeros(ta.rows, c);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, &x) in d.data[i * c..(i + 1) * c].iter_mut().zip(g.row_slice(k)) {
                        *o += x;
                    }
                }
                acc(*a, d);
            }
            Op::ScaleRows(a, w) => {
                let mut d = g.clone();
                for (r, &k) in w.iter().enumerate() {
                    for x in &mut d.data[r * g.cols..(r + 1) * g.cols] {
                        *x *= k;
                    }
                }
                acc(*a, d);
            }
            Op::SelectPerRow(a, cols) => {
                let ta = val(*a);
                let mut d = Tensor::zeros(ta.rows, ta.cols);
                for (r, &c) in cols.iter().enumerate() {
                    d.data[r * ta.cols + c] = g.data[r];
                }
                acc(*a, d);
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Dropout(a, mask) => {
                let d = g.data.iter().zip(mask).map(|(x, m)| x * m).collect();
                acc(*a, Tensor::new(g.rows, g.cols, d));
            }
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols);
    for r in 0..g.rows {
        for (o, &x) in out.data.iter_mut().zip(g.row_slice(r)) {
            *o += x;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn square_gradient() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 6.0);
    }

    #[test]
    fn forward_examples() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::new(3, 1, vec![1.0, 2.0, 3.0]));
        let s = t.segment_sum(a, &[0, 0, 1], 2).unwrap();
        assert_eq!(t.value(s).data, vec![3.0, 3.0]);
        let v = t.constant(Tensor::row(vec![3.0, 4.0]));
        let n = t.l2_normalize_rows(v);
        assert_relative_eq!(t.value(n).data[0], 0.6);
        assert_relative_eq!(t.value(n).data[1], 0.8);
        assert!(matches!(t.segment_sum(a, &[0, 2, 1], 2), Err(TensorError::InvalidSegmentId { id: 2, n: 2 })));
    }

    #[test]
    fn relu_kink_and_errors() {
        let mut t = Tape::new();
        let x = t.param(Tensor::row(vec![0.0, 1.0]));
        let r = t.relu(x);
        let s = t.sum(r);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data, vec![0.0, 1.0]);
        assert!(matches!(t.backward(r), Err(TensorError::NonScalarLoss((1, 2)))));
        let y = t.param(Tensor::zeros(3, 3));
        assert!(matches!(t.matmul(x, y), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn off_path_gradient_is_zero() {
        let mut t = Tape::new();
        let x = t.param(Tensor::scalar(1.0));
        let z = t.param(Tensor::row(vec![1.0, 2.0]));
        let y = t.scale(x, 2.0);
        let g = t.backward(y).unwrap();
        assert!(g.get(z).is_none());
        assert_eq!(g.get_or_zero(z).data, vec![0.0, 0.0]);
    }

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        // keep entries away from the relu kink
        Tensor::new(
            r,
            c,
            (0..r * c)
                .map(|_| {
                    let v: f64 = rng.gen_range(0.05..1.0);
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect(),
        )
    }

    /// Central differences on every input entry against the tape gradient.
    fn check(inputs: Vec<Tensor>, f: impl Fn(&mut Tape, &[Var]) -> Var) {
        let run = |ts: &[Tensor]| {
            let mut t = Tape::new();
            let vs: Vec<Var> = ts.iter().map(|x| t.param(x.clone())).collect();
            let out = f(&mut t, &vs);
            (t.value(out).item(), t, vs, out)
        };
        let (_, tape, vars, out) = run(&inputs);
        let grads = tape.backward(out).unwrap();
        let h = 1e-6;
        for (k, v) in vars.iter().enumerate() {
            let analytic = grads.get_or_zero(*v);
            for i in 0..inputs[k].data.len() {
                let mut plus = inputs.clone();
                plus[k].data[i] += h;
                let mut minus = inputs.clone();
                minus[k].data[i] -= h;
                let numeric = (run(&plus).0 - run(&minus).0) / (2.0 * h);
                let a = analytic.data[i];
                let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
                assert!(err < 1e-6, "input {k} entry {i}: analytic {a} numeric {numeric}");
            }
        }
    }

    #[test]
    fn gradient_check_each_op() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random(&mut rng, 3, 4);
        let b = random(&mut rng, 4, 2);
        let c = random(&mut rng, 3, 4);
        let row = random(&mut rng, 1, 4);
        let weights = random(&mut rng, 3, 4);
        // weighted sum turns any matrix into a scalar with a non-trivial gradient
        let reduce = move |t: &mut Tape, v: Var| {
            let (r, c) = t.shape(v);
            let w = t.constant(Tensor::new(r, c, weights.data.iter().cycle().take(r * c).copied().collect()));
            let p = t.mul(v, w).unwrap();
            t.sum(p)
        };
        let r = reduce.clone();
        check(vec![a.clone(), b.clone()], move |t, v| {
            let m = t.matmul(v[0], v[1]).unwrap();
            r(t, m)
        });
        let r = reduce.clone();
        check(vec![a.clone(), c.clone()], move |t, v| {
            let x = t.add(v[0], v[1]).unwrap();
            let y = t.sub(x, v[1]).unwrap();
            let z = t.mul(y, v[1]).unwrap();
            r(t, z)
        });
        let r = reduce.clone();
        check(vec![a.clone(), row.clone()], move |t, v| {
            let x = t.add_row(v[0], v[1]).unwrap();
            let y = t.mul_row(x, v[1]).unwrap();
            r(t, y)
        });
        let r = reduce.clone();
        check(vec![a.clone(), Tensor::scalar(0.7)], move |t, v| {
            let x = t.scale_by(v[0], v[1]).unwrap();
            let y = t.scale(x, -1.5);
            let z = t.add_scalar(y, 0.3);
            r(t, z)
        });
        let r = reduce.clone();
        check(vec![a.clone()], move |t, v| {
            let x = t.relu(v[0]);
            let y = t.sigmoid(v[0]);
            let z = t.softplus(v[0]);
            let s = t.add(x, y).unwrap();
            let s = t.add(s, z).unwrap();
            r(t, s)
        });
        let r = reduce.clone();
        check(vec![a.clone()], move |t, v| {
            let x = t.log_sum_exp_rows(v[0]);
            let y = t.transpose(x);
            let z = t.concat_cols(&[v[0], v[0]]).unwrap();
            let sz = r(t, z);
            let sy = t.sum(y);
            let m = t.mean(v[0]);
            let s = t.add(sy, sz).unwrap();
            t.add(s, m).unwrap()
        });
        let r = reduce.clone();
        check(vec![a.clone()], move |t, v| {
            let x = t.l2_normalize_rows(v[0]);
            let y = t.layer_norm_rows(v[0]);
            let s = t.add(x, y).unwrap();
            r(t, s)
        });
        let r = reduce.clone();
        check(vec![a.clone()], move |t, v| {
            let x = t.gather_rows(v[0], &[2, 0, 2]).unwrap();
            let y = t.segment_sum(x, &[1, 0, 2], 3).unwrap();
            let z = t.scale_rows(y, &[0.5, -2.0, 1.5]).unwrap();
            r(t, z)
        });
        check(vec![a.clone()], move |t, v| {
            let x = t.select_per_row(v[0], &[1, 3, 0]).unwrap();
            let d = t.dropout_mask(v[0], vec![true, false, true, true, false, true, true, true, false, true, true, true], 0.25).unwrap();
            let sd = t.sum(d);
            let sx = t.sum(x);
            t.add(sx, sd).unwrap()
        });
    }

    #[test]
    fn dropout_is_inverted() {
        let mut t = Tape::new();
        let x = t.constant(Tensor::row(vec![1.0; 4]));
        let d = t.dropout_mask(x, vec![true, false, true, false], 0.5).unwrap();
        assert_eq!(t.value(d).data, vec![2.0, 0.0, 2.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let same = t.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(same, x);
    }
}
