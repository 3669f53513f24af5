//! Tape-based reverse-mode differentiation over [`Mat`] values.
//!
//! A [`Graph`] records every operation as it is evaluated. Values are
//! computed eagerly; [`Graph::backward`] walks the tape in reverse and
//! accumulates adjoints. Each primitive carries its own hand-derived
//! adjoint rule, checked against central differences in the tests below
//! and end-to-end by [`crate::gradcheck`].

use crate::tensor::Mat;

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_C: f64 = 0.044_715;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Gather(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        normed: Mat,
        rstd: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    Abs(Var),
    Relu(Var),
    Min(Var, Var),
    Max(Var, Var),
    MeanRows(Var),
    SumAll(Var),
    MeanAll(Var),
    BceWithLogits(Var, Vec<f64>),
    LogSumExpRows(Var),
}

struct Node {
    value: Mat,
    op: Op,
}

/// Observer for attention probabilities, used by tests and diagnostics.
pub type AttentionProbe = Vec<Mat>;

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(usize, Var)>,
    probe: Option<AttentionProbe>,
}

/// Adjoints for every node on a tape.
pub struct Adjoints {
    grads: Vec<Option<Mat>>,
}

impl Adjoints {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
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

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Starts recording every softmax output produced by this graph.
    pub fn enable_probe(&mut self) {
        self.probe = Some(Vec::new());
    }

    pub fn take_probe(&mut self) -> Option<AttentionProbe> {
        self.probe.take()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Mat::scalar(value))
    }

    /// Leaf bound to parameter `index`. Repeated calls with the same index
    /// return the same node, so gradients from every use accumulate there.
    pub fn param(&mut self, index: usize, value: &Mat) -> Var {
        if let Some(&(_, v)) = self.params.iter().find(|(i, _)| *i == index) {
            return v;
        }
        let v = self.push(value.clone(), Op::Param);
        self.params.push((index, v));
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).matmul_bt(self.value(b));
        self.push(value, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| x / y);
        self.push(value, Op::Div(a, b))
    }

    /// Adds the `1 × cols` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (rows, cols) = self.shape(a);
        assert_eq!(self.shape(bias), (1, cols), "add_row: bias shape");
        let b = self.value(bias).data.clone();
        let mut value = self.value(a).clone();
        for r in 0..rows {
            for (x, y) in value.row_mut(r).iter_mut().zip(&b) {
                *x += y;
            }
        }
        self.push(value, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x * s);
        self.push(value, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a).map(|x| x + s);
        self.push(value, Op::AddScalar(a))
    }

    /// Row `r` of the result is row `indices[r]` of `a`.
    pub fn gather_rows(&mut self, a: Var, indices: Vec<usize>) -> Var {
        let src = self.value(a);
        let mut value = Mat::zeros(indices.len(), src.cols);
        for (r, &i) in indices.iter().enumerate() {
            value.row_mut(r).copy_from_slice(src.row(i));
        }
        self.push(value, Op::Gather(a, indices))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_rows of nothing");
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows: column mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat_cols of nothing");
        let rows = self.shape(parts[0]).0;
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Mat::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols: row mismatch");
            for r in 0..rows {
                value.row_mut(r)[offset..offset + m.cols].copy_from_slice(m.row(r));
            }
            offset += m.cols;
        }
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_rows(start, len);
        self.push(value, Op::SliceRows(a, start))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice_cols(start, len);
        self.push(value, Op::SliceCols(a, start))
    }

    /// Row-wise layer normalization with learned `1 × cols` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        assert_eq!(g.len(), cols, "layer_norm: gain shape");
        assert_eq!(b.len(), cols, "layer_norm: bias shape");
        let mut normed = Mat::zeros(rows, cols);
        let mut value = Mat::zeros(rows, cols);
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            rstd.push(s);
            for c in 0..cols {
                let h = (row[c] - mean) * s;
                normed.data[r * cols + c] = h;
                value.data[r * cols + c] = h * g[c] + b[c];
            }
        }
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            },
        )
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (GELU_K * (x + GELU_C * x * x * x)).tanh()));
        self.push(value, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        self.push(value, Op::Sigmoid(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut value = src.clone();
        for r in 0..value.rows {
            let row = value.row_mut(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                total += *v;
            }
            for v in row.iter_mut() {
                *v /= total;
            }
        }
        if let Some(probe) = self.probe.as_mut() {
            probe.push(value.clone());
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::abs);
        self.push(value, Op::Abs(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0));
        self.push(value, Op::Relu(a))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| if x <= y { x } else { y });
        self.push(value, Op::Min(a, b))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).zip_map(self.value(b), |x, y| if x >= y { x } else { y });
        self.push(value, Op::Max(a, b))
    }

    /// Column means: `rows × cols → 1 × cols`.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let mut value = Mat::zeros(1, src.cols);
        for r in 0..src.rows {
            for (o, v) in value.data.iter_mut().zip(src.row(r)) {
                *o += v;
            }
        }
        let n = src.rows as f64;
        for o in value.data.iter_mut() {
            *o /= n;
        }
        self.push(value, Op::MeanRows(a))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Mat::scalar(self.value(a).sum());
        self.push(value, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Mat::scalar(m.sum() / m.len() as f64);
        self.push(value, Op::MeanAll(a))
    }

    /// Elementwise binary cross entropy of `sigmoid(logits)` against
    /// `targets`, in the overflow-free form
    /// `max(x, 0) − x·y + ln(1 + e^{−|x|})`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Vec<f64>) -> Var {
        let src = self.value(logits);
        assert_eq!(src.len(), targets.len(), "bce_with_logits: target count");
        let data = src
            .data
            .iter()
            .zip(&targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .collect();
        let value = Mat::from_vec(src.rows, src.cols, data);
        self.push(value, Op::BceWithLogits(logits, targets))
    }

    /// Row-wise log-sum-exp: `rows × cols → rows × 1`.
    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let data = (0..src.rows)
            .map(|r| {
                let row = src.row(r);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            })
            .collect();
        let value = Mat::from_vec(src.rows, 1, data);
        self.push(value, Op::LogSumExpRows(a))
    }

    /// Reverse sweep from the scalar `root`.
    pub fn backward(&self, root: Var) -> Adjoints {
        assert_eq!(self.shape(root), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Mat>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Mat::scalar(1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Adjoints { grads }
    }

    /// Adds every parameter adjoint into `out[index]`.
    pub fn accumulate_param_grads(&self, adjoints: &Adjoints, out: &mut [Mat]) {
        for &(index, v) in &self.params {
            if let Some(g) = adjoints.get(v) {
                out[index].add_assign(g);
            }
        }
    }

    fn propagate(&self, i: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Mat| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul_bt(val(*b)));
                acc(*b, val(*a).matmul_at(g));
            }
            Op::MatMulBt(a, b) => {
                acc(*a, g.matmul(val(*b)));
                acc(*b, g.matmul_at(val(*a)));
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
                acc(*a, g.zip_map(val(*b), |x, y| x * y));
                acc(*b, g.zip_map(val(*a), |x, y| x * y));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                acc(*a, g.zip_map(bv, |x, y| x / y));
                let ga = g.zip_map(val(*a), |x, y| x * y);
                acc(*b, ga.zip_map(bv, |x, y| -x / (y * y)));
            }
            Op::AddRow(a, bias) => {
                let mut gb = Mat::zeros(1, g.cols);
                for r in 0..g.rows {
                    for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*a, g.clone());
                acc(*bias, gb);
            }
            Op::Scale(a, s) => acc(*a, g.map(|x| x * s)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Gather(a, indices) => {
                let src = val(*a);
                let mut ga = Mat::zeros(src.rows, src.cols);
                for (r, &j) in indices.iter().enumerate() {
                    for (o, v) in ga.row_mut(j).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = val(p).rows;
                    acc(p, g.slice_rows(start, rows));
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let cols = val(p).cols;
                    acc(p, g.slice_cols(start, cols));
                    start += cols;
                }
            }
            Op::SliceRows(a, start) => {
                let src = val(*a);
                let mut ga = Mat::zeros(src.rows, src.cols);
                ga.data[start * src.cols..(start + g.rows) * src.cols].copy_from_slice(&g.data);
                acc(*a, ga);
            }
            Op::SliceCols(a, start) => {
                let src = val(*a);
                let mut ga = Mat::zeros(src.rows, src.cols);
                for r in 0..g.rows {
                    ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                }
                acc(*a, ga);
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                normed,
                rstd,
            } => {
                let (rows, cols) = g.shape();
                let gv = &val(*gain).data;
                let mut g_gain = Mat::zeros(1, cols);
                let mut g_bias = Mat::zeros(1, cols);
                let mut gx = Mat::zeros(rows, cols);
                for r in 0..rows {
                    let grow = g.row(r);
                    let hrow = normed.row(r);
                    let mut mean_dh = 0.0;
                    let mut mean_dh_h = 0.0;
                    for c in 0..cols {
                        g_bias.data[c] += grow[c];
                        g_gain.data[c] += grow[c] * hrow[c];
                        let dh = grow[c] * gv[c];
                        mean_dh += dh;
                        mean_dh_h += dh * hrow[c];
                    }
                    mean_dh /= cols as f64;
                    mean_dh_h /= cols as f64;
                    let out = gx.row_mut(r);
                    for c in 0..cols {
                        let dh = grow[c] * gv[c];
                        out[c] = rstd[r] * (dh - mean_dh - hrow[c] * mean_dh_h);
                    }
                }
                acc(*x, gx);
                acc(*gain, g_gain);
                acc(*bias, g_bias);
            }
            Op::Gelu(a) => {
                let d = val(*a).map(|x| {
                    let t = (GELU_K * (x + GELU_C * x * x * x)).tanh();
                    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_K * (1.0 + 3.0 * GELU_C * x * x)
                });
                acc(*a, g.zip_map(&d, |x, y| x * y));
            }
            Op::Sigmoid(a) => {
                acc(*a, g.zip_map(&node.value, |x, y| x * y * (1.0 - y)));
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut ga = Mat::zeros(y.rows, y.cols);
                for r in 0..y.rows {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for (o, (p, q)) in ga.row_mut(r).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = p * (q - dot);
                    }
                }
                acc(*a, ga);
            }
            Op::Abs(a) => acc(*a, g.zip_map(val(*a), |x, y| x * sign(y))),
            Op::Relu(a) => acc(*a, g.zip_map(val(*a), |x, y| if y > 0.0 { x } else { 0.0 })),
            Op::Min(a, b) | Op::Max(a, b) => {
                let pick_a = matches!(node.op, Op::Min(..));
                let av = val(*a);
                let bv = val(*b);
                let mut ga = Mat::zeros(g.rows, g.cols);
                let mut gb = Mat::zeros(g.rows, g.cols);
                for k in 0..g.len() {
                    let to_a = if pick_a {
                        av.data[k] <= bv.data[k]
                    } else {
                        av.data[k] >= bv.data[k]
                    };
                    if to_a {
                        ga.data[k] = g.data[k];
                    } else {
                        gb.data[k] = g.data[k];
                    }
                }
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::MeanRows(a) => {
                let src = val(*a);
                let n = src.rows as f64;
                let mut ga = Mat::zeros(src.rows, src.cols);
                for r in 0..src.rows {
                    for (o, v) in ga.row_mut(r).iter_mut().zip(&g.data) {
                        *o = v / n;
                    }
                }
                acc(*a, ga);
            }
            Op::SumAll(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Mat::filled(r, c, g.item()));
            }
            Op::MeanAll(a) => {
                let (r, c) = val(*a).shape();
                acc(*a, Mat::filled(r, c, g.item() / (r * c) as f64));
            }
            Op::BceWithLogits(a, targets) => {
                let src = val(*a);
                let data = src
                    .data
                    .iter()
                    .zip(targets)
                    .zip(&g.data)
                    .map(|((&x, &y), &gg)| gg * (sigmoid(x) - y))
                    .collect();
                acc(*a, Mat::from_vec(src.rows, src.cols, data));
            }
            Op::LogSumExpRows(a) => {
                let src = val(*a);
                let mut ga = Mat::zeros(src.rows, src.cols);
                for r in 0..src.rows {
                    let lse = node.value.data[r];
                    for (o, v) in ga.row_mut(r).iter_mut().zip(src.row(r)) {
                        *o = g.data[r] * (v - lse).exp();
                    }
                }
                acc(*a, ga);
            }
        }
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
