//! Reverse-mode automatic differentiation over a flat, append-only tape.
//!
//! Every operation appends one node holding its forward value. A node
//! records its op (and whatever the backward rule needs) only when one of
//! its inputs depends on a parameter; otherwise it is stored as a constant.

use std::collections::HashMap;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }

    #[cfg(test)]
    pub(crate) fn from_index_for_tests(i: usize) -> Self {
        Var(i)
    }
}

/// Contiguous run of rows `[start, start + len)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub len: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddRowVec {
        x: Var,
        b: Var,
    },
    ScaleRows {
        x: Var,
        c: Var,
    },
    Concat {
        inputs: Vec<Var>,
        outer: usize,
        inner: usize,
        dims: Vec<usize>,
    },
    SumAxis {
        x: Var,
        outer: usize,
        dim: usize,
        inner: usize,
        mean: bool,
    },
    Sum(Var),
    L2Norm(Var),
    Exp(Var),
    Log(Var),
    LeakyRelu(Var, f64),
    Elu(Var),
    Gelu(Var),
    Softmax {
        x: Var,
        outer: usize,
        dim: usize,
        inner: usize,
        log: bool,
    },
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    GatherRows {
        table: Var,
        idx: Vec<usize>,
    },
    GatherFlat {
        x: Var,
        idx: Vec<usize>,
    },
    SegmentAttention {
        q: Var,
        k: Var,
        v: Var,
        segs: Vec<Segment>,
        heads: usize,
        probs: Vec<f64>,
        offsets: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        segs: Vec<Segment>,
        row_mask: Vec<bool>,
    },
    SegmentSoftmax {
        x: Var,
        offsets: Vec<usize>,
    },
    EdgeAggregate {
        alpha: Var,
        x: Var,
        src: Vec<usize>,
        offsets: Vec<usize>,
    },
    Transpose {
        x: Var,
        rows: usize,
        cols: usize,
    },
    Reshape(Var),
    NormalizeRows {
        x: Var,
        norms: Vec<f64>,
    },
    PickPerRow {
        x: Var,
        idx: Vec<usize>,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul { .. } => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddRowVec { .. } => "add_rowvec",
            Op::ScaleRows { .. } => "scale_rows",
            Op::Concat { .. } => "concat",
            Op::SumAxis { mean: true, .. } => "mean_axis",
            Op::SumAxis { .. } => "sum_axis",
            Op::Sum(_) => "sum",
            Op::L2Norm(_) => "l2_norm",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Elu(_) => "elu",
            Op::Gelu(_) => "gelu",
            Op::Softmax { log: true, .. } => "log_softmax",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::GatherRows { .. } => "gather_rows",
            Op::GatherFlat { .. } => "gather_flat",
            Op::SegmentAttention { .. } => "segment_attention",
            Op::SegmentMean { .. } => "segment_mean",
            Op::SegmentSoftmax { .. } => "segment_softmax",
            Op::EdgeAggregate { .. } => "edge_aggregate",
            Op::Transpose { .. } => "transpose",
            Op::Reshape(_) => "reshape",
            Op::NormalizeRows { .. } => "normalize_rows",
            Op::PickPerRow { .. } => "pick_per_row",
        }
    }
}

struct Node {
    value: Tensor,
    op: Op,
    kind: &'static str,
    needs_grad: bool,
}

/// Forward record of one computation. Confined to a single thread.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    consumed: bool,
}

/// `C (m×n) = beta·C + A (m×k) · B (k×n)`, either operand optionally
/// stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices have exactly the extents described by the strides.
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

fn split_axis(shape: &[usize], axis: usize) -> Result<(usize, usize, usize)> {
    if axis >= shape.len() {
        return Err(Error::shape(format!("axis {axis} out of range for {shape:?}")));
    }
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    Ok((outer, shape[axis], inner))
}

fn check_offsets(offsets: &[usize], len: usize) -> Result<()> {
    if offsets.first() != Some(&0) || offsets.last() != Some(&len) {
        return Err(Error::shape(format!(
            "segment offsets must run from 0 to {len}"
        )));
    }
    if offsets.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::shape("segment offsets must be non-decreasing"));
    }
    Ok(())
}

fn gelu(x: f64) -> (f64, f64) {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x);
    (y, dy)
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> Result<Var> {
        let kind = op.name();
        let needs_grad = match &op {
            Op::Leaf => false,
            _ => self.op_inputs(&op).iter().any(|&v| self.needs(v)),
        };
        // attention keeps its probabilities for inspection even without grad
        let op = if needs_grad || matches!(op, Op::SegmentAttention { .. }) {
            op
        } else {
            Op::Leaf
        };
        let value = Tensor::new(shape, data)?;
        self.nodes.push(Node {
            value,
            op,
            kind,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn op_inputs(&self, op: &Op) -> Vec<Var> {
        match op {
            Op::Leaf => vec![],
            Op::MatMul { a, b, .. } => vec![*a, *b],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::AddRowVec { x, b } => vec![*x, *b],
            Op::ScaleRows { x, c } => vec![*x, *c],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::LayerNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::SegmentAttention { q, k, v, .. } => vec![*q, *k, *v],
            Op::EdgeAggregate { alpha, x, .. } => vec![*alpha, *x],
            Op::GatherRows { table: x, .. }
            | Op::GatherFlat { x, .. }
            | Op::SumAxis { x, .. }
            | Op::Softmax { x, .. }
            | Op::SegmentMean { x, .. }
            | Op::SegmentSoftmax { x, .. }
            | Op::Transpose { x, .. }
            | Op::NormalizeRows { x, .. }
            | Op::PickPerRow { x, .. }
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::L2Norm(x)
            | Op::Exp(x)
            | Op::Log(x)
            | Op::LeakyRelu(x, _)
            | Op::Elu(x)
            | Op::Gelu(x)
            | Op::Reshape(x) => vec![*x],
        }
    }

    /// Records a value that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Tensor::new(t.shape().to_vec(), t.into_data()).expect("valid tensor"),
            op: Op::Leaf,
            kind: "constant",
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Binds a named parameter; repeated calls return the same handle.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store.get(name)?;
        let value = Tensor::new(t.shape().to_vec(), t.data().to_vec())?;
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            kind: "param",
            needs_grad: true,
        });
        let v = Var(self.nodes.len() - 1);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// First node whose value holds a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.all_finite())
            .map(|(i, n)| {
                let param = self
                    .params
                    .iter()
                    .find(|(_, v)| v.0 == i)
                    .map(|(k, _)| format!(" (parameter {k})"))
                    .unwrap_or_default();
                format!("node {i} [{}] shape {:?}{param}", n.kind, n.value.shape())
            })
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 {
            return Err(Error::shape(format!("matmul needs matrices, got {sa:?} and {sb:?}")));
        }
        let (m, k) = (sa[0], sa[1]);
        let (kb, n) = if trans_b { (sb[1], sb[0]) } else { (sb[0], sb[1]) };
        if k != kb {
            return Err(Error::shape(format!(
                "matmul inner dimensions disagree: {sa:?} x {sb:?}{}",
                if trans_b { "ᵀ" } else { "" }
            )));
        }
        let mut c = vec![0.0; m * n];
        gemm(m, k, n, self.data(a), false, self.data(b), trans_b, &mut c, 0.0);
        self.push(
            vec![m, n],
            c,
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b,
            },
        )
    }

    fn zip_with(&mut self, a: Var, b: Var, what: &str, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        self.same_shape(a, b, what)?;
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, data, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let data = self.data(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, data, Op::Scale(x, c))
    }

    fn map_unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| f(v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, data, op)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map_unary(x, f64::exp, Op::Exp(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.data(x).iter().find(|v| **v <= 0.0) {
            return Err(Error::domain(format!("log of non-positive value {bad}")));
        }
        self.map_unary(x, f64::ln, Op::Log(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.map_unary(x, |v| if v >= 0.0 { v } else { slope * v }, Op::LeakyRelu(x, slope))
    }

    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.map_unary(x, |v| if v > 0.0 { v } else { v.exp_m1() }, Op::Elu(x))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.map_unary(x, |v| gelu(v).0, Op::Gelu(x))
    }

    /// `x[m×n] + b[n]` added to every row.
    pub fn add_rowvec(&mut self, x: Var, b: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "add_rowvec")?;
        if self.value(b).numel() != cols {
            return Err(Error::shape(format!(
                "add_rowvec: row width {cols} vs bias {:?}",
                self.shape(b)
            )));
        }
        let bd = self.data(b);
        let mut out = self.data(x).to_vec();
        for r in 0..rows {
            for (o, bv) in out[r * cols..(r + 1) * cols].iter_mut().zip(bd) {
                *o += bv;
            }
        }
        self.push(vec![rows, cols], out, Op::AddRowVec { x, b })
    }

    /// Multiplies row `i` of `x[m×n]` by `c[i]`.
    pub fn scale_rows(&mut self, x: Var, c: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "scale_rows")?;
        if self.value(c).numel() != rows {
            return Err(Error::shape(format!(
                "scale_rows: {rows} rows vs {:?} factors",
                self.shape(c)
            )));
        }
        let cd = self.data(c);
        let mut out = self.data(x).to_vec();
        for r in 0..rows {
            out[r * cols..(r + 1) * cols].iter_mut().for_each(|o| *o *= cd[r]);
        }
        self.push(vec![rows, cols], out, Op::ScaleRows { x, c })
    }

    fn matrix_dims(&self, x: Var, what: &str) -> Result<(usize, usize)> {
        match self.shape(x) {
            [r, c] => Ok((*r, *c)),
            s => Err(Error::shape(format!("{what} needs a matrix, got {s:?}"))),
        }
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::shape("concat of zero tensors"))?;
        let base = self.shape(*first).to_vec();
        let (outer, _, inner) = split_axis(&base, axis)?;
        let mut dims = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter()
                    .zip(&base)
                    .enumerate()
                    .any(|(i, (a, b))| i != axis && a != b)
            {
                return Err(Error::shape(format!("concat: {s:?} vs {base:?} on axis {axis}")));
            }
            dims.push(s[axis]);
        }
        let total: usize = dims.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&v, &d) in inputs.iter().zip(&dims) {
                let block = d * inner;
                out.extend_from_slice(&self.data(v)[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        self.push(
            shape,
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                outer,
                inner,
                dims,
            },
        )
    }

    fn reduce_axis(&mut self, x: Var, axis: usize, mean: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, dim, inner) = split_axis(&shape, axis)?;
        let d = self.data(x);
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..dim {
                let src = &d[(o * dim + j) * inner..(o * dim + j + 1) * inner];
                for (acc, v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *acc += v;
                }
            }
        }
        if mean {
            out.iter_mut().for_each(|v| *v /= dim as f64);
        }
        let mut new_shape = shape;
        new_shape.remove(axis);
        self.push(
            new_shape,
            out,
            Op::SumAxis {
                x,
                outer,
                dim,
                inner,
                mean,
            },
        )
    }

    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, true)
    }

    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.reduce_axis(x, axis, false)
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().sum();
        self.push(vec![], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).numel() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Euclidean norm of all elements, as a scalar.
    pub fn l2_norm(&mut self, x: Var) -> Result<Var> {
        let s = self.data(x).iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(vec![], vec![s], Op::L2Norm(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, false)
    }

    pub fn log_softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        self.softmax_impl(x, axis, true)
    }

    fn softmax_impl(&mut self, x: Var, axis: usize, log: bool) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let (outer, dim, inner) = split_axis(&shape, axis)?;
        if dim == 0 {
            return Err(Error::domain("softmax over an empty slice"));
        }
        let d = self.data(x);
        let mut out = vec![0.0; d.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * dim + j) * inner + i;
                let mx = (0..dim).map(|j| d[at(j)]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..dim).map(|j| (d[at(j)] - mx).exp()).sum();
                let lz = z.ln();
                for j in 0..dim {
                    let shifted = d[at(j)] - mx;
                    out[at(j)] = if log { shifted - lz } else { shifted.exp() / z };
                }
            }
        }
        self.push(
            shape,
            out,
            Op::Softmax {
                x,
                outer,
                dim,
                inner,
                log,
            },
        )
    }

    /// Row-wise layer normalization of `x[m×n]` with gain and bias `[n]`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "layer_norm")?;
        if self.value(gamma).numel() != cols || self.value(beta).numel() != cols {
            return Err(Error::shape("layer_norm: gain/bias width mismatch"));
        }
        let d = self.data(x);
        let (g, b) = (self.data(gamma), self.data(beta));
        let mut xhat = vec![0.0; rows * cols];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &d[r * cols..(r + 1) * cols];
            let mu = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / cols as f64;
            let rs = 1.0 / (var + eps).sqrt();
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mu) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        self.push(
            vec![rows, cols],
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
        )
    }

    /// Selects rows of `table` (rank 2) by index.
    pub fn gather_rows(&mut self, table: Var, idx: Vec<usize>) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(table, "gather_rows")?;
        if idx.is_empty() {
            return Err(Error::shape("gather_rows with no indices"));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(format!("gather_rows index {bad} >= {rows}")));
        }
        let d = self.data(table);
        let mut out = Vec::with_capacity(idx.len() * cols);
        for &i in &idx {
            out.extend_from_slice(&d[i * cols..(i + 1) * cols]);
        }
        self.push(vec![idx.len(), cols], out, Op::GatherRows { table, idx })
    }

    /// Selects individual flat elements into a 1-D tensor.
    pub fn gather_flat(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let n = self.value(x).numel();
        if idx.is_empty() {
            return Err(Error::shape("gather_flat with no indices"));
        }
        if let Some(bad) = idx.iter().find(|&&i| i >= n) {
            return Err(Error::shape(format!("gather_flat index {bad} >= {n}")));
        }
        let d = self.data(x);
        let out = idx.iter().map(|&i| d[i]).collect();
        self.push(vec![idx.len()], out, Op::GatherFlat { x, idx })
    }

    /// Picks `x[i, idx[i]]` for each row of a matrix.
    pub fn pick_per_row(&mut self, x: Var, idx: Vec<usize>) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "pick_per_row")?;
        if idx.len() != rows || idx.iter().any(|&j| j >= cols) {
            return Err(Error::shape("pick_per_row: bad index list"));
        }
        let d = self.data(x);
        let out = idx.iter().enumerate().map(|(r, &c)| d[r * cols + c]).collect();
        self.push(vec![rows], out, Op::PickPerRow { x, idx })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "transpose")?;
        let d = self.data(x);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = d[r * cols + c];
            }
        }
        self.push(vec![cols, rows], out, Op::Transpose { x, rows, cols })
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != self.value(x).numel() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape(x)
            )));
        }
        let data = self.data(x).to_vec();
        self.push(shape, data, Op::Reshape(x))
    }

    /// Scales each row of a matrix to unit Euclidean length.
    pub fn normalize_rows(&mut self, x: Var) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "normalize_rows")?;
        let d = self.data(x);
        let mut norms = Vec::with_capacity(rows);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &d[r * cols..(r + 1) * cols];
            let nrm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if nrm == 0.0 {
                return Err(Error::domain(format!("row {r} is the zero vector")));
            }
            norms.push(nrm);
            for c in 0..cols {
                out[r * cols + c] = row[c] / nrm;
            }
        }
        self.push(vec![rows, cols], out, Op::NormalizeRows { x, norms })
    }

    /// Multi-head scaled dot-product attention applied independently
    /// within each segment. Keys whose `key_mask` entry is false are
    /// excluded from every softmax. Segments must tile the rows in order.
    pub fn segment_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        segs: Vec<Segment>,
        key_mask: &[bool],
        heads: usize,
    ) -> Result<Var> {
        let (rows, d) = self.matrix_dims(q, "segment_attention")?;
        if self.shape(k) != [rows, d] || self.shape(v) != [rows, d] {
            return Err(Error::shape("segment_attention: q, k, v shapes differ"));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape(format!("{d} columns not divisible into {heads} heads")));
        }
        if key_mask.len() != rows {
            return Err(Error::shape("segment_attention: key mask length"));
        }
        let mut next = 0;
        for s in &segs {
            if s.start != next || s.len == 0 {
                return Err(Error::shape("segments must tile rows contiguously"));
            }
            next += s.len;
        }
        if next != rows {
            return Err(Error::shape("segments do not cover every row"));
        }
        let dh = d / heads;
        let inv = 1.0 / (dh as f64).sqrt();
        let (qd, kd, vd) = (self.data(q), self.data(k), self.data(v));
        let mut offsets = Vec::with_capacity(segs.len());
        let total: usize = segs.iter().map(|s| heads * s.len * s.len).sum();
        let mut probs = vec![0.0; total];
        let mut out = vec![0.0; rows * d];
        let mut base = 0;
        let mut scores = Vec::new();
        for s in &segs {
            offsets.push(base);
            if !key_mask[s.start..s.start + s.len].iter().any(|&m| m) {
                return Err(Error::domain(format!(
                    "segment at row {} has every key masked",
                    s.start
                )));
            }
            for h in 0..heads {
                let col = h * dh;
                for r in 0..s.len {
                    let qr = &qd[(s.start + r) * d + col..(s.start + r) * d + col + dh];
                    scores.clear();
                    let mut mx = f64::NEG_INFINITY;
                    for c in 0..s.len {
                        if key_mask[s.start + c] {
                            let kc = &kd[(s.start + c) * d + col..(s.start + c) * d + col + dh];
                            let sc = qr.iter().zip(kc).map(|(a, b)| a * b).sum::<f64>() * inv;
                            mx = mx.max(sc);
                            scores.push(sc);
                        } else {
                            scores.push(f64::NEG_INFINITY);
                        }
                    }
                    let mut z = 0.0;
                    for sc in scores.iter_mut() {
                        *sc = if sc.is_finite() { (*sc - mx).exp() } else { 0.0 };
                        z += *sc;
                    }
                    let prow = &mut probs[base + (h * s.len + r) * s.len..][..s.len];
                    let orow = &mut out[(s.start + r) * d + col..(s.start + r) * d + col + dh];
                    for c in 0..s.len {
                        let p = scores[c] / z;
                        prow[c] = p;
                        if p != 0.0 {
                            let vc = &vd[(s.start + c) * d + col..(s.start + c) * d + col + dh];
                            for (o, vv) in orow.iter_mut().zip(vc) {
                                *o += p * vv;
                            }
                        }
                    }
                }
            }
            base += heads * s.len * s.len;
        }
        self.push(
            vec![rows, d],
            out,
            Op::SegmentAttention {
                q,
                k,
                v,
                segs,
                heads,
                probs,
                offsets,
            },
        )
    }

    /// Attention probabilities recorded by a `segment_attention` node, as
    /// `[segment][head][query row][key]` blocks.
    pub fn attention_probs(&self, v: Var) -> Option<Vec<Vec<Vec<Vec<f64>>>>> {
        let node = &self.nodes[v.0];
        let Op::SegmentAttention {
            segs,
            heads,
            probs,
            offsets,
            ..
        } = &node.op
        else {
            return None;
        };
        Some(
            segs.iter()
                .zip(offsets)
                .map(|(s, &base)| {
                    (0..*heads)
                        .map(|h| {
                            (0..s.len)
                                .map(|r| probs[base + (h * s.len + r) * s.len..][..s.len].to_vec())
                                .collect()
                        })
                        .collect()
                })
                .collect(),
        )
    }

    /// Mean of the masked-in rows of each segment, one output row per segment.
    pub fn segment_mean(&mut self, x: Var, segs: Vec<Segment>, row_mask: Vec<bool>) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "segment_mean")?;
        if row_mask.len() != rows {
            return Err(Error::shape("segment_mean: mask length"));
        }
        if segs.is_empty() {
            return Err(Error::shape("segment_mean with no segments"));
        }
        let d = self.data(x);
        let mut out = vec![0.0; segs.len() * cols];
        for (si, s) in segs.iter().enumerate() {
            if s.start + s.len > rows {
                return Err(Error::shape("segment runs past the last row"));
            }
            let live: Vec<usize> = (s.start..s.start + s.len).filter(|&r| row_mask[r]).collect();
            if live.is_empty() {
                return Err(Error::domain(format!("segment {si} has no unmasked rows")));
            }
            let inv = 1.0 / live.len() as f64;
            for r in live {
                for c in 0..cols {
                    out[si * cols + c] += d[r * cols + c] * inv;
                }
            }
        }
        let n = segs.len();
        self.push(vec![n, cols], out, Op::SegmentMean { x, segs, row_mask })
    }

    /// Softmax of a 1-D tensor within each `[offsets[s], offsets[s+1])`.
    pub fn segment_softmax(&mut self, x: Var, offsets: Vec<usize>) -> Result<Var> {
        let n = self.value(x).numel();
        check_offsets(&offsets, n)?;
        let d = self.data(x);
        let mut out = vec![0.0; n];
        for (s, w) in offsets.windows(2).enumerate() {
            let (lo, hi) = (w[0], w[1]);
            if lo == hi {
                return Err(Error::domain(format!("segment {s} is empty")));
            }
            let mx = d[lo..hi].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = d[lo..hi].iter().map(|v| (v - mx).exp()).sum();
            for i in lo..hi {
                out[i] = (d[i] - mx).exp() / z;
            }
        }
        self.push(vec![n], out, Op::SegmentSoftmax { x, offsets })
    }

    /// `out[s] = Σ_{e in segment s} alpha[e] · x[src[e]]`.
    pub fn edge_aggregate(
        &mut self,
        alpha: Var,
        x: Var,
        src: Vec<usize>,
        offsets: Vec<usize>,
    ) -> Result<Var> {
        let (rows, cols) = self.matrix_dims(x, "edge_aggregate")?;
        let e = self.value(alpha).numel();
        if src.len() != e {
            return Err(Error::shape("edge_aggregate: one source per weight"));
        }
        check_offsets(&offsets, e)?;
        if let Some(bad) = src.iter().find(|&&j| j >= rows) {
            return Err(Error::shape(format!("edge source {bad} >= {rows}")));
        }
        let segs = offsets.len() - 1;
        if segs == 0 {
            return Err(Error::shape("edge_aggregate with no segments"));
        }
        let (a, d) = (self.data(alpha), self.data(x));
        let mut out = vec![0.0; segs * cols];
        for s in 0..segs {
            let orow = &mut out[s * cols..(s + 1) * cols];
            for ei in offsets[s]..offsets[s + 1] {
                let w = a[ei];
                let xr = &d[src[ei] * cols..(src[ei] + 1) * cols];
                for (o, v) in orow.iter_mut().zip(xr) {
                    *o += w * v;
                }
            }
        }
        self.push(
            vec![segs, cols],
            out,
            Op::EdgeAggregate {
                alpha,
                x,
                src,
                offsets,
            },
        )
    }

    /// Runs the reverse sweep from a scalar `loss`, adding every
    /// parameter's gradient into its slot in `store`. Parameters the loss
    /// does not reach end with a zero gradient. A tape can be swept once.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        if self.consumed {
            return Err(Error::contract(
                "backward already ran on this tape; record a fresh forward pass",
            ));
        }
        if self.nodes.is_empty() {
            return Err(Error::contract("backward on an empty tape"));
        }
        if self.value(loss).numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let grads = self.sweep(loss);
        for (_, t) in store.iter_mut() {
            if t.grad.is_none() {
                t.grad = Some(vec![0.0; t.numel()]);
            }
        }
        for (name, v) in &self.params {
            if let Some(g) = &grads[v.0] {
                let slot = store.get_mut(name)?.grad.as_mut().expect("initialized above");
                for (s, gv) in slot.iter_mut().zip(g) {
                    *s += gv;
                }
            }
        }
        Ok(())
    }

    fn sweep(&self, loss: Var) -> Vec<Option<Vec<f64>>> {
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            // interior gradients are dropped once propagated; leaves keep theirs
            let Some(g) = grads[i].take() else { continue };
            self.apply_rule(i, &g, &mut grads);
        }
        grads
    }

    fn apply_rule(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        let mut acc = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            let n = self.nodes[v.0].value.numel();
            let slot = grads[v.0].get_or_insert_with(|| vec![0.0; n]);
            f(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul {
                a,
                b,
                m,
                k,
                n,
                trans_b,
            } => {
                let (m, k, n) = (*m, *k, *n);
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |s| {
                    // dA = dC · Bᵀ  (or dC · B when B was used transposed)
                    gemm(m, n, k, g, false, bd, !*trans_b, s, 1.0);
                });
                acc(*b, &mut |s| {
                    if *trans_b {
                        // dB (n×k) = dCᵀ · A
                        gemm(n, m, k, g, true, ad, false, s, 1.0);
                    } else {
                        // dB (k×n) = Aᵀ · dC
                        gemm(k, m, n, ad, true, g, false, s, 1.0);
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::Sub(a, b) => {
                acc(*a, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s -= g));
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                acc(*a, &mut |s| {
                    for ((s, g), bv) in s.iter_mut().zip(g).zip(bd) {
                        *s += g * bv;
                    }
                });
                acc(*b, &mut |s| {
                    for ((s, g), av) in s.iter_mut().zip(g).zip(ad) {
                        *s += g * av;
                    }
                });
            }
            Op::Scale(x, c) => {
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g * c));
            }
            Op::AddRowVec { x, b } => {
                let cols = self.value(*b).numel();
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
                acc(*b, &mut |s| {
                    for row in g.chunks(cols) {
                        s.iter_mut().zip(row).for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::ScaleRows { x, c } => {
                let rows = self.value(*c).numel();
                let cols = g.len() / rows;
                let (xd, cd) = (self.data(*x), self.data(*c));
                acc(*x, &mut |s| {
                    for r in 0..rows {
                        for j in 0..cols {
                            s[r * cols + j] += g[r * cols + j] * cd[r];
                        }
                    }
                });
                acc(*c, &mut |s| {
                    for r in 0..rows {
                        s[r] += (0..cols).map(|j| g[r * cols + j] * xd[r * cols + j]).sum::<f64>();
                    }
                });
            }
            Op::Concat {
                inputs,
                outer,
                inner,
                dims,
            } => {
                let total: usize = dims.iter().sum();
                let mut before = 0;
                for (&v, &d) in inputs.iter().zip(dims) {
                    let off = before;
                    acc(v, &mut |s| {
                        for o in 0..*outer {
                            let src = &g[(o * total + off) * inner..(o * total + off + d) * inner];
                            let dst = &mut s[o * d * inner..(o + 1) * d * inner];
                            dst.iter_mut().zip(src).for_each(|(s, g)| *s += g);
                        }
                    });
                    before += d;
                }
            }
            Op::SumAxis {
                x,
                outer,
                dim,
                inner,
                mean,
            } => {
                let f = if *mean { 1.0 / *dim as f64 } else { 1.0 };
                acc(*x, &mut |s| {
                    for o in 0..*outer {
                        for j in 0..*dim {
                            for t in 0..*inner {
                                s[(o * dim + j) * inner + t] += g[o * inner + t] * f;
                            }
                        }
                    }
                });
            }
            Op::Sum(x) => {
                acc(*x, &mut |s| s.iter_mut().for_each(|s| *s += g[0]));
            }
            Op::L2Norm(x) => {
                let xd = self.data(*x);
                let nrm = y[0];
                if nrm > 0.0 {
                    acc(*x, &mut |s| {
                        for (s, xv) in s.iter_mut().zip(xd) {
                            *s += g[0] * xv / nrm;
                        }
                    });
                }
            }
            Op::Exp(x) => {
                acc(*x, &mut |s| {
                    for ((s, g), yv) in s.iter_mut().zip(g).zip(y) {
                        *s += g * yv;
                    }
                });
            }
            Op::Log(x) => {
                let xd = self.data(*x);
                acc(*x, &mut |s| {
                    for ((s, g), xv) in s.iter_mut().zip(g).zip(xd) {
                        *s += g / xv;
                    }
                });
            }
            Op::LeakyRelu(x, slope) => {
                let xd = self.data(*x);
                acc(*x, &mut |s| {
                    for ((s, g), xv) in s.iter_mut().zip(g).zip(xd) {
                        *s += if *xv >= 0.0 { *g } else { g * slope };
                    }
                });
            }
            Op::Elu(x) => {
                let xd = self.data(*x);
                acc(*x, &mut |s| {
                    for (((s, g), xv), yv) in s.iter_mut().zip(g).zip(xd).zip(y) {
                        *s += if *xv > 0.0 { *g } else { g * (yv + 1.0) };
                    }
                });
            }
            Op::Gelu(x) => {
                let xd = self.data(*x);
                acc(*x, &mut |s| {
                    for ((s, g), xv) in s.iter_mut().zip(g).zip(xd) {
                        *s += g * gelu(*xv).1;
                    }
                });
            }
            Op::Softmax {
                x,
                outer,
                dim,
                inner,
                log,
            } => {
                let (outer, dim, inner) = (*outer, *dim, *inner);
                acc(*x, &mut |s| {
                    for o in 0..outer {
                        for t in 0..inner {
                            let at = |j: usize| (o * dim + j) * inner + t;
                            if *log {
                                let gs: f64 = (0..dim).map(|j| g[at(j)]).sum();
                                for j in 0..dim {
                                    s[at(j)] += g[at(j)] - y[at(j)].exp() * gs;
                                }
                            } else {
                                let dot: f64 = (0..dim).map(|j| g[at(j)] * y[at(j)]).sum();
                                for j in 0..dim {
                                    s[at(j)] += y[at(j)] * (g[at(j)] - dot);
                                }
                            }
                        }
                    }
                });
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let cols = self.value(*gamma).numel();
                let rows = rstd.len();
                let gd = self.data(*gamma);
                acc(*gamma, &mut |s| {
                    for r in 0..rows {
                        for c in 0..cols {
                            s[c] += g[r * cols + c] * xhat[r * cols + c];
                        }
                    }
                });
                acc(*beta, &mut |s| {
                    for r in 0..rows {
                        for c in 0..cols {
                            s[c] += g[r * cols + c];
                        }
                    }
                });
                acc(*x, &mut |s| {
                    let n = cols as f64;
                    for r in 0..rows {
                        let gh: Vec<f64> = (0..cols).map(|c| g[r * cols + c] * gd[c]).collect();
                        let sum_gh: f64 = gh.iter().sum();
                        let sum_ghx: f64 = (0..cols).map(|c| gh[c] * xhat[r * cols + c]).sum();
                        for c in 0..cols {
                            s[r * cols + c] +=
                                rstd[r] / n * (n * gh[c] - sum_gh - xhat[r * cols + c] * sum_ghx);
                        }
                    }
                });
            }
            Op::GatherRows { table, idx } => {
                let cols = self.value(*table).cols();
                acc(*table, &mut |s| {
                    for (r, &i) in idx.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        s[i * cols..(i + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(s, g)| *s += g);
                    }
                });
            }
            Op::GatherFlat { x, idx } => {
                acc(*x, &mut |s| {
                    for (gv, &i) in g.iter().zip(idx) {
                        s[i] += gv;
                    }
                });
            }
            Op::PickPerRow { x, idx } => {
                let cols = self.value(*x).cols();
                acc(*x, &mut |s| {
                    for (r, &c) in idx.iter().enumerate() {
                        s[r * cols + c] += g[r];
                    }
                });
            }
            Op::Transpose { x, rows, cols } => {
                acc(*x, &mut |s| {
                    for r in 0..*rows {
                        for c in 0..*cols {
                            s[r * cols + c] += g[c * rows + r];
                        }
                    }
                });
            }
            Op::Reshape(x) => {
                acc(*x, &mut |s| s.iter_mut().zip(g).for_each(|(s, g)| *s += g));
            }
            Op::NormalizeRows { x, norms } => {
                let cols = g.len() / norms.len();
                acc(*x, &mut |s| {
                    for (r, &nrm) in norms.iter().enumerate() {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..cols {
                            s[r * cols + c] += (gr[c] - yr[c] * dot) / nrm;
                        }
                    }
                });
            }
            Op::SegmentAttention {
                q,
                k,
                v,
                segs,
                heads,
                probs,
                offsets,
            } => {
                let d = self.value(*q).cols();
                let dh = d / heads;
                let inv = 1.0 / (dh as f64).sqrt();
                let (qd, kd, vd) = (self.data(*q), self.data(*k), self.data(*v));
                let rows = self.value(*q).rows();
                let mut dq = vec![0.0; rows * d];
                let mut dk = vec![0.0; rows * d];
                let mut dv = vec![0.0; rows * d];
                let mut dp = Vec::new();
                for (s, &base) in segs.iter().zip(offsets) {
                    for h in 0..*heads {
                        let col = h * dh;
                        for r in 0..s.len {
                            let prow = &probs[base + (h * s.len + r) * s.len..][..s.len];
                            let gr = &g[(s.start + r) * d + col..][..dh];
                            dp.clear();
                            for c in 0..s.len {
                                let vc = &vd[(s.start + c) * d + col..][..dh];
                                dp.push(gr.iter().zip(vc).map(|(a, b)| a * b).sum::<f64>());
                                if prow[c] != 0.0 {
                                    let dvc = &mut dv[(s.start + c) * d + col..][..dh];
                                    for (o, gv) in dvc.iter_mut().zip(gr) {
                                        *o += prow[c] * gv;
                                    }
                                }
                            }
                            let dot: f64 = prow.iter().zip(&dp).map(|(a, b)| a * b).sum();
                            let qr = &qd[(s.start + r) * d + col..][..dh];
                            for c in 0..s.len {
                                let ds = prow[c] * (dp[c] - dot) * inv;
                                if ds == 0.0 {
                                    continue;
                                }
                                let kc = &kd[(s.start + c) * d + col..][..dh];
                                let dqr = &mut dq[(s.start + r) * d + col..][..dh];
                                for (o, kv) in dqr.iter_mut().zip(kc) {
                                    *o += ds * kv;
                                }
                                let dkc = &mut dk[(s.start + c) * d + col..][..dh];
                                for (o, qv) in dkc.iter_mut().zip(qr) {
                                    *o += ds * qv;
                                }
                            }
                        }
                    }
                }
                for (var, local) in [(*q, dq), (*k, dk), (*v, dv)] {
                    acc(var, &mut |s| s.iter_mut().zip(&local).for_each(|(s, g)| *s += g));
                }
            }
            Op::SegmentMean { x, segs, row_mask } => {
                let cols = self.value(*x).cols();
                acc(*x, &mut |s| {
                    for (si, seg) in segs.iter().enumerate() {
                        let live: Vec<usize> =
                            (seg.start..seg.start + seg.len).filter(|&r| row_mask[r]).collect();
                        let inv = 1.0 / live.len() as f64;
                        for r in live {
                            for c in 0..cols {
                                s[r * cols + c] += g[si * cols + c] * inv;
                            }
                        }
                    }
                });
            }
            Op::SegmentSoftmax { x, offsets } => {
                acc(*x, &mut |s| {
                    for w in offsets.windows(2) {
                        let (lo, hi) = (w[0], w[1]);
                        let dot: f64 = (lo..hi).map(|i| g[i] * y[i]).sum();
                        for i in lo..hi {
                            s[i] += y[i] * (g[i] - dot);
                        }
                    }
                });
            }
            Op::EdgeAggregate {
                alpha,
                x,
                src,
                offsets,
            } => {
                let cols = self.value(*x).cols();
                let (ad, xd) = (self.data(*alpha), self.data(*x));
                acc(*alpha, &mut |s| {
                    for (seg, w) in offsets.windows(2).enumerate() {
                        let gr = &g[seg * cols..(seg + 1) * cols];
                        for e in w[0]..w[1] {
                            let xr = &xd[src[e] * cols..(src[e] + 1) * cols];
                            s[e] += gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
                acc(*x, &mut |s| {
                    for (seg, w) in offsets.windows(2).enumerate() {
                        let gr = &g[seg * cols..(seg + 1) * cols];
                        for e in w[0]..w[1] {
                            let dst = &mut s[src[e] * cols..(src[e] + 1) * cols];
                            for (o, gv) in dst.iter_mut().zip(gr) {
                                *o += ad[e] * gv;
                            }
                        }
                    }
                });
            }
        }
    }
}
