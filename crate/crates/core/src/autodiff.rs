//! Define-by-run reverse-mode differentiation over [`Tensor`]s.
//!
//! A [`Tape`] records every primitive in execution order, so node inputs always
//! precede the node itself and the backward sweep is a single reverse pass.
//! A tape is rebuilt for every forward pass.

use std::rc::Rc;

use crate::tensor::{gemm, Layout, Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule for an operation implemented outside this module.
pub trait CustomOp {
    fn name(&self) -> &'static str;

    /// Vector-Jacobian product: one entry per input, `None` meaning no gradient.
    fn backward(&self, grad_out: &Tensor, inputs: &[&Tensor], output: &Tensor) -> Vec<Option<Tensor>>;
}

enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Silu(Var),
    Sqrt(Var),
    ClampMin(Var, f64),
    Abs(Var),
    SoftmaxRows(Var),
    NormalizeRows { x: Var, rstd: Vec<f64> },
    GatherRows(Var, Rc<[usize]>),
    SegmentSum(Var, Rc<[usize]>),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    Reshape(Var),
    RowLinear(Var, Rc<Tensor>),
    Sum(Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    faulty_silu_grad: bool,
}

/// Gradients of a scalar output with respect to every node that needed one.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zeros when the output does not depend on it.
    pub fn wrt(&self, v: Var, tape: &Tape) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(tape.value(v).shape()))
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape whose SiLU backward rule is deliberately wrong; used by the
    /// gradient-check mutation test.
    #[doc(hidden)]
    pub fn with_faulty_silu_grad() -> Self {
        Self {
            nodes: Vec::new(),
            faulty_silu_grad: true,
        }
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

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), "div", |x, y| x / y)?;
        Ok(self.push(value, Op::Div(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let value = self.value(a).map(|x| x + offset);
        self.push(value, Op::AddScalar(a), &[a])
    }

    fn check_row(&self, op: &'static str, x: Var, row: Var) -> Result<(usize, usize)> {
        let (r, c) = self.value(x).dims2();
        if self.value(row).numel() != c {
            return Err(shape_err(op, self.value(x), self.value(row)));
        }
        Ok((r, c))
    }

    /// `x + row` with `row` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.check_row("add_row", x, row)?;
        let r = self.value(row).data();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += r[i % c];
        }
        Ok(self.push(out, Op::AddRow(x, row), &[x, row]))
    }

    /// `x ⊙ row` with `row` broadcast over the rows of `x`.
    pub fn mul_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let (_, c) = self.check_row("mul_row", x, row)?;
        let r = self.value(row).data();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= r[i % c];
        }
        Ok(self.push(out, Op::MulRow(x, row), &[x, row]))
    }

    /// `x ⊙ col` with a `[rows, 1]` column broadcast over the columns of `x`.
    pub fn mul_col(&mut self, x: Var, col: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2();
        if self.value(col).numel() != r {
            return Err(shape_err("mul_col", self.value(x), self.value(col)));
        }
        let cv = self.value(col).data();
        let mut out = self.value(x).clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v *= cv[i / c];
        }
        Ok(self.push(out, Op::MulCol(x, col), &[x, col]))
    }

    pub fn silu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * sigmoid(v));
        self.push(value, Op::Silu(x), &[x])
    }

    /// Square root whose derivative at exactly zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0).sqrt());
        self.push(value, Op::Sqrt(x), &[x])
    }

    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Var {
        let value = self.value(x).map(|v| v.max(floor));
        self.push(value, Op::ClampMin(x, floor), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::abs);
        self.push(value, Op::Abs(x), &[x])
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.mul(x, x).expect("same shape")
    }

    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let value = self.value(x).softmax_rows();
        self.push(value, Op::SoftmaxRows(x), &[x])
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)`.
    pub fn normalize_rows(&mut self, x: Var, eps: f64) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        let mut out = xv.clone();
        let mut rstd = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = &mut out.data_mut()[r * cols..(r + 1) * cols];
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let s = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|v| *v = (*v - mean) * s);
            rstd.push(s);
        }
        self.push(out, Op::NormalizeRows { x, rstd }, &[x])
    }

    /// Layer normalization over the last dimension with affine `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let n = self.normalize_rows(x, eps);
        let g = self.mul_row(n, gamma)?;
        self.add_row(g, beta)
    }

    pub fn gather_rows(&mut self, x: Var, ids: Rc<[usize]>) -> Result<Var> {
        let value = self.value(x).gather_rows(&ids)?;
        Ok(self.push(value, Op::GatherRows(x, ids), &[x]))
    }

    pub fn segment_sum(&mut self, x: Var, ids: Rc<[usize]>, num_segments: usize) -> Result<Var> {
        let value = self.value(x).segment_sum(&ids, num_segments)?;
        Ok(self.push(value, Op::SegmentSum(x, ids), &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).dims2().0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.value(p).dims2();
            if r != rows {
                return Err(shape_err("concat_cols", self.value(parts[0]), self.value(p)));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = vec![0.0; rows * total];
        let mut offset = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let src = self.value(p).data();
            for r in 0..rows {
                out[r * total + offset..r * total + offset + w].copy_from_slice(&src[r * w..(r + 1) * w]);
            }
            offset += w;
        }
        let value = Tensor::new(vec![rows, total], out)?;
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        if start + len > cols {
            return Err(TensorError::Index {
                op: "slice_cols",
                index: start + len,
                size: cols,
            });
        }
        let mut out = Vec::with_capacity(rows * len);
        for r in 0..rows {
            out.extend_from_slice(&xv.data()[r * cols + start..r * cols + start + len]);
        }
        let value = Tensor::new(vec![rows, len], out)?;
        Ok(self.push(value, Op::SliceCols { x, start }, &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x), &[x]))
    }

    /// Applies one constant matrix per row: `y[r] = mats[r] · x[r]`, with
    /// `mats` shaped `[rows, out, in]`.
    pub fn row_linear(&mut self, x: Var, mats: Rc<Tensor>) -> Result<Var> {
        let xv = self.value(x);
        let (rows, cols) = xv.dims2();
        let ms = mats.shape();
        if ms.len() != 3 || ms[0] != rows || ms[2] != cols {
            return Err(shape_err("row_linear", xv, &mats));
        }
        let out_dim = ms[1];
        let mut out = vec![0.0; rows * out_dim];
        for r in 0..rows {
            let xr = &xv.data()[r * cols..(r + 1) * cols];
            let m = &mats.data()[r * out_dim * cols..(r + 1) * out_dim * cols];
            for o in 0..out_dim {
                out[r * out_dim + o] = m[o * cols..(o + 1) * cols].iter().zip(xr).map(|(a, b)| a * b).sum();
            }
        }
        let value = Tensor::new(vec![rows, out_dim], out)?;
        Ok(self.push(value, Op::RowLinear(x, mats), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel().max(1) as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn custom(&mut self, inputs: Vec<Var>, value: Tensor, op: Box<dyn CustomOp>) -> Var {
        let ins = inputs.clone();
        self.push(value, Op::Custom { inputs, op }, &ins)
    }

    /// Reverse sweep from a scalar `output`.
    pub fn grad(&self, output: Var) -> Result<Gradients> {
        let out = self.value(output);
        if !out.is_scalar() {
            return Err(TensorError::Contract(format!(
                "grad requires a scalar output, got shape {:?}",
                out.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::full(out.shape(), 1.0));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.backward_node(node, &g, &mut grads);
            // leaves keep their gradient for the caller
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn backward_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2();
                let n = bv.dims2().1;
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), Layout::Normal, bv.data(), Layout::Transposed, &mut da, 0.0);
                    acc(*a, Tensor::new(av.shape().to_vec(), da).unwrap());
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, av.data(), Layout::Transposed, g.data(), Layout::Normal, &mut db, 0.0);
                    acc(*b, Tensor::new(bv.shape().to_vec(), db).unwrap());
                }
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
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, g.zip_map(bv, "mul", |x, y| x * y).unwrap());
                acc(*b, g.zip_map(av, "mul", |x, y| x * y).unwrap());
            }
            Op::Div(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                acc(*a, g.zip_map(bv, "div", |x, y| x / y).unwrap());
                let mut db = g.clone();
                for ((d, &x), &y) in db.data_mut().iter_mut().zip(av.data()).zip(bv.data()) {
                    *d = -*d * x / (y * y);
                }
                acc(*b, db);
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| x * f)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::AddRow(x, row) => {
                acc(*x, g.clone());
                let rv = self.value(*row);
                let c = rv.numel();
                let mut dr = vec![0.0; c];
                for (i, v) in g.data().iter().enumerate() {
                    dr[i % c] += v;
                }
                acc(*row, Tensor::new(rv.shape().to_vec(), dr).unwrap());
            }
            Op::MulRow(x, row) => {
                let xv = self.value(*x);
                let rv = self.value(*row);
                let c = rv.numel();
                let mut dx = g.clone();
                let mut dr = vec![0.0; c];
                for (i, d) in dx.data_mut().iter_mut().enumerate() {
                    dr[i % c] += *d * xv.data()[i];
                    *d *= rv.data()[i % c];
                }
                acc(*x, dx);
                acc(*row, Tensor::new(rv.shape().to_vec(), dr).unwrap());
            }
            Op::MulCol(x, col) => {
                let xv = self.value(*x);
                let cv = self.value(*col);
                let c = xv.dims2().1;
                let mut dx = g.clone();
                let mut dc = vec![0.0; cv.numel()];
                for (i, d) in dx.data_mut().iter_mut().enumerate() {
                    dc[i / c] += *d * xv.data()[i];
                    *d *= cv.data()[i / c];
                }
                acc(*x, dx);
                acc(*col, Tensor::new(cv.shape().to_vec(), dc).unwrap());
            }
            Op::Silu(x) => {
                let xv = self.value(*x);
                let faulty = self.faulty_silu_grad;
                acc(
                    *x,
                    g.zip_map(xv, "silu", |d, v| {
                        let s = sigmoid(v);
                        if faulty {
                            d * s
                        } else {
                            d * s * (1.0 + v * (1.0 - s))
                        }
                    })
                    .unwrap(),
                );
            }
            Op::Sqrt(x) => {
                let y = &node.value;
                acc(
                    *x,
                    g.zip_map(y, "sqrt", |d, s| if s > 0.0 { d / (2.0 * s) } else { 0.0 }).unwrap(),
                );
            }
            Op::ClampMin(x, floor) => {
                let xv = self.value(*x);
                let floor = *floor;
                acc(*x, g.zip_map(xv, "clamp_min", |d, v| if v > floor { d } else { 0.0 }).unwrap());
            }
            Op::Abs(x) => {
                let xv = self.value(*x);
                acc(
                    *x,
                    g.zip_map(xv, "abs", |d, v| {
                        if v > 0.0 {
                            d
                        } else if v < 0.0 {
                            -d
                        } else {
                            0.0
                        }
                    })
                    .unwrap(),
                );
            }
            Op::SoftmaxRows(x) => {
                let y = &node.value;
                let (rows, cols) = y.dims2();
                let mut dx = g.clone();
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let dr = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                    let dot: f64 = dr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for (d, &p) in dr.iter_mut().zip(yr) {
                        *d = p * (*d - dot);
                    }
                }
                acc(*x, dx);
            }
            Op::NormalizeRows { x, rstd } => {
                let y = &node.value;
                let (rows, cols) = y.dims2();
                let mut dx = g.clone();
                for r in 0..rows {
                    let yr = &y.data()[r * cols..(r + 1) * cols];
                    let dr = &mut dx.data_mut()[r * cols..(r + 1) * cols];
                    let mean_g = dr.iter().sum::<f64>() / cols as f64;
                    let mean_gy = dr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
                    for (d, &yv) in dr.iter_mut().zip(yr) {
                        *d = rstd[r] * (*d - mean_g - yv * mean_gy);
                    }
                }
                acc(*x, dx);
            }
            Op::GatherRows(x, ids) => {
                let rows = self.value(*x).dims2().0;
                let mut dx = g.segment_sum(ids, rows).unwrap();
                dx = dx.reshape(self.value(*x).shape()).unwrap();
                acc(*x, dx);
            }
            Op::SegmentSum(x, ids) => {
                let dx = g.gather_rows(ids).unwrap().reshape(self.value(*x).shape()).unwrap();
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let (rows, total) = g.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    let mut d = Vec::with_capacity(rows * w);
                    for r in 0..rows {
                        d.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                    }
                    acc(p, Tensor::new(self.value(p).shape().to_vec(), d).unwrap());
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let xv = self.value(*x);
                let (rows, cols) = xv.dims2();
                let len = g.dims2().1;
                let mut d = Tensor::zeros(xv.shape());
                for r in 0..rows {
                    d.data_mut()[r * cols + start..r * cols + start + len]
                        .copy_from_slice(&g.data()[r * len..(r + 1) * len]);
                }
                acc(*x, d);
            }
            Op::Reshape(x) => acc(*x, g.reshape(self.value(*x).shape()).unwrap()),
            Op::RowLinear(x, mats) => {
                let xv = self.value(*x);
                let (rows, cols) = xv.dims2();
                let out_dim = mats.shape()[1];
                let mut dx = vec![0.0; rows * cols];
                for r in 0..rows {
                    let m = &mats.data()[r * out_dim * cols..(r + 1) * out_dim * cols];
                    let gr = &g.data()[r * out_dim..(r + 1) * out_dim];
                    for o in 0..out_dim {
                        for c in 0..cols {
                            dx[r * cols + c] += m[o * cols + c] * gr[o];
                        }
                    }
                }
                acc(*x, Tensor::new(xv.shape().to_vec(), dx).unwrap());
            }
            Op::Sum(x) => acc(*x, Tensor::full(self.value(*x).shape(), g.item())),
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|v| self.value(*v)).collect();
                let ds = op.backward(g, &values, &node.value);
                for (v, d) in inputs.iter().zip(ds) {
                    if let Some(d) = d {
                        acc(*v, d);
                    }
                }
            }
        }
    }
}
