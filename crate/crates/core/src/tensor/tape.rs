//! Eager reverse-mode tape.
//!
//! Every operation evaluates immediately and appends a node. Nodes only ever
//! reference earlier nodes, so iterating the node list backwards is a valid
//! reverse topological order.

use super::ops::{self, Activation, ConvGeom, NormAxis, NormStats};
use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowVector(Var, Var),
    ScaleRows(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Act(Var, Activation),
    SoftmaxRows(Var),
    Norm {
        x: Var,
        gamma: Var,
        beta: Var,
        axis: NormAxis,
        stats: NormStats<T>,
    },
    Conv {
        x: Var,
        k: Var,
        geom: ConvGeom,
    },
    ConvTranspose {
        x: Var,
        k: Var,
        geom: ConvGeom,
    },
    MaxPool {
        x: Var,
        argmax: Vec<usize>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    PadRows(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Log(Var),
    Sqrt(Var),
    Abs(Var),
    Clamp {
        x: Var,
        lo: f64,
        hi: f64,
    },
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
}

/// Record of executed operations. Gradients accumulate on leaves that were
/// created with `requires_grad`.
pub struct Tape<T: Scalar = f32> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn dims2<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(op, format!("expected a matrix, got shape {s:?}"))),
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

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if backward has reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Copies a value into a new constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        self.same_shape(a, b, op)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "add", |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b), &[a, b]))
    }

    /// `x[i, j] + b[j]` for a matrix `x` and a vector `b`.
    pub fn add_row_vector(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "add_row_vector")?;
        if self.value(b).len() != c {
            return Err(Error::dim(
                "add_row_vector",
                format!("bias of length {} for {c} columns", self.value(b).len()),
            ));
        }
        let bias = self.value(b).data();
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .flat_map(|row| row.iter().zip(bias).map(|(&u, &v)| u + v))
            .collect();
        let v = Tensor::new(vec![r, c], data)?;
        Ok(self.push(v, Op::AddRowVector(x, b), &[x, b]))
    }

    /// `x[i, j] * s[i]` for a matrix `x` and a vector `s` with one entry per row.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "scale_rows")?;
        if self.value(s).len() != r {
            return Err(Error::dim(
                "scale_rows",
                format!("{} row scales for {r} rows", self.value(s).len()),
            ));
        }
        let scales = self.value(s).data();
        let data = self
            .value(x)
            .data()
            .chunks(c)
            .zip(scales)
            .flat_map(|(row, &k)| row.iter().map(move |&u| u * k))
            .collect();
        let v = Tensor::new(vec![r, c], data)?;
        Ok(self.push(v, Op::ScaleRows(x, s), &[x, s]))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let kt = T::of(k);
        let v = self.value(x).map(|u| u * kt);
        self.push(v, Op::Scale(x, k), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, k: f64) -> Var {
        let kt = T::of(k);
        let v = self.value(x).map(|u| u + kt);
        self.push(v, Op::AddScalar(x), &[x])
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -1.0)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = dims2(self.value(a), "matmul")?;
        let (k2, n) = dims2(self.value(b), "matmul")?;
        if k != k2 {
            return Err(Error::dim("matmul", format!("[{m}, {k}] x [{k2}, {n}]")));
        }
        let data = ops::matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        let v = Tensor::new(vec![m, n], data)?;
        Ok(self.push(v, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "transpose")?;
        let src = self.value(x);
        let v = Tensor::from_fn(c, r, |i, j| src.at(j, i));
        Ok(self.push(v, Op::Transpose(x), &[x]))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Var {
        let v = self.value(x).map(|u| ops::activate(kind, u));
        self.push(v, Op::Act(x, kind), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.activation(x, Activation::Tanh)
    }

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "softmax_rows")?;
        let data = ops::softmax_rows(self.value(x).data(), r, c);
        let v = Tensor::new(vec![r, c], data)?;
        Ok(self.push(v, Op::SoftmaxRows(x), &[x]))
    }

    /// Standardizes `x` along `axis` with `1/sqrt(var + eps)`, then applies
    /// the per-column affine `gamma`, `beta`.
    pub fn norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64, axis: NormAxis) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "norm_layer")?;
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(Error::dim(
                "norm_layer",
                format!(
                    "affine lengths {} / {} for {c} columns",
                    self.value(gamma).len(),
                    self.value(beta).len()
                ),
            ));
        }
        if axis == NormAxis::Temporal && r < 2 {
            return Err(Error::degenerate(
                "norm_layer",
                format!("temporal normalization over {r} frame(s)"),
            ));
        }
        let stats = ops::normalize(self.value(x).data(), r, c, axis, eps);
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let data = stats
            .xhat
            .chunks(c)
            .flat_map(|row| row.iter().zip(g).zip(b).map(|((&h, &gv), &bv)| h * gv + bv))
            .collect();
        let v = Tensor::new(vec![r, c], data)?;
        Ok(self.push(
            v,
            Op::Norm {
                x,
                gamma,
                beta,
                axis,
                stats,
            },
            &[x, gamma, beta],
        ))
    }

    /// Temporal convolution of `x: [len, c_in]` with `kernel: [width, c_in, c_out]`,
    /// zero padding `pad` frames at both ends.
    pub fn conv1d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (len, c_in) = dims2(self.value(x), "conv1d_temporal")?;
        let (width, kc_in, c_out) = match self.value(kernel).shape() {
            [w, a, b] => (*w, *a, *b),
            s => return Err(Error::dim("conv1d_temporal", format!("kernel shape {s:?}"))),
        };
        if kc_in != c_in {
            return Err(Error::dim(
                "conv1d_temporal",
                format!("input [{len}, {c_in}] vs kernel [{width}, {kc_in}, {c_out}]"),
            ));
        }
        let out = ops::conv_out_len(len, width, stride, pad).ok_or_else(|| {
            Error::dim(
                "conv1d_temporal",
                format!("kernel width {width} exceeds padded length {}", len + 2 * pad),
            )
        })?;
        let geom = ConvGeom {
            long: len,
            short: out,
            width,
            stride,
            pad,
            c_long: c_in,
            c_short: c_out,
        };
        let data = geom.forward(self.value(x).data(), self.value(kernel).data());
        let v = Tensor::new(vec![out, c_out], data)?;
        Ok(self.push(v, Op::Conv { x, k: kernel, geom }, &[x, kernel]))
    }

    /// Adjoint of [`Tape::conv1d`]: `x: [len, c_in]` with `kernel: [width, c_out, c_in]`
    /// (the layout of the convolution mapping `c_out -> c_in`). Output length is
    /// `(len - 1) * stride + width - 2 * pad`.
    pub fn conv_transpose1d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (len, c_in) = dims2(self.value(x), "transposed_conv1d_temporal")?;
        let (width, c_out, kc_in) = match self.value(kernel).shape() {
            [w, a, b] => (*w, *a, *b),
            s => {
                return Err(Error::dim(
                    "transposed_conv1d_temporal",
                    format!("kernel shape {s:?}"),
                ))
            }
        };
        if kc_in != c_in {
            return Err(Error::dim(
                "transposed_conv1d_temporal",
                format!("input [{len}, {c_in}] vs kernel [{width}, {c_out}, {kc_in}]"),
            ));
        }
        let out = ops::conv_transpose_out_len(len, width, stride, pad).ok_or_else(|| {
            Error::dim("transposed_conv1d_temporal", "padding removes the whole output")
        })?;
        let geom = ConvGeom {
            long: out,
            short: len,
            width,
            stride,
            pad,
            c_long: c_out,
            c_short: c_in,
        };
        let data = geom.adjoint(self.value(x).data(), self.value(kernel).data());
        let v = Tensor::new(vec![out, c_out], data)?;
        Ok(self.push(v, Op::ConvTranspose { x, k: kernel, geom }, &[x, kernel]))
    }

    /// Window 2, stride 2 max pooling along time.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "max_pool1d")?;
        if r < 2 {
            return Err(Error::dim("max_pool1d", format!("{r} frame(s) is shorter than the window")));
        }
        let (data, argmax) = ops::max_pool2(self.value(x).data(), r, c);
        let v = Tensor::new(vec![r / 2, c], data)?;
        Ok(self.push(v, Op::MaxPool { x, argmax }, &[x]))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = dims2(self.value(parts[0]), "concat_cols")?.0;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = dims2(self.value(p), "concat_cols")?;
            if r != rows {
                return Err(Error::dim("concat_cols", format!("row counts {rows} vs {r}")));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let v = Tensor::new(vec![rows, total], data)?;
        Ok(self.push(v, Op::ConcatCols(parts.to_vec()), parts))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = dims2(self.value(parts[0]), "concat_rows")?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = dims2(self.value(p), "concat_rows")?;
            if c != cols {
                return Err(Error::dim("concat_rows", format!("column counts {cols} vs {c}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let v = Tensor::new(vec![rows, cols], data)?;
        Ok(self.push(v, Op::ConcatRows(parts.to_vec()), parts))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "slice_rows")?;
        if len == 0 || start + len > r {
            return Err(Error::dim("slice_rows", format!("rows {start}..{} of {r}", start + len)));
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let v = Tensor::new(vec![len, c], data)?;
        Ok(self.push(v, Op::SliceRows { x, start }, &[x]))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "slice_cols")?;
        if len == 0 || start + len > c {
            return Err(Error::dim("slice_cols", format!("cols {start}..{} of {c}", start + len)));
        }
        let src = self.value(x);
        let v = Tensor::from_fn(r, len, |i, j| src.at(i, start + j));
        Ok(self.push(v, Op::SliceCols { x, start }, &[x]))
    }

    /// Appends `extra` zero rows.
    pub fn pad_rows(&mut self, x: Var, extra: usize) -> Result<Var> {
        let (r, c) = dims2(self.value(x), "pad_rows")?;
        let mut data = self.value(x).data().to_vec();
        data.resize((r + extra) * c, T::zero());
        let v = Tensor::new(vec![r + extra, c], data)?;
        Ok(self.push(v, Op::PadRows(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let v = self.value(x).clone().reshape(shape)?;
        Ok(self.push(v, Op::Reshape(x), &[x]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = Tensor::scalar(T::of(self.value(x).sum_f64()));
        self.push(v, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let v = Tensor::scalar(T::of(t.sum_f64() / t.len() as f64));
        self.push(v, Op::Mean(x), &[x])
    }

    pub fn log(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|u| u.ln());
        self.push(v, Op::Log(x), &[x])
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|u| u.sqrt());
        self.push(v, Op::Sqrt(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|u| u.abs());
        self.push(v, Op::Abs(x), &[x])
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let (l, h) = (T::of(lo), T::of(hi));
        let v = self.value(x).map(|u| u.max(l).min(h));
        self.push(v, Op::Clamp { x, lo, hi }, &[x])
    }

    /// Back-propagates from the scalar `loss`, adding into the gradient of
    /// every `requires_grad` leaf. The tape is left intact, so a second call
    /// adds the same gradients again.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract {
                op: "backward",
                detail: format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            });
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let n = loss.0 + 1;
        let mut adj: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for id in (0..n).rev() {
            let Some(g) = adj[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let node = &mut self.nodes[id];
                match &mut node.grad {
                    Some(existing) => {
                        for (e, v) in existing.data_mut().iter_mut().zip(&g) {
                            *e = T::of(e.f64() + v);
                        }
                    }
                    None => {
                        let data = g.iter().map(|&v| T::of(v)).collect();
                        node.grad = Some(Tensor::new(node.value.shape().to_vec(), data)?);
                    }
                }
                continue;
            }
            self.propagate(id, &g, &mut adj);
        }
        Ok(())
    }

    /// Clears accumulated gradients on all leaves.
    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn propagate(&self, id: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[id];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut send = |v: Var, contrib: Vec<f64>| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(a, c)| *a += c),
                slot @ None => *slot = Some(contrib),
            }
        };
        let f = |t: &Tensor<T>| t.to_f64_vec();
        let to_t = |v: &[f64]| v.iter().map(|&x| T::of(x)).collect::<Vec<T>>();

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.to_vec());
            }
            Op::Sub(a, b) => {
                send(*a, g.to_vec());
                send(*b, g.iter().map(|v| -v).collect());
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a).data(), val(*b).data());
                if wants(*a) {
                    send(*a, g.iter().zip(vb).map(|(g, y)| g * y.f64()).collect());
                }
                if wants(*b) {
                    send(*b, g.iter().zip(va).map(|(g, x)| g * x.f64()).collect());
                }
            }
            Op::AddRowVector(x, b) => {
                let c = val(*b).len();
                send(*x, g.to_vec());
                if wants(*b) {
                    let mut db = vec![0.0; c];
                    for row in g.chunks(c) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                    send(*b, db);
                }
            }
            Op::ScaleRows(x, s) => {
                let c = val(*x).cols();
                let scales = val(*s).data();
                if wants(*x) {
                    let dx = g
                        .chunks(c)
                        .zip(scales)
                        .flat_map(|(row, &k)| row.iter().map(move |v| v * k.f64()))
                        .collect();
                    send(*x, dx);
                }
                if wants(*s) {
                    let ds = g
                        .chunks(c)
                        .zip(val(*x).data().chunks(c))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(a, b)| a * b.f64()).sum())
                        .collect();
                    send(*s, ds);
                }
            }
            Op::Scale(x, k) => send(*x, g.iter().map(|v| v * k).collect()),
            Op::AddScalar(x) | Op::Reshape(x) => send(*x, g.to_vec()),
            Op::MatMul(a, b) => {
                let (m, k) = (val(*a).rows(), val(*a).cols());
                let n = val(*b).cols();
                let gt = to_t(g);
                if wants(*a) {
                    let da = ops::matmul_nt(&gt, val(*b).data(), m, n, k);
                    send(*a, da.iter().map(|v| v.f64()).collect());
                }
                if wants(*b) {
                    let db = ops::matmul_tn(val(*a).data(), &gt, m, k, n);
                    send(*b, db.iter().map(|v| v.f64()).collect());
                }
            }
            Op::Transpose(x) => {
                let (r, c) = (val(*x).rows(), val(*x).cols());
                // g is c x r
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        dx[i * c + j] = g[j * r + i];
                    }
                }
                send(*x, dx);
            }
            Op::Act(x, kind) => {
                let dx = g
                    .iter()
                    .zip(val(*x).data())
                    .zip(node.value.data())
                    .map(|((g, &xi), &yi)| g * ops::activate_grad(*kind, xi, yi).f64())
                    .collect();
                send(*x, dx);
            }
            Op::SoftmaxRows(x) => {
                let c = node.value.cols();
                let y = f(&node.value);
                let mut dx = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(c).zip(g.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
                }
                send(*x, dx);
            }
            Op::Norm {
                x,
                gamma,
                beta,
                axis,
                stats,
            } => {
                let (r, c) = (node.value.rows(), node.value.cols());
                let gam = val(*gamma).data();
                if wants(*x) {
                    let dxhat: Vec<f64> = g
                        .chunks(c)
                        .flat_map(|row| row.iter().zip(gam).map(|(a, b)| a * b.f64()))
                        .collect();
                    let dx = ops::normalize_backward(&dxhat, stats, r, c, *axis);
                    send(*x, dx.iter().map(|v| v.f64()).collect());
                }
                if wants(*gamma) {
                    let mut dg = vec![0.0; c];
                    for (gr, hr) in g.chunks(c).zip(stats.xhat.chunks(c)) {
                        dg.iter_mut()
                            .zip(gr.iter().zip(hr))
                            .for_each(|(d, (a, h))| *d += a * h.f64());
                    }
                    send(*gamma, dg);
                }
                if wants(*beta) {
                    let mut db = vec![0.0; c];
                    for gr in g.chunks(c) {
                        db.iter_mut().zip(gr).for_each(|(d, a)| *d += a);
                    }
                    send(*beta, db);
                }
            }
            Op::Conv { x, k, geom } => {
                let gt = to_t(g);
                if wants(*x) {
                    let dx = geom.adjoint(&gt, val(*k).data());
                    send(*x, dx.iter().map(|v| v.f64()).collect());
                }
                if wants(*k) {
                    let dk = geom.kernel_grad(val(*x).data(), &gt);
                    send(*k, dk.iter().map(|v| v.f64()).collect());
                }
            }
            Op::ConvTranspose { x, k, geom } => {
                let gt = to_t(g);
                if wants(*x) {
                    let dx = geom.forward(&gt, val(*k).data());
                    send(*x, dx.iter().map(|v| v.f64()).collect());
                }
                if wants(*k) {
                    let dk = geom.kernel_grad(&gt, val(*x).data());
                    send(*k, dk.iter().map(|v| v.f64()).collect());
                }
            }
            Op::MaxPool { x, argmax } => {
                let c = node.value.cols();
                let mut dx = vec![0.0; val(*x).len()];
                for (idx, (&src, gv)) in argmax.iter().zip(g).enumerate() {
                    dx[src * c + idx % c] += gv;
                }
                send(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if wants(p) {
                        let dp = g
                            .chunks(total)
                            .flat_map(|row| row[offset..offset + w].iter().copied())
                            .collect();
                        send(p, dp);
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = val(p).len();
                    if wants(p) {
                        send(p, g[offset..offset + n].to_vec());
                    }
                    offset += n;
                }
            }
            Op::SliceRows { x, start } => {
                let c = node.value.cols();
                let mut dx = vec![0.0; val(*x).len()];
                dx[start * c..start * c + g.len()].copy_from_slice(g);
                send(*x, dx);
            }
            Op::SliceCols { x, start } => {
                let (r, c) = (val(*x).rows(), val(*x).cols());
                let w = node.value.cols();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    dx[i * c + start..i * c + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                send(*x, dx);
            }
            Op::PadRows(x) => {
                let n = val(*x).len();
                send(*x, g[..n].to_vec());
            }
            Op::Sum(x) => send(*x, vec![g[0]; val(*x).len()]),
            Op::Mean(x) => {
                let n = val(*x).len();
                send(*x, vec![g[0] / n as f64; n]);
            }
            Op::Log(x) => {
                let dx = g.iter().zip(val(*x).data()).map(|(g, v)| g / v.f64()).collect();
                send(*x, dx);
            }
            Op::Sqrt(x) => {
                let dx = g
                    .iter()
                    .zip(node.value.data())
                    .map(|(g, y)| {
                        let y = y.f64();
                        if y > 0.0 {
                            g * 0.5 / y
                        } else {
                            0.0
                        }
                    })
                    .collect();
                send(*x, dx);
            }
            Op::Abs(x) => {
                let dx = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(g, v)| {
                        let v = v.f64();
                        if v > 0.0 {
                            *g
                        } else if v < 0.0 {
                            -g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                send(*x, dx);
            }
            Op::Clamp { x, lo, hi } => {
                let dx = g
                    .iter()
                    .zip(val(*x).data())
                    .map(|(g, v)| {
                        let v = v.f64();
                        if v >= *lo && v <= *hi {
                            *g
                        } else {
                            0.0
                        }
                    })
                    .collect();
                send(*x, dx);
            }
        }
    }
}
