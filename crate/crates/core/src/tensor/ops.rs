//! Forward and adjoint kernels on flat row-major buffers.
//!
//! Reductions accumulate in `f64` regardless of the storage type.

use super::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Tanh,
}

/// Axis along which [`super::Tape::norm`] standardizes a `rows x cols` matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormAxis {
    /// Per column over all rows (batch normalization of one sequence).
    Temporal,
    /// Per row over all columns (layer normalization).
    Feature,
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    let x = x.f64();
    let s = if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    };
    // keep the open interval (0, 1) after rounding to T
    let lo = T::min_positive_value();
    let hi = T::one() - T::epsilon() / T::of(2.0);
    T::of(s).max(lo).min(hi)
}

pub(crate) fn activate<T: Scalar>(kind: Activation, x: T) -> T {
    match kind {
        Activation::Relu => {
            if x > T::zero() {
                x
            } else {
                T::zero()
            }
        }
        Activation::Sigmoid => sigmoid(x),
        Activation::Tanh => x.tanh(),
    }
}

/// Derivative expressed through input `x` and output `y`.
pub(crate) fn activate_grad<T: Scalar>(kind: Activation, x: T, y: T) -> T {
    match kind {
        Activation::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Activation::Sigmoid => y * (T::one() - y),
        Activation::Tanh => T::one() - y * y,
    }
}

/// `a (m x k) * b (k x n)`.
pub(crate) fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0.0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let av = av.f64();
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in acc.iter_mut().zip(brow) {
                *o += av * bv.f64();
            }
        }
        out.extend(acc.iter().map(|&v| T::of(v)));
    }
    out
}

/// `a (m x n) * b^T` where `b` is `k x n`; result `m x k`.
pub(crate) fn matmul_nt<T: Scalar>(a: &[T], b: &[T], m: usize, n: usize, k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(m * k);
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x.f64() * y.f64()).sum();
            out.push(T::of(dot));
        }
    }
    out
}

/// `a^T * g` where `a` is `m x k` and `g` is `m x n`; result `k x n`.
pub(crate) fn matmul_tn<T: Scalar>(a: &[T], g: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut acc = vec![0.0f64; k * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let grow = &g[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let av = av.f64();
            if av == 0.0 {
                continue;
            }
            for (o, &gv) in acc[p * n..(p + 1) * n].iter_mut().zip(grow) {
                *o += av * gv.f64();
            }
        }
    }
    acc.into_iter().map(T::of).collect()
}

pub(crate) fn conv_out_len(len: usize, width: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = len + 2 * pad;
    if stride == 0 || width == 0 || width > padded {
        return None;
    }
    Some((padded - width) / stride + 1)
}

pub(crate) fn conv_transpose_out_len(len: usize, width: usize, stride: usize, pad: usize) -> Option<usize> {
    let full = (len - 1) * stride + width;
    if stride == 0 || width == 0 || full <= 2 * pad {
        return None;
    }
    Some(full - 2 * pad)
}

/// Geometry shared by the convolution kernels.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    /// Length of the "long" side (conv input / transposed-conv output).
    pub long: usize,
    /// Length of the "short" side (conv output / transposed-conv input).
    pub short: usize,
    pub width: usize,
    pub stride: usize,
    pub pad: usize,
    /// Channels on the long side.
    pub c_long: usize,
    /// Channels on the short side.
    pub c_short: usize,
}

impl ConvGeom {
    /// Visits every (short index, tap, long index) triple that lies inside the signal.
    #[inline]
    fn taps(&self, mut f: impl FnMut(usize, usize, usize)) {
        for i in 0..self.short {
            for t in 0..self.width {
                let pos = (i * self.stride + t) as isize - self.pad as isize;
                if pos < 0 || pos as usize >= self.long {
                    continue;
                }
                f(i, t, pos as usize);
            }
        }
    }

    /// Conv direction: long `[long, c_long]` to short `[short, c_short]` with
    /// kernel `[width, c_long, c_short]`.
    pub fn forward<T: Scalar>(&self, x: &[T], k: &[T]) -> Vec<T> {
        let mut acc = vec![0.0f64; self.short * self.c_short];
        let (cl, cs) = (self.c_long, self.c_short);
        self.taps(|i, t, pos| {
            let xrow = &x[pos * cl..(pos + 1) * cl];
            let out = &mut acc[i * cs..(i + 1) * cs];
            for (c, &xv) in xrow.iter().enumerate() {
                let xv = xv.f64();
                if xv == 0.0 {
                    continue;
                }
                let krow = &k[(t * cl + c) * cs..(t * cl + c + 1) * cs];
                for (o, &kv) in out.iter_mut().zip(krow) {
                    *o += xv * kv.f64();
                }
            }
        });
        acc.into_iter().map(T::of).collect()
    }

    /// Adjoint direction: short `[short, c_short]` to long `[long, c_long]`.
    pub fn adjoint<T: Scalar>(&self, y: &[T], k: &[T]) -> Vec<T> {
        let mut acc = vec![0.0f64; self.long * self.c_long];
        let (cl, cs) = (self.c_long, self.c_short);
        self.taps(|i, t, pos| {
            let yrow = &y[i * cs..(i + 1) * cs];
            let out = &mut acc[pos * cl..(pos + 1) * cl];
            for (c, o) in out.iter_mut().enumerate() {
                let krow = &k[(t * cl + c) * cs..(t * cl + c + 1) * cs];
                *o += krow
                    .iter()
                    .zip(yrow)
                    .map(|(kv, yv)| kv.f64() * yv.f64())
                    .sum::<f64>();
            }
        });
        acc.into_iter().map(T::of).collect()
    }

    /// Kernel gradient given the long-side signal and the short-side signal.
    pub fn kernel_grad<T: Scalar>(&self, long_sig: &[T], short_sig: &[T]) -> Vec<T> {
        let mut acc = vec![0.0f64; self.width * self.c_long * self.c_short];
        let (cl, cs) = (self.c_long, self.c_short);
        self.taps(|i, t, pos| {
            let lrow = &long_sig[pos * cl..(pos + 1) * cl];
            let srow = &short_sig[i * cs..(i + 1) * cs];
            for (c, &lv) in lrow.iter().enumerate() {
                let lv = lv.f64();
                if lv == 0.0 {
                    continue;
                }
                let out = &mut acc[(t * cl + c) * cs..(t * cl + c + 1) * cs];
                for (o, &sv) in out.iter_mut().zip(srow) {
                    *o += lv * sv.f64();
                }
            }
        });
        acc.into_iter().map(T::of).collect()
    }
}

/// Window-2 stride-2 max pooling over rows. Returns values and the source
/// row of each output element (earliest index on ties).
pub(crate) fn max_pool2<T: Scalar>(x: &[T], rows: usize, cols: usize) -> (Vec<T>, Vec<usize>) {
    let out_rows = rows / 2;
    let mut vals = Vec::with_capacity(out_rows * cols);
    let mut arg = Vec::with_capacity(out_rows * cols);
    for i in 0..out_rows {
        for c in 0..cols {
            let a = x[(2 * i) * cols + c];
            let b = x[(2 * i + 1) * cols + c];
            if b > a {
                vals.push(b);
                arg.push(2 * i + 1);
            } else {
                vals.push(a);
                arg.push(2 * i);
            }
        }
    }
    (vals, arg)
}

pub(crate) fn softmax_rows<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * cols);
    let mut buf = vec![0.0f64; cols];
    for i in 0..rows {
        let row = &x[i * cols..(i + 1) * cols];
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (b, v) in buf.iter_mut().zip(row) {
            *b = (v.f64() - max).exp();
            total += *b;
        }
        out.extend(buf.iter().map(|b| T::of(b / total)));
    }
    out
}

/// Normalization statistics: standardized values and `1/sqrt(var + eps)` per group.
pub(crate) struct NormStats<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn normalize<T: Scalar>(
    x: &[T],
    rows: usize,
    cols: usize,
    axis: NormAxis,
    eps: f64,
) -> NormStats<T> {
    let mut xhat = vec![T::zero(); rows * cols];
    let (groups, n) = match axis {
        NormAxis::Temporal => (cols, rows),
        NormAxis::Feature => (rows, cols),
    };
    let idx = |g: usize, j: usize| match axis {
        NormAxis::Temporal => j * cols + g,
        NormAxis::Feature => g * cols + j,
    };
    let mut inv_std = Vec::with_capacity(groups);
    for g in 0..groups {
        let mean = (0..n).map(|j| x[idx(g, j)].f64()).sum::<f64>() / n as f64;
        let var = (0..n)
            .map(|j| {
                let d = x[idx(g, j)].f64() - mean;
                d * d
            })
            .sum::<f64>()
            / n as f64;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..n {
            xhat[idx(g, j)] = T::of((x[idx(g, j)].f64() - mean) * inv);
        }
        inv_std.push(inv);
    }
    NormStats { xhat, inv_std }
}

/// Gradient of the standardization w.r.t. its input, given `d xhat`.
pub(crate) fn normalize_backward<T: Scalar>(
    dxhat: &[f64],
    stats: &NormStats<T>,
    rows: usize,
    cols: usize,
    axis: NormAxis,
) -> Vec<T> {
    let (groups, n) = match axis {
        NormAxis::Temporal => (cols, rows),
        NormAxis::Feature => (rows, cols),
    };
    let idx = |g: usize, j: usize| match axis {
        NormAxis::Temporal => j * cols + g,
        NormAxis::Feature => g * cols + j,
    };
    let mut dx = vec![T::zero(); rows * cols];
    let nf = n as f64;
    for g in 0..groups {
        let mut sum_d = 0.0;
        let mut sum_dx = 0.0;
        for j in 0..n {
            let k = idx(g, j);
            sum_d += dxhat[k];
            sum_dx += dxhat[k] * stats.xhat[k].f64();
        }
        let inv = stats.inv_std[g];
        for j in 0..n {
            let k = idx(g, j);
            let v = inv / nf * (nf * dxhat[k] - sum_d - stats.xhat[k].f64() * sum_dx);
            dx[k] = T::of(v);
        }
    }
    dx
}
