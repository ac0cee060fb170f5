//! Layer primitives with hand-written backward passes.
//!
//! Activations are row-major `time x channels` matrices so that a causal
//! time shift is a plain row offset.

use super::params::{Grads, ParamId, ParamSet};
use super::real::{gemm, Real, View};

#[derive(Clone, Debug, PartialEq)]
pub struct Mat<R> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<R>,
}

impl<R: Real> Mat<R> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![R::zero(); rows * cols],
        }
    }

    pub fn view(&self) -> View {
        View::dense(0, self.rows, self.cols, self.cols)
    }

    /// Rows `start..start+count` as a dense view.
    pub fn rows_view(&self, start: usize, count: usize) -> View {
        View::dense(start * self.cols, count, self.cols, self.cols)
    }

    pub fn row(&self, r: usize) -> &[R] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Mat<R>) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}

/// `a + b` elementwise into a new matrix.
pub fn sum<R: Real>(a: &Mat<R>, b: &Mat<R>) -> Mat<R> {
    debug_assert_eq!(a.data.len(), b.data.len());
    Mat {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| *x + *y).collect(),
    }
}

fn add_bias<R: Real>(y: &mut Mat<R>, bias: &[R]) {
    for row in y.data.chunks_exact_mut(y.cols) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += *b;
        }
    }
}

/// Sum of `f(i)` over `0..n` split across independent accumulators so the
/// additions can pipeline.
#[inline]
fn lane_sum<R: Real>(n: usize, f: impl Fn(usize) -> R) -> R {
    let mut acc = [R::zero(); 8];
    let full = n / 8 * 8;
    let mut i = 0;
    while i < full {
        for (l, a) in acc.iter_mut().enumerate() {
            *a += f(i + l);
        }
        i += 8;
    }
    let mut total = R::zero();
    for j in full..n {
        total += f(j);
    }
    let pairs = [acc[0] + acc[4], acc[1] + acc[5], acc[2] + acc[6], acc[3] + acc[7]];
    total + (pairs[0] + pairs[2]) + (pairs[1] + pairs[3])
}

fn accumulate_col_sums<R: Real>(dy: &Mat<R>, out: &mut [R]) {
    for row in dy.data.chunks_exact(dy.cols) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += *v;
        }
    }
}

/// Dense affine map `x W + b` applied to every row.
#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn forward<R: Real>(&self, p: &ParamSet<R>, x: &Mat<R>) -> Mat<R> {
        debug_assert_eq!(x.cols, self.inputs);
        let mut y = Mat::zeros(x.rows, self.outputs);
        if let Some(b) = self.b {
            for row in y.data.chunks_exact_mut(self.outputs) {
                row.copy_from_slice(p.data(b));
            }
        }
        let beta = if self.b.is_some() { R::one() } else { R::zero() };
        let wv = View::dense(0, self.inputs, self.outputs, self.outputs);
        let yv = y.view();
        gemm(R::one(), &x.data, x.view(), p.data(self.w), wv, beta, &mut y.data, yv);
        y
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward<R: Real>(&self, p: &ParamSet<R>, x: &Mat<R>, dy: &Mat<R>, g: &mut Grads<R>) -> Mat<R> {
        self.backward_params(x, dy, g);
        let wv = View::dense(0, self.inputs, self.outputs, self.outputs);
        let mut dx = Mat::zeros(x.rows, self.inputs);
        let dxv = dx.view();
        gemm(R::one(), &dy.data, dy.view(), p.data(self.w), wv.t(), R::zero(), &mut dx.data, dxv);
        dx
    }

    /// Parameter gradients only, for layers whose input needs no gradient.
    pub fn backward_params<R: Real>(&self, x: &Mat<R>, dy: &Mat<R>, g: &mut Grads<R>) {
        let wv = View::dense(0, self.inputs, self.outputs, self.outputs);
        gemm(R::one(), &x.data, x.view().t(), &dy.data, dy.view(), R::one(), g.data_mut(self.w), wv);
        if let Some(b) = self.b {
            accumulate_col_sums(dy, g.data_mut(b));
        }
    }
}

/// Causal dilated 1-D convolution; output frame `t` sees inputs
/// `t - j * dilation` for `j in 0..kernel`, zero before the first frame.
#[derive(Clone, Debug)]
pub struct CausalConv {
    /// Shape `[kernel, inputs, outputs]`; tap `k` multiplies frame
    /// `t - (kernel - 1 - k) * dilation`.
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
    pub dilation: usize,
    pub inputs: usize,
    pub outputs: usize,
}

impl CausalConv {
    fn tap_shift(&self, k: usize) -> usize {
        (self.kernel - 1 - k) * self.dilation
    }

    fn tap_view(&self, k: usize) -> View {
        View::dense(k * self.inputs * self.outputs, self.inputs, self.outputs, self.outputs)
    }

    pub fn forward<R: Real>(&self, p: &ParamSet<R>, x: &Mat<R>) -> Mat<R> {
        let t = x.rows;
        let mut y = Mat::zeros(t, self.outputs);
        add_bias(&mut y, p.data(self.b));
        for k in 0..self.kernel {
            let s = self.tap_shift(k);
            if s >= t {
                continue;
            }
            let yv = y.rows_view(s, t - s);
            gemm(R::one(), &x.data, x.rows_view(0, t - s), p.data(self.w), self.tap_view(k), R::one(), &mut y.data, yv);
        }
        y
    }

    pub fn backward<R: Real>(&self, p: &ParamSet<R>, x: &Mat<R>, dy: &Mat<R>, g: &mut Grads<R>) -> Mat<R> {
        self.backward_params(x, dy, g);
        let t = x.rows;
        let mut dx = Mat::zeros(t, self.inputs);
        for k in 0..self.kernel {
            let s = self.tap_shift(k);
            if s >= t {
                continue;
            }
            let dxv = dx.rows_view(0, t - s);
            gemm(R::one(), &dy.data, dy.rows_view(s, t - s), p.data(self.w), self.tap_view(k).t(), R::one(), &mut dx.data, dxv);
        }
        dx
    }

    pub fn backward_params<R: Real>(&self, x: &Mat<R>, dy: &Mat<R>, g: &mut Grads<R>) {
        let t = x.rows;
        accumulate_col_sums(dy, g.data_mut(self.b));
        for k in 0..self.kernel {
            let s = self.tap_shift(k);
            if s >= t {
                continue;
            }
            gemm(
                R::one(),
                &x.data,
                x.rows_view(0, t - s).t(),
                &dy.data,
                dy.rows_view(s, t - s),
                R::one(),
                g.data_mut(self.w),
                self.tap_view(k),
            );
        }
    }
}

/// Per-row normalization over the channel axis with learned gain and bias.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub width: usize,
}

pub struct LayerNormCache<R> {
    xhat: Mat<R>,
    rstd: Vec<R>,
}

const LN_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn forward<R: Real>(&self, p: &ParamSet<R>, x: &Mat<R>) -> (Mat<R>, LayerNormCache<R>) {
        let n = R::c(self.width as f64);
        let eps = R::c(LN_EPS);
        let gain = p.data(self.gain);
        let bias = p.data(self.bias);
        let mut xhat = Mat::zeros(x.rows, x.cols);
        let mut y = Mat::zeros(x.rows, x.cols);
        let mut rstd = Vec::with_capacity(x.rows);
        let rows = x
            .data
            .chunks_exact(x.cols)
            .zip(xhat.data.chunks_exact_mut(x.cols))
            .zip(y.data.chunks_exact_mut(x.cols));
        for ((row, hrow), yrow) in rows {
            let mean = lane_sum(row.len(), |i| row[i]) / n;
            let var = lane_sum(row.len(), |i| (row[i] - mean) * (row[i] - mean));
            let rs = R::one() / (var / n + eps).sqrt();
            rstd.push(rs);
            for ((((h, out), &v), &g), &b) in hrow.iter_mut().zip(yrow.iter_mut()).zip(row).zip(gain).zip(bias) {
                *h = (v - mean) * rs;
                *out = *h * g + b;
            }
        }
        (y, LayerNormCache { xhat, rstd })
    }

    pub fn backward<R: Real>(&self, p: &ParamSet<R>, cache: &LayerNormCache<R>, dy: &Mat<R>, g: &mut Grads<R>) -> Mat<R> {
        let n = R::c(self.width as f64);
        let cols = dy.cols;
        {
            let dg = g.data_mut(self.gain);
            for (drow, hrow) in dy.data.chunks_exact(cols).zip(cache.xhat.data.chunks_exact(cols)) {
                for ((acc, &d), &h) in dg.iter_mut().zip(drow).zip(hrow) {
                    *acc += d * h;
                }
            }
        }
        accumulate_col_sums(dy, g.data_mut(self.bias));
        let gain = p.data(self.gain);
        let mut dx = Mat::zeros(dy.rows, cols);
        let rows = dy
            .data
            .chunks_exact(cols)
            .zip(cache.xhat.data.chunks_exact(cols))
            .zip(dx.data.chunks_exact_mut(cols))
            .zip(&cache.rstd);
        for (((drow, hrow), dxrow), &rs) in rows {
            let mean_d = lane_sum(cols, |i| drow[i] * gain[i]) / n;
            let mean_dx = lane_sum(cols, |i| drow[i] * gain[i] * hrow[i]) / n;
            for (((out, &d), &gn), &h) in dxrow.iter_mut().zip(drow).zip(gain).zip(hrow) {
                *out = rs * (d * gn - mean_d - h * mean_dx);
            }
        }
        dx
    }
}

pub fn relu<R: Real>(x: &mut Mat<R>) {
    for v in &mut x.data {
        *v = v.max(R::zero());
    }
}

/// Masks `dy` in place by the post-activation output of a ReLU.
pub fn relu_backward<R: Real>(activated: &Mat<R>, dy: &mut Mat<R>) {
    for (d, a) in dy.data.iter_mut().zip(&activated.data) {
        *d = if *a > R::zero() { *d } else { R::zero() };
    }
}

/// Non-overlapping temporal max-pool; trailing frames that do not fill a
/// window are dropped.
pub fn max_pool<R: Real>(x: &Mat<R>, stride: usize) -> (Mat<R>, Vec<u32>) {
    let out_rows = x.rows / stride;
    let mut y = Mat::zeros(out_rows, x.cols);
    let mut argmax = vec![0u32; out_rows * x.cols];
    if stride == 2 {
        let cols = x.cols;
        let outs = y.data.chunks_exact_mut(cols).zip(argmax.chunks_exact_mut(cols));
        for (r, (yrow, arow)) in outs.enumerate() {
            let base = 2 * r * cols;
            let (even, odd) = x.data[base..base + 2 * cols].split_at(cols);
            for (c, (((out, idx), &a), &b)) in yrow.iter_mut().zip(arow.iter_mut()).zip(even).zip(odd).enumerate() {
                if b > a {
                    *out = b;
                    *idx = (base + cols + c) as u32;
                } else {
                    *out = a;
                    *idx = (base + c) as u32;
                }
            }
        }
        return (y, argmax);
    }
    for r in 0..out_rows {
        for c in 0..x.cols {
            let mut best = (r * stride) * x.cols + c;
            for j in 1..stride {
                let idx = (r * stride + j) * x.cols + c;
                if x.data[idx] > x.data[best] {
                    best = idx;
                }
            }
            y.data[r * x.cols + c] = x.data[best];
            argmax[r * x.cols + c] = best as u32;
        }
    }
    (y, argmax)
}

pub fn max_pool_backward<R: Real>(in_rows: usize, cols: usize, argmax: &[u32], dy: &Mat<R>) -> Mat<R> {
    let mut dx = Mat::zeros(in_rows, cols);
    for (d, &idx) in dy.data.iter().zip(argmax) {
        dx.data[idx as usize] += *d;
    }
    dx
}

pub fn mean_rows<R: Real>(x: &Mat<R>) -> Vec<R> {
    let mut out = vec![R::zero(); x.cols];
    accumulate_col_sums(x, &mut out);
    let n = R::c(x.rows as f64);
    for v in &mut out {
        *v /= n;
    }
    out
}

pub fn mean_rows_backward<R: Real>(rows: usize, d: &[R]) -> Mat<R> {
    let scale = R::one() / R::c(rows as f64);
    let mut dx = Mat::zeros(rows, d.len());
    for row in dx.data.chunks_exact_mut(d.len()) {
        for (o, v) in row.iter_mut().zip(d) {
            *o = *v * scale;
        }
    }
    dx
}

/// Sinusoidal encoding of window-relative positions.
pub fn positional_encoding<R: Real>(rows: usize, width: usize) -> Mat<R> {
    let mut pe = Mat::zeros(rows, width);
    for pos in 0..rows {
        for i in 0..width {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10_000f64.powf(2.0 * pair / width as f64);
            let v = if i % 2 == 0 { angle.sin() } else { angle.cos() };
            pe.data[pos * width + i] = R::c(v);
        }
    }
    pe
}

/// Multi-head scaled dot-product self-attention over all window positions.
#[derive(Clone, Debug)]
pub struct SelfAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub width: usize,
}

pub struct AttentionCache<R> {
    q: Mat<R>,
    k: Mat<R>,
    v: Mat<R>,
    /// Softmax weights per head, each `rows x rows`.
    probs: Vec<Mat<R>>,
    merged: Mat<R>,
}

impl SelfAttention {
    fn head_view(&self, rows: usize, h: usize) -> View {
        let dh = self.width / self.heads;
        View::dense(h * dh, rows, dh, self.width)
    }

    fn scale<R: Real>(&self) -> R {
        R::one() / R::c(((self.width / self.heads) as f64).sqrt())
    }

    pub fn forward<R: Real>(&self, p: &ParamSet<R>, x: &Mat<R>) -> (Mat<R>, AttentionCache<R>) {
        let t = x.rows;
        let q = self.q.forward(p, x);
        let k = self.k.forward(p, x);
        let v = self.v.forward(p, x);
        let scale = self.scale::<R>();
        let mut merged = Mat::zeros(t, self.width);
        let mut probs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let hv = self.head_view(t, h);
            let mut s = Mat::zeros(t, t);
            let sv = s.view();
            gemm(scale, &q.data, hv, &k.data, hv.t(), R::zero(), &mut s.data, sv);
            for row in s.data.chunks_exact_mut(t) {
                let max = row.iter().copied().fold(R::neg_infinity(), R::max);
                let mut sum = R::zero();
                for e in row.iter_mut() {
                    *e = (*e - max).exp();
                    sum += *e;
                }
                for e in row.iter_mut() {
                    *e /= sum;
                }
            }
            gemm(R::one(), &s.data, s.view(), &v.data, hv, R::zero(), &mut merged.data, hv);
            probs.push(s);
        }
        let out = self.o.forward(p, &merged);
        (out, AttentionCache { q, k, v, probs, merged })
    }

    pub fn backward<R: Real>(&self, p: &ParamSet<R>, x: &Mat<R>, cache: &AttentionCache<R>, dy: &Mat<R>, g: &mut Grads<R>) -> Mat<R> {
        let t = x.rows;
        let scale = self.scale::<R>();
        let dmerged = self.o.backward(p, &cache.merged, dy, g);
        let mut dq = Mat::zeros(t, self.width);
        let mut dk = Mat::zeros(t, self.width);
        let mut dv = Mat::zeros(t, self.width);
        for h in 0..self.heads {
            let hv = self.head_view(t, h);
            let probs = &cache.probs[h];
            // dV_h = P^T dO_h
            gemm(R::one(), &probs.data, probs.view().t(), &dmerged.data, hv, R::zero(), &mut dv.data, hv);
            // dP = dO_h V_h^T
            let mut ds = Mat::zeros(t, t);
            let dsv = ds.view();
            gemm(R::one(), &dmerged.data, hv, &cache.v.data, hv.t(), R::zero(), &mut ds.data, dsv);
            for r in 0..t {
                let prow = probs.row(r);
                let drow = &mut ds.data[r * t..(r + 1) * t];
                let dot = lane_sum(prow.len(), |i| prow[i] * drow[i]);
                for (d, pv) in drow.iter_mut().zip(prow) {
                    *d = *pv * (*d - dot);
                }
            }
            gemm(scale, &ds.data, ds.view(), &cache.k.data, hv, R::zero(), &mut dq.data, hv);
            gemm(scale, &ds.data, ds.view().t(), &cache.q.data, hv, R::zero(), &mut dk.data, hv);
        }
        let mut dx = self.q.backward(p, x, &dq, g);
        dx.add_assign(&self.k.backward(p, x, &dk, g));
        dx.add_assign(&self.v.backward(p, x, &dv, g));
        dx
    }
}
