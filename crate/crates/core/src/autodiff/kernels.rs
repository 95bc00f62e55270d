//! Forward and backward loops for the differentiable primitives.
//!
//! Everything here works on flat row-major slices; shape checks happen in
//! [`super::Graph`] before these are called.

use crate::tensor::{Element, Shape};

/// Output indices `o` for which `o * stride + k - pad` lands inside `0..in_len`.
#[inline]
fn valid_outputs(k: usize, pad: usize, stride: usize, in_len: usize, out_len: usize) -> (usize, usize) {
    // ix = o*s + k - p >= 0  <=>  o >= ceil((p - k) / s)
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    // ix <= in_len - 1  <=>  o <= (in_len - 1 + p - k) / s
    let hi = if in_len + pad > k {
        ((in_len - 1 + pad - k) / stride + 1).min(out_len)
    } else {
        0
    };
    (lo, hi.max(lo))
}

pub(crate) fn conv2d_out_dims(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
) -> Option<(usize, usize)> {
    if h + 2 * pad < kh || w + 2 * pad < kw {
        return None;
    }
    Some(((h + 2 * pad - kh) / stride + 1, (w + 2 * pad - kw) / stride + 1))
}

pub(crate) struct ConvGeometry {
    pub input: Shape,
    pub weight: Shape,
    pub output: Shape,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    /// Calls `f(n, co, ci, ky, kx, oy, iy, ox_range, ix_of_first)` for every
    /// valid tap row. Shared by forward and both backward passes.
    #[inline]
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize, usize, (usize, usize), usize)) {
        let [n_b, ci_n, h, w] = self.input.0;
        let [co_n, _, kh, kw] = self.weight.0;
        let [_, _, oh, ow] = self.output.0;
        let (s, p) = (self.stride, self.pad);
        for n in 0..n_b {
            for co in 0..co_n {
                for ci in 0..ci_n {
                    for ky in 0..kh {
                        let (oy_lo, oy_hi) = valid_outputs(ky, p, s, h, oh);
                        for kx in 0..kw {
                            let (ox_lo, ox_hi) = valid_outputs(kx, p, s, w, ow);
                            if ox_lo >= ox_hi {
                                continue;
                            }
                            let ix0 = ox_lo * s + kx - p;
                            for oy in oy_lo..oy_hi {
                                let iy = oy * s + ky - p;
                                f(n, co, ci, ky, kx, oy, iy, (ox_lo, ox_hi), ix0);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Element>(g: &ConvGeometry, x: &[T], wt: &[T], bias: &[T]) -> Vec<T> {
    let [_, ci_n, h, w] = g.input.0;
    let [co_n, _, kh, kw] = g.weight.0;
    let [_, _, oh, ow] = g.output.0;
    let s = g.stride;
    let mut out = vec![T::zero(); g.output.numel()];
    for (plane, chunk) in out.chunks_mut(oh * ow).enumerate() {
        chunk.fill(bias[plane % co_n]);
    }
    g.for_each_row(|n, co, ci, ky, kx, oy, iy, (lo, hi), ix0| {
        let wv = wt[((co * ci_n + ci) * kh + ky) * kw + kx];
        let in_row = &x[((n * ci_n + ci) * h + iy) * w..][..w];
        let out_row = &mut out[((n * co_n + co) * oh + oy) * ow..][..ow];
        if s == 1 {
            let src = &in_row[ix0..ix0 + (hi - lo)];
            for (o, &v) in out_row[lo..hi].iter_mut().zip(src) {
                *o = *o + wv * v;
            }
        } else {
            for (k, o) in out_row[lo..hi].iter_mut().enumerate() {
                *o = *o + wv * in_row[ix0 + k * s];
            }
        }
    });
    out
}

/// Returns `(grad_input, grad_weight, grad_bias)`; each is computed only when asked for.
pub(crate) fn conv2d_backward<T: Element>(
    g: &ConvGeometry,
    x: &[T],
    wt: &[T],
    gy: &[T],
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let [_, ci_n, h, w] = g.input.0;
    let [co_n, _, kh, kw] = g.weight.0;
    let [_, _, oh, ow] = g.output.0;
    let s = g.stride;

    let gb = need_bias.then(|| {
        let mut gb = vec![T::zero(); co_n];
        for (plane, chunk) in gy.chunks(oh * ow).enumerate() {
            let total: f64 = chunk.iter().map(|v| v.as_f64()).sum();
            gb[plane % co_n] = gb[plane % co_n] + T::of(total);
        }
        gb
    });

    let mut gx = need_input.then(|| vec![T::zero(); g.input.numel()]);
    let mut gw = need_weight.then(|| vec![T::zero(); g.weight.numel()]);
    if gx.is_none() && gw.is_none() {
        return (None, None, gb);
    }

    g.for_each_row(|n, co, ci, ky, kx, oy, iy, (lo, hi), ix0| {
        let widx = ((co * ci_n + ci) * kh + ky) * kw + kx;
        let gy_row = &gy[((n * co_n + co) * oh + oy) * ow..][lo..hi];
        let in_off = ((n * ci_n + ci) * h + iy) * w;
        if let Some(gx) = gx.as_mut() {
            let wv = wt[widx];
            let row = &mut gx[in_off..in_off + w];
            for (k, &d) in gy_row.iter().enumerate() {
                let ix = ix0 + k * s;
                row[ix] = row[ix] + wv * d;
            }
        }
        if let Some(gw) = gw.as_mut() {
            let row = &x[in_off..in_off + w];
            let mut acc = T::zero();
            for (k, &d) in gy_row.iter().enumerate() {
                acc = acc + row[ix0 + k * s] * d;
            }
            gw[widx] = gw[widx] + acc;
        }
    });
    (gx, gw, gb)
}

pub(crate) fn avgpool2_forward<T: Element>(input: Shape, x: &[T]) -> Vec<T> {
    let [n, c, h, w] = input.0;
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.chunks(h * w) {
        for oy in 0..oh {
            let r0 = &plane[2 * oy * w..][..w];
            let r1 = &plane[(2 * oy + 1) * w..][..w];
            for ox in 0..ow {
                out.push((r0[2 * ox] + r0[2 * ox + 1] + r1[2 * ox] + r1[2 * ox + 1]) * quarter);
            }
        }
    }
    out
}

pub(crate) fn avgpool2_backward<T: Element>(input: Shape, gy: &[T]) -> Vec<T> {
    let [_, _, h, w] = input.0;
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::of(0.25);
    let mut gx = vec![T::zero(); input.numel()];
    for (plane, gplane) in gx.chunks_mut(h * w).zip(gy.chunks(oh * ow)) {
        for y in 0..h {
            for x in 0..w {
                plane[y * w + x] = gplane[(y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    gx
}

/// Two-tap bilinear weights for output index `o` of a ×2 upsample along an
/// axis of length `len`, with half-pixel aligned centres and edge clamping.
///
/// Source coordinate is `(o + 0.5) / 2 - 0.5`, so even outputs blend
/// `0.25 * in[i-1] + 0.75 * in[i]` and odd outputs `0.75 * in[i] + 0.25 * in[i+1]`.
#[inline]
pub(crate) fn upsample_taps(o: usize, len: usize) -> [(usize, f64); 2] {
    let i = o / 2;
    if o % 2 == 0 {
        [(i.saturating_sub(1), 0.25), (i, 0.75)]
    } else {
        [(i, 0.75), ((i + 1).min(len - 1), 0.25)]
    }
}

pub(crate) fn upsample2_forward<T: Element>(input: Shape, x: &[T]) -> Vec<T> {
    let [_, _, h, w] = input.0;
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = Vec::with_capacity(input.numel() * 4);
    for plane in x.chunks(h * w) {
        for oy in 0..oh {
            let ty = upsample_taps(oy, h);
            for ox in 0..ow {
                let tx = upsample_taps(ox, w);
                let mut acc = T::zero();
                for &(iy, wy) in &ty {
                    for &(ix, wx) in &tx {
                        acc = acc + T::of(wy * wx) * plane[iy * w + ix];
                    }
                }
                out.push(acc);
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Element>(input: Shape, gy: &[T]) -> Vec<T> {
    let [_, _, h, w] = input.0;
    let (oh, ow) = (2 * h, 2 * w);
    let mut gx = vec![T::zero(); input.numel()];
    for (plane, gplane) in gx.chunks_mut(h * w).zip(gy.chunks(oh * ow)) {
        for oy in 0..oh {
            let ty = upsample_taps(oy, h);
            for ox in 0..ow {
                let tx = upsample_taps(ox, w);
                let d = gplane[oy * ow + ox];
                for &(iy, wy) in &ty {
                    for &(ix, wx) in &tx {
                        plane[iy * w + ix] = plane[iy * w + ix] + T::of(wy * wx) * d;
                    }
                }
            }
        }
    }
    gx
}

/// Batched `(m x k) * (k x p)` over the leading `batch` matrices.
pub(crate) fn matmul<T: Element>(a: &[T], b: &[T], batch: usize, m: usize, k: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * p];
    for bi in 0..batch {
        let a = &a[bi * m * k..][..m * k];
        let b = &b[bi * k * p..][..k * p];
        let o = &mut out[bi * m * p..][..m * p];
        for i in 0..m {
            let orow = &mut o[i * p..][..p];
            for l in 0..k {
                let av = a[i * k + l];
                if av == T::zero() {
                    continue;
                }
                for (ov, &bv) in orow.iter_mut().zip(&b[l * p..][..p]) {
                    *ov = *ov + av * bv;
                }
            }
        }
    }
    out
}

/// Swaps the last two axes of each of `batch` `(rows x cols)` matrices.
pub(crate) fn transpose<T: Element>(x: &[T], batch: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..batch {
        let src = &x[bi * rows * cols..][..rows * cols];
        let dst = &mut out[bi * rows * cols..][..rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}

pub(crate) fn softmax_rows<T: Element>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(cols) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).as_f64().exp()).collect();
        let total: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|&e| T::of(e / total)));
    }
    out
}

pub(crate) fn softmax_rows_backward<T: Element>(y: &[T], gy: &[T], cols: usize) -> Vec<T> {
    let mut gx = Vec::with_capacity(y.len());
    for (yr, gr) in y.chunks(cols).zip(gy.chunks(cols)) {
        let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| (a * b).as_f64()).sum();
        let dot = T::of(dot);
        gx.extend(yr.iter().zip(gr).map(|(&yv, &gv)| yv * (gv - dot)));
    }
    gx
}

/// Logistic of `k * (p - b)` with the exponent clamped to `±clamp`.
#[inline]
pub(crate) fn steep_sigmoid<T: Element>(p: T, b: T, k: T, clamp: T) -> T {
    let z = (k * (p - b)).max(-clamp).min(clamp);
    T::one() / (T::one() + (-z).exp())
}
