//! Kernels shared by the recording tape and the tape-free inference path.

use super::{gemm, Float, View};
use crate::error::{Error, Result};

pub(crate) fn matmul_dims(a: &[usize], b: &[usize]) -> Result<(usize, usize, usize)> {
    if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
        return Err(Error::dim(format!("matmul of {a:?} and {b:?}")));
    }
    Ok((a[0], a[1], b[1]))
}

/// Spatial output extent: `ceil(input / stride)`.
pub fn conv_output_size(input: usize, stride: usize) -> usize {
    input.div_ceil(stride)
}

/// Zero padding `(before, after)` along one axis. The total pad makes the
/// output exactly `ceil(input / stride)`; an odd total puts the extra row or
/// column after. For odd kernels at stride 1 this is symmetric "same"
/// padding, at stride 2 it is the half-padded valid convolution.
pub fn conv_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = conv_output_size(input, stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (total / 2, total - total / 2)
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(c: usize, h: usize, w: usize, k: usize, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::dim("conv2d stride must be at least 1"));
        }
        if k == 0 || k > h || k > w {
            return Err(Error::dim(format!(
                "conv2d kernel {k}x{k} larger than input {h}x{w}"
            )));
        }
        let (pad_top, _) = conv_padding(h, k, stride);
        let (pad_left, _) = conv_padding(w, k, stride);
        Ok(ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad_top,
            pad_left,
            ho: conv_output_size(h, stride),
            wo: conv_output_size(w, stride),
        })
    }

    pub fn col_rows(&self) -> usize {
        self.c * self.k * self.k
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }

    /// Source pixel index for output position `(oy, ox)` and kernel tap `(ky, kx)`.
    #[inline]
    fn src(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad_top as isize;
        let x = (ox * self.stride + kx) as isize - self.pad_left as isize;
        if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
            None
        } else {
            Some((y as usize, x as usize))
        }
    }

    pub fn im2col<T: Float>(&self, x: &[T], cols: &mut [T]) {
        let n = self.col_cols();
        for ci in 0..self.c {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            dst[oy * self.wo + ox] = match self.src(oy, ox, ky, kx) {
                                Some((y, xx)) => plane[y * self.w + xx],
                                None => T::zero(),
                            };
                        }
                    }
                }
            }
        }
    }

    pub fn col2im<T: Float>(&self, cols: &[T], dx: &mut [T]) {
        let n = self.col_cols();
        for ci in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (ci * self.k + ky) * self.k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for oy in 0..self.ho {
                        for ox in 0..self.wo {
                            if let Some((y, xx)) = self.src(oy, ox, ky, kx) {
                                dx[(ci * self.h + y) * self.w + xx] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution of one `[C, H, W]` image into `out` (`[C', H', W']`).
pub(crate) fn conv2d_single<T: Float>(
    g: &ConvGeom,
    x: &[T],
    w: &[T],
    c_out: usize,
    cols: &mut Vec<T>,
    out: &mut [T],
) {
    cols.resize(g.col_rows() * g.col_cols(), T::zero());
    g.im2col(x, cols);
    gemm(
        T::one(),
        w,
        View::rowmajor(c_out, g.col_rows()),
        cols,
        View::rowmajor(g.col_rows(), g.col_cols()),
        T::zero(),
        out,
        View::rowmajor(c_out, g.col_cols()),
    );
}

/// Root-mean-square normalization of each row; returns the per-row inverse RMS.
pub(crate) fn rmsnorm_rows<T: Float>(x: &[T], gain: &[T], eps: f64, out: &mut [T]) -> Vec<T> {
    let d = gain.len();
    let rows = x.len() / d;
    let mut inv = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let ms = row.iter().map(|v| *v * *v).sum::<T>() / T::of(d as f64);
        let ir = T::one() / (ms + T::of(eps)).sqrt();
        for ((o, xv), gv) in out[r * d..(r + 1) * d].iter_mut().zip(row).zip(gain) {
            *o = *xv * ir * *gv;
        }
        inv.push(ir);
    }
    inv
}

/// Rotary position embedding on interleaved pairs within each head, in place.
/// Row `t` is rotated by angle `(offset + t) * base^(-2i/head_dim)` on pair `i`.
/// `inverse` applies the transposed rotation (used by the backward pass).
pub(crate) fn rope_rows<T: Float>(
    x: &mut [T],
    d: usize,
    n_heads: usize,
    base: f64,
    offset: usize,
    inverse: bool,
) {
    let hd = d / n_heads;
    let half = hd / 2;
    let rows = x.len() / d;
    let freqs: Vec<f64> = (0..half)
        .map(|i| base.powf(-2.0 * i as f64 / hd as f64))
        .collect();
    let mut cs = vec![(T::zero(), T::zero()); half];
    for t in 0..rows {
        let pos = (offset + t) as f64;
        for (i, f) in freqs.iter().enumerate() {
            let a = pos * f;
            let (s, c) = a.sin_cos();
            cs[i] = (T::of(c), if inverse { T::of(-s) } else { T::of(s) });
        }
        let row = &mut x[t * d..(t + 1) * d];
        for h in 0..n_heads {
            for (i, &(c, s)) in cs.iter().enumerate() {
                let j = h * hd + 2 * i;
                let (x0, x1) = (row[j], row[j + 1]);
                row[j] = x0 * c - x1 * s;
                row[j + 1] = x0 * s + x1 * c;
            }
        }
    }
}

/// In-place numerically stable softmax of a row.
pub(crate) fn softmax_inplace<T: Float>(row: &mut [T]) {
    let mx = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - mx).exp();
        sum += *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

/// `log softmax(row)[target]`.
pub(crate) fn log_softmax_at<T: Float>(row: &[T], target: usize) -> T {
    let mx = row.iter().fold(T::neg_infinity(), |m, v| m.max(*v));
    let sum: T = row.iter().map(|v| (*v - mx).exp()).sum();
    row[target] - mx - sum.ln()
}

/// Causal multi-head attention over `[T, d]` queries/keys/values.
/// Returns the `[T, d]` output and the `[heads, T, T]` attention probabilities.
pub(crate) fn attention_forward<T: Float>(
    q: &[T],
    k: &[T],
    v: &[T],
    t: usize,
    d: usize,
    n_heads: usize,
) -> (Vec<T>, Vec<T>) {
    let hd = d / n_heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut out = vec![T::zero(); t * d];
    let mut probs = vec![T::zero(); n_heads * t * t];
    for h in 0..n_heads {
        let p = &mut probs[h * t * t..(h + 1) * t * t];
        let qv = View::cols_of(t, d, h * hd, hd);
        gemm(scale, q, qv, k, qv.t(), T::zero(), p, View::rowmajor(t, t));
        for i in 0..t {
            let row = &mut p[i * t..(i + 1) * t];
            softmax_inplace(&mut row[..=i]);
            for x in row[i + 1..].iter_mut() {
                *x = T::zero();
            }
        }
        gemm(T::one(), p, View::rowmajor(t, t), v, qv, T::zero(), &mut out, qv);
    }
    (out, probs)
}

/// Gradients of [`attention_forward`] with respect to `q`, `k`, `v`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_backward<T: Float>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    dout: &[T],
    t: usize,
    d: usize,
    n_heads: usize,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hd = d / n_heads;
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut dq = vec![T::zero(); t * d];
    let mut dk = vec![T::zero(); t * d];
    let mut dv = vec![T::zero(); t * d];
    let mut dp = vec![T::zero(); t * t];
    let sq = View::rowmajor(t, t);
    for h in 0..n_heads {
        let p = &probs[h * t * t..(h + 1) * t * t];
        let hv = View::cols_of(t, d, h * hd, hd);
        // dV = P^T dO ; dP = dO V^T
        gemm(T::one(), p, sq.t(), dout, hv, T::zero(), &mut dv, hv);
        gemm(T::one(), dout, hv, v, hv.t(), T::zero(), &mut dp, sq);
        // dS = P * (dP - rowsum(dP * P)), masked entries have P = 0.
        for i in 0..t {
            let pr = &p[i * t..i * t + i + 1];
            let dr = &mut dp[i * t..(i + 1) * t];
            let dot: T = pr.iter().zip(dr.iter()).map(|(a, b)| *a * *b).sum();
            for (dj, pj) in dr.iter_mut().zip(pr) {
                *dj = *pj * (*dj - dot);
            }
            for x in dr[i + 1..].iter_mut() {
                *x = T::zero();
            }
        }
        gemm(scale, &dp, sq, k, hv, T::zero(), &mut dq, hv);
        gemm(scale, &dp, sq.t(), q, hv, T::zero(), &mut dk, hv);
    }
    (dq, dk, dv)
}

#[inline]
pub(crate) fn sigmoid<T: Float>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub(crate) fn silu<T: Float>(x: T) -> T {
    x * sigmoid(x)
}
