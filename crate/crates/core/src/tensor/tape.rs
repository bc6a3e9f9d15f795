//! Reverse-mode automatic differentiation over a linear record of operations.

use super::ops::{self, ConvGeom};
use super::{gemm, Float, Tensor, View};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddRow(Var, Var),
    AddChannel(Var, Var),
    Silu(Var),
    Relu(Var),
    RmsNorm { x: Var, gain: Var, inv: Vec<T> },
    Embedding { table: Var, ids: Vec<usize> },
    Rope { x: Var, n_heads: usize, base: f64, offset: usize },
    Attention { q: Var, k: Var, v: Var, n_heads: usize, probs: Vec<T> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<T> },
    Conv2d { x: Var, w: Var, stride: usize },
    Upsample2x(Var),
    Mse(Var, Var),
    Sum(Var),
    Reshape(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

/// Ordered record of executed operations. Values are computed eagerly;
/// [`Tape::backward`] walks the record once in reverse.
pub struct Tape<T: Float = f32> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Float> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn same_shape<T: Float>(op: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{op} of {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn rank<T: Float>(op: &str, t: &Tensor<T>, r: usize) -> Result<()> {
    if t.shape().len() != r {
        return Err(Error::dim(format!(
            "{op} expects rank {r}, got {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("add", x, y)?;
        let mut out = x.clone();
        out.add_assign(y);
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mul", x, y)?;
        let data = x.data().iter().zip(y.data()).map(|(p, q)| *p * *q).collect();
        let out = Tensor::new(x.shape(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let s = T::of(s);
        let x = self.value(a);
        let out = Tensor::from_fn(x.shape(), |i| x.data()[i] * s);
        self.push(out, Op::Scale(a, s), &[a])
    }

    /// Adds a `[n]` bias to every row of a `[.., n]` tensor.
    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        let n = bv.numel();
        if xv.shape().last() != Some(&n) || bv.shape().len() != 1 {
            return Err(Error::dim(format!(
                "row bias {:?} on {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let out = Tensor::from_fn(xv.shape(), |i| xv.data()[i] + bv.data()[i % n]);
        Ok(self.push(out, Op::AddRow(x, bias), &[x, bias]))
    }

    /// Adds a `[C]` bias to every channel plane of a `[N, C, H, W]` tensor.
    pub fn add_channel(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(bias));
        rank("add_channel", xv, 4)?;
        let [_, c, h, w] = [xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]];
        if bv.shape() != [c] {
            return Err(Error::dim(format!(
                "channel bias {:?} on {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let hw = h * w;
        let out = Tensor::from_fn(xv.shape(), |i| xv.data()[i] + bv.data()[(i / hw) % c]);
        Ok(self.push(out, Op::AddChannel(x, bias), &[x, bias]))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::from_fn(x.shape(), |i| ops::silu(x.data()[i]));
        self.push(out, Op::Silu(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let out = Tensor::from_fn(x.shape(), |i| x.data()[i].max(T::zero()));
        self.push(out, Op::Relu(a), &[a])
    }

    /// Row-wise RMS normalization of `[rows, d]` with a learned `[d]` gain.
    pub fn rmsnorm(&mut self, x: Var, gain: Var, eps: f64) -> Result<Var> {
        let (xv, gv) = (self.value(x), self.value(gain));
        rank("rmsnorm", xv, 2)?;
        if gv.shape() != [xv.shape()[1]] {
            return Err(Error::dim(format!(
                "rmsnorm gain {:?} on {:?}",
                gv.shape(),
                xv.shape()
            )));
        }
        let mut out = Tensor::zeros(xv.shape());
        let inv = ops::rmsnorm_rows(xv.data(), gv.data(), eps, out.data_mut());
        Ok(self.push(out, Op::RmsNorm { x, gain, inv }, &[x, gain]))
    }

    /// Gathers rows of a `[V, d]` table.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        rank("embedding", tv, 2)?;
        let (v, d) = (tv.shape()[0], tv.shape()[1]);
        if ids.is_empty() {
            return Err(Error::Length("embedding of an empty id list".into()));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::InvalidToken { id: bad, limit: v });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&tv.data()[i * d..(i + 1) * d]);
        }
        let out = Tensor::new(&[ids.len(), d], data)?;
        Ok(self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            &[table],
        ))
    }

    /// Rotary position embedding of a `[T, d]` tensor split into `n_heads` heads.
    pub fn rope(&mut self, x: Var, n_heads: usize, base: f64, offset: usize) -> Result<Var> {
        let xv = self.value(x);
        rank("rope", xv, 2)?;
        let d = xv.shape()[1];
        if n_heads == 0 || d % n_heads != 0 || (d / n_heads) % 2 != 0 {
            return Err(Error::dim(format!(
                "rope needs an even head dim; d={d}, heads={n_heads}"
            )));
        }
        let mut out = xv.clone();
        ops::rope_rows(out.data_mut(), d, n_heads, base, offset, false);
        Ok(self.push(
            out,
            Op::Rope {
                x,
                n_heads,
                base,
                offset,
            },
            &[x],
        ))
    }

    /// Causal multi-head attention with `1/sqrt(head_dim)` scaling.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, n_heads: usize) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        rank("attention", qv, 2)?;
        same_shape("attention", qv, kv)?;
        same_shape("attention", qv, vv)?;
        let (t, d) = (qv.shape()[0], qv.shape()[1]);
        if n_heads == 0 || d % n_heads != 0 {
            return Err(Error::dim(format!("{n_heads} heads do not divide {d}")));
        }
        let (out, probs) = ops::attention_forward(qv.data(), kv.data(), vv.data(), t, d, n_heads);
        let out = Tensor::new(&[t, d], out)?;
        Ok(self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                n_heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Mean softmax cross-entropy of `[T, V]` logits against `T` targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let lv = self.value(logits);
        rank("cross_entropy", lv, 2)?;
        let (t, v) = (lv.shape()[0], lv.shape()[1]);
        if targets.len() != t {
            return Err(Error::dim(format!(
                "{} targets for logits {:?}",
                targets.len(),
                lv.shape()
            )));
        }
        if let Some(&bad) = targets.iter().find(|&&i| i >= v) {
            return Err(Error::InvalidToken { id: bad, limit: v });
        }
        let mut probs = lv.data().to_vec();
        let mut loss = T::zero();
        for (r, &tg) in targets.iter().enumerate() {
            let row = &mut probs[r * v..(r + 1) * v];
            loss -= ops::log_softmax_at(&lv.data()[r * v..(r + 1) * v], tg);
            ops::softmax_inplace(row);
        }
        let out = Tensor::scalar(loss / T::of(t as f64));
        Ok(self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        ))
    }

    /// 2-D convolution of `[N, C, H, W]` with `[C', C, k, k]`; output extent
    /// `ceil(H / stride)` (see [`super::conv_padding`]).
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        rank("conv2d input", xv, 4)?;
        rank("conv2d kernel", wv, 4)?;
        let (n, c, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
        let (co, ci, kh, kw) = (wv.shape()[0], wv.shape()[1], wv.shape()[2], wv.shape()[3]);
        if ci != c || kh != kw {
            return Err(Error::dim(format!(
                "conv2d kernel {:?} on input {:?}",
                wv.shape(),
                xv.shape()
            )));
        }
        let g = ConvGeom::new(c, h, wd, kh, stride)?;
        let in_sz = c * h * wd;
        let out_sz = co * g.ho * g.wo;
        let mut out = vec![T::zero(); n * out_sz];
        let mut cols = Vec::new();
        for b in 0..n {
            ops::conv2d_single(
                &g,
                &xv.data()[b * in_sz..(b + 1) * in_sz],
                wv.data(),
                co,
                &mut cols,
                &mut out[b * out_sz..(b + 1) * out_sz],
            );
        }
        let out = Tensor::new(&[n, co, g.ho, g.wo], out)?;
        Ok(self.push(out, Op::Conv2d { x, w, stride }, &[x, w]))
    }

    /// Nearest-neighbour 2x upsampling of `[N, C, H, W]`.
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        rank("upsample2x", xv, 4)?;
        let s = xv.shape();
        let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
        let mut out = vec![T::zero(); nc * 4 * h * w];
        for p in 0..nc {
            for y in 0..2 * h {
                for xx in 0..2 * w {
                    out[(p * 2 * h + y) * 2 * w + xx] = xv.data()[(p * h + y / 2) * w + xx / 2];
                }
            }
        }
        let out = Tensor::new(&[s[0], s[1], 2 * h, 2 * w], out)?;
        Ok(self.push(out, Op::Upsample2x(x), &[x]))
    }

    /// Mean squared difference, a scalar.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        same_shape("mse", x, y)?;
        let s: T = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(p, q)| (*p - *q) * (*p - *q))
            .sum();
        let out = Tensor::scalar(s / T::of(x.numel() as f64));
        Ok(self.push(out, Op::Mse(a, b), &[a, b]))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(a), &[a]))
    }

    /// Reverse pass from a scalar `loss`, visiting each recorded node at most once.
    pub fn backward(&self, loss: Var) -> Result<Grads<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::dim(format!(
                "backward needs a scalar loss, got {:?}",
                lv.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Grads { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
                if self.wants(*a) {
                    let mut ga = Tensor::zeros(&[m, k]);
                    gemm(
                        T::one(),
                        gd,
                        View::rowmajor(m, n),
                        bv.data(),
                        View::rowmajor(k, n).t(),
                        T::zero(),
                        ga.data_mut(),
                        View::rowmajor(m, k),
                    );
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let mut gb = Tensor::zeros(&[k, n]);
                    gemm(
                        T::one(),
                        av.data(),
                        View::rowmajor(m, k).t(),
                        gd,
                        View::rowmajor(m, n),
                        T::zero(),
                        gb.data_mut(),
                        View::rowmajor(k, n),
                    );
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.wants(*a) {
                    let ga = Tensor::from_fn(g.shape(), |i| gd[i] * bv.data()[i]);
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = Tensor::from_fn(g.shape(), |i| gd[i] * av.data()[i]);
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => {
                self.accumulate(grads, *a, Tensor::from_fn(g.shape(), |i| gd[i] * *s));
            }
            Op::AddRow(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*b) {
                    let n = self.value(*b).numel();
                    let mut gb = Tensor::zeros(&[n]);
                    for (i, v) in gd.iter().enumerate() {
                        gb.data_mut()[i % n] += *v;
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::AddChannel(x, b) => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*b) {
                    let s = g.shape();
                    let (c, hw) = (s[1], s[2] * s[3]);
                    let mut gb = Tensor::zeros(&[c]);
                    for (p, chunk) in gd.chunks(hw).enumerate() {
                        gb.data_mut()[p % c] += chunk.iter().copied().sum::<T>();
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Silu(a) => {
                let x = self.value(*a).data();
                let ga = Tensor::from_fn(g.shape(), |i| {
                    let s = ops::sigmoid(x[i]);
                    gd[i] * s * (T::one() + x[i] * (T::one() - s))
                });
                self.accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let ga = Tensor::from_fn(g.shape(), |i| {
                    if x[i] > T::zero() {
                        gd[i]
                    } else {
                        T::zero()
                    }
                });
                self.accumulate(grads, *a, ga);
            }
            Op::RmsNorm { x, gain, inv } => {
                let (xv, gv) = (self.value(*x), self.value(*gain));
                let d = gv.numel();
                let dn = T::of(d as f64);
                let mut gx = Tensor::zeros(xv.shape());
                let mut gg = Tensor::zeros(gv.shape());
                for (r, &ir) in inv.iter().enumerate() {
                    let xr = &xv.data()[r * d..(r + 1) * d];
                    let dr = &gd[r * d..(r + 1) * d];
                    let mut dot = T::zero();
                    for j in 0..d {
                        dot += dr[j] * gv.data()[j] * xr[j];
                        gg.data_mut()[j] += dr[j] * xr[j] * ir;
                    }
                    let c = ir * ir * ir * dot / dn;
                    for j in 0..d {
                        gx.data_mut()[r * d + j] = ir * dr[j] * gv.data()[j] - c * xr[j];
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *gain, gg);
            }
            Op::Embedding { table, ids } => {
                let tv = self.value(*table);
                let d = tv.shape()[1];
                let mut gt = Tensor::zeros(tv.shape());
                for (r, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        gt.data_mut()[id * d + j] += gd[r * d + j];
                    }
                }
                self.accumulate(grads, *table, gt);
            }
            Op::Rope {
                x,
                n_heads,
                base,
                offset,
            } => {
                let mut gx = g.clone();
                let d = g.shape()[1];
                ops::rope_rows(gx.data_mut(), d, *n_heads, *base, *offset, true);
                self.accumulate(grads, *x, gx);
            }
            Op::Attention {
                q,
                k,
                v,
                n_heads,
                probs,
            } => {
                let (qv, kv, vv) = (self.value(*q), self.value(*k), self.value(*v));
                let (t, d) = (qv.shape()[0], qv.shape()[1]);
                let (dq, dk, dv) = ops::attention_backward(
                    qv.data(),
                    kv.data(),
                    vv.data(),
                    probs,
                    gd,
                    t,
                    d,
                    *n_heads,
                );
                let shape = [t, d];
                self.accumulate(grads, *q, Tensor { shape: shape.to_vec(), data: dq });
                self.accumulate(grads, *k, Tensor { shape: shape.to_vec(), data: dk });
                self.accumulate(grads, *v, Tensor { shape: shape.to_vec(), data: dv });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let lv = self.value(*logits);
                let (t, v) = (lv.shape()[0], lv.shape()[1]);
                let s = gd[0] / T::of(t as f64);
                let mut gl = Tensor::new(lv.shape(), probs.clone()).expect("same shape");
                for (r, &tg) in targets.iter().enumerate() {
                    gl.data_mut()[r * v + tg] -= T::one();
                }
                for e in gl.data_mut() {
                    *e *= s;
                }
                self.accumulate(grads, *logits, gl);
            }
            Op::Conv2d { x, w, stride } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (n, c, h, wd) = (xv.shape()[0], xv.shape()[1], xv.shape()[2], xv.shape()[3]);
                let (co, k) = (wv.shape()[0], wv.shape()[2]);
                let geom = ConvGeom::new(c, h, wd, k, *stride).expect("validated on forward");
                let (rows, cols_n) = (geom.col_rows(), geom.col_cols());
                let in_sz = c * h * wd;
                let out_sz = co * cols_n;
                let mut cols = vec![T::zero(); rows * cols_n];
                let mut dcols = vec![T::zero(); rows * cols_n];
                let mut gw = Tensor::zeros(wv.shape());
                let mut gx = self.wants(*x).then(|| Tensor::zeros(xv.shape()));
                for b in 0..n {
                    let go = &gd[b * out_sz..(b + 1) * out_sz];
                    if self.wants(*w) {
                        geom.im2col(&xv.data()[b * in_sz..(b + 1) * in_sz], &mut cols);
                        gemm(
                            T::one(),
                            go,
                            View::rowmajor(co, cols_n),
                            &cols,
                            View::rowmajor(rows, cols_n).t(),
                            T::one(),
                            gw.data_mut(),
                            View::rowmajor(co, rows),
                        );
                    }
                    if let Some(gx) = gx.as_mut() {
                        gemm(
                            T::one(),
                            wv.data(),
                            View::rowmajor(co, rows).t(),
                            go,
                            View::rowmajor(co, cols_n),
                            T::zero(),
                            &mut dcols,
                            View::rowmajor(rows, cols_n),
                        );
                        geom.col2im(&dcols, &mut gx.data_mut()[b * in_sz..(b + 1) * in_sz]);
                    }
                }
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                self.accumulate(grads, *w, gw);
            }
            Op::Upsample2x(x) => {
                let xv = self.value(*x);
                let s = xv.shape();
                let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
                let mut gx = Tensor::zeros(s);
                for p in 0..nc {
                    for y in 0..2 * h {
                        for xx in 0..2 * w {
                            gx.data_mut()[(p * h + y / 2) * w + xx / 2] +=
                                gd[(p * 2 * h + y) * 2 * w + xx];
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Mse(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let s = T::of(2.0) * gd[0] / T::of(av.numel() as f64);
                let ga = Tensor::from_fn(av.shape(), |i| (av.data()[i] - bv.data()[i]) * s);
                if self.wants(*b) {
                    let gb = Tensor::from_fn(av.shape(), |i| -ga.data()[i]);
                    self.accumulate(grads, *b, gb);
                }
                self.accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).shape().to_vec();
                self.accumulate(grads, *a, Tensor::full(&shape, gd[0]));
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).shape().to_vec();
                let ga = g.clone().reshape(&shape).expect("same element count");
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grad_of_sum_ax_is_column_sums() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::new(&[2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap());
        let x = tape.param(Tensor::new(&[3, 1], vec![0.5, -1.0, 2.0]).unwrap());
        let y = tape.matmul(a, x).unwrap();
        let loss = tape.sum(y);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[5.0, 7.0, 9.0]);
        assert!(grads.get(a).is_none());
    }

    #[test]
    fn one_by_one_identity_conv() {
        let mut tape = Tape::<f32>::new();
        let x = Tensor::from_fn(&[1, 2, 4, 4], |i| i as f32);
        let xv = tape.constant(x.clone());
        let mut w = Tensor::zeros(&[2, 2, 1, 1]);
        w.data_mut()[0] = 1.0;
        w.data_mut()[3] = 1.0;
        let wv = tape.constant(w);
        let y = tape.conv2d(xv, wv, 1).unwrap();
        assert_eq!(tape.value(y).data(), x.data());
    }

    #[test]
    fn strided_conv_halves_extent() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 32, 32]));
        let w = tape.constant(Tensor::zeros(&[8, 3, 3, 3]));
        let y = tape.conv2d(x, w, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 8, 16, 16]);
    }

    #[test]
    fn oversized_kernel_is_a_dimension_error() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
        let w = tape.constant(Tensor::zeros(&[1, 1, 3, 3]));
        assert!(matches!(tape.conv2d(x, w, 1), Err(Error::Dimension(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut tape = Tape::<f32>::new();
        let x = tape.param(Tensor::zeros(&[2]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn shared_input_accumulates() {
        // d/dx sum(x * x) = 2x
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Tensor::new(&[3], vec![1.0, -2.0, 3.0]).unwrap());
        let y = tape.mul(x, x).unwrap();
        let l = tape.sum(y);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
    }
}
