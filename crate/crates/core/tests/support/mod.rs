//! Reference implementations shared by the integration tests and the
//! acceptance harness. Nothing here calls the code it checks.
#![allow(dead_code)]

use lvm_core::tensor::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, so relu and similar kinks are never
/// straddled by a finite-difference step.
pub fn rand_away_from_zero(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = r.gen_range(0.1..1.0);
        if r.gen_bool(0.5) { m } else { -m }
    })
}

type Build = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Var>;

/// One differentiable expression and the inputs it is checked at.
pub struct GradCase {
    pub name: String,
    pub inputs: Vec<Tensor<f64>>,
    build: Build,
}

impl GradCase {
    fn new(name: String, inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Tape<f64>, &[Var]) -> Var + 'static) -> Self {
        GradCase {
            name,
            inputs,
            build: Box::new(build),
        }
    }
}

/// Reduces any output to a scalar with fixed random weights so every output
/// element contributes a distinct amount.
fn weighted_sum(t: &mut Tape<f64>, out: Var, seed: u64) -> Var {
    let shape = t.value(out).shape().to_vec();
    let w = randn(&mut rng(seed ^ 0x5eed), &shape);
    let w = t.constant(w);
    let p = t.mul(out, w).unwrap();
    t.sum(p)
}

fn eval(case: &GradCase, inputs: &[Tensor<f64>], seed: u64) -> (f64, Vec<Tensor<f64>>) {
    let mut t = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| t.param(x.clone())).collect();
    let out = (case.build)(&mut t, &vars);
    let loss = if t.value(out).numel() == 1 { out } else { weighted_sum(&mut t, out, seed) };
    let value = t.value(loss).data()[0];
    let grads = t.backward(loss).unwrap();
    let g = vars
        .iter()
        .zip(inputs)
        .map(|(v, x)| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
        .collect();
    (value, g)
}

/// Largest relative error between the tape gradient and central differences,
/// measured per input tensor as `|g - n| / max(|g|, |n|)` in the 2-norm.
pub fn check_case(case: &GradCase, seed: u64) -> f64 {
    let (_, analytic) = eval(case, &case.inputs, seed);
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (i, x) in case.inputs.iter().enumerate() {
        let mut numeric = vec![0.0; x.numel()];
        for (j, n) in numeric.iter_mut().enumerate() {
            let mut plus = case.inputs.clone();
            plus[i].data_mut()[j] += h;
            let mut minus = case.inputs.clone();
            minus[i].data_mut()[j] -= h;
            *n = (eval(case, &plus, seed).0 - eval(case, &minus, seed).0) / (2.0 * h);
        }
        let a = analytic[i].data();
        let diff: f64 = a.iter().zip(&numeric).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt();
        let na: f64 = a.iter().map(|p| p * p).sum::<f64>().sqrt();
        let nn: f64 = numeric.iter().map(|p| p * p).sum::<f64>().sqrt();
        let scale = na.max(nn);
        if scale > 1e-12 {
            worst = worst.max(diff / scale);
        }
    }
    worst
}

/// Two randomized shapes for every differentiable primitive.
pub fn gradient_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut cases = Vec::new();
    for rep in 0..2 {
        let mut d = |lo: usize, hi: usize| r.gen_range(lo..=hi);
        let (m, k, n) = (d(1, 5), d(1, 6), d(1, 5));
        let (rows, cols) = (d(1, 4), d(2, 6));
        let (nb, c, h, w) = (d(1, 2), d(1, 3), d(3, 5), d(3, 5));
        let heads = d(1, 2);
        let (tq, hd) = (d(2, 5), 2 * d(1, 2));
        let vocab = d(3, 7);
        let co = d(1, 3);
        let ksz = [1, 3][rep];
        let stride = [1, 2][(rep + m) % 2];
        let mut r2 = rng(seed.wrapping_add(rep as u64 + 1));
        let mut g = |s: &[usize]| randn(&mut r2, s);
        let tag = |op: &str, s: String| format!("{op}#{rep} {s}");

        cases.push(GradCase::new(tag("matmul", format!("{m}x{k}·{k}x{n}")), vec![g(&[m, k]), g(&[k, n])], |t, v| {
            t.matmul(v[0], v[1]).unwrap()
        }));
        cases.push(GradCase::new(tag("add", format!("{rows}x{cols}")), vec![g(&[rows, cols]), g(&[rows, cols])], |t, v| {
            t.add(v[0], v[1]).unwrap()
        }));
        cases.push(GradCase::new(tag("mul", format!("{rows}x{cols}")), vec![g(&[rows, cols]), g(&[rows, cols])], |t, v| {
            t.mul(v[0], v[1]).unwrap()
        }));
        let s = 0.5 + rep as f64;
        cases.push(GradCase::new(tag("scale", format!("{rows}x{cols}")), vec![g(&[rows, cols])], move |t, v| {
            t.scale(v[0], s)
        }));
        cases.push(GradCase::new(tag("add_row", format!("{rows}x{cols}")), vec![g(&[rows, cols]), g(&[cols])], |t, v| {
            t.add_row(v[0], v[1]).unwrap()
        }));
        cases.push(GradCase::new(
            tag("add_channel", format!("{nb}x{c}x{h}x{w}")),
            vec![g(&[nb, c, h, w]), g(&[c])],
            |t, v| t.add_channel(v[0], v[1]).unwrap(),
        ));
        cases.push(GradCase::new(tag("silu", format!("{rows}x{cols}")), vec![g(&[rows, cols])], |t, v| t.silu(v[0])));
        let mut r3 = rng(seed ^ rep as u64);
        cases.push(GradCase::new(
            tag("relu", format!("{rows}x{cols}")),
            vec![rand_away_from_zero(&mut r3, &[rows, cols])],
            |t, v| t.relu(v[0]),
        ));
        cases.push(GradCase::new(tag("rmsnorm", format!("{rows}x{cols}")), vec![g(&[rows, cols]), g(&[cols])], |t, v| {
            t.rmsnorm(v[0], v[1], 1e-5).unwrap()
        }));
        let ids: Vec<usize> = (0..rows + 2).map(|i| (i * 7 + rep) % vocab).collect();
        cases.push(GradCase::new(tag("embedding", format!("{vocab}x{cols}")), vec![g(&[vocab, cols])], move |t, v| {
            t.embedding(v[0], &ids).unwrap()
        }));
        let dm = heads * hd;
        let offset = 3 * rep;
        cases.push(GradCase::new(tag("rope", format!("{tq}x{dm} h{heads}")), vec![g(&[tq, dm])], move |t, v| {
            t.rope(v[0], heads, 10_000.0, offset).unwrap()
        }));
        cases.push(GradCase::new(
            tag("causal_attention", format!("{tq}x{dm} h{heads}")),
            vec![g(&[tq, dm]), g(&[tq, dm]), g(&[tq, dm])],
            move |t, v| t.causal_attention(v[0], v[1], v[2], heads).unwrap(),
        ));
        let targets: Vec<usize> = (0..rows).map(|i| (i * 3 + 1 + rep) % vocab).collect();
        cases.push(GradCase::new(tag("cross_entropy", format!("{rows}x{vocab}")), vec![g(&[rows, vocab])], move |t, v| {
            t.cross_entropy(v[0], &targets).unwrap()
        }));
        cases.push(GradCase::new(
            tag("conv2d", format!("{nb}x{c}x{h}x{w} k{ksz} s{stride} -> {co}")),
            vec![g(&[nb, c, h, w]), g(&[co, c, ksz, ksz])],
            move |t, v| t.conv2d(v[0], v[1], stride).unwrap(),
        ));
        cases.push(GradCase::new(tag("upsample2x", format!("{nb}x{c}x{h}x{w}")), vec![g(&[nb, c, h, w])], |t, v| {
            t.upsample2x(v[0]).unwrap()
        }));
        cases.push(GradCase::new(tag("mse", format!("{rows}x{cols}")), vec![g(&[rows, cols]), g(&[rows, cols])], |t, v| {
            t.mse(v[0], v[1]).unwrap()
        }));
        cases.push(GradCase::new(tag("sum", format!("{rows}x{cols}")), vec![g(&[rows, cols])], |t, v| t.sum(v[0])));
        cases.push(GradCase::new(tag("reshape", format!("{rows}x{cols}")), vec![g(&[rows, cols])], move |t, v| {
            t.reshape(v[0], &[cols, rows]).unwrap()
        }));
    }
    // a composite block exercising accumulation through shared inputs
    let mut r4 = rng(seed ^ 0xb10c);
    cases.push(GradCase::new(
        "attention_block 4x8 h2".into(),
        vec![randn(&mut r4, &[4, 8]), randn(&mut r4, &[8]), randn(&mut r4, &[8, 8]), randn(&mut r4, &[8, 8])],
        |t, v| {
            let n = t.rmsnorm(v[0], v[1], 1e-5).unwrap();
            let q = t.matmul(n, v[2]).unwrap();
            let k = t.matmul(n, v[3]).unwrap();
            let q = t.rope(q, 2, 10_000.0, 0).unwrap();
            let k = t.rope(k, 2, 10_000.0, 0).unwrap();
            let a = t.causal_attention(q, k, n, 2).unwrap();
            let s = t.silu(a);
            t.add(s, v[0]).unwrap()
        },
    ));
    cases
}

/// Exhaustive nearest codeword, lowest index on ties.
pub fn brute_nearest(latent: &[f32], codebook: &[f32], dim: usize) -> usize {
    let mut best = (f64::INFINITY, 0);
    for (i, c) in codebook.chunks(dim).enumerate() {
        let d: f64 = latent.iter().zip(c).map(|(a, b)| (f64::from(*a) - f64::from(*b)).powi(2)).sum();
        if d < best.0 {
            best = (d, i);
        }
    }
    best.1
}

/// mIoU from an explicit confusion matrix, over classes present in `gt`.
pub fn brute_miou(pred: &[usize], gt: &[usize], n: usize) -> f64 {
    let mut conf = vec![vec![0usize; n]; n];
    for (&p, &g) in pred.iter().zip(gt) {
        conf[g][p] += 1;
    }
    let mut total = 0.0;
    let mut classes = 0;
    for c in 0..n {
        let row: usize = conf[c].iter().sum();
        if row == 0 {
            continue;
        }
        let col: usize = (0..n).map(|g| conf[g][c]).sum();
        let tp = conf[c][c];
        total += tp as f64 / (row + col - tp) as f64;
        classes += 1;
    }
    total / classes as f64
}

pub fn brute_pck(pred: &[(f64, f64)], gt: &[(f64, f64)], w: f64, h: f64, alpha: f64) -> f64 {
    let side = if w > h { w } else { h };
    let mut ok = 0;
    for i in 0..gt.len() {
        let dx = pred[i].0 - gt[i].0;
        let dy = pred[i].1 - gt[i].1;
        if (dx * dx + dy * dy).sqrt() <= alpha * side {
            ok += 1;
        }
    }
    ok as f64 * 100.0 / gt.len() as f64
}

pub fn brute_mse(a: &[u8], b: &[u8]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let d = a[i] as f64 / 255.0 - b[i] as f64 / 255.0;
        s += d * d;
    }
    s / a.len() as f64
}

/// Count of latents where `quantize` disagrees with the exhaustive search.
/// A quarter of the latents sit exactly on a codeword, and the codebook
/// carries duplicated rows, so ties are exercised.
pub fn quantizer_mismatches(n: usize, k: usize, d: usize, seed: u64) -> usize {
    use lvm_core::vq::{quantize, Codebook};
    let mut r = rng(seed);
    let mut vectors: Vec<f32> = (0..k * d).map(|_| r.gen_range(-1.0..1.0)).collect();
    for dup in 0..k / 8 {
        let (src, dst) = (dup, k - 1 - dup);
        let row: Vec<f32> = vectors[src * d..(src + 1) * d].to_vec();
        vectors[dst * d..(dst + 1) * d].copy_from_slice(&row);
    }
    let cb = Codebook::new(k, d, vectors.clone()).unwrap();
    let mut bad = 0;
    for i in 0..n {
        let latent: Vec<f32> = if i % 4 == 0 {
            let c = r.gen_range(0..k);
            vectors[c * d..(c + 1) * d].to_vec()
        } else {
            (0..d).map(|_| r.gen_range(-1.5..1.5)).collect()
        };
        let (idx, cw) = quantize(&latent, &cb);
        let want = brute_nearest(&latent, &vectors, d);
        if idx != want || cw != &vectors[want * d..(want + 1) * d] {
            bad += 1;
        }
    }
    bad
}

/// Largest |library - brute force| for mIoU, PCK@0.1 and MSE over `n`
/// random instances.
pub fn metric_oracle_gaps(n: usize, seed: u64) -> [f64; 3] {
    use lvm_core::eval::{metric_miou, metric_mse, metric_pck, BBox};
    use lvm_core::image::Image;
    let mut r = rng(seed);
    let mut gaps = [0.0f64; 3];
    for _ in 0..n {
        let classes = r.gen_range(2..8);
        let len = r.gen_range(1..200);
        let gt: Vec<usize> = (0..len).map(|_| r.gen_range(0..classes)).collect();
        let pred: Vec<usize> = gt
            .iter()
            .map(|&g| if r.gen_bool(0.6) { g } else { r.gen_range(0..classes) })
            .collect();
        let a = metric_miou(&pred, &gt, classes).unwrap();
        gaps[0] = gaps[0].max((a - brute_miou(&pred, &gt, classes)).abs());

        let kps = r.gen_range(1..20);
        let g: Vec<(f64, f64)> = (0..kps).map(|_| (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0))).collect();
        let p: Vec<(f64, f64)> = g
            .iter()
            .map(|&(x, y)| (x + r.gen_range(-0.1..0.1), y + r.gen_range(-0.1..0.1)))
            .collect();
        let (w, h) = (r.gen_range(0.05..1.0), r.gen_range(0.05..1.0));
        let b = metric_pck(&p, &g, BBox { width: w, height: h }, 0.1).unwrap();
        gaps[1] = gaps[1].max((b - brute_pck(&p, &g, w, h, 0.1)).abs());

        let (iw, ih) = (r.gen_range(1..20), r.gen_range(1..20));
        let mut x = Image::filled(iw, ih, [0, 0, 0]);
        let mut y = Image::filled(iw, ih, [0, 0, 0]);
        for py in 0..ih {
            for px in 0..iw {
                x.set(px, py, [r.gen(), r.gen(), r.gen()]);
                y.set(px, py, [r.gen(), r.gen(), r.gen()]);
            }
        }
        let c = metric_mse(&x, &y).unwrap();
        gaps[2] = gaps[2].max((c - brute_mse(x.raw(), y.raw())).abs());
    }
    gaps
}

/// Metric values on identical prediction and ground truth.
pub fn metric_identities(seed: u64) -> (f64, f64, f64) {
    use lvm_core::eval::{metric_miou, metric_mse, metric_pck, BBox};
    use lvm_core::image::Image;
    let mut r = rng(seed);
    let gt: Vec<usize> = (0..64).map(|_| r.gen_range(0..5)).collect();
    let kp: Vec<(f64, f64)> = (0..8).map(|_| (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0))).collect();
    let img = Image::filled(4, 4, [r.gen(), r.gen(), r.gen()]);
    (
        metric_miou(&gt, &gt, 5).unwrap(),
        metric_pck(&kp, &kp, BBox { width: 0.3, height: 0.2 }, 0.1).unwrap(),
        metric_mse(&img, &img).unwrap(),
    )
}

/// Number of (window, position) probes where perturbing token `j` changed
/// any logit row before `j`. Window lengths vary up to `max_len`.
pub fn causality_violations(model: &lvm_core::model::Model, windows: usize, max_len: usize, seed: u64) -> usize {
    let v = model.config().vocab_size;
    let mut r = rng(seed);
    let mut bad = 0;
    for _ in 0..windows {
        let len = r.gen_range(2..=max_len.min(model.config().context));
        let ids: Vec<u32> = (0..len).map(|_| r.gen_range(0..v as u32)).collect();
        let j = r.gen_range(1..len);
        let mut other = ids.clone();
        other[j] = (ids[j] + r.gen_range(1..v as u32)) % v as u32;
        let a = model.forward(&ids).unwrap();
        let b = model.forward(&other).unwrap();
        let prefix = j * v;
        let same = a.data()[..prefix]
            .iter()
            .zip(&b.data()[..prefix])
            .all(|(x, y)| x.to_bits() == y.to_bits());
        if !same {
            bad += 1;
        }
    }
    bad
}
