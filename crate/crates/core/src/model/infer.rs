//! Tape-free inference with a key/value cache. Every kernel is the one the
//! training graph uses, so a cached pass reproduces the tape forward bit for bit.

use rand::Rng as _;

use super::{Model, ATTN_NORM, MLP_NORM, RMS_EPS, W_DOWN, W_GATE, W_UP, WK, WO, WQ, WV};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{gemm, rmsnorm_rows, rope_rows, silu, softmax_inplace, Tensor, View};

/// Per-call decoding state: cached keys and values for every layer.
#[derive(Clone, Debug)]
pub struct DecodeState {
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
    len: usize,
}

impl DecodeState {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    /// 0 selects argmax decoding.
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn greedy() -> Self {
        SamplerConfig {
            temperature: 0.0,
            top_k: None,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.top_k == Some(0) {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        Ok(())
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nll {
    pub mean_nll: f64,
    pub perplexity: f64,
    pub tokens: usize,
}

fn cached_attention(q: &[f32], keys: &[f32], values: &[f32], n: usize, total: usize, d: usize, heads: usize) -> Vec<f32> {
    let hd = d / heads;
    let offset = total - n;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0f32; n * d];
    let mut p = vec![0.0f32; n * total];
    for h in 0..heads {
        let qv = View::cols_of(n, d, h * hd, hd);
        let kv = View::cols_of(total, d, h * hd, hd);
        gemm(scale as f32, q, qv, keys, kv.t(), 0.0, &mut p, View::rowmajor(n, total));
        for i in 0..n {
            let row = &mut p[i * total..(i + 1) * total];
            softmax_inplace(&mut row[..=offset + i]);
            for x in row[offset + i + 1..].iter_mut() {
                *x = 0.0;
            }
        }
        gemm(1.0, &p, View::rowmajor(n, total), values, kv, 0.0, &mut out, qv);
    }
    out
}

impl Model {
    pub fn new_state(&self) -> DecodeState {
        DecodeState {
            keys: vec![Vec::new(); self.cfg.n_layers],
            values: vec![Vec::new(); self.cfg.n_layers],
            len: 0,
        }
    }

    /// Feeds `ids` after whatever `state` already holds; returns their logits `[n, V]`.
    pub fn extend(&self, state: &mut DecodeState, ids: &[u32]) -> Result<Tensor<f32>> {
        self.check_ids(ids)?;
        if ids.is_empty() {
            return Err(Error::Length("no tokens to feed".into()));
        }
        let c = &self.cfg;
        if state.len + ids.len() > c.context {
            return Err(Error::Length(format!(
                "{} cached + {} new tokens exceed the {}-token context",
                state.len,
                ids.len(),
                c.context
            )));
        }
        let (n, d) = (ids.len(), c.hidden_dim);
        let p = |i: usize| self.params.get(i);
        let emb = p(0).data();
        let mut x = Vec::with_capacity(n * d);
        for &i in ids {
            x.extend_from_slice(&emb[i as usize * d..(i as usize + 1) * d]);
        }
        let mut x = Tensor::new(&[n, d], x)?;
        let norm = |x: &Tensor<f32>, gain: &Tensor<f32>| {
            let mut out = Tensor::zeros(x.shape());
            rmsnorm_rows(x.data(), gain.data(), RMS_EPS, out.data_mut());
            out
        };
        for l in 0..c.n_layers {
            let w = |k: usize| p(self.layer_param(l, k));
            let h = norm(&x, w(ATTN_NORM));
            let mut q = h.matmul(w(WQ))?;
            let mut k = h.matmul(w(WK))?;
            let v = h.matmul(w(WV))?;
            rope_rows(q.data_mut(), d, c.n_heads, c.rope_base, state.len, false);
            rope_rows(k.data_mut(), d, c.n_heads, c.rope_base, state.len, false);
            state.keys[l].extend_from_slice(k.data());
            state.values[l].extend_from_slice(v.data());
            let total = state.len + n;
            let a = cached_attention(q.data(), &state.keys[l], &state.values[l], n, total, d, c.n_heads);
            let o = Tensor::new(&[n, d], a)?.matmul(w(WO))?;
            x.add_assign(&o);
            let h = norm(&x, w(MLP_NORM));
            let g = h.matmul(w(W_GATE))?;
            let u = h.matmul(w(W_UP))?;
            let gu = Tensor::from_fn(g.shape(), |i| silu(g.data()[i]) * u.data()[i]);
            let down = gu.matmul(w(W_DOWN))?;
            x.add_assign(&down);
        }
        state.len += n;
        let h = norm(&x, p(self.final_norm_index()));
        h.matmul(p(self.head_index()))
    }

    /// Logits for a whole sequence via the cached path.
    pub fn logits(&self, ids: &[u32]) -> Result<Tensor<f32>> {
        let mut s = self.new_state();
        self.extend(&mut s, ids)
    }

    /// Samples `n` tokens after `prefix` using incremental decoding.
    pub fn generate(&self, prefix: &[u32], n: usize, sampler: &SamplerConfig) -> Result<Vec<u32>> {
        sampler.validate()?;
        if prefix.is_empty() {
            return Err(Error::Length("generation needs a nonempty prefix".into()));
        }
        if prefix.len() + n > self.cfg.context {
            return Err(Error::Length(format!(
                "prefix {} + {n} generated tokens exceed the {}-token context",
                prefix.len(),
                self.cfg.context
            )));
        }
        let mut r = rng::substream(sampler.seed, "sampling");
        let mut state = self.new_state();
        let mut logits = self.extend(&mut state, prefix)?;
        let v = self.cfg.vocab_size;
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let rows = logits.shape()[0];
            let last = &logits.data()[(rows - 1) * v..rows * v];
            let tok = sample_row(last, sampler, &mut r) as u32;
            out.push(tok);
            if i + 1 < n {
                logits = self.extend(&mut state, &[tok])?;
            }
        }
        Ok(out)
    }

    /// Mean negative log-likelihood of `target` given `prefix`, computed in f64
    /// from the logits. The final target token is never fed back, so the
    /// model input is `prefix + target[..len-1]` and must fit the context.
    pub fn sequence_nll(&self, prefix: &[u32], target: &[u32]) -> Result<Nll> {
        if prefix.is_empty() || target.is_empty() {
            return Err(Error::Length("sequence_nll needs a nonempty prefix and target".into()));
        }
        self.check_ids(target)?;
        let input_len = prefix.len() + target.len() - 1;
        if input_len > self.cfg.context {
            return Err(Error::Length(format!(
                "prefix {} + target {} need {input_len} input positions, context is {}",
                prefix.len(),
                target.len(),
                self.cfg.context
            )));
        }
        let mut input = prefix.to_vec();
        input.extend_from_slice(&target[..target.len() - 1]);
        let logits = self.logits(&input)?;
        let v = self.cfg.vocab_size;
        let mut total = 0.0f64;
        for (j, &t) in target.iter().enumerate() {
            let r = prefix.len() - 1 + j;
            total -= log_softmax_row(&logits.data()[r * v..(r + 1) * v], t as usize);
        }
        let mean = total / target.len() as f64;
        Ok(Nll {
            mean_nll: mean,
            perplexity: mean.exp(),
            tokens: target.len(),
        })
    }
}

/// `log softmax(row)[target]` accumulated in f64.
pub fn log_softmax_row(row: &[f32], target: usize) -> f64 {
    let mx = row.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v as f64));
    let lse = row.iter().map(|v| (*v as f64 - mx).exp()).sum::<f64>().ln() + mx;
    row[target] as f64 - lse
}

fn sample_row(row: &[f32], s: &SamplerConfig, r: &mut rng::Rng) -> usize {
    if s.temperature == 0.0 {
        return argmax(row);
    }
    let mut idx: Vec<usize> = (0..row.len()).collect();
    if let Some(k) = s.top_k {
        // stable sort keeps lower ids first among equal logits
        idx.sort_by(|a, b| row[*b].total_cmp(&row[*a]));
        idx.truncate(k.min(row.len()));
        idx.sort_unstable();
    }
    let mx = idx.iter().fold(f64::NEG_INFINITY, |m, &i| m.max(row[i] as f64));
    let w: Vec<f64> = idx
        .iter()
        .map(|&i| ((row[i] as f64 - mx) / s.temperature).exp())
        .collect();
    let total: f64 = w.iter().sum();
    let mut u = r.gen::<f64>() * total;
    for (j, wj) in w.iter().enumerate() {
        if u < *wj {
            return idx[j];
        }
        u -= wj;
    }
    *idx.last().unwrap()
}

#[cfg(test)]
mod tests {
    use super::super::ModelConfig;
    use super::*;

    fn micro() -> Model {
        let mut c = ModelConfig::preset("desk-micro").unwrap();
        c.context = 64;
        Model::init(c, 5).unwrap()
    }

    #[test]
    fn cached_pass_matches_tape_bitwise() {
        let m = micro();
        let ids: Vec<u32> = (0..40).map(|i| (i * 37 % 258) as u32).collect();
        assert_eq!(m.forward(&ids).unwrap(), m.logits(&ids).unwrap());
        let mut s = m.new_state();
        let mut rows = Vec::new();
        for chunk in ids.chunks(7) {
            rows.extend_from_slice(m.extend(&mut s, chunk).unwrap().data());
        }
        assert_eq!(rows, m.logits(&ids).unwrap().data());
    }

    #[test]
    fn greedy_generation_is_stepwise_argmax() {
        let m = micro();
        let prefix = [256u32, 3, 9, 12];
        let got = m.generate(&prefix, 10, &SamplerConfig::greedy()).unwrap();
        let mut seq = prefix.to_vec();
        for _ in 0..10 {
            let l = m.logits(&seq).unwrap();
            let v = 258;
            let last = &l.data()[(seq.len() - 1) * v..seq.len() * v];
            seq.push(argmax(last) as u32);
        }
        assert_eq!(got, &seq[4..]);
    }

    #[test]
    fn seeded_sampling_is_reproducible() {
        let m = micro();
        let s = SamplerConfig {
            temperature: 1.0,
            top_k: Some(20),
            seed: 11,
        };
        let a = m.generate(&[256], 12, &s).unwrap();
        assert_eq!(a, m.generate(&[256], 12, &s).unwrap());
        assert_eq!(a.len(), 12);
        let other = SamplerConfig { seed: 12, ..s };
        assert_ne!(a, m.generate(&[256], 12, &other).unwrap());
    }

    #[test]
    fn context_limits() {
        let m = micro();
        assert!(matches!(m.generate(&[1; 60], 5, &SamplerConfig::greedy()), Err(Error::Length(_))));
        assert!(m.generate(&[1; 60], 4, &SamplerConfig::greedy()).is_ok());
        assert!(m.sequence_nll(&[1; 32], &[2; 33]).is_ok());
        assert!(matches!(m.sequence_nll(&[1; 32], &[2; 34]), Err(Error::Length(_))));
    }

    #[test]
    fn zero_head_gives_perplexity_v() {
        let mut m = micro();
        m.set_head(Tensor::zeros(&[64, 258])).unwrap();
        let nll = m.sequence_nll(&[256, 4, 5], &[6, 7, 8, 257]).unwrap();
        assert!((nll.perplexity - 258.0).abs() <= 258.0 * 1e-12, "{}", nll.perplexity);
    }

    #[test]
    fn top_1_equals_greedy() {
        let m = micro();
        let s = SamplerConfig {
            temperature: 0.7,
            top_k: Some(1),
            seed: 2,
        };
        assert_eq!(
            m.generate(&[256, 1], 8, &s).unwrap(),
            m.generate(&[256, 1], 8, &SamplerConfig::greedy()).unwrap()
        );
    }
}
