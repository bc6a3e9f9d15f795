//! Decoder-only transformer over visual tokens: RMS pre-norm, rotary
//! positions, SiLU-gated MLP, no biases, untied input and output embeddings.

mod infer;
mod train;

pub use infer::{argmax, log_softmax_row, DecodeState, Nll, SamplerConfig};
pub use train::{read_loss_csv, LossPoint, Trainer, PROBE_LEN};

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

pub const RMS_EPS: f64 = 1e-5;
pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;
const INIT_STD: f64 = 0.02;

/// Desk-scale vocabulary: 256 codes plus BOS and EOS.
pub const DESK_VOCAB: usize = 258;
/// Vocabulary of an 8192-code tokenizer plus BOS and EOS.
pub const PAPER_VOCAB: usize = 8194;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    pub mlp_dim: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub vocab_size: usize,
    pub context: usize,
    pub rope_base: f64,
}

/// (name, hidden, mlp, heads, layers); the first four mirror the published sizes.
const PRESETS: [(&str, usize, usize, usize, usize); 7] = [
    ("LVM-300M", 1024, 2688, 8, 22),
    ("LVM-600M", 1536, 4096, 16, 22),
    ("LVM-1B", 2048, 5504, 16, 22),
    ("LVM-3B", 3200, 8640, 32, 26),
    ("desk-micro", 64, 176, 4, 2),
    ("desk-small", 128, 352, 4, 4),
    ("desk-med", 192, 528, 6, 6),
];

impl ModelConfig {
    pub fn preset_names() -> Vec<&'static str> {
        PRESETS.iter().map(|p| p.0).collect()
    }

    /// Named configuration. Published sizes get the 8192-code vocabulary and a
    /// 4096 context; desk presets get `DESK_VOCAB` and 1024.
    pub fn preset(name: &str) -> Result<Self> {
        let &(_, hidden_dim, mlp_dim, n_heads, n_layers) =
            PRESETS.iter().find(|p| p.0 == name).ok_or_else(|| {
                Error::Config(format!(
                    "unknown model preset {name:?}; valid presets: {}",
                    Self::preset_names().join(", ")
                ))
            })?;
        let desk = name.starts_with("desk-");
        Ok(ModelConfig {
            hidden_dim,
            mlp_dim,
            n_heads,
            n_layers,
            vocab_size: if desk { DESK_VOCAB } else { PAPER_VOCAB },
            context: if desk { 1024 } else { 4096 },
            rope_base: DEFAULT_ROPE_BASE,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.hidden_dim == 0 || self.mlp_dim == 0 || self.n_layers == 0 || self.n_heads == 0 {
            return bad(format!("model dimensions must be positive: {self:?}"));
        }
        if self.hidden_dim % self.n_heads != 0 || self.head_dim() % 2 != 0 {
            return bad(format!(
                "hidden_dim {} must split into {} heads of even size",
                self.hidden_dim, self.n_heads
            ));
        }
        if self.vocab_size < 3 || self.context < 2 {
            return bad(format!("vocab {} / context {} too small", self.vocab_size, self.context));
        }
        if !(self.rope_base > 1.0 && self.rope_base.is_finite()) {
            return bad(format!("rope_base {} must exceed 1", self.rope_base));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        [
            ("hidden_dim", self.hidden_dim.to_string()),
            ("mlp_dim", self.mlp_dim.to_string()),
            ("n_heads", self.n_heads.to_string()),
            ("n_layers", self.n_layers.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("context", self.context.to_string()),
            ("rope_base", self.rope_base.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn from_lookup(get: impl Fn(&str) -> Result<String>) -> Result<Self> {
        fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T> {
            v.parse()
                .map_err(|_| Error::CorruptCheckpoint(format!("bad value {v:?} for {key}")))
        }
        let cfg = ModelConfig {
            hidden_dim: num("hidden_dim", get("hidden_dim")?)?,
            mlp_dim: num("mlp_dim", get("mlp_dim")?)?,
            n_heads: num("n_heads", get("n_heads")?)?,
            n_layers: num("n_layers", get("n_layers")?)?,
            vocab_size: num("vocab_size", get("vocab_size")?)?,
            context: num("context", get("context")?)?,
            rope_base: num("rope_base", get("rope_base")?)?,
        };
        cfg.validate()
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        Ok(cfg)
    }
}

// Per-layer parameter order.
const ATTN_NORM: usize = 0;
const WQ: usize = 1;
const WK: usize = 2;
const WV: usize = 3;
const WO: usize = 4;
const MLP_NORM: usize = 5;
const W_GATE: usize = 6;
const W_UP: usize = 7;
const W_DOWN: usize = 8;
const PER_LAYER: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamStore<f32>,
}

impl Model {
    /// Normal(0, 0.02) weights, with residual-output projections scaled by
    /// `1/sqrt(2 n_layers)`; unit norm gains.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::substream(seed, "init");
        let (d, m, v) = (cfg.hidden_dim, cfg.mlp_dim, cfg.vocab_size);
        let resid_std = INIT_STD / (2.0 * cfg.n_layers as f64).sqrt();
        let mut normal = |shape: &[usize], std: f64| {
            let dist = Normal::new(0.0, std).unwrap();
            Tensor::from_fn(shape, |_| dist.sample(&mut r) as f32)
        };
        let mut params = ParamStore::new();
        params.push("tok_emb", normal(&[v, d], INIT_STD), true);
        for l in 0..cfg.n_layers {
            let p = |s: &str| format!("layers.{l}.{s}");
            params.push(p("attn_norm"), Tensor::full(&[d], 1.0), false);
            params.push(p("wq"), normal(&[d, d], INIT_STD), true);
            params.push(p("wk"), normal(&[d, d], INIT_STD), true);
            params.push(p("wv"), normal(&[d, d], INIT_STD), true);
            params.push(p("wo"), normal(&[d, d], resid_std), true);
            params.push(p("mlp_norm"), Tensor::full(&[d], 1.0), false);
            params.push(p("w_gate"), normal(&[d, m], INIT_STD), true);
            params.push(p("w_up"), normal(&[d, m], INIT_STD), true);
            params.push(p("w_down"), normal(&[m, d], resid_std), true);
        }
        params.push("final_norm", Tensor::full(&[d], 1.0), false);
        params.push("head", normal(&[d, v], INIT_STD), true);
        Ok(Model { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.num_scalars()
    }

    pub(crate) fn layer_param(&self, layer: usize, which: usize) -> usize {
        1 + layer * PER_LAYER + which
    }

    pub(crate) fn final_norm_index(&self) -> usize {
        1 + self.cfg.n_layers * PER_LAYER
    }

    pub(crate) fn head_index(&self) -> usize {
        self.final_norm_index() + 1
    }

    /// Replaces the output projection, e.g. with zeros to force uniform logits.
    pub fn set_head(&mut self, head: Tensor<f32>) -> Result<()> {
        let i = self.head_index();
        if head.shape() != self.params.get(i).shape() {
            return Err(Error::dim(format!("head {:?} for {:?}", head.shape(), self.params.get(i).shape())));
        }
        *self.params.get_mut(i) = head;
        Ok(())
    }

    pub(crate) fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if let Some(&bad) = ids.iter().find(|&&i| i as usize >= self.cfg.vocab_size) {
            return Err(Error::InvalidToken {
                id: bad as usize,
                limit: self.cfg.vocab_size,
            });
        }
        Ok(())
    }

    pub(crate) fn param_vars(&self, tape: &mut Tape<f32>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect()
    }

    /// Records the forward pass of one sequence; returns `[len, V]` logits.
    pub(crate) fn forward_tape(&self, tape: &mut Tape<f32>, vars: &[Var], ids: &[u32]) -> Result<Var> {
        self.check_ids(ids)?;
        if ids.len() > self.cfg.context {
            return Err(Error::Length(format!(
                "{} tokens exceed the {}-token context",
                ids.len(),
                self.cfg.context
            )));
        }
        let c = &self.cfg;
        let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
        let mut x = tape.embedding(vars[0], &idx)?;
        for l in 0..c.n_layers {
            let p = |w: usize| vars[self.layer_param(l, w)];
            let h = tape.rmsnorm(x, p(ATTN_NORM), RMS_EPS)?;
            let q = tape.matmul(h, p(WQ))?;
            let k = tape.matmul(h, p(WK))?;
            let v = tape.matmul(h, p(WV))?;
            let q = tape.rope(q, c.n_heads, c.rope_base, 0)?;
            let k = tape.rope(k, c.n_heads, c.rope_base, 0)?;
            let a = tape.causal_attention(q, k, v, c.n_heads)?;
            let o = tape.matmul(a, p(WO))?;
            x = tape.add(x, o)?;
            let h = tape.rmsnorm(x, p(MLP_NORM), RMS_EPS)?;
            let g = tape.matmul(h, p(W_GATE))?;
            let u = tape.matmul(h, p(W_UP))?;
            let g = tape.silu(g);
            let gu = tape.mul(g, u)?;
            let down = tape.matmul(gu, p(W_DOWN))?;
            x = tape.add(x, down)?;
        }
        let h = tape.rmsnorm(x, vars[self.final_norm_index()], RMS_EPS)?;
        tape.matmul(h, vars[self.head_index()])
    }

    /// Logits of a full sequence through the training graph.
    pub fn forward(&self, ids: &[u32]) -> Result<Tensor<f32>> {
        let mut tape = Tape::new();
        let vars = self.param_vars(&mut tape, false);
        let out = self.forward_tape(&mut tape, &vars, ids)?;
        Ok(tape.value(out).clone())
    }

    pub fn to_container(&self) -> crate::checkpoint::Container {
        let mut config = vec![("kind".to_string(), "lvm".to_string())];
        config.extend(self.cfg.to_pairs());
        crate::checkpoint::Container {
            config,
            tensors: self
                .params
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn from_container(c: &crate::checkpoint::Container) -> Result<Self> {
        if c.require("kind")? != "lvm" {
            return Err(Error::CorruptCheckpoint(format!(
                "checkpoint kind {:?} is not an lvm model",
                c.get("kind")
            )));
        }
        let cfg = ModelConfig::from_lookup(|k| c.require(k).map(str::to_string))?;
        let mut model = Model::init(cfg, 0)?;
        for i in 0..model.params.len() {
            let name = model.params.iter().nth(i).unwrap().name.clone();
            let t = c.tensor(&name)?;
            if t.shape() != model.params.get(i).shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    model.params.get(i).shape()
                )));
            }
            *model.params.get_mut(i) = t.clone();
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_presets() {
        let c = ModelConfig::preset("LVM-300M").unwrap();
        assert_eq!((c.hidden_dim, c.mlp_dim, c.n_heads, c.n_layers), (1024, 2688, 8, 22));
        let c = ModelConfig::preset("LVM-3B").unwrap();
        assert_eq!((c.hidden_dim, c.mlp_dim, c.n_heads, c.n_layers), (3200, 8640, 32, 26));
        let c = ModelConfig::preset("desk-micro").unwrap();
        assert_eq!((c.hidden_dim, c.mlp_dim, c.n_heads, c.n_layers), (64, 176, 4, 2));
        assert_eq!((c.vocab_size, c.context, c.rope_base), (258, 1024, 10_000.0));
    }

    #[test]
    fn every_preset_validates_and_keeps_the_mlp_ratio() {
        for name in ModelConfig::preset_names() {
            let c = ModelConfig::preset(name).unwrap();
            c.validate().unwrap();
            let ratio = c.mlp_dim as f64 / c.hidden_dim as f64;
            assert!((2.6..=2.8).contains(&ratio), "{name}: {ratio}");
        }
    }

    #[test]
    fn unknown_preset_lists_valid_names() {
        let e = ModelConfig::preset("LVM-7B").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
        assert!(e.to_string().contains("desk-small") && e.to_string().contains("LVM-1B"));
    }

    #[test]
    fn layout_has_no_biases_and_untied_head() {
        let m = Model::init(ModelConfig::preset("desk-micro").unwrap(), 1).unwrap();
        let names: Vec<&str> = m.params().iter().map(|p| p.name.as_str()).collect();
        assert!(names.iter().all(|n| !n.contains("bias")));
        assert_eq!(names.first(), Some(&"tok_emb"));
        assert_eq!(names.last(), Some(&"head"));
        assert_eq!(m.params().by_name("head").unwrap().shape(), &[64, 258]);
        assert_ne!(m.params().by_name("tok_emb").unwrap().data()[..64], m.params().by_name("head").unwrap().data()[..64]);
        // rank-1 gains are exempt from weight decay
        assert!(m.params().iter().all(|p| p.decay == (p.value.shape().len() == 2)));
    }

    #[test]
    fn residual_projections_use_the_smaller_scale() {
        let m = Model::init(ModelConfig::preset("desk-small").unwrap(), 3).unwrap();
        let std = |n: &str| {
            let d = m.params().by_name(n).unwrap().data();
            (d.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / d.len() as f64).sqrt()
        };
        assert!((std("layers.0.wq") - 0.02).abs() < 0.002);
        assert!((std("layers.0.wo") - 0.02 / 8f64.sqrt()).abs() < 0.001);
        assert!((std("layers.3.w_down") - 0.02 / 8f64.sqrt()).abs() < 0.001);
    }

    #[test]
    fn out_of_range_token_is_rejected() {
        let m = Model::init(ModelConfig::preset("desk-micro").unwrap(), 1).unwrap();
        assert!(matches!(m.forward(&[1, 258]), Err(Error::InvalidToken { id: 258, limit: 258 })));
    }
}
