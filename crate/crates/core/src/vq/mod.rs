//! Convolutional VQ tokenizer: encoder, codebook quantizer and decoder
//! mapping images to grids of discrete tokens and back.

mod codebook;
mod train;

use rand_distr::{Distribution, Normal};

pub use codebook::{quantize, Codebook};
pub use train::{StepLosses, TokenizerTrainer};

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{ParamStore, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct TokenizerConfig {
    pub image_size: usize,
    /// Spatial downsampling factor `f`; a power of two.
    pub downsample: usize,
    pub codebook_size: usize,
    pub codeword_dim: usize,
    pub commitment_beta: f64,
    pub ema_decay: f64,
    /// Channels after the stem; doubled by every downsampling stage.
    pub base_channels: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TokenizerConfig {
    /// 32x32 images, f = 4, 256 codes of dimension 16.
    pub fn desk() -> Self {
        TokenizerConfig {
            image_size: 32,
            downsample: 4,
            codebook_size: 256,
            codeword_dim: 16,
            commitment_beta: 0.25,
            ema_decay: 0.99,
            base_channels: 16,
        }
    }

    /// 256x256 images, f = 16, 8192 codes.
    pub fn large() -> Self {
        TokenizerConfig {
            image_size: 256,
            downsample: 16,
            codebook_size: 8192,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let f = self.downsample;
        if f < 2 || !f.is_power_of_two() {
            return Err(Error::Config(format!("downsample factor {f} must be a power of two >= 2")));
        }
        if self.image_size == 0 || self.image_size % f != 0 {
            return Err(Error::Config(format!(
                "image size {} not divisible by downsample factor {f}",
                self.image_size
            )));
        }
        if self.codebook_size < 2 || self.codebook_size > 65534 {
            return Err(Error::Config(format!("codebook size {} outside 2..=65534", self.codebook_size)));
        }
        if self.codeword_dim == 0 || self.base_channels == 0 {
            return Err(Error::Config("codeword dim and base channels must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) || self.commitment_beta < 0.0 {
            return Err(Error::Config("ema decay must be in [0, 1), beta non-negative".into()));
        }
        Ok(())
    }

    pub fn grid_side(&self) -> usize {
        self.image_size / self.downsample
    }

    pub fn tokens_per_image(&self) -> usize {
        self.grid_side() * self.grid_side()
    }

    fn stages(&self) -> usize {
        self.downsample.trailing_zeros() as usize
    }

    fn channels(&self, stage: usize) -> usize {
        self.base_channels << stage
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("image_size".into(), self.image_size.to_string()),
            ("downsample".into(), self.downsample.to_string()),
            ("codebook_size".into(), self.codebook_size.to_string()),
            ("codeword_dim".into(), self.codeword_dim.to_string()),
            ("commitment_beta".into(), self.commitment_beta.to_string()),
            ("ema_decay".into(), self.ema_decay.to_string()),
            ("base_channels".into(), self.base_channels.to_string()),
        ]
    }
}

/// Fraction of the `codebook_size` codes that occur in `grids`.
pub fn codebook_usage(grids: &[TokenGrid], codebook_size: usize) -> f64 {
    let mut seen = vec![false; codebook_size];
    for &id in grids.iter().flat_map(|g| g.ids()) {
        if let Some(s) = seen.get_mut(id as usize) {
            *s = true;
        }
    }
    seen.iter().filter(|&&s| s).count() as f64 / codebook_size.max(1) as f64
}

/// Square grid of codebook indices in scan-line order.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    side: usize,
    ids: Vec<u32>,
}

impl TokenGrid {
    pub fn new(side: usize, ids: Vec<u32>) -> Result<Self> {
        if side == 0 || ids.len() != side * side {
            return Err(Error::dim(format!("{} ids for a {side}x{side} grid", ids.len())));
        }
        Ok(TokenGrid { side, ids })
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    /// Fraction of positions holding the same token.
    pub fn agreement(&self, other: &TokenGrid) -> f64 {
        let same = self.ids.iter().zip(&other.ids).filter(|(a, b)| a == b).count();
        same as f64 / self.ids.len().max(other.ids.len()) as f64
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvLayer {
    w: usize,
    b: usize,
    stride: usize,
    upsample: bool,
    relu: bool,
}

/// Trained (or freshly initialized) tokenizer: network weights plus codebook.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenizer {
    cfg: TokenizerConfig,
    params: ParamStore<f32>,
    codebook: Codebook,
}

const ENCODE_CHUNK: usize = 32;

impl Tokenizer {
    pub fn init(cfg: TokenizerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = crate::rng::substream(seed, "tokenizer-init");
        let mut params = ParamStore::new();
        let mut conv = |params: &mut ParamStore<f32>, name: &str, c_in: usize, c_out: usize, k: usize, gain: f64| {
            let std = gain * (2.0 / (c_in * k * k) as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let w = Tensor::from_fn(&[c_out, c_in, k, k], |_| normal.sample(&mut rng) as f32);
            params.push(format!("{name}.w"), w, true);
            params.push(format!("{name}.b"), Tensor::zeros(&[c_out]), false);
        };
        let n = cfg.stages();
        let top = cfg.channels(n);
        conv(&mut params, "enc.stem", 3, cfg.channels(0), 3, 1.0);
        for s in 0..n {
            conv(&mut params, &format!("enc.down{s}"), cfg.channels(s), cfg.channels(s + 1), 3, 1.0);
        }
        conv(&mut params, "enc.mid", top, top, 3, 1.0);
        conv(&mut params, "enc.proj", top, cfg.codeword_dim, 1, 0.5);
        conv(&mut params, "dec.in", cfg.codeword_dim, top, 3, 1.0);
        conv(&mut params, "dec.mid", top, top, 3, 1.0);
        for s in (0..n).rev() {
            conv(&mut params, &format!("dec.up{s}"), cfg.channels(s + 1), cfg.channels(s), 3, 1.0);
        }
        conv(&mut params, "dec.out", cfg.channels(0), 3, 3, 0.5);
        let codebook = Codebook::random(cfg.codebook_size, cfg.codeword_dim, &mut rng);
        Ok(Tokenizer {
            cfg,
            params,
            codebook,
        })
    }

    pub fn config(&self) -> &TokenizerConfig {
        &self.cfg
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn codebook_mut(&mut self) -> &mut Codebook {
        &mut self.codebook
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    fn layers(&self) -> (Vec<ConvLayer>, Vec<ConvLayer>) {
        let n = self.cfg.stages();
        let mut idx = 0;
        let mut next = |stride: usize, upsample: bool, relu: bool| {
            let l = ConvLayer {
                w: idx,
                b: idx + 1,
                stride,
                upsample,
                relu,
            };
            idx += 2;
            l
        };
        let mut enc = vec![next(1, false, true)];
        for _ in 0..n {
            enc.push(next(2, false, true));
        }
        enc.push(next(1, false, true));
        enc.push(next(1, false, false));
        let mut dec = vec![next(1, false, true), next(1, false, true)];
        for _ in 0..n {
            dec.push(next(1, true, true));
        }
        dec.push(next(1, false, false));
        (enc, dec)
    }

    /// Records the parameters on `tape`, trainable or frozen.
    pub(crate) fn param_vars(&self, tape: &mut Tape<f32>, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.value.clone(), trainable))
            .collect()
    }

    fn run(tape: &mut Tape<f32>, layers: &[ConvLayer], vars: &[Var], mut x: Var) -> Result<Var> {
        for l in layers {
            if l.upsample {
                x = tape.upsample2x(x)?;
            }
            x = tape.conv2d(x, vars[l.w], l.stride)?;
            x = tape.add_channel(x, vars[l.b])?;
            if l.relu {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    pub(crate) fn encoder(&self, tape: &mut Tape<f32>, vars: &[Var], x: Var) -> Result<Var> {
        Self::run(tape, &self.layers().0, vars, x)
    }

    pub(crate) fn decoder(&self, tape: &mut Tape<f32>, vars: &[Var], z: Var) -> Result<Var> {
        Self::run(tape, &self.layers().1, vars, z)
    }

    pub(crate) fn stack(&self, images: &[Image]) -> Result<Tensor<f32>> {
        let s = self.cfg.image_size;
        let mut data = Vec::with_capacity(images.len() * 3 * s * s);
        for img in images {
            if img.width() != s || img.height() != s {
                return Err(Error::dim(format!(
                    "tokenizer expects {s}x{s} images, got {}x{}",
                    img.width(),
                    img.height()
                )));
            }
            data.extend_from_slice(img.to_tensor().data());
        }
        Tensor::new(&[images.len(), 3, s, s], data)
    }

    /// Latent vectors of a `[N, D, h, w]` tensor, one per grid cell in
    /// image-major scan-line order.
    pub(crate) fn gather_latents(z: &Tensor<f32>) -> Vec<Vec<f32>> {
        let s = z.shape();
        let (n, d, hw) = (s[0], s[1], s[2] * s[3]);
        let mut out = Vec::with_capacity(n * hw);
        for b in 0..n {
            for p in 0..hw {
                out.push((0..d).map(|c| z.data()[(b * d + c) * hw + p]).collect());
            }
        }
        out
    }

    /// Codeword tensor `[N, D, h, w]` for image-major scan-line indices.
    pub(crate) fn codewords_tensor(&self, ids: &[u32], n: usize) -> Result<Tensor<f32>> {
        let (d, side) = (self.cfg.codeword_dim, self.cfg.grid_side());
        let hw = side * side;
        let mut data = vec![0f32; n * d * hw];
        for (j, &id) in ids.iter().enumerate() {
            let (b, p) = (j / hw, j % hw);
            let id = id as usize;
            if id >= self.codebook.size() {
                return Err(Error::InvalidToken {
                    id,
                    limit: self.codebook.size(),
                });
            }
            for (c, v) in self.codebook.codeword(id).iter().enumerate() {
                data[(b * d + c) * hw + p] = *v;
            }
        }
        Tensor::new(&[n, d, side, side], data)
    }

    pub fn encode(&self, img: &Image) -> Result<TokenGrid> {
        Ok(self.encode_batch(std::slice::from_ref(img))?.remove(0))
    }

    pub fn encode_batch(&self, images: &[Image]) -> Result<Vec<TokenGrid>> {
        let side = self.cfg.grid_side();
        let hw = side * side;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(ENCODE_CHUNK) {
            let mut tape = Tape::new();
            let vars = self.param_vars(&mut tape, false);
            let x = tape.constant(self.stack(chunk)?);
            let z = self.encoder(&mut tape, &vars, x)?;
            let latents = Self::gather_latents(tape.value(z));
            for img_lat in latents.chunks(hw) {
                let ids = img_lat.iter().map(|l| self.codebook.nearest(l) as u32).collect();
                out.push(TokenGrid::new(side, ids)?);
            }
        }
        Ok(out)
    }

    pub fn decode(&self, grid: &TokenGrid) -> Result<Image> {
        Ok(self.decode_batch(std::slice::from_ref(grid))?.remove(0))
    }

    pub fn decode_batch(&self, grids: &[TokenGrid]) -> Result<Vec<Image>> {
        let side = self.cfg.grid_side();
        let s = self.cfg.image_size;
        let mut out = Vec::with_capacity(grids.len());
        for chunk in grids.chunks(ENCODE_CHUNK) {
            if let Some(g) = chunk.iter().find(|g| g.side() != side) {
                return Err(Error::dim(format!(
                    "token grid {0}x{0} does not match tokenizer grid {side}x{side}",
                    g.side()
                )));
            }
            let ids: Vec<u32> = chunk.iter().flat_map(|g| g.ids().iter().copied()).collect();
            let q = self.codewords_tensor(&ids, chunk.len())?;
            let mut tape = Tape::new();
            let vars = self.param_vars(&mut tape, false);
            let zq = tape.constant(q);
            let y = self.decoder(&mut tape, &vars, zq)?;
            for img in tape.value(y).data().chunks(3 * s * s) {
                out.push(Image::from_chw(img, s, s)?);
            }
        }
        Ok(out)
    }

    /// Decodes image tokens given as a flat id list (one image worth).
    pub fn decode_ids(&self, ids: &[u32]) -> Result<Image> {
        self.decode(&TokenGrid::new(self.cfg.grid_side(), ids.to_vec())?)
    }

    pub fn to_container(&self) -> Container {
        let mut config = vec![("kind".to_string(), "tokenizer".to_string())];
        config.extend(self.cfg.to_pairs());
        let mut tensors: Vec<(String, Tensor<f32>)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        let (k, d) = (self.codebook.size(), self.codebook.dim());
        let cb = &self.codebook;
        tensors.push(("codebook.vectors".into(), Tensor::new(&[k, d], cb.vectors.clone()).expect("shape")));
        tensors.push(("codebook.ema_counts".into(), Tensor::new(&[k], cb.ema_counts.clone()).expect("shape")));
        tensors.push(("codebook.ema_sums".into(), Tensor::new(&[k, d], cb.ema_sums.clone()).expect("shape")));
        Container { config, tensors }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.get("kind") != Some("tokenizer") {
            return Err(Error::CorruptCheckpoint("not a tokenizer checkpoint".into()));
        }
        let cfg = TokenizerConfig {
            image_size: c.parse_key("image_size")?,
            downsample: c.parse_key("downsample")?,
            codebook_size: c.parse_key("codebook_size")?,
            codeword_dim: c.parse_key("codeword_dim")?,
            commitment_beta: c.parse_key("commitment_beta")?,
            ema_decay: c.parse_key("ema_decay")?,
            base_channels: c.parse_key("base_channels")?,
        };
        cfg.validate()
            .map_err(|e| Error::CorruptCheckpoint(format!("tokenizer config: {e}")))?;
        let mut tok = Tokenizer::init(cfg, 0)?;
        let names: Vec<String> = tok.params.iter().map(|p| p.name.clone()).collect();
        for (i, name) in names.iter().enumerate() {
            let t = c.tensor(name)?;
            if t.shape() != tok.params.get(i).shape() {
                return Err(Error::CorruptCheckpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.shape(),
                    tok.params.get(i).shape()
                )));
            }
            *tok.params.get_mut(i) = t.clone();
        }
        let (k, d) = (tok.cfg.codebook_size, tok.cfg.codeword_dim);
        let vectors = c.tensor("codebook.vectors")?;
        let counts = c.tensor("codebook.ema_counts")?;
        let sums = c.tensor("codebook.ema_sums")?;
        if vectors.shape() != [k, d] || counts.shape() != [k] || sums.shape() != [k, d] {
            return Err(Error::CorruptCheckpoint("codebook tensor shapes".into()));
        }
        let mut cb = Codebook::new(k, d, vectors.data().to_vec())
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
        cb.ema_counts = counts.data().to_vec();
        cb.ema_sums = sums.data().to_vec();
        tok.codebook = cb;
        Ok(tok)
    }
}
