//! End-to-end desk pipeline stages shared by the command-line driver and the
//! acceptance suite: tokenizer data and training, corpus tokenization, packing.

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{Error, Result};
use crate::forge::{derive_annotation, gen_scene, generate_corpus, AnnotationKind, CorpusMix, VisualSentence};
use crate::image::Image;
use crate::pack::{pack_windows, PackedWindow, TokenStream, VocabularyLayout};
use crate::rng;
use crate::tensor::OptimizerConfig;
use crate::vq::{StepLosses, Tokenizer, TokenizerConfig, TokenizerTrainer};

/// Share of tokenizer training images that are annotation renderings rather
/// than scenes, so annotation sentences tokenize as well as photos do.
pub const TOKENIZER_ANNOTATION_SHARE: f64 = 0.3;
pub const TOKENIZER_BATCH: usize = 16;
pub const MODEL_BATCH: usize = 2;

/// AdamW schedule for desk tokenizer training over `steps` updates.
pub fn tokenizer_opt(steps: u64) -> OptimizerConfig {
    OptimizerConfig {
        base_lr: 2e-3,
        final_lr: 2e-4,
        warmup_steps: (steps / 20).min(100),
        decay_steps: steps.max(1),
        weight_decay: 0.0,
        ..OptimizerConfig::default()
    }
}

/// AdamW schedule for desk transformer training over `steps` updates.
pub fn model_opt(steps: u64) -> OptimizerConfig {
    OptimizerConfig {
        base_lr: 2e-3,
        final_lr: 2e-4,
        warmup_steps: (steps / 20).min(200),
        decay_steps: steps.max(1),
        weight_decay: 0.1,
        ..OptimizerConfig::default()
    }
}

/// The `index`-th tokenizer image: a scene, or one of its annotation renderings.
pub fn tokenizer_image(seed: u64, index: u64, size: usize) -> Image {
    let s = rng::derive(seed, "tokenizer-image", index);
    let mut r = rng::substream(s, "pick");
    let (img, scene) = gen_scene(s, size);
    if r.gen_bool(TOKENIZER_ANNOTATION_SHARE) {
        let kind = *AnnotationKind::ALL.choose(&mut r).expect("nonempty");
        return derive_annotation(&scene, &img, kind, s);
    }
    img
}

pub fn tokenizer_images(seed: u64, range: std::ops::Range<u64>, size: usize) -> Vec<Image> {
    range.map(|i| tokenizer_image(seed, i, size)).collect()
}

/// Trains a tokenizer on `images` with seeded random minibatches.
pub fn train_tokenizer(
    images: &[Image],
    cfg: TokenizerConfig,
    opt: OptimizerConfig,
    steps: u64,
    seed: u64,
    mut progress: impl FnMut(u64, &StepLosses),
) -> Result<(Tokenizer, Vec<StepLosses>)> {
    if images.is_empty() {
        return Err(Error::InsufficientData("no tokenizer training images".into()));
    }
    let tok = Tokenizer::init(cfg, seed)?;
    let mut trainer = TokenizerTrainer::new(tok, opt, seed)?;
    let mut r = rng::substream(seed, "tokenizer-batches");
    let mut losses = Vec::with_capacity(steps as usize);
    for step in 1..=steps {
        let batch: Vec<Image> = (0..TOKENIZER_BATCH.min(images.len()))
            .map(|_| images[r.gen_range(0..images.len())].clone())
            .collect();
        let l = trainer.train_step(&batch)?;
        progress(step, &l);
        losses.push(l);
    }
    Ok((trainer.into_tokenizer(), losses))
}

/// Tokenizes sentences, encoding images in large batches.
pub fn tokenize_sentences(sentences: &[VisualSentence], tok: &Tokenizer) -> Result<Vec<TokenStream>> {
    let layout = VocabularyLayout::new(tok.config().codebook_size)?;
    let images: Vec<Image> = sentences.iter().flat_map(|s| s.images().iter().cloned()).collect();
    let grids = tok.encode_batch(&images)?;
    let mut it = grids.iter();
    Ok(sentences
        .iter()
        .map(|s| TokenStream {
            kind: s.kind(),
            ids: layout.frame(it.by_ref().take(s.len()).map(|g| g.ids())),
        })
        .collect())
}

/// Generates and tokenizes corpus sentences until at least `token_budget`
/// tokens are collected.
pub fn corpus_streams(
    seed: u64,
    mix: &CorpusMix,
    tok: &Tokenizer,
    token_budget: usize,
) -> Result<Vec<TokenStream>> {
    let size = tok.config().image_size;
    let per = tok.config().tokens_per_image();
    let mut out = Vec::new();
    let mut pending = Vec::new();
    let mut total = 0usize;
    generate_corpus(seed, mix, size, |s| {
        total += 2 + s.len() * per;
        pending.push(s);
        if pending.len() >= 64 || total >= token_budget {
            out.extend(tokenize_sentences(&pending, tok)?);
            pending.clear();
        }
        Ok(total >= token_budget)
    })?;
    Ok(out)
}

/// Packs streams into windows of `window` tokens.
pub fn pack_streams(streams: &[TokenStream], window: usize, seed: u64) -> Result<Vec<PackedWindow>> {
    let ids: Vec<Vec<u32>> = streams.iter().map(|s| s.ids.clone()).collect();
    pack_windows(&ids, window, seed)
}
