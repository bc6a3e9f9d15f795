//! Held-out desk evaluations: videos for the context sweep, identity copying,
//! and colorization against the grayscale baseline.

use super::{analogy_prompt, metric_mse, Example};
use crate::error::Result;
use crate::forge::{
    gen_scene, AnnotatedPair, AnnotationKind, VideoClip, VisualSentence, CLIP_FRAMES, VIDEO_SENTENCE_LEN,
    VIDEO_STRIDES,
};
use crate::image::Image;
use crate::model::{Model, SamplerConfig};
use crate::rng;
use crate::vq::Tokenizer;

/// `n` full-length video sentences from streams the corpus never draws on.
pub fn heldout_videos(seed: u64, n: usize, size: usize) -> Result<Vec<VisualSentence>> {
    (0..n)
        .map(|i| {
            let clip = VideoClip::generate(rng::derive(seed, "heldout-video", i as u64), CLIP_FRAMES);
            let stride = VIDEO_STRIDES[i % VIDEO_STRIDES.len()];
            clip.sentence(stride, VIDEO_SENTENCE_LEN, rng::derive(seed, "heldout-start", i as u64), size)
        })
        .collect()
}

fn heldout_scene(seed: u64, stream: &str, index: u64, size: usize) -> Image {
    gen_scene(rng::derive(seed, stream, index), size).0
}

/// Mean fraction of predicted tokens equal to the query's own tokens when
/// `shots` identity examples precede it, decoding greedily.
pub fn identity_agreement(model: &Model, tok: &Tokenizer, queries: usize, shots: usize, seed: u64) -> Result<f64> {
    let size = tok.config().image_size;
    let mut total = 0.0;
    for q in 0..queries {
        let examples: Vec<Example> = (0..shots)
            .map(|j| Example::identity(heldout_scene(seed, "identity-example", (q * shots + j) as u64, size)))
            .collect();
        let query = heldout_scene(seed, "identity-query", q as u64, size);
        let (ids, _) = analogy_prompt(&examples, &query, model, tok, &SamplerConfig::greedy())?;
        let gt = tok.encode(&query)?;
        total += ids.iter().zip(gt.ids()).filter(|(a, b)| a == b).count() as f64 / ids.len() as f64;
    }
    Ok(total / queries.max(1) as f64)
}

/// Per-query colorization outcome.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColorizationResult {
    pub predicted_mse: f64,
    pub grayscale_mse: f64,
}

impl ColorizationResult {
    pub fn beats_baseline(&self) -> bool {
        self.predicted_mse < self.grayscale_mse
    }
}

/// Greedy colorization of held-out grayscale queries after `shots` examples,
/// scored against returning the grayscale input unchanged.
pub fn colorization_eval(
    model: &Model,
    tok: &Tokenizer,
    queries: usize,
    shots: usize,
    seed: u64,
) -> Result<Vec<ColorizationResult>> {
    let size = tok.config().image_size;
    (0..queries)
        .map(|q| {
            let pairs: Vec<AnnotatedPair> = (0..=shots)
                .map(|j| {
                    let s = rng::derive(seed, "colorization", (q * (shots + 1) + j) as u64);
                    let (img, scene) = gen_scene(s, size);
                    AnnotatedPair::from_scene(&scene, &img, AnnotationKind::GrayscaleInput, s)
                })
                .collect();
            let (query, examples) = pairs.split_last().expect("at least the query");
            let examples: Vec<Example> = examples.iter().cloned().map(Example::from).collect();
            let (_, pred) = analogy_prompt(&examples, &query.input, model, tok, &SamplerConfig::greedy())?;
            Ok(ColorizationResult {
                predicted_mse: metric_mse(&pred, &query.target)?,
                grayscale_mse: metric_mse(&query.input, &query.target)?,
            })
        })
        .collect()
}
