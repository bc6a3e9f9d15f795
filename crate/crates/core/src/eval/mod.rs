//! Visual prompting and the evaluation protocols built on it.

mod desk;
mod experiments;
mod metrics;
mod prompts;

pub use desk::{colorization_eval, heldout_videos, identity_agreement, ColorizationResult};
pub use experiments::{
    ablation_experiment, equalize_budgets, scaling_experiment, smoothed_final, AblationReport, FewShotProblem,
    FewShotSuite, ScalingReport, DESK_TASKS,
};
pub use metrics::{bbox_of_mask, metric_miou, metric_mse, metric_pck, BBox};
pub use prompts::{
    format_prompt_manifest, parse_prompt_manifest, read_prompt_manifest, EvalRecord, PromptMode, PromptSpec,
};

use crate::error::{Error, Result};
use crate::forge::{AnnotatedPair, AnnotationKind, VisualSentence};
use crate::image::Image;
use crate::model::{Model, Nll, SamplerConfig};
use crate::pack::VocabularyLayout;
use crate::vq::Tokenizer;

/// Example pairs in a desk analogy prompt.
pub const DESK_SHOTS: usize = 5;
pub const SWEEP_LENGTHS: std::ops::RangeInclusive<usize> = 1..=15;

/// What an analogy example maps its input to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnalogyTask {
    /// The target repeats the input.
    Identity,
    Annotate(AnnotationKind),
}

impl AnalogyTask {
    pub fn name(self) -> String {
        match self {
            AnalogyTask::Identity => "identity".into(),
            AnalogyTask::Annotate(k) => k.name().into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub task: AnalogyTask,
    pub input: Image,
    pub target: Image,
}

impl Example {
    pub fn identity(img: Image) -> Self {
        Example {
            task: AnalogyTask::Identity,
            target: img.clone(),
            input: img,
        }
    }
}

impl From<AnnotatedPair> for Example {
    fn from(p: AnnotatedPair) -> Self {
        Example {
            task: AnalogyTask::Annotate(p.kind),
            input: p.input,
            target: p.target,
        }
    }
}

fn layout(tok: &Tokenizer) -> Result<VocabularyLayout> {
    VocabularyLayout::new(tok.config().codebook_size)
}

fn check_model_vocab(model: &Model, layout: &VocabularyLayout) -> Result<()> {
    if model.config().vocab_size != layout.vocab_size() {
        return Err(Error::Config(format!(
            "model vocabulary {} does not match tokenizer vocabulary {}",
            model.config().vocab_size,
            layout.vocab_size()
        )));
    }
    Ok(())
}

/// `[BOS]` followed by the scan-line tokens of each image; no EOS.
pub fn prompt_tokens(images: &[&Image], tok: &Tokenizer) -> Result<Vec<u32>> {
    let layout = layout(tok)?;
    let owned: Vec<Image> = images.iter().map(|i| (*i).clone()).collect();
    let grids = tok.encode_batch(&owned)?;
    let mut out = vec![layout.bos()];
    for g in &grids {
        out.extend_from_slice(g.ids());
    }
    Ok(out)
}

fn check_examples(examples: &[Example]) -> Result<()> {
    if let Some(first) = examples.first() {
        if let Some(odd) = examples.iter().find(|e| e.task != first.task) {
            return Err(Error::Format(format!(
                "analogy examples mix tasks {} and {}",
                first.task.name(),
                odd.task.name()
            )));
        }
    }
    Ok(())
}

/// Images of an analogy prompt: in1, out1, ..., inN, outN, query.
pub fn analogy_layout<'a>(examples: &'a [Example], query: &'a Image) -> Result<Vec<&'a Image>> {
    check_examples(examples)?;
    let mut imgs = Vec::with_capacity(2 * examples.len() + 1);
    for e in examples {
        imgs.push(&e.input);
        imgs.push(&e.target);
    }
    imgs.push(query);
    Ok(imgs)
}

/// Generated token ids for the images that follow `context`.
pub fn complete_tokens(
    context: &[&Image],
    n_images: usize,
    model: &Model,
    tok: &Tokenizer,
    sampler: &SamplerConfig,
) -> Result<Vec<Vec<u32>>> {
    let layout = layout(tok)?;
    check_model_vocab(model, &layout)?;
    let per = tok.config().tokens_per_image();
    let prompt = prompt_tokens(context, tok)?;
    let need = prompt.len() + n_images * per;
    if need > model.config().context {
        return Err(Error::Length(format!(
            "prompt of {} tokens plus {n_images} images needs {need} positions, context is {}",
            prompt.len(),
            model.config().context
        )));
    }
    let ids = model.generate(&prompt, n_images * per, sampler)?;
    // BOS/EOS cannot be decoded; map them to code 0 so the image still renders.
    let k = layout.codebook_size() as u32;
    Ok(ids
        .chunks(per)
        .map(|c| c.iter().map(|&t| if t < k { t } else { 0 }).collect())
        .collect())
}

/// Predicts the `n_predict` frames that follow a frame sequence, one frame at
/// a time. When the growing sequence no longer fits the context, the oldest
/// frames are dropped so the newest ones stay in view.
pub fn sequential_prompt(
    frames: &[Image],
    n_predict: usize,
    model: &Model,
    tok: &Tokenizer,
    sampler: &SamplerConfig,
) -> Result<Vec<Image>> {
    if frames.is_empty() || n_predict == 0 {
        return Err(Error::Length("sequential prompting needs frames and at least one prediction".into()));
    }
    let per = tok.config().tokens_per_image();
    let fit = (model.config().context.saturating_sub(1) / per).saturating_sub(1);
    if fit == 0 {
        return Err(Error::Length(format!(
            "context {} cannot hold one frame plus one prediction of {per} tokens",
            model.config().context
        )));
    }
    let mut seq: Vec<Image> = frames.to_vec();
    let mut out = Vec::with_capacity(n_predict);
    for i in 0..n_predict {
        let start = seq.len().saturating_sub(fit);
        let ctx: Vec<&Image> = seq[start..].iter().collect();
        let step = SamplerConfig {
            seed: crate::rng::derive(sampler.seed, "sequential", i as u64),
            ..*sampler
        };
        let ids = complete_tokens(&ctx, 1, model, tok, &step)?.remove(0);
        let img = tok.decode_ids(&ids)?;
        seq.push(img.clone());
        out.push(img);
    }
    Ok(out)
}

/// Completes `in1, out1, ..., query` with one predicted image; returns its
/// tokens and decoded pixels.
pub fn analogy_prompt(
    examples: &[Example],
    query: &Image,
    model: &Model,
    tok: &Tokenizer,
    sampler: &SamplerConfig,
) -> Result<(Vec<u32>, Image)> {
    let ctx = analogy_layout(examples, query)?;
    let ids = complete_tokens(&ctx, 1, model, tok, sampler)?.remove(0);
    let img = tok.decode_ids(&ids)?;
    Ok((ids, img))
}

/// Perplexity of the ground-truth annotation tokens after `examples` and the query.
pub fn few_shot_perplexity(
    examples: &[Example],
    query: &Image,
    gt: &Image,
    model: &Model,
    tok: &Tokenizer,
) -> Result<Nll> {
    let l = layout(tok)?;
    check_model_vocab(model, &l)?;
    let ctx = analogy_layout(examples, query)?;
    let prefix = prompt_tokens(&ctx, tok)?;
    let target = tok.encode(gt)?.ids().to_vec();
    model.sequence_nll(&prefix, &target)
}

/// Mean perplexity of frame `c + 1` given the first `c` frames, per `c` in
/// `lengths`. One causal forward per video serves every length.
pub fn context_sweep(
    videos: &[VisualSentence],
    lengths: &[usize],
    model: &Model,
    tok: &Tokenizer,
) -> Result<Vec<(usize, f64)>> {
    let l = layout(tok)?;
    check_model_vocab(model, &l)?;
    let per = tok.config().tokens_per_image();
    let v = model.config().vocab_size;
    let max_c = lengths.iter().copied().max().unwrap_or(0);
    let mut sums = vec![0.0f64; lengths.len()];
    for video in videos {
        if video.len() < max_c + 1 {
            return Err(Error::InsufficientFrames {
                required: max_c + 1,
                available: video.len(),
            });
        }
        let frames: Vec<&Image> = video.images()[..=max_c].iter().collect();
        let ids = prompt_tokens(&frames, tok)?;
        // the last target token is never an input
        let input = &ids[..ids.len() - 1];
        if input.len() > model.config().context {
            return Err(Error::Length(format!(
                "{} frames need {} positions, context is {}",
                max_c + 1,
                input.len(),
                model.config().context
            )));
        }
        let logits = model.logits(input)?;
        for (s, &c) in sums.iter_mut().zip(lengths) {
            if c == 0 {
                return Err(Error::Length("context length 0 in sweep".into()));
            }
            let start = 1 + c * per;
            let mut nll = 0.0;
            for j in 0..per {
                let pos = start + j;
                let row = &logits.data()[(pos - 1) * v..pos * v];
                nll -= crate::model::log_softmax_row(row, ids[pos] as usize);
            }
            *s += (nll / per as f64).exp();
        }
    }
    let n = videos.len().max(1) as f64;
    Ok(lengths.iter().zip(sums).map(|(c, s)| (*c, s / n)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::{gen_scene, SentenceKind};
    use crate::model::ModelConfig;
    use crate::vq::TokenizerConfig;

    fn setup() -> (Model, Tokenizer) {
        let tok = Tokenizer::init(TokenizerConfig::desk(), 1).unwrap();
        let model = Model::init(ModelConfig::preset("desk-micro").unwrap(), 2).unwrap();
        (model, tok)
    }

    fn img(seed: u64) -> Image {
        gen_scene(seed, 32).0
    }

    #[test]
    fn mixed_tasks_are_rejected() {
        let (m, t) = setup();
        let seg = AnnotatedPair::from_scene(&gen_scene(1, 32).1, &img(1), AnnotationKind::SegmentationMask, 0);
        let ex = vec![Example::identity(img(2)), Example::from(seg)];
        assert!(matches!(
            analogy_prompt(&ex, &img(3), &m, &t, &SamplerConfig::greedy()),
            Err(Error::Format(_))
        ));
    }

    #[test]
    fn zero_shot_matches_direct_nll() {
        let (m, t) = setup();
        let (q, gt) = (img(4), img(5));
        let a = few_shot_perplexity(&[], &q, &gt, &m, &t).unwrap();
        let prefix = prompt_tokens(&[&q], &t).unwrap();
        let b = m.sequence_nll(&prefix, t.encode(&gt).unwrap().ids()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sweep_of_one_equals_sequence_nll() {
        let (m, t) = setup();
        let frames: Vec<Image> = (0..3).map(img).collect();
        let video = VisualSentence::new(SentenceKind::Video, frames.clone()).unwrap();
        let sweep = context_sweep(&[video], &[1], &m, &t).unwrap();
        let prefix = prompt_tokens(&[&frames[0]], &t).unwrap();
        let direct = m.sequence_nll(&prefix, t.encode(&frames[1]).unwrap().ids()).unwrap();
        assert_eq!(sweep.len(), 1);
        assert!((sweep[0].1 - direct.perplexity).abs() <= 1e-12 * direct.perplexity);
    }

    #[test]
    fn sequential_prompt_shapes_and_capacity() {
        let (m, t) = setup();
        let frames: Vec<Image> = (0..7).map(img).collect();
        let out = sequential_prompt(&frames, 1, &m, &t, &SamplerConfig::greedy()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!((out[0].width(), out[0].height()), (32, 32));
        let long: Vec<Image> = (0..15).map(img).collect();
        assert_eq!(sequential_prompt(&long, 4, &m, &t, &SamplerConfig::greedy()).unwrap().len(), 4);
        let mut c = m.config().clone();
        c.context = 100;
        let cramped = Model::init(c, 2).unwrap();
        assert!(matches!(
            sequential_prompt(&frames, 1, &cramped, &t, &SamplerConfig::greedy()),
            Err(Error::Length(_))
        ));
    }
}
