//! Seeded corpus generation: a weighted mix of every sentence layout.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::annotate::{derive_annotation, AnnotationKind};
use super::scene::{gen_scene, gen_scene_of_class, NUM_CLASSES};
use super::sentence::*;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::{derive, indexed};

/// Frames per procedural clip; enough for 16 frames at the largest stride.
pub const CLIP_FRAMES: usize = (VIDEO_SENTENCE_LEN - 1) * 30 + 30;

/// Relative sentence-draw weights of each layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CorpusMix {
    pub single: f64,
    pub category: f64,
    pub video: f64,
    /// Stride-0 clips: one frame repeated, 4 to 8 times.
    pub still_video: f64,
    pub multiview: f64,
    pub pair: f64,
    pub multi_annot: f64,
    pub video_annot: f64,
}

impl CorpusMix {
    pub fn full() -> Self {
        CorpusMix {
            single: 0.30,
            category: 0.05,
            video: 0.15,
            still_video: 0.10,
            multiview: 0.05,
            pair: 0.25,
            multi_annot: 0.05,
            video_annot: 0.05,
        }
    }

    pub fn single_only() -> Self {
        CorpusMix {
            single: 1.0,
            category: 0.0,
            video: 0.0,
            still_video: 0.0,
            multiview: 0.0,
            pair: 0.0,
            multi_annot: 0.0,
            video_annot: 0.0,
        }
    }

    pub fn with_video() -> Self {
        CorpusMix {
            single: 0.5,
            video: 0.3,
            still_video: 0.2,
            ..Self::single_only()
        }
    }

    /// Category groups count as annotated data: their grouping is a class label.
    pub fn with_annotations() -> Self {
        CorpusMix {
            single: 0.5,
            category: 0.1,
            pair: 0.3,
            multi_annot: 0.1,
            ..Self::single_only()
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "full" => Ok(Self::full()),
            "single-only" => Ok(Self::single_only()),
            "+video" => Ok(Self::with_video()),
            "+annotations" => Ok(Self::with_annotations()),
            _ => Err(Error::Config(format!(
                "unknown corpus mix {name:?}; valid: full, single-only, +video, +annotations"
            ))),
        }
    }

    fn weights(&self) -> [f64; 8] {
        [
            self.single,
            self.category,
            self.video,
            self.still_video,
            self.multiview,
            self.pair,
            self.multi_annot,
            self.video_annot,
        ]
    }
}

/// Sentences for corpus slot `index` (a multiview slot yields two).
pub fn generate_slot(seed: u64, index: u64, mix: &CorpusMix, size: usize) -> Result<Vec<VisualSentence>> {
    let mut rng = indexed(seed, "slot", index);
    let weights = mix.weights();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Config("corpus mix has no positive weight".into()));
    }
    let mut u = rng.gen_range(0.0..total);
    let mut pick = 0;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            pick = i;
            break;
        }
        u -= w;
        pick = i;
    }
    let s = derive(seed, "slot-seed", index);
    let out = match pick {
        0 => vec![VisualSentence::single(gen_scene(s, size).0)],
        1 => {
            let g = *CATEGORY_GROUP_SIZES.choose(&mut rng).expect("nonempty");
            let pool: BTreeMap<usize, Vec<Image>> = (0..NUM_CLASSES)
                .map(|c| {
                    let imgs = (0..g)
                        .map(|j| gen_scene_of_class(derive(s, "member", (c * 16 + j) as u64), size, c).0)
                        .collect();
                    (c, imgs)
                })
                .collect();
            vec![build_category_sentence(&pool, g, s)?]
        }
        2 => {
            let clip = VideoClip::generate(s, CLIP_FRAMES);
            let stride = *VIDEO_STRIDES.choose(&mut rng).expect("nonempty");
            vec![clip.sentence(stride, VIDEO_SENTENCE_LEN, s, size)?]
        }
        3 => {
            let img = gen_scene(s, size).0;
            let n = rng.gen_range(4..=8);
            vec![VisualSentence::new(SentenceKind::Video, vec![img; n])?]
        }
        4 => {
            let scene = gen_scene(s, size).1;
            build_multiview_sentences(&scene, MULTIVIEW_AZIMUTH_STEP, MULTIVIEW_VIEWS, s, size)?.1
        }
        5 => {
            let kind = *AnnotationKind::ALL.choose(&mut rng).expect("nonempty");
            let pairs: Vec<AnnotatedPair> = (0..PAIRS_PER_SENTENCE as u64)
                .map(|j| {
                    let ps = derive(s, "pair", j);
                    let (img, scene) = gen_scene(ps, size);
                    AnnotatedPair::from_scene(&scene, &img, kind, ps)
                })
                .collect();
            vec![build_pair_sentence(&pairs)?]
        }
        6 => {
            let pool: Vec<_> = (0..8).map(|j| gen_scene(derive(s, "pool", j), size)).collect();
            let rule = MultiAnnotationRule {
                k: AnnotationKind::ALL.len(),
                m: None,
            };
            vec![build_multi_annotation_sentence(&pool, &AnnotationKind::ALL, rule, s)?]
        }
        _ => {
            let clip = VideoClip::generate(s, CLIP_FRAMES);
            let stride = *VIDEO_STRIDES.choose(&mut rng).expect("nonempty");
            let start = sample_video_start(clip.n_frames, stride, VIDEO_ANNOT_FRAMES, s)?;
            let scenes = clip.scenes(stride, VIDEO_ANNOT_FRAMES, start)?;
            let kind = *[
                AnnotationKind::SegmentationMask,
                AnnotationKind::EdgeMap,
                AnnotationKind::KeypointRendering,
            ]
            .choose(&mut rng)
            .expect("nonempty");
            let frames: Vec<Image> = scenes.iter().map(|sc| sc.render(size)).collect();
            let annots: Vec<Image> = scenes
                .iter()
                .zip(&frames)
                .map(|(sc, f)| derive_annotation(sc, f, kind, s))
                .collect();
            let mode = if rng.gen_bool(0.5) {
                VideoAnnotMode::Interleaved
            } else {
                VideoAnnotMode::Grouped
            };
            vec![build_video_annot_sentence(&frames, &annots, mode)?]
        }
    };
    Ok(out)
}

/// Streams corpus sentences slot by slot until `stop` returns true.
pub fn generate_corpus(
    seed: u64,
    mix: &CorpusMix,
    size: usize,
    mut visit: impl FnMut(VisualSentence) -> Result<bool>,
) -> Result<()> {
    for index in 0.. {
        for s in generate_slot(seed, index, mix, size)? {
            if visit(s)? {
                return Ok(());
            }
        }
    }
    unreachable!("corpus slots are unbounded")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slots_are_deterministic_and_valid() {
        let mix = CorpusMix::full();
        let mut kinds = std::collections::BTreeSet::new();
        for i in 0..300 {
            let a = generate_slot(5, i, &mix, 16).unwrap();
            let b = generate_slot(5, i, &mix, 16).unwrap();
            assert_eq!(a, b);
            for s in &a {
                assert!((1..=16).contains(&s.len()));
                assert!(s.images().iter().all(|im| im.width() == 16 && im.height() == 16));
                kinds.insert(s.kind());
            }
        }
        assert_eq!(kinds.len(), SentenceKind::ALL.len());
    }

    #[test]
    fn single_only_mix_has_no_annotations() {
        for i in 0..40 {
            for s in generate_slot(1, i, &CorpusMix::single_only(), 16).unwrap() {
                assert!(matches!(s.kind(), SentenceKind::Single | SentenceKind::Category));
            }
        }
    }
}
