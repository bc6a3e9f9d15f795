//! Builders for every visual-sentence layout: ordered image lists of 1..=16.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::annotate::{derive_annotation, AnnotationKind};
use super::scene::{oblique_warp, sample_scene, Scene};
use crate::error::{Error, Result};
use crate::image::Image;

pub const MAX_SENTENCE_IMAGES: usize = 16;

/// Default video subsampling strides.
pub const VIDEO_STRIDES: [usize; 3] = [10, 20, 30];
pub const VIDEO_SENTENCE_LEN: usize = 16;
pub const CATEGORY_GROUP_SIZES: [usize; 4] = [2, 4, 8, 16];
pub const MULTIVIEW_VIEWS: usize = 24;
pub const MULTIVIEW_AZIMUTH_STEP: f64 = 15.0;
pub const MULTIVIEW_SENTENCE_VIEWS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SentenceKind {
    Single,
    Video,
    Multiview,
    Category,
    Pair,
    MultiAnnot,
    VideoAnnotInterleaved,
    VideoAnnotGrouped,
}

impl SentenceKind {
    pub const ALL: [SentenceKind; 8] = [
        SentenceKind::Single,
        SentenceKind::Video,
        SentenceKind::Multiview,
        SentenceKind::Category,
        SentenceKind::Pair,
        SentenceKind::MultiAnnot,
        SentenceKind::VideoAnnotInterleaved,
        SentenceKind::VideoAnnotGrouped,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SentenceKind::Single => "single",
            SentenceKind::Video => "video",
            SentenceKind::Multiview => "multiview",
            SentenceKind::Category => "category",
            SentenceKind::Pair => "pair",
            SentenceKind::MultiAnnot => "multi_annot",
            SentenceKind::VideoAnnotInterleaved => "video_annot_interleaved",
            SentenceKind::VideoAnnotGrouped => "video_annot_grouped",
        }
    }
}

impl fmt::Display for SentenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SentenceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SentenceKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown sentence kind {s:?}")))
    }
}

/// Ordered images forming one training sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualSentence {
    images: Vec<Image>,
    kind: SentenceKind,
}

impl VisualSentence {
    pub fn new(kind: SentenceKind, images: Vec<Image>) -> Result<Self> {
        if images.is_empty() || images.len() > MAX_SENTENCE_IMAGES {
            return Err(Error::Format(format!(
                "a visual sentence holds 1..={MAX_SENTENCE_IMAGES} images, got {}",
                images.len()
            )));
        }
        let (w, h) = (images[0].width(), images[0].height());
        if images.iter().any(|i| i.width() != w || i.height() != h) {
            return Err(Error::dim("images in a sentence must share one size"));
        }
        Ok(VisualSentence { images, kind })
    }

    pub fn single(img: Image) -> Self {
        VisualSentence {
            images: vec![img],
            kind: SentenceKind::Single,
        }
    }

    pub fn kind(&self) -> SentenceKind {
        self.kind
    }

    pub fn images(&self) -> &[Image] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Frame indices `start, start + stride, ...` of a subsampled clip.
pub fn video_frame_indices(
    n_frames: usize,
    stride: usize,
    length: usize,
    start: usize,
) -> Result<Vec<usize>> {
    let span = (length.max(1) - 1) * stride;
    if length == 0 || start + span >= n_frames {
        return Err(Error::InsufficientFrames {
            required: start + span + 1,
            available: n_frames,
        });
    }
    Ok((0..length).map(|i| start + i * stride).collect())
}

/// Uniform random start among all starts that fit the clip.
pub fn sample_video_start(n_frames: usize, stride: usize, length: usize, seed: u64) -> Result<usize> {
    let span = (length.max(1) - 1) * stride;
    if length == 0 || span >= n_frames {
        return Err(Error::InsufficientFrames {
            required: span + 1,
            available: n_frames,
        });
    }
    let mut rng = crate::rng::indexed(seed, "video-start", 0);
    Ok(rng.gen_range(0..n_frames - span))
}

/// Subsamples a frame list at `stride` from a seeded random start.
pub fn build_video_sentence(
    video: &[Image],
    stride: usize,
    length: usize,
    start_seed: u64,
) -> Result<VisualSentence> {
    let start = sample_video_start(video.len(), stride, length, start_seed)?;
    let idx = video_frame_indices(video.len(), stride, length, start)?;
    VisualSentence::new(
        SentenceKind::Video,
        idx.into_iter().map(|i| video[i].clone()).collect(),
    )
}

/// A procedural clip: one scene moving along a straight line and spinning
/// at a constant rate, one frame per tick. Frames are rendered on demand.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub scene: Scene,
    pub n_frames: usize,
    pub velocity: (f64, f64),
    pub spin: f64,
}

impl VideoClip {
    pub fn generate(seed: u64, n_frames: usize) -> Self {
        let mut rng = crate::rng::indexed(seed, "video", 0);
        let scene = sample_scene(&mut rng, None);
        let r = scene.extent();
        let end = (rng.gen_range(r..=1.0 - r), rng.gen_range(r..=1.0 - r));
        let denom = n_frames.max(2) as f64 - 1.0;
        VideoClip {
            velocity: ((end.0 - scene.center.0) / denom, (end.1 - scene.center.1) / denom),
            spin: rng.gen_range(-1.0..=1.0),
            scene,
            n_frames,
        }
    }

    pub fn scene_at(&self, t: usize) -> Scene {
        let mut s = self.scene.clone();
        s.center.0 += self.velocity.0 * t as f64;
        s.center.1 += self.velocity.1 * t as f64;
        s.orientation = (s.orientation + self.spin * t as f64).rem_euclid(360.0);
        s
    }

    pub fn frame(&self, t: usize, size: usize) -> Image {
        self.scene_at(t).render(size)
    }

    /// Video sentence rendered directly from the clip, with a seeded start.
    pub fn sentence(&self, stride: usize, length: usize, start_seed: u64, size: usize) -> Result<VisualSentence> {
        let start = sample_video_start(self.n_frames, stride, length, start_seed)?;
        self.sentence_from(stride, length, start, size)
    }

    pub fn sentence_from(&self, stride: usize, length: usize, start: usize, size: usize) -> Result<VisualSentence> {
        let idx = video_frame_indices(self.n_frames, stride, length, start)?;
        VisualSentence::new(
            SentenceKind::Video,
            idx.into_iter().map(|t| self.frame(t, size)).collect(),
        )
    }

    /// Scenes behind [`VideoClip::sentence`] (for deriving frame annotations).
    pub fn scenes(&self, stride: usize, length: usize, start: usize) -> Result<Vec<Scene>> {
        Ok(video_frame_indices(self.n_frames, stride, length, start)?
            .into_iter()
            .map(|t| self.scene_at(t))
            .collect())
    }
}

/// Orbit parameters drawn once per multiview sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Orbit {
    pub elevation: f64,
    pub radius: f64,
}

impl Orbit {
    pub fn sample(seed: u64) -> Self {
        let mut rng = crate::rng::indexed(seed, "orbit", 0);
        Orbit {
            elevation: rng.gen_range(-45.0..=45.0),
            radius: rng.gen_range(1.5..=2.2),
        }
    }
}

/// Scene as seen from azimuth `view * azimuth_step` on the orbit.
pub fn multiview_scene(scene: &Scene, orbit: Orbit, view: usize, azimuth_step: f64) -> Scene {
    let mut s = scene.clone();
    s.orientation = (s.orientation + azimuth_step * view as f64).rem_euclid(360.0);
    s.warp = oblique_warp(orbit.elevation, 1.5 / orbit.radius);
    let r = s.extent();
    s.center = (s.center.0.clamp(r, 1.0 - r), s.center.1.clamp(r, 1.0 - r));
    s
}

/// Renders `n_views` azimuth steps of the scene on a seeded orbit and splits
/// them into sentences of at most [`MULTIVIEW_SENTENCE_VIEWS`] images.
pub fn build_multiview_sentences(
    scene: &Scene,
    azimuth_step: f64,
    n_views: usize,
    seed: u64,
    size: usize,
) -> Result<(Orbit, Vec<VisualSentence>)> {
    if n_views == 0 || n_views as f64 * azimuth_step > 360.0 + azimuth_step {
        return Err(Error::Format(format!(
            "{n_views} views of {azimuth_step} degrees exceed one orbit"
        )));
    }
    let orbit = Orbit::sample(seed);
    let views: Vec<Image> = (0..n_views)
        .map(|v| multiview_scene(scene, orbit, v, azimuth_step).render(size))
        .collect();
    let sentences = views
        .chunks(MULTIVIEW_SENTENCE_VIEWS)
        .map(|c| VisualSentence::new(SentenceKind::Multiview, c.to_vec()))
        .collect::<Result<_>>()?;
    Ok((orbit, sentences))
}

/// `16 / group_size` classes, `group_size` images each, drawn from a pool
/// keyed by class id.
pub fn build_category_sentence(
    pool: &BTreeMap<usize, Vec<Image>>,
    group_size: usize,
    seed: u64,
) -> Result<VisualSentence> {
    if group_size == 0 || MAX_SENTENCE_IMAGES % group_size != 0 {
        return Err(Error::Format(format!(
            "group size {group_size} does not divide {MAX_SENTENCE_IMAGES}"
        )));
    }
    let groups = MAX_SENTENCE_IMAGES / group_size;
    let mut eligible: Vec<usize> = pool
        .iter()
        .filter(|(_, imgs)| imgs.len() >= group_size)
        .map(|(c, _)| *c)
        .collect();
    if eligible.len() < groups {
        return Err(Error::InsufficientData(format!(
            "{groups} classes with at least {group_size} images needed, pool has {}",
            eligible.len()
        )));
    }
    let mut rng = crate::rng::indexed(seed, "category", 0);
    eligible.shuffle(&mut rng);
    let mut images = Vec::with_capacity(MAX_SENTENCE_IMAGES);
    for class in &eligible[..groups] {
        let imgs = &pool[class];
        for i in rand::seq::index::sample(&mut rng, imgs.len(), group_size) {
            images.push(imgs[i].clone());
        }
    }
    VisualSentence::new(SentenceKind::Category, images)
}

/// An (input, target) example of one annotation task.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnotatedPair {
    pub kind: AnnotationKind,
    pub input: Image,
    pub target: Image,
}

impl AnnotatedPair {
    /// Orients the scene image and its derived annotation by task direction.
    pub fn from_scene(scene: &Scene, img: &Image, kind: AnnotationKind, seed: u64) -> Self {
        let derived = derive_annotation(scene, img, kind, seed);
        let (input, target) = if kind.derived_is_input() {
            (derived, img.clone())
        } else {
            (img.clone(), derived)
        };
        AnnotatedPair {
            kind,
            input,
            target,
        }
    }
}

pub const PAIRS_PER_SENTENCE: usize = 8;

/// `input1, target1, input2, target2, ...` from exactly eight same-kind pairs.
pub fn build_pair_sentence(pairs: &[AnnotatedPair]) -> Result<VisualSentence> {
    if pairs.len() != PAIRS_PER_SENTENCE {
        return Err(Error::Format(format!(
            "pair sentence needs {PAIRS_PER_SENTENCE} pairs, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|p| p.kind != pairs[0].kind) {
        return Err(Error::Format("pair sentence mixes annotation kinds".into()));
    }
    let images = pairs
        .iter()
        .flat_map(|p| [p.input.clone(), p.target.clone()])
        .collect();
    VisualSentence::new(SentenceKind::Pair, images)
}

/// Tuple-length rule for multi-annotation sentences: `k` annotation kinds
/// available, tuples of `m` images (the input plus `m - 1` annotations).
/// `m = None` draws it uniformly from `1..=k+1` per tuple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MultiAnnotationRule {
    pub k: usize,
    pub m: Option<usize>,
}

impl MultiAnnotationRule {
    pub fn validate(&self) -> Result<()> {
        if self.k + 1 > MAX_SENTENCE_IMAGES {
            return Err(Error::Format(format!("k + 1 = {} exceeds 16", self.k + 1)));
        }
        if let Some(m) = self.m {
            if m == 0 || m > self.k + 1 {
                return Err(Error::Format(format!("tuple length {m} outside 1..={}", self.k + 1)));
            }
        }
        Ok(())
    }

    pub fn sample_m(&self, rng: &mut crate::rng::Rng) -> usize {
        self.m.unwrap_or_else(|| rng.gen_range(1..=self.k + 1))
    }
}

/// Appends (input + sampled annotations) tuples from random pool scenes
/// until the next tuple would overflow 16 images.
pub fn build_multi_annotation_sentence(
    scene_pool: &[(Image, Scene)],
    kinds: &[AnnotationKind],
    rule: MultiAnnotationRule,
    seed: u64,
) -> Result<VisualSentence> {
    rule.validate()?;
    if kinds.len() != rule.k {
        return Err(Error::Format(format!(
            "rule expects {} annotation kinds, got {}",
            rule.k,
            kinds.len()
        )));
    }
    if scene_pool.is_empty() {
        return Err(Error::InsufficientData("empty scene pool".into()));
    }
    let mut rng = crate::rng::indexed(seed, "multi-annot", 0);
    let mut images = Vec::new();
    let mut tuple = 0u64;
    loop {
        let m = rule.sample_m(&mut rng);
        if images.len() + m > MAX_SENTENCE_IMAGES {
            break;
        }
        let (img, scene) = &scene_pool[rng.gen_range(0..scene_pool.len())];
        let mut chosen = rand::seq::index::sample(&mut rng, kinds.len(), m - 1).into_vec();
        chosen.sort_unstable();
        images.push(img.clone());
        for i in chosen {
            images.push(derive_annotation(scene, img, kinds[i], crate::rng::derive(seed, "tuple", tuple)));
        }
        tuple += 1;
    }
    VisualSentence::new(SentenceKind::MultiAnnot, images)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VideoAnnotMode {
    Interleaved,
    Grouped,
}

pub const VIDEO_ANNOT_FRAMES: usize = 8;

/// Eight frames with their annotations, interleaved `f1 a1 f2 a2 ...` or
/// grouped `f1 .. f8 a1 .. a8`.
pub fn build_video_annot_sentence(
    frames: &[Image],
    annots: &[Image],
    mode: VideoAnnotMode,
) -> Result<VisualSentence> {
    if frames.len() != VIDEO_ANNOT_FRAMES || annots.len() != VIDEO_ANNOT_FRAMES {
        return Err(Error::Format(format!(
            "video annotation sentence needs {VIDEO_ANNOT_FRAMES} frames and annotations, got {} and {}",
            frames.len(),
            annots.len()
        )));
    }
    let (images, kind) = match mode {
        VideoAnnotMode::Interleaved => (
            frames
                .iter()
                .zip(annots)
                .flat_map(|(f, a)| [f.clone(), a.clone()])
                .collect(),
            SentenceKind::VideoAnnotInterleaved,
        ),
        VideoAnnotMode::Grouped => (
            frames.iter().chain(annots).cloned().collect(),
            SentenceKind::VideoAnnotGrouped,
        ),
    };
    VisualSentence::new(kind, images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forge::scene::gen_scene;

    fn solid(v: u8) -> Image {
        Image::filled(4, 4, [v, v, v])
    }

    #[test]
    fn frame_indices_arithmetic() {
        let idx = video_frame_indices(200, 10, 16, 5).unwrap();
        assert_eq!(idx, (0..16).map(|i| 5 + 10 * i).collect::<Vec<_>>());
        assert_eq!(*idx.last().unwrap(), 155);
    }

    #[test]
    fn short_video_is_an_error() {
        let video: Vec<Image> = (0..10).map(|i| solid(i as u8)).collect();
        let err = build_video_sentence(&video, 30, 16, 0).unwrap_err();
        assert!(matches!(err, Error::InsufficientFrames { required: 451, available: 10 }));
    }

    #[test]
    fn video_sentence_follows_stride() {
        let video: Vec<Image> = (0..200).map(|i| solid(i as u8)).collect();
        for seed in 0..20 {
            let s = build_video_sentence(&video, 10, 16, seed).unwrap();
            let first = s.images()[0].get(0, 0)[0] as usize;
            for (i, img) in s.images().iter().enumerate() {
                assert_eq!(img.get(0, 0)[0] as usize, first + 10 * i);
            }
        }
    }

    #[test]
    fn multiview_orbit_is_full_circle() {
        let (_, scene) = gen_scene(3, 16);
        assert_eq!(MULTIVIEW_VIEWS as f64 * MULTIVIEW_AZIMUTH_STEP, 360.0);
        let (orbit, sents) = build_multiview_sentences(&scene, 15.0, 24, 9, 16).unwrap();
        assert!((-45.0..=45.0).contains(&orbit.elevation));
        assert!((1.5..=2.2).contains(&orbit.radius));
        assert_eq!(sents.iter().map(|s| s.len()).collect::<Vec<_>>(), vec![12, 12]);
        assert!(build_multiview_sentences(&scene, 15.0, 26, 9, 16).is_err());
    }

    #[test]
    fn category_groups_share_class() {
        let mut pool: BTreeMap<usize, Vec<Image>> = BTreeMap::new();
        for c in 0..8usize {
            pool.insert(c, (0..16).map(|i| solid((c * 16 + i) as u8)).collect());
        }
        for g in CATEGORY_GROUP_SIZES {
            let s = build_category_sentence(&pool, g, 42).unwrap();
            assert_eq!(s.len(), 16);
            for group in s.images().chunks(g) {
                let class = group[0].get(0, 0)[0] / 16;
                assert!(group.iter().all(|i| i.get(0, 0)[0] / 16 == class));
            }
        }
        let small: BTreeMap<usize, Vec<Image>> = [(0, vec![solid(1)])].into_iter().collect();
        assert!(matches!(build_category_sentence(&small, 2, 0), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn pair_sentence_contract() {
        let pairs: Vec<AnnotatedPair> = (0..8)
            .map(|s| {
                let (img, scene) = gen_scene(s, 16);
                AnnotatedPair::from_scene(&scene, &img, AnnotationKind::EdgeMap, s)
            })
            .collect();
        let s = build_pair_sentence(&pairs).unwrap();
        assert_eq!(s.len(), 16);
        for (i, p) in pairs.iter().enumerate() {
            assert_eq!(s.images()[2 * i], p.input);
            assert_eq!(s.images()[2 * i + 1], p.target);
        }
        assert!(build_pair_sentence(&pairs[..7]).is_err());
        let mut mixed = pairs.clone();
        mixed[3].kind = AnnotationKind::SegmentationMask;
        assert!(build_pair_sentence(&mixed).is_err());
    }

    #[test]
    fn multi_annotation_maximal_tuples_fill_sixteen() {
        let pool: Vec<(Image, Scene)> = (0..5).map(|s| gen_scene(s, 16)).collect();
        let kinds = [AnnotationKind::SegmentationMask, AnnotationKind::EdgeMap, AnnotationKind::GrayscaleInput];
        let rule = MultiAnnotationRule { k: 3, m: Some(4) };
        let s = build_multi_annotation_sentence(&pool, &kinds, rule, 1).unwrap();
        assert_eq!(s.len(), 16);
        assert!(MultiAnnotationRule { k: 16, m: None }.validate().is_err());
        assert!(MultiAnnotationRule { k: 3, m: Some(5) }.validate().is_err());
    }

    #[test]
    fn video_annotation_orders() {
        let f: Vec<Image> = (0..8).map(solid).collect();
        let a: Vec<Image> = (100..108).map(solid).collect();
        let inter = build_video_annot_sentence(&f, &a, VideoAnnotMode::Interleaved).unwrap();
        let grouped = build_video_annot_sentence(&f, &a, VideoAnnotMode::Grouped).unwrap();
        assert_eq!(inter.len(), 16);
        assert_eq!(grouped.len(), 16);
        assert_eq!(&inter.images()[..4], &[f[0].clone(), a[0].clone(), f[1].clone(), a[1].clone()]);
        assert_eq!(&grouped.images()[..2], &f[..2]);
        assert_eq!(&grouped.images()[8..10], &a[..2]);
        assert!(build_video_annot_sentence(&f[..7], &a, VideoAnnotMode::Grouped).is_err());
    }

    #[test]
    fn sentence_length_bounds() {
        assert!(VisualSentence::new(SentenceKind::Video, vec![]).is_err());
        assert!(VisualSentence::new(SentenceKind::Video, vec![solid(0); 17]).is_err());
        assert!(VisualSentence::new(SentenceKind::Video, vec![solid(0), Image::new(2, 2)]).is_err());
    }
}
