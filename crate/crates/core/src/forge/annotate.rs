//! Annotations rendered as images, each exactly derivable from a [`Scene`].

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;

use super::scene::{Scene, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::image::Image;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnnotationKind {
    SegmentationMask,
    EdgeMap,
    GrayscaleInput,
    InpaintingCorrupted,
    KeypointRendering,
}

impl AnnotationKind {
    pub const ALL: [AnnotationKind; 5] = [
        AnnotationKind::SegmentationMask,
        AnnotationKind::EdgeMap,
        AnnotationKind::GrayscaleInput,
        AnnotationKind::InpaintingCorrupted,
        AnnotationKind::KeypointRendering,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AnnotationKind::SegmentationMask => "segmentation_mask",
            AnnotationKind::EdgeMap => "edge_map",
            AnnotationKind::GrayscaleInput => "grayscale_input",
            AnnotationKind::InpaintingCorrupted => "inpainting_corrupted",
            AnnotationKind::KeypointRendering => "keypoint_rendering",
        }
    }

    /// True when the derived image is the task input and the clean scene is
    /// the target (colorization, inpainting). Otherwise the scene image is
    /// the input and the derived image the target.
    pub fn derived_is_input(self) -> bool {
        matches!(
            self,
            AnnotationKind::GrayscaleInput | AnnotationKind::InpaintingCorrupted
        )
    }
}

impl fmt::Display for AnnotationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AnnotationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AnnotationKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown annotation kind {s:?}")))
    }
}

/// Segmentation color of class `c` (class 0 is background; scene classes are 1-based).
pub fn segmentation_color(class: usize) -> [u8; 3] {
    if class == 0 {
        return [0, 0, 0];
    }
    // Evenly spaced hues at full saturation, two brightness levels.
    let i = class - 1;
    let hue = (i % 6) as f64 * 60.0 + (i / 6) as f64 * 30.0;
    let v = if i % 2 == 0 { 255.0 } else { 200.0 };
    hsv(hue, 1.0, v)
}

fn hsv(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = (h % 360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [(r + m).round() as u8, (g + m).round() as u8, (b + m).round() as u8]
}

/// Keypoint disc colors, by keypoint index.
pub const KEYPOINT_COLORS: [[u8; 3]; 4] = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 255]];

pub fn luma(rgb: [u8; 3]) -> u8 {
    let y = 0.299 * f64::from(rgb[0]) + 0.587 * f64::from(rgb[1]) + 0.114 * f64::from(rgb[2]);
    y.round().clamp(0.0, 255.0) as u8
}

/// Axis-aligned pixel rectangle `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl PixelBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }
}

/// One to three seeded boxes, each between 1/8 and 1/3 of the side.
pub fn inpainting_boxes(seed: u64, size: usize) -> Vec<PixelBox> {
    let mut rng = crate::rng::indexed(seed, "inpaint", 0);
    let count = rng.gen_range(1..=3);
    let lo = (size / 8).max(1);
    let hi = (size / 3).max(lo);
    (0..count)
        .map(|_| {
            let w = rng.gen_range(lo..=hi);
            let h = rng.gen_range(lo..=hi);
            let x0 = rng.gen_range(0..=size - w);
            let y0 = rng.gen_range(0..=size - h);
            PixelBox {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
            }
        })
        .collect()
}

/// Mask pixels with at least one 4-neighbour outside the mask or the image.
pub fn mask_boundary(mask: &[bool], size: usize) -> Vec<bool> {
    let at = |x: isize, y: isize| {
        x >= 0 && y >= 0 && (x as usize) < size && (y as usize) < size && mask[y as usize * size + x as usize]
    };
    let mut out = vec![false; size * size];
    for y in 0..size as isize {
        for x in 0..size as isize {
            if at(x, y) && !(at(x - 1, y) && at(x + 1, y) && at(x, y - 1) && at(x, y + 1)) {
                out[y as usize * size + x as usize] = true;
            }
        }
    }
    out
}

pub fn keypoint_radius(size: usize) -> f64 {
    (size as f64 / 20.0).max(1.2)
}

/// Derives the `kind` annotation of a scene image. `seed` only matters for
/// inpainting, where it places the corruption boxes.
pub fn derive_annotation(scene: &Scene, img: &Image, kind: AnnotationKind, seed: u64) -> Image {
    let size = img.width();
    match kind {
        AnnotationKind::SegmentationMask => {
            let mask = scene.mask(size);
            let color = segmentation_color(scene.class_id() + 1);
            let mut out = Image::new(size, size);
            for (i, &m) in mask.iter().enumerate() {
                if m {
                    out.set(i % size, i / size, color);
                }
            }
            out
        }
        AnnotationKind::EdgeMap => {
            let edge = mask_boundary(&scene.mask(size), size);
            let mut out = Image::new(size, size);
            for (i, &e) in edge.iter().enumerate() {
                if e {
                    out.set(i % size, i / size, [255, 255, 255]);
                }
            }
            out
        }
        AnnotationKind::GrayscaleInput => {
            let mut out = img.clone();
            for y in 0..img.height() {
                for x in 0..size {
                    let l = luma(img.get(x, y));
                    out.set(x, y, [l, l, l]);
                }
            }
            out
        }
        AnnotationKind::InpaintingCorrupted => {
            let mut out = img.clone();
            for b in inpainting_boxes(seed, size) {
                for y in b.y0..b.y1 {
                    for x in b.x0..b.x1 {
                        out.set(x, y, [0, 0, 0]);
                    }
                }
            }
            out
        }
        AnnotationKind::KeypointRendering => {
            let mut out = Image::new(size, size);
            let r = keypoint_radius(size);
            let n = size as f64;
            for (k, (kx, ky)) in scene.keypoints().into_iter().enumerate() {
                let color = KEYPOINT_COLORS[k % KEYPOINT_COLORS.len()];
                let (cx, cy) = (kx * n, ky * n);
                for y in 0..size {
                    for x in 0..size {
                        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                        if dx * dx + dy * dy <= r * r {
                            out.set(x, y, color);
                        }
                    }
                }
            }
            out
        }
    }
}

fn dist2(a: [u8; 3], b: [u8; 3]) -> i32 {
    (0..3).map(|c| (i32::from(a[c]) - i32::from(b[c])).pow(2)).sum()
}

/// Class grid of a segmentation image: every pixel goes to the nearest
/// palette color (0 = background, `1..=NUM_CLASSES` = scene classes).
pub fn segmentation_classes(img: &Image) -> Vec<usize> {
    let palette: Vec<[u8; 3]> = (0..=NUM_CLASSES).map(segmentation_color).collect();
    img.pixels()
        .map(|p| {
            (0..palette.len())
                .min_by_key(|&c| dist2(p, palette[c]))
                .expect("nonempty palette")
        })
        .collect()
}

/// Keypoint centroids (normalized) recovered from a keypoint rendering:
/// the mean position of pixels closer to the keypoint color than to black
/// or any other keypoint color. `None` when no pixel matches.
pub fn keypoints_from_image(img: &Image, count: usize) -> Vec<Option<(f64, f64)>> {
    let size = img.width() as f64;
    let mut acc = vec![(0.0, 0.0, 0usize); count];
    for y in 0..img.height() {
        for x in 0..img.width() {
            let p = img.get(x, y);
            let mut best = (dist2(p, [0, 0, 0]), None);
            for (k, c) in KEYPOINT_COLORS.iter().enumerate().take(count) {
                let d = dist2(p, *c);
                if d < best.0 {
                    best = (d, Some(k));
                }
            }
            if let Some(k) = best.1 {
                acc[k].0 += x as f64 + 0.5;
                acc[k].1 += y as f64 + 0.5;
                acc[k].2 += 1;
            }
        }
    }
    acc.into_iter()
        .map(|(sx, sy, n)| (n > 0).then(|| (sx / n as f64 / size, sy / n as f64 / size)))
        .collect()
}
