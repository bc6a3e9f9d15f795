//! Procedural scenes: one flat-colored shape over a gradient background.

use rand::Rng as _;

use crate::image::Image;
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn index(self) -> usize {
        match self {
            ShapeKind::Circle => 0,
            ShapeKind::Square => 1,
            ShapeKind::Triangle => 2,
        }
    }

    /// Canonical outline vertices (unit circumradius). Empty for the circle.
    fn polygon(self) -> Vec<(f64, f64)> {
        match self {
            ShapeKind::Circle => Vec::new(),
            ShapeKind::Square => {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                vec![(s, s), (-s, s), (-s, -s), (s, -s)]
            }
            ShapeKind::Triangle => [90.0f64, 210.0, 330.0]
                .iter()
                .map(|a| (a.to_radians().cos(), a.to_radians().sin()))
                .collect(),
        }
    }

    /// Canonical keypoints: polygon vertices, or four compass points of the circle.
    fn canonical_keypoints(self) -> Vec<(f64, f64)> {
        match self {
            ShapeKind::Circle => vec![(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)],
            _ => self.polygon(),
        }
    }

    /// Point-in-shape test in canonical coordinates (half-planes of the convex outline).
    pub fn contains_canonical(self, u: f64, v: f64) -> bool {
        match self {
            ShapeKind::Circle => u * u + v * v <= 1.0,
            _ => {
                let poly = self.polygon();
                (0..poly.len()).all(|i| {
                    let (ax, ay) = poly[i];
                    let (bx, by) = poly[(i + 1) % poly.len()];
                    (bx - ax) * (v - ay) - (by - ay) * (u - ax) >= 0.0
                })
            }
        }
    }
}

/// Shape fill colors; `class_id = shape_index * COLOR_BUCKETS + bucket`.
/// Lumas (97, 124, 67, 191) stay apart under jitter, so a grayscale
/// rendering still determines the bucket.
pub const SHAPE_COLORS: [[u8; 3]; 4] = [[230, 40, 40], [40, 180, 60], [30, 60, 200], [230, 200, 40]];
pub const COLOR_BUCKETS: usize = SHAPE_COLORS.len();
pub const NUM_CLASSES: usize = 3 * COLOR_BUCKETS;

/// Muted background palette; backgrounds blend two entries along a direction.
/// Lumas are about 20 apart, more than the jitter can bridge.
pub const BACKGROUND_COLORS: [[u8; 3]; 6] = [
    [95, 80, 70],
    [80, 110, 135],
    [110, 135, 105],
    [175, 145, 165],
    [190, 180, 140],
    [205, 210, 215],
];

pub const MIN_SCALE: f64 = 0.15;
pub const MAX_SCALE: f64 = 0.35;

/// Linear 2x2 map applied after rotation, e.g. the oblique view of a multiview orbit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Warp {
    pub m: [[f64; 2]; 2],
}

impl Warp {
    pub const IDENTITY: Warp = Warp {
        m: [[1.0, 0.0], [0.0, 1.0]],
    };

    fn apply(&self, (x, y): (f64, f64)) -> (f64, f64) {
        (
            self.m[0][0] * x + self.m[0][1] * y,
            self.m[1][0] * x + self.m[1][1] * y,
        )
    }

    fn inverse(&self) -> Warp {
        let [[a, b], [c, d]] = self.m;
        let det = a * d - b * c;
        Warp {
            m: [[d / det, -b / det], [-c / det, a / det]],
        }
    }

    /// Largest stretch factor (operator 2-norm).
    fn norm(&self) -> f64 {
        let [[a, b], [c, d]] = self.m;
        let s = a * a + b * b + c * c + d * d;
        let det = a * d - b * c;
        ((s + (s * s - 4.0 * det * det).max(0.0).sqrt()) / 2.0).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Background {
    pub from: [u8; 3],
    pub to: [u8; 3],
    /// Gradient direction in degrees.
    pub direction: f64,
    /// Stripe texture amplitude in 8-bit levels.
    pub stripe_amplitude: f64,
    pub stripe_period: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub shape_kind: ShapeKind,
    pub color: [u8; 3],
    pub color_bucket: usize,
    /// Center in normalized image coordinates.
    pub center: (f64, f64),
    /// Circumradius as a fraction of the image side.
    pub scale: f64,
    pub orientation: f64,
    pub warp: Warp,
    pub background: Background,
}

impl Scene {
    pub fn class_id(&self) -> usize {
        self.shape_kind.index() * COLOR_BUCKETS + self.color_bucket
    }

    /// Radius of the disc that always contains the shape, normalized.
    pub fn extent(&self) -> f64 {
        self.scale * self.warp.norm()
    }

    fn to_image(&self, p: (f64, f64)) -> (f64, f64) {
        let (s, c) = self.orientation.to_radians().sin_cos();
        let (x, y) = (p.0 * self.scale, p.1 * self.scale);
        let r = (c * x - s * y, s * x + c * y);
        let w = self.warp.apply(r);
        (self.center.0 + w.0, self.center.1 + w.1)
    }

    /// Keypoints in normalized image coordinates, all on the outline.
    pub fn keypoints(&self) -> Vec<(f64, f64)> {
        self.shape_kind
            .canonical_keypoints()
            .into_iter()
            .map(|p| self.to_image(p))
            .collect()
    }

    /// Whether the normalized point `(x, y)` lies inside the shape.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let inv = self.warp.inverse();
        let (dx, dy) = inv.apply((x - self.center.0, y - self.center.1));
        let (s, c) = self.orientation.to_radians().sin_cos();
        let u = (c * dx + s * dy) / self.scale;
        let v = (-s * dx + c * dy) / self.scale;
        self.shape_kind.contains_canonical(u, v)
    }

    /// Per-pixel coverage by pixel-center sampling, row-major.
    pub fn mask(&self, size: usize) -> Vec<bool> {
        let n = size as f64;
        let mut out = Vec::with_capacity(size * size);
        for y in 0..size {
            for x in 0..size {
                out.push(self.contains((x as f64 + 0.5) / n, (y as f64 + 0.5) / n));
            }
        }
        out
    }

    pub fn background_at(&self, x: usize, y: usize, size: usize) -> [u8; 3] {
        let bg = &self.background;
        let n = size as f64;
        let (px, py) = ((x as f64 + 0.5) / n, (y as f64 + 0.5) / n);
        let (s, c) = bg.direction.to_radians().sin_cos();
        // Projection onto the gradient direction, mapped into [0, 1].
        let t = (((px - 0.5) * c + (py - 0.5) * s) / std::f64::consts::SQRT_2 + 0.5).clamp(0.0, 1.0);
        let stripe = bg.stripe_amplitude
            * (2.0 * std::f64::consts::PI * (px * c - py * s) * n / bg.stripe_period).sin();
        let mut out = [0u8; 3];
        for ch in 0..3 {
            let v = f64::from(bg.from[ch]) * (1.0 - t) + f64::from(bg.to[ch]) * t + stripe;
            out[ch] = v.round().clamp(0.0, 255.0) as u8;
        }
        out
    }

    pub fn render(&self, size: usize) -> Image {
        let mask = self.mask(size);
        let mut img = Image::new(size, size);
        for y in 0..size {
            for x in 0..size {
                let rgb = if mask[y * size + x] {
                    self.color
                } else {
                    self.background_at(x, y, size)
                };
                img.set(x, y, rgb);
            }
        }
        img
    }
}

fn jitter(rng: &mut Rng, base: [u8; 3], amount: i32) -> [u8; 3] {
    let mut out = [0u8; 3];
    for ch in 0..3 {
        out[ch] = (i32::from(base[ch]) + rng.gen_range(-amount..=amount)).clamp(0, 255) as u8;
    }
    out
}

/// Random scene, optionally forced to one class.
pub fn sample_scene(rng: &mut Rng, class_id: Option<usize>) -> Scene {
    let class = class_id.unwrap_or_else(|| rng.gen_range(0..NUM_CLASSES)) % NUM_CLASSES;
    let shape_kind = ShapeKind::ALL[class / COLOR_BUCKETS];
    let color_bucket = class % COLOR_BUCKETS;
    let color = jitter(rng, SHAPE_COLORS[color_bucket], 10);
    let scale = rng.gen_range(MIN_SCALE..=MAX_SCALE);
    let center = (
        rng.gen_range(scale..=1.0 - scale),
        rng.gen_range(scale..=1.0 - scale),
    );
    let orientation = rng.gen_range(0.0..360.0);
    let a = rng.gen_range(0..BACKGROUND_COLORS.len());
    let b = rng.gen_range(0..BACKGROUND_COLORS.len());
    let background = Background {
        from: jitter(rng, BACKGROUND_COLORS[a], 6),
        to: jitter(rng, BACKGROUND_COLORS[b], 6),
        direction: rng.gen_range(0.0..360.0),
        stripe_amplitude: rng.gen_range(0.0..6.0),
        stripe_period: rng.gen_range(6.0..12.0),
    };
    Scene {
        shape_kind,
        color,
        color_bucket,
        center,
        scale,
        orientation,
        warp: Warp::IDENTITY,
        background,
    }
}

/// Deterministic scene for `seed`, rendered at `size x size`.
pub fn gen_scene(seed: u64, size: usize) -> (Image, Scene) {
    let mut rng = crate::rng::indexed(seed, "scene", 0);
    let scene = sample_scene(&mut rng, None);
    (scene.render(size), scene)
}

/// Like [`gen_scene`] but with the class fixed.
pub fn gen_scene_of_class(seed: u64, size: usize, class_id: usize) -> (Image, Scene) {
    let mut rng = crate::rng::indexed(seed, "scene", 0);
    let scene = sample_scene(&mut rng, Some(class_id));
    (scene.render(size), scene)
}

pub(crate) fn oblique_warp(elevation_deg: f64, zoom: f64) -> Warp {
    let (s, c) = elevation_deg.to_radians().sin_cos();
    Warp {
        m: [[zoom, 0.5 * s * zoom], [0.0, c * zoom]],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_image() {
        for seed in [0u64, 1, 99, u64::MAX] {
            assert_eq!(gen_scene(seed, 32), gen_scene(seed, 32));
        }
        assert_ne!(gen_scene(1, 32).0, gen_scene(2, 32).0);
    }

    #[test]
    fn scale_and_bounds_contracts() {
        for seed in 0..500 {
            let (_, s) = gen_scene(seed, 32);
            assert!((MIN_SCALE..=MAX_SCALE).contains(&s.scale));
            let r = s.extent();
            assert!(s.center.0 - r >= -1e-12 && s.center.0 + r <= 1.0 + 1e-12);
            assert!(s.center.1 - r >= -1e-12 && s.center.1 + r <= 1.0 + 1e-12);
            assert!(s.class_id() < NUM_CLASSES);
        }
    }

    #[test]
    fn keypoints_lie_on_outline() {
        for seed in 0..200 {
            let (_, s) = gen_scene(seed, 32);
            for (x, y) in s.keypoints() {
                let (dx, dy) = (x - s.center.0, y - s.center.1);
                assert!(s.contains(s.center.0 + dx * 0.999, s.center.1 + dy * 0.999));
                assert!(!s.contains(s.center.0 + dx * 1.001, s.center.1 + dy * 1.001));
            }
        }
    }

    #[test]
    fn class_is_forced() {
        for c in 0..NUM_CLASSES {
            assert_eq!(gen_scene_of_class(c as u64 * 31, 32, c).1.class_id(), c);
        }
    }
}
