mod support;

use lvm_core::forge::{
    derive_annotation, gen_scene, AnnotationKind, ManifestEntry, MultiAnnotationRule, Scene, SentenceKind, ShapeKind,
};
use lvm_core::pack::{corpus_stats, DataCategory};
use lvm_core::rng;
use rand::Rng;

/// Point-in-shape from the scene's own parameters: an ellipse for the circle,
/// a convex polygon through the image-space keypoints otherwise.
fn inside(scene: &Scene, x: f64, y: f64) -> bool {
    let (dx, dy) = (x - scene.center.0, y - scene.center.1);
    match scene.shape_kind {
        ShapeKind::Circle => {
            let (s, c) = scene.orientation.to_radians().sin_cos();
            let [[a, b], [cc, d]] = scene.warp.m;
            // forward map M = scale * W * R
            let m = [
                [scene.scale * (a * c + b * s), scene.scale * (-a * s + b * c)],
                [scene.scale * (cc * c + d * s), scene.scale * (-cc * s + d * c)],
            ];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            let u = (m[1][1] * dx - m[0][1] * dy) / det;
            let v = (-m[1][0] * dx + m[0][0] * dy) / det;
            u * u + v * v <= 1.0
        }
        _ => {
            let p = scene.keypoints();
            let cross = |i: usize| {
                let (ax, ay) = p[i];
                let (bx, by) = p[(i + 1) % p.len()];
                (bx - ax) * (y - ay) - (by - ay) * (x - ax)
            };
            let signs: Vec<f64> = (0..p.len()).map(cross).collect();
            signs.iter().all(|&s| s >= 0.0) || signs.iter().all(|&s| s <= 0.0)
        }
    }
}

#[test]
fn mask_area_matches_monte_carlo_sampler() {
    let size = 256;
    let mut r = support::rng(11);
    for seed in 0..40u64 {
        let (_, scene) = gen_scene(seed, 32);
        let mask = scene.mask(size);
        let raster = mask.iter().filter(|&&m| m).count() as f64 / (size * size) as f64;
        let e = scene.extent();
        let (x0, x1) = ((scene.center.0 - e).max(0.0), (scene.center.0 + e).min(1.0));
        let (y0, y1) = ((scene.center.1 - e).max(0.0), (scene.center.1 + e).min(1.0));
        let n = 100_000;
        let hits = (0..n)
            .filter(|_| inside(&scene, r.gen_range(x0..x1), r.gen_range(y0..y1)))
            .count();
        let mc = hits as f64 / n as f64 * (x1 - x0) * (y1 - y0);
        assert!(
            (raster - mc).abs() <= 0.02 * mc,
            "seed {seed} {:?}: raster {raster} vs sampled {mc}",
            scene.shape_kind
        );
    }
}

#[test]
fn edge_map_is_the_four_neighbour_boundary() {
    let size = 32;
    for seed in 0..30u64 {
        let (img, scene) = gen_scene(seed, size);
        let edge = derive_annotation(&scene, &img, AnnotationKind::EdgeMap, 0);
        let mask = scene.mask(size);
        let m = |x: i64, y: i64| {
            (0..size as i64).contains(&x) && (0..size as i64).contains(&y) && mask[(y * size as i64 + x) as usize]
        };
        for y in 0..size {
            for x in 0..size {
                let (xi, yi) = (x as i64, y as i64);
                let interior = m(xi - 1, yi) && m(xi + 1, yi) && m(xi, yi - 1) && m(xi, yi + 1);
                let want = if m(xi, yi) && !interior { [255, 255, 255] } else { [0, 0, 0] };
                assert_eq!(edge.get(x, y), want, "seed {seed} at ({x}, {y})");
            }
        }
    }
}

#[test]
fn tuple_length_is_uniform() {
    let k = 3;
    let rule = MultiAnnotationRule { k, m: None };
    let n = 10_000u64;
    let mut counts = vec![0u64; k + 2];
    for seed in 0..n {
        counts[rule.sample_m(&mut rng::substream(seed, "m"))] += 1;
    }
    assert_eq!(counts[0], 0);
    let p = 1.0 / (k + 1) as f64;
    let (mean, sd) = (n as f64 * p, (n as f64 * p * (1.0 - p)).sqrt());
    for (m, &c) in counts.iter().enumerate().skip(1) {
        assert!((c as f64 - mean).abs() <= 3.0 * sd, "m={m}: {c} vs {mean} ± {}", 3.0 * sd);
    }
}

#[test]
fn stats_match_a_line_by_line_recount() {
    let text = "single\ta.ppm\nvideo\ta,b,c,d\npair\t1,2\nmultiview\tx,y,z\nvideo_annot_interleaved\tp,q\ncategory\tu,v,w,t\n";
    let entries = lvm_core::forge::parse_manifest(text, "m").unwrap();
    let per = 64;
    let s = corpus_stats(&entries, per);
    let mut recount = [0u64; 5];
    for line in text.lines() {
        let (kind, paths) = line.split_once('\t').unwrap();
        let cat = match kind {
            "single" => 0,
            "video" => 2,
            k if k.starts_with("video_annot") => 3,
            "multiview" => 4,
            _ => 1,
        };
        recount[cat] += 2 + paths.split(',').count() as u64 * per as u64;
    }
    assert_eq!(s.tokens, recount);
    let pct: f64 = s.percentages().iter().sum();
    assert!((pct - 100.0).abs() <= 0.01);
    let only_single = vec![ManifestEntry { kind: SentenceKind::Single, paths: vec!["a".into()] }; 3];
    let s = corpus_stats(&only_single, per);
    assert_eq!(DataCategory::ALL[0], DataCategory::SingleImages);
    assert_eq!(s.percentages()[0], 100.0);
}
