use crate::error::{Error, Result};
use crate::image::Image;

/// Mean intersection-over-union over the classes present in `gt`.
pub fn metric_miou(pred: &[usize], gt: &[usize], n_classes: usize) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::dim(format!("mask sizes {} and {}", pred.len(), gt.len())));
    }
    if let Some(&c) = pred.iter().chain(gt).find(|&&c| c >= n_classes) {
        return Err(Error::dim(format!("class {c} outside 0..{n_classes}")));
    }
    let mut inter = vec![0usize; n_classes];
    let mut union = vec![0usize; n_classes];
    let mut present = vec![false; n_classes];
    for (&p, &g) in pred.iter().zip(gt) {
        present[g] = true;
        if p == g {
            inter[g] += 1;
            union[g] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let ious: Vec<f64> = (0..n_classes)
        .filter(|&c| present[c])
        .map(|c| inter[c] as f64 / union[c] as f64)
        .collect();
    if ious.is_empty() {
        return Err(Error::dim("empty masks"));
    }
    Ok(ious.iter().sum::<f64>() / ious.len() as f64)
}

/// Box used to normalize keypoint distances.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub width: f64,
    pub height: f64,
}

/// Extent of the `true` cells of a row-major `size`x`size` mask, in
/// normalized units; `None` for an empty mask.
pub fn bbox_of_mask(mask: &[bool], size: usize) -> Option<BBox> {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for (i, _) in mask.iter().enumerate().filter(|(_, m)| **m) {
        let (x, y) = (i % size, i / size);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x + 1);
        y1 = y1.max(y + 1);
    }
    (x0 != usize::MAX).then(|| BBox {
        width: (x1 - x0) as f64 / size as f64,
        height: (y1 - y0) as f64 / size as f64,
    })
}

/// Percentage of keypoints within `alpha * max(bbox side)` of ground truth.
pub fn metric_pck(pred: &[(f64, f64)], gt: &[(f64, f64)], bbox: BBox, alpha: f64) -> Result<f64> {
    if pred.len() != gt.len() || gt.is_empty() {
        return Err(Error::dim(format!("{} predicted keypoints for {}", pred.len(), gt.len())));
    }
    if !(bbox.width > 0.0 && bbox.height > 0.0) {
        return Err(Error::dim(format!("degenerate bounding box {bbox:?}")));
    }
    let thresh = alpha * bbox.width.max(bbox.height);
    let correct = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| (p.0 - g.0).hypot(p.1 - g.1) <= thresh)
        .count();
    Ok(100.0 * correct as f64 / gt.len() as f64)
}

/// Mean squared error over all channels with pixels scaled to [0, 1].
pub fn metric_mse(pred: &Image, gt: &Image) -> Result<f64> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::dim(format!(
            "images {}x{} and {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let total: f64 = pred
        .raw()
        .iter()
        .zip(gt.raw())
        .map(|(a, b)| {
            let d = (f64::from(*a) - f64::from(*b)) / 255.0;
            d * d
        })
        .sum();
    Ok(total / pred.raw().len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn miou_extremes() {
        let a = vec![0, 1, 1, 2];
        assert_eq!(metric_miou(&a, &a, 3).unwrap(), 1.0);
        assert_eq!(metric_miou(&[1, 1], &[0, 0], 2).unwrap(), 0.0);
        assert!(metric_miou(&[0], &[0, 1], 2).is_err());
        assert!(metric_miou(&[3], &[0], 2).is_err());
    }

    #[test]
    fn pck_identity_and_threshold() {
        let g = [(0.2, 0.2), (0.5, 0.5)];
        let b = BBox { width: 0.5, height: 0.2 };
        assert_eq!(metric_pck(&g, &g, b, 0.1).unwrap(), 100.0);
        // threshold is 0.05: one point moved 0.04, the other 0.06
        let p = [(0.24, 0.2), (0.5, 0.56)];
        assert_eq!(metric_pck(&p, &g, b, 0.1).unwrap(), 50.0);
    }

    #[test]
    fn mse_extremes() {
        let black = Image::filled(4, 4, [0, 0, 0]);
        let white = Image::filled(4, 4, [255, 255, 255]);
        assert_eq!(metric_mse(&black, &black).unwrap(), 0.0);
        assert_eq!(metric_mse(&black, &white).unwrap(), 1.0);
    }

    #[test]
    fn bbox_of_a_block() {
        let mut m = vec![false; 16];
        m[5] = true;
        m[10] = true;
        assert_eq!(bbox_of_mask(&m, 4), Some(BBox { width: 0.5, height: 0.5 }));
        assert_eq!(bbox_of_mask(&[false; 4], 2), None);
    }
}
