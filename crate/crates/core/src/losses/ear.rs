//! Edge-aware region loss: SSIM restricted to a dilated edge band taken
//! from the ground truth.

use ndarray::{array, Array2};

use crate::error::{shape, Result};
use crate::losses::ssim::ssim_with_grad;
use crate::numerics::{conv2d_same, RealImage};

/// Horizontal Sobel kernel, oriented so that convolving a rising step gives
/// a positive response.
pub fn sobel_x() -> RealImage {
    array![[1.0, 0.0, -1.0], [2.0, 0.0, -2.0], [1.0, 0.0, -1.0]]
}

pub fn sobel_y() -> RealImage {
    sobel_x().reversed_axes()
}

/// `sqrt(Gx² + Gy²)`. Borders are replicate-padded so a flat image has no
/// edges anywhere.
///
/// Evaluated as weighted central differences (the same values as
/// convolving with [`sobel_x`] / [`sobel_y`]) so constant regions come out
/// exactly zero rather than as rounding residue.
pub fn edge_magnitude(gt: &RealImage) -> RealImage {
    let (h, w) = gt.dim();
    let at = |y: isize, x: isize| gt[[y.clamp(0, h as isize - 1) as usize, x.clamp(0, w as isize - 1) as usize]];
    RealImage::from_shape_fn((h, w), |(i, j)| {
        let (i, j) = (i as isize, j as isize);
        let mut gx = 0.0;
        let mut gy = 0.0;
        for (d, wgt) in [(-1, 1.0), (0, 2.0), (1, 1.0)] {
            gx += wgt * (at(i - d, j + 1) - at(i - d, j - 1));
            gy += wgt * (at(i + 1, j - d) - at(i - 1, j - d));
        }
        (gx * gx + gy * gy).sqrt()
    })
}

/// 5×5 average of the edge magnitude (zero padded).
pub fn smoothed_edge_map(gt: &RealImage) -> RealImage {
    let avg = Array2::from_elem((5, 5), 1.0 / 25.0);
    conv2d_same(&edge_magnitude(gt), &avg).expect("odd kernel")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `B = 1` where `M_s > tau`.
    Fixed(f64),
    /// `tau` is the given percentile (0-100) of the smoothed map.
    Percentile(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Fixed(0.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMask {
    pub b: Array2<u8>,
    pub tau: f64,
}

impl EdgeMask {
    pub fn count(&self) -> usize {
        self.b.iter().map(|&v| v as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn as_real(&self) -> RealImage {
        self.b.mapv(f64::from)
    }
}

/// Strict threshold of the smoothed edge map.
pub fn ear_mask(gt: &RealImage, tau: f64) -> EdgeMask {
    ear_mask_with(gt, Threshold::Fixed(tau))
}

pub fn ear_mask_with(gt: &RealImage, threshold: Threshold) -> EdgeMask {
    let ms = smoothed_edge_map(gt);
    let tau = match threshold {
        Threshold::Fixed(t) => t,
        Threshold::Percentile(p) => {
            let mut v: Vec<f64> = ms.iter().copied().collect();
            v.sort_by(f64::total_cmp);
            let idx = ((p.clamp(0.0, 100.0) / 100.0) * (v.len() - 1) as f64).round() as usize;
            v[idx]
        }
    };
    EdgeMask {
        b: ms.mapv(|m| u8::from(m > tau)),
        tau,
    }
}

/// SSIM data range used by the image losses: the span of the reference.
pub fn data_range(gt: &RealImage) -> f64 {
    let (lo, hi) = gt
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let r = hi - lo;
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct EarLoss {
    pub value: f64,
    /// Gradient with respect to `rec`.
    pub grad: RealImage,
    /// Set when the ground truth produced no edge pixels; the loss is 0.
    pub empty_mask: bool,
}

/// `1 − SSIM(B⊙rec, B⊙gt)` with `B = ear_mask(gt, 0)`.
pub fn ear_loss(rec: &RealImage, gt: &RealImage) -> Result<EarLoss> {
    ear_loss_with(rec, gt, &ear_mask(gt, 0.0))
}

pub fn ear_loss_with(rec: &RealImage, gt: &RealImage, mask: &EdgeMask) -> Result<EarLoss> {
    if rec.dim() != gt.dim() || mask.b.dim() != gt.dim() {
        return Err(shape(format!("ear inputs {:?} vs {:?}", rec.dim(), gt.dim())));
    }
    if mask.is_empty() {
        return Ok(EarLoss {
            value: 0.0,
            grad: RealImage::zeros(rec.dim()),
            empty_mask: true,
        });
    }
    let b = mask.as_real();
    let (s, g) = ssim_with_grad(&(&b * rec), &(&b * gt), data_range(gt))?;
    Ok(EarLoss {
        value: 1.0 - s,
        grad: -(&b * &g),
        empty_mask: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::grad_check;
    use crate::numerics::Rng;

    fn step(h: usize, w: usize, col: usize) -> RealImage {
        RealImage::from_shape_fn((h, w), |(_, j)| if j >= col { 1.0 } else { 0.0 })
    }

    #[test]
    fn differences_match_sobel_convolution() {
        use crate::numerics::{conv2d_same_padded, Padding};
        let mut rng = Rng::new(11);
        let img = RealImage::from_shape_fn((9, 12), |_| rng.uniform());
        let gx = conv2d_same_padded(&img, &sobel_x(), Padding::Replicate).unwrap();
        let gy = conv2d_same_padded(&img, &sobel_y(), Padding::Replicate).unwrap();
        let want = ndarray::Zip::from(&gx).and(&gy).map_collect(|a, b| (a * a + b * b).sqrt());
        for (a, b) in edge_magnitude(&img).iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn flat_image_has_no_edges() {
        let gt = RealImage::from_elem((16, 16), 0.7);
        assert!(edge_magnitude(&gt).iter().all(|&v| v == 0.0));
        assert!(ear_mask(&gt, 0.0).is_empty());
        let l = ear_loss(&RealImage::zeros((16, 16)), &gt).unwrap();
        assert!(l.empty_mask);
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn step_edge_magnitude_and_band() {
        let gt = step(16, 20, 10);
        let m = edge_magnitude(&gt);
        for i in 0..16 {
            assert_eq!(m[[i, 9]], 4.0);
            assert_eq!(m[[i, 10]], 4.0);
            assert_eq!(m[[i, 5]], 0.0);
        }
        let mask = ear_mask(&gt, 0.0);
        for ((_, j), &v) in mask.b.indexed_iter() {
            assert_eq!(v == 1, (7..=12).contains(&j));
        }
    }

    #[test]
    fn rotation_swaps_gradients() {
        let mut rng = Rng::new(0);
        let gt = RealImage::from_shape_fn((12, 12), |_| rng.uniform());
        let rot = gt.t().slice(ndarray::s![.., ..;-1]).to_owned();
        let m = edge_magnitude(&gt);
        let mr = edge_magnitude(&rot);
        let back = mr.slice(ndarray::s![.., ..;-1]).t().to_owned();
        for i in 1..11 {
            for j in 1..11 {
                assert!((m[[i, j]] - back[[i, j]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn loss_zero_on_match_and_gradient() {
        let mut rng = Rng::new(1);
        let gt = RealImage::from_shape_fn((14, 14), |(i, j)| if i + j > 12 { 0.8 } else { 0.1 });
        assert_eq!(ear_loss(&gt, &gt).unwrap().value, 0.0);
        let rec = gt.mapv(|v| v + 0.05 * rng.normal());
        let l = ear_loss(&rec, &gt).unwrap();
        assert!(l.value > 0.0);
        let err = grad_check(
            |v| ear_loss(&RealImage::from_shape_vec((14, 14), v.to_vec()).unwrap(), &gt).unwrap().value,
            rec.as_slice().unwrap(),
            l.grad.as_slice().unwrap(),
            1e-6,
            None,
        );
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn percentile_threshold() {
        let gt = step(16, 16, 8);
        let m = ear_mask_with(&gt, Threshold::Percentile(100.0));
        assert!(m.is_empty());
        let m = ear_mask_with(&gt, Threshold::Percentile(0.0));
        assert_eq!(m, ear_mask(&gt, 0.0));
    }
}
