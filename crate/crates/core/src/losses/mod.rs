//! Training objectives and image-quality metrics.

pub mod ear;
pub mod fidelity;
pub mod sda;
pub mod ssim;

use ndarray::Array2;

use crate::error::{shape, Error, Result};
use crate::numerics::{ComplexImage, RealImage, C64};

pub use ear::{data_range, ear_loss, ear_mask, edge_magnitude, EarLoss, EdgeMask, Threshold};
pub use fidelity::{fidelity_loss, phys_loss, FidelityLoss, PhysTerms};
pub use sda::{sda_layer_loss, sda_loss, sym_kl, FeatureBank, GaussianSummary, SdaLoss};
pub use ssim::{ssim, ssim_with_grad};

pub fn magnitude(z: &ComplexImage) -> RealImage {
    z.mapv(|v| v.norm())
}

/// Pulls a gradient on `|z|` back to `z` (zero where `z = 0`).
pub fn magnitude_backward(z: &ComplexImage, g: &RealImage) -> ComplexImage {
    ndarray::Zip::from(z).and(g).map_collect(|&v, &g| {
        let m = v.norm();
        if m > 0.0 {
            v * (g / m)
        } else {
            C64::new(0.0, 0.0)
        }
    })
}

/// Discriminator target for ground-truth inputs (all zeros).
pub const LABEL_REAL: f64 = 0.0;
/// Discriminator target for generated inputs (all ones).
pub const LABEL_FAKE: f64 = 1.0;

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy of `sigmoid(logits)` against a constant label,
/// with the gradient with respect to the logits.
pub fn bce_loss<D: ndarray::Dimension>(
    logits: &ndarray::Array<f64, D>,
    label: f64,
) -> (f64, ndarray::Array<f64, D>) {
    let n = logits.len().max(1) as f64;
    let value = logits.iter().map(|&x| softplus(x) - label * x).sum::<f64>() / n;
    let grad = logits.mapv(|x| (sigmoid(x) - label) / n);
    (value, grad)
}

/// `10·log10(max(gt)² / MSE)`; `+∞` when the images match.
pub fn psnr(rec: &RealImage, gt: &RealImage) -> Result<f64> {
    if rec.dim() != gt.dim() {
        return Err(shape(format!("psnr inputs {:?} vs {:?}", rec.dim(), gt.dim())));
    }
    let mse = mse(rec, gt);
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let peak = gt.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    Ok(10.0 * (peak * peak / mse).log10())
}

/// `‖rec − gt‖² / ‖gt‖²`.
pub fn nmse(rec: &RealImage, gt: &RealImage) -> Result<f64> {
    if rec.dim() != gt.dim() {
        return Err(shape(format!("nmse inputs {:?} vs {:?}", rec.dim(), gt.dim())));
    }
    let den: f64 = gt.iter().map(|v| v * v).sum();
    if den == 0.0 {
        return Err(Error::Empty("nmse reference is all zero"));
    }
    let num: f64 = rec.iter().zip(gt.iter()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(num / den)
}

fn mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::grad_check;
    use crate::numerics::Rng;
    use ndarray::Array1;

    #[test]
    fn bce_basics() {
        let zeros = Array1::zeros(6);
        for label in [0.0, 1.0] {
            let (v, _) = bce_loss(&zeros, label);
            assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let mut rng = Rng::new(0);
        let x = Array1::from_shape_fn(8, |_| 3.0 * rng.normal());
        for label in [LABEL_REAL, LABEL_FAKE] {
            let (_, g) = bce_loss(&x, label);
            let err = grad_check(
                |v| bce_loss(&Array1::from(v.to_vec()), label).0,
                x.as_slice().unwrap(),
                g.as_slice().unwrap(),
                1e-5,
                None,
            );
            assert!(err < 1e-8, "{err}");
        }
        // large logits stay finite
        let (v, _) = bce_loss(&Array1::from(vec![800.0, -800.0]), 0.0);
        assert!((v - 400.0).abs() < 1e-9);
    }

    #[test]
    fn metric_identities() {
        let mut rng = Rng::new(1);
        let gt = RealImage::from_shape_fn((8, 8), |_| rng.uniform());
        assert_eq!(nmse(&RealImage::zeros((8, 8)), &gt).unwrap(), 1.0);
        assert_eq!(nmse(&gt, &gt).unwrap(), 0.0);
        assert_eq!(psnr(&gt, &gt).unwrap(), f64::INFINITY);
        assert!(nmse(&gt, &RealImage::zeros((8, 8))).is_err());

        // MSE = max²/100 gives 20 dB
        let mut g = RealImage::zeros((10, 10));
        g[[0, 0]] = 2.0;
        let rec = g.mapv(|v| v + 0.2);
        assert!((psnr(&rec, &g).unwrap() - 20.0).abs() < 1e-12);
    }

    #[test]
    fn magnitude_gradient() {
        let z = ComplexImage::from_shape_fn((2, 2), |(i, j)| C64::new(i as f64 + 0.5, j as f64 - 0.3));
        let g = RealImage::from_elem((2, 2), 1.0);
        let back = magnitude_backward(&z, &g);
        for (b, v) in back.iter().zip(z.iter()) {
            assert!((b.norm() - 1.0).abs() < 1e-15);
            assert!((b.arg() - v.arg()).abs() < 1e-15);
        }
    }
}
