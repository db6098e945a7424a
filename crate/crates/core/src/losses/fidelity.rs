//! Physical k-space consistency (magnitude and wrapped phase) plus an image
//! SSIM term on coil-combined magnitudes.

use ndarray::{Array3, ArrayView3, Zip};

use crate::error::{shape, Result};
use crate::losses::ear::data_range;
use crate::losses::ssim::ssim_with_grad;
use crate::losses::{magnitude, magnitude_backward};
use crate::mri::{coil_combine, coils_fft, KSpaceVolume, SensitivityMaps};
use crate::numerics::{ComplexImage, RealImage, C64};

/// Phase differences are ignored where `|k_gt| ≤ PHASE_REL_FLOOR · max|k_gt|`.
pub const PHASE_REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PhysTerms {
    pub magnitude: f64,
    pub phase: f64,
}

/// Magnitude MSE and wrapped-phase MSE over retained entries, with the
/// gradient with respect to `k_pred` (complex gradient convention
/// `∂L/∂Re + i ∂L/∂Im`).
pub fn phys_loss(k_pred: ArrayView3<'_, C64>, k_gt: ArrayView3<'_, C64>) -> Result<(PhysTerms, Array3<C64>)> {
    if k_pred.dim() != k_gt.dim() {
        return Err(shape(format!("k_pred {:?} vs k_gt {:?}", k_pred.dim(), k_gt.dim())));
    }
    let n = k_pred.len() as f64;
    let peak = k_gt.iter().fold(0.0_f64, |m, z| m.max(z.norm()));
    let floor = PHASE_REL_FLOOR * peak;
    let retained = k_gt.iter().filter(|z| z.norm() > floor).count();

    let mut mag = 0.0;
    let mut phase = 0.0;
    let mut grad = Array3::<C64>::zeros(k_pred.dim());
    Zip::from(&mut grad).and(&k_pred).and(&k_gt).for_each(|g, &p, &t| {
        let pm = p.norm();
        let d = pm - t.norm();
        mag += d * d;
        if pm > 0.0 {
            *g += p * (2.0 * d / (n * pm));
        }
        if t.norm() > floor && pm > 0.0 {
            // wrapped into [-π, π]
            let dphi = (p * t.conj()).arg();
            phase += dphi * dphi;
            *g += C64::i() * p * (2.0 * dphi / (retained as f64 * pm * pm));
        }
    });
    let terms = PhysTerms {
        magnitude: mag / n,
        phase: if retained > 0 { phase / retained as f64 } else { 0.0 },
    };
    Ok((terms, grad))
}

/// Back-propagates a gradient on a coil-combined image `Σ conj(s_c) X_c`
/// (with `X_c = F⁻¹ k_c`) to the k-space and to the maps.
pub fn combine_backward(
    g_img: &ComplexImage,
    coil_images: ArrayView3<'_, C64>,
    sens: &SensitivityMaps,
) -> (Array3<C64>, Array3<C64>) {
    let mut g_x = sens.s.clone();
    for mut c in g_x.outer_iter_mut() {
        c.zip_mut_with(g_img, |s, &g| *s *= g);
    }
    let g_k = coils_fft(&g_x, false);
    let mut g_s = coil_images.to_owned();
    for mut c in g_s.outer_iter_mut() {
        c.zip_mut_with(g_img, |x, &g| *x *= g.conj());
    }
    (g_k, g_s)
}

#[derive(Debug, Clone)]
pub struct FidelityLoss {
    pub phys: PhysTerms,
    /// `1 − SSIM` of the combined magnitudes.
    pub ssim: f64,
    pub total: f64,
    pub grad_k: Array3<C64>,
    pub grad_sens: Array3<C64>,
}

/// Fidelity on the central frames; `sens` combines both volumes. The ground
/// truth image is a constant target: `grad_sens` covers the prediction only.
pub fn fidelity_loss(k_pred: &KSpaceVolume, k_gt: &KSpaceVolume, sens: &SensitivityMaps) -> Result<FidelityLoss> {
    fidelity_loss_central(k_pred.central(), k_gt.central(), sens)
}

pub fn fidelity_loss_central(
    k_pred: ArrayView3<'_, C64>,
    k_gt: ArrayView3<'_, C64>,
    sens: &SensitivityMaps,
) -> Result<FidelityLoss> {
    let x_gt = coils_fft(&k_gt.to_owned(), true);
    let gt_mag = magnitude(&coil_combine(x_gt.view(), sens)?);
    fidelity_loss_target(k_pred, k_gt, &gt_mag, sens)
}

/// As [`fidelity_loss_central`] with the combined ground-truth magnitude
/// supplied by the caller.
pub fn fidelity_loss_target(
    k_pred: ArrayView3<'_, C64>,
    k_gt: ArrayView3<'_, C64>,
    gt_mag: &RealImage,
    sens: &SensitivityMaps,
) -> Result<FidelityLoss> {
    let (phys, mut grad_k) = phys_loss(k_pred, k_gt)?;
    let x_pred = coils_fft(&k_pred.to_owned(), true);
    let i_rec = coil_combine(x_pred.view(), sens)?;
    let rec_mag = magnitude(&i_rec);
    let (s, g_mag) = ssim_with_grad(&rec_mag, gt_mag, data_range(gt_mag))?;
    let g_img = magnitude_backward(&i_rec, &(-g_mag));
    let (g_k, grad_sens) = combine_backward(&g_img, x_pred.view(), sens);
    grad_k += &g_k;
    Ok(FidelityLoss {
        phys,
        ssim: 1.0 - s,
        total: phys.magnitude + phys.phase + 1.0 - s,
        grad_k,
        grad_sens,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::grad_check;
    use crate::mri::normalize_maps;
    use crate::numerics::Rng;
    use std::f64::consts::PI;

    fn setup(seed: u64) -> (Array3<C64>, Array3<C64>, SensitivityMaps) {
        let mut rng = Rng::new(seed);
        let dim = (2, 10, 10);
        let kg = Array3::from_shape_fn(dim, |_| C64::new(rng.normal(), rng.normal()));
        let kp = kg.mapv(|z| z + C64::new(0.3 * rng.normal(), 0.3 * rng.normal()));
        let s = normalize_maps(&Array3::from_shape_fn(dim, |_| C64::new(rng.normal(), rng.normal())));
        (kp, kg, SensitivityMaps::new(s))
    }

    #[test]
    fn zero_on_match() {
        let (_, kg, sens) = setup(0);
        let l = fidelity_loss_central(kg.view(), kg.view(), &sens).unwrap();
        assert_eq!(l.total, 0.0);
    }

    #[test]
    fn global_phase_flip() {
        let (_, kg, sens) = setup(1);
        let kp = kg.mapv(|z| -z);
        let l = fidelity_loss_central(kp.view(), kg.view(), &sens).unwrap();
        assert!((l.phys.phase - PI * PI).abs() < 1e-12);
        assert_eq!(l.phys.magnitude, 0.0);
        assert!(l.ssim.abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (kp, kg, sens) = setup(2);
        let l = fidelity_loss_central(kp.view(), kg.view(), &sens).unwrap();
        let flat: Vec<f64> = kp.iter().flat_map(|z| [z.re, z.im]).collect();
        let grad: Vec<f64> = l.grad_k.iter().flat_map(|z| [z.re, z.im]).collect();
        let err = grad_check(
            |v| {
                let k = Array3::from_shape_fn(kp.dim(), |(c, i, j)| {
                    let o = 2 * ((c * 10 + i) * 10 + j);
                    C64::new(v[o], v[o + 1])
                });
                fidelity_loss_central(k.view(), kg.view(), &sens).unwrap().total
            },
            &flat,
            &grad,
            1e-6,
            None,
        );
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn shape_mismatch() {
        let (kp, _, sens) = setup(3);
        let other = Array3::zeros((2, 10, 9));
        assert!(fidelity_loss_central(kp.view(), other.view(), &sens).is_err());
    }
}
