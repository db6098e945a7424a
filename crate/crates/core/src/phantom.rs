//! Synthetic dynamic cardiac-like phantoms, coil simulation and adjacent
//! k-space stacking.
//!
//! Six acquisition "domains" are simulated as parameterized corruptions of
//! the same anatomy. Domains 0-4 are used for training, domain 5 is held out.

use std::f64::consts::PI;

use ndarray::{s, Array3, Array4, Axis};

use crate::error::{invalid, shape, Result};
use crate::mri::KSpaceVolume;
use crate::numerics::{conv2d_same_padded, fft2c_inplace, ComplexImage, Padding, RealImage, Rng, C64};
use crate::sampling::SamplingMask;

/// Per-domain corruption parameters. The table is a stand-in for real
/// vendor/protocol variability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomainParams {
    /// Exponent applied to the normalized magnitude.
    pub contrast_gamma: f64,
    /// Std of the additive complex Gaussian noise (per component).
    pub noise_sigma: f64,
    /// Peak relative amplitude of the smooth multiplicative bias field.
    pub bias_strength: f64,
    /// Gaussian blur width in pixels (0 disables).
    pub blur_sigma: f64,
}

pub const TRAINING_DOMAINS: usize = 5;
pub const UNSEEN_DOMAIN: usize = 5;

pub const DOMAIN_TABLE: [DomainParams; 6] = [
    DomainParams { contrast_gamma: 1.0, noise_sigma: 0.00025, bias_strength: 0.0, blur_sigma: 0.0 },
    DomainParams { contrast_gamma: 0.8, noise_sigma: 0.0005, bias_strength: 0.2, blur_sigma: 0.5 },
    DomainParams { contrast_gamma: 1.2, noise_sigma: 0.0004, bias_strength: 0.3, blur_sigma: 0.0 },
    DomainParams { contrast_gamma: 0.9, noise_sigma: 0.00075, bias_strength: 0.1, blur_sigma: 0.8 },
    DomainParams { contrast_gamma: 1.1, noise_sigma: 0.0005, bias_strength: 0.4, blur_sigma: 0.4 },
    // held out
    DomainParams { contrast_gamma: 1.4, noise_sigma: 0.00125, bias_strength: 0.25, blur_sigma: 0.6 },
];

pub fn domain_params(domain_id: usize) -> Result<DomainParams> {
    DOMAIN_TABLE
        .get(domain_id)
        .copied()
        .ok_or_else(|| invalid(format!("domain_id {domain_id} not in 0..{}", DOMAIN_TABLE.len())))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSequence {
    pub frames: Vec<ComplexImage>,
    pub domain_id: usize,
    pub seed: u64,
}

/// Complex coil profiles, `coils × height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilProfileSet {
    pub maps: Array3<C64>,
}

impl CoilProfileSet {
    pub fn rss(&self) -> RealImage {
        self.maps
            .map_axis(Axis(0), |c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
    }
}

struct Ellipse {
    cx: f64,
    cy: f64,
    ax: f64,
    ay: f64,
    value: f64,
}

impl Ellipse {
    fn contains(&self, x: f64, y: f64) -> bool {
        let dx = (x - self.cx) / self.ax;
        let dy = (y - self.cy) / self.ay;
        dx * dx + dy * dy <= 1.0
    }
}

fn jitter(rng: &mut Rng, v: f64, rel: f64) -> f64 {
    v * (1.0 + rng.uniform_range(-rel, rel))
}

fn gaussian_kernel(sigma: f64) -> RealImage {
    let r = (3.0 * sigma).ceil().max(1.0) as usize;
    let n = 2 * r + 1;
    let mut k = RealImage::from_shape_fn((n, n), |(i, j)| {
        let (dy, dx) = (i as f64 - r as f64, j as f64 - r as f64);
        (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
    });
    let total = k.sum();
    k.mapv_inplace(|v| v / total);
    k
}

/// Normalized coordinate of pixel index `i` on an axis of length `n`.
fn coord(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 - n as f64 / 2.0) / n as f64
}

/// Layered-ellipse torso with a contracting ventricle, corrupted per the
/// domain table and normalized to unit peak magnitude.
pub fn make_dynamic_phantom(
    h: usize,
    w: usize,
    frames: usize,
    domain_id: usize,
    rng: &mut Rng,
) -> Result<PhantomSequence> {
    if h < 32 || w < 32 {
        return Err(invalid(format!("phantom needs h, w >= 32, got {h}x{w}")));
    }
    if frames < 5 {
        return Err(invalid(format!("phantom needs >= 5 frames, got {frames}")));
    }
    let params = domain_params(domain_id)?;
    let seed = rng.seed();

    let mut j = |v: f64| jitter(rng, v, 0.05);
    let static_layers = [
        Ellipse { cx: 0.0, cy: 0.0, ax: j(0.85), ay: j(0.70), value: j(0.35) },
        Ellipse { cx: j(-0.42), cy: j(-0.05), ax: j(0.25), ay: j(0.40), value: j(0.08) },
        Ellipse { cx: j(0.45), cy: j(-0.05), ax: j(0.22), ay: j(0.38), value: j(0.08) },
        Ellipse { cx: j(0.05), cy: j(0.05), ax: j(0.30), ay: j(0.28), value: j(0.60) },
        Ellipse { cx: 0.0, cy: j(0.55), ax: j(0.09), ay: j(0.09), value: j(0.80) },
        Ellipse { cx: j(-0.18), cy: j(-0.32), ax: j(0.07), ay: j(0.07), value: j(0.90) },
    ];
    let (vcx, vcy) = (j(0.07), j(0.06));
    let (vax, vay) = (j(0.17), j(0.15));
    let vphase = rng.uniform_range(0.0, 2.0 * PI);

    let phase_coef: Vec<f64> = (0..4).map(|_| rng.uniform_range(-PI / 4.0, PI / 4.0)).collect();
    let bias_coef: Vec<f64> = (0..3).map(|_| rng.uniform_range(-1.0, 1.0)).collect();

    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let scale = 1.0 + 0.25 * (2.0 * PI * f as f64 / frames as f64 + vphase).sin();
        let ventricle = Ellipse { cx: vcx, cy: vcy, ax: vax * scale, ay: vay * scale, value: 1.0 };
        let mut mag = RealImage::from_shape_fn((h, w), |(i, jx)| {
            let (x, y) = (coord(jx, w), coord(i, h));
            let mut v = 0.0;
            for e in static_layers.iter().chain(std::iter::once(&ventricle)) {
                if e.contains(x, y) {
                    v = e.value;
                }
            }
            v
        });

        mag.mapv_inplace(|v| v.max(0.0).powf(params.contrast_gamma));
        if params.bias_strength > 0.0 {
            for ((i, jx), v) in mag.indexed_iter_mut() {
                let (x, y) = (coord(jx, w), coord(i, h));
                let field = bias_coef[0] * x + bias_coef[1] * y + bias_coef[2] * x * y;
                *v *= (1.0 + params.bias_strength * field).max(0.1);
            }
        }
        if params.blur_sigma > 0.0 {
            mag = conv2d_same_padded(&mag, &gaussian_kernel(params.blur_sigma), Padding::Replicate)?;
        }

        let mut img = ComplexImage::from_shape_fn((h, w), |(i, jx)| {
            let (x, y) = (coord(jx, w), coord(i, h));
            let phi = phase_coef[0]
                + phase_coef[1] * x
                + phase_coef[2] * y
                + phase_coef[3] * (x * x + y * y);
            C64::from_polar(mag[[i, jx]], phi)
        });
        for z in img.iter_mut() {
            *z += C64::new(rng.normal(), rng.normal()) * params.noise_sigma;
        }
        out.push(img);
    }

    let peak = out
        .iter()
        .flat_map(|f| f.iter().map(|z| z.norm()))
        .fold(0.0_f64, f64::max);
    for f in out.iter_mut() {
        f.mapv_inplace(|z| z / peak);
    }
    Ok(PhantomSequence {
        frames: out,
        domain_id,
        seed,
    })
}

/// Smooth complex coil profiles and the per-coil images of every frame
/// (each `coils × height × width`).
pub fn simulate_coils(
    seq: &PhantomSequence,
    ncoils: usize,
    rng: &mut Rng,
) -> Result<(Vec<Array3<C64>>, CoilProfileSet)> {
    if ncoils < 2 {
        return Err(invalid(format!("need at least 2 coils, got {ncoils}")));
    }
    let (h, w) = seq
        .frames
        .first()
        .ok_or_else(|| invalid("empty phantom sequence"))?
        .dim();
    let mut maps = Array3::<C64>::zeros((ncoils, h, w));
    for (c, mut map) in maps.outer_iter_mut().enumerate() {
        let angle = 2.0 * PI * c as f64 / ncoils as f64 + rng.uniform_range(-0.2, 0.2);
        let (ccx, ccy) = (0.9 * angle.cos(), 0.9 * angle.sin());
        let width = rng.uniform_range(0.55, 0.7);
        let q: Vec<f64> = (0..3).map(|_| rng.uniform_range(-0.5, 0.5)).collect();
        for ((i, j), z) in map.indexed_iter_mut() {
            let (x, y) = (coord(j, w), coord(i, h));
            let d2 = (x - ccx).powi(2) + (y - ccy).powi(2);
            let mag = (-d2 / (2.0 * width * width)).exp().max(1e-3);
            *z = C64::from_polar(mag, q[0] + q[1] * x + q[2] * y);
        }
    }
    let profiles = CoilProfileSet { maps };
    let peak = profiles.rss().fold(0.0_f64, |a, &b| a.max(b));
    let profiles = CoilProfileSet {
        maps: profiles.maps.mapv(|z| z / peak),
    };

    let coil_frames = seq
        .frames
        .iter()
        .map(|frame| {
            let mut out = profiles.maps.clone();
            for mut coil in out.outer_iter_mut() {
                coil.zip_mut_with(frame, |p, g| *p *= g);
            }
            out
        })
        .collect();
    Ok((coil_frames, profiles))
}

/// One training/evaluation sample centred on `central_frame`.
#[derive(Debug, Clone)]
pub struct KSpaceSample {
    pub central_frame: usize,
    pub k0: KSpaceVolume,
    pub kg: KSpaceVolume,
    /// Mask restricted to the adjacent frames of this sample.
    pub mask: SamplingMask,
}

/// Indices of the `adjacent` frames around `center`, clamp-replicated at the
/// sequence ends.
pub fn adjacent_indices(center: usize, adjacent: usize, frames: usize) -> Vec<usize> {
    let half = (adjacent / 2) as isize;
    (-half..=half)
        .map(|d| (center as isize + d).clamp(0, frames as isize - 1) as usize)
        .collect()
}

/// Fully sampled multi-coil k-space of the adjacent frames around `center`.
pub fn stack_kspace(coil_frames: &[Array3<C64>], center: usize, adjacent: usize) -> Result<KSpaceVolume> {
    if adjacent.is_multiple_of(2) {
        return Err(invalid(format!("adjacent length must be odd, got {adjacent}")));
    }
    let (coils, h, w) = coil_frames[0].dim();
    let idx = adjacent_indices(center, adjacent, coil_frames.len());
    let mut data = Array4::<C64>::zeros((adjacent, coils, h, w));
    for (a, &f) in idx.iter().enumerate() {
        if coil_frames[f].dim() != (coils, h, w) {
            return Err(shape("coil frames differ in shape"));
        }
        data.index_axis_mut(Axis(0), a).assign(&coil_frames[f]);
        for c in 0..coils {
            fft2c_inplace(data.slice_mut(s![a, c, .., ..]), false);
        }
    }
    KSpaceVolume::new(data)
}

/// For every central frame, stacks `adjacent` neighbouring fully sampled
/// k-spaces (`kg`) and their masked copies (`k0`).
pub fn to_kspace_dataset(
    coil_frames: &[Array3<C64>],
    mask: &SamplingMask,
    adjacent: usize,
) -> Result<Vec<KSpaceSample>> {
    let frames = coil_frames.len();
    if adjacent.is_multiple_of(2) {
        return Err(invalid(format!("adjacent length must be odd, got {adjacent}")));
    }
    if adjacent > frames {
        return Err(invalid(format!("adjacent {adjacent} exceeds {frames} frames")));
    }
    if mask.frames() != frames {
        return Err(shape(format!("mask has {} frames, data {frames}", mask.frames())));
    }
    (0..frames)
        .map(|center| {
            let kg = stack_kspace(coil_frames, center, adjacent)?;
            let m = mask.select_frames(&adjacent_indices(center, adjacent, frames));
            let k0 = kg.masked(&m)?;
            Ok(KSpaceSample { central_frame: center, k0, kg, mask: m })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phantom_is_deterministic_and_moves() {
        let a = make_dynamic_phantom(32, 32, 6, 2, &mut Rng::new(11)).unwrap();
        let b = make_dynamic_phantom(32, 32, 6, 2, &mut Rng::new(11)).unwrap();
        assert_eq!(a, b);
        let peak = a.frames.iter().flat_map(|f| f.iter().map(|z| z.norm())).fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-12);
        let diff: f64 = a.frames[0]
            .iter()
            .zip(a.frames[1].iter())
            .map(|(x, y)| (x - y).norm())
            .sum::<f64>()
            / a.frames[0].len() as f64;
        assert!(diff > 0.0);
    }

    #[test]
    fn unseen_domain_differs() {
        let unseen = domain_params(UNSEEN_DOMAIN).unwrap();
        for d in 0..TRAINING_DOMAINS {
            let p = domain_params(d).unwrap();
            assert_ne!(p.noise_sigma, unseen.noise_sigma);
            assert_ne!(p.contrast_gamma, unseen.contrast_gamma);
        }
        assert!(domain_params(6).is_err());
    }

    #[test]
    fn phantom_rejects_bad_sizes() {
        let mut rng = Rng::new(0);
        assert!(make_dynamic_phantom(16, 32, 6, 0, &mut rng).is_err());
        assert!(make_dynamic_phantom(32, 32, 4, 0, &mut rng).is_err());
    }

    #[test]
    fn coil_rss_matches_profile_rss() {
        let mut rng = Rng::new(4);
        let seq = make_dynamic_phantom(32, 32, 5, 0, &mut rng).unwrap();
        let (frames, profiles) = simulate_coils(&seq, 4, &mut rng).unwrap();
        let rss_p = profiles.rss();
        assert!(rss_p.iter().all(|&r| r > 0.0 && r <= 1.0 + 1e-12));
        assert!(profiles.maps.iter().all(|z| z.norm() > 0.0));
        for (i, j) in [(3, 3), (16, 16), (20, 8)] {
            let rss_img = frames[0]
                .index_axis(Axis(2), j)
                .index_axis(Axis(1), i)
                .iter()
                .map(|z| z.norm_sqr())
                .sum::<f64>()
                .sqrt();
            assert!((rss_img - seq.frames[0][[i, j]].norm() * rss_p[[i, j]]).abs() < 1e-12);
        }
        assert!(simulate_coils(&seq, 1, &mut rng).is_err());
    }

    #[test]
    fn adjacent_indices_clamp() {
        assert_eq!(adjacent_indices(0, 5, 8), vec![0, 0, 0, 1, 2]);
        assert_eq!(adjacent_indices(7, 5, 8), vec![5, 6, 7, 7, 7]);
        assert_eq!(adjacent_indices(3, 3, 8), vec![2, 3, 4]);
    }
}
