//! Physics layer: calibration extraction, sensitivity estimation, coil
//! combination/expansion and the learnable-step data-consistency update.

use ndarray::{s, Array3, Array4, ArrayView2, ArrayView3, Axis, Zip};

use crate::error::{invalid, shape, Error, Result};
use crate::numerics::{all_finite_c, fft2c_inplace, ComplexImage, C64};
use crate::sampling::{acs_rows, SamplingMask};

/// RSS floor used when normalizing sensitivity estimates.
pub const SENS_EPS: f64 = 1e-8;

/// Multi-coil, multi-frame k-space (`adjacent × coils × height × width`).
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceVolume {
    pub data: Array4<C64>,
    pub central_index: usize,
}

impl KSpaceVolume {
    pub fn new(data: Array4<C64>) -> Result<Self> {
        let adjacent = data.dim().0;
        if adjacent == 0 {
            return Err(Error::Empty("k-space volume"));
        }
        if !all_finite_c(data.iter().copied()) {
            return Err(Error::NonFinite("k-space volume"));
        }
        Ok(Self {
            data,
            central_index: adjacent / 2,
        })
    }

    pub fn zeros(adjacent: usize, coils: usize, h: usize, w: usize) -> Self {
        Self {
            data: Array4::zeros((adjacent, coils, h, w)),
            central_index: adjacent / 2,
        }
    }

    pub fn dim(&self) -> (usize, usize, usize, usize) {
        self.data.dim()
    }

    pub fn adjacent(&self) -> usize {
        self.data.dim().0
    }

    pub fn coils(&self) -> usize {
        self.data.dim().1
    }

    pub fn central(&self) -> ArrayView3<'_, C64> {
        self.data.index_axis(Axis(0), self.central_index)
    }

    /// Elementwise product with a mask of matching frame count.
    pub fn masked(&self, mask: &SamplingMask) -> Result<Self> {
        let (a, _, h, w) = self.dim();
        if mask.dim() != (a, h, w) {
            return Err(shape(format!("mask {:?} vs k-space {:?}", mask.dim(), self.dim())));
        }
        let mut data = self.data.clone();
        for (mut frame, m) in data.outer_iter_mut().zip(mask.array().outer_iter()) {
            for mut coil in frame.outer_iter_mut() {
                coil.zip_mut_with(&m, |z, &v| {
                    if v == 0 {
                        *z = C64::new(0.0, 0.0);
                    }
                });
            }
        }
        Ok(Self {
            data,
            central_index: self.central_index,
        })
    }

    /// Per-coil inverse transform of every frame.
    pub fn to_images(&self) -> Array4<C64> {
        volume_fft(&self.data, true)
    }

    pub fn from_images(images: &Array4<C64>) -> Self {
        Self {
            data: volume_fft(images, false),
            central_index: images.dim().0 / 2,
        }
    }
}

pub(crate) fn volume_fft(v: &Array4<C64>, inverse: bool) -> Array4<C64> {
    let mut out = v.clone();
    for mut frame in out.outer_iter_mut() {
        for coil in frame.outer_iter_mut() {
            fft2c_inplace(coil, inverse);
        }
    }
    out
}

pub fn coils_fft(v: &Array3<C64>, inverse: bool) -> Array3<C64> {
    let mut out = v.clone();
    for coil in out.outer_iter_mut() {
        fft2c_inplace(coil, inverse);
    }
    out
}

/// Zero-filled copy keeping only the central `n_lines` phase-encode rows.
/// Fails if any of those rows is empty in the central frame.
pub fn extract_acs(k: &KSpaceVolume, n_lines: usize) -> Result<KSpaceVolume> {
    let (_, _, h, _) = k.dim();
    if n_lines > h {
        return Err(invalid(format!("acs lines {n_lines} exceed height {h}")));
    }
    let rows = acs_rows(h, n_lines);
    let central = k.central();
    for y in rows.clone() {
        let empty = central
            .slice(s![.., y, ..])
            .iter()
            .all(|z| z.re == 0.0 && z.im == 0.0);
        if empty {
            return Err(Error::AcsNotSampled { row: y });
        }
    }
    let mut out = KSpaceVolume::zeros(k.adjacent(), k.coils(), h, k.dim().3);
    out.central_index = k.central_index;
    out.data
        .slice_mut(s![.., .., rows.clone(), ..])
        .assign(&k.data.slice(s![.., .., rows, ..]));
    Ok(out)
}

/// Pixelwise-normalized complex coil maps and their conjugates.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMaps {
    pub s: Array3<C64>,
    pub s_conj: Array3<C64>,
}

impl SensitivityMaps {
    pub fn new(s: Array3<C64>) -> Self {
        let s_conj = s.mapv(|z| z.conj());
        Self { s, s_conj }
    }

    pub fn coils(&self) -> usize {
        self.s.dim().0
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.s.dim()
    }
}

/// Optional learned correction applied on top of the classical estimate.
pub trait SensitivityRefiner {
    /// Returns the refined (unnormalized) maps.
    fn refine(&self, maps: &Array3<C64>) -> Result<Array3<C64>>;
}

/// Pixelwise RSS of `maps` (floored at [`SENS_EPS`]).
pub fn rss_floor(maps: &Array3<C64>) -> ndarray::Array2<f64> {
    maps.map_axis(Axis(0), |c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(SENS_EPS))
}

/// Divides every coil by the pixelwise RSS.
pub fn normalize_maps(raw: &Array3<C64>) -> Array3<C64> {
    let rss = rss_floor(raw);
    let mut out = raw.clone();
    for mut coil in out.outer_iter_mut() {
        coil.zip_mut_with(&rss, |z, &r| *z /= r);
    }
    out
}

/// Low-resolution calibration images of the central frame.
pub fn acs_coil_images(acs: &KSpaceVolume) -> Array3<C64> {
    coils_fft(&acs.central().to_owned(), true)
}

/// Classical ACS estimate (RSS-normalized calibration images), optionally
/// refined and re-normalized.
pub fn estimate_sensitivities(
    acs: &KSpaceVolume,
    refiner: Option<&dyn SensitivityRefiner>,
) -> Result<SensitivityMaps> {
    if acs.data.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
        return Err(Error::Empty("calibration data is all zero"));
    }
    let mut maps = normalize_maps(&acs_coil_images(acs));
    if let Some(r) = refiner {
        let refined = r.refine(&maps)?;
        if refined.dim() != maps.dim() {
            return Err(shape("refiner changed the map shape"));
        }
        maps = normalize_maps(&refined);
    }
    Ok(SensitivityMaps::new(maps))
}

fn check_coils(img_dim: (usize, usize, usize), sens: &SensitivityMaps) -> Result<()> {
    if img_dim != sens.dim() {
        return Err(shape(format!("coil images {img_dim:?} vs maps {:?}", sens.dim())));
    }
    Ok(())
}

/// `Σ_c conj(s_c) ⊙ img_c`.
pub fn coil_combine(img_mc: ArrayView3<'_, C64>, sens: &SensitivityMaps) -> Result<ComplexImage> {
    check_coils(img_mc.dim(), sens)?;
    let (_, h, w) = img_mc.dim();
    let mut out = ComplexImage::zeros((h, w));
    for (img, sc) in img_mc.outer_iter().zip(sens.s_conj.outer_iter()) {
        Zip::from(&mut out).and(&img).and(&sc).for_each(|o, &x, &c| *o += c * x);
    }
    Ok(out)
}

/// `img ⊙ s_c` for every coil.
pub fn coil_expand(img: ArrayView2<'_, C64>, sens: &SensitivityMaps) -> Result<Array3<C64>> {
    let (_, h, w) = sens.dim();
    if img.dim() != (h, w) {
        return Err(shape(format!("image {:?} vs maps {:?}", img.dim(), sens.dim())));
    }
    let mut out = sens.s.clone();
    for mut coil in out.outer_iter_mut() {
        coil.zip_mut_with(&img, |s, &x| *s *= x);
    }
    Ok(out)
}

/// [`coil_expand`] broadcast to `adjacent` identical frames.
pub fn coil_expand_adjacent(
    img: ArrayView2<'_, C64>,
    sens: &SensitivityMaps,
    adjacent: usize,
) -> Result<Array4<C64>> {
    let one = coil_expand(img, sens)?;
    let (c, h, w) = one.dim();
    let mut out = Array4::zeros((adjacent, c, h, w));
    for mut frame in out.outer_iter_mut() {
        frame.assign(&one);
    }
    Ok(out)
}

/// `k_t − η·M⊙(k_t − k_0) + g_k`.
pub fn data_consistency(
    k_t: &KSpaceVolume,
    k_0: &KSpaceVolume,
    mask: &SamplingMask,
    eta: f64,
    g_k: &KSpaceVolume,
) -> Result<KSpaceVolume> {
    let dim = k_t.dim();
    if k_0.dim() != dim || g_k.dim() != dim {
        return Err(shape(format!("k_t {dim:?}, k_0 {:?}, g_k {:?}", k_0.dim(), g_k.dim())));
    }
    let (a, _, h, w) = dim;
    if mask.dim() != (a, h, w) {
        return Err(shape(format!("mask {:?} vs k-space {dim:?}", mask.dim())));
    }
    if !eta.is_finite() {
        return Err(Error::NonFinite("step size"));
    }
    let mut out = k_t.data.clone();
    let m = mask.array();
    Zip::indexed(&mut out)
        .and(&k_0.data)
        .and(&g_k.data)
        .for_each(|(f, _, y, x), o, &k0, &g| {
            if m[[f, y, x]] == 1 {
                *o = *o - (*o - k0) * eta + g;
            } else {
                *o += g;
            }
        });
    Ok(KSpaceVolume {
        data: out,
        central_index: k_t.central_index,
    })
}

/// Masked forward operator of one frame: `M ⊙ F(S x)`.
pub fn forward_operator(
    x: ArrayView2<'_, C64>,
    sens: &SensitivityMaps,
    mask_frame: ArrayView2<'_, u8>,
) -> Result<Array3<C64>> {
    let mut k = coils_fft(&coil_expand(x, sens)?, false);
    for mut coil in k.outer_iter_mut() {
        coil.zip_mut_with(&mask_frame, |z, &m| {
            if m == 0 {
                *z = C64::new(0.0, 0.0);
            }
        });
    }
    Ok(k)
}

/// Adjoint of [`forward_operator`]: `Sᴴ F⁻¹(M ⊙ y)`.
pub fn adjoint_operator(
    y: ArrayView3<'_, C64>,
    sens: &SensitivityMaps,
    mask_frame: ArrayView2<'_, u8>,
) -> Result<ComplexImage> {
    let mut masked = y.to_owned();
    for mut coil in masked.outer_iter_mut() {
        coil.zip_mut_with(&mask_frame, |z, &m| {
            if m == 0 {
                *z = C64::new(0.0, 0.0);
            }
        });
    }
    coil_combine(coils_fft(&masked, true).view(), sens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use crate::sampling::uniform_kt_mask;

    fn rand_c(rng: &mut Rng) -> C64 {
        C64::new(rng.normal(), rng.normal())
    }

    fn random_volume(rng: &mut Rng, dim: (usize, usize, usize, usize)) -> KSpaceVolume {
        KSpaceVolume::new(Array4::from_shape_fn(dim, |_| rand_c(rng))).unwrap()
    }

    fn random_maps(rng: &mut Rng, coils: usize, h: usize, w: usize) -> SensitivityMaps {
        SensitivityMaps::new(normalize_maps(&Array3::from_shape_fn((coils, h, w), |_| rand_c(rng))))
    }

    #[test]
    fn acs_extraction() {
        let mut rng = Rng::new(0);
        let k = random_volume(&mut rng, (3, 2, 32, 8));
        assert_eq!(extract_acs(&k, 32).unwrap(), k);
        let acs = extract_acs(&k, 16).unwrap();
        for y in 0..32 {
            let nonzero = acs.data.slice(s![.., .., y, ..]).iter().any(|z| z.norm() > 0.0);
            assert_eq!(nonzero, (8..24).contains(&y));
        }
    }

    #[test]
    fn acs_requires_sampled_band() {
        let mut rng = Rng::new(0);
        let k = random_volume(&mut rng, (1, 2, 32, 8));
        let m = uniform_kt_mask(32, 8, 1, 4, 0, &mut rng).unwrap();
        let masked = k.masked(&m).unwrap();
        assert!(matches!(extract_acs(&masked, 8), Err(Error::AcsNotSampled { .. })));
        assert!(estimate_sensitivities(&KSpaceVolume::zeros(1, 2, 8, 8), None).is_err());
    }

    #[test]
    fn sensitivities_unit_rss() {
        let mut rng = Rng::new(1);
        let k = random_volume(&mut rng, (1, 3, 16, 16));
        let maps = estimate_sensitivities(&extract_acs(&k, 6).unwrap(), None).unwrap();
        let rss = maps.s.map_axis(Axis(0), |c| c.iter().map(|z| z.norm_sqr()).sum::<f64>());
        assert!(rss.iter().all(|&r| (r - 1.0).abs() < 1e-6));
        assert_eq!(maps.s_conj, maps.s.mapv(|z| z.conj()));

        let single = random_volume(&mut rng, (1, 1, 8, 8));
        let maps = estimate_sensitivities(&single, None).unwrap();
        assert!(maps.s.iter().all(|z| (z.norm() - 1.0).abs() < 1e-12));
    }

    #[test]
    fn combine_expand_round_trip_and_adjoint() {
        let mut rng = Rng::new(2);
        let sens = random_maps(&mut rng, 4, 12, 10);
        let x = ComplexImage::from_shape_fn((12, 10), |_| rand_c(&mut rng));
        let back = coil_combine(coil_expand(x.view(), &sens).unwrap().view(), &sens).unwrap();
        assert!(back.iter().zip(x.iter()).all(|(a, b)| (a - b).norm() < 1e-12));

        let y = Array3::from_shape_fn((4, 12, 10), |_| rand_c(&mut rng));
        let lhs: C64 = coil_expand(x.view(), &sens)
            .unwrap()
            .iter()
            .zip(y.iter())
            .map(|(a, b)| a * b.conj())
            .sum();
        let rhs: C64 = x
            .iter()
            .zip(coil_combine(y.view(), &sens).unwrap().iter())
            .map(|(a, b)| a * b.conj())
            .sum();
        assert!((lhs - rhs).norm() < 1e-10);

        let zero = coil_combine(Array3::zeros((4, 12, 10)).view(), &sens).unwrap();
        assert!(zero.iter().all(|z| z.norm() == 0.0));
        assert!(coil_combine(Array3::zeros((3, 12, 10)).view(), &sens).is_err());
    }

    #[test]
    fn dc_identities() {
        let mut rng = Rng::new(3);
        let dim = (3, 2, 16, 8);
        let kt = random_volume(&mut rng, dim);
        let k0 = random_volume(&mut rng, dim);
        let zero = KSpaceVolume::zeros(3, 2, 16, 8);
        let m = uniform_kt_mask(16, 8, 3, 4, 4, &mut rng).unwrap();
        assert_eq!(data_consistency(&kt, &k0, &m, 0.0, &zero).unwrap(), kt);
        let out = data_consistency(&kt, &k0, &m, 1.0, &zero).unwrap();
        for ((f, c, y, x), z) in out.data.indexed_iter() {
            let expect = if m.is_sampled(f, y, x) { k0.data[[f, c, y, x]] } else { kt.data[[f, c, y, x]] };
            assert!((*z - expect).norm() < 1e-12);
        }
        let bad = KSpaceVolume::zeros(3, 2, 16, 4);
        assert!(data_consistency(&kt, &bad, &m, 1.0, &zero).is_err());
    }
}
