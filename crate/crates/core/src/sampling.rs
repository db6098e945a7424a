//! k-t undersampling masks: uniform, variable-density Gaussian and
//! golden-angle pseudo-radial, each with a fully sampled calibration band.
//!
//! Phase-encode lines are rows (height axis); the readout runs along width.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{s, Array2, Array3, Axis};

use crate::error::{invalid, Error, Result};
use crate::numerics::Rng;

/// Golden-angle increment between consecutive radial frames, in degrees.
pub const GOLDEN_ANGLE_DEG: f64 = 111.246;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Trajectory {
    Uniform,
    Gaussian,
    Radial,
}

impl Trajectory {
    pub const ALL: [Trajectory; 3] = [Trajectory::Uniform, Trajectory::Gaussian, Trajectory::Radial];

    pub fn code(self) -> u8 {
        match self {
            Trajectory::Uniform => 0,
            Trajectory::Gaussian => 1,
            Trajectory::Radial => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .get(code as usize)
            .copied()
            .ok_or_else(|| invalid(format!("unknown trajectory code {code}")))
    }
}

impl fmt::Display for Trajectory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Trajectory::Uniform => "uniform",
            Trajectory::Gaussian => "gaussian",
            Trajectory::Radial => "radial",
        })
    }
}

impl FromStr for Trajectory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uniform" => Ok(Trajectory::Uniform),
            "gaussian" => Ok(Trajectory::Gaussian),
            "radial" => Ok(Trajectory::Radial),
            other => Err(invalid(format!("unknown trajectory '{other}'"))),
        }
    }
}

/// Binary k-t mask (`frames × height × width`).
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingMask {
    mask: Array3<u8>,
    pub acs_lines: usize,
    pub accel: usize,
    pub trajectory: Trajectory,
}

/// Rows of the centered calibration band.
pub fn acs_rows(h: usize, acs_lines: usize) -> Range<usize> {
    let start = (h / 2).saturating_sub(acs_lines / 2);
    start..(start + acs_lines).min(h)
}

fn check_args(h: usize, w: usize, frames: usize, accel: usize, acs_lines: usize) -> Result<()> {
    if h == 0 || w == 0 || frames == 0 {
        return Err(invalid(format!("empty mask shape {frames}x{h}x{w}")));
    }
    if accel < 1 {
        return Err(invalid("acceleration must be >= 1"));
    }
    if acs_lines > h {
        return Err(invalid(format!("acs_lines {acs_lines} exceeds height {h}")));
    }
    Ok(())
}

impl SamplingMask {
    pub fn from_array(
        mask: Array3<u8>,
        acs_lines: usize,
        accel: usize,
        trajectory: Trajectory,
    ) -> Result<Self> {
        if mask.iter().any(|&v| v > 1) {
            return Err(invalid("mask entries must be 0 or 1"));
        }
        Ok(Self {
            mask,
            acs_lines,
            accel,
            trajectory,
        })
    }

    pub fn all_ones(frames: usize, h: usize, w: usize) -> Self {
        Self {
            mask: Array3::ones((frames, h, w)),
            acs_lines: h,
            accel: 1,
            trajectory: Trajectory::Uniform,
        }
    }

    /// Builds a mask of the given trajectory. With `static_frames` every
    /// frame repeats frame 0's pattern. Radial masks get the calibration band
    /// added on top of the spokes.
    #[allow(clippy::too_many_arguments)]
    pub fn generate(
        trajectory: Trajectory,
        h: usize,
        w: usize,
        frames: usize,
        accel: usize,
        acs_lines: usize,
        static_frames: bool,
        rng: &mut Rng,
    ) -> Result<Self> {
        let mut m = match trajectory {
            Trajectory::Uniform => uniform_kt_mask(h, w, frames, accel, acs_lines, rng)?,
            Trajectory::Gaussian => gaussian_kt_mask(h, w, frames, accel, acs_lines, rng)?,
            Trajectory::Radial => {
                check_args(h, w, frames, accel, acs_lines)?;
                radial_kt_mask(h, w, frames, accel, rng)?.with_acs_band(acs_lines)?
            }
        };
        if static_frames {
            let first = m.mask.index_axis(Axis(0), 0).to_owned();
            for mut f in m.mask.outer_iter_mut() {
                f.assign(&first);
            }
        }
        Ok(m)
    }

    pub fn array(&self) -> &Array3<u8> {
        &self.mask
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.mask.dim()
    }

    pub fn frames(&self) -> usize {
        self.mask.dim().0
    }

    pub fn is_sampled(&self, frame: usize, y: usize, x: usize) -> bool {
        self.mask[[frame, y, x]] == 1
    }

    pub fn frame(&self, f: usize) -> Array2<u8> {
        self.mask.index_axis(Axis(0), f).to_owned()
    }

    pub fn sampled(&self) -> usize {
        self.mask.iter().map(|&v| v as usize).sum()
    }

    /// Rows with at least one sample in frame `f`.
    pub fn sampled_rows(&self, f: usize) -> Vec<usize> {
        self.mask
            .index_axis(Axis(0), f)
            .outer_iter()
            .enumerate()
            .filter(|(_, row)| row.iter().any(|&v| v == 1))
            .map(|(y, _)| y)
            .collect()
    }

    /// Forces the central `acs_lines` rows on in every frame.
    pub fn with_acs_band(mut self, acs_lines: usize) -> Result<Self> {
        let (_, h, _) = self.mask.dim();
        if acs_lines > h {
            return Err(invalid(format!("acs_lines {acs_lines} exceeds height {h}")));
        }
        let rows = acs_rows(h, acs_lines);
        self.mask.slice_mut(s![.., rows, ..]).fill(1);
        self.acs_lines = self.acs_lines.max(acs_lines);
        Ok(self)
    }

    /// Mask restricted to the listed frames, in order (indices may repeat).
    pub fn select_frames(&self, frames: &[usize]) -> Self {
        let (_, h, w) = self.mask.dim();
        let mut out = Array3::zeros((frames.len(), h, w));
        for (dst, &src) in frames.iter().enumerate() {
            out.index_axis_mut(Axis(0), dst)
                .assign(&self.mask.index_axis(Axis(0), src));
        }
        Self {
            mask: out,
            ..*self
        }
    }
}

fn fill_rows(mask: &mut Array3<u8>, frame: usize, rows: impl IntoIterator<Item = usize>) {
    for y in rows {
        mask.slice_mut(s![frame, y, ..]).fill(1);
    }
}

/// Every `accel`-th row starting at `frame % accel`, plus the ACS band.
pub fn uniform_kt_mask(
    h: usize,
    w: usize,
    frames: usize,
    accel: usize,
    acs_lines: usize,
    _rng: &mut Rng,
) -> Result<SamplingMask> {
    check_args(h, w, frames, accel, acs_lines)?;
    let mut mask = Array3::zeros((frames, h, w));
    for f in 0..frames {
        fill_rows(&mut mask, f, (f % accel..h).step_by(accel));
        fill_rows(&mut mask, f, acs_rows(h, acs_lines));
    }
    Ok(SamplingMask {
        mask,
        acs_lines,
        accel,
        trajectory: Trajectory::Uniform,
    })
}

/// Number of non-calibration rows drawn per frame by [`gaussian_kt_mask`].
pub fn gaussian_line_budget(h: usize, accel: usize) -> usize {
    (h as f64 / accel as f64).round() as usize
}

/// Per frame, `round(h/accel)` distinct rows outside the ACS band drawn
/// without replacement with density `exp(-(y-h/2)^2 / (2 (h/6)^2))`.
pub fn gaussian_kt_mask(
    h: usize,
    w: usize,
    frames: usize,
    accel: usize,
    acs_lines: usize,
    rng: &mut Rng,
) -> Result<SamplingMask> {
    check_args(h, w, frames, accel, acs_lines)?;
    let acs = acs_rows(h, acs_lines);
    let mut mask = Array3::zeros((frames, h, w));
    if accel == 1 {
        mask.fill(1);
    } else {
        let sigma = h as f64 / 6.0;
        let center = (h / 2) as f64;
        let density: Vec<f64> = (0..h)
            .map(|y| (-(y as f64 - center).powi(2) / (2.0 * sigma * sigma)).exp())
            .collect();
        for f in 0..frames {
            let mut pool: Vec<usize> = (0..h).filter(|y| !acs.contains(y)).collect();
            let budget = gaussian_line_budget(h, accel).min(pool.len());
            for _ in 0..budget {
                let total: f64 = pool.iter().map(|&y| density[y]).sum();
                let mut target = rng.uniform() * total;
                let mut pick = pool.len() - 1;
                for (i, &y) in pool.iter().enumerate() {
                    target -= density[y];
                    if target < 0.0 {
                        pick = i;
                        break;
                    }
                }
                let y = pool.swap_remove(pick);
                fill_rows(&mut mask, f, [y]);
            }
            fill_rows(&mut mask, f, acs.clone());
        }
    }
    Ok(SamplingMask {
        mask,
        acs_lines,
        accel,
        trajectory: Trajectory::Gaussian,
    })
}

/// Spokes per frame: `round((pi/2) * h / accel)`.
pub fn radial_spoke_count(h: usize, accel: usize) -> usize {
    ((PI / 2.0) * h as f64 / accel as f64).round().max(1.0) as usize
}

/// Spoke angles (radians) of frame `f`.
pub fn radial_spoke_angles(h: usize, accel: usize, frame: usize) -> Vec<f64> {
    let n = radial_spoke_count(h, accel);
    let offset = frame as f64 * GOLDEN_ANGLE_DEG.to_radians();
    (0..n).map(|s| PI * s as f64 / n as f64 + offset).collect()
}

/// Rasterizes one full-diameter spoke through `(h/2, w/2)` into `frame`.
/// The radius stops one pixel short of the border so the pattern is
/// point-symmetric on even grids.
pub fn rasterize_spoke(frame: &mut Array2<u8>, angle: f64) {
    let (h, w) = frame.dim();
    let (cy, cx) = ((h / 2) as isize, (w / 2) as isize);
    let radius = (h.min(w) / 2).saturating_sub(1) as isize;
    let (sin, cos) = angle.sin_cos();
    for k in -2 * radius..=2 * radius {
        let r = k as f64 * 0.5;
        let dy = (r * sin).round() as isize;
        let dx = (r * cos).round() as isize;
        frame[[(cy + dy) as usize, (cx + dx) as usize]] = 1;
    }
}

/// Pseudo-radial golden-angle mask rasterized on the Cartesian grid.
pub fn radial_kt_mask(
    h: usize,
    w: usize,
    frames: usize,
    accel: usize,
    _rng: &mut Rng,
) -> Result<SamplingMask> {
    check_args(h, w, frames, accel, 0)?;
    let mut mask = Array3::zeros((frames, h, w));
    for (f, mut frame) in mask.outer_iter_mut().enumerate() {
        let mut plane = frame.to_owned();
        for angle in radial_spoke_angles(h, accel, f) {
            rasterize_spoke(&mut plane, angle);
        }
        frame.assign(&plane);
    }
    Ok(SamplingMask {
        mask,
        acs_lines: 0,
        accel,
        trajectory: Trajectory::Radial,
    })
}

/// Total entries over sampled entries.
pub fn effective_acceleration(m: &SamplingMask) -> f64 {
    let sampled = m.sampled();
    if sampled == 0 {
        return f64::INFINITY;
    }
    m.mask.len() as f64 / sampled as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_line_count() {
        let mut rng = Rng::new(0);
        let m = uniform_kt_mask(128, 32, 3, 8, 16, &mut rng).unwrap();
        assert_eq!(m.sampled_rows(0).len(), 30);
        let eff = effective_acceleration(&m.select_frames(&[0]));
        assert!((eff - 128.0 / 30.0).abs() < 1e-12);
        // offset shifts with the frame index
        assert!(m.sampled_rows(1).contains(&1));
        assert!(!m.sampled_rows(0).contains(&1));
    }

    #[test]
    fn accel_one_is_full() {
        let mut rng = Rng::new(0);
        for m in [
            uniform_kt_mask(16, 8, 2, 1, 4, &mut rng).unwrap(),
            gaussian_kt_mask(16, 8, 2, 1, 4, &mut rng).unwrap(),
        ] {
            assert!(m.array().iter().all(|&v| v == 1));
            assert_eq!(effective_acceleration(&m), 1.0);
        }
    }

    #[test]
    fn gaussian_count_is_exact() {
        let mut rng = Rng::new(5);
        for accel in [4, 8, 16, 24] {
            let m = gaussian_kt_mask(64, 16, 4, accel, 16, &mut rng).unwrap();
            for f in 0..4 {
                assert_eq!(m.sampled_rows(f).len(), 16 + gaussian_line_budget(64, accel));
            }
        }
    }

    #[test]
    fn acs_band_checked() {
        let mut rng = Rng::new(0);
        assert!(uniform_kt_mask(8, 8, 1, 2, 9, &mut rng).is_err());
        assert!(gaussian_kt_mask(8, 8, 1, 0, 2, &mut rng).is_err());
        assert_eq!(acs_rows(128, 16), 56..72);
    }

    #[test]
    fn radial_spokes() {
        assert_eq!(radial_spoke_count(128, 16), 13);
        let mut rng = Rng::new(0);
        let m = radial_kt_mask(32, 32, 3, 4, &mut rng).unwrap();
        for f in 0..3 {
            assert!(m.is_sampled(f, 16, 16));
        }
        assert_ne!(m.frame(0), m.frame(1));
    }

    #[test]
    fn half_sampled_is_two() {
        let mut arr = Array3::zeros((1, 4, 4));
        arr.slice_mut(s![0, 0..2, ..]).fill(1);
        let m = SamplingMask::from_array(arr, 0, 2, Trajectory::Uniform).unwrap();
        assert_eq!(effective_acceleration(&m), 2.0);
    }

    #[test]
    fn static_frames_repeat() {
        let mut rng = Rng::new(1);
        let m = SamplingMask::generate(Trajectory::Gaussian, 32, 8, 4, 4, 8, true, &mut rng).unwrap();
        for f in 1..4 {
            assert_eq!(m.frame(f), m.frame(0));
        }
    }
}
