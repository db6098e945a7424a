//! Reconstruction quality per domain × trajectory × acceleration, with the
//! zero-filled baseline alongside.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::losses::{data_range, magnitude, nmse, psnr, ssim};
use crate::numerics::{RealImage, Rng};
use crate::sampling::{SamplingMask, Trajectory};
use crate::trainer::dataset::{Dataset, SampleRef};
use crate::trainer::{combined_magnitude, reference_maps};
use crate::unroll::Generator;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MetricStats {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if mean.is_finite() {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub ssim: f64,
    pub psnr: f64,
    pub nmse: f64,
}

impl Metrics {
    pub fn compute(rec: &RealImage, gt: &RealImage) -> Result<Self> {
        Ok(Self {
            ssim: ssim(rec, gt, data_range(gt))?,
            psnr: psnr(rec, gt)?,
            nmse: nmse(rec, gt)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub domain: usize,
    pub trajectory: Trajectory,
    pub accel: usize,
    pub samples: usize,
    pub ssim: MetricStats,
    pub psnr: MetricStats,
    pub nmse: MetricStats,
    pub zf_ssim: MetricStats,
    pub zf_psnr: MetricStats,
    pub zf_nmse: MetricStats,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub trajectories: Vec<Trajectory>,
    pub accelerations: Vec<usize>,
    pub seed: u64,
    /// Use only the first `n` samples of each domain.
    pub max_samples: Option<usize>,
}

/// Reconstruction, zero-filled and reference magnitudes of one sample. The
/// reference and the zero-filled baseline use [`reference_maps`].
pub fn reconstruct_sample(
    gen: &Generator,
    data: &Dataset,
    s: SampleRef,
    mask: &SamplingMask,
) -> Result<(RealImage, RealImage, RealImage)> {
    let kg = data.kg(s, gen.config.adjacent)?;
    let k0 = kg.masked(mask)?;
    let (trace, _) = gen.forward(&k0, mask)?;
    let maps = reference_maps(&k0, gen.config.acs_lines)?;
    let gt = combined_magnitude(&kg, &maps)?;
    Ok((magnitude(trace.final_image()), combined_magnitude(&k0, &maps)?, gt))
}

/// Mask for evaluation sample `index`, independent of scheduling order.
#[allow(clippy::too_many_arguments)]
pub fn eval_mask(
    cfg: &EvalConfig,
    gen: &Generator,
    h: usize,
    w: usize,
    domain: usize,
    trajectory: Trajectory,
    accel: usize,
    index: usize,
) -> Result<SamplingMask> {
    let stream = ((domain as u64) << 48) ^ ((trajectory.code() as u64) << 40) ^ ((accel as u64) << 24) ^ index as u64;
    let mut rng = Rng::new(cfg.seed).fork(stream);
    SamplingMask::generate(trajectory, h, w, gen.config.adjacent, accel, gen.config.acs_lines, false, &mut rng)
}

/// Deterministic metrics table, one row per (domain, trajectory,
/// acceleration) in that nesting order. Samples are processed in parallel.
pub fn evaluate(gen: &Generator, data: &Dataset, domains: &[usize], cfg: &EvalConfig) -> Result<Vec<EvalRow>> {
    let (h, w) = (data.config.h, data.config.w);
    let mut rows = Vec::new();
    for &domain in domains {
        let mut samples = data.samples(domain);
        if let Some(n) = cfg.max_samples {
            samples.truncate(n);
        }
        if samples.is_empty() {
            return Err(Error::Empty("evaluation domain has no samples"));
        }
        for &trajectory in &cfg.trajectories {
            for &accel in &cfg.accelerations {
                let per: Vec<(Metrics, Metrics)> = samples
                    .par_iter()
                    .enumerate()
                    .map(|(i, &s)| {
                        let mask = eval_mask(cfg, gen, h, w, domain, trajectory, accel, i)?;
                        let (rec, zf, gt) = reconstruct_sample(gen, data, s, &mask)?;
                        Ok((Metrics::compute(&rec, &gt)?, Metrics::compute(&zf, &gt)?))
                    })
                    .collect::<Result<_>>()?;
                let col = |f: &dyn Fn(&(Metrics, Metrics)) -> f64| MetricStats::of(&per.iter().map(f).collect::<Vec<_>>());
                rows.push(EvalRow {
                    domain,
                    trajectory,
                    accel,
                    samples: per.len(),
                    ssim: col(&|m| m.0.ssim),
                    psnr: col(&|m| m.0.psnr),
                    nmse: col(&|m| m.0.nmse),
                    zf_ssim: col(&|m| m.1.ssim),
                    zf_psnr: col(&|m| m.1.psnr),
                    zf_nmse: col(&|m| m.1.nmse),
                });
            }
        }
    }
    Ok(rows)
}

/// Sample-weighted means over rows: `(ssim, psnr, nmse, zf_ssim, zf_psnr, zf_nmse)`.
pub fn summarize(rows: &[EvalRow]) -> [f64; 6] {
    let n: usize = rows.iter().map(|r| r.samples).sum();
    let mut out = [0.0; 6];
    for r in rows {
        let w = r.samples as f64 / n as f64;
        let vals = [r.ssim.mean, r.psnr.mean, r.nmse.mean, r.zf_ssim.mean, r.zf_psnr.mean, r.zf_nmse.mean];
        for (o, v) in out.iter_mut().zip(vals) {
            *o += w * v;
        }
    }
    out
}
