//! The unrolled generator (reconstructor stages interleaved with data
//! consistency) and the conditional patch discriminator.

pub mod reconstructor;

use ndarray::{s, Array2, Array3, Array4, Axis, Zip};

use crate::diffnet::{
    global_avg_pool, global_avg_pool_backward, leaky_relu_backward, leaky_relu_forward, Conv2d, ConvCache,
    ParamId, ParamSet, PromptTable, LEAKY_SLOPE,
};
use crate::error::{invalid, shape, Result};
use crate::losses::fidelity::combine_backward;
use crate::mri::{
    acs_coil_images, coil_combine, coil_expand, coils_fft, data_consistency, extract_acs, normalize_maps,
    volume_fft, KSpaceVolume, SensitivityMaps, SensitivityRefiner, SENS_EPS,
};
use crate::numerics::{ComplexImage, RealImage, Rng, C64};
use crate::sampling::SamplingMask;

pub use reconstructor::{Reconstructor, SmeRefiner};
use reconstructor::{ReconCache, SmeCache};

/// Unroll count of the full-size configuration.
pub const FULL_UNROLLS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub unrolls: usize,
    pub base_channels: usize,
    pub prompt_channels: usize,
    pub adjacent: usize,
    pub acs_lines: usize,
    pub coils: usize,
    /// `F⁽ᵗ⁾ = F̂⁽ᵗ⁾ + F⁽ᵗ⁻¹⁾` when set, `F⁽ᵗ⁾ = F̂⁽ᵗ⁾` otherwise.
    pub residual: bool,
    pub sme_refiner: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            unrolls: 4,
            base_channels: 8,
            prompt_channels: 4,
            adjacent: 5,
            acs_lines: 16,
            coils: 4,
            residual: true,
            sme_refiner: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.unrolls == 0 {
            return Err(invalid("unroll count must be at least 1"));
        }
        if self.adjacent.is_multiple_of(2) {
            return Err(invalid(format!("adjacent frame count must be odd, got {}", self.adjacent)));
        }
        if self.base_channels == 0 || self.coils == 0 {
            return Err(invalid("channel and coil counts must be positive"));
        }
        Ok(())
    }
}

/// Everything one unroll step produced.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k_in: KSpaceVolume,
    pub g_k: KSpaceVolume,
    pub k_out: KSpaceVolume,
    pub eta: f64,
    /// `F⁽ᵗ⁾`, `1 × C × h × w`.
    pub features: Array4<f64>,
    /// Spatial mean of `F⁽ᵗ⁾`.
    pub pooled: Vec<f64>,
    /// Coil-combined central frame of `k_out`.
    pub image: ComplexImage,
}

#[derive(Debug, Clone)]
pub struct UnrollTrace {
    pub steps: Vec<StepRecord>,
    pub sens: SensitivityMaps,
    /// Coil-combined inverse FFT of the central frame of `k0`.
    pub zero_filled: ComplexImage,
}

impl UnrollTrace {
    pub fn final_image(&self) -> &ComplexImage {
        &self.steps.last().expect("at least one unroll step").image
    }

    pub fn final_kspace(&self) -> &KSpaceVolume {
        &self.steps.last().expect("at least one unroll step").k_out
    }
}

struct StepCache {
    /// Coil images of `k_in`.
    coil_images: Array4<C64>,
    recon: ReconCache,
    head: ConvCache,
    delta: ComplexImage,
    /// Coil images of the central frame of `k_out`.
    out_coil_images: Array3<C64>,
}

/// Intermediate values needed by [`Generator::backward`].
pub struct UnrollCache {
    steps: Vec<StepCache>,
    sme: Option<(SmeCache, Array3<C64>)>,
    k0: KSpaceVolume,
    mask: SamplingMask,
}

/// Loss gradients arriving at one unroll step (complex convention
/// `∂L/∂Re + i ∂L/∂Im`).
#[derive(Debug, Clone, Default)]
pub struct StepGrad {
    /// On the central frame of `k_out`.
    pub k_central: Option<Array3<C64>>,
    /// On the step's coil-combined image.
    pub image: Option<ComplexImage>,
    /// On the pooled feature vector.
    pub pooled: Option<Vec<f64>>,
    /// On the sensitivity maps.
    pub sens: Option<Array3<C64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamSet,
    stages: Vec<Reconstructor>,
    heads: Vec<Conv2d>,
    prompts: PromptTable,
    etas: Vec<ParamId>,
    sme: Option<SmeRefiner>,
}

/// Binds a refiner to its parameters for [`crate::mri::estimate_sensitivities`].
pub struct BoundRefiner<'a> {
    pub refiner: &'a SmeRefiner,
    pub params: &'a ParamSet,
}

impl SensitivityRefiner for BoundRefiner<'_> {
    fn refine(&self, maps: &Array3<C64>) -> Result<Array3<C64>> {
        Ok(self.refiner.forward(self.params, maps)?.0)
    }
}

impl Generator {
    pub fn new(config: GeneratorConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let c = config.base_channels;
        let cin = 2 * config.adjacent + config.prompt_channels;
        let mut stages = Vec::with_capacity(config.unrolls);
        let mut heads = Vec::with_capacity(config.unrolls);
        let mut etas = Vec::with_capacity(config.unrolls);
        for t in 0..config.unrolls {
            stages.push(Reconstructor::new(&mut ps, rng, &format!("stage{t}"), cin, c));
            heads.push(Conv2d::new(&mut ps, rng, &format!("head{t}"), c, 2, 1, 1, 0.1));
            etas.push(ps.add(format!("eta.{t}"), ndarray::arr1(&[1.0]).into_dyn(), false));
        }
        let prompts = PromptTable::new(&mut ps, rng, config.unrolls, config.prompt_channels);
        let sme = config
            .sme_refiner
            .then(|| SmeRefiner::new(&mut ps, rng, config.coils, 8));
        Ok(Self { config, params: ps, stages, heads, prompts, etas, sme })
    }

    pub fn eta(&self, t: usize) -> f64 {
        self.params.scalar(self.etas[t])
    }

    pub fn set_eta(&mut self, t: usize, value: f64) {
        self.params.get_mut(self.etas[t]).value.fill(value);
    }

    /// Zeroes every convolution weight and bias (reconstructors, heads and
    /// the refiner); step sizes and prompts are kept.
    pub fn zero_network_weights(&mut self) {
        let mut ids = Vec::new();
        for st in &self.stages {
            for l in st.layers() {
                ids.extend([l.w, l.b]);
            }
        }
        for h in &self.heads {
            ids.extend([h.w, h.b]);
        }
        if let Some(sme) = &self.sme {
            for l in sme.layers() {
                ids.extend([l.w, l.b]);
            }
        }
        for id in ids {
            self.params.get_mut(id).value.fill(0.0);
        }
    }

    /// Conv weight ids, for tests and diagnostics.
    pub fn conv_weight_ids(&self) -> Vec<ParamId> {
        let mut ids: Vec<ParamId> = self.stages.iter().flat_map(|s| s.layers().map(|l| l.w)).collect();
        ids.extend(self.heads.iter().map(|h| h.w));
        if let Some(sme) = &self.sme {
            ids.extend(sme.layers().map(|l| l.w));
        }
        ids
    }

    /// Calibration-based maps, refined when the refiner is enabled.
    pub fn sensitivities(&self, k0: &KSpaceVolume) -> Result<SensitivityMaps> {
        let acs = extract_acs(k0, self.config.acs_lines)?;
        match &self.sme {
            Some(r) => crate::mri::estimate_sensitivities(
                &acs,
                Some(&BoundRefiner { refiner: r, params: &self.params }),
            ),
            None => crate::mri::estimate_sensitivities(&acs, None),
        }
    }

    fn check_input(&self, k0: &KSpaceVolume, mask: &SamplingMask) -> Result<()> {
        let (a, c, h, w) = k0.dim();
        if a != self.config.adjacent || c != self.config.coils {
            return Err(shape(format!(
                "k-space has {a} frames × {c} coils, generator expects {} × {}",
                self.config.adjacent, self.config.coils
            )));
        }
        if h % 2 != 0 || w % 2 != 0 {
            return Err(shape(format!("image sides must be even, got {h}x{w}")));
        }
        if mask.dim() != (a, h, w) {
            return Err(shape(format!("mask {:?} vs k-space {:?}", mask.dim(), k0.dim())));
        }
        Ok(())
    }

    pub fn forward(&self, k0: &KSpaceVolume, mask: &SamplingMask) -> Result<(UnrollTrace, UnrollCache)> {
        self.check_input(k0, mask)?;
        let (a, ncoils, h, w) = k0.dim();
        let cfg = &self.config;
        let ps = &self.params;

        let acs = extract_acs(k0, cfg.acs_lines)?;
        if acs.data.iter().all(|z| z.re == 0.0 && z.im == 0.0) {
            return Err(crate::Error::Empty("calibration data is all zero"));
        }
        let base = normalize_maps(&acs_coil_images(&acs));
        let (sens, sme_cache) = match &self.sme {
            Some(r) => {
                let (u, cache) = r.forward(ps, &base)?;
                (SensitivityMaps::new(normalize_maps(&u)), Some((cache, u)))
            }
            None => (SensitivityMaps::new(base), None),
        };
        let zero_filled = coil_combine(coils_fft(&k0.central().to_owned(), true).view(), &sens)?;

        let mut k = k0.clone();
        let mut f_prev = Array4::<f64>::zeros((1, cfg.base_channels, h, w));
        let mut steps = Vec::with_capacity(cfg.unrolls);
        let mut caches = Vec::with_capacity(cfg.unrolls);
        for t in 0..cfg.unrolls {
            let coil_images = volume_fft(&k.data, true);
            let mut input = Array4::<f64>::zeros((1, 2 * a + cfg.prompt_channels, h, w));
            for f in 0..a {
                let img = coil_combine(coil_images.index_axis(Axis(0), f), &sens)?;
                input.slice_mut(s![0, f, .., ..]).assign(&img.mapv(|z| z.re));
                input.slice_mut(s![0, a + f, .., ..]).assign(&img.mapv(|z| z.im));
            }
            input
                .slice_mut(s![.., 2 * a.., .., ..])
                .assign(&self.prompts.embed(t, ps, h, w)?);

            let (f_hat, recon) = self.stages[t].forward(ps, &input)?;
            let features = if cfg.residual { &f_hat + &f_prev } else { f_hat };
            let (d, head) = self.heads[t].forward(ps, &features)?;
            let delta = ComplexImage::from_shape_fn((h, w), |(y, x)| C64::new(d[[0, 0, y, x]], d[[0, 1, y, x]]));
            let g_one = coils_fft(&coil_expand(delta.view(), &sens)?, false);
            let mut g_k = KSpaceVolume::zeros(a, ncoils, h, w);
            g_k.central_index = k.central_index;
            for mut frame in g_k.data.outer_iter_mut() {
                frame.assign(&g_one);
            }
            let eta = self.eta(t);
            let k_out = data_consistency(&k, k0, mask, eta, &g_k)?;
            let out_coil_images = coils_fft(&k_out.central().to_owned(), true);
            let image = coil_combine(out_coil_images.view(), &sens)?;
            let pooled = global_avg_pool(&features)?.row(0).to_vec();

            caches.push(StepCache { coil_images, recon, head, delta, out_coil_images });
            f_prev = features.clone();
            steps.push(StepRecord { k_in: k, g_k, k_out: k_out.clone(), eta, features, pooled, image });
            k = k_out;
        }
        Ok((
            UnrollTrace { steps, sens, zero_filled },
            UnrollCache { steps: caches, sme: sme_cache, k0: k0.clone(), mask: mask.clone() },
        ))
    }

    /// Accumulates parameter gradients for the per-step loss gradients
    /// `grads` (one entry per unroll step).
    pub fn backward(&mut self, trace: &UnrollTrace, cache: &UnrollCache, grads: &[StepGrad]) -> Result<()> {
        let cfg = self.config.clone();
        if grads.len() != cfg.unrolls || trace.steps.len() != cfg.unrolls {
            return Err(shape(format!("expected {} step gradients, got {}", cfg.unrolls, grads.len())));
        }
        let sens = &trace.sens;
        let (a, ncoils, h, w) = cache.k0.dim();
        let central = cache.k0.central_index;
        let m = cache.mask.array();

        let mut g_k = Array4::<C64>::zeros((a, ncoils, h, w));
        let mut g_f_next = Array4::<f64>::zeros((1, cfg.base_channels, h, w));
        let mut g_s = Array3::<C64>::zeros((ncoils, h, w));

        for t in (0..cfg.unrolls).rev() {
            let rec = &trace.steps[t];
            let sc = &cache.steps[t];
            let lg = &grads[t];

            // losses on this step's output
            if let Some(gi) = &lg.image {
                let (gk, gs) = combine_backward(gi, sc.out_coil_images.view(), sens);
                g_k.index_axis_mut(Axis(0), central).zip_mut_with(&gk, |a, &b| *a += b);
                g_s += &gs;
            }
            if let Some(gk) = &lg.k_central {
                g_k.index_axis_mut(Axis(0), central).zip_mut_with(gk, |a, &b| *a += b);
            }
            if let Some(gs) = &lg.sens {
                g_s += gs;
            }

            // data consistency
            let eta = rec.eta;
            let mut g_eta = 0.0;
            Zip::indexed(&g_k)
                .and(&rec.k_in.data)
                .and(&cache.k0.data)
                .for_each(|(f, _, y, x), g, &kt, &k0| {
                    if m[[f, y, x]] == 1 {
                        g_eta -= (g.conj() * (kt - k0)).re;
                    }
                });
            self.params.accumulate_scalar(self.etas[t], g_eta);
            let g_gk = g_k.clone();
            Zip::indexed(&mut g_k).for_each(|(f, _, y, x), g| {
                if m[[f, y, x]] == 1 {
                    *g *= 1.0 - eta;
                }
            });

            // G_k = F(S Δ) broadcast over frames
            let mut g_y = Array3::<C64>::zeros((ncoils, h, w));
            for frame in g_gk.outer_iter() {
                g_y += &coils_fft(&frame.to_owned(), true);
            }
            let mut g_delta = ComplexImage::zeros((h, w));
            for (c, gy) in g_y.outer_iter().enumerate() {
                Zip::from(&mut g_delta)
                    .and(&gy)
                    .and(&sens.s_conj.index_axis(Axis(0), c))
                    .for_each(|gd, &g, &sc| *gd += sc * g);
                Zip::from(g_s.index_axis_mut(Axis(0), c))
                    .and(&gy)
                    .and(&sc.delta)
                    .for_each(|gs, &g, &d| *gs += d.conj() * g);
            }
            let mut g_d = Array4::<f64>::zeros((1, 2, h, w));
            g_d.slice_mut(s![0, 0, .., ..]).assign(&g_delta.mapv(|z| z.re));
            g_d.slice_mut(s![0, 1, .., ..]).assign(&g_delta.mapv(|z| z.im));

            // features
            let mut g_f = self.heads[t].backward(&mut self.params, &sc.head, &g_d);
            g_f += &g_f_next;
            if let Some(gp) = &lg.pooled {
                let gp = Array2::from_shape_vec((1, gp.len()), gp.clone()).map_err(|e| shape(e.to_string()))?;
                g_f += &global_avg_pool_backward(&gp, h, w);
            }
            g_f_next = if cfg.residual { g_f.clone() } else { Array4::zeros(g_f.dim()) };

            let g_in = self.stages[t].backward(&mut self.params, &sc.recon, &g_f);
            self.prompts
                .backward(t, &mut self.params, &g_in.slice(s![.., 2 * a.., .., ..]).to_owned())?;
            for f in 0..a {
                let gi = ComplexImage::from_shape_fn((h, w), |(y, x)| C64::new(g_in[[0, f, y, x]], g_in[[0, a + f, y, x]]));
                let (gk, gs) = combine_backward(&gi, sc.coil_images.index_axis(Axis(0), f), sens);
                g_k.index_axis_mut(Axis(0), f).zip_mut_with(&gk, |a, &b| *a += b);
                g_s += &gs;
            }
        }

        if let (Some(r), Some((sme_cache, u))) = (&self.sme, &cache.sme) {
            let g_u = normalize_maps_backward(u, &g_s);
            r.backward(&mut self.params, sme_cache, &g_u);
        }
        Ok(())
    }
}

/// Gradient of `u / rss(u)` (the pixelwise normalization) with respect to
/// `u`. Where the RSS sits at its floor the map is treated as `u / ε`.
pub fn normalize_maps_backward(u: &Array3<C64>, g: &Array3<C64>) -> Array3<C64> {
    let (nc, h, w) = u.dim();
    let mut out = Array3::<C64>::zeros((nc, h, w));
    for y in 0..h {
        for x in 0..w {
            let r2: f64 = (0..nc).map(|c| u[[c, y, x]].norm_sqr()).sum();
            let r = r2.sqrt();
            if r <= SENS_EPS {
                for c in 0..nc {
                    out[[c, y, x]] = g[[c, y, x]] / SENS_EPS;
                }
                continue;
            }
            let dot: f64 = (0..nc).map(|c| (g[[c, y, x]].conj() * u[[c, y, x]]).re).sum();
            for c in 0..nc {
                out[[c, y, x]] = g[[c, y, x]] / r - u[[c, y, x]] * (dot / (r * r * r));
            }
        }
    }
    out
}

/// Four stride-2 convolutions on (candidate, condition) magnitudes, giving
/// one logit per patch.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub params: ParamSet,
    convs: Vec<Conv2d>,
    base: usize,
}

pub struct DiscCache {
    convs: Vec<ConvCache>,
    acts: Vec<Array4<f64>>,
}

impl Discriminator {
    pub fn new(rng: &mut Rng, base: usize) -> Self {
        let mut ps = ParamSet::new();
        let widths = [2, base, 2 * base, 2 * base, 1];
        let convs = widths
            .windows(2)
            .enumerate()
            .map(|(i, wd)| Conv2d::new(&mut ps, rng, &format!("disc{i}"), wd[0], wd[1], 3, 2, 1.0))
            .collect();
        Self { params: ps, convs, base }
    }

    pub fn base_channels(&self) -> usize {
        self.base
    }

    pub fn forward(&self, candidate: &RealImage, condition: &RealImage) -> Result<(Array4<f64>, DiscCache)> {
        if candidate.dim() != condition.dim() {
            return Err(shape(format!(
                "candidate {:?} vs condition {:?}",
                candidate.dim(),
                condition.dim()
            )));
        }
        let (h, w) = candidate.dim();
        let mut x = Array4::<f64>::zeros((1, 2, h, w));
        x.slice_mut(s![0, 0, .., ..]).assign(candidate);
        x.slice_mut(s![0, 1, .., ..]).assign(condition);
        let mut convs = Vec::with_capacity(self.convs.len());
        let mut acts = Vec::with_capacity(self.convs.len());
        let last = self.convs.len() - 1;
        for (i, conv) in self.convs.iter().enumerate() {
            let (z, c) = conv.forward(&self.params, &x)?;
            convs.push(c);
            x = if i < last { leaky_relu_forward(&z, LEAKY_SLOPE) } else { z };
            acts.push(x.clone());
        }
        Ok((x, DiscCache { convs, acts }))
    }

    pub fn logits(&self, candidate: &RealImage, condition: &RealImage) -> Result<Array4<f64>> {
        Ok(self.forward(candidate, condition)?.0)
    }

    /// Accumulates parameter gradients and returns the gradient with respect
    /// to the candidate image.
    pub fn backward(&mut self, cache: &DiscCache, g_logits: &Array4<f64>) -> RealImage {
        let mut g = g_logits.clone();
        let last = self.convs.len() - 1;
        for i in (0..self.convs.len()).rev() {
            if i < last {
                g = leaky_relu_backward(&cache.acts[i], &g, LEAKY_SLOPE);
            }
            g = self.convs[i].backward(&mut self.params, &cache.convs[i], &g);
        }
        g.slice(s![0, 0, .., ..]).to_owned()
    }
}
