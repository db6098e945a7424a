//! The training procedure: per-step fidelity, edge-aware and feature
//! alignment losses, per-step discriminator updates, the final adversarial
//! generator term, CoV loss weighting and one optimizer step per sample.

pub mod checkpoint;
pub mod cov;
pub mod dataset;
pub mod eval;

use ndarray::Array4;

use crate::diffnet::{clip_grad_norm, lr_schedule, AdamW};
use crate::error::{invalid, Error, Result};
use crate::losses::{
    bce_loss, ear::ear_loss_with, ear_mask, fidelity::fidelity_loss_target, magnitude, magnitude_backward,
    sda_layer_loss, FeatureBank, LABEL_FAKE, LABEL_REAL,
};
use crate::mri::{coil_combine, coils_fft, estimate_sensitivities, extract_acs, KSpaceVolume, SensitivityMaps};
use crate::numerics::{RealImage, Rng};
use crate::phantom::TRAINING_DOMAINS;
use crate::sampling::{SamplingMask, Trajectory};
use crate::unroll::{Discriminator, Generator, GeneratorConfig, StepGrad};

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use cov::{cov_update_weights, curriculum_schedule, CovHistory, LossWeights};
pub use dataset::{DataConfig, Dataset, SampleRef};
pub use eval::{evaluate, EvalConfig, EvalRow};

/// Which optional loss terms are active (the ablation switches).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Terms {
    pub ear: bool,
    pub sda: bool,
    pub gan: bool,
}

impl Default for Terms {
    fn default() -> Self {
        Self { ear: true, sda: true, gan: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting {
    Cov,
    Fixed(LossWeights),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub accelerations: Vec<usize>,
    pub trajectories: Vec<Trajectory>,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub lr: f64,
    pub weight_decay: f64,
    pub clip: f64,
    pub cov_window: usize,
    pub sda_window: usize,
    pub domains: usize,
    pub disc_channels: usize,
    pub terms: Terms,
    pub weighting: Weighting,
    /// Stop after this many iterations even if epochs remain.
    pub max_iterations: Option<u64>,
    pub static_masks: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            accelerations: vec![8, 16, 24],
            trajectories: Trajectory::ALL.to_vec(),
            seed: 0,
            generator: GeneratorConfig::default(),
            lr: 0.002,
            weight_decay: 0.1,
            clip: 0.1,
            cov_window: 50,
            sda_window: 4,
            domains: TRAINING_DOMAINS,
            disc_channels: 8,
            terms: Terms::default(),
            weighting: Weighting::Cov,
            max_iterations: None,
            static_masks: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        if self.epochs == 0 || self.domains == 0 || self.cov_window == 0 || self.sda_window == 0 {
            return Err(invalid("epochs, domains and windows must be positive"));
        }
        if self.accelerations.is_empty() || self.accelerations.contains(&0) {
            return Err(invalid("accelerations must be a non-empty set of positive factors"));
        }
        if self.accelerations.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("accelerations must be sorted ascending without repeats"));
        }
        if self.trajectories.is_empty() {
            return Err(invalid("at least one trajectory is required"));
        }
        if !self.lr.is_finite() || self.lr <= 0.0 || self.clip.is_nan() || self.clip <= 0.0 || self.weight_decay < 0.0 {
            return Err(invalid("learning rate and clip norm must be positive"));
        }
        Ok(())
    }
}

/// Mutable training state; everything here is checkpointed.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub weights: LossWeights,
    pub cov: CovHistory,
    pub banks: FeatureBank,
    /// Draws trajectories, accelerations and masks.
    pub rng: Rng,
    pub iteration: u64,
    pub epoch: u64,
    /// Position inside the current epoch's sample order.
    pub cursor: u64,
    pub disc_updates: u64,
}

/// One prepared training example.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub k0: KSpaceVolume,
    pub kg: KSpaceVolume,
    pub mask: SamplingMask,
    pub domain_id: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub iteration: u64,
    pub epoch: u64,
    pub domain_id: usize,
    pub trajectory: Trajectory,
    pub accel: usize,
    /// Sums over unroll steps.
    pub fidelity: f64,
    pub ear: f64,
    pub sda: f64,
    pub gan: f64,
    /// Mean discriminator loss over the step updates.
    pub disc: f64,
    /// `Σ_t (λ₁ L_Fid + λ₂ L_EAR + λ₃ L_SDA) + L_GAN`.
    pub total: f64,
    pub sda_layers: Vec<f64>,
    pub weights_used: LossWeights,
    /// Weights after the CoV update.
    pub weights: LossWeights,
}

/// Classical ACS estimate without the learned refiner. Reference images and
/// the zero-filled baseline are combined with these maps so that neither
/// depends on trainable parameters.
pub fn reference_maps(k0: &KSpaceVolume, acs_lines: usize) -> Result<SensitivityMaps> {
    estimate_sensitivities(&extract_acs(k0, acs_lines)?, None)
}

/// `|CC(F⁻¹ k_central)|`.
pub fn combined_magnitude(k: &KSpaceVolume, sens: &SensitivityMaps) -> Result<RealImage> {
    Ok(magnitude(&coil_combine(coils_fft(&k.central().to_owned(), true).view(), sens)?))
}

fn check_finite(what: &str, v: f64, iteration: u64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Diverged { what: what.to_string(), iteration })
    }
}

/// Training samples of `epoch`: each domain's samples shuffled with an
/// epoch-specific generator, then interleaved round-robin across domains.
pub fn epoch_order(data: &Dataset, domains: usize, seed: u64, epoch: u64) -> Vec<SampleRef> {
    let mut rng = Rng::new(seed).fork(1_000_000 + epoch);
    let mut per: Vec<Vec<SampleRef>> = (0..domains)
        .map(|d| {
            let mut s = data.samples(d);
            rng.shuffle(&mut s);
            s
        })
        .collect();
    let longest = per.iter().map(Vec::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(per.iter().map(Vec::len).sum());
    for i in 0..longest {
        for list in per.iter_mut() {
            if let Some(&s) = list.get(i) {
                out.push(s);
            }
        }
    }
    out
}

pub struct Trainer {
    pub config: TrainConfig,
    pub state: TrainState,
    optimizer: AdamW,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.seed);
        let generator = Generator::new(config.generator.clone(), &mut root.fork(1))?;
        let discriminator = Discriminator::new(&mut root.fork(2), config.disc_channels);
        let state = TrainState {
            generator,
            discriminator,
            weights: match config.weighting {
                Weighting::Cov => LossWeights::uniform(),
                Weighting::Fixed(w) => w,
            },
            cov: CovHistory::new(config.cov_window),
            banks: FeatureBank::new(config.generator.unrolls, config.domains, config.sda_window),
            rng: root.fork(3),
            iteration: 0,
            epoch: 0,
            cursor: 0,
            disc_updates: 0,
        };
        Ok(Self::from_state(config, state))
    }

    pub fn from_state(config: TrainConfig, state: TrainState) -> Self {
        let optimizer = AdamW { lr: config.lr, weight_decay: config.weight_decay, ..AdamW::default() };
        Self { config, state, optimizer }
    }

    pub fn finished(&self) -> bool {
        self.state.epoch >= self.config.epochs as u64
            || self.config.max_iterations.is_some_and(|m| self.state.iteration >= m)
    }

    /// Draws a trajectory and an acceleration enabled at the current epoch
    /// and masks the sample's adjacent stack.
    pub fn prepare_sample(&mut self, data: &Dataset, s: SampleRef) -> Result<(TrainSample, Trajectory, usize)> {
        let cfg = &self.config;
        let enabled = curriculum_schedule(self.state.epoch as usize, cfg.epochs, &cfg.accelerations);
        let rng = &mut self.state.rng;
        let trajectory = cfg.trajectories[rng.below(cfg.trajectories.len())];
        let accel = enabled[rng.below(enabled.len())];
        let kg = data.kg(s, cfg.generator.adjacent)?;
        let (a, _, h, w) = kg.dim();
        let mask = SamplingMask::generate(trajectory, h, w, a, accel, cfg.generator.acs_lines, cfg.static_masks, rng)?;
        let k0 = kg.masked(&mask)?;
        Ok((TrainSample { k0, kg, mask, domain_id: data.domain_of(s) }, trajectory, accel))
    }

    /// Runs the next scheduled iteration, or returns `None` when training is
    /// complete.
    pub fn step(&mut self, data: &Dataset) -> Result<Option<LossRecord>> {
        if self.finished() {
            return Ok(None);
        }
        let order = epoch_order(data, self.config.domains, self.config.seed, self.state.epoch);
        if order.is_empty() {
            return Err(Error::Empty("no training samples for the configured domains"));
        }
        let s = order[self.state.cursor as usize];
        let (sample, trajectory, accel) = self.prepare_sample(data, s)?;
        let mut rec = self.train_iteration(&sample)?;
        rec.trajectory = trajectory;
        rec.accel = accel;
        self.state.cursor += 1;
        if self.state.cursor as usize >= order.len() {
            self.state.cursor = 0;
            self.state.epoch += 1;
        }
        Ok(Some(rec))
    }

    fn lr(&self) -> f64 {
        lr_schedule(self.state.epoch, self.config.lr)
    }

    /// One discriminator update on (ground truth, fake) pairs, both
    /// conditioned on the zero-filled image. Returns the loss.
    fn discriminator_update(&mut self, gt: &RealImage, fake: &RealImage, zf: &RealImage) -> Result<f64> {
        let lr = self.lr();
        let d = &mut self.state.discriminator;
        d.params.zero_grad();
        let (real_logits, real_cache) = d.forward(gt, zf)?;
        let (l_real, g_real) = bce_loss(&real_logits, LABEL_REAL);
        d.backward(&real_cache, &(g_real * 0.5));
        let (fake_logits, fake_cache) = d.forward(fake, zf)?;
        let (l_fake, g_fake) = bce_loss(&fake_logits, LABEL_FAKE);
        d.backward(&fake_cache, &(g_fake * 0.5));
        let loss = 0.5 * (l_real + l_fake);
        check_finite("discriminator loss", loss, self.state.iteration)?;
        clip_grad_norm(&mut d.params, self.config.clip);
        self.optimizer.step(&mut d.params, lr)?;
        self.state.disc_updates += 1;
        Ok(loss)
    }

    /// One full generator iteration on `sample`.
    pub fn train_iteration(&mut self, sample: &TrainSample) -> Result<LossRecord> {
        let it = self.state.iteration;
        let t_count = self.config.generator.unrolls;
        let terms = self.config.terms;
        if sample.domain_id >= self.config.domains {
            return Err(invalid(format!("sample domain {} is not a training domain", sample.domain_id)));
        }
        let lam = self.state.weights;

        let gen = &self.state.generator;
        let (trace, cache) = gen.forward(&sample.k0, &sample.mask)?;
        let sens = trace.sens.clone();
        let ref_maps = reference_maps(&sample.k0, self.config.generator.acs_lines)?;
        let gt = combined_magnitude(&sample.kg, &ref_maps)?;
        let zf = combined_magnitude(&sample.k0, &ref_maps)?;
        let edge = ear_mask(&gt, 0.0);

        let mut grads = vec![StepGrad::default(); t_count];
        let (mut fid_sum, mut ear_sum, mut sda_sum, mut disc_sum) = (0.0, 0.0, 0.0, 0.0);
        let mut sda_layers = Vec::with_capacity(t_count);
        for (t, g) in grads.iter_mut().enumerate() {
            let step = &trace.steps[t];
            let fid = fidelity_loss_target(step.k_out.central(), sample.kg.central(), &gt, &sens)?;
            check_finite("fidelity loss", fid.total, it)?;
            fid_sum += fid.total;
            g.k_central = Some(fid.grad_k * lam.lambda1);
            g.sens = Some(fid.grad_sens * lam.lambda1);

            let rec_mag = magnitude(&step.image);
            if terms.ear {
                let e = ear_loss_with(&rec_mag, &gt, &edge)?;
                check_finite("edge-aware loss", e.value, it)?;
                ear_sum += e.value;
                g.image = Some(magnitude_backward(&step.image, &(e.grad * lam.lambda2)));
            }

            if terms.sda {
                self.state.banks.push(t, sample.domain_id, step.pooled.clone());
                let layer = sda_layer_loss(&self.state.banks, t, Some(sample.domain_id))?;
                check_finite("alignment loss", layer.value, it)?;
                sda_sum += layer.value;
                sda_layers.push(layer.value);
                if let Some(gz) = layer.grad_newest {
                    g.pooled = Some(gz.into_iter().map(|v| v * lam.lambda3).collect());
                }
            } else {
                sda_layers.push(0.0);
            }

            if terms.gan {
                disc_sum += self.discriminator_update(&gt, &rec_mag, &zf)?;
            }
        }

        let mut gan = 0.0;
        if terms.gan {
            let final_img = trace.final_image();
            let d = &mut self.state.discriminator;
            let (logits, dcache) = d.forward(&magnitude(final_img), &zf)?;
            let (l, g_logits): (f64, Array4<f64>) = bce_loss(&logits, LABEL_REAL);
            check_finite("adversarial loss", l, it)?;
            gan = l;
            let g_cand = d.backward(&dcache, &g_logits);
            d.params.zero_grad();
            let g_img = magnitude_backward(final_img, &g_cand);
            let last = grads.last_mut().expect("at least one step");
            match &mut last.image {
                Some(existing) => *existing += &g_img,
                None => last.image = Some(g_img),
            }
        }

        let total = lam.lambda1 * fid_sum + lam.lambda2 * ear_sum + lam.lambda3 * sda_sum + gan;
        check_finite("total generator loss", total, it)?;

        let new_weights = match self.config.weighting {
            Weighting::Cov => {
                self.state.cov.push([fid_sum, ear_sum, sda_sum]);
                self.state.cov.update(lam)
            }
            Weighting::Fixed(w) => w,
        };
        self.state.weights = new_weights;

        let lr = self.lr();
        let gen = &mut self.state.generator;
        gen.params.zero_grad();
        gen.backward(&trace, &cache, &grads)?;
        clip_grad_norm(&mut gen.params, self.config.clip);
        self.optimizer.step(&mut gen.params, lr).map_err(|e| match e {
            Error::Diverged { what, .. } => Error::Diverged { what, iteration: it },
            other => other,
        })?;

        self.state.iteration += 1;
        Ok(LossRecord {
            iteration: it,
            epoch: self.state.epoch,
            domain_id: sample.domain_id,
            trajectory: sample.mask.trajectory,
            accel: sample.mask.accel,
            fidelity: fid_sum,
            ear: ear_sum,
            sda: sda_sum,
            gan,
            disc: if terms.gan { disc_sum / t_count as f64 } else { 0.0 },
            total,
            sda_layers,
            weights_used: lam,
            weights: new_weights,
        })
    }
}

#[cfg(test)]
mod tests;
