//! Fixtures shared by the benchmarks.

use genre_core::trainer::{DataConfig, Dataset, TrainConfig, TrainSample, Trainer};
use genre_core::unroll::{Generator, GeneratorConfig};
use genre_core::{ComplexImage, KSpaceVolume, Rng, SamplingMask, Trajectory, C64};
use ndarray::{Array1, Array4};

pub fn random_image(h: usize, w: usize, seed: u64) -> ComplexImage {
    let mut rng = Rng::new(seed);
    ComplexImage::from_shape_fn((h, w), |_| C64::new(rng.normal(), rng.normal()))
}

/// Input, weight and bias of a `cin → cout` 3×3 convolution on an `h × w` map.
pub fn conv_operands(cin: usize, cout: usize, h: usize, w: usize) -> (Array4<f64>, Array4<f64>, Array1<f64>) {
    let mut rng = Rng::new(7);
    let x = Array4::from_shape_fn((1, cin, h, w), |_| rng.normal());
    let wt = Array4::from_shape_fn((cout, cin, 3, 3), |_| 0.1 * rng.normal());
    (x, wt, Array1::zeros(cout))
}

/// Desk-scale dataset restricted to one sequence per domain.
pub fn small_dataset() -> Dataset {
    Dataset::generate(&DataConfig { samples_per_domain: 8, include_unseen: false, ..DataConfig::default() })
        .expect("default data config is valid")
}

/// Generator plus one undersampled input at the desk-scale defaults.
pub fn generator_input(data: &Dataset) -> (Generator, KSpaceVolume, SamplingMask) {
    let config = GeneratorConfig::default();
    let gen = Generator::new(config.clone(), &mut Rng::new(1)).expect("default generator config is valid");
    let s = data.samples(0)[3];
    let kg = data.kg(s, config.adjacent).expect("sample exists");
    let (a, _, h, w) = kg.dim();
    let mask = SamplingMask::generate(Trajectory::Uniform, h, w, a, 8, config.acs_lines, false, &mut Rng::new(2))
        .expect("valid mask arguments");
    let k0 = kg.masked(&mask).expect("mask matches");
    (gen, k0, mask)
}

pub fn trainer_and_sample(data: &Dataset) -> (Trainer, TrainSample) {
    let mut trainer = Trainer::new(TrainConfig::default()).expect("default train config is valid");
    let (sample, _, _) = trainer.prepare_sample(data, data.samples(0)[3]).expect("sample exists");
    (trainer, sample)
}
