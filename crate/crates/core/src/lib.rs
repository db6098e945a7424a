//! Residual deep-unrolled reconstruction of undersampled multi-coil dynamic
//! MRI with adversarial training, an edge-aware SSIM loss, cross-domain
//! feature alignment and CoV-weighted losses.
//!
//! The crate is self-contained: it simulates its own multi-domain phantom
//! data, carries a small reverse-mode operator stack for the networks, and
//! stores everything in the `GCMR` binary container.

pub mod checks;
pub mod diffnet;
pub mod error;
pub mod gcmr;
pub mod losses;
pub mod mri;
pub mod numerics;
pub mod phantom;
pub mod sampling;
pub mod trainer;
pub mod unroll;

pub use error::{Error, Result};
pub use mri::{KSpaceVolume, SensitivityMaps};
pub use numerics::{ComplexImage, RealImage, Rng, C64};
pub use sampling::{SamplingMask, Trajectory};
