use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use genre_core::trainer::{LossWeights, Terms, TrainConfig, Weighting};
use genre_core::unroll::GeneratorConfig;
use genre_core::Trajectory;

use crate::error::{usage, Result};

pub const SUBCOMMANDS: [&str; 6] = ["gen-data", "train", "reconstruct", "eval", "ablate", "report"];

#[derive(Parser, Debug)]
#[command(name = "genre", version, about = "Unrolled adversarial reconstruction of undersampled dynamic MRI")]
pub struct Cli {
    /// `key = value` file mirroring the subcommand's flags; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-coil dynamic dataset.
    GenData(GenDataArgs),
    /// Train a generator/discriminator pair.
    Train(TrainArgs),
    /// Reconstruct one undersampled input with a checkpoint.
    Reconstruct(ReconstructArgs),
    /// Evaluate a checkpoint on the training or held-out domains.
    Eval(EvalArgs),
    /// Train and evaluate ablation variants over several seeds.
    Ablate(AblateArgs),
    /// Render loss-weight charts and reconstruction panels of a run.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub h: usize,
    #[arg(long, default_value_t = 64)]
    pub w: usize,
    #[arg(long, default_value_t = 8)]
    pub frames: usize,
    #[arg(long, default_value_t = 4)]
    pub coils: usize,
    /// Training domains (the held-out domain is added unless --no-unseen).
    #[arg(long, default_value_t = 5)]
    pub domains: usize,
    #[arg(long, default_value_t = 40)]
    pub samples_per_domain: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_unseen: bool,
    /// Acceleration of the stored reference masks.
    #[arg(long, default_value_t = 4)]
    pub mask_accel: usize,
    #[arg(long, default_value_t = 16)]
    pub acs_lines: usize,
}

/// Comma-separated trajectory names, or `all`.
pub fn parse_trajectories(s: &str) -> Result<Vec<Trajectory>> {
    if s.trim() == "all" {
        return Ok(Trajectory::ALL.to_vec());
    }
    let mut out: Vec<Trajectory> = s.split(',').map(|t| t.parse()).collect::<Result<_, _>>()?;
    out.sort();
    out.dedup();
    Ok(out)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct TrainOpts {
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Unroll count (16 is the full-size configuration).
    #[arg(long, default_value_t = 4)]
    pub unrolls: usize,
    #[arg(long, value_delimiter = ',', default_value = "8,16,24")]
    pub accel_set: Vec<usize>,
    /// Comma-separated subset of uniform,gaussian,radial, or `all`.
    #[arg(long, default_value = "all")]
    pub trajectory: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub max_iterations: Option<u64>,
    #[arg(long, default_value_t = 8)]
    pub base_channels: usize,
    #[arg(long, default_value_t = 4)]
    pub prompt_channels: usize,
    #[arg(long, default_value_t = 5)]
    pub adjacent: usize,
    #[arg(long, default_value_t = 16)]
    pub acs_lines: usize,
    #[arg(long, default_value_t = 0.002)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.1)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.1)]
    pub clip: f64,
    #[arg(long, default_value_t = 50)]
    pub cov_window: usize,
    #[arg(long, default_value_t = 4)]
    pub sda_window: usize,
    #[arg(long, default_value_t = 8)]
    pub disc_channels: usize,
    /// Fixed λ₁,λ₂,λ₃ instead of CoV weighting.
    #[arg(long, value_delimiter = ',')]
    pub fixed_weights: Option<Vec<f64>>,
    #[arg(long)]
    pub no_ear: bool,
    #[arg(long)]
    pub no_sda: bool,
    #[arg(long)]
    pub no_gan: bool,
    #[arg(long)]
    pub no_residual: bool,
    #[arg(long)]
    pub no_sme_refiner: bool,
    /// Reuse one mask per (trajectory, acceleration) instead of drawing per sample.
    #[arg(long)]
    pub static_masks: bool,
}

impl TrainOpts {
    /// Training configuration for a dataset with `coils` coils and `domains`
    /// training domains.
    pub fn to_config(&self, coils: usize, domains: usize) -> Result<TrainConfig> {
        let mut accels = self.accel_set.clone();
        accels.sort_unstable();
        accels.dedup();
        let weighting = match &self.fixed_weights {
            None => Weighting::Cov,
            Some(w) if w.len() == 3 => Weighting::Fixed(LossWeights::from_array([w[0], w[1], w[2]])),
            Some(w) => return Err(usage(format!("--fixed-weights needs 3 values, got {}", w.len()))),
        };
        let cfg = TrainConfig {
            epochs: self.epochs,
            accelerations: accels,
            trajectories: parse_trajectories(&self.trajectory)?,
            seed: self.seed,
            generator: GeneratorConfig {
                unrolls: self.unrolls,
                base_channels: self.base_channels,
                prompt_channels: self.prompt_channels,
                adjacent: self.adjacent,
                acs_lines: self.acs_lines,
                coils,
                residual: !self.no_residual,
                sme_refiner: !self.no_sme_refiner,
            },
            lr: self.lr,
            weight_decay: self.weight_decay,
            clip: self.clip,
            cov_window: self.cov_window,
            sda_window: self.sda_window,
            domains,
            disc_channels: self.disc_channels,
            terms: Terms { ear: !self.no_ear, sda: !self.no_sda, gan: !self.no_gan },
            weighting,
            max_iterations: self.max_iterations,
            static_masks: self.static_masks,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flag/value pairs reproducing these options in a config file.
    pub fn to_entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = vec![
            ("epochs".into(), self.epochs.to_string()),
            ("unrolls".into(), self.unrolls.to_string()),
            ("accel-set".into(), join(&self.accel_set)),
            ("trajectory".into(), self.trajectory.clone()),
            ("seed".into(), self.seed.to_string()),
            ("base-channels".into(), self.base_channels.to_string()),
            ("prompt-channels".into(), self.prompt_channels.to_string()),
            ("adjacent".into(), self.adjacent.to_string()),
            ("acs-lines".into(), self.acs_lines.to_string()),
            ("lr".into(), self.lr.to_string()),
            ("weight-decay".into(), self.weight_decay.to_string()),
            ("clip".into(), self.clip.to_string()),
            ("cov-window".into(), self.cov_window.to_string()),
            ("sda-window".into(), self.sda_window.to_string()),
            ("disc-channels".into(), self.disc_channels.to_string()),
            ("no-ear".into(), self.no_ear.to_string()),
            ("no-sda".into(), self.no_sda.to_string()),
            ("no-gan".into(), self.no_gan.to_string()),
            ("no-residual".into(), self.no_residual.to_string()),
            ("no-sme-refiner".into(), self.no_sme_refiner.to_string()),
            ("static-masks".into(), self.static_masks.to_string()),
        ];
        if let Some(m) = self.max_iterations {
            e.push(("max-iterations".into(), m.to_string()));
        }
        if let Some(w) = &self.fixed_weights {
            e.push(("fixed-weights".into(), join(w)));
        }
        e
    }
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, value_name = "CKPT")]
    pub resume: Option<PathBuf>,
    /// Samples per domain in the final evaluation (all when omitted).
    #[arg(long)]
    pub eval_samples: Option<usize>,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Undersampled k-space: `coils × h × w` or `adjacent × coils × h × w`.
    #[arg(long)]
    pub input: PathBuf,
    /// Mask: `h × w` or `adjacent × h × w`.
    #[arg(long)]
    pub mask: PathBuf,
    /// Magnitude image (.pgm); the complex image goes next to it as .gcmr.
    #[arg(long)]
    pub out: PathBuf,
    /// Bit depth of the magnitude image (8 or 16).
    #[arg(long, default_value_t = 8)]
    pub bits: u8,
}

#[derive(clap::ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Unseen,
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct EvalSelection {
    #[arg(long, value_enum, default_value_t = Split::Unseen)]
    pub split: Split,
    #[arg(long, value_delimiter = ',', default_value = "8,16,24")]
    pub eval_accel_set: Vec<usize>,
    #[arg(long, default_value = "all")]
    pub eval_trajectory: String,
    #[arg(long, default_value_t = 1234)]
    pub eval_seed: u64,
    /// Samples per domain (all when omitted).
    #[arg(long)]
    pub max_samples: Option<usize>,
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub report: PathBuf,
    #[command(flatten)]
    pub select: EvalSelection,
}

pub const VARIANTS: [&str; 5] = ["full", "no-ear", "no-sda", "no-residual", "no-gan"];

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "full,no-ear,no-sda,no-residual")]
    pub variants: Vec<String>,
    /// Number of shared seeds (`seed`, `seed + 1`, ...).
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[command(flatten)]
    pub select: EvalSelection,
    #[command(flatten)]
    pub opts: TrainOpts,
}

#[derive(Args, Debug, Clone)]
#[command(args_override_self = true)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Acceleration of the panels (largest trained one by default).
    #[arg(long)]
    pub accel: Option<usize>,
    /// Index of the sample within its domain.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
}

/// Applies a named ablation variant to the options.
pub fn apply_variant(opts: &TrainOpts, variant: &str) -> Result<TrainOpts> {
    let mut o = opts.clone();
    match variant {
        "full" => {}
        "no-ear" => o.no_ear = true,
        "no-sda" => o.no_sda = true,
        "no-residual" => o.no_residual = true,
        "no-gan" => o.no_gan = true,
        other => {
            return Err(usage(format!("unknown variant '{other}' (expected one of {})", VARIANTS.join(", "))))
        }
    }
    Ok(o)
}
