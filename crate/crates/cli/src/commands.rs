use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use genre_core::gcmr::{read_tensor, write_tensor, Tensor};
use genre_core::losses::magnitude;
use genre_core::phantom::UNSEEN_DOMAIN;
use genre_core::trainer::checkpoint::encode_state;
use genre_core::trainer::dataset::parse_key_values;
use genre_core::trainer::eval::{eval_mask, reconstruct_sample, summarize, MetricStats};
use genre_core::trainer::{
    evaluate, load_checkpoint, save_checkpoint, DataConfig, Dataset, EvalConfig, EvalRow, LossRecord, TrainConfig,
    Trainer,
};
use genre_core::unroll::Generator;
use genre_core::{Error, KSpaceVolume, SamplingMask, Trajectory, C64};
use ndarray::{Array3, Array4, Axis, Ix2, Ix3, Ix4};

use crate::args::{
    apply_variant, parse_trajectories, AblateArgs, EvalArgs, EvalSelection, GenDataArgs, ReconstructArgs, ReportArgs,
    Split, TrainArgs, TrainOpts,
};
use crate::config::to_config_text;
use crate::error::{require, usage, CliError, Result};
use crate::pgm::{hstack, line_chart, write_pgm};
use crate::records::{
    read_losses, step_fields, write_eval, write_rows, LossRow, LOSS_HEADER, STEP_HEADER,
};

pub const RUN_CONFIG: &str = "run.cfg";
pub const LOSSES: &str = "losses.csv";
pub const STEPS: &str = "steps.csv";
pub const LATEST: &str = "latest.gcmr";
pub const DIVERGED: &str = "diverged.gcmr";
pub const EVAL_TRAIN: &str = "eval_train.csv";
pub const CHECKPOINTS: &str = "checkpoints";
/// Written once a run has finished; holds the run configuration it finished with.
pub const DONE: &str = "done";

pub fn gen_data(a: &GenDataArgs) -> Result<Dataset> {
    let cfg = DataConfig {
        h: a.h,
        w: a.w,
        frames: a.frames,
        coils: a.coils,
        domains: a.domains,
        include_unseen: !a.no_unseen,
        samples_per_domain: a.samples_per_domain,
        seed: a.seed,
        mask_accel: a.mask_accel,
        acs_lines: a.acs_lines,
    };
    let data = Dataset::generate(&cfg)?;
    data.save(&a.out)?;
    Ok(data)
}

pub fn load_data(dir: &Path) -> Result<Dataset> {
    require(dir, "dataset")?;
    Ok(Dataset::load(dir)?)
}

/// Run configuration in config-file form. The dataset path is made absolute
/// so the file stays usable from any working directory.
pub fn run_config_text(data: &Path, eval_samples: Option<usize>, opts: &TrainOpts) -> String {
    let data = std::fs::canonicalize(data).unwrap_or_else(|_| data.to_path_buf());
    let mut entries = vec![("data".to_string(), data.display().to_string())];
    if let Some(n) = eval_samples {
        entries.push(("eval-samples".into(), n.to_string()));
    }
    entries.extend(opts.to_entries());
    to_config_text(&entries)
}

/// Outcome of a training run.
pub struct TrainRun {
    pub trainer: Trainer,
    pub records: Vec<LossRecord>,
    pub eval: Vec<EvalRow>,
}

fn training_domains(data: &Dataset, cfg: &TrainConfig) -> Vec<usize> {
    data.domains().into_iter().filter(|&d| d < cfg.domains).collect()
}

fn kept_step_rows(path: &Path, before: u64) -> Result<Vec<Vec<String>>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        if rec.get(0).and_then(|s| s.parse::<u64>().ok()).is_some_and(|s| s < before) {
            out.push(rec.iter().map(str::to_string).collect());
        }
    }
    Ok(out)
}

struct Logs {
    losses: Vec<Vec<String>>,
    steps: Vec<Vec<String>>,
}

impl Logs {
    fn write(&self, out: &Path) -> Result<()> {
        write_rows(&out.join(LOSSES), &LOSS_HEADER, self.losses.iter().cloned())?;
        write_rows(&out.join(STEPS), &STEP_HEADER, self.steps.iter().cloned())
    }
}

/// Final evaluation on the training domains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainEval {
    Skip,
    /// Samples per domain (all when `None`).
    Samples(Option<usize>),
}

/// Trains on `data` writing every run artifact into `out`.
pub fn run_training(
    data: &Dataset,
    cfg: TrainConfig,
    out: &Path,
    config_text: &str,
    resume: Option<&Path>,
    train_eval: TrainEval,
) -> Result<TrainRun> {
    std::fs::create_dir_all(out.join(CHECKPOINTS))?;
    std::fs::write(out.join(RUN_CONFIG), config_text)?;
    let _ = std::fs::remove_file(out.join(DONE));

    let mut trainer = match resume {
        Some(p) => {
            require(p, "checkpoint")?;
            let state = load_checkpoint(p)?;
            if state.generator.config != cfg.generator {
                return Err(usage(format!(
                    "checkpoint generator {:?} does not match the requested {:?}",
                    state.generator.config, cfg.generator
                )));
            }
            Trainer::from_state(cfg, state)
        }
        None => Trainer::new(cfg)?,
    };
    let start = trainer.state.iteration;
    let mut logs = if resume.is_some() {
        let losses = match out.join(LOSSES) {
            p if p.exists() => read_losses(&p)?.into_iter().filter(|r| r.step < start).map(|r| r.fields()).collect(),
            _ => Vec::new(),
        };
        Logs { losses, steps: kept_step_rows(&out.join(STEPS), start)? }
    } else {
        Logs { losses: Vec::new(), steps: Vec::new() }
    };

    let mut records = Vec::new();
    loop {
        let epoch_before = trainer.state.epoch;
        match trainer.step(data) {
            Ok(Some(rec)) => {
                logs.losses.push(LossRow::from(&rec).fields());
                logs.steps.push(step_fields(&rec));
                records.push(rec);
                if trainer.state.epoch != epoch_before {
                    let name = format!("epoch_{:03}.gcmr", trainer.state.epoch);
                    save_checkpoint(&out.join(CHECKPOINTS).join(name), &trainer.state)?;
                    logs.write(out)?;
                }
            }
            Ok(None) => break,
            Err(e @ Error::Diverged { .. }) => {
                save_checkpoint(&out.join(DIVERGED), &trainer.state)?;
                logs.write(out)?;
                return Err(e.into());
            }
            Err(e) => return Err(e.into()),
        }
    }
    save_checkpoint(&out.join(LATEST), &trainer.state)?;
    logs.write(out)?;

    let eval = match train_eval {
        TrainEval::Skip => Vec::new(),
        TrainEval::Samples(max_samples) => {
            let cfg = &trainer.config;
            let ec = EvalConfig {
                trajectories: cfg.trajectories.clone(),
                accelerations: cfg.accelerations.clone(),
                seed: cfg.seed,
                max_samples,
            };
            let rows = evaluate(&trainer.state.generator, data, &training_domains(data, cfg), &ec)?;
            write_eval(&out.join(EVAL_TRAIN), &rows)?;
            rows
        }
    };
    std::fs::write(out.join(DONE), config_text)?;
    Ok(TrainRun { trainer, records, eval })
}

pub fn train(a: &TrainArgs) -> Result<TrainRun> {
    let data = load_data(&a.data)?;
    let cfg = a.opts.to_config(data.config.coils, data.config.domains)?;
    let text = run_config_text(&a.data, a.eval_samples, &a.opts);
    run_training(&data, cfg, &a.out, &text, a.resume.as_deref(), TrainEval::Samples(a.eval_samples))
}

fn load_generator(ckpt: &Path) -> Result<Generator> {
    require(ckpt, "checkpoint")?;
    Ok(load_checkpoint(ckpt)?.generator)
}

/// Replicates a single frame along a new leading axis of length `n`.
fn replicate<T: Clone, D: ndarray::Dimension>(a: ndarray::Array<T, D>, n: usize) -> ndarray::Array<T, D::Larger> {
    let one = a.insert_axis(Axis(0));
    let views = vec![one.view(); n];
    ndarray::concatenate(Axis(0), &views).expect("identical shapes")
}

fn shape_err(msg: String) -> CliError {
    CliError::Core(Error::Shape(msg))
}

/// Reconstructs one input; returns the complex central-frame image.
pub fn reconstruct(a: &ReconstructArgs) -> Result<ndarray::Array2<C64>> {
    let gen = load_generator(&a.ckpt)?;
    require(&a.input, "input")?;
    require(&a.mask, "mask")?;
    let adj = gen.config.adjacent;
    let k = read_tensor(&a.input)?.to_complex()?;
    let k: Array4<C64> = match k.ndim() {
        3 => replicate(k.into_dimensionality::<Ix3>().expect("3-d"), adj),
        4 => k.into_dimensionality::<Ix4>().expect("4-d"),
        n => return Err(shape_err(format!("input must be 3-d or 4-d, got {n}-d"))),
    };
    let m = read_tensor(&a.mask)?.to_real()?;
    let m: Array3<f64> = match m.ndim() {
        2 => replicate(m.into_dimensionality::<Ix2>().expect("2-d"), adj),
        3 => m.into_dimensionality::<Ix3>().expect("3-d"),
        n => return Err(shape_err(format!("mask must be 2-d or 3-d, got {n}-d"))),
    };
    let (ka, kc, kh, kw) = k.dim();
    if ka != adj || kc != gen.config.coils {
        return Err(shape_err(format!(
            "input has {ka} frames × {kc} coils, checkpoint expects {adj} × {}",
            gen.config.coils
        )));
    }
    if m.dim() != (ka, kh, kw) {
        return Err(shape_err(format!("mask {:?} does not match input frames/size {:?}", m.dim(), (ka, kh, kw))));
    }
    if m.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(usage("mask entries must be 0 or 1"));
    }
    let mask = SamplingMask::from_array(m.mapv(|v| v as u8), gen.config.acs_lines, 1, Trajectory::Uniform)?;
    let k0 = KSpaceVolume::new(k)?.masked(&mask)?;
    let (trace, _) = gen.forward(&k0, &mask)?;
    let img = trace.final_image().clone();
    let mag = magnitude(&img);
    let hi = mag.iter().cloned().fold(0.0, f64::max);
    write_pgm(&a.out, &mag, 0.0, hi, a.bits)?;
    write_tensor(&a.out.with_extension("gcmr"), &Tensor::from_complex(&img.clone().into_dyn()))?;
    Ok(img)
}

pub fn eval_config(sel: &EvalSelection) -> Result<EvalConfig> {
    let mut accelerations = sel.eval_accel_set.clone();
    accelerations.sort_unstable();
    accelerations.dedup();
    Ok(EvalConfig {
        trajectories: parse_trajectories(&sel.eval_trajectory)?,
        accelerations,
        seed: sel.eval_seed,
        max_samples: sel.max_samples,
    })
}

pub fn split_domains(data: &Dataset, split: Split) -> Result<Vec<usize>> {
    let present = data.domains();
    match split {
        Split::Unseen if present.contains(&UNSEEN_DOMAIN) => Ok(vec![UNSEEN_DOMAIN]),
        Split::Unseen => Err(usage("dataset has no held-out domain (generated with --no-unseen?)")),
        Split::Train => Ok(present.into_iter().filter(|&d| d < data.config.domains).collect()),
    }
}

pub fn eval(a: &EvalArgs) -> Result<Vec<EvalRow>> {
    let gen = load_generator(&a.ckpt)?;
    let data = load_data(&a.data)?;
    let rows = evaluate(&gen, &data, &split_domains(&data, a.select.split)?, &eval_config(&a.select)?)?;
    write_eval(&a.report, &rows)?;
    Ok(rows)
}

pub const SUMMARY_HEADER: [&str; 8] =
    ["variant", "runs", "ssim_mean", "ssim_std", "psnr_mean", "psnr_std", "nmse_mean", "nmse_std"];
pub const PER_RUN_HEADER: [&str; 8] = ["variant", "seed", "ssim", "psnr", "nmse", "zf_ssim", "zf_psnr", "zf_nmse"];

/// Per-run summaries (`summarize` order) keyed by variant, in run order.
pub type AblationResults = Vec<(String, u64, [f64; 6])>;

pub fn run_dir(out: &Path, variant: &str, seed: u64) -> PathBuf {
    out.join(variant).join(format!("seed_{seed}"))
}

/// Trains (or reuses a finished run with an identical configuration) and
/// evaluates every variant for every seed.
pub fn ablate(a: &AblateArgs) -> Result<AblationResults> {
    let variants: Vec<TrainOpts> = a.variants.iter().map(|v| apply_variant(&a.opts, v)).collect::<Result<_>>()?;
    let data = load_data(&a.data)?;
    let domains = split_domains(&data, a.select.split)?;
    let ec = eval_config(&a.select)?;
    let mut results = Vec::new();
    for (name, opts) in a.variants.iter().zip(&variants) {
        for s in 0..a.seeds {
            let mut o = opts.clone();
            o.seed = a.opts.seed + s;
            let dir = run_dir(&a.out, name, o.seed);
            let text = run_config_text(&a.data, None, &o);
            let gen = match std::fs::read_to_string(dir.join(DONE)) {
                Ok(done) if done == text && dir.join(LATEST).exists() => load_checkpoint(&dir.join(LATEST))?.generator,
                _ => {
                    let cfg = o.to_config(data.config.coils, data.config.domains)?;
                    run_training(&data, cfg, &dir, &text, None, TrainEval::Skip)?.trainer.state.generator
                }
            };
            let rows = evaluate(&gen, &data, &domains, &ec)?;
            write_eval(&dir.join("eval.csv"), &rows)?;
            results.push((name.clone(), o.seed, summarize(&rows)));
        }
    }
    write_ablation(&a.out, &results)?;
    Ok(results)
}

/// Mean ± population std of (ssim, psnr, nmse) per variant, plus the
/// zero-filled baseline.
pub fn ablation_summary(results: &AblationResults) -> Vec<(String, usize, [MetricStats; 3])> {
    let mut order: Vec<&str> = Vec::new();
    let mut by: BTreeMap<&str, Vec<[f64; 6]>> = BTreeMap::new();
    for (v, _, s) in results {
        if !by.contains_key(v.as_str()) {
            order.push(v);
        }
        by.entry(v).or_default().push(*s);
    }
    let stats = |runs: &[[f64; 6]], off: usize| -> [MetricStats; 3] {
        std::array::from_fn(|i| MetricStats::of(&runs.iter().map(|r| r[off + i]).collect::<Vec<_>>()))
    };
    let mut out: Vec<_> = order.iter().map(|v| (v.to_string(), by[v].len(), stats(&by[v], 0))).collect();
    if let Some(first) = order.first() {
        out.push(("zero-filled".into(), by[first].len(), stats(&by[first], 3)));
    }
    out
}

fn write_ablation(out: &Path, results: &AblationResults) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_rows(
        &out.join("per_run.csv"),
        &PER_RUN_HEADER,
        results.iter().map(|(v, seed, s)| {
            let mut f = vec![v.clone(), seed.to_string()];
            f.extend(s.iter().map(|x| format!("{x:.6}")));
            f
        }),
    )?;
    write_rows(
        &out.join("summary.csv"),
        &SUMMARY_HEADER,
        ablation_summary(results).into_iter().map(|(v, n, m)| {
            let mut f = vec![v, n.to_string()];
            for s in m {
                f.push(format!("{:.6}", s.mean));
                f.push(format!("{:.6}", s.std));
            }
            f
        }),
    )
}

pub fn report(a: &ReportArgs) -> Result<Vec<PathBuf>> {
    let cfg_path = a.run.join(RUN_CONFIG);
    let losses_path = a.run.join(LOSSES);
    let ckpt = a.run.join(LATEST);
    for (p, what) in [(&cfg_path, "run config"), (&losses_path, "loss log"), (&ckpt, "final checkpoint")] {
        require(p, what)?;
    }
    let kv = parse_key_values(&std::fs::read_to_string(&cfg_path)?)?;
    let get = |k: &str| kv.get(k).ok_or_else(|| usage(format!("{} lacks '{k}'", cfg_path.display())));
    let data = load_data(Path::new(get("data")?))?;
    let seed: u64 = get("seed")?.parse().map_err(|e| usage(format!("seed: {e}")))?;
    let accel = match a.accel {
        Some(x) => x,
        None => get("accel-set")?
            .split(',')
            .map(|s| s.trim().parse::<usize>().map_err(|e| usage(format!("accel-set: {e}"))))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .max()
            .ok_or_else(|| usage("empty accel-set"))?,
    };

    std::fs::create_dir_all(&a.out)?;
    let mut written = Vec::new();
    let rows = read_losses(&losses_path)?;
    let lambda_csv = a.out.join("lambda.csv");
    write_rows(&lambda_csv, &LOSS_HEADER, rows.iter().map(LossRow::fields))?;
    written.push(lambda_csv);
    let series: Vec<Vec<f64>> = (0..3).map(|i| rows.iter().map(|r| r.lambda[i]).collect()).collect();
    let chart = a.out.join("lambda_chart.pgm");
    write_pgm(&chart, &line_chart(&series, 480, 160, 3.0), 0.0, 1.0, 8)?;
    written.push(chart);

    let gen = load_checkpoint(&ckpt)?.generator;
    let domain = if data.domains().contains(&UNSEEN_DOMAIN) { UNSEEN_DOMAIN } else { 0 };
    let samples = data.samples(domain);
    let s = *samples
        .get(a.sample)
        .ok_or_else(|| usage(format!("domain {domain} has {} samples, asked for #{}", samples.len(), a.sample)))?;
    let ec = EvalConfig { trajectories: Trajectory::ALL.to_vec(), accelerations: vec![accel], seed, max_samples: None };
    for traj in Trajectory::ALL {
        let mask = eval_mask(&ec, &gen, data.config.h, data.config.w, domain, traj, accel, a.sample)?;
        let (rec, zf, gt) = reconstruct_sample(&gen, &data, s, &mask)?;
        let lo = gt.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = gt.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let range = if hi > lo { hi - lo } else { 1.0 };
        let norm = |x: &ndarray::Array2<f64>| x.mapv(|v| (v - lo) / range);
        let err = ndarray::Zip::from(&rec).and(&gt).map_collect(|&r, &g| (5.0 * (r - g).abs()).min(range) / range);
        let panel = hstack(&[norm(&zf), norm(&rec), norm(&gt), err])?;
        let p = a.out.join(format!("panel_{traj}.pgm"));
        write_pgm(&p, &panel, 0.0, 1.0, 8)?;
        written.push(p);
    }
    Ok(written)
}

/// Bytes of the checkpoint a run would write now (used by determinism checks).
pub fn state_bytes(run: &TrainRun) -> Vec<u8> {
    encode_state(&run.trainer.state)
}
