//! Acceptance criteria: each evaluates one property of the pipeline at a
//! fixed tolerance and reports PASS or FAIL with its runtime.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::Parser;
use genre_core::checks::{self, Check};
use genre_core::trainer::cov::WEIGHT_SUM;

use crate::args::{Cli, Command};
use crate::commands::{self, run_dir, AblationResults, LATEST, LOSSES, STEPS};
use crate::error::{usage, CliError, Result};
use crate::records::read_losses;

pub const LEARNING_SEEDS: u64 = 3;
pub const LEARNING_ITERATIONS: u64 = 2000;
pub const SSIM_MARGIN: f64 = 0.05;
pub const PSNR_MARGIN: f64 = 2.0;
pub const ABLATION_SLACK: f64 = 0.005;
pub const ABLATION_VARIANTS: [&str; 3] = ["no-ear", "no-sda", "no-residual"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Skip => "SKIP",
        })
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub id: usize,
    pub name: &'static str,
    pub status: Status,
    /// One-line summary of what was measured.
    pub detail: String,
    /// Supporting lines (individual checks, tables).
    pub notes: Vec<String>,
    pub elapsed: Duration,
    pub limit: Duration,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{}] {}: {} ({:.1}s, limit {}s)",
            self.status,
            self.id,
            self.name,
            self.detail,
            self.elapsed.as_secs_f64(),
            self.limit.as_secs()
        )
    }
}

pub struct Criterion {
    pub id: usize,
    pub name: &'static str,
    pub limit: Duration,
}

pub const CRITERIA: [Criterion; 8] = [
    Criterion { id: 1, name: "numerics", limit: Duration::from_secs(10) },
    Criterion { id: 2, name: "gradients", limit: Duration::from_secs(300) },
    Criterion { id: 3, name: "loss oracles", limit: Duration::from_secs(60) },
    Criterion { id: 4, name: "mask oracles", limit: Duration::from_secs(10) },
    Criterion { id: 5, name: "determinism", limit: Duration::from_secs(300) },
    Criterion { id: 6, name: "learning signal", limit: Duration::from_secs(45 * 60) },
    Criterion { id: 7, name: "ablation trend", limit: Duration::from_secs(3 * 3600) },
    Criterion { id: 8, name: "loss weighting", limit: Duration::from_secs(60) },
];

/// Parses a `genre` command line (without the program name).
pub fn command(args: &[&str]) -> Result<Command> {
    let argv = std::iter::once("genre").chain(args.iter().copied());
    Cli::try_parse_from(argv).map(|c| c.command).map_err(|e| usage(e.to_string()))
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn from_checks(checks: &[Check]) -> (bool, String, Vec<String>) {
    let failed = checks.iter().filter(|c| !c.pass()).count();
    let worst = checks
        .iter()
        .filter(|c| c.tol > 0.0)
        .map(|c| c.value / c.tol)
        .fold(0.0_f64, f64::max);
    let detail = format!(
        "{} of {} checks within tolerance (worst value/tolerance {:.2e})",
        checks.len() - failed,
        checks.len(),
        worst
    );
    (failed == 0, detail, checks.iter().map(ToString::to_string).collect())
}

/// Dataset and training flags of the small determinism run.
const SMALL_DATA: [&str; 12] = [
    "--h", "32", "--w", "32", "--frames", "5", "--coils", "2", "--domains", "2", "--samples-per-domain", "10",
];
const SMALL_TRAIN: [&str; 20] = [
    "--unrolls", "2", "--base-channels", "4", "--prompt-channels", "2", "--adjacent", "3", "--acs-lines", "8",
    "--disc-channels", "4", "--cov-window", "5", "--sda-window", "3", "--accel-set", "4,8", "--epochs", "2",
];

fn files_equal(a: &Path, b: &Path) -> Result<bool> {
    Ok(std::fs::read(a)? == std::fs::read(b)?)
}

fn dir_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            out.extend(dir_files(&p)?);
        } else {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn dirs_equal(a: &Path, b: &Path) -> Result<bool> {
    let (fa, fb) = (dir_files(a)?, dir_files(b)?);
    if fa.len() != fb.len() {
        return Ok(false);
    }
    for (x, y) in fa.iter().zip(&fb) {
        if x.strip_prefix(a).ok() != y.strip_prefix(b).ok() || !files_equal(x, y)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn train_small(data: &Path, out: &Path, extra: &[&str]) -> Result<()> {
    let mut args = vec!["train", "--data"];
    let (d, o) = (path_str(data), path_str(out));
    args.extend([d.as_str(), "--out", o.as_str(), "--seed", "5", "--eval-samples", "2"]);
    args.extend(SMALL_TRAIN);
    args.extend(extra);
    match command(&args)? {
        Command::Train(a) => commands::train(&a).map(|_| ()),
        _ => unreachable!("parsed a train command"),
    }
}

/// Repeated generation and training (uninterrupted, repeated, stopped and
/// resumed) must produce identical bytes; evaluation must not depend on the
/// worker count.
pub fn determinism(work: &Path) -> Result<(bool, String, Vec<String>)> {
    let root = work.join("determinism");
    let _ = std::fs::remove_dir_all(&root);
    let mut notes = Vec::new();
    let gen = |name: &str| -> Result<PathBuf> {
        let out = root.join(name);
        let o = path_str(&out);
        let mut args = vec!["gen-data", "--out", o.as_str(), "--seed", "9"];
        args.extend(SMALL_DATA);
        match command(&args)? {
            Command::GenData(a) => commands::gen_data(&a)?,
            _ => unreachable!("parsed gen-data"),
        };
        Ok(out)
    };
    let (d1, d2) = (gen("data1")?, gen("data2")?);
    let data_same = dirs_equal(&d1, &d2)?;
    notes.push(format!("dataset regenerated byte-identical: {data_same}"));

    let (a, b, c) = (root.join("run_a"), root.join("run_b"), root.join("run_c"));
    train_small(&d1, &a, &[])?;
    train_small(&d1, &b, &[])?;
    train_small(&d1, &c, &["--max-iterations", "7"])?;
    let c_ckpt = path_str(&c.join(LATEST));
    train_small(&d1, &c, &["--resume", c_ckpt.as_str()])?;
    let mut ok = data_same;
    for (label, other) in [("repeat", &b), ("stop at 7 + resume", &c)] {
        let mut same = true;
        for f in [LOSSES, STEPS, LATEST, "checkpoints/epoch_002.gcmr"] {
            same &= files_equal(&a.join(f), &other.join(f))?;
        }
        notes.push(format!("{label}: losses, step log and checkpoints byte-identical: {same}"));
        ok &= same;
    }

    let ckpt = path_str(&a.join(LATEST));
    let d = path_str(&d1);
    let reports: Vec<PathBuf> = (1..=2).map(|i| root.join(format!("eval_{i}.csv"))).collect();
    for (threads, report) in [1usize, 3].iter().zip(&reports) {
        let r = path_str(report);
        let args = ["eval", "--ckpt", &ckpt, "--data", &d, "--report", &r, "--split", "train", "--eval-accel-set", "4,8"];
        let Command::Eval(e) = command(&args)? else { unreachable!("parsed eval") };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(*threads)
            .build()
            .map_err(|e| usage(format!("thread pool: {e}")))?;
        pool.install(|| commands::eval(&e))?;
    }
    let eval_same = files_equal(&reports[0], &reports[1])?;
    notes.push(format!("evaluation report identical with 1 and 3 workers: {eval_same}"));
    ok &= eval_same;
    let detail = if ok {
        "data, loss logs, checkpoints (incl. resume) and reports reproduce bitwise".to_string()
    } else {
        "a rerun produced different bytes".to_string()
    };
    Ok((ok, detail, notes))
}

/// Dataset of the learning and ablation runs.
pub fn learning_data(work: &Path) -> Result<PathBuf> {
    let out = work.join("data64");
    let o = path_str(&out);
    let Command::GenData(a) = command(&["gen-data", "--out", &o, "--seed", "0"])? else { unreachable!("parsed") };
    if !out.join(genre_core::trainer::dataset::CONFIG_FILE).exists() {
        commands::gen_data(&a)?;
    }
    Ok(out)
}

/// Trains (or reuses) and evaluates the given variants over the learning
/// seeds on the held-out domain.
pub fn ablation_runs(work: &Path, variants: &[&str]) -> Result<AblationResults> {
    let data = learning_data(work)?;
    let (d, o) = (path_str(&data), path_str(&work.join("ablation")));
    let v = variants.join(",");
    let seeds = LEARNING_SEEDS.to_string();
    let iters = LEARNING_ITERATIONS.to_string();
    let args = [
        "ablate", "--data", &d, "--out", &o, "--variants", &v, "--seeds", &seeds, "--epochs", "10", "--accel-set",
        "4,8", "--unrolls", "4", "--max-iterations", &iters, "--split", "unseen", "--eval-accel-set", "4,8",
    ];
    let Command::Ablate(a) = command(&args)? else { unreachable!("parsed ablate") };
    commands::ablate(&a)
}

pub fn learning(work: &Path) -> Result<(bool, String, Vec<String>)> {
    let res = ablation_runs(work, &["full"])?;
    let mut notes = Vec::new();
    let mut passed = 0;
    for (_, seed, s) in &res {
        let (ds, dp) = (s[0] - s[3], s[1] - s[4]);
        let ok = ds >= SSIM_MARGIN && dp >= PSNR_MARGIN;
        passed += ok as usize;
        notes.push(format!(
            "seed {seed}: ssim {:.4} vs zero-filled {:.4} ({:+.4}), psnr {:.2} vs {:.2} ({:+.2} dB), nmse {:.5} vs {:.5}  {}",
            s[0],
            s[3],
            ds,
            s[1],
            s[4],
            dp,
            s[2],
            s[5],
            if ok { "ok" } else { "below margin" }
        ));
    }
    let detail = format!(
        "{passed}/{} seeds beat zero-filled by >= {SSIM_MARGIN} SSIM and >= {PSNR_MARGIN} dB on the held-out domain",
        res.len()
    );
    Ok((passed == res.len() && res.len() as u64 == LEARNING_SEEDS, detail, notes))
}

pub fn ablation(work: &Path) -> Result<(bool, String, Vec<String>)> {
    let mut variants = vec!["full"];
    variants.extend(ABLATION_VARIANTS);
    let res = ablation_runs(work, &variants)?;
    let summary = commands::ablation_summary(&res);
    let full = summary.iter().find(|r| r.0 == "full").map(|r| r.2[0].mean).unwrap_or(f64::NAN);
    let mut notes = Vec::new();
    let mut worst_excess = f64::NEG_INFINITY;
    for (v, n, m) in &summary {
        notes.push(format!(
            "{v:<12} runs {n} ssim {:.4}±{:.4} psnr {:.2}±{:.2} nmse {:.5}±{:.5}",
            m[0].mean, m[0].std, m[1].mean, m[1].std, m[2].mean, m[2].std
        ));
        if ABLATION_VARIANTS.contains(&v.as_str()) {
            worst_excess = worst_excess.max(m[0].mean - full);
        }
    }
    let ok = worst_excess <= ABLATION_SLACK;
    let detail = format!(
        "largest variant SSIM minus full = {worst_excess:+.4} (allowed <= {ABLATION_SLACK}); full mean SSIM {full:.4}"
    );
    Ok((ok, detail, notes))
}

/// λ rows of a run: positive, summing to 3, contiguous steps from 0.
pub fn weight_log_checks(run: &Path, expected_rows: Option<u64>) -> Result<(bool, String)> {
    let rows = read_losses(&run.join(LOSSES))?;
    let mut worst_sum = 0.0_f64;
    let mut min_lambda = f64::INFINITY;
    let mut contiguous = true;
    for (i, r) in rows.iter().enumerate() {
        contiguous &= r.step == i as u64;
        worst_sum = worst_sum.max((r.lambda.iter().sum::<f64>() - WEIGHT_SUM).abs());
        min_lambda = r.lambda.iter().copied().fold(min_lambda, f64::min);
        contiguous &= r.losses.iter().chain(&r.lambda).all(|v| v.is_finite());
    }
    let count_ok = expected_rows.is_none_or(|n| rows.len() as u64 == n);
    let ok = !rows.is_empty() && contiguous && count_ok && min_lambda > 0.0 && worst_sum <= 1e-12;
    Ok((
        ok,
        format!(
            "{} rows, contiguous and finite: {contiguous}, min lambda {min_lambda:.4}, max |sum - 3| {worst_sum:.1e}",
            rows.len()
        ),
    ))
}

pub fn loss_weighting(work: &Path) -> Result<(bool, String, Vec<String>)> {
    let mut notes = Vec::new();
    let full_runs: Vec<PathBuf> =
        (0..LEARNING_SEEDS).map(|s| run_dir(&work.join("ablation"), "full", s)).filter(|d| d.join(LATEST).exists()).collect();
    let (runs, expected) = if full_runs.is_empty() {
        let data = work.join("weighting_data");
        let (d, out) = (path_str(&data), work.join("weighting_run"));
        let mut args = vec!["gen-data", "--out", d.as_str(), "--seed", "2"];
        args.extend(SMALL_DATA);
        let Command::GenData(g) = command(&args)? else { unreachable!("parsed") };
        commands::gen_data(&g)?;
        train_small(&data, &out, &["--epochs", "6"])?;
        notes.push("learning runs absent; checked a short dedicated run".into());
        (vec![out], None)
    } else {
        (full_runs, Some(LEARNING_ITERATIONS))
    };
    let mut ok = true;
    for run in &runs {
        let (pass, line) = weight_log_checks(run, expected)?;
        ok &= pass;
        notes.push(format!("{}: {line}", run.display()));
    }
    let report = work.join("weighting_report");
    let (r, o) = (path_str(&runs[0]), path_str(&report));
    let Command::Report(a) = command(&["report", "--run", &r, "--out", &o])? else { unreachable!("parsed") };
    let written = commands::report(&a)?;
    notes.push(format!("report written: {}", written.iter().map(|p| path_str(p)).collect::<Vec<_>>().join(", ")));
    let lambda_cols = csv::Reader::from_path(report.join("lambda.csv"))?.headers()?.len();
    ok &= lambda_cols == 8;
    let detail = format!(
        "{} run(s): weights positive, sum 3 within 1e-12, contiguous steps; lambda CSV has {lambda_cols} columns",
        runs.len()
    );
    Ok((ok, detail, notes))
}

/// Runs criterion `id` in `work`.
pub fn run_criterion(id: usize, work: &Path) -> Result<(bool, String, Vec<String>)> {
    let suite = |checks: Result<Vec<Check>, genre_core::Error>| -> Result<(bool, String, Vec<String>)> {
        Ok(from_checks(&checks?))
    };
    match id {
        1 => suite(checks::numerics_suite()),
        2 => suite(checks::gradient_suite()),
        3 => suite(checks::loss_oracles()),
        4 => suite(checks::mask_oracles()),
        5 => determinism(work),
        6 => learning(work),
        7 => ablation(work),
        8 => loss_weighting(work),
        _ => Err(usage(format!("no criterion {id}"))),
    }
}

/// Evaluates a criterion, turning errors into failures.
pub fn evaluate(c: &Criterion, work: &Path) -> Outcome {
    let t = Instant::now();
    let (status, detail, notes) = match run_criterion(c.id, work) {
        Ok((ok, detail, notes)) => (if ok { Status::Pass } else { Status::Fail }, detail, notes),
        Err(e) => (Status::Fail, e.one_line(), Vec::new()),
    };
    let elapsed = t.elapsed();
    let (status, detail) = if status == Status::Pass && elapsed > c.limit {
        (Status::Fail, format!("{detail}; exceeded the time limit"))
    } else {
        (status, detail)
    };
    Outcome { id: c.id, name: c.name, status, detail, notes, elapsed, limit: c.limit }
}

pub fn skipped(c: &Criterion, why: &str) -> Outcome {
    Outcome {
        id: c.id,
        name: c.name,
        status: Status::Skip,
        detail: why.to_string(),
        notes: Vec::new(),
        elapsed: Duration::ZERO,
        limit: c.limit,
    }
}

/// Parses `--only` lists such as `1,2,5`.
pub fn parse_only(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .ok()
                .filter(|i| (1..=CRITERIA.len()).contains(i))
                .ok_or_else(|| CliError::Usage(format!("criterion '{p}' is not in 1..={}", CRITERIA.len())))
        })
        .collect()
}
