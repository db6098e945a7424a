//! CSV tables written and read by the commands.

use std::path::Path;

use genre_core::trainer::{EvalRow, LossRecord};

use crate::error::{CliError, Result};

pub const LOSS_HEADER: [&str; 8] = ["step", "L_Fid", "L_EAR", "L_SDA", "L_GAN", "lambda1", "lambda2", "lambda3"];

pub const STEP_HEADER: [&str; 14] = [
    "step", "epoch", "domain", "trajectory", "accel", "L_Fid", "L_EAR", "L_SDA", "L_GAN", "L_D", "total", "next_lambda1",
    "next_lambda2", "next_lambda3",
];

/// One row of `losses.csv`: the losses of an iteration and the weights it used.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub losses: [f64; 4],
    pub lambda: [f64; 3],
}

impl From<&LossRecord> for LossRow {
    fn from(r: &LossRecord) -> Self {
        Self { step: r.iteration, losses: [r.fidelity, r.ear, r.sda, r.gan], lambda: r.weights_used.as_array() }
    }
}

impl LossRow {
    pub fn fields(&self) -> Vec<String> {
        let mut f = vec![self.step.to_string()];
        f.extend(self.losses.iter().chain(&self.lambda).map(|v| format!("{v:e}")));
        f
    }
}

pub fn step_fields(r: &LossRecord) -> Vec<String> {
    let next = r.weights.as_array();
    let mut f = vec![
        r.iteration.to_string(),
        r.epoch.to_string(),
        r.domain_id.to_string(),
        r.trajectory.to_string(),
        r.accel.to_string(),
    ];
    f.extend([r.fidelity, r.ear, r.sda, r.gan, r.disc, r.total].iter().chain(&next).map(|v| format!("{v:e}")));
    f
}

fn bad(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::Core(genre_core::Error::Format(format!("{}: {msg}", path.display())))
}

pub fn read_losses(path: &Path) -> Result<Vec<LossRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header != LOSS_HEADER {
        return Err(bad(path, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| rec[i].parse::<f64>().map_err(|e| bad(path, format!("line {}: {e}", rows.len() + 2)));
        let step = rec[0].parse::<u64>().map_err(|e| bad(path, format!("line {}: {e}", rows.len() + 2)))?;
        rows.push(LossRow {
            step,
            losses: [num(1)?, num(2)?, num(3)?, num(4)?],
            lambda: [num(5)?, num(6)?, num(7)?],
        });
    }
    Ok(rows)
}

pub fn write_rows(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub const EVAL_HEADER: [&str; 11] = [
    "domain", "trajectory", "accel", "method", "samples", "ssim_mean", "ssim_std", "psnr_mean", "psnr_std", "nmse_mean",
    "nmse_std",
];

/// Two rows per table entry: the network and the zero-filled baseline.
pub fn eval_fields(rows: &[EvalRow]) -> Vec<Vec<String>> {
    let mut out = Vec::with_capacity(rows.len() * 2);
    for r in rows {
        let base = [r.domain.to_string(), r.trajectory.to_string(), r.accel.to_string()];
        for (method, m) in [("genre", [r.ssim, r.psnr, r.nmse]), ("zero-filled", [r.zf_ssim, r.zf_psnr, r.zf_nmse])] {
            let mut f = base.to_vec();
            f.push(method.into());
            f.push(r.samples.to_string());
            for s in m {
                f.push(format!("{:.6}", s.mean));
                f.push(format!("{:.6}", s.std));
            }
            out.push(f);
        }
    }
    out
}

pub fn write_eval(path: &Path, rows: &[EvalRow]) -> Result<()> {
    write_rows(path, &EVAL_HEADER, eval_fields(rows))
}
