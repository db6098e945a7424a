//! End-to-end runs of the `genre` binary on a tiny dataset.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_genre");

const DATA: &[&str] = &[
    "--h", "32", "--w", "32", "--frames", "5", "--coils", "2", "--domains", "2", "--samples-per-domain", "4",
];
const TRAIN: &[&str] = &[
    "--unrolls", "2", "--base-channels", "4", "--prompt-channels", "2", "--adjacent", "3", "--acs-lines", "8",
    "--disc-channels", "4", "--cov-window", "3", "--sda-window", "3", "--accel-set", "4,8", "--epochs", "2",
    "--seed", "3",
];

fn genre(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env("GENRE_THREADS", "1").output().expect("spawn genre")
}

fn ok(args: &[&str]) -> String {
    let out = genre(args);
    assert!(
        out.status.success(),
        "genre {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

fn gen_data(dir: &Path) -> PathBuf {
    let data = dir.join("data");
    let d = s(&data);
    let mut args = vec!["gen-data", "--out", &d, "--seed", "1"];
    args.extend(DATA);
    ok(&args);
    data
}

fn train(data: &Path, out: &Path, extra: &[&str]) {
    let (d, o) = (s(data), s(out));
    let mut args = vec!["train", "--data", &d, "--out", &o];
    args.extend(TRAIN);
    args.extend(extra);
    ok(&args);
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

/// Exit status and the single stderr line of a failing invocation.
fn failure(args: &[&str]) -> (i32, String) {
    let out = genre(args);
    assert!(!out.status.success(), "genre {args:?} unexpectedly succeeded");
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.trim_end().lines().count(), 1, "stderr not a single line: {err:?}");
    assert!(err.starts_with("error["), "unexpected error format: {err:?}");
    (out.status.code().unwrap(), err)
}

#[test]
fn train_eval_report_and_reconstruct() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path());
    let run = dir.path().join("run");
    train(&data, &run, &["--max-iterations", "6"]);
    for f in ["run.cfg", "losses.csv", "steps.csv", "latest.gcmr", "done"] {
        assert!(run.join(f).exists(), "{f} missing");
    }
    let losses = std::fs::read_to_string(run.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().next().unwrap().split(',').count(), 8);
    assert_eq!(losses.lines().count(), 7);

    let (ckpt, d) = (s(&run.join("latest.gcmr")), s(&data));
    let report = s(&dir.path().join("eval.csv"));
    ok(&["eval", "--ckpt", &ckpt, "--data", &d, "--report", &report, "--split", "train", "--eval-accel-set", "4"]);
    let eval = std::fs::read_to_string(&report).unwrap();
    assert!(eval.starts_with("domain,trajectory,accel,method"));
    assert!(eval.contains("zero-filled") && eval.contains("genre"));

    let rep = dir.path().join("rep");
    ok(&["report", "--run", &s(&run), "--out", &s(&rep)]);
    for f in ["lambda.csv", "lambda_chart.pgm", "panel_uniform.pgm", "panel_gaussian.pgm", "panel_radial.pgm"] {
        assert!(rep.join(f).exists(), "{f} missing");
    }
    let panel = image::open(rep.join("panel_radial.pgm")).unwrap();
    assert_eq!((panel.width(), panel.height()), (4 * 32, 32));

    let rec = dir.path().join("rec.pgm");
    let input = s(&data.join("d0/f0000_kG.gcmr"));
    let mask = s(&data.join("d0/f0000_mask.gcmr"));
    ok(&["reconstruct", "--ckpt", &ckpt, "--input", &input, "--mask", &mask, "--out", &s(&rec), "--bits", "16"]);
    assert!(read(&rec).starts_with(b"P5"));
    assert!(rec.with_extension("gcmr").exists());
}

#[test]
fn reruns_and_resumed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path());
    let again = dir.path().join("again");
    let d2 = s(&again);
    let mut args = vec!["gen-data", "--out", &d2, "--seed", "1"];
    args.extend(DATA);
    ok(&args);
    assert_eq!(read(&data.join("d1/f0003_kG.gcmr")), read(&again.join("d1/f0003_kG.gcmr")));

    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    train(&data, &a, &[]);
    train(&data, &b, &[]);
    train(&data, &c, &["--max-iterations", "5"]);
    let resume = s(&c.join("latest.gcmr"));
    train(&data, &c, &["--resume", &resume]);
    for f in ["losses.csv", "steps.csv", "latest.gcmr", "checkpoints/epoch_002.gcmr"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "rerun differs in {f}");
        assert_eq!(read(&a.join(f)), read(&c.join(f)), "resumed run differs in {f}");
    }
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let data = gen_data(dir.path());
    let first = dir.path().join("first");
    train(&data, &first, &["--max-iterations", "3"]);
    let second = dir.path().join("second");
    let cfg = s(&first.join("run.cfg"));
    ok(&["--config", &cfg, "train", "--out", &s(&second), "--max-iterations", "2"]);
    let text = std::fs::read_to_string(second.join("run.cfg")).unwrap();
    assert!(text.contains("max-iterations = 2"), "{text}");
    assert!(text.contains("unrolls = 2"), "{text}");
    let losses = std::fs::read_to_string(second.join("losses.csv")).unwrap();
    assert_eq!(losses.lines().count(), 3);
}

#[test]
fn failures_print_one_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let missing = s(&dir.path().join("nope"));
    let (code, err) = failure(&["train", "--data", &missing, "--out", &missing]);
    assert_eq!(code, 1);
    assert!(err.contains("nope"), "{err}");

    let (code, _) = failure(&["train", "--frobnicate"]);
    assert_eq!(code, 2);
    let (code, _) = failure(&["train", "--data", &missing]);
    assert_eq!(code, 2);

    let data = gen_data(dir.path());
    let (code, err) = failure(&["ablate", "--data", &s(&data), "--out", &missing, "--variants", "full,no-magic"]);
    assert_eq!(code, 2);
    assert!(err.contains("no-magic"), "{err}");

    let out = Command::new(BIN).args(["gen-data", "--out", &missing]).env("GENRE_THREADS", "0").output().unwrap();
    assert!(!out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stderr).trim_end().lines().count(), 1);
}

#[test]
fn help_and_version_exit_zero() {
    assert!(ok(&["--help"]).contains("gen-data"));
    assert!(!ok(&["--version"]).is_empty());
}
