//! Prints one PASS/FAIL line per acceptance criterion.

use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::Parser;
use genre_cli::acceptance::{evaluate, parse_only, skipped, Status, CRITERIA};

#[derive(Parser, Debug)]
#[command(name = "acceptance", about = "Runs the acceptance criteria and prints PASS/FAIL per criterion")]
struct Args {
    /// Working directory for datasets and runs; finished training runs found
    /// here are reused.
    #[arg(long, default_value = "target/acceptance")]
    work: PathBuf,
    /// Comma-separated criterion numbers to run (default: all).
    #[arg(long)]
    only: Option<String>,
    /// Skip the long training criteria (learning signal, ablation).
    #[arg(long)]
    quick: bool,
    /// Print the individual checks behind each line.
    #[arg(long, short)]
    verbose: bool,
}

fn main() {
    let args = Args::parse();
    let selected = match args.only.as_deref().map(parse_only).transpose() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("{}", e.one_line());
            std::process::exit(2);
        }
    };
    if let Err(e) = genre_cli::init_threads().and_then(|_| Ok(std::fs::create_dir_all(&args.work)?)) {
        eprintln!("{}", e.one_line());
        std::process::exit(2);
    }
    let start = Instant::now();
    let mut failed = 0;
    let mut out = std::io::stdout();
    for c in &CRITERIA {
        if selected.as_ref().is_some_and(|s| !s.contains(&c.id)) {
            continue;
        }
        let outcome = if args.quick && matches!(c.id, 6 | 7) {
            skipped(c, "--quick")
        } else {
            evaluate(c, &args.work)
        };
        failed += (outcome.status == Status::Fail) as usize;
        let _ = writeln!(out, "{outcome}");
        if args.verbose || outcome.status == Status::Fail || matches!(c.id, 6 | 7) {
            for n in &outcome.notes {
                let _ = writeln!(out, "    {n}");
            }
        }
        let _ = out.flush();
    }
    let _ = writeln!(out, "total runtime {:.1}s, {failed} failed", start.elapsed().as_secs_f64());
    std::process::exit(if failed == 0 { 0 } else { 1 });
}
