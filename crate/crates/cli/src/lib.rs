//! Command-line front end of the reconstruction pipeline. The binary is a
//! thin wrapper; every command is callable from here.

pub mod acceptance;
pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod pgm;
pub mod records;

use std::io::Write;

use clap::Parser;

use args::{Cli, Command, SUBCOMMANDS};
use error::{CliError, Result};

/// Caps the rayon pool at `GENRE_THREADS` workers when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("GENRE_THREADS") {
        let n: usize = v
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| error::usage(format!("GENRE_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| error::usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

/// Outcome of parsing: either a command to run or text to print (help,
/// version) followed by a clean exit.
pub enum Parsed {
    Run(Box<Cli>),
    Print(String),
}

pub fn parse(args: Vec<String>) -> Result<Parsed> {
    let args = config::merge_config(args, &SUBCOMMANDS)?;
    match Cli::try_parse_from(args) {
        Ok(cli) => Ok(Parsed::Run(Box::new(cli))),
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            Ok(Parsed::Print(e.to_string()))
        }
        Err(e) if e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            Err(CliError::Usage("no subcommand given; see --help".into()))
        }
        Err(e) => {
            // keep the message and its detail lines, drop usage/help hints
            let text = e.to_string();
            let msg: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.starts_with("Usage:") && !l.starts_with("For more information"))
                .filter(|l| !l.is_empty())
                .collect();
            Err(CliError::Usage(msg.join(" ").trim_start_matches("error: ").to_string()))
        }
    }
}

/// Runs a parsed command, returning a short summary for stdout.
pub fn run(cli: Cli) -> Result<String> {
    Ok(match cli.command {
        Command::GenData(a) => {
            let d = commands::gen_data(&a)?;
            format!("wrote {} samples over domains {:?} to {}", d.len(), d.domains(), a.out.display())
        }
        Command::Train(a) => {
            let r = commands::train(&a)?;
            let s = genre_core::trainer::eval::summarize(&r.eval);
            format!(
                "trained {} iterations ({} epochs); training-domain ssim {:.4} psnr {:.2} nmse {:.5}; artifacts in {}",
                r.trainer.state.iteration,
                r.trainer.state.epoch,
                s[0],
                s[1],
                s[2],
                a.out.display()
            )
        }
        Command::Reconstruct(a) => {
            commands::reconstruct(&a)?;
            format!("wrote {} and {}", a.out.display(), a.out.with_extension("gcmr").display())
        }
        Command::Eval(a) => {
            let rows = commands::eval(&a)?;
            let s = genre_core::trainer::eval::summarize(&rows);
            format!(
                "ssim {:.4} (zero-filled {:.4}) psnr {:.2} ({:.2}) nmse {:.5} ({:.5}); report {}",
                s[0],
                s[3],
                s[1],
                s[4],
                s[2],
                s[5],
                a.report.display()
            )
        }
        Command::Ablate(a) => {
            let res = commands::ablate(&a)?;
            let mut out = String::new();
            for (v, n, m) in commands::ablation_summary(&res) {
                out.push_str(&format!(
                    "{v:<12} runs {n} ssim {:.4}±{:.4} psnr {:.2}±{:.2} nmse {:.5}±{:.5}\n",
                    m[0].mean, m[0].std, m[1].mean, m[1].std, m[2].mean, m[2].std
                ));
            }
            out.push_str(&format!("summary in {}", a.out.join("summary.csv").display()));
            out
        }
        Command::Report(a) => {
            let files = commands::report(&a)?;
            files.iter().map(|p| format!("wrote {}", p.display())).collect::<Vec<_>>().join("\n")
        }
    })
}

/// Full entry point: returns the process exit code.
pub fn main_with(args: Vec<String>) -> i32 {
    let result = init_threads().and_then(|_| parse(args)).and_then(|p| match p {
        Parsed::Print(text) => Ok(text.trim_end().to_string()),
        Parsed::Run(cli) => run(*cli),
    });
    match result {
        Ok(text) => {
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(std::io::stdout(), "{text}");
            0
        }
        Err(e) => {
            eprintln!("{}", e.one_line());
            if matches!(e, CliError::Usage(_)) {
                2
            } else {
                1
            }
        }
    }
}
