//! Reference child process for the external evaluator protocol.
//!
//! Replies to each `EVAL` with the sum of the value indices of the labels
//! it receives. `--fault` turns it into a deliberately broken child for
//! exercising protocol diagnostics.

use std::io::{self, BufRead, Write};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use ntbea::space::{ConfigFormat, SearchSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Fault {
    /// Answer every EVAL with two lines.
    DoubleReply,
    /// Never acknowledge the handshake.
    NoReady,
    /// Answer EVAL with text that is not a number.
    NonNumeric,
    /// Exit without replying once `--after` evaluations have been answered.
    Crash,
}

#[derive(Debug, Parser)]
#[command(name = "ntbea-ref-evaluator", about = "Reference evaluator child for the NTBEA line protocol")]
struct Args {
    /// Reply with 0.0 instead of the index sum.
    #[arg(long)]
    zero: bool,
    #[arg(long, value_enum)]
    fault: Option<Fault>,
    /// Evaluations answered before a `crash` fault triggers.
    #[arg(long, default_value_t = 0)]
    after: usize,
    /// Optional file; each process start appends one line to it.
    #[arg(long)]
    start_log: Option<std::path::PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(path) = &args.start_log {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .expect("open start log");
        let _ = writeln!(f, "start");
    }
    let stdin = io::stdin();
    let mut out = io::stdout().lock();
    let mut space: Option<SearchSpace> = None;
    let mut answered = 0usize;

    for line in stdin.lock().lines() {
        let Ok(line) = line else {
            return ExitCode::from(2);
        };
        let (verb, rest) = line.split_once(' ').unwrap_or((line.as_str(), ""));
        match verb {
            "SPACE" => {
                let parsed = match SearchSpace::from_config(rest, ConfigFormat::Json) {
                    Ok(s) => s,
                    Err(e) => {
                        eprintln!("bad space document: {e}");
                        return ExitCode::from(2);
                    }
                };
                space = Some(parsed);
                if args.fault != Some(Fault::NoReady) {
                    let _ = writeln!(out, "READY");
                }
            }
            "EVAL" => {
                let Some(space) = space.as_ref() else {
                    eprintln!("EVAL before SPACE");
                    return ExitCode::from(2);
                };
                if args.fault == Some(Fault::Crash) && answered >= args.after {
                    return ExitCode::from(3);
                }
                let labels: Vec<&str> = rest.split(' ').collect();
                let point = match space.point_from_labels(&labels) {
                    Ok(p) => p,
                    Err(e) => {
                        eprintln!("bad EVAL line: {e}");
                        return ExitCode::from(2);
                    }
                };
                let fitness = if args.zero {
                    0.0
                } else {
                    point.indices().iter().sum::<usize>() as f64
                };
                match args.fault {
                    Some(Fault::NonNumeric) => {
                        let _ = writeln!(out, "score={fitness}");
                    }
                    Some(Fault::DoubleReply) => {
                        let _ = writeln!(out, "{fitness:?}");
                        let _ = writeln!(out, "{fitness:?}");
                    }
                    _ => {
                        let _ = writeln!(out, "{fitness:?}");
                    }
                }
                answered += 1;
            }
            "END" => return ExitCode::SUCCESS,
            _ => {
                eprintln!("unknown request {line:?}");
                return ExitCode::from(2);
            }
        }
        let _ = out.flush();
    }
    ExitCode::SUCCESS
}
