use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use amisim::runner::{format_summary, run_sweep, summarize, write_csv};
use amisim::{Backend, SweepSpec};
use clap::Parser;

/// Run routing experiments described by a scenario file and write one CSV
/// row per (backend, axis value, seed).
#[derive(Debug, Parser)]
#[command(name = "amisim", version)]
struct Args {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// CSV output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds per cell, overriding the file.
    #[arg(long)]
    seeds: Option<u64>,
    /// Run only this backend.
    #[arg(long)]
    backend: Option<Backend>,
    /// Simulated seconds per run, overriding the file.
    #[arg(long)]
    duration: Option<f64>,
    /// Suppress the summary table.
    #[arg(long)]
    quiet: bool,
}

const EXIT_ABORT: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let args = Args::parse();
    let mut spec = match SweepSpec::load(&args.scenario) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(n) = args.seeds {
        spec.seeds = n;
    }
    if let Some(b) = args.backend {
        spec.backends = vec![b];
        spec.base.scenario.backend = b;
    }
    if let Some(d) = args.duration {
        spec.base.scenario.duration = d;
    }
    let outcome = match run_sweep(&spec) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };

    let written = match &args.out {
        Some(path) => File::create(path).map_err(|e| e.to_string()).and_then(|f| {
            let mut w = BufWriter::new(f);
            write_csv(&mut w, &outcome.reports).map_err(|e| e.to_string())?;
            w.flush().map_err(|e| e.to_string())
        }),
        None => write_csv(io::stdout().lock(), &outcome.reports).map_err(|e| e.to_string()),
    };
    if let Err(e) = written {
        eprintln!("error: cannot write CSV: {e}");
        return ExitCode::from(EXIT_ABORT);
    }

    if !args.quiet {
        let table = format_summary(&summarize(&outcome.reports), spec.base.scenario.warmup);
        if args.out.is_some() {
            print!("{table}");
        } else {
            eprint!("{table}");
        }
    }
    for (run, err) in &outcome.aborted {
        eprintln!("aborted: {run}: {err}");
    }
    if outcome.aborted.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_ABORT)
    }
}
