//! `sarsim`: run scenarios, verify ledger exports and render report tables.
//!
//! Exit status is 0 on success, 2 when a run or a ledger export breaks an
//! invariant, and 1 on any other error (bad arguments included).

use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use sarsim_core::ledger::export::{read_index, verify_export, ExportError};
use sarsim_core::metrics::{report_tables, MetricsReport, TABLES};
use sarsim_core::scenario::Scenario;
use sarsim_core::sim::{simulate, RunOutput, TraceFormat, REPORT_JSON, SCENARIO_TOML};

#[derive(Parser)]
#[command(name = "sarsim", version, about = "Search-and-rescue drone fleet simulator with a permissioned ledger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

impl From<Format> for TraceFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => TraceFormat::Csv,
            Format::Json => TraceFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write the trace, report, scenario and ledger export.
    Simulate {
        /// Scenario file, or the name of a bundled scenario (`paper-baseline`).
        #[arg(long)]
        scenario: String,
        /// Overrides the scenario's master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Stop at this simulated time in seconds instead of mission end plus grace.
        #[arg(long)]
        until: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Re-verify an exported ledger from genesis.
    VerifyChain {
        #[arg(long)]
        ledger: PathBuf,
    },
    /// Print tables from a finished run directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "offload,link,ledger")]
        tables: Vec<String>,
    },
    /// Run one scenario over a seed range, one independent simulation per seed.
    Sweep {
        #[arg(long)]
        scenario: String,
        /// `A..B` (B excluded) or `A..=B`.
        #[arg(long, value_parser = parse_seeds)]
        seeds: Range<u64>,
        #[arg(long)]
        until: Option<f64>,
        /// Also write each run to `<out>/seed-<n>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

enum Outcome {
    Clean,
    Violated,
}

fn parse_seeds(s: &str) -> Result<Range<u64>, String> {
    let (a, b, inclusive) = if let Some((a, b)) = s.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = s.split_once("..") {
        (a, b, false)
    } else {
        return Err(format!("expected A..B or A..=B, got `{s}`"));
    };
    let a: u64 = a.trim().parse().map_err(|e| format!("bad start `{a}`: {e}"))?;
    let b: u64 = b.trim().parse().map_err(|e| format!("bad end `{b}`: {e}"))?;
    let end = if inclusive { b.checked_add(1).ok_or("seed range overflows")? } else { b };
    if end <= a {
        return Err(format!("empty seed range `{s}`"));
    }
    Ok(a..end)
}

fn summary(out: &RunOutput) -> String {
    let r = &out.report;
    let d = out.digests();
    format!(
        "seed {}: victims {}/{}, frames {}, blocks {}, coverage {:.3}, violations {}, trace {}",
        out.seed,
        r.victims_reported,
        r.victims.len(),
        r.frames_captured,
        r.ledger.blocks,
        r.coverage_fraction,
        out.violations.len(),
        &d.trace[..16]
    )
}

fn outcome(violations: &[String]) -> Outcome {
    for v in violations {
        eprintln!("invariant violation: {v}");
    }
    if violations.is_empty() {
        Outcome::Clean
    } else {
        Outcome::Violated
    }
}

fn run_simulate(scenario: &str, seed: Option<u64>, until: Option<f64>, out: &Path, format: Format) -> Result<Outcome> {
    let sc = Scenario::load(scenario)?;
    let run = simulate(&sc, seed, until)?;
    let written = run.write(out, format.into())?;
    println!("{}", summary(&run));
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(outcome(&run.violations))
}

fn run_verify(ledger: &Path) -> Result<Outcome> {
    match verify_export(ledger) {
        Ok(chain) => {
            let index = read_index(ledger)?;
            let mut problems = Vec::new();
            if index.tip_digest != chain.tip_digest() {
                problems.push(format!("index tip {} does not match the log tip {}", index.tip_digest, chain.tip_digest()));
            }
            if index.state_digest != chain.state().digest() {
                problems.push("index world-state digest does not match the replayed state".to_string());
            }
            if problems.is_empty() {
                println!("ok: {} blocks, tip {}", chain.height(), chain.tip_digest());
            }
            Ok(outcome(&problems))
        }
        Err(ExportError::Bad(first)) => {
            println!("first bad block {}: {}", first.number, first.reason);
            Ok(Outcome::Violated)
        }
        Err(e) => Err(e.into()),
    }
}

fn run_report(input: &Path, tables: &[String]) -> Result<Outcome> {
    let path = input.join(REPORT_JSON);
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let report: MetricsReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let scenario = Scenario::load(&input.join(SCENARIO_TOML).to_string_lossy())?;
    match report_tables(&report, &scenario, tables) {
        Ok(text) => print!("{text}"),
        Err(e) => bail!("{e}"),
    }
    Ok(outcome(&report.violations))
}

fn run_sweep(scenario: &str, seeds: Range<u64>, until: Option<f64>, out: Option<&Path>) -> Result<Outcome> {
    let sc = Scenario::load(scenario)?;
    let runs: Vec<Result<(String, Vec<String>)>> = seeds
        .into_par_iter()
        .map(|seed| {
            let run = simulate(&sc, Some(seed), until)?;
            if let Some(dir) = out {
                run.write(&dir.join(format!("seed-{seed}")), TraceFormat::Csv)?;
            }
            Ok((summary(&run), run.violations.iter().map(|v| format!("seed {seed}: {v}")).collect()))
        })
        .collect();
    let mut violations = Vec::new();
    for r in runs {
        let (line, v) = r?;
        println!("{line}");
        violations.extend(v);
    }
    Ok(outcome(&violations))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            // Help and version requests are not errors.
            return ExitCode::from(u8::from(e.use_stderr()));
        }
    };
    let result = match &cli.command {
        Command::Simulate { scenario, seed, until, out, format } => run_simulate(scenario, *seed, *until, out, *format),
        Command::VerifyChain { ledger } => run_verify(ledger),
        Command::Report { input, tables } => {
            if let Some(bad) = tables.iter().find(|t| !TABLES.contains(&t.as_str())) {
                Err(anyhow::anyhow!("unknown table `{bad}` (expected one of {})", TABLES.join(", ")))
            } else {
                run_report(input, tables)
            }
        }
        Command::Sweep { scenario, seeds, until, out } => run_sweep(scenario, seeds.clone(), *until, out.as_deref()),
    };
    match result {
        Ok(Outcome::Clean) => ExitCode::SUCCESS,
        Ok(Outcome::Violated) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seeds("0..20").unwrap(), 0..20);
        assert_eq!(parse_seeds("3..=5").unwrap(), 3..6);
        assert!(parse_seeds("5..5").is_err());
        assert!(parse_seeds("7").is_err());
        assert!(parse_seeds("a..3").is_err());
    }
}
