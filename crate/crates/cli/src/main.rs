//! `bdso` — run replicated set/ledger scenarios over seeded schedules and
//! verify recorded histories.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::{bail, Context, Result};
use bdso_cli::{load_config, trace};
use bdso_core::checker::{run_checks, Verdict};
use bdso_core::scenario::{validate, Policy, ValidatedScenario};
use bdso_core::simnet::{run as run_sim, RunError};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bdso", version, about = "deterministic simulator and checkers for Byzantine-tolerant replicated sets and ledgers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario over one or more seeds, check it, and summarize.
    Run(RunArgs),
    /// Re-run checkers on stored trace files.
    Check(CheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Seed or half-open seed range, e.g. `7` or `0..100`. Defaults to the
    /// seed in the scenario file.
    #[arg(long)]
    seeds: Option<String>,
    /// Write one trace file per seed into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated checker list, overriding the scenario's.
    #[arg(long, value_delimiter = ',')]
    properties: Vec<String>,
    /// Override the scheduling policy.
    #[arg(long)]
    policy: Option<String>,
    /// Override the step limit.
    #[arg(long)]
    step_limit: Option<u64>,
    /// Override strict resilience-bound checking.
    #[arg(long)]
    strict_bounds: Option<bool>,
    /// Worker threads for seed-parallel execution.
    #[arg(long)]
    jobs: Option<usize>,
    /// Print only the summary matrix.
    #[arg(long)]
    quiet: bool,
}

#[derive(Args)]
struct CheckArgs {
    /// Trace files produced by `run --out`.
    traces: Vec<PathBuf>,
    /// Comma-separated checker list, overriding the trace header's.
    #[arg(long, value_delimiter = ',')]
    properties: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Check(args) => cmd_check(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn parse_seeds(spec: &str) -> Result<(u64, u64)> {
    if let Some((a, b)) = spec.split_once("..") {
        let start: u64 = a.trim().parse().context("seed range start")?;
        let end: u64 = b.trim().parse().context("seed range end")?;
        if end <= start {
            bail!("empty seed range {spec}");
        }
        Ok((start, end))
    } else {
        let s: u64 = spec.trim().parse().context("seed")?;
        Ok((s, s + 1))
    }
}

struct SeedOutcome {
    seed: u64,
    verdicts: Vec<Verdict>,
    run_error: Option<String>,
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let mut config = load_config(&args.config)?;
    if let Some(policy) = &args.policy {
        config.policy = match policy.as_str() {
            "fair" => Policy::Fair,
            "fifo" => Policy::Fifo,
            "adversary" => Policy::Adversary,
            other => bail!("unknown policy {other:?} (expected fair, fifo, or adversary)"),
        };
    }
    if let Some(limit) = args.step_limit {
        config.step_limit = limit;
    }
    if let Some(strict) = args.strict_bounds {
        config.strict_bounds = strict;
    }
    if !args.properties.is_empty() {
        config.properties = args.properties.clone();
    }
    let vs = validate(&config).map_err(|e| anyhow::anyhow!("{e}"))?;
    let (start, end) = match &args.seeds {
        Some(spec) => parse_seeds(spec)?,
        None => (config.seed, config.seed + 1),
    };
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }

    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    let outcomes = run_seeds(&vs, start, end, jobs, args.out.as_deref())?;

    let mut all_pass = true;
    let mut matrix: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut failing_detail = Vec::new();
    for outcome in &outcomes {
        if let Some(err) = &outcome.run_error {
            all_pass = false;
            failing_detail.push(format!("seed {}: {err}", outcome.seed));
            continue;
        }
        for v in &outcome.verdicts {
            let entry = matrix.entry(v.property.clone()).or_insert((0, 0));
            if v.pass {
                entry.0 += 1;
            } else {
                entry.1 += 1;
                all_pass = false;
                if failing_detail.len() < 20 {
                    let mut detail = format!("seed {}: FAIL {}", outcome.seed, v.property);
                    for w in v.witness.iter().take(3) {
                        detail.push_str("\n    ");
                        detail.push_str(w);
                    }
                    failing_detail.push(detail);
                }
            }
        }
    }

    println!("scenario {} — seeds {start}..{end} — policy {:?}", config.name, config.policy);
    println!("{:<24} {:>8} {:>8}", "property", "pass", "fail");
    for (property, (pass, fail)) in &matrix {
        println!("{property:<24} {pass:>8} {fail:>8}");
    }
    if !args.quiet {
        for detail in &failing_detail {
            println!("{detail}");
        }
    }
    println!("{}", if all_pass { "RESULT: PASS" } else { "RESULT: FAIL" });
    Ok(all_pass)
}

/// Seed-parallel execution; each run is fully isolated.
fn run_seeds(
    vs: &ValidatedScenario,
    start: u64,
    end: u64,
    jobs: usize,
    out: Option<&Path>,
) -> Result<Vec<SeedOutcome>> {
    let next = AtomicUsize::new(0);
    let seeds: Vec<u64> = (start..end).collect();
    let results: Mutex<Vec<SeedOutcome>> = Mutex::new(Vec::with_capacity(seeds.len()));
    let errors: Mutex<Vec<anyhow::Error>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1) {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(idx) else { break };
                match run_one(vs, seed, out) {
                    Ok(outcome) => results.lock().unwrap().push(outcome),
                    Err(e) => errors.lock().unwrap().push(e),
                }
            });
        }
    });
    let errors = errors.into_inner().unwrap();
    if let Some(e) = errors.into_iter().next() {
        return Err(e);
    }
    let mut outcomes = results.into_inner().unwrap();
    outcomes.sort_by_key(|o| o.seed);
    Ok(outcomes)
}

fn run_one(vs: &ValidatedScenario, seed: u64, out: Option<&Path>) -> Result<SeedOutcome> {
    let meta = vs.meta(seed);
    let (history, run_error) = match run_sim(vs, seed) {
        Ok(h) => (h, None),
        Err(RunError::StepLimitExceeded { history }) => {
            (history, Some("step limit exceeded".to_string()))
        }
    };
    if let Some(dir) = out {
        let path = dir.join(format!("{}-seed{seed}.jsonl", vs.config.name));
        trace::write_trace(&path, &meta, &history)?;
    }
    if run_error.is_some() {
        return Ok(SeedOutcome { seed, verdicts: Vec::new(), run_error });
    }
    let verdicts =
        run_checks(&meta, &history, &vs.properties).map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(SeedOutcome { seed, verdicts, run_error: None })
}

fn cmd_check(args: CheckArgs) -> Result<bool> {
    if args.traces.is_empty() {
        bail!("no trace files given");
    }
    let mut all_pass = true;
    for path in &args.traces {
        let (meta, history) = trace::read_trace(path)?;
        let properties =
            if args.properties.is_empty() { meta.properties.clone() } else { args.properties.clone() };
        let verdicts =
            run_checks(&meta, &history, &properties).map_err(|e| anyhow::anyhow!("{e}"))?;
        println!("{} (scenario {}, seed {}):", path.display(), meta.name, meta.seed);
        for v in &verdicts {
            println!("  {v}");
            all_pass &= v.pass;
        }
    }
    Ok(all_pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_specs() {
        assert_eq!(parse_seeds("7").unwrap(), (7, 8));
        assert_eq!(parse_seeds("0..100").unwrap(), (0, 100));
        assert!(parse_seeds("9..3").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
