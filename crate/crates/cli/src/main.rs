use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use oldsgd::harness::{
    scalability_report, speedup_report, sweep, verify_bound, verify_invariants, workers_from_env,
    RunConfig, RunTrace, SweepGrid,
};
use oldsgd::io::write_atomic;
use oldsgd::timemodel::{build_timeline, CostModel, TimedAlgorithm};
use oldsgd::topology::{TopologyKind, TopologySpec, WeightRule};

/// Simulator for overlapping local decentralized SGD and its baselines.
///
/// Sweeps and multi-seed checks use a worker pool whose size is read from
/// OLDSGD_WORKERS (default 1).
#[derive(Parser)]
#[command(name = "oldsgd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its trace CSV.
    ///
    /// Exit status: 0 converged, 2 budget exhausted, 3 diverged.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Run the cartesian product of a grid over a base configuration.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// JSON grid: {"tau": [...], "c": [...], "algorithm": [...], "seed": [...]}.
        #[arg(long)]
        grid: PathBuf,
        /// Directory receiving one trace per grid point plus sweep.json.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Best-tau time-to-target of every algorithm relative to OLDSGD.
    ReportSpeedup {
        /// Trace files or directories containing them.
        #[arg(long, num_args = 1.., required = true)]
        traces: Vec<PathBuf>,
        #[arg(long, allow_hyphen_values = true)]
        target: f64,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Time-to-target on rings of increasing size, relative to one agent.
    ReportScalability {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [2usize, 4, 8, 16, 32])]
        n: Vec<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Compare the seed-averaged gradient norm with the convergence bound.
    VerifyBound {
        #[arg(long)]
        config: PathBuf,
        /// Runs seeds 0..seeds.
        #[arg(long, default_value_t = 20)]
        seeds: u64,
    },
    /// Check the structural invariants along one run.
    VerifyInvariants {
        #[arg(long)]
        config: PathBuf,
    },
    /// Print a mixing matrix as CSV.
    PrintMixing {
        #[arg(long, value_parser = ["ring", "complete"], default_value = "ring")]
        kind: String,
        #[arg(long)]
        n: usize,
        #[arg(long, value_parser = ["metropolis", "uniform"], default_value = "metropolis")]
        weights: String,
    },
    /// Print the explicit compute/transmit schedule as JSON.
    PrintTimeline {
        #[arg(long)]
        algorithm: String,
        #[arg(long)]
        tau: usize,
        #[arg(long)]
        c: f64,
        #[arg(long, default_value_t = 8)]
        n: usize,
        #[arg(long, default_value_t = 2)]
        rounds: usize,
    },
}

/// Writes `text` plus a newline to stdout; a closed pipe is not an error.
fn say(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match writeln!(out, "{text}").and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => say(text)?,
    }
    Ok(())
}

fn collect_traces(paths: &[PathBuf]) -> Result<Vec<RunTrace>> {
    let mut files = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut entries: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            entries.sort();
            files.extend(entries);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!("no trace files found");
    }
    files
        .iter()
        .map(|f| RunTrace::load(f).with_context(|| format!("loading {}", f.display())))
        .collect()
}

fn execute(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { config, output } => {
            let mut cfg = RunConfig::load(&config)?;
            if output.is_some() {
                cfg.output = output;
            }
            let out = oldsgd::harness::run(&cfg)?;
            let last = out.trace.final_row().copied();
            let summary = serde_json::json!({
                "status": out.trace.status.as_str(),
                "alpha": out.trace.meta.alpha,
                "target_iteration": out.target_iteration,
                "final": last,
                "output": cfg.output,
            });
            say(&serde_json::to_string_pretty(&summary)?)?;
            Ok(ExitCode::from(out.trace.status.exit_code() as u8))
        }
        Command::Sweep {
            config,
            grid,
            out_dir,
        } => {
            let cfg = RunConfig::load(&config)?;
            let text = std::fs::read_to_string(&grid)
                .with_context(|| format!("reading {}", grid.display()))?;
            let grid: SweepGrid = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", grid.display()))?;
            std::fs::create_dir_all(&out_dir)
                .with_context(|| format!("creating {}", out_dir.display()))?;
            let results = sweep(&cfg, &grid, workers_from_env(), Some(&out_dir))?;
            let index: Vec<serde_json::Value> = results
                .iter()
                .map(|r| match &r.trace {
                    Ok(t) => serde_json::json!({
                        "point": r.point,
                        "file": r.point.file_name(),
                        "status": t.status.as_str(),
                    }),
                    Err(e) => serde_json::json!({ "point": r.point, "error": e }),
                })
                .collect();
            let failed = results.iter().filter(|r| r.trace.is_err()).count();
            write_atomic(
                &out_dir.join("sweep.json"),
                serde_json::to_string_pretty(&index)?.as_bytes(),
            )?;
            eprintln!("{} runs, {failed} failed", results.len());
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::ReportSpeedup {
            traces,
            target,
            output,
        } => {
            let traces = collect_traces(&traces)?;
            let report = speedup_report(&traces, target)?;
            for w in &report.warnings {
                eprintln!("warning: {w}");
            }
            emit(&report.to_json(), output.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::ReportScalability { config, n, output } => {
            let cfg = RunConfig::load(&config)?;
            let report = scalability_report(&cfg, &n, workers_from_env())?;
            emit(&report.to_json(), output.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::VerifyBound { config, seeds } => {
            let cfg = RunConfig::load(&config)?;
            let seeds: Vec<u64> = (0..seeds).collect();
            let check = verify_bound(&cfg, &seeds, workers_from_env())?;
            say(&check.to_json())?;
            Ok(if check.holds {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            })
        }
        Command::VerifyInvariants { config } => {
            let cfg = RunConfig::load(&config)?;
            say(&verify_invariants(&cfg)?.to_json())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::PrintMixing { kind, n, weights } => {
            let spec = TopologySpec {
                kind: if kind == "ring" {
                    TopologyKind::Ring
                } else {
                    TopologyKind::Complete
                },
                n,
                weights: if weights == "uniform" {
                    WeightRule::Uniform
                } else {
                    WeightRule::Metropolis
                },
            };
            let w = spec.mixing()?;
            let csv = w.to_csv();
            say(&format!(
                "# lambda2: {:.16e}\n# p: {:.16e}\n{}",
                w.lambda2(),
                w.p(),
                csv.trim_end()
            ))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::PrintTimeline {
            algorithm,
            tau,
            c,
            n,
            rounds,
        } => {
            let alg: TimedAlgorithm = algorithm.parse()?;
            let timeline = build_timeline(alg, tau, &CostModel::from_f64(c, n)?, rounds)?;
            say(&timeline.to_json())?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
