use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mcmab_bench::config::parse_seeds;
use mcmab_bench::report::build_report;
use mcmab_bench::runner::{load_config_or_manifest, run_to_dir};
use mcmab_bench::verify::{run_suite, Selection, Suite};
use mcmab_bench::{BenchError, Result};

/// Multi-campaign budget allocation bandit simulator.
#[derive(Debug, Parser)]
#[command(name = "mcmab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write traces, aggregate and manifest.
    Run {
        /// Experiment config, or the manifest.toml of an earlier run.
        #[arg(long)]
        config: PathBuf,
        /// Seed count (`100`) or explicit list (`3,5,8`); overrides the config.
        #[arg(long)]
        seeds: Option<String>,
        /// Output directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; defaults to all cores.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Check the production code against reference oracles.
    Verify {
        /// mckp, posterior, kernels, limits or all.
        suite: String,
        /// Base seed of the sweep.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Replay a single case by its seed.
        #[arg(long, conflicts_with = "seed")]
        case: Option<u64>,
        /// Directory for JSON dumps of violating instances.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Summarise the traces in a run directory.
    Report {
        /// Directory holding trace_*.csv files.
        dir: PathBuf,
        /// Where to write the plot-ready CSV; defaults to DIR/report.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Run {
            config,
            seeds,
            out,
            threads,
        } => {
            check_threads(threads)?;
            let mut cfg = load_config_or_manifest(&config)?;
            if let Some(s) = seeds {
                cfg.seeds = parse_seeds(&s)?;
            }
            let out = out
                .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
                .ok_or_else(|| BenchError::Usage("no output directory: pass --out or set output_dir".into()))?;
            let result = run_to_dir(&cfg, &out, threads)?;
            println!(
                "wrote {} trace files, {} and {}",
                result.trace_files.len(),
                result.aggregate_file.display(),
                result.manifest_file.display()
            );
            for (agent, points) in &result.curves {
                if let Some(p) = points.last() {
                    println!(
                        "{agent:<20} cumulative regret at t={}: {:.4} [{:.4}, {:.4}]",
                        p.round, p.cumulative_mean, p.cumulative_ci_low, p.cumulative_ci_high
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify {
            suite,
            seed,
            case,
            out,
            threads,
        } => {
            check_threads(threads)?;
            let suites: Vec<Suite> = if suite == "all" {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse()?]
            };
            let sel = match case {
                Some(c) => Selection::Case(c),
                None => Selection::Sweep { base_seed: seed },
            };
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads.unwrap_or(0))
                .build()
                .map_err(|e| BenchError::Runtime(format!("thread pool: {e}")))?;
            let reports = pool.install(|| {
                use rayon::prelude::*;
                suites.par_iter().map(|&s| run_suite(s, sel)).collect::<Result<Vec<_>>>()
            })?;
            let mut ok = true;
            for report in &reports {
                print!("{}", report.summary());
                for v in &report.violations {
                    ok = false;
                    dump_violation(v, out.as_deref())?;
                }
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Command::Report { dir, out } => {
            let report = build_report(&dir)?;
            let path = out.unwrap_or_else(|| dir.join("report.csv"));
            std::fs::write(&path, report.to_csv()).map_err(|e| BenchError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            print!("{}", report.summary_table());
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn check_threads(threads: Option<usize>) -> Result<()> {
    if threads == Some(0) {
        return Err(BenchError::Usage("--threads must be at least 1".into()));
    }
    Ok(())
}

fn dump_violation(v: &mcmab_bench::verify::Violation, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("violation serializes");
    eprintln!("violation: {} {} case {}: {}", v.suite, v.check, v.case_seed, v.detail);
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| BenchError::Io {
                path: dir.display().to_string(),
                source: e,
            })?;
            let path = dir.join(format!("violation_{}_{}_{}.json", v.suite, v.check, v.case_seed));
            std::fs::write(&path, text).map_err(|e| BenchError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
            eprintln!("  instance written to {}", path.display());
        }
        None => eprintln!("{text}"),
    }
    Ok(())
}
