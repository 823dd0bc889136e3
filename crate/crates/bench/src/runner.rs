//! Parallel replication runner and its on-disk outputs.
//!
//! A run directory holds:
//!
//! * `trace_{seed}.csv`: one row per (agent, campaign, round, ad line);
//! * `aggregate.csv`: cumulative Bayes regret per agent and round with a 95%
//!   normal interval across seeds;
//! * `config.toml`: the resolved config with an explicit seed list;
//! * `manifest.toml`: config hash, seeds, versions and output hashes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use mcmab_core::agents::build_agent;
use mcmab_core::rng::{stream_rng, Stream};
use mcmab_core::simenv::{bayes_regret, run_concurrent, run_sequential, EnvTruth, RegretPoint, RoundRecord};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Seeds, Setting};
use crate::{BenchError, Result};

pub const TRACE_HEADER: &str = "seed,setting,agent,m,t,k,level_units,reward,opt_value,regret";
pub const AGGREGATE_HEADER: &str = "agent,t,mean_regret,ci_low,ci_high";

/// Every agent's trace for one replication seed.
#[derive(Debug, Clone)]
pub struct Replication {
    pub seed: u64,
    pub runs: Vec<(String, Vec<RoundRecord>)>,
}

/// Runs every configured agent against the environment drawn for `seed`.
///
/// All agents see the same environment and noise stream.
pub fn run_replication(cfg: &ExperimentConfig, seed: u64) -> Result<Replication> {
    let env = Arc::new(EnvTruth::for_seed(&cfg.env_params(), seed)?);
    let mut runs = Vec::with_capacity(cfg.agents.len());
    for section in &cfg.agents {
        let agent_cfg = cfg.agent_config(section)?;
        let mut agent = build_agent(&agent_cfg, &env, &mut stream_rng(seed, Stream::Init))?;
        let records = match cfg.setting {
            Setting::Concurrent => run_concurrent(&env, agent.as_mut(), cfg.rounds, seed),
            Setting::Sequential => run_sequential(&env, agent.as_mut(), cfg.rounds, seed),
        }
        .map_err(|e| BenchError::Runtime(format!("agent `{}`: {e}", section.name)))?;
        runs.push((section.name.clone(), records));
    }
    Ok(Replication { seed, runs })
}

/// Runs all seeds, in parallel when `threads != 1`. Results are sorted by
/// seed.
pub fn run_all(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<Replication>> {
    let seeds = cfg.replication_seeds();
    let work = || seeds.par_iter().map(|&s| run_replication(cfg, s)).collect::<Result<Vec<_>>>();
    let mut reps = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| BenchError::Runtime(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }?;
    reps.sort_by_key(|r| r.seed);
    Ok(reps)
}

pub fn trace_csv(setting: Setting, rep: &Replication) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for (agent, records) in &rep.runs {
        for r in records {
            for (k, (&level, &reward)) in r.levels.iter().zip(&r.rewards).enumerate() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    rep.seed,
                    setting.as_str(),
                    agent,
                    r.campaign,
                    r.round,
                    k + 1,
                    level,
                    reward,
                    r.opt_value,
                    r.regret
                );
            }
        }
    }
    out
}

/// Cumulative regret curves per agent, in config order.
pub fn aggregate(cfg: &ExperimentConfig, reps: &[Replication]) -> Vec<(String, Vec<RegretPoint>)> {
    cfg.agents
        .iter()
        .enumerate()
        .map(|(a, section)| {
            let runs: Vec<Vec<RoundRecord>> = reps.iter().map(|r| r.runs[a].1.clone()).collect();
            (section.name.clone(), bayes_regret(&runs))
        })
        .collect()
}

pub fn aggregate_csv(curves: &[(String, Vec<RegretPoint>)]) -> String {
    let mut out = String::from(AGGREGATE_HEADER);
    out.push('\n');
    for (agent, points) in curves {
        for p in points {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                agent, p.round, p.cumulative_mean, p.cumulative_ci_low, p.cumulative_ci_high
            );
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config_file: String,
    pub config_sha256: String,
    pub setting: Setting,
    pub seeds: Vec<u64>,
    pub files: Vec<ManifestFile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        toml::from_str(&text).map_err(|e| BenchError::Usage(format!("{}: {e}", path.display())))
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn trace_file_name(seed: u64) -> String {
    format!("trace_{seed}.csv")
}

/// What a finished run wrote.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    pub trace_files: Vec<PathBuf>,
    pub aggregate_file: PathBuf,
    pub manifest_file: PathBuf,
    pub curves: Vec<(String, Vec<RegretPoint>)>,
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

/// Runs `cfg` and writes traces, aggregate, resolved config and manifest
/// into `out`.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &Path, threads: Option<usize>) -> Result<RunOutput> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| BenchError::io(out, e))?;
    let reps = run_all(cfg, threads)?;

    let mut resolved = cfg.clone();
    resolved.seeds = Seeds::List(reps.iter().map(|r| r.seed).collect());
    resolved.output_dir = None;
    let config_text = resolved.to_toml();
    let config_path = out.join("config.toml");
    write(&config_path, &config_text)?;

    let mut files = Vec::new();
    let mut trace_files = Vec::new();
    for rep in &reps {
        let name = trace_file_name(rep.seed);
        let text = trace_csv(cfg.setting, rep);
        let path = out.join(&name);
        write(&path, &text)?;
        files.push(ManifestFile {
            path: name,
            sha256: sha256_hex(text.as_bytes()),
        });
        trace_files.push(path);
    }
    let curves = aggregate(cfg, &reps);
    let agg_text = aggregate_csv(&curves);
    let aggregate_file = out.join("aggregate.csv");
    write(&aggregate_file, &agg_text)?;
    files.push(ManifestFile {
        path: "aggregate.csv".into(),
        sha256: sha256_hex(agg_text.as_bytes()),
    });

    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        config_file: "config.toml".into(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        setting: cfg.setting,
        seeds: reps.iter().map(|r| r.seed).collect(),
        files,
    };
    let manifest_file = out.join("manifest.toml");
    write(&manifest_file, &toml::to_string(&manifest).expect("manifest serializes"))?;
    Ok(RunOutput {
        dir: out.to_path_buf(),
        trace_files,
        aggregate_file,
        manifest_file,
        curves,
    })
}

/// Loads either an experiment config or a run manifest; a manifest resolves
/// to the config stored next to it.
pub fn load_config_or_manifest(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    if let Ok(manifest) = toml::from_str::<Manifest>(&text) {
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let config_path = dir.join(&manifest.config_file);
        let config_text = std::fs::read_to_string(&config_path).map_err(|e| BenchError::io(&config_path, e))?;
        if sha256_hex(config_text.as_bytes()) != manifest.config_sha256 {
            return Err(BenchError::Usage(format!(
                "{} does not match the hash recorded in {}",
                config_path.display(),
                path.display()
            )));
        }
        return ExperimentConfig::from_toml(&config_text)
            .map_err(|e| BenchError::Usage(format!("{}: {e}", config_path.display())));
    }
    ExperimentConfig::from_toml(&text).map_err(|e| BenchError::Usage(format!("{}: {e}", path.display())))
}
