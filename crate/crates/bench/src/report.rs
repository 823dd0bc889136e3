//! Summaries of a directory of trace files.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use mcmab_core::simenv::mean_ci;
use serde::Deserialize;

use crate::runner::{sha256_hex, Manifest};
use crate::{BenchError, Result};

pub const REPORT_HEADER: &str = "agent,t,mean_regret,regret_ci_low,regret_ci_high,cum_regret,cum_ci_low,cum_ci_high,mean_reward,reward_ci_low,reward_ci_high";

#[derive(Debug, Clone, Deserialize)]
struct TraceRow {
    seed: u64,
    setting: String,
    agent: String,
    m: usize,
    t: usize,
    k: usize,
    #[allow(dead_code)]
    level_units: usize,
    reward: f64,
    #[allow(dead_code)]
    opt_value: f64,
    regret: f64,
}

/// (m, t, k) keys present per agent.
type RowKeys = BTreeMap<String, BTreeSet<(usize, usize, usize)>>;

/// Per-seed series for one agent: regret and reward summed over campaigns.
#[derive(Debug, Clone, Default)]
struct Series {
    regret: Vec<f64>,
    reward: Vec<f64>,
}

/// Across-seed statistics at one round.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub agent: String,
    pub t: usize,
    pub mean_regret: f64,
    pub regret_ci: (f64, f64),
    pub cum_regret: f64,
    pub cum_ci: (f64, f64),
    pub mean_reward: f64,
    pub reward_ci: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct Report {
    pub setting: String,
    pub seeds: Vec<u64>,
    pub agents: Vec<String>,
    pub rows: Vec<ReportRow>,
}

fn usage(msg: impl Into<String>) -> BenchError {
    BenchError::Usage(msg.into())
}

fn trace_files(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| BenchError::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| BenchError::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(seed) = name.strip_prefix("trace_").and_then(|s| s.strip_suffix(".csv")) {
            let seed = seed
                .parse::<u64>()
                .map_err(|_| usage(format!("{name}: trace file names must be trace_<seed>.csv")))?;
            out.push((seed, entry.path()));
        }
    }
    out.sort();
    Ok(out)
}

/// Rejects traces that the manifest does not vouch for.
fn check_manifest(dir: &Path, files: &[(u64, PathBuf)]) -> Result<()> {
    let path = dir.join("manifest.toml");
    if !path.exists() {
        return Ok(());
    }
    let manifest = Manifest::load(&path)?;
    let listed: BTreeMap<&str, &str> = manifest.files.iter().map(|f| (f.path.as_str(), f.sha256.as_str())).collect();
    for (_, file) in files {
        let name = file.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let bytes = std::fs::read(file).map_err(|e| BenchError::io(file, e))?;
        match listed.get(name.as_str()) {
            None => return Err(usage(format!("{name} is not part of the run in {}", path.display()))),
            Some(&h) if h != sha256_hex(&bytes) => {
                return Err(usage(format!("{name} does not match the hash recorded in {}", path.display())))
            }
            _ => {}
        }
    }
    let seeds: BTreeSet<u64> = files.iter().map(|(s, _)| *s).collect();
    if let Some(missing) = manifest.seeds.iter().find(|s| !seeds.contains(s)) {
        return Err(usage(format!("trace for seed {missing} listed in the manifest is missing")));
    }
    Ok(())
}

/// Reads every `trace_*.csv` in `dir` and aggregates across seeds.
///
/// Traces must agree on setting, agents and the (m, t, k) grid; when a
/// `manifest.toml` is present each trace must also match its recorded hash.
pub fn build_report(dir: &Path) -> Result<Report> {
    let files = trace_files(dir)?;
    if files.is_empty() {
        return Err(usage(format!("no trace_*.csv files in {}", dir.display())));
    }
    check_manifest(dir, &files)?;

    let mut setting: Option<String> = None;
    let mut agents: Vec<String> = Vec::new();
    let mut shape: Option<RowKeys> = None;
    let mut per_seed: Vec<BTreeMap<String, Series>> = Vec::new();
    for (seed, path) in &files {
        let mut reader = csv::Reader::from_path(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        let mut series: BTreeMap<String, Series> = BTreeMap::new();
        let mut keys = RowKeys::new();
        let mut order: Vec<String> = Vec::new();
        for (line, row) in reader.deserialize::<TraceRow>().enumerate() {
            let row = row.map_err(|e| usage(format!("{}: {e}", path.display())))?;
            let at = || format!("{}:{}", path.display(), line + 2);
            if row.seed != *seed {
                return Err(usage(format!("{}: seed {} in a file named for seed {seed}", at(), row.seed)));
            }
            match &setting {
                None => setting = Some(row.setting.clone()),
                Some(s) if *s != row.setting => {
                    return Err(usage(format!("{}: mixed settings `{s}` and `{}`", at(), row.setting)))
                }
                _ => {}
            }
            if row.t == 0 || row.k == 0 || row.m == 0 {
                return Err(usage(format!("{}: m, t and k are 1-based", at())));
            }
            if !keys.entry(row.agent.clone()).or_default().insert((row.m, row.t, row.k)) {
                return Err(usage(format!("{}: duplicate row", at())));
            }
            if !order.contains(&row.agent) {
                order.push(row.agent.clone());
            }
            let s = series.entry(row.agent.clone()).or_default();
            if s.regret.len() < row.t {
                s.regret.resize(row.t, 0.0);
                s.reward.resize(row.t, 0.0);
            }
            if row.k == 1 {
                s.regret[row.t - 1] += row.regret;
            }
            s.reward[row.t - 1] += row.reward;
        }
        match &shape {
            None => {
                shape = Some(keys);
                agents = order;
            }
            Some(expected) if *expected != keys => {
                return Err(usage(format!(
                    "{} covers different agents or rounds than the other traces",
                    path.display()
                )))
            }
            _ => {}
        }
        per_seed.push(series);
    }
    if agents.is_empty() {
        return Err(usage("trace files contain no rows"));
    }

    let mut rows = Vec::new();
    for agent in &agents {
        let series: Vec<&Series> = per_seed.iter().map(|s| &s[agent]).collect();
        let rounds = series[0].regret.len();
        let mut cumulative = vec![0.0; series.len()];
        for t in 0..rounds {
            let regret: Vec<f64> = series.iter().map(|s| s.regret[t]).collect();
            let reward: Vec<f64> = series.iter().map(|s| s.reward[t]).collect();
            for (c, r) in cumulative.iter_mut().zip(&regret) {
                *c += r;
            }
            let (rm, rh) = mean_ci(&regret);
            let (cm, ch) = mean_ci(&cumulative);
            let (wm, wh) = mean_ci(&reward);
            rows.push(ReportRow {
                agent: agent.clone(),
                t: t + 1,
                mean_regret: rm,
                regret_ci: (rm - rh, rm + rh),
                cum_regret: cm,
                cum_ci: (cm - ch, cm + ch),
                mean_reward: wm,
                reward_ci: (wm - wh, wm + wh),
            });
        }
    }
    Ok(Report {
        setting: setting.unwrap_or_default(),
        seeds: files.iter().map(|(s, _)| *s).collect(),
        agents,
        rows,
    })
}

impl Report {
    pub fn rows_for<'a>(&'a self, agent: &'a str) -> impl Iterator<Item = &'a ReportRow> + 'a {
        self.rows.iter().filter(move |r| r.agent == agent)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                r.agent,
                r.t,
                r.mean_regret,
                r.regret_ci.0,
                r.regret_ci.1,
                r.cum_regret,
                r.cum_ci.0,
                r.cum_ci.1,
                r.mean_reward,
                r.reward_ci.0,
                r.reward_ci.1
            );
        }
        out
    }

    /// Fixed-width table: final cumulative regret with its 95% half-width,
    /// mean per-round regret over the first and last tenth of the horizon,
    /// and mean reward per round.
    pub fn summary_table(&self) -> String {
        let mut out = format!("setting: {}   seeds: {}\n", self.setting, self.seeds.len());
        let _ = writeln!(
            out,
            "{:<20} {:>14} {:>10} {:>12} {:>12} {:>12}",
            "agent", "cum_regret", "+/-", "early_regret", "late_regret", "mean_reward"
        );
        for agent in &self.agents {
            let rows: Vec<&ReportRow> = self.rows_for(agent).collect();
            let Some(last) = rows.last() else { continue };
            let window = (rows.len() / 10).max(1);
            let avg = |rs: &[&ReportRow]| rs.iter().map(|r| r.mean_regret).sum::<f64>() / rs.len() as f64;
            let reward = rows.iter().map(|r| r.mean_reward).sum::<f64>() / rows.len() as f64;
            let _ = writeln!(
                out,
                "{:<20} {:>14.4} {:>10.4} {:>12.4} {:>12.4} {:>12.4}",
                agent,
                last.cum_regret,
                last.cum_ci.1 - last.cum_regret,
                avg(&rows[..window]),
                avg(&rows[rows.len() - window..]),
                reward
            );
        }
        out
    }
}
