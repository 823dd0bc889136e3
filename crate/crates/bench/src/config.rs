//! Experiment configuration files.
//!
//! ```toml
//! version = 1
//! setting = "concurrent"
//! env = "linear"
//! campaigns = 20
//! adlines = 3
//! levels = 10
//! rounds = 50
//! d_m = 3
//! d_k = 3
//! sigma_m = 0.75
//! sigma_eps = 1.0
//! seeds = 100            # or an explicit list: [11, 12]
//! master_seed = 2024
//!
//! [[agent]]
//! name = "mcmab-lr"
//! kind = "mcmab"
//! model = "linear"
//! ```
//!
//! Unknown keys are rejected.

use std::path::Path;

use mcmab_core::agents::{AgentConfig, AgentKind, ModelSpec, RetrainSchedule};
use mcmab_core::domain::FeatureTransform;
use mcmab_core::rng::replication_seed;
use mcmab_core::simenv::{EnvKind, EnvParams};
use serde::{Deserialize, Serialize};

use crate::{BenchError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    Concurrent,
    Sequential,
}

impl Setting {
    pub fn as_str(&self) -> &'static str {
        match self {
            Setting::Concurrent => "concurrent",
            Setting::Sequential => "sequential",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvName {
    Linear,
    Nonlinear,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Seeds {
    Count(u64),
    List(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub setting: Setting,
    pub env: EnvName,
    pub campaigns: usize,
    pub adlines: usize,
    pub levels: usize,
    pub rounds: usize,
    pub d_m: usize,
    pub d_k: usize,
    pub sigma_m: f64,
    pub sigma_eps: f64,
    pub seeds: Seeds,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<String>,
    #[serde(rename = "agent")]
    pub agents: Vec<AgentSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Linear,
    Gp,
    Ntk,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSection {
    pub name: String,
    pub kind: String,
    #[serde(default = "default_model")]
    pub model: ModelName,
    #[serde(default = "default_schedule")]
    pub schedule: String,
    /// Defaults to the environment's own feature map.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<String>,
    /// Overrides the experiment-wide value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_eps: Option<f64>,
    #[serde(default = "one")]
    pub prior_var: f64,
    #[serde(default = "one")]
    pub lengthscale: f64,
    #[serde(default = "one")]
    pub signal: f64,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "one")]
    pub regularization: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_augment")]
    pub han_augment_count: usize,
    #[serde(default = "default_fa_prior_var")]
    pub fa_prior_var: f64,
    /// 0 disables memory collapse.
    #[serde(default = "default_memory_threshold")]
    pub memory_threshold: usize,
    #[serde(default)]
    pub log_link: bool,
    #[serde(default)]
    pub refresh_linearization: bool,
}

fn default_model() -> ModelName {
    ModelName::Linear
}
fn default_schedule() -> String {
    "every_round".into()
}
fn one() -> f64 {
    1.0
}
fn default_depth() -> usize {
    2
}
fn default_width() -> usize {
    12
}
fn default_learning_rate() -> f64 {
    0.01
}
fn default_augment() -> usize {
    30
}
fn default_fa_prior_var() -> f64 {
    20.0
}
fn default_memory_threshold() -> usize {
    2000
}

impl AgentSection {
    pub fn new(name: &str, kind: &str) -> Self {
        Self {
            name: name.into(),
            kind: kind.into(),
            model: default_model(),
            schedule: default_schedule(),
            transform: None,
            sigma_m: None,
            sigma_eps: None,
            prior_var: 1.0,
            lengthscale: 1.0,
            signal: 1.0,
            depth: default_depth(),
            width: default_width(),
            regularization: 1.0,
            learning_rate: default_learning_rate(),
            han_augment_count: default_augment(),
            fa_prior_var: default_fa_prior_var(),
            memory_threshold: default_memory_threshold(),
            log_link: false,
            refresh_linearization: false,
        }
    }
}

fn usage(msg: impl Into<String>) -> BenchError {
    BenchError::Usage(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| usage(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(usage(format!("unsupported config version {} (expected {SCHEMA_VERSION})", self.version)));
        }
        self.env_params().validate().map_err(|e| usage(e.to_string()))?;
        if !(self.sigma_eps > 0.0) {
            return Err(usage("sigma_eps must be positive"));
        }
        match &self.seeds {
            Seeds::Count(0) => return Err(usage("seeds must be at least 1")),
            Seeds::List(l) if l.is_empty() => return Err(usage("seed list is empty")),
            Seeds::List(l) => {
                let mut sorted = l.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != l.len() {
                    return Err(usage("seed list has duplicates"));
                }
            }
            _ => {}
        }
        if self.agents.is_empty() {
            return Err(usage("at least one [[agent]] section is required"));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.name.is_empty() || a.name.contains(',') {
                return Err(usage(format!("agent {} needs a non-empty name without commas", i + 1)));
            }
            if self.agents[..i].iter().any(|b| b.name == a.name) {
                return Err(usage(format!("duplicate agent name `{}`", a.name)));
            }
            self.agent_config(a)?;
        }
        Ok(())
    }

    pub fn env_params(&self) -> EnvParams {
        EnvParams {
            kind: match self.env {
                EnvName::Linear => EnvKind::Linear,
                EnvName::Nonlinear => EnvKind::Nonlinear,
            },
            campaigns: self.campaigns,
            adlines: self.adlines,
            levels: self.levels,
            rounds: self.rounds,
            d_m: self.d_m,
            d_k: self.d_k,
            sigma_m: self.sigma_m,
            sigma_eps: self.sigma_eps,
        }
    }

    /// Replication seeds in run order.
    pub fn replication_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Seeds::Count(n) => (0..*n).map(|i| replication_seed(self.master_seed, i)).collect(),
            Seeds::List(l) => l.clone(),
        }
    }

    pub fn agent_config(&self, a: &AgentSection) -> Result<AgentConfig> {
        let err = |e: mcmab_core::Error| usage(format!("agent `{}`: {e}", a.name));
        let kind: AgentKind = a.kind.parse().map_err(err)?;
        let mut cfg = AgentConfig::new(a.name.clone(), kind);
        cfg.model = match a.model {
            ModelName::Linear => ModelSpec::Linear { prior_var: a.prior_var },
            ModelName::Gp => ModelSpec::Rbf {
                lengthscale: a.lengthscale,
                signal: a.signal,
            },
            ModelName::Ntk => ModelSpec::Ntk {
                depth: a.depth,
                width: a.width,
                regularization: a.regularization,
                learning_rate: a.learning_rate,
            },
        };
        cfg.schedule = a.schedule.parse::<RetrainSchedule>().map_err(err)?;
        cfg.transform = match &a.transform {
            Some(t) => t.parse::<FeatureTransform>().map_err(err)?,
            None => self.env_params().kind.transform(),
        };
        cfg.sigma_m = a.sigma_m.unwrap_or(self.sigma_m);
        cfg.sigma_eps = a.sigma_eps.unwrap_or(self.sigma_eps);
        cfg.han_augment_count = a.han_augment_count;
        cfg.fa_prior_var = a.fa_prior_var;
        cfg.memory_threshold = (a.memory_threshold > 0).then_some(a.memory_threshold);
        cfg.log_link = a.log_link;
        cfg.refresh_linearization = a.refresh_linearization;
        if !(cfg.sigma_m >= 0.0) || !(cfg.sigma_eps > 0.0) {
            return Err(usage(format!("agent `{}`: sigma_m must be >= 0 and sigma_eps > 0", a.name)));
        }
        if !(a.prior_var > 0.0 && a.lengthscale > 0.0 && a.signal > 0.0 && a.regularization > 0.0 && a.fa_prior_var > 0.0)
        {
            return Err(usage(format!("agent `{}`: variances, scales and regularization must be positive", a.name)));
        }
        if a.depth < 2 || a.width == 0 {
            return Err(usage(format!("agent `{}`: networks need depth >= 2 and width >= 1", a.name)));
        }
        if a.han_augment_count < 2 {
            return Err(usage(format!("agent `{}`: han_augment_count must be at least 2", a.name)));
        }
        Ok(cfg)
    }
}

/// Parses a `--seeds` override: `N` runs `N` derived seeds, `a,b,c` runs
/// exactly those replication seeds.
pub fn parse_seeds(text: &str) -> Result<Seeds> {
    let bad = || usage(format!("invalid --seeds value `{text}`"));
    if text.contains(',') {
        let list = text
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.trim().parse::<u64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        if list.is_empty() {
            return Err(bad());
        }
        Ok(Seeds::List(list))
    } else {
        text.trim().parse().map(Seeds::Count).map_err(|_| bad())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
version = 1
setting = "concurrent"
env = "linear"
campaigns = 2
adlines = 2
levels = 4
rounds = 5
d_m = 3
d_k = 3
sigma_m = 0.75
sigma_eps = 1.0
seeds = 2

[[agent]]
name = "fa"
kind = "fa_ind"
"#;

    #[test]
    fn minimal_config_parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.replication_seeds().len(), 2);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn missing_sigma_m_is_named() {
        let text = MINIMAL.replace("sigma_m = 0.75\n", "");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("sigma_m"), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace("rounds = 5", "rounds = 5\nrouns = 6");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("rouns"), "{err}");
        let text = MINIMAL.replace("kind = \"fa_ind\"", "kind = \"fa_ind\"\nprior = 2");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = MINIMAL.replace("levels = 4", "levels = four");
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn seed_overrides() {
        assert_eq!(parse_seeds("3").unwrap(), Seeds::Count(3));
        assert_eq!(parse_seeds("4,9").unwrap(), Seeds::List(vec![4, 9]));
        assert_eq!(parse_seeds("7,").unwrap(), Seeds::List(vec![7]));
        assert!(parse_seeds("x").is_err());
    }

    #[test]
    fn explicit_seed_list_round_trips() {
        let text = MINIMAL.replace("seeds = 2", "seeds = [5, 6, 7]");
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(cfg.replication_seeds(), vec![5, 6, 7]);
        assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
