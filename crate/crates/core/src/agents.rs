//! Allocation policies.
//!
//! Every agent answers `recommend(m, t)` with one level per ad line of
//! campaign `m` and learns from `update(m, t, observations)`. Clock events
//! tell agents with a retrain schedule when to refresh.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::domain::{transform_features, Allocation, ArmSpace, ArmStats, FeatureTransform, Observation};
use crate::kernels::{init_mlp, KernelSpec, MeanFn};
use crate::linalg;
use crate::mckp::{self, ValueTable};
use crate::posterior::{posterior_theta, sample_theta, BackendChoice, GPosteriorState, HierModel};
use crate::rng::SimRng;
use crate::simenv::EnvTruth;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgentKind {
    Mcmab,
    Fd,
    FaInd,
    OracleTs,
    Hibou,
    Han2021,
}

impl AgentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            AgentKind::Mcmab => "mcmab",
            AgentKind::Fd => "fd",
            AgentKind::FaInd => "fa_ind",
            AgentKind::OracleTs => "oracle_ts",
            AgentKind::Hibou => "hibou",
            AgentKind::Han2021 => "han2021",
        }
    }
}

impl fmt::Display for AgentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AgentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mcmab" => AgentKind::Mcmab,
            "fd" => AgentKind::Fd,
            "fa_ind" => AgentKind::FaInd,
            "oracle_ts" | "oracle" => AgentKind::OracleTs,
            "hibou" => AgentKind::Hibou,
            "han2021" => AgentKind::Han2021,
            other => return Err(Error::Parse(format!("unknown agent kind `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetrainSchedule {
    /// `g` absorbs each campaign's observations as soon as they arrive.
    EveryRound,
    /// `g` absorbs the previous round's observations at the start of a round.
    DailyBatch,
    /// `g` is refit, and its draw frozen, at the start of each campaign.
    PerCampaign,
}

impl RetrainSchedule {
    pub fn as_str(&self) -> &'static str {
        match self {
            RetrainSchedule::EveryRound => "every_round",
            RetrainSchedule::DailyBatch => "daily_batch",
            RetrainSchedule::PerCampaign => "per_campaign",
        }
    }
}

impl FromStr for RetrainSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "every_round" => RetrainSchedule::EveryRound,
            "daily_batch" => RetrainSchedule::DailyBatch,
            "per_campaign" => RetrainSchedule::PerCampaign,
            other => return Err(Error::Parse(format!("unknown retrain schedule `{other}`"))),
        })
    }
}

/// Working model family for `g`.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSpec {
    /// `gamma ~ N(0, prior_var I)`.
    Linear { prior_var: f64 },
    Rbf { lengthscale: f64, signal: f64 },
    /// Frozen-linearization NTK around a freshly initialized MLP.
    /// `regularization` is the prior precision of the parameters;
    /// `learning_rate` is accepted for config compatibility and unused.
    Ntk {
        depth: usize,
        width: usize,
        regularization: f64,
        learning_rate: f64,
    },
}

impl ModelSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ModelSpec::Linear { .. } => "linear",
            ModelSpec::Rbf { .. } => "gp",
            ModelSpec::Ntk { .. } => "ntk",
        }
    }

    pub fn build_kernel<R: Rng + ?Sized>(&self, input_dim: usize, rng: &mut R) -> Result<KernelSpec> {
        match *self {
            ModelSpec::Linear { prior_var } => KernelSpec::isotropic_linear(input_dim, prior_var),
            ModelSpec::Rbf { lengthscale, signal } => KernelSpec::rbf_with(lengthscale, signal, MeanFn::Zero),
            ModelSpec::Ntk {
                depth,
                width,
                regularization,
                ..
            } => KernelSpec::ntk_with(init_mlp(depth, width, input_dim, rng)?, None, regularization),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub name: String,
    pub kind: AgentKind,
    pub model: ModelSpec,
    pub schedule: RetrainSchedule,
    pub transform: FeatureTransform,
    /// Known random-effect sd; forced to 0 for `fd`.
    pub sigma_m: f64,
    /// Known noise sd.
    pub sigma_eps: f64,
    pub han_augment_count: usize,
    pub fa_prior_var: f64,
    /// History rows that trigger a memory collapse of a kernel-space
    /// posterior. `None` disables collapsing.
    pub memory_threshold: Option<usize>,
    /// Model `ln(1 + y)` instead of `y`.
    pub log_link: bool,
    /// Re-linearize an NTK model at the posterior mean at each refit.
    pub refresh_linearization: bool,
}

impl AgentConfig {
    pub fn new(name: impl Into<String>, kind: AgentKind) -> Self {
        Self {
            name: name.into(),
            kind,
            model: ModelSpec::Linear { prior_var: 1.0 },
            schedule: RetrainSchedule::EveryRound,
            transform: FeatureTransform::LinearWithIntercept,
            sigma_m: 0.75,
            sigma_eps: 1.0,
            han_augment_count: 30,
            fa_prior_var: 20.0,
            memory_threshold: Some(2000),
            log_link: false,
            refresh_linearization: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockEvent {
    RoundStart { round: usize },
    CampaignStart { campaign: usize },
}

pub trait Agent: Send {
    fn name(&self) -> &str;

    fn on_event(&mut self, event: ClockEvent) -> Result<()>;

    fn recommend(&mut self, campaign: usize, round: usize, rng: &mut SimRng) -> Result<Allocation>;

    fn update(&mut self, campaign: usize, round: usize, observations: &[Observation]) -> Result<()>;
}

/// Builds the agent described by `config` for environment `env`.
pub fn build_agent(config: &AgentConfig, env: &Arc<EnvTruth>, rng: &mut SimRng) -> Result<Box<dyn Agent>> {
    let space = Arc::new(ArmSpace::new(env.campaigns.clone(), env.grid, config.transform)?);
    Ok(match config.kind {
        AgentKind::Mcmab | AgentKind::Fd => {
            let kernel = config.model.build_kernel(space.feature_dim(), rng)?;
            let sigma_m = if config.kind == AgentKind::Fd { 0.0 } else { config.sigma_m };
            let model = HierModel::isotropic(kernel, sigma_m, config.sigma_eps)?;
            Box::new(McmabAgent::new(config, model, space)?)
        }
        AgentKind::FaInd => Box::new(FaIndAgent::new(&config.name, space, config.fa_prior_var, config.sigma_eps)?),
        AgentKind::OracleTs => Box::new(OracleAgent::new(&config.name, env.clone())),
        AgentKind::Hibou => Box::new(HibouAgent::new(&config.name, space)),
        AgentKind::Han2021 => Box::new(Han2021Agent::new(config, space)?),
    })
}

fn allocate(space: &ArmSpace, campaign: usize, level_values: &[f64]) -> Result<Allocation> {
    let k = space.campaign(campaign).n_adlines();
    let table = ValueTable::from_level_values(level_values, k)?;
    let sol = mckp::solve(&table);
    Allocation::new(campaign, sol.levels, space.grid())
}

fn check_campaign(space: &ArmSpace, campaign: usize) -> Result<()> {
    if campaign == 0 || campaign > space.n_campaigns() {
        return Err(Error::invalid(format!("unknown campaign {campaign}")));
    }
    Ok(())
}

/// Groups observations by round, preserving order within a round.
fn by_round(obs: &[Observation]) -> Vec<Vec<Observation>> {
    let mut rounds: Vec<usize> = obs.iter().map(|o| o.round).collect();
    rounds.sort_unstable();
    rounds.dedup();
    rounds
        .into_iter()
        .map(|t| obs.iter().filter(|o| o.round == t).copied().collect())
        .collect()
}

/// Two-step Thompson sampling over the hierarchical model. With `sigma_m = 0`
/// this is the feature-determined agent.
pub struct McmabAgent {
    name: String,
    space: Arc<ArmSpace>,
    schedule: RetrainSchedule,
    state: GPosteriorState,
    theta_stats: ArmStats,
    pending: Vec<Observation>,
    full_history: Vec<Observation>,
    cached_g: Vec<Option<DVector<f64>>>,
    memory_threshold: Option<usize>,
    log_link: bool,
    refresh_linearization: bool,
}

impl McmabAgent {
    pub fn new(config: &AgentConfig, model: HierModel, space: Arc<ArmSpace>) -> Result<Self> {
        let state = GPosteriorState::prior(Arc::new(model), space.clone())?;
        Ok(Self {
            name: config.name.clone(),
            schedule: config.schedule,
            theta_stats: ArmStats::new(space.n_arms()),
            pending: Vec::new(),
            full_history: Vec::new(),
            cached_g: vec![None; space.n_campaigns()],
            memory_threshold: config.memory_threshold,
            log_link: config.log_link,
            refresh_linearization: config.refresh_linearization,
            state,
            space,
        })
    }

    pub fn g_state(&self) -> &GPosteriorState {
        &self.state
    }

    pub fn theta_stats(&self) -> &ArmStats {
        &self.theta_stats
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    /// The frozen `g` draw of campaign `m` under `per_campaign`.
    pub fn cached_g(&self, campaign: usize) -> Option<&DVector<f64>> {
        self.cached_g.get(campaign - 1).and_then(Option::as_ref)
    }

    fn fold(&mut self, batch: &[Observation]) -> Result<()> {
        if batch.is_empty() {
            return Ok(());
        }
        for group in by_round(batch) {
            self.state = self.state.batch_append(&group)?;
        }
        if self.refresh_linearization {
            self.relinearize()?;
        }
        if let Some(limit) = self.memory_threshold {
            if !self.state.is_gamma_space() && self.state.history_len() > limit {
                self.state = self.state.memory_collapse()?;
            }
        }
        Ok(())
    }

    fn relinearize(&mut self) -> Result<()> {
        let (KernelSpec::Ntk { mlp, regularization, prior_weights }, Some(gp)) =
            (&self.state.model().kernel, self.state.gamma_posterior())
        else {
            return Ok(());
        };
        let anchor = prior_weights
            .clone()
            .unwrap_or_else(|| DVector::from_column_slice(mlp.weights()));
        let moved = mlp.with_weights(gp.mean.iter().copied().collect())?;
        let kernel = KernelSpec::ntk_with(moved, Some(anchor), *regularization)?;
        let old = self.state.model();
        let model = HierModel::new(kernel, old.random_effect.clone(), old.noise_sd)?;
        let history = crate::domain::History::from_observations(self.full_history.clone())?;
        self.state = GPosteriorState::from_history(Arc::new(model), self.space.clone(), &history, BackendChoice::Auto)?;
        Ok(())
    }

    fn draw_g(&mut self, campaign: usize, rng: &mut SimRng) -> Result<DVector<f64>> {
        let arms: Vec<usize> = self.space.campaign_range(campaign).collect();
        if self.schedule != RetrainSchedule::PerCampaign {
            return self.state.sample_g(&arms, rng);
        }
        if let Some(g) = &self.cached_g[campaign - 1] {
            return Ok(g.clone());
        }
        let g = self.state.sample_g(&arms, rng)?;
        self.cached_g[campaign - 1] = Some(g.clone());
        Ok(g)
    }
}

impl Agent for McmabAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_event(&mut self, event: ClockEvent) -> Result<()> {
        match (self.schedule, event) {
            (RetrainSchedule::DailyBatch, ClockEvent::RoundStart { .. }) => {
                let batch = std::mem::take(&mut self.pending);
                self.fold(&batch)
            }
            (RetrainSchedule::PerCampaign, ClockEvent::CampaignStart { campaign }) => {
                check_campaign(&self.space, campaign)?;
                let batch = std::mem::take(&mut self.pending);
                self.fold(&batch)?;
                self.cached_g[campaign - 1] = None;
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn recommend(&mut self, campaign: usize, _round: usize, rng: &mut SimRng) -> Result<Allocation> {
        check_campaign(&self.space, campaign)?;
        let g = self.draw_g(campaign, rng)?;
        let post = posterior_theta(self.state.model(), &self.space, &self.theta_stats, campaign, &g)?;
        let mut theta = sample_theta(&post, rng)?;
        if self.log_link {
            theta.apply(|v| *v = v.exp_m1());
        }
        allocate(&self.space, campaign, theta.as_slice())
    }

    fn update(&mut self, campaign: usize, _round: usize, observations: &[Observation]) -> Result<()> {
        check_campaign(&self.space, campaign)?;
        let obs: Vec<Observation> = observations
            .iter()
            .map(|o| Observation {
                reward: if self.log_link { o.reward.max(0.0).ln_1p() } else { o.reward },
                ..*o
            })
            .collect();
        for o in &obs {
            if o.arm.campaign != campaign {
                return Err(Error::invalid(format!("observation for campaign {} sent to {campaign}", o.arm.campaign)));
            }
            self.theta_stats.add(self.space.index(&o.arm)?, o.reward);
        }
        if self.refresh_linearization {
            self.full_history.extend_from_slice(&obs);
        }
        match self.schedule {
            RetrainSchedule::EveryRound => self.fold(&obs),
            _ => {
                self.pending.extend_from_slice(&obs);
                Ok(())
            }
        }
    }
}

/// Independent conjugate Normal learner per arm; features unused.
pub struct FaIndAgent {
    name: String,
    space: Arc<ArmSpace>,
    prior_var: f64,
    noise_var: f64,
    stats: ArmStats,
}

impl FaIndAgent {
    pub fn new(name: &str, space: Arc<ArmSpace>, prior_var: f64, noise_sd: f64) -> Result<Self> {
        if !(prior_var > 0.0) || !(noise_sd > 0.0) {
            return Err(Error::invalid("fa_ind needs positive prior variance and noise sd"));
        }
        Ok(Self {
            name: name.to_string(),
            stats: ArmStats::new(space.n_arms()),
            space,
            prior_var,
            noise_var: noise_sd * noise_sd,
        })
    }

    /// Posterior `(mean, var)` of arm `i`.
    pub fn posterior(&self, i: usize) -> (f64, f64) {
        let c = self.stats.count(i) as f64;
        let var = 1.0 / (1.0 / self.prior_var + c / self.noise_var);
        (var * self.stats.sum(i) / self.noise_var, var)
    }
}

impl Agent for FaIndAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_event(&mut self, _event: ClockEvent) -> Result<()> {
        Ok(())
    }

    fn recommend(&mut self, campaign: usize, _round: usize, rng: &mut SimRng) -> Result<Allocation> {
        check_campaign(&self.space, campaign)?;
        let draws: Vec<f64> = self
            .space
            .campaign_range(campaign)
            .map(|i| {
                let (mean, var) = self.posterior(i);
                let z: f64 = rng.sample(StandardNormal);
                mean + var.sqrt() * z
            })
            .collect();
        allocate(&self.space, campaign, &draws)
    }

    fn update(&mut self, campaign: usize, _round: usize, observations: &[Observation]) -> Result<()> {
        check_campaign(&self.space, campaign)?;
        for o in observations {
            self.stats.add(self.space.index(&o.arm)?, o.reward);
        }
        Ok(())
    }
}

/// Plays the optimum of the true expected rewards.
pub struct OracleAgent {
    name: String,
    env: Arc<EnvTruth>,
}

impl OracleAgent {
    pub fn new(name: &str, env: Arc<EnvTruth>) -> Self {
        Self { name: name.to_string(), env }
    }
}

impl Agent for OracleAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_event(&mut self, _event: ClockEvent) -> Result<()> {
        Ok(())
    }

    fn recommend(&mut self, campaign: usize, _round: usize, _rng: &mut SimRng) -> Result<Allocation> {
        check_campaign(self.env.space(), campaign)?;
        let sol = self.env.optimum(campaign)?;
        Allocation::new(campaign, sol.levels, &self.env.grid)
    }

    fn update(&mut self, _campaign: usize, _round: usize, _observations: &[Observation]) -> Result<()> {
        Ok(())
    }
}

/// Gradient-only allocator: fits a through-origin slope of reward on spend
/// per ad line and splits the budget in proportion to the positive slopes.
/// Reconstruction of a production heuristic whose exact rules are unpublished.
pub struct HibouAgent {
    name: String,
    space: Arc<ArmSpace>,
    /// Per campaign, per ad line: `(sum s*y, sum s*s)` with spend `s` in units.
    moments: Vec<Vec<(f64, f64)>>,
    previous: Vec<Option<Vec<usize>>>,
}

impl HibouAgent {
    pub fn new(name: &str, space: Arc<ArmSpace>) -> Self {
        let moments = space
            .campaigns()
            .iter()
            .map(|c| vec![(0.0, 0.0); c.n_adlines()])
            .collect();
        Self {
            name: name.to_string(),
            previous: vec![None; space.n_campaigns()],
            moments,
            space,
        }
    }

    /// Least-squares slope per ad line; 0 without data.
    pub fn slopes(&self, campaign: usize) -> Vec<f64> {
        self.moments[campaign - 1]
            .iter()
            .map(|&(sy, ss)| if ss > 0.0 { sy / ss } else { 0.0 })
            .collect()
    }
}

/// Splits `units` in proportion to the positive entries of `slopes`,
/// flooring each share and giving the remainder to the largest slope.
/// `None` when no slope is positive.
pub fn proportional_split(slopes: &[f64], units: usize) -> Option<Vec<usize>> {
    let total: f64 = slopes.iter().filter(|s| **s > 0.0).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut levels: Vec<usize> = slopes
        .iter()
        .map(|&s| if s > 0.0 { ((units as f64) * s / total).floor() as usize } else { 0 })
        .collect();
    let used: usize = levels.iter().sum();
    let top = slopes
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > slopes[best] { i } else { best });
    levels[top] += units.saturating_sub(used);
    Some(levels)
}

impl Agent for HibouAgent {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_event(&mut self, _event: ClockEvent) -> Result<()> {
        Ok(())
    }

    fn recommend(&mut self, campaign: usize, _round: usize, _rng: &mut SimRng) -> Result<Allocation> {
        check_campaign(&self.space, campaign)?;
        let k = self.space.campaign(campaign).n_adlines();
        let n = self.space.grid().n_levels();
        let levels = match &self.previous[campaign - 1] {
            None => vec![n / k; k],
            Some(prev) => proportional_split(&self.slopes(campaign), n).unwrap_or_else(|| prev.clone()),
        };
        self.previous[campaign - 1] = Some(levels.clone());
        Allocation::new(campaign, levels, self.space.grid())
    }

    fn update(&mut self, campaign: usize, _round: usize, observations: &[Observation]) -> Result<()> {
        check_campaign(&self.space, campaign)?;
        for o in observations {
            let s = o.arm.level as f64;
            let m = &mut self.moments[campaign - 1][o.arm.adline - 1];
            m.0 += s * o.reward;
            m.1 += s * s;
        }
        Ok(())
    }
}

/// Floor applied to rewards before taking logs in the local models.
pub const HAN_LOG_FLOOR: f64 = 0.01;
const HAN_RIDGE: f64 = 1e-3;
const HAN_LOCAL_NOISE_SD: f64 = 1.0;
const HAN_LOCAL_PRIOR_VAR: f64 = 20.0;

/// Global linear model on features plus a local power-law model per ad line,
/// fit on global predictions at augmented budgets and the ad line's history.
pub struct Han2021Agent {
    name: String,
    space: Arc<ArmSpace>,
    schedule: RetrainSchedule,
    augment: usize,
    /// Global-model data: transformed features and rewards.
    rows: Vec<(DVector<f64>, f64)>,
    global: DVector<f64>,
    stale: bool,
    /// Per ad line: `(log spend, log reward)` of every observation.
    local: Vec<Vec<Vec<(f64, f64)>>>,
}

impl Han2021Agent {
    pub fn new(config: &AgentConfig, space: Arc<ArmSpace>) -> Result<Self> {
        if config.han_augment_count < 2 {
            return Err(Error::invalid("han2021 needs at least two augmented points"));
        }
        let local = space
            .campaigns()
            .iter()
            .map(|c| vec![Vec::new(); c.n_adlines()])
            .collect();
        Ok(Self {
            name: config.name.clone(),
            schedule: config.schedule,
            augment: config.han_augment_count,
            rows: Vec::new(),
            global: DVector::zeros(space.feature_dim()),
            stale: false,
            local,
            space,
        })
    }

    fn refit_global(&mut self) -> Result<()> {
        if !self.stale {
            return Ok(());
        }
        let d = self.space.feature_dim();
        let mut gram = DMatrix::identity(d, d) * HAN_RIDGE;
        let mut rhs = DVector::zeros(d);
        for (x, y) in &self.rows {
            gram.ger(1.0, x, x, 1.0);
            rhs.axpy(*y, x, 1.0);
        }
        self.global = linalg::cholesky_with_jitter(&gram, 0.0)?.solve(&rhs);
        self.stale = false;
        Ok(())
    }

    /// Budget shares of the augmented points: log-spaced from `1/N` to 1.
    pub fn augment_shares(&self) -> Vec<f64> {
        let n = self.space.grid().n_levels() as f64;
        let lo = (1.0 / n).ln();
        (0..self.augment)
            .map(|j| (lo * (1.0 - j as f64 / (self.augment - 1) as f64)).exp())
            .collect()
    }

    /// Local posterior over `(intercept, elasticity)` for one ad line.
    pub fn local_posterior(&self, campaign: usize, adline: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let meta = self.space.campaign(campaign);
        let x = &meta.adline_features[adline - 1];
        let mut design = Vec::new();
        for share in self.augment_shares() {
            let phi = transform_features(x, meta.budget, share, self.space.transform())?;
            let pred = DVector::from_vec(phi).dot(&self.global);
            design.push(((meta.budget * share).ln(), pred.max(HAN_LOG_FLOOR).ln()));
        }
        design.extend_from_slice(&self.local[campaign - 1][adline - 1]);
        let noise = HAN_LOCAL_NOISE_SD * HAN_LOCAL_NOISE_SD;
        let mut prec = DMatrix::identity(2, 2) / HAN_LOCAL_PRIOR_VAR;
        let mut rhs = DVector::zeros(2);
        for (ls, ly) in design {
            let u = DVector::from_vec(vec![1.0, ls]);
            prec.ger(1.0 / noise, &u, &u, 1.0);
            rhs.axpy(ly / noise, &u, 1.0);
        }
        let f = linalg::cholesky_with_jitter(&prec, 0.0)?;
        Ok((f.solve(&rhs), f.chol.inverse()))
    }
}

impl Agent for Han2021Agent {
    fn name(&self) -> &str {
        &self.name
    }

    fn on_event(&mut self, event: ClockEvent) -> Result<()> {
        match (self.schedule, event) {
            (RetrainSchedule::DailyBatch, ClockEvent::RoundStart { .. })
            | (RetrainSchedule::PerCampaign, ClockEvent::CampaignStart { .. }) => self.refit_global(),
            _ => Ok(()),
        }
    }

    fn recommend(&mut self, campaign: usize, _round: usize, rng: &mut SimRng) -> Result<Allocation> {
        check_campaign(&self.space, campaign)?;
        let meta = self.space.campaign(campaign);
        let n_levels = self.space.grid().n_levels();
        let mut values = Vec::with_capacity(meta.n_adlines() * n_levels);
        for k in 1..=meta.n_adlines() {
            let (mean, cov) = self.local_posterior(campaign, k)?;
            let beta = linalg::sample_mvn(&mean, &cov, rng)?;
            for n in 1..=n_levels {
                let spend = meta.budget * self.space.grid().share(n);
                values.push((beta[0] + beta[1] * spend.ln()).exp());
            }
        }
        allocate(&self.space, campaign, &values)
    }

    fn update(&mut self, campaign: usize, _round: usize, observations: &[Observation]) -> Result<()> {
        check_campaign(&self.space, campaign)?;
        let meta = self.space.campaign(campaign);
        for o in observations {
            let i = self.space.index(&o.arm)?;
            self.rows.push((self.space.feature(i).clone(), o.reward));
            let spend = meta.budget * self.space.grid().share(o.arm.level);
            self.local[campaign - 1][o.arm.adline - 1].push((spend.ln(), o.reward.max(HAN_LOG_FLOOR).ln()));
        }
        if !observations.is_empty() {
            self.stale = true;
        }
        if self.schedule == RetrainSchedule::EveryRound {
            self.refit_global()?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn proportional_split_examples() {
        assert_eq!(proportional_split(&[1.0, 0.0, 0.0], 10), Some(vec![10, 0, 0]));
        assert_eq!(proportional_split(&[1.0, 1.0, 1.0], 10), Some(vec![4, 3, 3]));
        assert_eq!(proportional_split(&[-1.0, 0.0], 10), None);
    }

    #[test]
    fn kind_names_round_trip() {
        for k in [
            AgentKind::Mcmab,
            AgentKind::Fd,
            AgentKind::FaInd,
            AgentKind::OracleTs,
            AgentKind::Hibou,
            AgentKind::Han2021,
        ] {
            assert_eq!(k.as_str().parse::<AgentKind>().unwrap(), k);
        }
    }
}
