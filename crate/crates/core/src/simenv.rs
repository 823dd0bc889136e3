//! Synthetic environments, experiment drivers and Bayes-regret scoring.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::agents::{Agent, ClockEvent};
use crate::domain::{
    make_grid, ActionGrid, Allocation, ArmSpace, BaseArm, CampaignMeta, FeatureTransform, Observation,
};
use crate::mckp::{self, Solution, ValueTable};
use crate::rng::{stream_rng, SimRng, Stream};
use crate::{Error, Result};

/// Floor on the nonlinear environment's log argument.
pub const LOG_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    Linear,
    Nonlinear,
}

impl EnvKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EnvKind::Linear => "linear",
            EnvKind::Nonlinear => "nonlinear",
        }
    }

    /// Feature map the environment's `g` is linear (or log-quadratic) in.
    pub fn transform(&self) -> FeatureTransform {
        match self {
            EnvKind::Linear => FeatureTransform::LinearWithIntercept,
            EnvKind::Nonlinear => FeatureTransform::LinearNoIntercept,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(EnvKind::Linear),
            "nonlinear" => Ok(EnvKind::Nonlinear),
            other => Err(Error::Parse(format!("unknown environment `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvParams {
    pub kind: EnvKind,
    pub campaigns: usize,
    pub adlines: usize,
    pub levels: usize,
    pub rounds: usize,
    pub d_m: usize,
    pub d_k: usize,
    pub sigma_m: f64,
    pub sigma_eps: f64,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            kind: EnvKind::Linear,
            campaigns: 50,
            adlines: 5,
            levels: 50,
            rounds: 50,
            d_m: 3,
            d_k: 3,
            sigma_m: 0.75,
            sigma_eps: 1.0,
        }
    }
}

impl EnvParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("campaigns", self.campaigns),
            ("adlines", self.adlines),
            ("levels", self.levels),
            ("rounds", self.rounds),
            ("d_m", self.d_m),
            ("d_k", self.d_k),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.sigma_m >= 0.0 && self.sigma_m.is_finite()) {
            return Err(Error::invalid("sigma_m must be non-negative"));
        }
        if !(self.sigma_eps >= 0.0 && self.sigma_eps.is_finite()) {
            return Err(Error::invalid("sigma_eps must be non-negative"));
        }
        Ok(())
    }
}

/// `phi' gamma`.
pub fn linear_g(phi: &[f64], gamma: &[f64]) -> f64 {
    phi.iter().zip(gamma).map(|(p, g)| p * g).sum()
}

/// `log |(phi * phi)' gamma|`, with the argument floored at [`LOG_FLOOR`].
pub fn nonlinear_g(phi: &[f64], gamma: &[f64]) -> f64 {
    let q: f64 = phi.iter().zip(gamma).map(|(p, g)| p * p * g).sum();
    q.abs().max(LOG_FLOOR).ln()
}

/// Ground truth for one replication.
#[derive(Debug, Clone)]
pub struct EnvTruth {
    pub kind: EnvKind,
    pub campaigns: Vec<CampaignMeta>,
    pub grid: ActionGrid,
    pub gamma_star: Vec<f64>,
    /// Per non-zero arm, flat order.
    pub delta: Vec<f64>,
    /// Expected reward per non-zero arm, clipped at 0.
    pub theta: Vec<f64>,
    /// `g*` per non-zero arm, before the random effect and clipping.
    pub g_star: Vec<f64>,
    pub noise_sd: f64,
    pub sigma_m: f64,
    pub rounds: usize,
    space: Arc<ArmSpace>,
}

impl EnvTruth {
    pub fn generate<R: Rng + ?Sized>(params: &EnvParams, rng: &mut R) -> Result<Self> {
        params.validate()?;
        let grid = make_grid(params.levels)?;
        let transform = params.kind.transform();
        let dim = transform.output_dim(params.d_m + params.d_k);
        let gamma_star: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let budget = Uniform::new(20.0, 30.0).map_err(|e| Error::invalid(e.to_string()))?;
        let mut campaigns = Vec::with_capacity(params.campaigns);
        for m in 1..=params.campaigns {
            let b = budget.sample(rng);
            let z_m: Vec<f64> = (0..params.d_m).map(|_| rng.sample(StandardNormal)).collect();
            let features = (0..params.adlines)
                .map(|_| {
                    let mut x = z_m.clone();
                    x.extend((0..params.d_k).map(|_| rng.sample::<f64, _>(StandardNormal)));
                    x
                })
                .collect();
            campaigns.push(CampaignMeta::new(m, b, params.rounds, features)?);
        }
        let space = Arc::new(ArmSpace::new(campaigns.clone(), grid, transform)?);
        let delta: Vec<f64> = (0..space.n_arms())
            .map(|_| params.sigma_m * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let g_star: Vec<f64> = space
            .features()
            .iter()
            .map(|phi| match params.kind {
                EnvKind::Linear => linear_g(phi.as_slice(), &gamma_star),
                EnvKind::Nonlinear => nonlinear_g(phi.as_slice(), &gamma_star),
            })
            .collect();
        let theta = g_star.iter().zip(&delta).map(|(g, d)| (g + d).max(0.0)).collect();
        Ok(Self {
            kind: params.kind,
            campaigns,
            grid,
            gamma_star,
            delta,
            theta,
            g_star,
            noise_sd: params.sigma_eps,
            sigma_m: params.sigma_m,
            rounds: params.rounds,
            space,
        })
    }

    pub fn gen_linear_env<R: Rng + ?Sized>(params: &EnvParams, rng: &mut R) -> Result<Self> {
        Self::generate(&EnvParams { kind: EnvKind::Linear, ..params.clone() }, rng)
    }

    pub fn gen_nonlinear_env<R: Rng + ?Sized>(params: &EnvParams, rng: &mut R) -> Result<Self> {
        Self::generate(&EnvParams { kind: EnvKind::Nonlinear, ..params.clone() }, rng)
    }

    /// Environment of replication `seed`, drawn from its own stream.
    pub fn for_seed(params: &EnvParams, seed: u64) -> Result<Self> {
        Self::generate(params, &mut stream_rng(seed, Stream::Env))
    }

    /// Arm space under the environment's own feature map.
    pub fn space(&self) -> &Arc<ArmSpace> {
        &self.space
    }

    pub fn n_campaigns(&self) -> usize {
        self.campaigns.len()
    }

    /// Dimension of `(B_m, z_m, z_k)`.
    pub fn raw_feature_dim(&self) -> usize {
        1 + self.campaigns[0].feature_dim()
    }

    /// True expected reward; the zero level is 0.
    pub fn theta_at(&self, m: usize, k: usize, n: usize) -> Result<f64> {
        if n == 0 {
            return Ok(0.0);
        }
        Ok(self.theta[self.space.index(&BaseArm { campaign: m, adline: k, level: n })?])
    }

    pub fn value_table(&self, m: usize) -> Result<ValueTable> {
        let range = self.space.campaign_range(m);
        ValueTable::from_level_values(&self.theta[range], self.campaigns[m - 1].n_adlines())
    }

    pub fn optimum(&self, m: usize) -> Result<Solution> {
        Ok(mckp::solve(&self.value_table(m)?))
    }

    /// Draws one reward per ad line; zero-budget ad lines consume their draw
    /// but emit nothing.
    pub fn observe<R: Rng + ?Sized>(&self, alloc: &Allocation, round: usize, rng: &mut R) -> Result<Vec<Observation>> {
        let m = alloc.campaign;
        let mut out = Vec::new();
        for (k0, &n) in alloc.levels().iter().enumerate() {
            let eps: f64 = rng.sample(StandardNormal);
            if n == 0 {
                continue;
            }
            let theta = self.theta_at(m, k0 + 1, n)?;
            out.push(Observation {
                arm: BaseArm { campaign: m, adline: k0 + 1, level: n },
                round,
                reward: (theta + self.noise_sd * eps).max(0.0),
            });
        }
        Ok(out)
    }
}

/// One campaign-round of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub campaign: usize,
    /// Global round.
    pub round: usize,
    /// Round within the campaign.
    pub local_round: usize,
    pub levels: Vec<usize>,
    /// Realized reward per ad line; 0 at the zero level.
    pub rewards: Vec<f64>,
    pub opt_value: f64,
    pub chosen_value: f64,
    pub regret: f64,
}

fn step(
    env: &EnvTruth,
    agent: &mut dyn Agent,
    m: usize,
    round: usize,
    local_round: usize,
    agent_rng: &mut SimRng,
    noise_rng: &mut SimRng,
    optima: &[Solution],
) -> Result<RoundRecord> {
    let alloc = agent.recommend(m, round, agent_rng)?;
    if alloc.campaign != m || alloc.levels().len() != env.campaigns[m - 1].n_adlines() {
        return Err(Error::invalid(format!("agent returned an allocation for the wrong campaign shape at m={m}")));
    }
    Allocation::new(m, alloc.levels().to_vec(), &env.grid)?;
    let obs = env.observe(&alloc, round, noise_rng)?;
    agent.update(m, round, &obs)?;
    let mut rewards = vec![0.0; alloc.levels().len()];
    for o in &obs {
        rewards[o.arm.adline - 1] = o.reward;
    }
    let table = env.value_table(m)?;
    let chosen_value = mckp::allocation_value(&table, alloc.levels());
    let opt_value = optima[m - 1].value;
    Ok(RoundRecord {
        campaign: m,
        round,
        local_round,
        levels: alloc.levels().to_vec(),
        rewards,
        opt_value,
        chosen_value,
        regret: opt_value - chosen_value,
    })
}

fn wrap(seed: u64, round: usize, campaign: usize) -> impl FnOnce(Error) -> Error {
    move |e| Error::Replication {
        seed,
        round,
        campaign,
        source: Box::new(e),
    }
}

/// All campaigns run side by side for `rounds` rounds.
pub fn run_concurrent(env: &EnvTruth, agent: &mut dyn Agent, rounds: usize, seed: u64) -> Result<Vec<RoundRecord>> {
    let mut agent_rng = stream_rng(seed, Stream::Agent);
    let mut noise_rng = stream_rng(seed, Stream::Noise);
    let optima = (1..=env.n_campaigns()).map(|m| env.optimum(m)).collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(rounds * env.n_campaigns());
    if rounds == 0 {
        return Ok(records);
    }
    for m in 1..=env.n_campaigns() {
        agent
            .on_event(ClockEvent::CampaignStart { campaign: m })
            .map_err(wrap(seed, 0, m))?;
    }
    for t in 1..=rounds {
        agent.on_event(ClockEvent::RoundStart { round: t }).map_err(wrap(seed, t, 0))?;
        for m in 1..=env.n_campaigns() {
            let rec = step(env, agent, m, t, t, &mut agent_rng, &mut noise_rng, &optima).map_err(wrap(seed, t, m))?;
            records.push(rec);
        }
    }
    Ok(records)
}

/// Campaign `m + 1` starts when campaign `m` ends; rounds are numbered
/// globally.
pub fn run_sequential(env: &EnvTruth, agent: &mut dyn Agent, rounds: usize, seed: u64) -> Result<Vec<RoundRecord>> {
    let mut agent_rng = stream_rng(seed, Stream::Agent);
    let mut noise_rng = stream_rng(seed, Stream::Noise);
    let optima = (1..=env.n_campaigns()).map(|m| env.optimum(m)).collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(rounds * env.n_campaigns());
    if rounds == 0 {
        return Ok(records);
    }
    for m in 1..=env.n_campaigns() {
        let first = (m - 1) * rounds + 1;
        agent
            .on_event(ClockEvent::CampaignStart { campaign: m })
            .map_err(wrap(seed, first, m))?;
        for local in 1..=rounds {
            let t = first + local - 1;
            agent.on_event(ClockEvent::RoundStart { round: t }).map_err(wrap(seed, t, m))?;
            let rec = step(env, agent, m, t, local, &mut agent_rng, &mut noise_rng, &optima).map_err(wrap(seed, t, m))?;
            records.push(rec);
        }
    }
    Ok(records)
}

/// Mean regret per round across replications, with 95% normal intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretPoint {
    pub round: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub cumulative_mean: f64,
    pub cumulative_ci_low: f64,
    pub cumulative_ci_high: f64,
}

/// Sample mean and 95% normal half-width.
pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// Per-replication regret summed over campaigns, indexed by round - 1.
pub fn regret_by_round(records: &[RoundRecord]) -> Vec<f64> {
    let last = records.iter().map(|r| r.round).max().unwrap_or(0);
    let mut out = vec![0.0; last];
    for r in records {
        out[r.round - 1] += r.regret;
    }
    out
}

pub fn bayes_regret(runs: &[Vec<RoundRecord>]) -> Vec<RegretPoint> {
    let per_run: Vec<Vec<f64>> = runs.iter().map(|r| regret_by_round(r)).collect();
    let rounds = per_run.iter().map(Vec::len).max().unwrap_or(0);
    let mut cumulative: Vec<f64> = vec![0.0; per_run.len()];
    let mut out = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let inst: Vec<f64> = per_run.iter().map(|r| r.get(t).copied().unwrap_or(0.0)).collect();
        for (c, v) in cumulative.iter_mut().zip(&inst) {
            *c += v;
        }
        let (mean, half) = mean_ci(&inst);
        let (cmean, chalf) = mean_ci(&cumulative);
        out.push(RegretPoint {
            round: t + 1,
            mean,
            ci_low: mean - half,
            ci_high: mean + half,
            cumulative_mean: cmean,
            cumulative_ci_low: cmean - chalf,
            cumulative_ci_high: cmean + chalf,
        });
    }
    out
}
