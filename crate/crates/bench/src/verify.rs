//! Verification suites: production code against slow reference oracles.
//!
//! Every case draws from its own seed, so a failing case can be replayed
//! alone with `mcmab verify <suite> --case <seed>`. Violations carry a JSON
//! description of the offending instance.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use mcmab_core::agents::{build_agent, AgentConfig, AgentKind};
use mcmab_core::domain::{ArmSpace, ArmStats, History};
use mcmab_core::kernels::{gram, init_mlp, ntk_features};
use mcmab_core::mckp::{solve, solve_bruteforce, ValueTable};
use mcmab_core::oracle::cases::{kernel_of, normal, random_history, random_model, small_space, CaseKind, CASE_KINDS};
use mcmab_core::oracle::{self, central_gradient};
use mcmab_core::posterior::{
    posterior_g, posterior_g_gamma_space, posterior_theta, theta_marginals, BackendChoice, GPosteriorState, HierModel,
};
use mcmab_core::rng::{replication_seed, stream_rng, SimRng, Stream};
use mcmab_core::simenv::{run_concurrent, run_sequential, EnvKind, EnvParams, EnvTruth};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;
use serde_json::json;

use crate::{BenchError, Result};

/// Agreement tolerance for posterior identities.
pub const POSTERIOR_TOL: f64 = 1e-8;
/// Analytic vs central-difference network gradients.
pub const GRADIENT_TOL: f64 = 1e-5;
/// Relative gap between the theta mean and the sample mean when the random
/// effect variance is huge.
pub const SAMPLE_MEAN_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Suite {
    Mckp,
    Posterior,
    Kernels,
    Limits,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Mckp, Suite::Posterior, Suite::Kernels, Suite::Limits];

    pub fn as_str(&self) -> &'static str {
        match self {
            Suite::Mckp => "mckp",
            Suite::Posterior => "posterior",
            Suite::Kernels => "kernels",
            Suite::Limits => "limits",
        }
    }
}

impl FromStr for Suite {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| BenchError::Usage(format!("unknown suite `{s}` (expected mckp, posterior, kernels or limits)")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub suite: &'static str,
    pub check: &'static str,
    pub case_seed: u64,
    pub detail: String,
    pub instance: serde_json::Value,
}

/// Cases run, worst error seen and tolerance for one named check.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckStat {
    pub cases: usize,
    pub max_error: f64,
    pub tolerance: f64,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: Suite,
    pub checks: BTreeMap<&'static str, CheckStat>,
    pub violations: Vec<Violation>,
    pub elapsed: Duration,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn check(&self, name: &str) -> Option<&CheckStat> {
        self.checks.get(name)
    }

    pub fn summary(&self) -> String {
        let mut out = format!(
            "{}: {} in {:.2}s\n",
            self.suite.as_str(),
            if self.passed() { "ok" } else { "FAILED" },
            self.elapsed.as_secs_f64()
        );
        for (name, s) in &self.checks {
            out.push_str(&format!(
                "  {name:<34} cases {:>5}  max err {:.3e}  tol {:.0e}  failures {}\n",
                s.cases, s.max_error, s.tolerance, s.failures
            ));
        }
        out
    }
}

/// Which cases to run.
#[derive(Debug, Clone, Copy)]
pub enum Selection {
    /// The standard sweep derived from a base seed.
    Sweep { base_seed: u64 },
    /// One case, by its seed.
    Case(u64),
}

struct Recorder {
    suite: Suite,
    checks: BTreeMap<&'static str, CheckStat>,
    violations: Vec<Violation>,
}

impl Recorder {
    fn new(suite: Suite) -> Self {
        Self {
            suite,
            checks: BTreeMap::new(),
            violations: Vec::new(),
        }
    }

    /// Records one case of `check`; `error > tol` is a violation.
    fn record(
        &mut self,
        check: &'static str,
        tol: f64,
        case_seed: u64,
        error: f64,
        detail: impl FnOnce() -> String,
        instance: impl FnOnce() -> serde_json::Value,
    ) {
        let stat = self.checks.entry(check).or_insert_with(|| CheckStat {
            tolerance: tol,
            ..Default::default()
        });
        stat.cases += 1;
        if error.is_nan() || error > stat.max_error {
            stat.max_error = if error.is_nan() { f64::INFINITY } else { error };
        }
        if !(error <= tol) {
            stat.failures += 1;
            self.violations.push(Violation {
                suite: self.suite.as_str(),
                check,
                case_seed,
                detail: detail(),
                instance: instance(),
            });
        }
    }

    fn finish(self, start: Instant) -> SuiteReport {
        SuiteReport {
            suite: self.suite,
            checks: self.checks,
            violations: self.violations,
            elapsed: start.elapsed(),
        }
    }
}

/// `|a - b| / max(1, |b|)`.
fn mixed_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

fn max_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| mixed_err(*x, *y)).fold(0.0, f64::max)
}

fn max_err_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    max_err(a.as_slice(), b.as_slice())
}

fn case_rng(seed: u64) -> SimRng {
    stream_rng(seed, Stream::Verify)
}

fn case_seeds(sel: Selection, n: usize) -> Vec<u64> {
    match sel {
        Selection::Sweep { base_seed } => (0..n as u64).map(|i| replication_seed(base_seed, i)).collect(),
        Selection::Case(s) => vec![s],
    }
}

pub fn run_suite(suite: Suite, sel: Selection) -> Result<SuiteReport> {
    match suite {
        Suite::Mckp => mckp_suite(sel),
        Suite::Posterior => posterior_suite(sel),
        Suite::Kernels => kernels_suite(sel),
        Suite::Limits => limits_suite(sel),
    }
}

fn random_table(rng: &mut SimRng) -> ValueTable {
    let k = rng.random_range(1..=4);
    let n = rng.random_range(1..=8);
    // Integer values make ties common.
    let integer = rng.random_bool(0.3);
    let rows = (0..k)
        .map(|_| {
            std::iter::once(0.0)
                .chain((0..n).map(|_| {
                    if integer {
                        rng.random_range(-3..6) as f64
                    } else {
                        rng.random_range(-2.0..5.0)
                    }
                }))
                .collect()
        })
        .collect();
    ValueTable::new(rows).expect("valid table")
}

/// Number of random instances in the MCKP sweep.
pub const MCKP_CASES: usize = 1000;

fn mckp_suite(sel: Selection) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rec = Recorder::new(Suite::Mckp);
    for seed in case_seeds(sel, MCKP_CASES) {
        let table = random_table(&mut case_rng(seed));
        let fast = solve(&table);
        let slow = solve_bruteforce(&table)?;
        let mismatch = if fast == slow { 0.0 } else { 1.0 };
        rec.record(
            "solve_vs_enumeration",
            0.0,
            seed,
            mismatch,
            || format!("dp {:?} ({}) vs enumeration {:?} ({})", fast.levels, fast.value, slow.levels, slow.value),
            || json!({ "values": table.rows(), "capacity": table.capacity() }),
        );
    }
    Ok(rec.finish(start))
}

fn describe_case(space: &ArmSpace, model: &HierModel, history: &History, kind: CaseKind) -> serde_json::Value {
    let campaigns: Vec<_> = space
        .campaigns()
        .iter()
        .map(|c| json!({ "id": c.id, "budget": c.budget, "adline_features": c.adline_features }))
        .collect();
    let rows: Vec<_> = history
        .observations()
        .iter()
        .map(|o| json!([o.arm.campaign, o.arm.adline, o.arm.level, o.round, o.reward]))
        .collect();
    json!({
        "kernel": kind.as_str(),
        "levels": space.grid().n_levels(),
        "noise_sd": model.noise_var().sqrt(),
        "random_effect": format!("{:?}", model.random_effect),
        "campaigns": campaigns,
        "history_mktny": rows,
    })
}

/// Posterior cases per kernel kind in the sweep.
pub const POSTERIOR_CASES_PER_KIND: usize = 100;

fn posterior_suite(sel: Selection) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rec = Recorder::new(Suite::Posterior);
    for seed in posterior_seeds(sel) {
        posterior_case(&mut rec, seed, posterior_kind(seed))?;
    }
    Ok(rec.finish(start))
}

/// The kernel kind is a function of the case seed so `--case` replays it.
fn posterior_kind(seed: u64) -> CaseKind {
    CASE_KINDS[(seed % CASE_KINDS.len() as u64) as usize]
}

/// Sweep seeds until every kind has its quota.
fn posterior_seeds(sel: Selection) -> Vec<u64> {
    let Selection::Sweep { base_seed } = sel else {
        return case_seeds(sel, 1);
    };
    let mut counts = [0usize; CASE_KINDS.len()];
    let mut out = Vec::new();
    let mut i = 0;
    while counts.iter().any(|&c| c < POSTERIOR_CASES_PER_KIND) {
        let seed = replication_seed(base_seed, i);
        i += 1;
        let k = (seed % CASE_KINDS.len() as u64) as usize;
        if counts[k] < POSTERIOR_CASES_PER_KIND {
            counts[k] += 1;
            out.push(seed);
        }
    }
    out
}

fn posterior_case(rec: &mut Recorder, seed: u64, kind: CaseKind) -> Result<()> {
    let mut rng = case_rng(seed);
    let space = small_space(&mut rng);
    let model = random_model(kind, &space, &mut rng);
    let history = random_history(&space, 8, &mut rng);
    let stats = history.stats(&space)?;
    let all: Vec<usize> = (0..space.n_arms()).collect();
    let instance = || describe_case(&space, &model, &history, kind);
    let dense = oracle::dense_conditioning(&model, &space, &history, &all)?;
    let shared = Arc::new(model.clone());

    let mut states = vec![GPosteriorState::from_history(shared.clone(), space.clone(), &history, BackendChoice::Auto)?];
    if model.kernel.parameter_prior().is_some() {
        states.push(GPosteriorState::from_history(shared.clone(), space.clone(), &history, BackendChoice::Kernel)?);
    }
    for st in &states {
        let (gm, gv) = st.marginals(&all)?;
        let err = max_err(&gm, &dense.g_mean).max(max_err(&gv, &dense.g_var));
        rec.record("g_marginals_vs_dense", POSTERIOR_TOL, seed, err, || format!("{kind:?} g marginals off by {err:.3e}"), instance);
        let mut tm_all = vec![0.0; all.len()];
        let mut tv_all = vec![0.0; all.len()];
        for m in 1..=space.n_campaigns() {
            let (tm, tv) = theta_marginals(st, &stats, m)?;
            for (local, i) in space.campaign_range(m).enumerate() {
                tm_all[i] = tm[local];
                tv_all[i] = tv[local];
            }
        }
        let err = max_err(&tm_all, &dense.theta_mean).max(max_err(&tv_all, &dense.theta_var));
        rec.record("theta_marginals_vs_dense", POSTERIOR_TOL, seed, err, || format!("{kind:?} theta marginals off by {err:.3e}"), instance);
    }

    if let [gamma_state, kernel_state] = states.as_slice() {
        let (m1, c1) = gamma_state.mean_cov(&all)?;
        let (m2, c2) = kernel_state.mean_cov(&all)?;
        let (im, ic) = oracle::gamma_information_form(&model, &space, &history)?;
        let engine = posterior_g_gamma_space(&model, &space, &history)?;
        let err = max_err(m1.as_slice(), m2.as_slice())
            .max(max_err_mat(&c1, &c2))
            .max(max_err(engine.mean.as_slice(), im.as_slice()))
            .max(max_err_mat(&engine.cov, &ic));
        rec.record("gamma_vs_kernel_space", POSTERIOR_TOL, seed, err, || format!("{kind:?} parameter and kernel paths differ by {err:.3e}"), instance);
    }

    let mut incremental = GPosteriorState::prior(shared.clone(), space.clone())?;
    for o in history.observations() {
        incremental = incremental.batch_append(std::slice::from_ref(o))?;
    }
    let rebuilt = &states[0];
    let (m1, c1) = incremental.mean_cov(&all)?;
    let (m2, c2) = rebuilt.mean_cov(&all)?;
    let err = max_err(m1.as_slice(), m2.as_slice()).max(max_err_mat(&c1, &c2));
    rec.record("batch_append_vs_rebuild", POSTERIOR_TOL, seed, err, || format!("{kind:?} incremental posterior off by {err:.3e}"), instance);

    for st in &states {
        let collapsed = st.memory_collapse()?;
        let (m1, v1) = st.marginals(&all)?;
        let (m2, v2) = collapsed.marginals(&all)?;
        let err = max_err(&m2, &m1).max(max_err(&v2, &v1));
        rec.record("collapse_preserves_marginals", POSTERIOR_TOL, seed, err, || format!("{kind:?} collapse moved marginals by {err:.3e}"), instance);
    }
    Ok(())
}

/// Random (network, input) pairs in the gradient check.
pub const GRADIENT_CASES: usize = 20;

fn kernels_suite(sel: Selection) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rec = Recorder::new(Suite::Kernels);
    for seed in case_seeds(sel, GRADIENT_CASES) {
        let mut rng = case_rng(seed);
        let depth = rng.random_range(2..=4);
        let width = rng.random_range(1..=8);
        let dim = rng.random_range(1..=5);
        let mlp = init_mlp(depth, width, dim, &mut rng)?;
        let x: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        let analytic = ntk_features(&mlp, &x)?;
        let numeric = central_gradient(
            |w| {
                mlp.with_weights(w.to_vec())
                    .and_then(|m| m.forward(&x))
                    .unwrap_or(f64::NAN)
            },
            mlp.weights(),
            1e-5,
        );
        let err = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, |m, e| if e.is_nan() { f64::INFINITY } else { m.max(e) });
        rec.record(
            "ntk_gradient_vs_finite_difference",
            GRADIENT_TOL,
            seed,
            err,
            || format!("gradient off by {err:.3e}"),
            || json!({ "depth": depth, "width": width, "weights": mlp.weights(), "x": x }),
        );

        for kind in CASE_KINDS {
            let spec = kernel_of(kind, dim, &mut rng);
            let points: Vec<DVector<f64>> = (0..6).map(|_| DVector::from_fn(dim, |_, _| normal(&mut rng))).collect();
            let k = gram(&spec, &points)?;
            let asym = max_err_mat(&k, &k.transpose());
            let min_eig = k.clone().symmetric_eigenvalues().min();
            let scale = k.diagonal().max().max(1.0);
            let err = asym.max((-min_eig / scale).max(0.0));
            rec.record(
                "gram_symmetric_psd",
                1e-10,
                seed,
                err,
                || format!("{kind:?} gram asymmetry {asym:.3e}, min eigenvalue {min_eig:.3e}"),
                || json!({ "kernel": kind.as_str(), "points": points.iter().map(|p| p.as_slice().to_vec()).collect::<Vec<_>>() }),
            );
        }
    }
    Ok(rec.finish(start))
}

/// Environment cases in the trace-identity limit check.
pub const LIMIT_TRACE_CASES: usize = 10;
/// Random histories in the huge-random-effect check.
pub const LIMIT_SAMPLE_MEAN_CASES: usize = 40;

fn limits_suite(sel: Selection) -> Result<SuiteReport> {
    let start = Instant::now();
    let mut rec = Recorder::new(Suite::Limits);

    for seed in case_seeds(sel, LIMIT_TRACE_CASES) {
        let mut rng = case_rng(seed);
        let params = EnvParams {
            kind: if rng.random_bool(0.5) { EnvKind::Linear } else { EnvKind::Nonlinear },
            campaigns: rng.random_range(1..=4),
            adlines: rng.random_range(1..=3),
            levels: rng.random_range(2..=6),
            rounds: 8,
            ..Default::default()
        };
        let env = Arc::new(EnvTruth::for_seed(&params, seed)?);
        let mut mcmab = AgentConfig::new("agent", AgentKind::Mcmab);
        mcmab.sigma_m = 0.0;
        mcmab.transform = params.kind.transform();
        let mut fd = AgentConfig::new("agent", AgentKind::Fd);
        fd.transform = params.kind.transform();
        for sequential in [false, true] {
            let run = |cfg: &AgentConfig| -> Result<_> {
                let mut agent = build_agent(cfg, &env, &mut stream_rng(seed, Stream::Init))?;
                Ok(if sequential {
                    run_sequential(&env, agent.as_mut(), params.rounds, seed)?
                } else {
                    run_concurrent(&env, agent.as_mut(), params.rounds, seed)?
                })
            };
            let (a, b) = (run(&mcmab)?, run(&fd)?);
            let differ = a.iter().zip(&b).filter(|(x, y)| x != y).count() + a.len().abs_diff(b.len());
            rec.record(
                "zero_random_effect_equals_fd",
                0.0,
                seed,
                differ as f64,
                || format!("{differ} differing records (sequential: {sequential})"),
                || json!({ "env_seed": seed, "env": params.kind.as_str(), "campaigns": params.campaigns, "adlines": params.adlines, "levels": params.levels, "rounds": params.rounds, "sequential": sequential }),
            );
        }
    }

    for seed in case_seeds(sel, LIMIT_SAMPLE_MEAN_CASES) {
        let mut rng = case_rng(seed);
        let space = small_space(&mut rng);
        let kind = CASE_KINDS[rng.random_range(0..CASE_KINDS.len())];
        let kernel = kernel_of(kind, space.feature_dim(), &mut rng);
        let model = HierModel::isotropic(kernel, 1e6, 1.0)?;
        let history = random_history(&space, 8, &mut rng);
        let stats = history.stats(&space)?;
        let means = oracle::running_means(&space, &history)?;
        let state = posterior_g(&model, &space, &history)?;
        let mut err: f64 = 0.0;
        for m in 1..=space.n_campaigns() {
            let arms: Vec<usize> = space.campaign_range(m).collect();
            let g = state.sample_g(&arms, &mut rng)?;
            let post = posterior_theta(&model, &space, &stats, m, &g)?;
            for (local, &i) in arms.iter().enumerate() {
                if let Some(mean) = means[i] {
                    let gap = (post.mean[local] - mean).abs();
                    let rel = if gap < 1e-12 { 0.0 } else { gap / mean.abs() };
                    err = err.max(rel);
                }
            }
        }
        rec.record(
            "huge_random_effect_gives_sample_means",
            SAMPLE_MEAN_TOL,
            seed,
            err,
            || format!("{kind:?} theta mean {err:.3e} relative from the sample mean"),
            || describe_case(&space, &model, &history, kind),
        );

        let empty = History::new();
        let all: Vec<usize> = (0..space.n_arms()).collect();
        let mut exact = true;
        let mut cov_err: f64 = 0.0;
        for choice in [BackendChoice::Auto, BackendChoice::Kernel] {
            if choice == BackendChoice::Kernel && model.kernel.parameter_prior().is_none() {
                continue;
            }
            let st = GPosteriorState::from_history(Arc::new(model.clone()), space.clone(), &empty, choice)?;
            let (mean, cov) = st.mean_cov(&all)?;
            for &i in &all {
                let xi = space.feature(i).as_slice();
                exact &= mean[i] == model.kernel.prior_mean(xi)?;
                for &j in &all {
                    let k = model.kernel.eval(xi, space.feature(j).as_slice())?;
                    cov_err = cov_err.max(mixed_err(cov[(i, j)], k));
                }
            }
        }
        if let Some((mu, sigma)) = model.kernel.parameter_prior() {
            let g = posterior_g_gamma_space(&model, &space, &empty)?;
            exact &= g.mean == mu && g.cov == sigma;
        }
        let g = DVector::from_fn(space.campaign_range(1).len(), |_, _| normal(&mut rng));
        let post = posterior_theta(&model, &space, &ArmStats::new(space.n_arms()), 1, &g)?;
        exact &= post.mean == g && post.cov.to_dense() == model.random_effect_block(&space, 1);
        let err = if exact { cov_err } else { f64::INFINITY };
        rec.record(
            "empty_history_recovers_prior",
            1e-12,
            seed,
            err,
            || format!("{kind:?} prior not recovered (exact means: {exact}, cov err {cov_err:.3e})"),
            || describe_case(&space, &model, &empty, kind),
        );
    }
    Ok(rec.finish(start))
}
