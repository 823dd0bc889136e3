//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always printed.

use std::path::Path;
use std::time::{Duration, Instant};

use mcmab_bench::config::{AgentSection, EnvName, ExperimentConfig, ModelName, Seeds, Setting};
use mcmab_bench::runner::{run_all, run_to_dir, Replication};
use mcmab_bench::verify::{run_suite, Selection, SuiteReport, Suite, POSTERIOR_CASES_PER_KIND};
use mcmab_core::oracle::cases::CASE_KINDS;
use statrs::distribution::{ContinuousCDF, StudentsT};

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Checks `names` in a suite report against their own tolerances.
fn checks_pass(report: &SuiteReport, names: &[&str]) -> (bool, String) {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in names {
        match report.check(name) {
            Some(s) => {
                ok &= s.failures == 0 && s.cases > 0;
                parts.push(format!("{name}: {} cases, max err {:.2e} (tol {:.0e})", s.cases, s.max_error, s.tolerance));
            }
            None => {
                ok = false;
                parts.push(format!("{name}: missing"));
            }
        }
    }
    (ok, parts.join("; "))
}

/// One-sided paired t-test p-value for `mean(a - b) < 0`.
fn paired_less(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return if mean < 0.0 { 0.0 } else { 1.0 };
    }
    StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(mean / (var / n).sqrt())
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn agent(name: &str, kind: &str) -> AgentSection {
    AgentSection::new(name, kind)
}

fn base_config(setting: Setting, campaigns: usize, rounds: usize, seeds: u64, agents: Vec<AgentSection>) -> ExperimentConfig {
    ExperimentConfig {
        version: 1,
        setting,
        env: EnvName::Linear,
        campaigns,
        adlines: 3,
        levels: 10,
        rounds,
        d_m: 3,
        d_k: 3,
        sigma_m: 0.75,
        sigma_eps: 1.0,
        seeds: Seeds::Count(seeds),
        master_seed: 20240601,
        output_dir: None,
        agents,
    }
}

/// Per-seed cumulative regret of agent `a` up to round `t` (inclusive).
fn cumulative(reps: &[Replication], a: usize, rounds: std::ops::RangeInclusive<usize>) -> Vec<f64> {
    reps.iter()
        .map(|r| r.runs[a].1.iter().filter(|x| rounds.contains(&x.round)).map(|x| x.regret).sum())
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let report = run_suite(Suite::Mckp, Selection::Sweep { base_seed: 1 }).expect("mckp suite runs");
    let elapsed = start.elapsed();
    let (ok, detail) = checks_pass(&report, &["solve_vs_enumeration"]);
    let cases = report.check("solve_vs_enumeration").map_or(0, |s| s.cases);
    Outcome {
        id: 1,
        title: "MCKP exactness",
        pass: ok && cases >= 1000 && elapsed < Duration::from_secs(5),
        detail: format!("{detail}; {:.2}s (limit 5s)", secs(elapsed)),
    }
}

fn criterion_2_and_5() -> (Outcome, Outcome) {
    let start = Instant::now();
    let report = run_suite(Suite::Posterior, Selection::Sweep { base_seed: 2 }).expect("posterior suite runs");
    let elapsed = start.elapsed();
    let (ok2, d2) = checks_pass(&report, &["g_marginals_vs_dense", "theta_marginals_vs_dense", "gamma_vs_kernel_space"]);
    let per_kind_ok = POSTERIOR_CASES_PER_KIND >= 100 && CASE_KINDS.len() == 3;
    let (ok5, d5) = checks_pass(&report, &["batch_append_vs_rebuild", "collapse_preserves_marginals"]);
    (
        Outcome {
            id: 2,
            title: "Posterior correctness",
            pass: ok2 && per_kind_ok && elapsed < Duration::from_secs(60),
            detail: format!("{POSTERIOR_CASES_PER_KIND} cases per kernel kind; {d2}; {:.2}s (limit 60s)", secs(elapsed)),
        },
        Outcome {
            id: 5,
            title: "Batch/collapse fidelity",
            pass: ok5,
            detail: d5,
        },
    )
}

fn criterion_3() -> Outcome {
    let report = run_suite(Suite::Limits, Selection::Sweep { base_seed: 3 }).expect("limits suite runs");
    let (ok, detail) = checks_pass(
        &report,
        &["zero_random_effect_equals_fd", "huge_random_effect_gives_sample_means", "empty_history_recovers_prior"],
    );
    Outcome {
        id: 3,
        title: "Limit checks",
        pass: ok,
        detail,
    }
}

fn criterion_4() -> Outcome {
    let report = run_suite(Suite::Kernels, Selection::Sweep { base_seed: 4 }).expect("kernels suite runs");
    let (ok, detail) = checks_pass(&report, &["ntk_gradient_vs_finite_difference"]);
    let cases = report.check("ntk_gradient_vs_finite_difference").map_or(0, |s| s.cases);
    Outcome {
        id: 4,
        title: "NTK validity",
        pass: ok && cases >= 20,
        detail,
    }
}

fn criterion_6_and_8() -> (Outcome, Outcome) {
    let cfg = base_config(
        Setting::Concurrent,
        20,
        50,
        100,
        vec![
            agent("oracle", "oracle_ts"),
            agent("mcmab-lr", "mcmab"),
            agent("fd-lr", "fd"),
            agent("fa-ind", "fa_ind"),
        ],
    );
    let start = Instant::now();
    let reps = run_all(&cfg, None).expect("regret experiment runs");
    let elapsed = start.elapsed();
    let [oracle, mcmab, fd, fa] = [0, 1, 2, 3].map(|a| cumulative(&reps, a, 1..=50));
    let p_oracle = paired_less(&oracle, &mcmab);
    let p_fd = paired_less(&mcmab, &fd);
    let p_fa = paired_less(&mcmab, &fa);
    let means = [mean(&oracle), mean(&mcmab), mean(&fd), mean(&fa)];
    let ordered = means[0] < means[1] && means[1] < means[2] && means[1] < means[3];
    let c6 = Outcome {
        id: 6,
        title: "Regret ordering",
        pass: ordered && p_oracle < 0.01 && p_fd < 0.01 && p_fa < 0.01 && elapsed < Duration::from_secs(600),
        detail: format!(
            "{} seeds; cumulative regret at T=50: oracle {:.2}, MCMAB-LR {:.2}, FD-LR {:.2}, FA-ind {:.2}; \
             p(oracle<MCMAB) {:.1e}, p(MCMAB<FD) {:.1e}, p(MCMAB<FA) {:.1e}; {:.1}s (limit 600s)",
            reps.len(),
            means[0],
            means[1],
            means[2],
            means[3],
            p_oracle,
            p_fd,
            p_fa,
            secs(elapsed)
        ),
    };
    let early = mean(&cumulative(&reps, 1, 1..=10)) / 10.0;
    let late = mean(&cumulative(&reps, 1, 41..=50)) / 10.0;
    let c8 = Outcome {
        id: 8,
        title: "Sublinearity",
        pass: late < early,
        detail: format!("MCMAB-LR mean per-round regret: rounds 1-10 {early:.3}, rounds 41-50 {late:.3}"),
    };
    (c6, c8)
}

fn criterion_7() -> Outcome {
    let mut mcmab = agent("mcmab-lr", "mcmab");
    mcmab.schedule = "per_campaign".into();
    let cfg = base_config(Setting::Sequential, 10, 20, 100, vec![mcmab]);
    let reps = run_all(&cfg, None).expect("sequential experiment runs");
    let first_round = |m: usize| -> Vec<f64> {
        reps.iter()
            .map(|r| {
                r.runs[0]
                    .1
                    .iter()
                    .find(|x| x.campaign == m && x.local_round == 1)
                    .expect("campaign ran")
                    .regret
            })
            .collect()
    };
    let (first, last) = (first_round(1), first_round(10));
    let p = paired_less(&last, &first);
    Outcome {
        id: 7,
        title: "Sequential warm start",
        pass: mean(&last) < mean(&first) && p < 0.01,
        detail: format!(
            "{} seeds; first-round regret campaign 1 {:.3}, campaign 10 {:.3}; one-sided p {:.1e}",
            reps.len(),
            mean(&first),
            mean(&last),
            p
        ),
    }
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

fn criterion_9() -> Outcome {
    let mut agents = vec![
        agent("oracle", "oracle_ts"),
        agent("mcmab-lr", "mcmab"),
        agent("fd-lr", "fd"),
        agent("fa-ind", "fa_ind"),
        agent("hibou", "hibou"),
        agent("han2021", "han2021"),
    ];
    let mut gp = agent("mcmab-gp", "mcmab");
    gp.model = ModelName::Gp;
    let mut ntk = agent("mcmab-nn", "mcmab");
    ntk.model = ModelName::Ntk;
    ntk.schedule = "daily_batch".into();
    agents.extend([gp, ntk]);
    let mut checked = 0;
    let mut identical = true;
    for (setting, env) in [(Setting::Concurrent, EnvName::Linear), (Setting::Sequential, EnvName::Nonlinear)] {
        let mut cfg = base_config(setting, 4, 6, 3, agents.clone());
        cfg.env = env;
        cfg.levels = 5;
        let tmp = tempfile::tempdir().unwrap();
        let a = tmp.path().join("a");
        let b = tmp.path().join("b");
        run_to_dir(&cfg, &a, Some(1)).expect("first run");
        run_to_dir(&cfg, &b, Some(4)).expect("second run");
        let (x, y) = (dir_bytes(&a), dir_bytes(&b));
        identical &= x == y;
        checked += x.iter().filter(|(n, _)| n.starts_with("trace_")).count();
    }
    Outcome {
        id: 9,
        title: "Determinism",
        pass: identical && checked > 0,
        detail: format!("{checked} trace files over both settings and 8 agents, byte-identical across two runs (1 vs 4 threads): {identical}"),
    }
}

fn main() {
    let total = Instant::now();
    let mut outcomes = vec![criterion_1()];
    let (c2, c5) = criterion_2_and_5();
    outcomes.extend([c2, criterion_3(), criterion_4(), c5]);
    let (c6, c8) = criterion_6_and_8();
    outcomes.extend([c6, criterion_7(), c8, criterion_9()]);
    outcomes.sort_by_key(|o| o.id);

    println!();
    println!("acceptance criteria");
    for o in &outcomes {
        println!("criterion {} {:<26} {}  {}", o.id, o.title, if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("{} passed, {} failed in {:.1}s", outcomes.len() - failed, failed, secs(total.elapsed()));
    if failed > 0 {
        std::process::exit(1);
    }
}
