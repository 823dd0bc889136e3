mod common;

use std::sync::Arc;

use common::*;
use mcmab_core::agents::*;
use mcmab_core::domain::{make_grid, ArmSpace, CampaignMeta, FeatureTransform, Observation};
use mcmab_core::rng::{stream_rng, Stream};
use mcmab_core::simenv::{run_concurrent, run_sequential, EnvKind, EnvParams, EnvTruth, RoundRecord};
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn small_env(seed: u64) -> Arc<EnvTruth> {
    let p = EnvParams { campaigns: 4, adlines: 3, levels: 6, rounds: 8, ..Default::default() };
    Arc::new(EnvTruth::for_seed(&p, seed).unwrap())
}

fn trace(cfg: &AgentConfig, env: &Arc<EnvTruth>, seed: u64, rounds: usize) -> Vec<RoundRecord> {
    let mut agent = build_agent(cfg, env, &mut stream_rng(seed, Stream::Init)).unwrap();
    run_concurrent(env, agent.as_mut(), rounds, seed).unwrap()
}

#[test]
fn fa_ind_posterior_is_conjugate() {
    let env = small_env(1);
    let space = Arc::new(ArmSpace::new(env.campaigns.clone(), env.grid.clone(), FeatureTransform::LinearWithIntercept).unwrap());
    let mut agent = FaIndAgent::new("fa", space, 20.0, 1.5).unwrap();
    for t in 1..=4 {
        agent.update(1, t, &[obs(1, 2, 3, t, 2.0)]).unwrap();
    }
    let i = 5 + 3;
    let (mean, var) = agent.posterior(i);
    let expect = 1.0 / (1.0 / 20.0 + 4.0 / 2.25);
    assert!((var - expect).abs() < 1e-12);
    assert!((mean - expect * 8.0 / 2.25).abs() < 1e-12);
}

#[test]
fn oracle_has_zero_regret_every_round() {
    let env = small_env(2);
    let rec = trace(&AgentConfig::new("oracle", AgentKind::OracleTs), &env, 2, 8);
    assert!(rec.iter().all(|r| r.regret == 0.0));
}

#[test]
fn feature_determined_linear_model_recovers_gamma() {
    let p = EnvParams { campaigns: 20, adlines: 3, levels: 10, sigma_m: 0.0, sigma_eps: 0.0, ..Default::default() };
    let env = EnvTruth::for_seed(&p, 3).unwrap();
    let mut cfg = AgentConfig::new("fd", AgentKind::Fd);
    cfg.sigma_eps = 0.05;
    let space = Arc::new(ArmSpace::new(env.campaigns.clone(), env.grid.clone(), cfg.transform).unwrap());
    let kernel = cfg.model.build_kernel(space.feature_dim(), &mut rng(0)).unwrap();
    let model = mcmab_core::posterior::HierModel::isotropic(kernel, 0.0, cfg.sigma_eps).unwrap();
    let mut agent = McmabAgent::new(&cfg, model, space.clone()).unwrap();
    let mut r = rng(4);
    let mut fed = 0;
    let mut t = 0;
    while fed < 500 {
        t += 1;
        let i = r.random_range(0..space.n_arms());
        // Clipped arms carry no linear signal.
        if env.g_star[i] <= 0.0 {
            continue;
        }
        let arm = space.arm(i);
        agent.update(arm.campaign, t, &[Observation { arm, round: t, reward: env.theta[i] }]).unwrap();
        fed += 1;
    }
    let gamma = &agent.g_state().gamma_posterior().unwrap().mean;
    let err: f64 = gamma.iter().zip(&env.gamma_star).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    assert!(err < 0.05, "error {err}");
}

#[test]
fn hibou_starts_even_and_follows_slopes() {
    let campaigns = vec![CampaignMeta::new(1, 25.0, 10, (0..5).map(|_| vec![0.0]).collect()).unwrap()];
    let space = Arc::new(ArmSpace::new(campaigns, make_grid(50).unwrap(), FeatureTransform::LinearWithIntercept).unwrap());
    let mut agent = HibouAgent::new("hibou", space);
    let mut r = stream_rng(1, Stream::Agent);
    assert_eq!(agent.recommend(1, 1, &mut r).unwrap().levels(), &[10; 5]);
    let batch: Vec<Observation> = (1..=5).map(|k| obs(1, k, 10, 1, if k == 3 { 10.0 } else { 0.0 })).collect();
    agent.update(1, 1, &batch).unwrap();
    assert_eq!(agent.recommend(1, 2, &mut r).unwrap().levels(), &[0, 0, 50, 0, 0]);
}

#[test]
fn hibou_keeps_allocation_when_no_slope_is_positive() {
    let campaigns = vec![CampaignMeta::new(1, 25.0, 10, (0..3).map(|_| vec![0.0]).collect()).unwrap()];
    let space = Arc::new(ArmSpace::new(campaigns, make_grid(10).unwrap(), FeatureTransform::LinearWithIntercept).unwrap());
    let mut agent = HibouAgent::new("hibou", space);
    let mut r = stream_rng(1, Stream::Agent);
    let first = agent.recommend(1, 1, &mut r).unwrap();
    agent.update(1, 1, &(1..=3).map(|k| obs(1, k, 3, 1, 0.0)).collect::<Vec<_>>()).unwrap();
    assert_eq!(agent.recommend(1, 2, &mut r).unwrap(), first);
}

proptest! {
    #[test]
    fn proportional_split_spends_everything(slopes in prop::collection::vec(-3.0f64..3.0, 1..8), units in 1usize..60) {
        if let Some(levels) = proportional_split(&slopes, units) {
            prop_assert_eq!(levels.iter().sum::<usize>(), units);
            for (l, s) in levels.iter().zip(&slopes) {
                if *s <= 0.0 { prop_assert_eq!(*l, 0); }
            }
        } else {
            prop_assert!(slopes.iter().all(|s| *s <= 0.0));
        }
    }
}

#[test]
fn han2021_local_model_tightens_with_data() {
    let env = small_env(5);
    let cfg = AgentConfig::new("han", AgentKind::Han2021);
    let space = Arc::new(ArmSpace::new(env.campaigns.clone(), env.grid.clone(), cfg.transform).unwrap());
    let mut agent = Han2021Agent::new(&cfg, space).unwrap();
    assert_eq!(agent.augment_shares().len(), 30);
    let (_, before) = agent.local_posterior(1, 1).unwrap();
    for t in 1..=5 {
        agent.update(1, t, &[obs(1, 1, 2, t, 3.0)]).unwrap();
    }
    let (_, after) = agent.local_posterior(1, 1).unwrap();
    assert!(after[(0, 0)] < before[(0, 0)] && after[(1, 1)] < before[(1, 1)]);
    assert!(after.trace() < before.trace());
}

#[test]
fn han2021_is_deterministic_given_seed() {
    let env = small_env(6);
    let cfg = AgentConfig::new("han", AgentKind::Han2021);
    assert_eq!(trace(&cfg, &env, 6, 5), trace(&cfg, &env, 6, 5));
}

#[test]
fn zero_random_effect_mcmab_is_fd() {
    let env = small_env(7);
    let mut mcmab = AgentConfig::new("x", AgentKind::Mcmab);
    mcmab.sigma_m = 0.0;
    let fd = AgentConfig::new("x", AgentKind::Fd);
    assert_eq!(trace(&mcmab, &env, 7, 8), trace(&fd, &env, 7, 8));
}

#[test]
fn every_round_equals_daily_batch_for_singleton_batches() {
    let p = EnvParams { campaigns: 1, adlines: 1, levels: 3, rounds: 3, ..Default::default() };
    let env = Arc::new(EnvTruth::for_seed(&p, 8).unwrap());
    let every = AgentConfig::new("x", AgentKind::Mcmab);
    let mut daily = every.clone();
    daily.schedule = RetrainSchedule::DailyBatch;
    assert_eq!(trace(&every, &env, 8, 3), trace(&daily, &env, 8, 3));
}

#[test]
fn daily_batch_uses_previous_rounds_for_g_and_current_for_theta() {
    let env = small_env(9);
    let mut cfg = AgentConfig::new("x", AgentKind::Mcmab);
    cfg.schedule = RetrainSchedule::DailyBatch;
    let space = Arc::new(ArmSpace::new(env.campaigns.clone(), env.grid.clone(), cfg.transform).unwrap());
    let kernel = cfg.model.build_kernel(space.feature_dim(), &mut rng(0)).unwrap();
    let model = mcmab_core::posterior::HierModel::isotropic(kernel, cfg.sigma_m, cfg.sigma_eps).unwrap();
    let mut agent = McmabAgent::new(&cfg, model, space).unwrap();
    agent.on_event(ClockEvent::RoundStart { round: 1 }).unwrap();
    agent.update(1, 1, &[obs(1, 1, 2, 1, 1.0)]).unwrap();
    assert_eq!(agent.g_state().history_len(), 0);
    assert_eq!(agent.theta_stats().total(), 1);
    agent.on_event(ClockEvent::RoundStart { round: 2 }).unwrap();
    assert_eq!(agent.g_state().history_len(), 1);
    assert_eq!(agent.pending_len(), 0);
}

#[test]
fn per_campaign_schedule_freezes_g_within_a_campaign() {
    let p = EnvParams { campaigns: 3, adlines: 2, levels: 4, rounds: 5, ..Default::default() };
    let env = Arc::new(EnvTruth::for_seed(&p, 10).unwrap());
    let mut cfg = AgentConfig::new("x", AgentKind::Mcmab);
    cfg.schedule = RetrainSchedule::PerCampaign;
    let space = Arc::new(ArmSpace::new(env.campaigns.clone(), env.grid.clone(), cfg.transform).unwrap());
    let kernel = cfg.model.build_kernel(space.feature_dim(), &mut rng(0)).unwrap();
    let model = mcmab_core::posterior::HierModel::isotropic(kernel, cfg.sigma_m, cfg.sigma_eps).unwrap();
    let mut agent = McmabAgent::new(&cfg, model, space).unwrap();
    let mut r = stream_rng(10, Stream::Agent);
    let mut noise = stream_rng(10, Stream::Noise);
    let mut t = 0;
    for m in 1..=3 {
        agent.on_event(ClockEvent::CampaignStart { campaign: m }).unwrap();
        let rows_at_start = agent.g_state().history_len();
        assert_eq!(rows_at_start, agent.theta_stats().total());
        let mut frozen = None;
        for _ in 0..5 {
            t += 1;
            agent.on_event(ClockEvent::RoundStart { round: t }).unwrap();
            let alloc = agent.recommend(m, t, &mut r).unwrap();
            let g = agent.cached_g(m).unwrap().clone();
            if let Some(f) = &frozen {
                assert_eq!(f, &g);
            }
            frozen = Some(g);
            let o = env.observe(&alloc, t, &mut noise).unwrap();
            agent.update(m, t, &o).unwrap();
            assert_eq!(agent.g_state().history_len(), rows_at_start);
        }
    }
}

#[test]
fn fa_ind_ignores_features() {
    let env = small_env(11);
    let mut shuffled = (*env).clone();
    for c in &mut shuffled.campaigns {
        c.adline_features.reverse();
        for x in &mut c.adline_features {
            x.iter_mut().for_each(|v| *v = -*v);
        }
    }
    let shuffled = Arc::new(shuffled);
    let cfg = AgentConfig::new("fa", AgentKind::FaInd);
    assert_eq!(trace(&cfg, &env, 11, 8), trace(&cfg, &shuffled, 11, 8));
}

#[test]
fn untrained_mcmab_treats_symmetric_ad_lines_alike() {
    let campaigns = vec![CampaignMeta::new(1, 1.0, 10, vec![vec![0.5, -0.2]; 3]).unwrap()];
    let space = Arc::new(ArmSpace::new(campaigns, make_grid(3).unwrap(), FeatureTransform::LinearWithIntercept).unwrap());
    let cfg = AgentConfig::new("x", AgentKind::Mcmab);
    let kernel = cfg.model.build_kernel(space.feature_dim(), &mut rng(0)).unwrap();
    let model = mcmab_core::posterior::HierModel::isotropic(kernel, cfg.sigma_m, cfg.sigma_eps).unwrap();
    let mut agent = McmabAgent::new(&cfg, model, space).unwrap();
    let mut counts = [[0f64; 4]; 3];
    let mut r = stream_rng(12, Stream::Agent);
    for _ in 0..10_000 {
        let a = agent.recommend(1, 1, &mut r).unwrap();
        for (k, &n) in a.levels().iter().enumerate() {
            counts[k][n] += 1.0;
        }
    }
    // Homogeneity of the per-ad-line level distributions.
    let total = 30_000.0;
    let col: Vec<f64> = (0..4).map(|n| counts.iter().map(|row| row[n]).sum()).collect();
    let mut stat = 0.0;
    let mut used = 0;
    for row in &counts {
        for n in 0..4 {
            let expect = 10_000.0 * col[n] / total;
            if expect > 0.0 {
                stat += (row[n] - expect).powi(2) / expect;
                used += 1;
            }
        }
    }
    let dof = ((used / 3) as f64 - 1.0) * 2.0;
    let p = 1.0 - ChiSquared::new(dof).unwrap().cdf(stat);
    assert!(p > 0.01, "chi2 {stat} dof {dof} p {p}");
}

#[test]
fn every_agent_runs_on_every_environment() {
    for kind in [EnvKind::Linear, EnvKind::Nonlinear] {
        let p = EnvParams { kind, campaigns: 3, adlines: 2, levels: 4, rounds: 4, d_m: 1, d_k: 1, ..Default::default() };
        let env = Arc::new(EnvTruth::for_seed(&p, 13).unwrap());
        let transform = kind.transform();
        let models = [
            ModelSpec::Linear { prior_var: 1.0 },
            ModelSpec::Rbf { lengthscale: 2.0, signal: 1.0 },
            ModelSpec::Ntk { depth: 2, width: 12, regularization: 1.0, learning_rate: 0.01 },
        ];
        for agent_kind in [AgentKind::Mcmab, AgentKind::Fd, AgentKind::FaInd, AgentKind::OracleTs, AgentKind::Hibou, AgentKind::Han2021] {
            for model in &models {
                for schedule in [RetrainSchedule::EveryRound, RetrainSchedule::DailyBatch, RetrainSchedule::PerCampaign] {
                    let mut cfg = AgentConfig::new("x", agent_kind);
                    cfg.model = model.clone();
                    cfg.schedule = schedule;
                    cfg.transform = transform;
                    cfg.memory_threshold = Some(5);
                    let mut agent = build_agent(&cfg, &env, &mut stream_rng(13, Stream::Init)).unwrap();
                    let rec = run_sequential(&env, agent.as_mut(), 4, 13).unwrap();
                    assert!(rec.iter().all(|r| r.regret >= 0.0));
                }
            }
        }
    }
}

#[test]
fn ntk_refresh_and_log_link_run() {
    let env = small_env(14);
    let mut cfg = AgentConfig::new("x", AgentKind::Mcmab);
    cfg.model = ModelSpec::Ntk { depth: 2, width: 4, regularization: 1.0, learning_rate: 0.01 };
    cfg.refresh_linearization = true;
    cfg.log_link = true;
    cfg.schedule = RetrainSchedule::DailyBatch;
    let a = trace(&cfg, &env, 14, 4);
    assert_eq!(a, trace(&cfg, &env, 14, 4));
}
