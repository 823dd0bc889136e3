#![allow(dead_code)]

#[allow(unused_imports)]
pub use mcmab_core::oracle::cases::{
    kernel_of, normal, random_history, random_model, random_psd, small_space, CaseKind as Kind, CASE_KINDS as KINDS,
};
use mcmab_core::domain::{BaseArm, Observation};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| / max(1, |b|)`.
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() / b.abs().max(1.0) <= tol
}

pub fn obs(m: usize, k: usize, n: usize, t: usize, y: f64) -> Observation {
    Observation {
        arm: BaseArm { campaign: m, adline: k, level: n },
        round: t,
        reward: y,
    }
}

/// One-sided paired t-test p-value for `mean(a - b) < 0`.
pub fn paired_less(a: &[f64], b: &[f64]) -> f64 {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return if mean < 0.0 {
            0.0
        } else if mean > 0.0 {
            1.0
        } else {
            0.5
        };
    }
    let t = mean / (var / n).sqrt();
    StudentsT::new(0.0, 1.0, n - 1.0).unwrap().cdf(t)
}

/// Two-sided paired t-test p-value for `mean(a - b) != 0`.
pub fn paired_two_sided(a: &[f64], b: &[f64]) -> f64 {
    let p = paired_less(a, b);
    (2.0 * p.min(1.0 - p)).min(1.0)
}
