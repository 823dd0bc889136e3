//! Slow, independent reference computations used by tests and `verify`.
//!
//! Nothing here shares a code path with the production engine: matrices are
//! built observation by observation and solved with LU inverses.

use nalgebra::{DMatrix, DVector};

use crate::domain::{ArmSpace, History};
use crate::kernels::KernelSpec;
use crate::posterior::HierModel;
use crate::{Error, Result};

/// Marginal posterior means and variances of `g` and `theta` at query arms.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMarginals {
    pub g_mean: Vec<f64>,
    pub g_var: Vec<f64>,
    pub theta_mean: Vec<f64>,
    pub theta_var: Vec<f64>,
}

fn inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    a.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("oracle matrix is singular".into()))
}

fn kernel_at(kernel: &KernelSpec, space: &ArmSpace, i: usize, j: usize) -> Result<f64> {
    kernel.eval(space.feature(i).as_slice(), space.feature(j).as_slice())
}

/// Conditions the joint Gaussian of `[g(Q); theta(Q); Y]` on `Y`.
pub fn dense_conditioning(
    model: &HierModel,
    space: &ArmSpace,
    history: &History,
    queries: &[usize],
) -> Result<DenseMarginals> {
    let rows: Vec<usize> = history
        .observations()
        .iter()
        .map(|o| space.index(&o.arm))
        .collect::<Result<_>>()?;
    let q = queries.len();
    let h = rows.len();
    let noise = model.noise_var();
    let kernel = &model.kernel;
    let re = |i: usize, j: usize| model.random_effect_cov(space, i, j);

    // Latent block: g(Q) then theta(Q).
    let mut mu_latent = DVector::zeros(2 * q);
    for (a, &i) in queries.iter().enumerate() {
        let m = kernel.prior_mean(space.feature(i).as_slice())?;
        mu_latent[a] = m;
        mu_latent[q + a] = m;
    }
    let mut mu_y = DVector::zeros(h);
    for (r, &i) in rows.iter().enumerate() {
        mu_y[r] = kernel.prior_mean(space.feature(i).as_slice())?;
    }

    let mut c_ll = DMatrix::zeros(2 * q, 2 * q);
    for (a, &i) in queries.iter().enumerate() {
        for (b, &j) in queries.iter().enumerate() {
            let k = kernel_at(kernel, space, i, j)?;
            c_ll[(a, b)] = k;
            c_ll[(a, q + b)] = k;
            c_ll[(q + a, b)] = k;
            c_ll[(q + a, q + b)] = k + re(i, j);
        }
    }
    let mut c_ly = DMatrix::zeros(2 * q, h);
    for (a, &i) in queries.iter().enumerate() {
        for (r, &j) in rows.iter().enumerate() {
            let k = kernel_at(kernel, space, i, j)?;
            c_ly[(a, r)] = k;
            c_ly[(q + a, r)] = k + re(i, j);
        }
    }
    let mut c_yy = DMatrix::zeros(h, h);
    for (r, &i) in rows.iter().enumerate() {
        for (s, &j) in rows.iter().enumerate() {
            c_yy[(r, s)] = kernel_at(kernel, space, i, j)? + re(i, j);
        }
        c_yy[(r, r)] += noise;
    }

    let (mean, cov) = if h == 0 {
        (mu_latent, c_ll)
    } else {
        let inv = inverse(&c_yy)?;
        let gain = &c_ly * inv;
        let mean = mu_latent + &gain * (history.rewards() - mu_y);
        let cov = c_ll - &gain * c_ly.transpose();
        (mean, cov)
    };
    Ok(DenseMarginals {
        g_mean: (0..q).map(|a| mean[a]).collect(),
        g_var: (0..q).map(|a| cov[(a, a)]).collect(),
        theta_mean: (0..q).map(|a| mean[q + a]).collect(),
        theta_var: (0..q).map(|a| cov[(q + a, q + a)]).collect(),
    })
}

/// `theta(Q) | g, Y`: conditions `delta(Q)` on the residuals `Y - g(arm)`.
///
/// `g_values[i]` gives `g` at flat arm `i` for every arm that appears.
pub fn dense_theta_given_g(
    model: &HierModel,
    space: &ArmSpace,
    history: &History,
    g_values: &[f64],
    queries: &[usize],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let rows: Vec<usize> = history
        .observations()
        .iter()
        .map(|o| space.index(&o.arm))
        .collect::<Result<_>>()?;
    let re = |i: usize, j: usize| model.random_effect_cov(space, i, j);
    let q = queries.len();
    let h = rows.len();
    let c_dd = DMatrix::from_fn(q, q, |a, b| re(queries[a], queries[b]));
    if h == 0 {
        return Ok((
            queries.iter().map(|&i| g_values[i]).collect(),
            (0..q).map(|a| c_dd[(a, a)]).collect(),
        ));
    }
    let c_dr = DMatrix::from_fn(q, h, |a, r| re(queries[a], rows[r]));
    let mut c_rr = DMatrix::from_fn(h, h, |r, s| re(rows[r], rows[s]));
    for r in 0..h {
        c_rr[(r, r)] += model.noise_var();
    }
    let resid = DVector::from_iterator(
        h,
        history
            .observations()
            .iter()
            .zip(&rows)
            .map(|(o, &i)| o.reward - g_values[i]),
    );
    let gain = &c_dr * inverse(&c_rr)?;
    let shift = &gain * resid;
    let cov = c_dd - &gain * c_dr.transpose();
    Ok((
        queries.iter().enumerate().map(|(a, &i)| g_values[i] + shift[a]).collect(),
        (0..q).map(|a| cov[(a, a)]).collect(),
    ))
}

/// Observation-level design for a finite-rank kernel.
pub struct RowDesign {
    /// Basis of each observation's arm, as columns.
    pub psi: DMatrix<f64>,
    /// `Sigma_{1:H} = Z' Sigma Z`.
    pub sigma_rows: DMatrix<f64>,
    /// `Y - mu(Psi)`.
    pub resid: DVector<f64>,
}

pub fn row_design(model: &HierModel, space: &ArmSpace, history: &History) -> Result<RowDesign> {
    let rows: Vec<usize> = history
        .observations()
        .iter()
        .map(|o| space.index(&o.arm))
        .collect::<Result<_>>()?;
    let cols = rows
        .iter()
        .map(|&i| {
            model
                .kernel
                .basis(space.feature(i).as_slice())
                .ok_or_else(|| Error::invalid("row design needs a finite-rank kernel"))?
        })
        .collect::<Result<Vec<_>>>()?;
    let p = model
        .kernel
        .parameter_prior()
        .map(|(m, _)| m.len())
        .ok_or_else(|| Error::invalid("row design needs a finite-rank kernel"))?;
    let psi = if cols.is_empty() {
        DMatrix::zeros(p, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    let membership = history.membership(space)?;
    let sigma_arms = DMatrix::from_fn(space.n_arms(), space.n_arms(), |i, j| {
        model.random_effect_cov(space, i, j)
    });
    let sigma_rows = membership.transpose() * sigma_arms * &membership;
    let mut resid = history.rewards();
    for (r, &i) in rows.iter().enumerate() {
        resid[r] -= model.kernel.prior_mean(space.feature(i).as_slice())?;
    }
    Ok(RowDesign { psi, sigma_rows, resid })
}

/// `Cov(gamma | H) = (Psi (Sigma_{1:H} + s^2 I)^-1 Psi' + Sigma_gamma^-1)^-1`
/// and the matching mean.
pub fn gamma_information_form(model: &HierModel, space: &ArmSpace, history: &History) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mu, cov) = model
        .kernel
        .parameter_prior()
        .ok_or_else(|| Error::invalid("needs a finite-rank kernel"))?;
    let d = row_design(model, space, history)?;
    let h = d.resid.len();
    let r = &d.sigma_rows + DMatrix::identity(h, h) * model.noise_var();
    let r_inv = inverse(&r)?;
    let post = inverse(&(&d.psi * &r_inv * d.psi.transpose() + inverse(&cov)?))?;
    let mean = &mu + &post * &d.psi * r_inv * d.resid;
    Ok((mean, post))
}

/// `Sigma_g - Sigma_g Psi (Sigma_{1:H} + s^2 I + Psi' Sigma_g Psi)^-1 Psi' Sigma_g`.
pub fn gamma_woodbury_form(model: &HierModel, space: &ArmSpace, history: &History) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let (mu, cov) = model
        .kernel
        .parameter_prior()
        .ok_or_else(|| Error::invalid("needs a finite-rank kernel"))?;
    let d = row_design(model, space, history)?;
    let h = d.resid.len();
    if h == 0 {
        return Ok((mu, cov));
    }
    let s = &d.sigma_rows + DMatrix::identity(h, h) * model.noise_var() + d.psi.transpose() * &cov * &d.psi;
    let s_inv = inverse(&s)?;
    let cross = &cov * &d.psi;
    let post = &cov - &cross * &s_inv * cross.transpose();
    let mean = mu + &cross * s_inv * d.resid;
    Ok((mean, post))
}

/// Conjugate Bayesian linear regression with known noise variance.
/// `x` holds one design row per observation.
pub fn bayes_linear_regression(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    prior_mean: &DVector<f64>,
    prior_cov: &DMatrix<f64>,
    noise_var: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let prior_prec = inverse(prior_cov)?;
    let cov = inverse(&(&prior_prec + x.transpose() * x / noise_var))?;
    let mean = &cov * (prior_prec * prior_mean + x.transpose() * y / noise_var);
    Ok((mean, cov))
}

/// Central finite-difference gradient of `f` at `w`.
pub fn central_gradient<F: Fn(&[f64]) -> f64>(f: F, w: &[f64], step: f64) -> Vec<f64> {
    let mut w = w.to_vec();
    (0..w.len())
        .map(|i| {
            let orig = w[i];
            w[i] = orig + step;
            let up = f(&w);
            w[i] = orig - step;
            let down = f(&w);
            w[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Per-arm running means of a history; `None` for unobserved arms.
pub fn running_means(space: &ArmSpace, history: &History) -> Result<Vec<Option<f64>>> {
    let mut sums = vec![0.0; space.n_arms()];
    let mut counts = vec![0usize; space.n_arms()];
    for o in history.observations() {
        let i = space.index(&o.arm)?;
        sums[i] += o.reward;
        counts[i] += 1;
    }
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| (c > 0).then(|| s / c as f64))
        .collect())
}

/// `E[max(0, theta + eps)]`, `eps ~ N(0, sd^2)`, by composite Simpson
/// quadrature over `theta +- 12 sd`.
pub fn clipped_normal_mean(theta: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return theta.max(0.0);
    }
    let lo = (theta - 12.0 * sd).max(0.0);
    let hi = theta + 12.0 * sd;
    if hi <= lo {
        return 0.0;
    }
    let n = 20_000;
    let h = (hi - lo) / n as f64;
    let f = |y: f64| {
        let z = (y - theta) / sd;
        y * (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * h);
    }
    acc * h / 3.0
}

/// Random small problem instances shared by the oracle tests and the
/// `verify` suites.
pub mod cases {
    use std::sync::Arc;

    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand_distr::StandardNormal;

    use crate::domain::{make_grid, ArmSpace, CampaignMeta, FeatureTransform, History, Observation};
    use crate::kernels::{init_mlp, KernelSpec, MeanFn};
    use crate::posterior::{HierModel, RandomEffect};

    #[derive(Debug, Clone, Copy, PartialEq, Eq)]
    pub enum CaseKind {
        Linear,
        Rbf,
        Ntk,
    }

    impl CaseKind {
        pub fn as_str(&self) -> &'static str {
            match self {
                CaseKind::Linear => "linear",
                CaseKind::Rbf => "rbf",
                CaseKind::Ntk => "ntk",
            }
        }
    }

    pub const CASE_KINDS: [CaseKind; 3] = [CaseKind::Linear, CaseKind::Rbf, CaseKind::Ntk];

    pub fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
        rng.sample(StandardNormal)
    }

    pub fn random_psd<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| normal(rng) * 0.6);
        &a * a.transpose() + DMatrix::identity(n, n) * 0.1
    }

    /// `M x K x N <= 6` non-zero arms, metadata of dim 2, budgets in
    /// `[0.5, 2]` so tanh networks stay out of saturation.
    pub fn small_space<R: Rng + ?Sized>(rng: &mut R) -> Arc<ArmSpace> {
        let shapes = [(1, 1, 1), (1, 2, 2), (2, 1, 3), (2, 2, 1), (1, 3, 2), (3, 2, 1), (1, 1, 6), (2, 3, 1)];
        let (m, k, n) = shapes[rng.random_range(0..shapes.len())];
        let campaigns = (1..=m)
            .map(|id| {
                let b = rng.random_range(0.5..2.0);
                let feats = (0..k).map(|_| vec![normal(rng), normal(rng)]).collect();
                CampaignMeta::new(id, b, 5, feats).expect("valid campaign")
            })
            .collect();
        Arc::new(
            ArmSpace::new(campaigns, make_grid(n).expect("valid grid"), FeatureTransform::LinearWithIntercept)
                .expect("valid space"),
        )
    }

    pub fn kernel_of<R: Rng + ?Sized>(kind: CaseKind, dim: usize, rng: &mut R) -> KernelSpec {
        match kind {
            CaseKind::Linear => {
                let mean = DVector::from_fn(dim, |_, _| normal(rng) * 0.5);
                KernelSpec::linear(mean, random_psd(dim, rng)).expect("valid linear kernel")
            }
            CaseKind::Rbf => KernelSpec::rbf_with(
                rng.random_range(0.5..3.0),
                rng.random_range(0.5..2.0),
                if rng.random_bool(0.5) { MeanFn::Zero } else { MeanFn::Constant(normal(rng)) },
            )
            .expect("valid rbf kernel"),
            CaseKind::Ntk => {
                let mlp = init_mlp(2, 3, dim, rng).expect("valid network");
                KernelSpec::ntk_with(mlp, None, rng.random_range(0.5..2.0)).expect("valid ntk kernel")
            }
        }
    }

    /// Random kernel plus one of: no random effect, isotropic, dense block.
    pub fn random_model<R: Rng + ?Sized>(kind: CaseKind, space: &ArmSpace, rng: &mut R) -> HierModel {
        let kernel = kernel_of(kind, space.feature_dim(), rng);
        let per_campaign = space.campaign_range(1).len();
        let re = match rng.random_range(0..3) {
            0 => RandomEffect::Isotropic { sd: 0.0 },
            1 => RandomEffect::Isotropic { sd: rng.random_range(0.1..1.5) },
            _ => RandomEffect::Block { cov: random_psd(per_campaign, rng) },
        };
        HierModel::new(kernel, re, rng.random_range(0.3..1.5)).expect("valid model")
    }

    /// Up to `max_rows` observations on random non-zero arms, one per round.
    pub fn random_history<R: Rng + ?Sized>(space: &ArmSpace, max_rows: usize, rng: &mut R) -> History {
        let rows = rng.random_range(0..=max_rows);
        let obs = (0..rows)
            .map(|t| Observation {
                arm: space.arm(rng.random_range(0..space.n_arms())),
                round: t + 1,
                reward: normal(rng) * 2.0,
            })
            .collect();
        History::from_observations(obs).expect("one observation per round")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_matches_closed_form_at_zero() {
        // E[max(0, e)] = sd / sqrt(2 pi)
        let v = clipped_normal_mean(0.0, 2.0);
        assert!((v - 2.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn central_gradient_of_quadratic() {
        let g = central_gradient(|w| w[0] * w[0] + 3.0 * w[1], &[2.0, 1.0], 1e-5);
        assert!((g[0] - 4.0).abs() < 1e-8);
        assert!((g[1] - 3.0).abs() < 1e-8);
    }
}
