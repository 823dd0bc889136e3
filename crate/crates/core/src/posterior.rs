//! Exact Gaussian posteriors for the hierarchical reward model
//!
//! ```text
//! g ~ GP(mu, K)                      (LR and NTK are finite-rank cases)
//! theta_i = g(x_i) + delta_i,        delta_m ~ N(0, Sigma) per campaign
//! y = theta_i + eps,                 eps ~ N(0, sigma^2)
//! ```
//!
//! Step one is `P(g | H)`, step two `P(theta_m | g, H)`.
//!
//! Observations of the same arm enter `P(g | H)` only through their count
//! `C_i` and mean `ybar_i`: given `theta`, rewards are i.i.d. around
//! `theta_i`, so `ybar_i = g(x_i) + delta_i + eta_i` with
//! `eta_i ~ N(0, sigma^2 / C_i)` carries the full likelihood. The engine
//! therefore factors `K_AA + Sigma_AA + diag(sigma^2 / C)` over the observed
//! arms `A` instead of the observation-level `K + sigma^2 I + Sigma_{1:H}`;
//! both give the same posterior.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::domain::{ArmSpace, ArmStats, History, Observation};
use crate::kernels::KernelSpec;
use crate::linalg::{self, Factor};
use crate::{Error, Result};

/// Covariance of the per-arm random effects of one campaign.
#[derive(Debug, Clone, PartialEq)]
pub enum RandomEffect {
    /// `Sigma = sd^2 I`.
    Isotropic { sd: f64 },
    /// Dense `K N x K N` block, arms ordered by `(k, n)`, shared by campaigns.
    Block { cov: DMatrix<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierModel {
    pub kernel: KernelSpec,
    pub random_effect: RandomEffect,
    pub noise_sd: f64,
}

impl HierModel {
    pub fn new(kernel: KernelSpec, random_effect: RandomEffect, noise_sd: f64) -> Result<Self> {
        if !(noise_sd > 0.0 && noise_sd.is_finite()) {
            return Err(Error::invalid(format!("noise sd must be positive, got {noise_sd}")));
        }
        match &random_effect {
            RandomEffect::Isotropic { sd } => {
                if !(*sd >= 0.0 && sd.is_finite()) {
                    return Err(Error::invalid(format!("random-effect sd must be non-negative, got {sd}")));
                }
            }
            RandomEffect::Block { cov } => {
                if !cov.is_square() {
                    return Err(Error::dims("random-effect block", cov.nrows(), cov.ncols()));
                }
                let scale = cov.amax().max(1.0);
                if (cov - cov.transpose()).amax() > 1e-10 * scale {
                    return Err(Error::invalid("random-effect block is not symmetric"));
                }
                let min = cov.clone().symmetric_eigenvalues().min();
                if cov.nrows() > 0 && min < -1e-10 * scale {
                    return Err(Error::invalid("random-effect block is not positive semidefinite"));
                }
            }
        }
        Ok(Self {
            kernel,
            random_effect,
            noise_sd,
        })
    }

    /// `Sigma = sigma_m^2 I`.
    pub fn isotropic(kernel: KernelSpec, sigma_m: f64, sigma_eps: f64) -> Result<Self> {
        Self::new(kernel, RandomEffect::Isotropic { sd: sigma_m }, sigma_eps)
    }

    /// The feature-determined variant: same working model, `Sigma = 0`.
    pub fn without_random_effect(&self) -> Self {
        Self {
            kernel: self.kernel.clone(),
            random_effect: RandomEffect::Isotropic { sd: 0.0 },
            noise_sd: self.noise_sd,
        }
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_sd * self.noise_sd
    }

    pub fn validate_for(&self, space: &ArmSpace) -> Result<()> {
        if let Some(d) = self.kernel.input_dim() {
            if d != space.feature_dim() {
                return Err(Error::dims("working-model input", d, space.feature_dim()));
            }
        }
        if let RandomEffect::Block { cov } = &self.random_effect {
            for m in 1..=space.n_campaigns() {
                let n = space.campaign_range(m).len();
                if cov.nrows() != n {
                    return Err(Error::dims("random-effect block vs campaign arms", n, cov.nrows()));
                }
            }
        }
        Ok(())
    }

    /// `Cov(delta_i, delta_j)` for flat arm indices.
    pub fn random_effect_cov(&self, space: &ArmSpace, i: usize, j: usize) -> f64 {
        let m = space.campaign_of(i);
        if m != space.campaign_of(j) {
            return 0.0;
        }
        match &self.random_effect {
            RandomEffect::Isotropic { sd } => {
                if i == j {
                    sd * sd
                } else {
                    0.0
                }
            }
            RandomEffect::Block { cov } => {
                let start = space.campaign_range(m).start;
                cov[(i - start, j - start)]
            }
        }
    }

    /// Campaign `m`'s random-effect block.
    pub fn random_effect_block(&self, space: &ArmSpace, m: usize) -> DMatrix<f64> {
        let n = space.campaign_range(m).len();
        match &self.random_effect {
            RandomEffect::Isotropic { sd } => DMatrix::identity(n, n) * (sd * sd),
            RandomEffect::Block { cov } => cov.clone(),
        }
    }
}

/// Prior mean of `g` at every arm, plus the basis of finite-rank kernels.
#[derive(Debug, Clone)]
pub struct ArmPrior {
    kernel: KernelSpec,
    mean: Vec<f64>,
    param: Option<ParamPrior>,
}

#[derive(Debug, Clone)]
struct ParamPrior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    /// `phi(x_i)` as columns.
    basis: DMatrix<f64>,
    /// `Sigma_gamma * basis`.
    cov_basis: DMatrix<f64>,
}

impl ArmPrior {
    pub fn new(kernel: &KernelSpec, space: &ArmSpace) -> Result<Self> {
        let mean = space
            .features()
            .iter()
            .map(|x| kernel.prior_mean(x.as_slice()))
            .collect::<Result<Vec<_>>>()?;
        let param = match kernel.parameter_prior() {
            None => None,
            Some((pmean, pcov)) => {
                let cols = space
                    .features()
                    .iter()
                    .map(|x| kernel.basis(x.as_slice()).expect("finite-rank kernel has a basis"))
                    .collect::<Result<Vec<_>>>()?;
                let basis = DMatrix::from_columns(&cols);
                let cov_basis = &pcov * &basis;
                Some(ParamPrior {
                    mean: pmean,
                    cov: pcov,
                    basis,
                    cov_basis,
                })
            }
        };
        Ok(Self {
            kernel: kernel.clone(),
            mean,
            param,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    pub fn is_finite_rank(&self) -> bool {
        self.param.is_some()
    }

    /// `phi(x_i)` for finite-rank kernels.
    pub fn basis(&self, i: usize) -> Option<DVector<f64>> {
        self.param.as_ref().map(|p| p.basis.column(i).into_owned())
    }

    fn cov_block(&self, space: &ArmSpace, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(rows.len(), cols.len());
        match &self.param {
            Some(p) => {
                for (c, &j) in cols.iter().enumerate() {
                    let sj = p.cov_basis.column(j);
                    for (r, &i) in rows.iter().enumerate() {
                        out[(r, c)] = p.basis.column(i).dot(&sj);
                    }
                }
            }
            None => {
                for (c, &j) in cols.iter().enumerate() {
                    for (r, &i) in rows.iter().enumerate() {
                        out[(r, c)] = self
                            .kernel
                            .eval(space.feature(i).as_slice(), space.feature(j).as_slice())?;
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Independent per-arm Normal prior left behind by a memory collapse.
#[derive(Debug, Clone, PartialEq)]
pub struct CollapseTable {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl CollapseTable {
    /// CSV dump `m,k,n,mean,sd`.
    pub fn to_csv(&self, space: &ArmSpace) -> String {
        let mut s = String::from("m,k,n,mean,sd\n");
        for i in 0..self.mean.len() {
            let a = space.arm(i);
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                a.campaign,
                a.adline,
                a.level,
                self.mean[i],
                self.var[i].max(0.0).sqrt()
            ));
        }
        s
    }
}

/// Gaussian posterior over the parameters of a finite-rank working model.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaPosterior {
    pub prior_mean: DVector<f64>,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GammaPosterior {
    /// Induced `(E g(x), phi(x)' Cov phi(x'))` at basis columns `phis`.
    fn induced(&self, prior_means: &[f64], phis: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let shift = &self.mean - &self.prior_mean;
        let mean = DVector::from_iterator(
            prior_means.len(),
            prior_means.iter().enumerate().map(|(c, m)| m + phis.column(c).dot(&shift)),
        );
        let cov_phi = &self.cov * phis;
        (mean, phis.transpose() * cov_phi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendChoice {
    /// Parameter space for finite-rank kernels, kernel space otherwise.
    Auto,
    /// Always condition in kernel space.
    Kernel,
}

#[derive(Debug, Clone)]
enum Backend {
    Gamma(GammaPosterior),
    Kernel(KernelSystem),
}

#[derive(Debug, Clone)]
struct KernelSystem {
    arms: Vec<usize>,
    factor: Option<Factor>,
    alpha: DVector<f64>,
}

/// Immutable snapshot of `P(g | H)`.
#[derive(Debug, Clone)]
pub struct GPosteriorState {
    model: Arc<HierModel>,
    space: Arc<ArmSpace>,
    prior: Arc<ArmPrior>,
    table: Option<Arc<CollapseTable>>,
    history: Arc<Vec<Observation>>,
    stats: ArmStats,
    choice: BackendChoice,
    backend: Backend,
}

impl GPosteriorState {
    /// The prior, with an empty history.
    pub fn prior(model: Arc<HierModel>, space: Arc<ArmSpace>) -> Result<Self> {
        let prior = Arc::new(ArmPrior::new(&model.kernel, &space)?);
        Self::with_prior(model, space, prior, BackendChoice::Auto)
    }

    pub fn with_prior(
        model: Arc<HierModel>,
        space: Arc<ArmSpace>,
        prior: Arc<ArmPrior>,
        choice: BackendChoice,
    ) -> Result<Self> {
        model.validate_for(&space)?;
        let stats = ArmStats::new(space.n_arms());
        let mut state = Self {
            model,
            space,
            prior,
            table: None,
            history: Arc::new(Vec::new()),
            stats,
            choice,
            backend: Backend::Kernel(KernelSystem {
                arms: Vec::new(),
                factor: None,
                alpha: DVector::zeros(0),
            }),
        };
        state.backend = state.build_backend()?;
        Ok(state)
    }

    pub fn from_history(
        model: Arc<HierModel>,
        space: Arc<ArmSpace>,
        history: &History,
        choice: BackendChoice,
    ) -> Result<Self> {
        let prior = Arc::new(ArmPrior::new(&model.kernel, &space)?);
        let mut state = Self::with_prior(model, space, prior, choice)?;
        history.check_unique()?;
        for o in history.observations() {
            state.stats.add(state.space.index(&o.arm)?, o.reward);
        }
        state.history = Arc::new(history.observations().to_vec());
        state.backend = state.build_backend()?;
        Ok(state)
    }

    pub fn model(&self) -> &HierModel {
        &self.model
    }

    pub fn model_arc(&self) -> Arc<HierModel> {
        self.model.clone()
    }

    pub fn space(&self) -> &Arc<ArmSpace> {
        &self.space
    }

    pub fn arm_prior(&self) -> &Arc<ArmPrior> {
        &self.prior
    }

    /// Observations since the last collapse.
    pub fn history(&self) -> &[Observation] {
        &self.history
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    pub fn stats(&self) -> &ArmStats {
        &self.stats
    }

    pub fn collapse_table(&self) -> Option<&CollapseTable> {
        self.table.as_deref()
    }

    pub fn is_gamma_space(&self) -> bool {
        matches!(self.backend, Backend::Gamma(_))
    }

    pub fn gamma_posterior(&self) -> Option<&GammaPosterior> {
        match &self.backend {
            Backend::Gamma(g) => Some(g),
            Backend::Kernel(_) => None,
        }
    }

    fn prior_mean(&self, i: usize) -> f64 {
        match &self.table {
            Some(t) => t.mean[i],
            None => self.prior.mean(i),
        }
    }

    fn prior_cov(&self, rows: &[usize], cols: &[usize]) -> Result<DMatrix<f64>> {
        match &self.table {
            Some(t) => Ok(DMatrix::from_fn(rows.len(), cols.len(), |r, c| {
                if rows[r] == cols[c] {
                    t.var[rows[r]]
                } else {
                    0.0
                }
            })),
            None => self.prior.cov_block(&self.space, rows, cols),
        }
    }

    fn build_backend(&self) -> Result<Backend> {
        let use_gamma = self.choice == BackendChoice::Auto && self.table.is_none() && self.prior.is_finite_rank();
        if use_gamma {
            Ok(Backend::Gamma(self.gamma_from_stats()?))
        } else {
            Ok(Backend::Kernel(self.kernel_system()?))
        }
    }

    fn kernel_system(&self) -> Result<KernelSystem> {
        let arms: Vec<usize> = self.stats.observed().collect();
        if arms.is_empty() {
            return Ok(KernelSystem {
                arms,
                factor: None,
                alpha: DVector::zeros(0),
            });
        }
        let noise = self.model.noise_var();
        let mut system = self.prior_cov(&arms, &arms)?;
        for (r, &i) in arms.iter().enumerate() {
            for (c, &j) in arms.iter().enumerate() {
                system[(r, c)] += self.model.random_effect_cov(&self.space, i, j);
            }
            system[(r, r)] += noise / self.stats.count(i) as f64;
        }
        let factor = linalg::cholesky_with_jitter(&system, 0.0)?;
        let resid = DVector::from_iterator(
            arms.len(),
            arms.iter()
                .map(|&i| self.stats.sum(i) / self.stats.count(i) as f64 - self.prior_mean(i)),
        );
        let alpha = factor.solve(&resid);
        Ok(KernelSystem {
            arms,
            factor: Some(factor),
            alpha,
        })
    }

    fn gamma_from_stats(&self) -> Result<GammaPosterior> {
        let param = self
            .prior
            .param
            .as_ref()
            .ok_or_else(|| Error::invalid("parameter-space posterior needs a linear or NTK kernel"))?;
        gamma_posterior_from_stats(&self.model, &self.space, &self.prior, param, &self.stats)
    }

    /// Joint posterior mean and covariance of `g` at the given arms.
    pub fn mean_cov(&self, arms: &[usize]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        self.check_arms(arms)?;
        match &self.backend {
            Backend::Gamma(gp) => {
                let param = self.prior.param.as_ref().expect("gamma backend has basis");
                let phis = select_columns(&param.basis, arms);
                let means: Vec<f64> = arms.iter().map(|&i| self.prior.mean(i)).collect();
                Ok(gp.induced(&means, &phis))
            }
            Backend::Kernel(sys) => {
                let mu = DVector::from_iterator(arms.len(), arms.iter().map(|&i| self.prior_mean(i)));
                let kqq = self.prior_cov(arms, arms)?;
                let Some(factor) = &sys.factor else {
                    return Ok((mu, kqq));
                };
                let kaq = self.prior_cov(&sys.arms, arms)?;
                let mean = mu + kaq.transpose() * &sys.alpha;
                let v = factor
                    .chol
                    .l_dirty()
                    .solve_lower_triangular(&kaq)
                    .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
                Ok((mean, kqq - v.transpose() * v))
            }
        }
    }

    /// Posterior marginal means and variances of `g` at the given arms.
    pub fn marginals(&self, arms: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_arms(arms)?;
        match &self.backend {
            Backend::Gamma(gp) => {
                let param = self.prior.param.as_ref().expect("gamma backend has basis");
                let shift = &gp.mean - &gp.prior_mean;
                let mut means = Vec::with_capacity(arms.len());
                let mut vars = Vec::with_capacity(arms.len());
                for &i in arms {
                    let phi = param.basis.column(i);
                    means.push(self.prior.mean(i) + phi.dot(&shift));
                    vars.push(phi.dot(&(&gp.cov * phi)));
                }
                Ok((means, vars))
            }
            Backend::Kernel(sys) => {
                let mut means: Vec<f64> = arms.iter().map(|&i| self.prior_mean(i)).collect();
                let mut vars: Vec<f64> = match &self.table {
                    Some(t) => arms.iter().map(|&i| t.var[i]).collect(),
                    None => arms
                        .iter()
                        .map(|&i| self.prior.cov_block(&self.space, &[i], &[i]).map(|m| m[(0, 0)]))
                        .collect::<Result<_>>()?,
                };
                if let Some(factor) = &sys.factor {
                    let kaq = self.prior_cov(&sys.arms, arms)?;
                    let v = factor
                        .chol
                        .l_dirty()
                        .solve_lower_triangular(&kaq)
                        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
                    for c in 0..arms.len() {
                        means[c] += kaq.column(c).dot(&sys.alpha);
                        vars[c] -= v.column(c).norm_squared();
                    }
                }
                Ok((means, vars))
            }
        }
    }

    /// Posterior mean and covariance of `g` at arbitrary inputs.
    ///
    /// Only available while the prior is the working model's; a collapse
    /// table is defined on arms alone.
    pub fn query_points(&self, points: &[DVector<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        if self.table.is_some() {
            return Err(Error::invalid("collapsed posterior can only be queried at arms"));
        }
        let kernel = &self.model.kernel;
        let mu = DVector::from_iterator(
            points.len(),
            points.iter().map(|x| kernel.prior_mean(x.as_slice())).collect::<Result<Vec<_>>>()?,
        );
        match &self.backend {
            Backend::Gamma(gp) => {
                let cols = points
                    .iter()
                    .map(|x| kernel.basis(x.as_slice()).expect("finite-rank"))
                    .collect::<Result<Vec<_>>>()?;
                let phis = DMatrix::from_columns(&cols);
                Ok(gp.induced(mu.as_slice(), &phis))
            }
            Backend::Kernel(sys) => {
                let kqq = crate::kernels::gram(kernel, points)?;
                let Some(factor) = &sys.factor else {
                    return Ok((mu, kqq));
                };
                let mut kaq = DMatrix::zeros(sys.arms.len(), points.len());
                for (r, &i) in sys.arms.iter().enumerate() {
                    for (c, x) in points.iter().enumerate() {
                        kaq[(r, c)] = kernel.eval(self.space.feature(i).as_slice(), x.as_slice())?;
                    }
                }
                let mean = mu + kaq.transpose() * &sys.alpha;
                let v = factor
                    .chol
                    .l_dirty()
                    .solve_lower_triangular(&kaq)
                    .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
                Ok((mean, kqq - v.transpose() * v))
            }
        }
    }

    fn check_arms(&self, arms: &[usize]) -> Result<()> {
        match arms.iter().find(|&&i| i >= self.space.n_arms()) {
            Some(&bad) => Err(Error::invalid(format!("arm index {bad} out of range"))),
            None => Ok(()),
        }
    }

    /// Adds one round's observations; the receiver is left untouched.
    pub fn batch_append(&self, batch: &[Observation]) -> Result<Self> {
        if batch.is_empty() {
            return Ok(self.clone());
        }
        let round = batch[0].round;
        if let Some(o) = batch.iter().find(|o| o.round != round) {
            return Err(Error::invalid(format!(
                "batch mixes rounds {round} and {}",
                o.round
            )));
        }
        let mut taken: Vec<_> = self
            .history
            .iter()
            .filter(|o| o.round == round)
            .map(|o| o.arm)
            .collect();
        let mut next = self.clone();
        let mut history = (*self.history).clone();
        for o in batch {
            if o.arm.level == 0 {
                return Err(Error::invalid(format!(
                    "zero-budget arm {} cannot update the posterior",
                    o.arm
                )));
            }
            if !o.reward.is_finite() {
                return Err(Error::invalid(format!("non-finite reward at arm {}", o.arm)));
            }
            if taken.contains(&o.arm) {
                return Err(Error::DuplicateObservation {
                    campaign: o.arm.campaign,
                    adline: o.arm.adline,
                    level: o.arm.level,
                    round,
                });
            }
            taken.push(o.arm);
            next.stats.add(self.space.index(&o.arm)?, o.reward);
            history.push(*o);
        }
        next.history = Arc::new(history);
        next.backend = next.build_backend()?;
        Ok(next)
    }

    /// Replaces the prior by the current per-arm marginals and forgets the
    /// raw history. Cross-arm covariance is dropped.
    pub fn memory_collapse(&self) -> Result<Self> {
        let all: Vec<usize> = (0..self.space.n_arms()).collect();
        let (mean, var) = self.marginals(&all)?;
        let mut next = self.clone();
        next.table = Some(Arc::new(CollapseTable { mean, var }));
        next.history = Arc::new(Vec::new());
        next.stats = ArmStats::new(self.space.n_arms());
        next.backend = next.build_backend()?;
        Ok(next)
    }

    /// One joint draw of `g` at the given arms.
    pub fn sample_g<R: Rng + ?Sized>(&self, arms: &[usize], rng: &mut R) -> Result<DVector<f64>> {
        let (mean, cov) = self.mean_cov(arms)?;
        linalg::sample_mvn(&mean, &cov, rng)
    }
}

fn select_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), cols.len(), |r, c| m[(r, cols[c])])
}

fn gamma_posterior_from_stats(
    model: &HierModel,
    space: &ArmSpace,
    prior: &ArmPrior,
    param: &ParamPrior,
    stats: &ArmStats,
) -> Result<GammaPosterior> {
    if stats.total() == 0 {
        return Ok(GammaPosterior {
            prior_mean: param.mean.clone(),
            mean: param.mean.clone(),
            cov: param.cov.clone(),
        });
    }
    let p = param.mean.len();
    let noise = model.noise_var();
    let mut precision = linalg::spd_inverse(&param.cov)
        .map_err(|e| Error::invalid(format!("parameter prior covariance is singular: {e}")))?;
    let mut rhs = DVector::zeros(p);
    match &model.random_effect {
        RandomEffect::Isotropic { sd } => {
            let re = sd * sd;
            for i in stats.observed() {
                let c = stats.count(i) as f64;
                let denom = noise + re * c;
                let phi = param.basis.column(i);
                precision.ger(c / denom, &phi, &phi, 1.0);
                rhs.axpy((stats.sum(i) - c * prior.mean(i)) / denom, &phi, 1.0);
            }
        }
        RandomEffect::Block { .. } => {
            for m in 1..=space.n_campaigns() {
                let arms: Vec<usize> = space.campaign_range(m).filter(|&i| stats.count(i) > 0).collect();
                if arms.is_empty() {
                    continue;
                }
                let mut r = DMatrix::from_fn(arms.len(), arms.len(), |a, b| {
                    model.random_effect_cov(space, arms[a], arms[b])
                });
                for (a, &i) in arms.iter().enumerate() {
                    r[(a, a)] += noise / stats.count(i) as f64;
                }
                let f = linalg::cholesky_with_jitter(&r, 0.0)?;
                let phis = select_columns(&param.basis, &arms);
                let resid = DVector::from_iterator(
                    arms.len(),
                    arms.iter()
                        .map(|&i| stats.sum(i) / stats.count(i) as f64 - prior.mean(i)),
                );
                let rinv_phit = f.solve_mat(&phis.transpose());
                precision += &phis * rinv_phit;
                rhs += &phis * f.solve(&resid);
            }
        }
    }
    let precision = linalg::symmetrize(&precision);
    let factor = linalg::cholesky_with_jitter(&precision, 0.0)?;
    let shift = factor.solve(&rhs);
    let cov = linalg::symmetrize(&factor.chol.inverse());
    Ok(GammaPosterior {
        prior_mean: param.mean.clone(),
        mean: &param.mean + shift,
        cov,
    })
}

/// `P(g | H)` for a full history.
pub fn posterior_g(model: &HierModel, space: &Arc<ArmSpace>, history: &History) -> Result<GPosteriorState> {
    GPosteriorState::from_history(Arc::new(model.clone()), space.clone(), history, BackendChoice::Auto)
}

/// `P(gamma | H)` for linear and NTK working models.
pub fn posterior_g_gamma_space(model: &HierModel, space: &ArmSpace, history: &History) -> Result<GammaPosterior> {
    model.validate_for(space)?;
    let prior = ArmPrior::new(&model.kernel, space)?;
    let param = prior
        .param
        .as_ref()
        .ok_or_else(|| Error::invalid("parameter-space posterior needs a linear or NTK kernel"))?;
    history.check_unique()?;
    let stats = history.stats(space)?;
    gamma_posterior_from_stats(model, space, &prior, param, &stats)
}

#[derive(Debug, Clone, PartialEq)]
pub enum ThetaCov {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

impl ThetaCov {
    pub fn variances(&self) -> DVector<f64> {
        match self {
            ThetaCov::Diagonal(v) => v.clone(),
            ThetaCov::Dense(m) => m.diagonal(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            ThetaCov::Diagonal(v) => DMatrix::from_diagonal(v),
            ThetaCov::Dense(m) => m.clone(),
        }
    }
}

/// `P(theta_m | g, H)` over campaign `m`'s non-zero arms, ordered `(k, n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaPosterior {
    pub campaign: usize,
    pub mean: DVector<f64>,
    pub cov: ThetaCov,
}

/// `Cov = (Sigma^-1 + sigma^-2 diag(C))^-1`,
/// `mean = Cov (Sigma^-1 g + sigma^-2 Z_m Y)`.
pub fn posterior_theta(
    model: &HierModel,
    space: &ArmSpace,
    stats: &ArmStats,
    campaign: usize,
    g_values: &DVector<f64>,
) -> Result<ThetaPosterior> {
    if campaign == 0 || campaign > space.n_campaigns() {
        return Err(Error::invalid(format!("unknown campaign {campaign}")));
    }
    let range = space.campaign_range(campaign);
    if g_values.len() != range.len() {
        return Err(Error::dims("posterior_theta g values", range.len(), g_values.len()));
    }
    if stats.len() != space.n_arms() {
        return Err(Error::dims("posterior_theta statistics", space.n_arms(), stats.len()));
    }
    let noise = model.noise_var();
    match &model.random_effect {
        RandomEffect::Isotropic { sd } => {
            let re = sd * sd;
            let n = range.len();
            let mut mean = DVector::zeros(n);
            let mut var = DVector::zeros(n);
            for (local, i) in range.enumerate() {
                let c = stats.count(i);
                if re == 0.0 {
                    mean[local] = g_values[local];
                } else if c == 0 {
                    mean[local] = g_values[local];
                    var[local] = re;
                } else {
                    let v = 1.0 / (1.0 / re + c as f64 / noise);
                    var[local] = v;
                    mean[local] = v * (g_values[local] / re + stats.sum(i) / noise);
                }
            }
            Ok(ThetaPosterior {
                campaign,
                mean,
                cov: ThetaCov::Diagonal(var),
            })
        }
        RandomEffect::Block { .. } => {
            let cond = theta_conditional(model, space, stats, campaign)?;
            Ok(ThetaPosterior {
                campaign,
                mean: &cond.gain * g_values + &cond.offset,
                cov: ThetaCov::Dense(cond.cov),
            })
        }
    }
}

/// `theta_m | g, H` written as `mean = gain * g + offset`, covariance `cov`.
///
/// Uses `D = sigma^-2 diag(C)` restricted to observed arms `O`:
/// `Cov = Sigma - Sigma_.O D^1/2 (I + D^1/2 Sigma_OO D^1/2)^-1 D^1/2 Sigma_O.`,
/// which never inverts `Sigma` and so also covers `Sigma = 0`.
#[derive(Debug, Clone)]
pub struct ThetaConditional {
    pub gain: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn theta_conditional(model: &HierModel, space: &ArmSpace, stats: &ArmStats, campaign: usize) -> Result<ThetaConditional> {
    let range = space.campaign_range(campaign);
    let n = range.len();
    let sigma = model.random_effect_block(space, campaign);
    let noise = model.noise_var();
    let observed: Vec<usize> = (0..n).filter(|&l| stats.count(range.start + l) > 0).collect();
    let s = DVector::from_iterator(n, (0..n).map(|l| stats.sum(range.start + l) / noise));
    if observed.is_empty() {
        return Ok(ThetaConditional {
            gain: DMatrix::identity(n, n),
            offset: DVector::zeros(n),
            cov: sigma,
        });
    }
    let root: Vec<f64> = observed
        .iter()
        .map(|&l| (stats.count(range.start + l) as f64 / noise).sqrt())
        .collect();
    // B = Sigma_.O D^1/2  (n x |O|)
    let b = DMatrix::from_fn(n, observed.len(), |r, c| sigma[(r, observed[c])] * root[c]);
    let mut inner = DMatrix::from_fn(observed.len(), observed.len(), |r, c| {
        root[r] * sigma[(observed[r], observed[c])] * root[c]
    });
    for r in 0..observed.len() {
        inner[(r, r)] += 1.0;
    }
    let f = linalg::cholesky_with_jitter(&inner, 0.0)?;
    let cov = linalg::symmetrize(&(&sigma - &b * f.solve_mat(&b.transpose())));
    // gain = Cov Sigma^-1 = I - B M^-1 D^1/2 E_O
    let mut selector = DMatrix::zeros(observed.len(), n);
    for (c, &l) in observed.iter().enumerate() {
        selector[(c, l)] = root[c];
    }
    let gain = DMatrix::identity(n, n) - &b * f.solve_mat(&selector);
    let offset = &cov * s;
    Ok(ThetaConditional { gain, offset, cov })
}

/// Marginal `P(theta_i | H)` for campaign `m`: `g` integrated out.
pub fn theta_marginals(state: &GPosteriorState, stats: &ArmStats, campaign: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let arms: Vec<usize> = state.space().campaign_range(campaign).collect();
    let (g_mean, g_cov) = state.mean_cov(&arms)?;
    let cond = theta_conditional(state.model(), state.space(), stats, campaign)?;
    let mean = &cond.gain * g_mean + &cond.offset;
    let cov = &cond.cov + &cond.gain * g_cov * cond.gain.transpose();
    Ok((mean.iter().cloned().collect(), cov.diagonal().iter().cloned().collect()))
}

/// One draw of `theta_m`; a zero covariance returns the mean.
pub fn sample_theta<R: Rng + ?Sized>(posterior: &ThetaPosterior, rng: &mut R) -> Result<DVector<f64>> {
    let n = posterior.mean.len();
    let z = linalg::standard_normals(n, rng);
    match &posterior.cov {
        ThetaCov::Diagonal(v) => Ok(DVector::from_iterator(
            n,
            (0..n).map(|i| posterior.mean[i] + v[i].max(0.0).sqrt() * z[i]),
        )),
        ThetaCov::Dense(c) => {
            if c.nrows() != n {
                return Err(Error::dims("theta covariance", n, c.nrows()));
            }
            let eig = linalg::symmetrize(c).symmetric_eigen();
            let scaled = DVector::from_iterator(
                n,
                eig.eigenvalues.iter().zip(z.iter()).map(|(l, z)| l.max(0.0).sqrt() * z),
            );
            Ok(&posterior.mean + eig.eigenvectors * scaled)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{make_grid, BaseArm, CampaignMeta, FeatureTransform};

    fn space() -> Arc<ArmSpace> {
        let c1 = CampaignMeta::new(1, 2.0, 3, vec![vec![0.5], vec![-0.3]]).unwrap();
        let c2 = CampaignMeta::new(2, 1.5, 3, vec![vec![0.1], vec![0.9]]).unwrap();
        Arc::new(ArmSpace::new(vec![c1, c2], make_grid(2).unwrap(), FeatureTransform::LinearWithIntercept).unwrap())
    }

    fn obs(m: usize, k: usize, n: usize, t: usize, y: f64) -> Observation {
        Observation {
            arm: BaseArm { campaign: m, adline: k, level: n },
            round: t,
            reward: y,
        }
    }

    #[test]
    fn theta_conjugate_arithmetic() {
        let s = space();
        let model = HierModel::isotropic(KernelSpec::isotropic_linear(3, 1.0).unwrap(), 1.0, 1.0).unwrap();
        let mut stats = ArmStats::new(s.n_arms());
        stats.add(0, 2.0);
        let post = posterior_theta(&model, &s, &stats, 1, &DVector::zeros(4)).unwrap();
        assert_eq!(post.mean[0], 1.0);
        assert_eq!(post.cov.variances()[0], 0.5);
        assert_eq!(post.mean[1], 0.0);
        assert_eq!(post.cov.variances()[1], 1.0);
    }

    #[test]
    fn theta_prior_recovery_without_data() {
        let s = space();
        let model = HierModel::isotropic(KernelSpec::isotropic_linear(3, 1.0).unwrap(), 0.7, 1.3).unwrap();
        let g = DVector::from_vec(vec![1.0, -2.0, 0.5, 3.0]);
        let post = posterior_theta(&model, &s, &ArmStats::new(s.n_arms()), 2, &g).unwrap();
        assert_eq!(post.mean, g);
        assert_eq!(post.cov.variances(), DVector::from_element(4, 0.7 * 0.7));
    }

    #[test]
    fn block_and_isotropic_theta_agree() {
        let s = space();
        let kernel = KernelSpec::isotropic_linear(3, 1.0).unwrap();
        let iso = HierModel::isotropic(kernel.clone(), 0.6, 0.9).unwrap();
        let block = HierModel::new(
            kernel,
            RandomEffect::Block { cov: DMatrix::identity(4, 4) * 0.36 },
            0.9,
        )
        .unwrap();
        let mut stats = ArmStats::new(s.n_arms());
        stats.add(1, 1.5);
        stats.add(1, 0.5);
        stats.add(6, -1.0);
        let g = DVector::from_vec(vec![0.2, 0.4, -0.1, 0.3]);
        for m in 1..=2 {
            let a = posterior_theta(&iso, &s, &stats, m, &g).unwrap();
            let b = posterior_theta(&block, &s, &stats, m, &g).unwrap();
            assert!((&a.mean - &b.mean).amax() < 1e-12);
            assert!((a.cov.to_dense() - b.cov.to_dense()).amax() < 1e-12);
        }
    }

    #[test]
    fn empty_history_is_prior() {
        let s = space();
        let model = Arc::new(HierModel::isotropic(KernelSpec::rbf(0.8).unwrap(), 0.5, 1.0).unwrap());
        let st = GPosteriorState::prior(model.clone(), s.clone()).unwrap();
        let arms: Vec<usize> = (0..s.n_arms()).collect();
        let (mean, cov) = st.mean_cov(&arms).unwrap();
        assert!(mean.iter().all(|&v| v == 0.0));
        let k = crate::kernels::gram(&model.kernel, s.features()).unwrap();
        assert_eq!(cov, k);
    }

    #[test]
    fn append_rejects_duplicates_and_mixed_rounds() {
        let s = space();
        let model = Arc::new(HierModel::isotropic(KernelSpec::rbf(0.8).unwrap(), 0.5, 1.0).unwrap());
        let st = GPosteriorState::prior(model, s).unwrap();
        let st1 = st.batch_append(&[obs(1, 1, 1, 1, 0.3)]).unwrap();
        assert!(matches!(
            st1.batch_append(&[obs(1, 1, 1, 1, 0.4)]),
            Err(Error::DuplicateObservation { .. })
        ));
        assert!(st.batch_append(&[obs(1, 1, 1, 1, 0.3), obs(1, 2, 1, 2, 0.3)]).is_err());
        assert!(st.batch_append(&[obs(1, 1, 0, 1, 0.3)]).is_err());
        assert_eq!(st.history_len(), 0);
        let same = st1.batch_append(&[]).unwrap();
        assert_eq!(same.history_len(), 1);
    }

    #[test]
    fn zero_theta_covariance_returns_mean() {
        let post = ThetaPosterior {
            campaign: 1,
            mean: DVector::from_vec(vec![1.0, 2.0]),
            cov: ThetaCov::Dense(DMatrix::zeros(2, 2)),
        };
        let mut rng = crate::rng::stream_rng(1, crate::rng::Stream::Agent);
        assert_eq!(sample_theta(&post, &mut rng).unwrap(), post.mean);
    }
}
