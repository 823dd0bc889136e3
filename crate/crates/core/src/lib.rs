//! Multi-task combinatorial bandits for daily budget allocation.
//!
//! Each campaign splits its budget across ad lines on a discrete share grid.
//! Expected rewards are modelled hierarchically: a shared working model `g`
//! (linear regression, Gaussian process, or an NTK-linearized network) pools
//! information across campaigns, and per-arm random effects capture what the
//! features miss. Allocations are chosen by two-step Thompson sampling followed
//! by an exact multiple-choice knapsack solve.
//!
//! Module map:
//! - [`domain`]: grids, arms, allocations, features, histories.
//! - [`kernels`]: prior means and kernels for the three working models.
//! - [`posterior`]: exact Gaussian posteriors for `g` and `theta`, batch
//!   updates and memory collapse.
//! - [`mckp`]: the knapsack allocator and its brute-force oracle.
//! - [`agents`]: MCMAB and the baseline policies.
//! - [`simenv`]: synthetic environments, experiment drivers, Bayes regret.
//! - [`oracle`]: independent reference computations used by tests and the
//!   verification suites.

pub mod agents;
pub mod domain;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod mckp;
pub mod oracle;
pub mod posterior;
pub mod rng;
pub mod simenv;

pub use error::{Error, Result};
