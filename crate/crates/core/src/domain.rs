//! Campaigns, the discrete action grid, arm indexing, feature construction
//! and observation histories.
//!
//! Campaigns, ad lines and levels are 1-based (`m`, `k`, `n`) everywhere they
//! are exposed or serialized. Level `n = 0` is the zero-budget arm: it is part
//! of the grid and of allocations, but it has no flat index and never carries
//! posterior state.

use std::collections::BTreeSet;
use std::fmt;
use std::io::{Read, Write};
use std::ops::Range;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Budget shares `{0, 1/N, ..., 1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ActionGrid {
    n_levels: usize,
}

impl ActionGrid {
    pub fn new(n_levels: usize) -> Result<Self> {
        if n_levels == 0 {
            return Err(Error::invalid("action grid needs at least one non-zero level"));
        }
        Ok(Self { n_levels })
    }

    /// `N`, the number of non-zero levels.
    pub fn n_levels(&self) -> usize {
        self.n_levels
    }

    pub fn share(&self, level: usize) -> f64 {
        debug_assert!(level <= self.n_levels);
        level as f64 / self.n_levels as f64
    }

    pub fn shares(&self) -> Vec<f64> {
        (0..=self.n_levels).map(|n| self.share(n)).collect()
    }

    /// The level whose share equals `share` exactly, if any.
    pub fn level_of(&self, share: f64) -> Option<usize> {
        let n = (share * self.n_levels as f64).round();
        if n < 0.0 || n > self.n_levels as f64 {
            return None;
        }
        let n = n as usize;
        (self.share(n) == share).then_some(n)
    }
}

pub fn make_grid(n_levels: usize) -> Result<ActionGrid> {
    ActionGrid::new(n_levels)
}

/// 1-based flat arm index `(m-1)*K*N + (k-1)*N + n` for uniform `K`.
pub fn flat_index(m: usize, k: usize, n: usize, n_adlines: usize, n_levels: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::invalid("the zero-budget level has no flat index"));
    }
    if m == 0 || k == 0 || k > n_adlines || n > n_levels {
        return Err(Error::invalid(format!(
            "arm (m={m}, k={k}, n={n}) outside K={n_adlines}, N={n_levels}"
        )));
    }
    Ok((m - 1) * n_adlines * n_levels + (k - 1) * n_levels + n)
}

/// Inverse of [`flat_index`].
pub fn arm_from_flat(index: usize, n_adlines: usize, n_levels: usize) -> Result<(usize, usize, usize)> {
    if index == 0 || n_adlines == 0 || n_levels == 0 {
        return Err(Error::invalid("flat indices start at 1"));
    }
    let zero = index - 1;
    let per_campaign = n_adlines * n_levels;
    Ok((
        zero / per_campaign + 1,
        (zero % per_campaign) / n_levels + 1,
        zero % n_levels + 1,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignMeta {
    /// 1-based campaign id.
    pub id: usize,
    /// Daily budget `B_m`.
    pub budget: f64,
    /// Number of rounds `T_m`.
    pub duration: usize,
    /// One metadata vector per ad line, budget excluded.
    pub adline_features: Vec<Vec<f64>>,
}

impl CampaignMeta {
    pub fn new(id: usize, budget: f64, duration: usize, adline_features: Vec<Vec<f64>>) -> Result<Self> {
        if id == 0 {
            return Err(Error::invalid("campaign ids are 1-based"));
        }
        if !(budget > 0.0 && budget.is_finite()) {
            return Err(Error::invalid(format!("campaign {id}: budget must be positive, got {budget}")));
        }
        if duration == 0 {
            return Err(Error::invalid(format!("campaign {id}: duration must be at least one round")));
        }
        let Some(first) = adline_features.first() else {
            return Err(Error::invalid(format!("campaign {id}: needs at least one ad line")));
        };
        let d = first.len();
        if let Some(bad) = adline_features.iter().find(|x| x.len() != d) {
            return Err(Error::dims("campaign ad-line features", d, bad.len()));
        }
        Ok(Self {
            id,
            budget,
            duration,
            adline_features,
        })
    }

    pub fn n_adlines(&self) -> usize {
        self.adline_features.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.adline_features[0].len()
    }
}

/// An `(ad line, level)` pair inside a campaign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct BaseArm {
    pub campaign: usize,
    pub adline: usize,
    pub level: usize,
}

impl fmt::Display for BaseArm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(m={}, k={}, n={})", self.campaign, self.adline, self.level)
    }
}

/// One grid level per ad line, shares summing to at most one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Allocation {
    pub campaign: usize,
    levels: Vec<usize>,
}

impl Allocation {
    pub fn new(campaign: usize, levels: Vec<usize>, grid: &ActionGrid) -> Result<Self> {
        let n = grid.n_levels();
        if let Some(&bad) = levels.iter().find(|&&l| l > n) {
            return Err(Error::invalid(format!("level {bad} is not on a grid with N={n}")));
        }
        let spend: usize = levels.iter().sum();
        if spend > n {
            return Err(Error::invalid(format!(
                "allocation spends {spend} units but only {n} are available"
            )));
        }
        Ok(Self { campaign, levels })
    }

    /// Integer units per ad line.
    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn shares(&self, grid: &ActionGrid) -> Vec<f64> {
        self.levels.iter().map(|&l| grid.share(l)).collect()
    }

    pub fn spend_units(&self) -> usize {
        self.levels.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub arm: BaseArm,
    pub round: usize,
    pub reward: f64,
}

/// Feature maps `phi(x, a)` from ad-line metadata and a budget share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureTransform {
    /// `(1, B*a, x)`
    LinearWithIntercept,
    /// `(B*a, x)`
    LinearNoIntercept,
    /// `(B, a, x)`
    RawConcat,
    /// `(log(B*a), x)`; undefined at `a = 0`.
    LogBudget,
}

impl FeatureTransform {
    pub fn output_dim(&self, metadata_dim: usize) -> usize {
        match self {
            FeatureTransform::LinearWithIntercept | FeatureTransform::RawConcat => metadata_dim + 2,
            FeatureTransform::LinearNoIntercept | FeatureTransform::LogBudget => metadata_dim + 1,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureTransform::LinearWithIntercept => "linear_with_intercept",
            FeatureTransform::LinearNoIntercept => "linear_no_intercept",
            FeatureTransform::RawConcat => "raw_concat",
            FeatureTransform::LogBudget => "log_budget",
        }
    }
}

impl FromStr for FeatureTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_with_intercept" => Ok(Self::LinearWithIntercept),
            "linear_no_intercept" => Ok(Self::LinearNoIntercept),
            "raw_concat" => Ok(Self::RawConcat),
            "log_budget" => Ok(Self::LogBudget),
            other => Err(Error::invalid(format!("unknown feature transform `{other}`"))),
        }
    }
}

/// `phi(x, a)` for metadata `x` (budget excluded), budget `B` and share `a`.
pub fn transform_features(x: &[f64], budget: f64, share: f64, transform: FeatureTransform) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&share) {
        return Err(Error::invalid(format!("share {share} outside [0, 1]")));
    }
    let spend = budget * share;
    let mut out = Vec::with_capacity(transform.output_dim(x.len()));
    match transform {
        FeatureTransform::LinearWithIntercept => {
            out.push(1.0);
            out.push(spend);
        }
        FeatureTransform::LinearNoIntercept => out.push(spend),
        FeatureTransform::RawConcat => {
            out.push(budget);
            out.push(share);
        }
        FeatureTransform::LogBudget => {
            if spend <= 0.0 {
                return Err(Error::invalid("log_budget transform is undefined at zero spend"));
            }
            out.push(spend.ln());
        }
    }
    out.extend_from_slice(x);
    Ok(out)
}

/// All non-zero-level arms of a set of campaigns with their transformed
/// features, addressed by a 0-based flat index.
///
/// For uniform `K` the 0-based index plus one equals [`flat_index`].
#[derive(Debug, Clone)]
pub struct ArmSpace {
    campaigns: Vec<CampaignMeta>,
    grid: ActionGrid,
    transform: FeatureTransform,
    offsets: Vec<usize>,
    features: Vec<DVector<f64>>,
}

impl ArmSpace {
    pub fn new(campaigns: Vec<CampaignMeta>, grid: ActionGrid, transform: FeatureTransform) -> Result<Self> {
        if campaigns.is_empty() {
            return Err(Error::invalid("arm space needs at least one campaign"));
        }
        let d = campaigns[0].feature_dim();
        let n = grid.n_levels();
        let mut offsets = Vec::with_capacity(campaigns.len() + 1);
        let mut features = Vec::new();
        offsets.push(0);
        for (i, c) in campaigns.iter().enumerate() {
            if c.id != i + 1 {
                return Err(Error::invalid(format!(
                    "campaign ids must be 1..=M in order; position {} has id {}",
                    i + 1,
                    c.id
                )));
            }
            if c.feature_dim() != d {
                return Err(Error::dims("campaign feature dimension", d, c.feature_dim()));
            }
            for x in &c.adline_features {
                for level in 1..=n {
                    let phi = transform_features(x, c.budget, grid.share(level), transform)?;
                    features.push(DVector::from_vec(phi));
                }
            }
            offsets.push(features.len());
        }
        Ok(Self {
            campaigns,
            grid,
            transform,
            offsets,
            features,
        })
    }

    pub fn grid(&self) -> &ActionGrid {
        &self.grid
    }

    pub fn transform(&self) -> FeatureTransform {
        self.transform
    }

    pub fn campaigns(&self) -> &[CampaignMeta] {
        &self.campaigns
    }

    pub fn campaign(&self, m: usize) -> &CampaignMeta {
        &self.campaigns[m - 1]
    }

    pub fn n_campaigns(&self) -> usize {
        self.campaigns.len()
    }

    pub fn n_arms(&self) -> usize {
        self.features.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.features[0].len()
    }

    /// 0-based flat index of a non-zero-level arm.
    pub fn index(&self, arm: &BaseArm) -> Result<usize> {
        let n = self.grid.n_levels();
        if arm.campaign == 0 || arm.campaign > self.campaigns.len() {
            return Err(Error::invalid(format!("unknown campaign in arm {arm}")));
        }
        let k_max = self.campaigns[arm.campaign - 1].n_adlines();
        if arm.level == 0 {
            return Err(Error::invalid(format!("zero-budget arm {arm} has no posterior index")));
        }
        if arm.adline == 0 || arm.adline > k_max || arm.level > n {
            return Err(Error::invalid(format!("arm {arm} outside K={k_max}, N={n}")));
        }
        Ok(self.offsets[arm.campaign - 1] + (arm.adline - 1) * n + (arm.level - 1))
    }

    pub fn arm(&self, index: usize) -> BaseArm {
        let m = self.offsets.partition_point(|&o| o <= index);
        let local = index - self.offsets[m - 1];
        let n = self.grid.n_levels();
        BaseArm {
            campaign: m,
            adline: local / n + 1,
            level: local % n + 1,
        }
    }

    /// Flat indices of campaign `m`'s arms, ordered by `(k, n)`.
    pub fn campaign_range(&self, m: usize) -> Range<usize> {
        self.offsets[m - 1]..self.offsets[m]
    }

    pub fn campaign_of(&self, index: usize) -> usize {
        self.offsets.partition_point(|&o| o <= index)
    }

    pub fn feature(&self, index: usize) -> &DVector<f64> {
        &self.features[index]
    }

    pub fn features(&self) -> &[DVector<f64>] {
        &self.features
    }

    /// Feature table as CSV: `m,k,n,f1,...,fd`.
    pub fn write_features_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["m".to_string(), "k".to_string(), "n".to_string()];
        header.extend((1..=self.feature_dim()).map(|j| format!("f{j}")));
        w.write_record(&header).map_err(csv_err)?;
        for (i, phi) in self.features.iter().enumerate() {
            let arm = self.arm(i);
            let mut row = vec![arm.campaign.to_string(), arm.adline.to_string(), arm.level.to_string()];
            row.extend(phi.iter().map(|v| v.to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Per-arm sufficient statistics: observation counts `C` and reward sums.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmStats {
    counts: Vec<u32>,
    sums: Vec<f64>,
}

impl ArmStats {
    pub fn new(n_arms: usize) -> Self {
        Self {
            counts: vec![0; n_arms],
            sums: vec![0.0; n_arms],
        }
    }

    pub fn add(&mut self, index: usize, reward: f64) {
        self.counts[index] += 1;
        self.sums[index] += reward;
    }

    pub fn count(&self, index: usize) -> u32 {
        self.counts[index]
    }

    pub fn sum(&self, index: usize) -> f64 {
        self.sums[index]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|&c| c as usize).sum()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Indices with at least one observation, ascending.
    pub fn observed(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts.iter().enumerate().filter(|(_, &c)| c > 0).map(|(i, _)| i)
    }
}

/// Ordered observations with derived design structures.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    observations: Vec<Observation>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_observations(observations: Vec<Observation>) -> Result<Self> {
        let mut h = Self::new();
        for o in observations {
            h.push(o)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, obs: Observation) -> Result<()> {
        if obs.arm.level == 0 {
            return Err(Error::invalid(format!(
                "zero-budget arm {} cannot enter a posterior history",
                obs.arm
            )));
        }
        if !obs.reward.is_finite() {
            return Err(Error::invalid(format!("non-finite reward at arm {}", obs.arm)));
        }
        self.observations.push(obs);
        Ok(())
    }

    pub fn extend(&mut self, batch: &[Observation]) -> Result<()> {
        batch.iter().try_for_each(|o| self.push(*o))
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    /// Rejects repeated `(arm, round)` pairs.
    pub fn check_unique(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for o in &self.observations {
            if !seen.insert((o.arm, o.round)) {
                return Err(Error::DuplicateObservation {
                    campaign: o.arm.campaign,
                    adline: o.arm.adline,
                    level: o.arm.level,
                    round: o.round,
                });
            }
        }
        Ok(())
    }

    pub fn stats(&self, space: &ArmSpace) -> Result<ArmStats> {
        let mut stats = ArmStats::new(space.n_arms());
        for o in &self.observations {
            stats.add(space.index(&o.arm)?, o.reward);
        }
        Ok(stats)
    }

    /// `Psi`: transformed features, one column per observation.
    pub fn feature_matrix(&self, space: &ArmSpace) -> Result<DMatrix<f64>> {
        let d = space.feature_dim();
        let mut psi = DMatrix::zeros(d, self.len());
        for (j, o) in self.observations.iter().enumerate() {
            psi.set_column(j, space.feature(space.index(&o.arm)?));
        }
        Ok(psi)
    }

    /// `Z`: arms x observations, `Z[i, l] = 1` iff observation `l` is arm `i`.
    pub fn membership(&self, space: &ArmSpace) -> Result<DMatrix<f64>> {
        let mut z = DMatrix::zeros(space.n_arms(), self.len());
        for (l, o) in self.observations.iter().enumerate() {
            z[(space.index(&o.arm)?, l)] = 1.0;
        }
        Ok(z)
    }

    pub fn rewards(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.observations.iter().map(|o| o.reward))
    }

    /// CSV with header `m,k,n,t,y`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["m", "k", "n", "t", "y"]).map_err(csv_err)?;
        for o in &self.observations {
            w.write_record([
                o.arm.campaign.to_string(),
                o.arm.adline.to_string(),
                o.arm.level.to_string(),
                o.round.to_string(),
                o.reward.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::Parse(e.to_string()))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(csv_err)?.clone();
        if headers.iter().collect::<Vec<_>>() != ["m", "k", "n", "t", "y"] {
            return Err(Error::Parse(format!("expected header m,k,n,t,y, got {headers:?}")));
        }
        let mut h = History::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let field = |i: usize| -> Result<&str> {
                rec.get(i)
                    .ok_or_else(|| Error::Parse(format!("row {}: missing column {}", line + 2, i + 1)))
            };
            let int = |i: usize| -> Result<usize> {
                field(i)?
                    .parse()
                    .map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))
            };
            let y: f64 = field(4)?
                .parse()
                .map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
            h.push(Observation {
                arm: BaseArm {
                    campaign: int(0)?,
                    adline: int(1)?,
                    level: int(2)?,
                },
                round: int(3)?,
                reward: y,
            })?;
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_examples() {
        assert_eq!(make_grid(1).unwrap().shares(), vec![0.0, 1.0]);
        assert_eq!(make_grid(4).unwrap().shares(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let g = make_grid(50).unwrap();
        let s = g.shares();
        assert_eq!(s.len(), 51);
        assert_eq!(s[50], 1.0);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(make_grid(0).is_err());
        assert_eq!(g.level_of(0.5), Some(25));
        assert_eq!(g.level_of(0.013), None);
    }

    #[test]
    fn flat_index_examples() {
        assert_eq!(flat_index(1, 1, 1, 3, 4).unwrap(), 1);
        assert_eq!(flat_index(2, 1, 1, 3, 4).unwrap(), 13);
        assert!(flat_index(1, 1, 0, 3, 4).is_err());
        assert!(flat_index(1, 4, 1, 3, 4).is_err());
    }

    #[test]
    fn flat_index_round_trip_m3_k2_n5() {
        let mut seen = BTreeSet::new();
        for m in 1..=3 {
            for k in 1..=2 {
                for n in 1..=5 {
                    let i = flat_index(m, k, n, 2, 5).unwrap();
                    assert_eq!(arm_from_flat(i, 2, 5).unwrap(), (m, k, n));
                    seen.insert(i);
                }
            }
        }
        assert_eq!(seen.len(), 30);
        assert_eq!(*seen.iter().next().unwrap(), 1);
        assert_eq!(*seen.iter().last().unwrap(), 30);
    }

    #[test]
    fn flat_index_is_bijection_up_to_ten() {
        for mm in 1..=10 {
            for kk in 1..=10 {
                for nn in 1..=10 {
                    let mut hit = vec![false; mm * kk * nn];
                    for m in 1..=mm {
                        for k in 1..=kk {
                            for n in 1..=nn {
                                let i = flat_index(m, k, n, kk, nn).unwrap();
                                assert!(!hit[i - 1]);
                                hit[i - 1] = true;
                            }
                        }
                    }
                    assert!(hit.iter().all(|&h| h));
                }
            }
        }
    }

    #[test]
    fn transform_examples() {
        let z = [0.1, -0.2, 0.3, 0.4, -0.5, 0.6];
        let phi = transform_features(&z, 20.0, 0.5, FeatureTransform::LinearWithIntercept).unwrap();
        assert_eq!(phi.len(), 8);
        assert_eq!(&phi[..2], &[1.0, 10.0]);
        assert_eq!(&phi[2..], &z);

        let phi = transform_features(&[1.0, 0.0], 300.0, 0.1, FeatureTransform::LogBudget).unwrap();
        assert_eq!(phi[0], (300.0f64 * 0.1).ln());
        assert!(transform_features(&z, 20.0, 0.0, FeatureTransform::LogBudget).is_err());
        assert!("quadratic".parse::<FeatureTransform>().is_err());
        assert_eq!(
            "raw_concat".parse::<FeatureTransform>().unwrap(),
            FeatureTransform::RawConcat
        );
    }

    #[test]
    fn allocation_validation() {
        let g = make_grid(4).unwrap();
        assert!(Allocation::new(1, vec![2, 2], &g).is_ok());
        assert!(Allocation::new(1, vec![3, 2], &g).is_err());
        assert!(Allocation::new(1, vec![5, 0], &g).is_err());
        let a = Allocation::new(1, vec![1, 3, 0], &g).unwrap();
        assert_eq!(a.shares(&g), vec![0.25, 0.75, 0.0]);
    }

    fn space(m: usize, k: usize, n: usize) -> ArmSpace {
        let campaigns = (1..=m)
            .map(|id| {
                let feats = (0..k).map(|j| vec![id as f64, j as f64]).collect();
                CampaignMeta::new(id, 10.0 + id as f64, 5, feats).unwrap()
            })
            .collect();
        ArmSpace::new(campaigns, make_grid(n).unwrap(), FeatureTransform::LinearWithIntercept).unwrap()
    }

    #[test]
    fn arm_space_matches_flat_index() {
        let s = space(3, 2, 4);
        assert_eq!(s.n_arms(), 24);
        for i in 0..s.n_arms() {
            let arm = s.arm(i);
            assert_eq!(s.index(&arm).unwrap(), i);
            assert_eq!(flat_index(arm.campaign, arm.adline, arm.level, 2, 4).unwrap(), i + 1);
        }
        assert_eq!(s.campaign_range(2), 8..16);
        let phi = s.feature(s.index(&BaseArm { campaign: 2, adline: 1, level: 2 }).unwrap());
        assert_eq!(phi.as_slice(), &[1.0, 6.0, 2.0, 0.0]);
    }

    #[test]
    fn history_rejects_zero_budget_and_duplicates() {
        let mut h = History::new();
        let arm = BaseArm { campaign: 1, adline: 1, level: 0 };
        assert!(h.push(Observation { arm, round: 1, reward: 1.0 }).is_err());
        let arm = BaseArm { campaign: 1, adline: 1, level: 1 };
        h.push(Observation { arm, round: 1, reward: 1.0 }).unwrap();
        h.push(Observation { arm, round: 1, reward: 2.0 }).unwrap();
        assert!(matches!(h.check_unique(), Err(Error::DuplicateObservation { .. })));
    }

    #[test]
    fn history_csv_round_trip() {
        let obs = vec![
            Observation { arm: BaseArm { campaign: 1, adline: 2, level: 3 }, round: 1, reward: 0.125 },
            Observation { arm: BaseArm { campaign: 2, adline: 1, level: 1 }, round: 4, reward: 7.1 },
        ];
        let h = History::from_observations(obs).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("m,k,n,t,y\n1,2,3,1,0.125\n"));
        assert_eq!(History::read_csv(&buf[..]).unwrap(), h);
    }

    #[test]
    fn features_csv_header_names_dimensions() {
        let s = space(1, 1, 2);
        let mut buf = Vec::new();
        s.write_features_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "m,k,n,f1,f2,f3,f4");
        assert_eq!(text.lines().count(), 3);
    }
}
