//! Multiple-choice knapsack over per-ad-line level values.
//!
//! Ad line `k` picks one level `n` in `0..=N`, costing `n` budget units and
//! earning `values[k][n]`. Total cost is capped at `capacity`.
//!
//! Ties are broken deterministically: larger value, then smaller spend, then
//! the lexicographically smallest level vector.

use crate::{Error, Result};

/// Largest instance `solve_bruteforce` will enumerate.
pub const BRUTEFORCE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    values: Vec<Vec<f64>>,
    capacity: usize,
}

impl ValueTable {
    /// `values[k][0]` must be 0; capacity defaults to `N`.
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let cap = values.first().map(|r| r.len().saturating_sub(1)).unwrap_or(0);
        Self::with_capacity(values, cap)
    }

    pub fn with_capacity(values: Vec<Vec<f64>>, capacity: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("value table needs at least one ad line"));
        }
        let width = values[0].len();
        if width < 2 {
            return Err(Error::invalid("value table needs at least one non-zero level"));
        }
        for (k, row) in values.iter().enumerate() {
            if row.len() != width {
                return Err(Error::dims("value table row", width, row.len()));
            }
            if row[0] != 0.0 {
                return Err(Error::invalid(format!("zero-budget value of ad line {} must be 0", k + 1)));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("non-finite value for ad line {}", k + 1)));
            }
        }
        Ok(Self { values, capacity })
    }

    /// Prepends the zero level to `K x N` non-zero level values.
    pub fn from_level_values(levels: &[f64], n_adlines: usize) -> Result<Self> {
        if n_adlines == 0 || !levels.len().is_multiple_of(n_adlines) || levels.is_empty() {
            return Err(Error::invalid("level values do not split evenly across ad lines"));
        }
        let n = levels.len() / n_adlines;
        let rows = levels
            .chunks(n)
            .map(|c| std::iter::once(0.0).chain(c.iter().copied()).collect())
            .collect();
        Self::new(rows)
    }

    pub fn n_adlines(&self) -> usize {
        self.values.len()
    }

    pub fn n_levels(&self) -> usize {
        self.values[0].len() - 1
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn value(&self, k: usize, n: usize) -> f64 {
        self.values[k][n]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    /// Scales every entry by `c`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        let values = self
            .values
            .iter()
            .map(|r| r.iter().map(|v| v * c).collect())
            .collect();
        Self::with_capacity(values, self.capacity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub levels: Vec<usize>,
    pub value: f64,
    pub spend: usize,
}

/// Sum of `values[k][levels[k]]`, accumulated from the last ad line backwards
/// so it matches the DP's association order bit for bit.
pub fn allocation_value(table: &ValueTable, levels: &[usize]) -> f64 {
    levels
        .iter()
        .enumerate()
        .rev()
        .fold(0.0, |acc, (k, &n)| table.values[k][n] + acc)
}

/// `(value, spend)` ordering: larger value first, then smaller spend.
fn better(a: (f64, usize), b: (f64, usize)) -> bool {
    a.0 > b.0 || (a.0 == b.0 && a.1 < b.1)
}

/// Exact DP in `O(K N capacity)`.
pub fn solve(table: &ValueTable) -> Solution {
    let k_total = table.n_adlines();
    let n_max = table.n_levels();
    let cap = table.capacity;
    // best[k][b]: optimum of ad lines k.. with b units left.
    let mut best = vec![vec![(0.0f64, 0usize); cap + 1]; k_total + 1];
    for k in (0..k_total).rev() {
        for b in 0..=cap {
            let mut top = (f64::NEG_INFINITY, usize::MAX);
            for n in 0..=n_max.min(b) {
                let (v, s) = best[k + 1][b - n];
                let cand = (table.values[k][n] + v, s + n);
                if better(cand, top) {
                    top = cand;
                }
            }
            best[k][b] = top;
        }
    }
    let target = best[0][cap];
    let mut levels = Vec::with_capacity(k_total);
    let mut left = cap;
    for k in 0..k_total {
        // Smallest level that still reaches the optimum keeps the vector
        // lexicographically minimal.
        let n = (0..=n_max.min(left))
            .find(|&n| {
                let (v, s) = best[k + 1][left - n];
                table.values[k][n] + v == best[k][left].0 && s + n == best[k][left].1
            })
            .expect("optimum is attained by some level");
        levels.push(n);
        left -= n;
    }
    Solution {
        value: target.0,
        spend: target.1,
        levels,
    }
}

/// Full enumeration with the same tie-break. Test oracle.
pub fn solve_bruteforce(table: &ValueTable) -> Result<Solution> {
    let k_total = table.n_adlines();
    let n_max = table.n_levels();
    let size = (n_max as u128 + 1).checked_pow(k_total as u32).unwrap_or(u128::MAX);
    if size > BRUTEFORCE_LIMIT {
        return Err(Error::TooLarge(size));
    }
    let mut levels = vec![0usize; k_total];
    let mut top: Option<Solution> = None;
    loop {
        let spend: usize = levels.iter().sum();
        if spend <= table.capacity {
            let value = allocation_value(table, &levels);
            // Enumeration is lexicographic, so only strict improvements replace.
            let replace = match &top {
                None => true,
                Some(t) => better((value, spend), (t.value, t.spend)),
            };
            if replace {
                top = Some(Solution {
                    levels: levels.clone(),
                    value,
                    spend,
                });
            }
        }
        let mut k = k_total;
        loop {
            if k == 0 {
                return Ok(top.expect("all-zero allocation is feasible"));
            }
            k -= 1;
            if levels[k] < n_max {
                levels[k] += 1;
                break;
            }
            levels[k] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        let t = ValueTable::new(vec![vec![0.0, 5.0, 3.0], vec![0.0, 2.0, 4.0]]).unwrap();
        let s = solve(&t);
        assert_eq!(s.levels, vec![1, 1]);
        assert_eq!(s.value, 7.0);
        assert_eq!(solve_bruteforce(&t).unwrap(), s);
    }

    #[test]
    fn single_group_prefers_smaller_level_on_ties() {
        let t = ValueTable::new(vec![vec![0.0, 1.0, 3.0, 3.0]]).unwrap();
        assert_eq!(solve(&t).levels, vec![2]);
    }

    #[test]
    fn non_positive_values_give_zero_allocation() {
        let t = ValueTable::new(vec![vec![0.0, -1.0, 0.0], vec![0.0, 0.0, -2.0]]).unwrap();
        let s = solve(&t);
        assert_eq!(s.levels, vec![0, 0]);
        assert_eq!(s.spend, 0);
        assert_eq!(solve_bruteforce(&t).unwrap(), s);
    }

    #[test]
    fn table_validation() {
        assert!(ValueTable::new(vec![vec![1.0, 2.0]]).is_err());
        assert!(ValueTable::new(vec![vec![0.0, f64::NAN]]).is_err());
        assert!(ValueTable::new(vec![vec![0.0, 1.0], vec![0.0]]).is_err());
        let t = ValueTable::from_level_values(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(t.rows(), &[vec![0.0, 1.0, 2.0], vec![0.0, 3.0, 4.0]]);
    }

    #[test]
    fn bruteforce_refuses_large_instances() {
        let t = ValueTable::new(vec![vec![0.0; 11]; 7]).unwrap();
        assert!(matches!(solve_bruteforce(&t), Err(Error::TooLarge(_))));
    }
}
