//! Code-specific lower bounds on the bit-decision probabilities and the
//! resulting upper bound on the single-iteration worst-case DFR.
//!
//! For a column `z`, the unsatisfied-check count of `z` is at most the sum of
//! the overlaps `γ_{z,j}` over the other discrepant positions `j`. Counting
//! the error patterns whose overlap sum stays below the decision margin is a
//! subset-sum counting problem over one row of `Γ`; since the row is a
//! multiset with few distinct values it is solved exactly by recursion over
//! the distinct values.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use num_bigint::BigUint;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::code::{gamma_representative_rows, GammaRow, ParityCheckMatrix};
use crate::error::{Error, Result};
use crate::numerics::{binomial, ratio_to_real, HpReal};

/// `N(y, η, thr)`: how many `η`-element sub-multisets of a `Γ` row sum to at
/// most `thr`. Copies of equal values are distinguishable.
#[derive(Clone, Debug)]
pub struct SubsetCountQuery {
    pub row: GammaRow,
    pub eta: u64,
    pub thr: i64,
}

pub fn count_subsets(query: &SubsetCountQuery) -> BigUint {
    SubsetCounter::new(query.row.clone()).count(query.eta, query.thr)
}

/// Memoized counter for repeated queries against one row.
#[derive(Debug)]
pub struct SubsetCounter {
    /// Distinct values, descending, so that the zero class (if any) is last
    /// and closes the recursion with a single binomial.
    values: Vec<u64>,
    lambdas: Vec<u64>,
    /// `suffix_len[j]`: entries available from class `j` onwards.
    suffix_len: Vec<u64>,
    memo: HashMap<(usize, u64, i64), BigUint>,
    binomials: Vec<Vec<BigUint>>,
}

impl SubsetCounter {
    pub fn new(row: GammaRow) -> Self {
        let mut pairs: Vec<(u64, u64)> = row
            .values()
            .iter()
            .copied()
            .zip(row.multiplicities().iter().copied())
            .collect();
        pairs.reverse();
        let (values, lambdas): (Vec<u64>, Vec<u64>) = pairs.into_iter().unzip();
        let mut suffix_len = vec![0u64; values.len() + 1];
        for j in (0..values.len()).rev() {
            suffix_len[j] = suffix_len[j + 1] + lambdas[j];
        }
        let binomials = vec![Vec::new(); values.len()];
        SubsetCounter {
            values,
            lambdas,
            suffix_len,
            memo: HashMap::new(),
            binomials,
        }
    }

    /// `C(λ_j, k)`, extending the cached row of class `j` on demand.
    fn choose(&mut self, j: usize, k: u64) -> BigUint {
        let lambda = self.lambdas[j];
        if k > lambda {
            return BigUint::zero();
        }
        let row = &mut self.binomials[j];
        if row.is_empty() {
            row.push(BigUint::one());
        }
        while row.len() as u64 <= k {
            let i = row.len() as u64;
            let next = row.last().expect("nonempty") * (lambda - i + 1) / i;
            row.push(next);
        }
        row[k as usize].clone()
    }

    pub fn count(&mut self, eta: u64, thr: i64) -> BigUint {
        self.count_from(0, eta, thr)
    }

    fn count_from(&mut self, j: usize, eta: u64, thr: i64) -> BigUint {
        if thr < 0 || eta > self.suffix_len[j] {
            return BigUint::zero();
        }
        if eta == 0 {
            return BigUint::one();
        }
        // Only the zero class is left.
        if self.values[j] == 0 {
            return self.choose(j, eta);
        }
        if let Some(c) = self.memo.get(&(j, eta, thr)) {
            return c.clone();
        }
        let value = self.values[j];
        let budget = self.lambdas[j].min(eta).min(thr as u64 / value);
        let mut total = BigUint::zero();
        for k in 0..=budget {
            let rest = self.count_from(j + 1, eta - k, thr - (k * value) as i64);
            if !rest.is_zero() {
                total += self.choose(j, k) * rest;
            }
        }
        self.memo.insert((j, eta, thr), total.clone());
        total
    }
}

/// Bound of the single-iteration worst-case DFR at one error weight.
#[derive(Clone, Debug)]
pub struct BoundResult {
    pub t: u64,
    /// `pf1_lower[j - 1]` bounds `P_{f|1}(j)` for `j = 1..=t`.
    pub pf1_lower: Vec<HpReal>,
    /// Bound on `P_{m|0}(t)`.
    pub pm0_lower: HpReal,
    pub dfr_upper: HpReal,
    /// Block whose representative row maximises the `P_{m|0}` bound.
    pub witness_column_class: usize,
}

/// Lower bounds of `P_{f|1}` and `P_{m|0}` for one key and threshold.
#[derive(Debug)]
pub struct CodeBound {
    n: u64,
    v: u64,
    b: u64,
    precision: u32,
    flip_counters: Vec<SubsetCounter>,
    keep_counters: Vec<SubsetCounter>,
    pf1_cache: Vec<HpReal>,
}

impl CodeBound {
    pub fn new(h: &ParityCheckMatrix, b: u64, precision: u32) -> Result<Self> {
        let v = h.v() as u64;
        if b == 0 || b > v {
            return Err(Error::params(format!("threshold {b} outside [1, {v}]")));
        }
        let rows = gamma_representative_rows(h);
        Ok(CodeBound {
            n: h.n() as u64,
            v,
            b,
            precision,
            flip_counters: rows.iter().cloned().map(SubsetCounter::new).collect(),
            keep_counters: rows.into_iter().map(SubsetCounter::new).collect(),
            pf1_cache: Vec::new(),
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    fn ratio(&self, num: &BigUint, den: &BigUint) -> Result<HpReal> {
        ratio_to_real(num, den, self.precision)
    }

    /// `N(γ_z, t̂ - 1, v - b) / C(n - 1, t̂ - 1)` for each block class `z`.
    pub fn pf1_lower_per_class(&mut self, t_hat: u64) -> Result<Vec<HpReal>> {
        if t_hat == 0 || t_hat > self.n {
            return Err(Error::params(format!("residual {t_hat} outside [1, {}]", self.n)));
        }
        let den = binomial(self.n - 1, t_hat - 1);
        let thr = (self.v - self.b) as i64;
        let counts: Vec<BigUint> = self
            .flip_counters
            .iter_mut()
            .map(|c| c.count(t_hat - 1, thr))
            .collect();
        counts.iter().map(|c| self.ratio(c, &den)).collect()
    }

    /// `N(γ_z, t̂, b - 1) / C(n - 1, t̂)` for each block class `z`.
    pub fn pm0_lower_per_class(&mut self, t_hat: u64) -> Result<Vec<HpReal>> {
        if t_hat >= self.n {
            return Err(Error::params(format!("residual {t_hat} outside [0, {}]", self.n - 1)));
        }
        let den = binomial(self.n - 1, t_hat);
        let thr = (self.b - 1) as i64;
        let counts: Vec<BigUint> = self
            .keep_counters
            .iter_mut()
            .map(|c| c.count(t_hat, thr))
            .collect();
        counts.iter().map(|c| self.ratio(c, &den)).collect()
    }

    /// Lower bound on `P_{f|1}(t̂)`: the maximum over block classes.
    pub fn bound_pf1(&mut self, t_hat: u64) -> Result<HpReal> {
        if let Some(v) = t_hat.checked_sub(1).and_then(|i| self.pf1_cache.get(i as usize)) {
            return Ok(v.clone());
        }
        let best = max_of(self.pf1_lower_per_class(t_hat)?).0;
        if t_hat as usize == self.pf1_cache.len() + 1 {
            self.pf1_cache.push(best.clone());
        }
        Ok(best)
    }

    /// Lower bound on `P_{m|0}(t̂)`: the maximum over block classes.
    pub fn bound_pm0(&mut self, t_hat: u64) -> Result<HpReal> {
        Ok(max_of(self.pm0_lower_per_class(t_hat)?).0)
    }

    /// `1 - pm0_lower(t)^{n-t} · ∏_{j=1}^{t} pf1_lower(j)`.
    pub fn code_specific_dfr1(&mut self, t: u64) -> Result<BoundResult> {
        if t == 0 || t >= self.n {
            return Err(Error::params(format!("error weight {t} outside [1, {}]", self.n - 1)));
        }
        let mut pf1_lower = Vec::with_capacity(t as usize);
        let mut product = HpReal::one(self.precision);
        for j in 1..=t {
            let p = self.bound_pf1(j)?;
            product = product.mul(&p);
            pf1_lower.push(p);
        }
        let (pm0_lower, witness) = max_of(self.pm0_lower_per_class(t)?);
        let success = pm0_lower.powi(self.n - t).mul(&product);
        Ok(BoundResult {
            t,
            pf1_lower,
            pm0_lower,
            dfr_upper: success.complement(),
            witness_column_class: witness,
        })
    }
}

/// Largest value and the first index attaining it.
fn max_of(values: Vec<HpReal>) -> (HpReal, usize) {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    (values[best].clone(), best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Decision {
    Accept,
    Reject,
}

/// Weak-key screening outcome. `dfr_log2_upper` is `-inf` (serialized as
/// `null`) when the bound is exactly zero.
#[derive(Clone, Debug, Serialize)]
pub struct ScreenReport {
    pub dfr_log2_upper: f64,
    pub t: u64,
    pub b: u64,
    pub witness_block: usize,
    pub decision: Decision,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl ScreenReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// Accepts the key iff `log2(dfr_upper) ≤ budget_log2`.
pub fn screen_key(h: &ParityCheckMatrix, t: u64, b: u64, budget_log2: f64, precision: u32) -> Result<ScreenReport> {
    let start = Instant::now();
    let res = CodeBound::new(h, b, precision)?.code_specific_dfr1(t)?;
    let log2 = res.dfr_upper.log2();
    let decision = if log2 <= budget_log2 {
        Decision::Accept
    } else {
        Decision::Reject
    };
    Ok(ScreenReport {
        dfr_log2_upper: log2,
        t,
        b,
        witness_block: res.witness_column_class,
        decision,
        elapsed: start.elapsed(),
    })
}
