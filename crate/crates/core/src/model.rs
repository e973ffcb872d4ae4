//! Ensemble worst-case DFR model of the RIP-BF decoder.
//!
//! Bit decisions are modelled as independent events whose probabilities
//! depend only on the current residual weight `t̂ = w(e ⊕ ê)`:
//!
//! * `ρ₁(t̂)`, `ρ₀(t̂)`: probability that a parity check touching position `z`
//!   is unsatisfied given `e_z = 1` (resp. `e_z = 0`), from a hypergeometric
//!   count over a uniformly random weight-`w` row;
//! * `P_{f|1}(t̂) = Pr[Bin(v, ρ₁) ≥ b]` and `P_{m|0}(t̂) = Pr[Bin(v, ρ₀) < b]`,
//!   with complements `P_{m|1}` and `P_{f|0}`.
//!
//! Under the worst-case visiting order (every correctly estimated position
//! first, every discrepant one last) an outer iteration splits into two
//! bidiagonal Markov chains: one over `t̂₀`, the discrepancies created among
//! the correct positions, and one over `t̂₁`, the discrepancies left among
//! the positions that were wrong at the start of the sweep.

use std::sync::OnceLock;

use num_bigint::BigUint;
use num_traits::Zero;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{binomial, hp_pow, ratio_to_real, HpReal, DEFAULT_PRECISION};

/// Which numerator to use for `ρ₀`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Rho0Variant {
    /// `Σ_{l odd} C(w-1, l)·C(n-w, t-l) / C(n-1, t)`: the position under
    /// evaluation is one of the `w` row entries, leaving `w - 1` others.
    #[default]
    Consistent,
    /// `Σ_{l odd} C(w, l)·C(n-w, t-l) / C(n-1, t)`; can exceed 1.
    PaperVerbatim,
}

/// How the two chains of one outer iteration are combined.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Composition {
    /// The `t̂₁` chain starts from the realised `t̂₀` of the first phase.
    #[default]
    Joint,
    /// The `t̂₁` chain ignores the first phase (`t̂₀ = 0` in its rates) and
    /// the two outcomes are convolved.
    Factorized,
}

/// Exact `ρ₁` as `(numerator, denominator)`.
pub fn rho1u_ratio(n: u64, w: u64, t: u64) -> Result<(BigUint, BigUint)> {
    if t == 0 {
        return Err(Error::params("rho1u needs t >= 1 (conditioning on e_z = 1)"));
    }
    if t > n || w > n || w == 0 {
        return Err(Error::params(format!("rho1u needs 1 <= w <= n and t <= n (n={n}, w={w}, t={t})")));
    }
    let mut num = BigUint::zero();
    for l in (0..=(w - 1).min(t - 1)).step_by(2) {
        num += binomial(w - 1, l) * binomial(n - w, t - 1 - l);
    }
    Ok((num, binomial(n - 1, t - 1)))
}

pub fn rho1u(n: u64, w: u64, t: u64, precision: u32) -> Result<HpReal> {
    let (num, den) = rho1u_ratio(n, w, t)?;
    ratio_to_real(&num, &den, precision)
}

/// Exact `ρ₀` as `(numerator, denominator)`; the verbatim variant may exceed 1.
pub fn rho0u_ratio(n: u64, w: u64, t: u64, variant: Rho0Variant) -> Result<(BigUint, BigUint)> {
    if t + 1 > n || w > n || w == 0 {
        return Err(Error::params(format!("rho0u needs 1 <= w <= n and t <= n-1 (n={n}, w={w}, t={t})")));
    }
    let row = match variant {
        Rho0Variant::Consistent => w - 1,
        Rho0Variant::PaperVerbatim => w,
    };
    let mut num = BigUint::zero();
    for l in (1..=row.min(t)).step_by(2) {
        num += binomial(row, l) * binomial(n - w, t - l);
    }
    Ok((num, binomial(n - 1, t)))
}

pub fn rho0u(n: u64, w: u64, t: u64, variant: Rho0Variant, precision: u32) -> Result<HpReal> {
    let (num, den) = rho0u_ratio(n, w, t, variant)?;
    if num > den {
        return Err(Error::ProbabilityOutOfRange(format!(
            "rho0u = {num}/{den} > 1 at n={n}, w={w}, t={t}"
        )));
    }
    ratio_to_real(&num, &den, precision)
}

fn binomial_pmf_terms(v: u64, rho: &HpReal) -> Vec<HpReal> {
    let prec = rho.precision();
    let q = rho.complement();
    let powers = |x: &HpReal| {
        let mut out = vec![HpReal::one(prec)];
        for _ in 0..v {
            let next = out.last().expect("nonempty").mul(x);
            out.push(next);
        }
        out
    };
    let (rp, qp) = (powers(rho), powers(&q));
    (0..=v)
        .map(|u| {
            let c = HpReal::from_biguint(binomial(v, u), prec);
            c.mul(&rp[u as usize]).mul(&qp[(v - u) as usize])
        })
        .collect()
}

/// `P_{f|1} = Σ_{u=b}^{v} C(v,u) ρ^u (1-ρ)^{v-u}`.
pub fn flip_given_1(v: u64, b: u64, rho1: &HpReal) -> HpReal {
    let terms = binomial_pmf_terms(v, rho1);
    let mut acc = HpReal::zero(rho1.precision());
    for t in terms.iter().skip(b as usize) {
        acc = acc.add(t);
    }
    acc
}

/// `P_{m|0} = Σ_{u=0}^{b-1} C(v,u) ρ^u (1-ρ)^{v-u}`.
pub fn maintain_given_0(v: u64, b: u64, rho0: &HpReal) -> HpReal {
    let terms = binomial_pmf_terms(v, rho0);
    let mut acc = HpReal::zero(rho0.precision());
    for t in terms.iter().take(b as usize) {
        acc = acc.add(t);
    }
    acc
}

/// Decision probabilities at one residual weight.
#[derive(Clone, Debug)]
pub struct FlipEntry {
    /// Flip a discrepant bit (a correct decision).
    pub pf1: HpReal,
    /// Keep a discrepant bit.
    pub pm1: HpReal,
    /// Keep a correct bit (a correct decision).
    pub pm0: HpReal,
    /// Flip a correct bit.
    pub pf0: HpReal,
}

/// Lazily evaluated table of [`FlipEntry`] for `t̂ ∈ [0, n]`.
///
/// Conventions at the ends of the range: with `t̂ = 0` nothing can be flipped
/// back (`P_{f|1}(0) = 0`), and with `t̂ = n` no correct bit is left
/// (`P_{m|0}(n) = 1`). Both keep the chain matrices row-stochastic.
pub struct FlipProbabilities {
    n: u64,
    w: u64,
    v: u64,
    b: u64,
    precision: u32,
    variant: Rho0Variant,
    rows: OnceLock<BinomialRows>,
    cache: Vec<OnceLock<FlipEntry>>,
}

/// `C(w, ·)`, `C(w-1, ·)`, `C(n-w, ·)` and `C(n-1, ·)`, shared by every entry.
struct BinomialRows {
    row_w: Vec<BigUint>,
    row_w1: Vec<BigUint>,
    outside: Vec<BigUint>,
    total: Vec<BigUint>,
}

fn binomial_row(m: u64) -> Vec<BigUint> {
    let mut row = Vec::with_capacity(m as usize + 1);
    let mut c = BigUint::from(1u32);
    for k in 0..=m {
        row.push(c.clone());
        c = c * (m - k) / (k + 1);
    }
    row
}

impl std::fmt::Debug for FlipProbabilities {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlipProbabilities")
            .field("n", &self.n)
            .field("w", &self.w)
            .field("v", &self.v)
            .field("b", &self.b)
            .field("precision", &self.precision)
            .field("variant", &self.variant)
            .finish()
    }
}

impl FlipProbabilities {
    pub fn new(n: u64, w: u64, v: u64, b: u64, precision: u32, variant: Rho0Variant) -> Result<Self> {
        if w == 0 || w > n || v == 0 || v > w {
            return Err(Error::params(format!("need 1 <= v <= w <= n (n={n}, w={w}, v={v})")));
        }
        if b > v + 1 {
            return Err(Error::params(format!("threshold {b} exceeds v + 1 = {}", v + 1)));
        }
        Ok(FlipProbabilities {
            n,
            w,
            v,
            b,
            precision,
            variant,
            rows: OnceLock::new(),
            cache: (0..=n).map(|_| OnceLock::new()).collect(),
        })
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn threshold(&self) -> u64 {
        self.b
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    /// Probabilities at residual weight `t̂`.
    pub fn entry(&self, t_hat: u64) -> Result<&FlipEntry> {
        let slot = self.cache.get(t_hat as usize).ok_or(Error::OutOfRange {
            index: t_hat as usize,
            len: self.cache.len(),
        })?;
        if let Some(e) = slot.get() {
            return Ok(e);
        }
        let e = self.compute(t_hat)?;
        Ok(slot.get_or_init(|| e))
    }

    fn rows(&self) -> &BinomialRows {
        self.rows.get_or_init(|| BinomialRows {
            row_w: binomial_row(self.w),
            row_w1: binomial_row(self.w - 1),
            outside: binomial_row(self.n - self.w),
            total: binomial_row(self.n - 1),
        })
    }

    /// Same values as [`rho1u_ratio`], from the cached rows.
    fn rho1_ratio(&self, t: u64) -> (BigUint, BigUint) {
        let rows = self.rows();
        let mut num = BigUint::zero();
        for l in (0..=(self.w - 1).min(t - 1)).step_by(2) {
            if let Some(c) = rows.outside.get((t - 1 - l) as usize) {
                num += &rows.row_w1[l as usize] * c;
            }
        }
        (num, rows.total[(t - 1) as usize].clone())
    }

    /// Same values as [`rho0u_ratio`], from the cached rows.
    fn rho0_ratio(&self, t: u64) -> (BigUint, BigUint) {
        let rows = self.rows();
        let row = match self.variant {
            Rho0Variant::Consistent => &rows.row_w1,
            Rho0Variant::PaperVerbatim => &rows.row_w,
        };
        let mut num = BigUint::zero();
        for l in (1..=(row.len() as u64 - 1).min(t)).step_by(2) {
            if let Some(c) = rows.outside.get((t - l) as usize) {
                num += &row[l as usize] * c;
            }
        }
        (num, rows.total[t as usize].clone())
    }

    fn compute(&self, t_hat: u64) -> Result<FlipEntry> {
        let prec = self.precision;
        let (pf1, pm1) = if t_hat == 0 {
            (HpReal::zero(prec), HpReal::one(prec))
        } else {
            let (num, den) = self.rho1_ratio(t_hat);
            let pf1 = flip_given_1(self.v, self.b, &ratio_to_real(&num, &den, prec)?);
            let pm1 = pf1.complement();
            (pf1, pm1)
        };
        let (pm0, pf0) = if t_hat == self.n {
            (HpReal::one(prec), HpReal::zero(prec))
        } else {
            let (num, den) = self.rho0_ratio(t_hat);
            if num > den {
                return Err(Error::ProbabilityOutOfRange(format!(
                    "rho0u = {num}/{den} > 1 at n={}, w={}, t={t_hat}",
                    self.n, self.w
                )));
            }
            let pm0 = maintain_given_0(self.v, self.b, &ratio_to_real(&num, &den, prec)?);
            let pf0 = pm0.complement();
            (pm0, pf0)
        };
        Ok(FlipEntry { pf1, pm1, pm0, pf0 })
    }

    pub fn pf1(&self, t_hat: u64) -> Result<HpReal> {
        Ok(self.entry(t_hat)?.pf1.clone())
    }

    pub fn pm0(&self, t_hat: u64) -> Result<HpReal> {
        Ok(self.entry(t_hat)?.pm0.clone())
    }

    /// Checks `P_{f|1}(t̂) ≥ P_{f|1}(t̂+1)` on `[1, upto)` and
    /// `P_{m|0}(t̂) ≥ P_{m|0}(t̂+1)` on `[0, upto)`.
    pub fn check_monotone(&self, upto: u64) -> Result<()> {
        let upto = upto.min(self.n);
        for t in 0..upto {
            let (a, b) = (self.entry(t)?, self.entry(t + 1)?);
            if b.pm0 > a.pm0 || (t >= 1 && b.pf1 > a.pf1) {
                return Err(Error::NonMonotone(t as usize));
            }
        }
        Ok(())
    }
}

/// Probability vector over the contiguous state range `offset..offset+len`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDistribution {
    offset: usize,
    probs: Vec<HpReal>,
}

impl StateDistribution {
    pub fn point(state: usize, precision: u32) -> Self {
        StateDistribution {
            offset: state,
            probs: vec![HpReal::one(precision)],
        }
    }

    /// Builds a distribution from dense probabilities starting at state 0.
    pub fn from_dense(probs: Vec<HpReal>) -> Self {
        StateDistribution { offset: 0, probs }
    }

    /// Probability of `state` (zero outside the stored range).
    pub fn get(&self, state: usize) -> HpReal {
        state
            .checked_sub(self.offset)
            .and_then(|i| self.probs.get(i))
            .cloned()
            .unwrap_or_else(|| HpReal::zero(self.precision()))
    }

    pub fn precision(&self) -> u32 {
        self.probs.first().map_or(DEFAULT_PRECISION, HpReal::precision)
    }

    /// Lowest and highest stored state.
    pub fn range(&self) -> (usize, usize) {
        (self.offset, self.offset + self.probs.len().saturating_sub(1))
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &HpReal)> {
        self.probs.iter().enumerate().map(move |(i, p)| (self.offset + i, p))
    }

    pub fn total(&self) -> HpReal {
        self.probs
            .iter()
            .fold(HpReal::zero(self.precision()), |acc, p| acc.add(p))
    }

    /// Drops leading and trailing states whose probability is below `cutoff`.
    pub fn prune(&mut self, cutoff: &HpReal) {
        while self.probs.len() > 1 && self.probs.last().is_some_and(|p| p < cutoff) {
            self.probs.pop();
        }
        let lead = self
            .probs
            .iter()
            .take(self.probs.len() - 1)
            .take_while(|p| *p < cutoff)
            .count();
        if lead > 0 {
            self.probs.drain(..lead);
            self.offset += lead;
        }
    }
}

/// Direction of the off-diagonal move of a bidiagonal chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Drift {
    /// `i → i + 1` (the `t̂₀` chain).
    Up,
    /// `i → i - 1` (the `t̂₁` chain).
    Down,
}

/// One step of a bidiagonal chain; `rates(i)` gives `(stay, move)` for state `i`.
fn chain_step<F>(dist: &StateDistribution, drift: Drift, max_state: usize, mut rates: F) -> Result<StateDistribution>
where
    F: FnMut(usize) -> Result<(HpReal, HpReal)>,
{
    let prec = dist.precision();
    let (lo, hi) = dist.range();
    let (new_lo, new_hi) = match drift {
        Drift::Up => (lo, (hi + 1).min(max_state)),
        Drift::Down => (lo.saturating_sub(1), hi),
    };
    let mut out = vec![HpReal::zero(prec); new_hi - new_lo + 1];
    for (state, p) in dist.iter() {
        if p.is_zero() {
            continue;
        }
        let (stay, mv) = rates(state)?;
        let slot = state - new_lo;
        out[slot] = out[slot].add(&p.mul(&stay));
        let target = match drift {
            Drift::Up if state < max_state => Some(state + 1),
            Drift::Down if state > 0 => Some(state - 1),
            _ => None,
        };
        if let Some(t) = target {
            if !mv.is_zero() {
                out[t - new_lo] = out[t - new_lo].add(&p.mul(&mv));
            }
        }
    }
    Ok(StateDistribution {
        offset: new_lo,
        probs: out,
    })
}

/// Square bidiagonal row-stochastic matrix.
#[derive(Clone, Debug)]
pub struct TransitionMatrix {
    drift: Drift,
    /// Self-loop probability of each state.
    pub diag: Vec<HpReal>,
    /// `off[i]`: probability of leaving state `i` along the drift.
    pub off: Vec<HpReal>,
}

impl TransitionMatrix {
    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn drift(&self) -> Drift {
        self.drift
    }

    /// Entry `(row, col)`.
    pub fn entry(&self, row: usize, col: usize) -> HpReal {
        let prec = self.diag[0].precision();
        if row == col {
            return self.diag[row].clone();
        }
        let adjacent = match self.drift {
            Drift::Up => col == row + 1,
            Drift::Down => row == col + 1,
        };
        if adjacent {
            self.off[row].clone()
        } else {
            HpReal::zero(prec)
        }
    }

    /// Largest `|row sum - 1|`.
    pub fn max_row_defect(&self) -> f64 {
        self.diag
            .iter()
            .zip(&self.off)
            .map(|(d, o)| d.add(o).sub(&HpReal::one(d.precision())).to_f64().abs())
            .fold(0.0, f64::max)
    }

    /// `dist · K`.
    pub fn apply(&self, dist: &StateDistribution) -> Result<StateDistribution> {
        chain_step(dist, self.drift, self.dim() - 1, |i| {
            Ok((self.diag[i].clone(), self.off[i].clone()))
        })
    }
}

/// `K₀` for a sweep starting with residual `t̂`: dimension `n - t̂ + 1`,
/// diagonal `P_{m|0}(t̂+i)`, superdiagonal `P_{f|0}(t̂+i)`.
pub fn build_k0(t_hat: u64, probs: &FlipProbabilities) -> Result<TransitionMatrix> {
    let n = probs.n();
    if t_hat > n {
        return Err(Error::params(format!("residual {t_hat} exceeds n = {n}")));
    }
    let dim = (n - t_hat + 1) as usize;
    let mut diag = Vec::with_capacity(dim);
    let mut off = Vec::with_capacity(dim);
    for i in 0..dim as u64 {
        let e = probs.entry(t_hat + i)?;
        diag.push(e.pm0.clone());
        off.push(e.pf0.clone());
    }
    Ok(TransitionMatrix {
        drift: Drift::Up,
        diag,
        off,
    })
}

/// `K₁` over `t̂₁ ∈ [0, t1_init]`: state `k` flips down with
/// `P_{f|1}(t* - t1_init + k)` and stays with `P_{m|1}(·)`.
pub fn build_k1(t1_init: u64, t_star: u64, probs: &FlipProbabilities) -> Result<TransitionMatrix> {
    if t_star < t1_init || t_star > probs.n() {
        return Err(Error::params(format!(
            "need t1_init <= t* <= n (t1_init={t1_init}, t*={t_star})"
        )));
    }
    let base = t_star - t1_init;
    let mut diag = Vec::new();
    let mut off = Vec::new();
    for k in 0..=t1_init {
        let e = probs.entry(base + k)?;
        diag.push(e.pm1.clone());
        off.push(e.pf1.clone());
    }
    Ok(TransitionMatrix {
        drift: Drift::Down,
        diag,
        off,
    })
}

/// Truncation applied while evolving chains.
#[derive(Clone, Debug)]
pub struct ChainOptions {
    /// States at the edge of the support with less mass than this are dropped
    /// after every step. `None` keeps every state.
    pub prune_below: Option<HpReal>,
    /// Residual states at or above this level are merged into one absorbing
    /// state, counted as a decoding failure. `None` keeps every state.
    pub overflow_at: Option<usize>,
}

impl ChainOptions {
    pub fn exact() -> Self {
        ChainOptions {
            prune_below: None,
            overflow_at: None,
        }
    }

    /// Drops edge states below `2^-(precision + 64)`.
    pub fn for_precision(precision: u32) -> Self {
        ChainOptions {
            prune_below: Some(HpReal::one(precision).mul_pow2(-(i64::from(precision) + 64))),
            overflow_at: None,
        }
    }

    fn is_overflow(&self, state: usize) -> bool {
        self.overflow_at.is_some_and(|l| state >= l)
    }
}

/// Distribution of `t̂₀` after the `n - ω` correct positions of a worst-case
/// sweep starting with residual `ω`; state `i` means residual `ω + i`.
pub fn distribution_after_e0(omega: u64, probs: &FlipProbabilities, opts: &ChainOptions) -> Result<StateDistribution> {
    let n = probs.n();
    if omega > n {
        return Err(Error::params(format!("residual {omega} exceeds n = {n}")));
    }
    let steps = n - omega;
    let max_state = opts.overflow_at.map_or(steps as usize, |l| l.min(steps as usize));
    let prec = probs.precision();
    let mut dist = StateDistribution::point(0, prec);
    for _ in 0..steps {
        dist = chain_step(&dist, Drift::Up, max_state, |i| {
            if opts.is_overflow(i) {
                return Ok((HpReal::one(prec), HpReal::zero(prec)));
            }
            let e = probs.entry(omega + i as u64)?;
            Ok((e.pm0.clone(), e.pf0.clone()))
        })?;
        if let Some(c) = &opts.prune_below {
            dist.prune(c);
        }
    }
    Ok(dist)
}

/// Distribution of `t̂₁` after the `t1_init` discrepant positions of a sweep,
/// entered with total residual `t*`; state `k` means residual `t* - t1_init + k`.
pub fn distribution_after_e1(
    t1_init: u64,
    t_star: u64,
    probs: &FlipProbabilities,
    opts: &ChainOptions,
) -> Result<StateDistribution> {
    if t_star < t1_init || t_star > probs.n() {
        return Err(Error::params(format!(
            "need t1_init <= t* <= n (t1_init={t1_init}, t*={t_star})"
        )));
    }
    let base = t_star - t1_init;
    let mut dist = StateDistribution::point(t1_init as usize, probs.precision());
    for _ in 0..t1_init {
        dist = chain_step(&dist, Drift::Down, t1_init as usize, |k| {
            let e = probs.entry(base + k as u64)?;
            Ok((e.pm1.clone(), e.pf1.clone()))
        })?;
        if let Some(c) = &opts.prune_below {
            dist.prune(c);
        }
    }
    Ok(dist)
}

/// Distribution of the residual weight after one worst-case outer iteration
/// that starts with residual `ω`. A zero residual is absorbing, and so is the
/// overflow state when one is configured.
pub fn one_iteration_transition(
    omega: u64,
    probs: &FlipProbabilities,
    mode: Composition,
    opts: &ChainOptions,
) -> Result<StateDistribution> {
    let prec = probs.precision();
    if omega == 0 {
        return Ok(StateDistribution::point(0, prec));
    }
    if let Some(l) = opts.overflow_at.filter(|&l| omega as usize >= l) {
        return Ok(StateDistribution::point(l, prec));
    }
    let e0 = distribution_after_e0(omega, probs, opts)?;
    let (_, hi0) = e0.range();
    let top = opts
        .overflow_at
        .map_or(hi0 + omega as usize, |l| l.min(hi0 + omega as usize));
    let mut out = vec![HpReal::zero(prec); top + 1];
    let factorized = match mode {
        Composition::Factorized => Some(distribution_after_e1(omega, omega, probs, opts)?),
        Composition::Joint => None,
    };
    for (x0, p0) in e0.iter() {
        if p0.is_zero() {
            continue;
        }
        if opts.is_overflow(x0) {
            out[top] = out[top].add(p0);
            continue;
        }
        let joint;
        let e1 = match &factorized {
            Some(d) => d,
            None => {
                joint = distribution_after_e1(omega, x0 as u64 + omega, probs, opts)?;
                &joint
            }
        };
        for (k, p1) in e1.iter() {
            let x = (x0 + k).min(top);
            out[x] = out[x].add(&p0.mul(p1));
        }
    }
    let mut dist = StateDistribution {
        offset: 0,
        probs: out,
    };
    if let Some(c) = &opts.prune_below {
        dist.prune(c);
    }
    Ok(dist)
}

/// `Pr{ω →₁ 0} = P_{m|0}(ω)^{n-ω} · ∏_{j=1}^{ω} P_{f|1}(j)`.
pub fn single_sweep_success(omega: u64, probs: &FlipProbabilities) -> Result<HpReal> {
    let n = probs.n();
    if omega > n {
        return Err(Error::params(format!("residual {omega} exceeds n = {n}")));
    }
    let mut acc = probs.entry(omega)?.pm0.powi(n - omega);
    for j in 1..=omega {
        acc = acc.mul(&probs.entry(j)?.pf1);
    }
    Ok(acc)
}

/// `β(π)`: probability that a sweep visiting the discrepant positions at the
/// given (strictly increasing) slots of the order decides every bit correctly.
pub fn success_probability_for_order(positions: &[usize], n: usize, probs: &FlipProbabilities) -> Result<HpReal> {
    if positions.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::params("discrepancy positions must be strictly increasing"));
    }
    if let Some(&last) = positions.last() {
        if last >= n {
            return Err(Error::OutOfRange { index: last, len: n });
        }
    }
    let t_hat = positions.len() as u64;
    let mut acc = HpReal::one(probs.precision());
    let mut prev: Option<usize> = None;
    for (j, &u) in positions.iter().enumerate() {
        let residual = t_hat - j as u64;
        let run = match prev {
            None => u,
            Some(p) => u - p - 1,
        };
        let e = probs.entry(residual)?;
        acc = acc.mul(&e.pm0.powi(run as u64)).mul(&e.pf1);
        prev = Some(u);
    }
    let tail = match prev {
        None => n,
        Some(p) => n - 1 - p,
    };
    Ok(acc.mul(&probs.entry(0)?.pm0.powi(tail as u64)))
}

/// Code-family parameters of the model.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EnsembleParams {
    pub n: u64,
    pub w: u64,
    pub v: u64,
    /// Threshold of each outer iteration; its length is `itermax`.
    pub thresholds: Vec<u64>,
}

impl EnsembleParams {
    /// Parameters of an `n0`-block QC code with circulant size `p` and column
    /// weight `v`, decoded for `itermax` iterations at threshold `b`.
    pub fn qc(n0: u64, p: u64, v: u64, b: u64, itermax: usize) -> Self {
        EnsembleParams {
            n: n0 * p,
            w: n0 * v,
            v,
            thresholds: vec![b; itermax],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::params("at least one iteration is required"));
        }
        let lo = self.v.div_ceil(2);
        if let Some(b) = self.thresholds.iter().find(|&&b| b < lo || b > self.v) {
            return Err(Error::params(format!("threshold {b} outside [{lo}, {}]", self.v)));
        }
        Ok(())
    }
}

/// The ensemble DFR model for fixed code and decoder parameters.
#[derive(Debug)]
pub struct EnsembleModel {
    params: EnsembleParams,
    precision: u32,
    tables: Vec<FlipProbabilities>,
    /// `tables[iteration_table[k]]` serves outer iteration `k`.
    iteration_table: Vec<usize>,
    options: ChainOptions,
}

impl EnsembleModel {
    pub fn new(params: EnsembleParams, precision: u32) -> Result<Self> {
        Self::with_variant(params, precision, Rho0Variant::Consistent)
    }

    pub fn with_variant(params: EnsembleParams, precision: u32, variant: Rho0Variant) -> Result<Self> {
        params.validate()?;
        let mut distinct: Vec<u64> = Vec::new();
        let mut iteration_table = Vec::new();
        for &b in &params.thresholds {
            let idx = distinct.iter().position(|&x| x == b).unwrap_or_else(|| {
                distinct.push(b);
                distinct.len() - 1
            });
            iteration_table.push(idx);
        }
        let tables = distinct
            .iter()
            .map(|&b| FlipProbabilities::new(params.n, params.w, params.v, b, precision, variant))
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleModel {
            params,
            precision,
            tables,
            iteration_table,
            options: ChainOptions::for_precision(precision),
        })
    }

    pub fn params(&self) -> &EnsembleParams {
        &self.params
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn set_chain_options(&mut self, options: ChainOptions) {
        self.options = options;
    }

    /// Probability table used by outer iteration `k` (0-based).
    pub fn probabilities(&self, k: usize) -> &FlipProbabilities {
        &self.tables[self.iteration_table[k]]
    }

    fn itermax(&self) -> usize {
        self.params.thresholds.len()
    }

    fn check_t(&self, t: u64) -> Result<()> {
        if t > self.params.n {
            return Err(Error::params(format!("error weight {t} exceeds n = {}", self.params.n)));
        }
        Ok(())
    }

    /// `DFR₁* = 1 - P_{m|0}(t)^{n-t} · ∏_{j=1}^{t} P_{f|1}(j)` (first-iteration table).
    pub fn dfr1_star(&self, t: u64) -> Result<HpReal> {
        self.check_t(t)?;
        let probs = self.probabilities(0);
        probs.check_monotone(t)?;
        Ok(single_sweep_success(t, probs)?.complement())
    }

    /// `DFR₁ ≈ 1 - (∏_{j=1}^{t} P_{m|0}(j))^d · ∏_{l=1}^{t} P_{f|1}(l)` with
    /// `d = (n - t)/(t + 1)`, the mean run of correct positions between two
    /// discrepant ones under a random order.
    pub fn dfr1_avg(&self, t: u64) -> Result<HpReal> {
        if t == 0 {
            return Err(Error::params("dfr1_avg needs t >= 1"));
        }
        self.check_t(t)?;
        let probs = self.probabilities(0);
        probs.check_monotone(t)?;
        let prec = self.precision;
        let mut maintain = HpReal::one(prec);
        let mut flip = HpReal::one(prec);
        for j in 1..=t {
            let e = probs.entry(j)?;
            maintain = maintain.mul(&e.pm0);
            flip = flip.mul(&e.pf1);
        }
        let d = HpReal::from_ratio(self.params.n - t, t + 1, prec)?;
        let success = if maintain.is_zero() {
            maintain
        } else {
            hp_pow(&maintain, &d)?.mul(&flip)
        };
        Ok(success.complement())
    }

    /// Residual level from which the model stops tracking states.
    ///
    /// Returns the smallest `L > t` such that, for every iteration table, a
    /// sweep entered at residual `L` creates at most `L` new discrepancies with
    /// probability below `2^-(precision + 64)` (Chernoff bound on
    /// `Bin(n - L, P_{f|0}(L))`, a lower bound on the created discrepancies).
    /// Residuals never drop below the number of created discrepancies, so mass
    /// merged at `L` is counted as failure, which can only raise the DFR.
    /// `None` when no such level exists below `n`.
    pub fn overflow_level(&self, t: u64) -> Result<Option<usize>> {
        let n = self.params.n;
        let target = f64::from(self.precision + 64) * std::f64::consts::LN_2;
        for l in t + 1..n {
            let trials = (n - l) as f64;
            let a = l as f64 / trials;
            let mut worst = f64::INFINITY;
            for probs in &self.tables {
                let p = probs.entry(l)?.pf0.to_f64();
                let exponent = if a < p && p < 1.0 {
                    trials * (a * (a / p).ln() + (1.0 - a) * ((1.0 - a) / (1.0 - p)).ln())
                } else {
                    0.0
                };
                worst = worst.min(exponent);
            }
            if worst >= target {
                return Ok(Some(l as usize));
            }
        }
        Ok(None)
    }

    /// Worst-case DFR after all configured iterations.
    ///
    /// Iterations before the last propagate the residual distribution through
    /// [`one_iteration_transition`]; residual discrepancies of later
    /// iterations are all treated as flip-type positions visited last. The
    /// last iteration contributes only its success probability. Residuals
    /// reaching [`EnsembleModel::overflow_level`] count as failures.
    pub fn multi_iteration_dfr(&self, t: u64, mode: Composition) -> Result<HpReal> {
        self.check_t(t)?;
        self.probabilities(0).check_monotone(t)?;
        let prec = self.precision;
        let mut opts = self.options.clone();
        if self.itermax() > 1 && opts.overflow_at.is_none() {
            opts.overflow_at = self.overflow_level(t)?;
        }
        let mut dist = StateDistribution::point(t as usize, prec);
        for k in 0..self.itermax() - 1 {
            let probs = self.probabilities(k);
            let steps = dist
                .iter()
                .filter(|(_, p)| !p.is_zero())
                .map(|(omega, p)| (omega, p.clone()))
                .collect::<Vec<_>>()
                .into_par_iter()
                .map(|(omega, p)| Ok((p, one_iteration_transition(omega as u64, probs, mode, &opts)?)))
                .collect::<Result<Vec<_>>>()?;
            let mut next: Vec<HpReal> = Vec::new();
            for (p, step) in steps {
                let (_, hi) = step.range();
                if next.len() <= hi {
                    next.resize(hi + 1, HpReal::zero(prec));
                }
                for (x, q) in step.iter() {
                    next[x] = next[x].add(&p.mul(q));
                }
            }
            dist = StateDistribution::from_dense(next);
            if let Some(c) = &opts.prune_below {
                dist.prune(c);
            }
        }
        let last = self.probabilities(self.itermax() - 1);
        let mut success = HpReal::zero(prec);
        for (omega, p) in dist.iter() {
            if p.is_zero() || opts.is_overflow(omega) {
                continue;
            }
            success = success.add(&p.mul(&single_sweep_success(omega as u64, last)?));
        }
        Ok(success.complement())
    }
}
