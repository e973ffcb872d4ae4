//! Randomized in-place bit-flipping (RIP-BF) decoder.
//!
//! Each outer iteration visits all `n` estimated error bits once, in an order
//! fixed at the start of the iteration, and flips bit `j` as soon as its count
//! of unsatisfied parity checks reaches the iteration's threshold. The
//! syndrome is updated in place after every flip, so later evaluations in the
//! same sweep see the effect of earlier ones.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::code::{BitVec, ParityCheckMatrix};
use crate::error::{Error, Result};

/// Order in which an outer iteration visits the bit positions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum PermMode {
    /// A fresh uniformly random permutation per outer iteration.
    #[default]
    Random,
    /// Positions where the estimate agrees with the true error first, then the
    /// discrepant ones (each group ascending). Needs the true error.
    WorstCase,
    /// `0, 1, ..., n-1`.
    Identity,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    thresholds: Vec<usize>,
    perm_mode: PermMode,
}

impl DecoderConfig {
    /// `thresholds[k]` is used by outer iteration `k + 1`; each must lie in
    /// `[⌈v/2⌉, v]`. The number of thresholds is the iteration budget.
    pub fn new(thresholds: Vec<usize>, perm_mode: PermMode, v: usize) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::params("at least one outer iteration is required"));
        }
        let lo = v.div_ceil(2);
        if let Some(&b) = thresholds.iter().find(|&&b| b < lo || b > v) {
            return Err(Error::params(format!(
                "threshold {b} outside [{lo}, {v}]"
            )));
        }
        Ok(DecoderConfig {
            thresholds,
            perm_mode,
        })
    }

    /// The same threshold for all `itermax` iterations.
    pub fn uniform(itermax: usize, b: usize, perm_mode: PermMode, v: usize) -> Result<Self> {
        Self::new(vec![b; itermax], perm_mode, v)
    }

    pub fn itermax(&self) -> usize {
        self.thresholds.len()
    }

    pub fn thresholds(&self) -> &[usize] {
        &self.thresholds
    }

    pub fn perm_mode(&self) -> PermMode {
        self.perm_mode
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecodeOutcome {
    pub e_hat: BitVec,
    pub final_syndrome: BitVec,
    /// `true` iff the final syndrome is zero.
    pub success: bool,
    /// Outer iterations actually executed.
    pub iterations: usize,
    /// Bit evaluations performed (always `iterations · n`).
    pub evaluations: usize,
    /// `w(e ⊕ ê)` after each of the `itermax` slots; slots after an early
    /// exit repeat the last value. Present only when the true error is known.
    pub residual_weight_per_iteration: Option<Vec<usize>>,
}

/// Unsatisfied parity checks of column `j`: `|supp(s) ∩ supp(h_j)|`.
pub fn upc(h: &ParityCheckMatrix, s: &BitVec, j: usize) -> Result<usize> {
    check_syndrome_len(h, s)?;
    let col = h.column_support(j)?;
    Ok(col.into_iter().filter(|&i| s.get(i)).count())
}

/// Toggles `ê_j` and adds column `j` of `H` to the syndrome.
pub fn flip_and_update(
    h: &ParityCheckMatrix,
    s: &BitVec,
    j: usize,
    e_hat: &BitVec,
) -> Result<(BitVec, BitVec)> {
    check_syndrome_len(h, s)?;
    if e_hat.len() != h.n() {
        return Err(Error::LengthMismatch {
            expected: h.n(),
            found: e_hat.len(),
        });
    }
    let col = BitVec::from_support(h.r(), h.column_support(j)?)?;
    let flip = BitVec::from_support(h.n(), vec![j])?;
    Ok((s.xor(&col)?, e_hat.xor(&flip)?))
}

fn check_syndrome_len(h: &ParityCheckMatrix, s: &BitVec) -> Result<()> {
    if s.len() != h.r() {
        return Err(Error::LengthMismatch {
            expected: h.r(),
            found: s.len(),
        });
    }
    Ok(())
}

/// Runs the decoder on syndrome `s`.
///
/// `true_error` enables residual-weight instrumentation and is mandatory in
/// [`PermMode::WorstCase`].
pub fn decode<R: Rng + ?Sized>(
    h: &ParityCheckMatrix,
    s: &BitVec,
    config: &DecoderConfig,
    rng: &mut R,
    true_error: Option<&BitVec>,
) -> Result<DecodeOutcome> {
    check_syndrome_len(h, s)?;
    if let Some(e) = true_error {
        if e.len() != h.n() {
            return Err(Error::LengthMismatch {
                expected: h.n(),
                found: e.len(),
            });
        }
    }
    if config.perm_mode == PermMode::WorstCase && true_error.is_none() {
        return Err(Error::MissingTrueError);
    }

    let n = h.n();
    let p = h.params().p;
    let supports: Vec<&[usize]> = h.blocks().iter().map(|b| b.first_column_support()).collect();
    let truth = true_error.map(BitVec::to_dense);

    let mut syn = s.to_dense();
    let mut syn_weight = s.weight();
    let mut e_hat = vec![0u8; n];
    let mut order: Vec<usize> = (0..n).collect();
    let mut residuals = truth.as_ref().map(|_| Vec::with_capacity(config.itermax()));
    let mut iterations = 0;

    while iterations < config.itermax() && syn_weight > 0 {
        let b = config.thresholds[iterations];
        match config.perm_mode {
            PermMode::Random => order.shuffle(rng),
            PermMode::Identity => {}
            PermMode::WorstCase => {
                let e = truth.as_ref().expect("checked above");
                order.clear();
                order.extend((0..n).filter(|&j| e_hat[j] == e[j]));
                order.extend((0..n).filter(|&j| e_hat[j] != e[j]));
            }
        }
        for &j in &order {
            let support = supports[j / p];
            let shift = j % p;
            let mut count = 0usize;
            for &a in support {
                let i = if a + shift >= p { a + shift - p } else { a + shift };
                count += usize::from(syn[i]);
            }
            if count >= b {
                e_hat[j] ^= 1;
                for &a in support {
                    let i = if a + shift >= p { a + shift - p } else { a + shift };
                    syn[i] ^= 1;
                    if syn[i] == 1 {
                        syn_weight += 1;
                    } else {
                        syn_weight -= 1;
                    }
                }
            }
        }
        iterations += 1;
        if let (Some(r), Some(e)) = (residuals.as_mut(), truth.as_ref()) {
            r.push(e.iter().zip(&e_hat).filter(|(a, b)| a != b).count());
        }
    }

    if let Some(r) = residuals.as_mut() {
        let last = match r.last() {
            Some(&x) => x,
            None => truth.as_ref().map_or(0, |e| e.iter().filter(|&&x| x == 1).count()),
        };
        r.resize(config.itermax(), last);
    }

    Ok(DecodeOutcome {
        e_hat: BitVec::from_dense(&e_hat),
        final_syndrome: BitVec::from_dense(&syn),
        success: syn_weight == 0,
        iterations,
        evaluations: iterations * n,
        residual_weight_per_iteration: residuals,
    })
}
