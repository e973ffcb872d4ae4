//! Quasi-cyclic `(v, w)`-regular parity-check matrices and sparse binary
//! vectors.
//!
//! A key `H = [H_0, ..., H_{n0-1}]` is stored as the first-column supports of
//! its `n0` circulant blocks. Column `j` lives in block `⌊j/p⌋` and is the
//! block's first column cyclically shifted down by `j mod p`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Structural parameters of a QC code with `n0` circulant blocks of size `p`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeParams {
    pub n0: usize,
    pub p: usize,
    /// Column weight of every circulant block.
    pub v: usize,
}

impl CodeParams {
    pub fn new(n0: usize, p: usize, v: usize) -> Result<Self> {
        let params = CodeParams { n0, p, v };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n0 == 0 {
            return Err(Error::params("n0 must be at least 1"));
        }
        if self.v == 0 {
            return Err(Error::params("column weight v must be at least 1"));
        }
        if self.v > self.p {
            return Err(Error::params(format!(
                "column weight v = {} exceeds circulant size p = {}",
                self.v, self.p
            )));
        }
        Ok(())
    }

    /// Code length.
    pub fn n(&self) -> usize {
        self.n0 * self.p
    }

    /// Redundancy (number of parity checks).
    pub fn r(&self) -> usize {
        self.p
    }

    /// Row weight.
    pub fn w(&self) -> usize {
        self.n0 * self.v
    }

    /// Code dimension.
    pub fn k(&self) -> usize {
        (self.n0 - 1) * self.p
    }
}

/// A `p × p` binary circulant matrix given by the support of its first column.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CirculantBlock {
    p: usize,
    support: Vec<usize>,
}

impl CirculantBlock {
    pub fn new(p: usize, mut support: Vec<usize>) -> Result<Self> {
        support.sort_unstable();
        if support.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Malformed("repeated entry in circulant support".into()));
        }
        if let Some(&last) = support.last() {
            if last >= p {
                return Err(Error::OutOfRange { index: last, len: p });
            }
        }
        Ok(CirculantBlock { p, support })
    }

    pub fn size(&self) -> usize {
        self.p
    }

    pub fn first_column_support(&self) -> &[usize] {
        &self.support
    }

    pub fn weight(&self) -> usize {
        self.support.len()
    }

    /// Support of column `shift` of the block (unsorted).
    pub fn column(&self, shift: usize) -> impl Iterator<Item = usize> + '_ {
        let p = self.p;
        self.support.iter().map(move |&a| {
            let x = a + shift;
            if x >= p {
                x - p
            } else {
                x
            }
        })
    }
}

/// The private parity-check matrix `H`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParityCheckMatrix {
    params: CodeParams,
    blocks: Vec<CirculantBlock>,
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    n0: usize,
    p: usize,
    v: usize,
    blocks: Vec<Vec<usize>>,
}

impl ParityCheckMatrix {
    pub fn from_blocks(params: CodeParams, blocks: Vec<CirculantBlock>) -> Result<Self> {
        params.validate()?;
        if blocks.len() != params.n0 {
            return Err(Error::LengthMismatch {
                expected: params.n0,
                found: blocks.len(),
            });
        }
        for b in &blocks {
            if b.size() != params.p || b.weight() != params.v {
                return Err(Error::Malformed(format!(
                    "block of size {} and weight {} does not match p = {}, v = {}",
                    b.size(),
                    b.weight(),
                    params.p,
                    params.v
                )));
            }
        }
        Ok(ParityCheckMatrix { params, blocks })
    }

    /// Builds a key directly from first-column supports.
    pub fn from_supports(params: CodeParams, supports: Vec<Vec<usize>>) -> Result<Self> {
        let blocks = supports
            .into_iter()
            .map(|s| CirculantBlock::new(params.p, s))
            .collect::<Result<Vec<_>>>()?;
        Self::from_blocks(params, blocks)
    }

    pub fn params(&self) -> &CodeParams {
        &self.params
    }

    pub fn blocks(&self) -> &[CirculantBlock] {
        &self.blocks
    }

    pub fn n(&self) -> usize {
        self.params.n()
    }

    pub fn r(&self) -> usize {
        self.params.r()
    }

    pub fn v(&self) -> usize {
        self.params.v
    }

    /// Row indices of the nonzero entries of column `j`.
    pub fn column_support(&self, j: usize) -> Result<Vec<usize>> {
        if j >= self.n() {
            return Err(Error::OutOfRange {
                index: j,
                len: self.n(),
            });
        }
        Ok(self.column_iter(j).collect())
    }

    /// Unchecked column iterator for hot loops; `j < n` is the caller's duty.
    #[inline]
    pub(crate) fn column_iter(&self, j: usize) -> impl Iterator<Item = usize> + '_ {
        let p = self.params.p;
        self.blocks[j / p].column(j % p)
    }

    /// Whether `H_0` is invertible over `GF(2)[x]/(x^p - 1)`.
    ///
    /// Informational only. Decided by the parity test (an even-weight
    /// polynomial is divisible by `x + 1`) followed by a gcd over GF(2).
    pub fn h0_invertible(&self) -> bool {
        let p = self.params.p;
        let support = self.blocks[0].first_column_support();
        if support.len().is_multiple_of(2) {
            return false;
        }
        let mut a = vec![0u8; p + 1];
        a[0] = 1;
        a[p] = 1;
        let mut b = vec![0u8; p];
        for &i in support {
            b[i] = 1;
        }
        gf2_poly_gcd_is_one(a, b)
    }

    /// Dense `r × n` expansion (row-major, one byte per entry). Test-scale only.
    #[allow(clippy::needless_range_loop)]
    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let mut rows = vec![vec![0u8; self.n()]; self.r()];
        for j in 0..self.n() {
            for i in self.column_iter(j) {
                rows[i][j] = 1;
            }
        }
        rows
    }

    pub fn to_json(&self) -> Result<String> {
        let f = KeyFile {
            n0: self.params.n0,
            p: self.params.p,
            v: self.params.v,
            blocks: self.blocks.iter().map(|b| b.support.clone()).collect(),
        };
        Ok(serde_json::to_string(&f)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: KeyFile = serde_json::from_str(s)?;
        let params = CodeParams::new(f.n0, f.p, f.v)?;
        for b in &f.blocks {
            if b.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Malformed("block supports must be strictly increasing".into()));
            }
        }
        Self::from_supports(params, f.blocks)
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let mut s = self.to_json()?;
        s.push('\n');
        fs::write(path, s)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path)?;
        Self::from_json(&s)
    }
}

fn gf2_poly_gcd_is_one(mut a: Vec<u8>, mut b: Vec<u8>) -> bool {
    fn trim(x: &mut Vec<u8>) {
        while x.last() == Some(&0) {
            x.pop();
        }
    }
    trim(&mut a);
    trim(&mut b);
    while !b.is_empty() {
        // a <- a mod b
        while a.len() >= b.len() {
            let shift = a.len() - b.len();
            for (i, &bit) in b.iter().enumerate() {
                a[i + shift] ^= bit;
            }
            trim(&mut a);
        }
        std::mem::swap(&mut a, &mut b);
    }
    a.len() == 1
}

/// Draws a key with independently uniform weight-`v` first-column supports.
///
/// Randomness comes from `ChaCha8Rng::seed_from_u64(seed)`; support entries
/// are drawn uniformly in `[0, p)` and duplicates are re-drawn.
pub fn keygen(params: CodeParams, seed: u64) -> Result<ParityCheckMatrix> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut supports = Vec::with_capacity(params.n0);
    for _ in 0..params.n0 {
        let mut s: Vec<usize> = Vec::with_capacity(params.v);
        while s.len() < params.v {
            let x = rng.gen_range(0..params.p);
            if !s.contains(&x) {
                s.push(x);
            }
        }
        s.sort_unstable();
        supports.push(s);
    }
    ParityCheckMatrix::from_supports(params, supports)
}

/// Sparse binary vector: a length and the sorted set of asserted positions.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitVec {
    len: usize,
    support: Vec<usize>,
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        BitVec {
            len,
            support: Vec::new(),
        }
    }

    pub fn from_support(len: usize, mut support: Vec<usize>) -> Result<Self> {
        support.sort_unstable();
        support.dedup();
        if let Some(&last) = support.last() {
            if last >= len {
                return Err(Error::OutOfRange { index: last, len });
            }
        }
        Ok(BitVec { len, support })
    }

    pub fn from_dense(bits: &[u8]) -> Self {
        let support = bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b & 1 == 1)
            .map(|(i, _)| i)
            .collect();
        BitVec {
            len: bits.len(),
            support,
        }
    }

    pub fn to_dense(&self) -> Vec<u8> {
        let mut d = vec![0u8; self.len];
        for &i in &self.support {
            d[i] = 1;
        }
        d
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn weight(&self) -> usize {
        self.support.len()
    }

    pub fn get(&self, i: usize) -> bool {
        self.support.binary_search(&i).is_ok()
    }

    pub fn xor(&self, other: &BitVec) -> Result<BitVec> {
        if self.len != other.len {
            return Err(Error::LengthMismatch {
                expected: self.len,
                found: other.len,
            });
        }
        let (a, b) = (&self.support, &other.support);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::with_capacity(a.len() + b.len());
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => {
                    out.push(a[i]);
                    i += 1;
                }
                std::cmp::Ordering::Greater => {
                    out.push(b[j]);
                    j += 1;
                }
                std::cmp::Ordering::Equal => {
                    i += 1;
                    j += 1;
                }
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        Ok(BitVec {
            len: self.len,
            support: out,
        })
    }
}

/// `s = e·Hᵀ`.
pub fn syndrome(h: &ParityCheckMatrix, e: &BitVec) -> Result<BitVec> {
    if e.len() != h.n() {
        return Err(Error::LengthMismatch {
            expected: h.n(),
            found: e.len(),
        });
    }
    let mut dense = vec![0u8; h.r()];
    for &j in e.support() {
        for i in h.column_iter(j) {
            dense[i] ^= 1;
        }
    }
    Ok(BitVec::from_dense(&dense))
}

/// Uniformly random weight-`t` vector of length `n`.
pub fn sample_error<R: Rng + ?Sized>(n: usize, t: usize, rng: &mut R) -> Result<BitVec> {
    if t > n {
        return Err(Error::params(format!("error weight {t} exceeds length {n}")));
    }
    let support = index::sample(rng, n, t).into_vec();
    BitVec::from_support(n, support)
}

/// One row of the column-overlap matrix `Γ` with its diagonal removed, stored
/// as distinct values with multiplicities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GammaRow {
    values: Vec<u64>,
    multiplicities: Vec<u64>,
}

impl GammaRow {
    pub fn new(values: Vec<u64>, multiplicities: Vec<u64>) -> Result<Self> {
        if values.len() != multiplicities.len() {
            return Err(Error::LengthMismatch {
                expected: values.len(),
                found: multiplicities.len(),
            });
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Malformed("gamma values must be strictly increasing".into()));
        }
        if multiplicities.contains(&0) {
            return Err(Error::Malformed("gamma multiplicities must be positive".into()));
        }
        Ok(GammaRow {
            values,
            multiplicities,
        })
    }

    /// Collapses a plain sequence of overlap counts.
    pub fn from_counts<I: IntoIterator<Item = u64>>(counts: I) -> Self {
        let mut m: BTreeMap<u64, u64> = BTreeMap::new();
        for c in counts {
            *m.entry(c).or_default() += 1;
        }
        GammaRow {
            values: m.keys().copied().collect(),
            multiplicities: m.values().copied().collect(),
        }
    }

    /// Distinct values, ascending.
    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn multiplicities(&self) -> &[u64] {
        &self.multiplicities
    }

    /// Number of entries (`n - 1` for a row of `Γ`).
    pub fn total(&self) -> u64 {
        self.multiplicities.iter().sum()
    }

    pub fn distinct(&self) -> usize {
        self.values.len()
    }
}

/// One representative row of `Γ` per block-column class.
///
/// Row `a·p` (the first column of block `a`) stands for its whole block:
/// shifting both columns by the same amount leaves their overlap unchanged,
/// so every row of a block carries the same multiset of overlaps.
pub fn gamma_representative_rows(h: &ParityCheckMatrix) -> Vec<GammaRow> {
    let p = h.params().p;
    let blocks = h.blocks();
    blocks
        .iter()
        .enumerate()
        .map(|(a, ba)| {
            let mut counts: Vec<u64> = Vec::with_capacity(h.n());
            for (b, bb) in blocks.iter().enumerate() {
                // overlap[d] = |S_a ∩ (S_b + d)|
                let mut overlap = vec![0u64; p];
                for &x in ba.first_column_support() {
                    for &y in bb.first_column_support() {
                        overlap[(x + p - y) % p] += 1;
                    }
                }
                for (d, &c) in overlap.iter().enumerate() {
                    if a == b && d == 0 {
                        continue;
                    }
                    counts.push(c);
                }
            }
            GammaRow::from_counts(counts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> ParityCheckMatrix {
        ParityCheckMatrix::from_supports(CodeParams::new(1, 3, 2).unwrap(), vec![vec![0, 1]]).unwrap()
    }

    #[test]
    fn params_derived_quantities() {
        let p = CodeParams::new(2, 4801, 45).unwrap();
        assert_eq!((p.n(), p.r(), p.w(), p.k()), (9602, 4801, 90, 4801));
        assert!(CodeParams::new(2, 13, 50).is_err());
        assert!(CodeParams::new(0, 13, 3).is_err());
    }

    #[test]
    fn keygen_is_deterministic_and_regular() {
        let params = CodeParams::new(2, 13, 3).unwrap();
        let a = keygen(params, 1).unwrap();
        assert_eq!(a, keygen(params, 1).unwrap());
        assert_ne!(a, keygen(params, 2).unwrap());
        let dense = a.to_dense();
        for row in &dense {
            assert_eq!(row.iter().map(|&x| x as usize).sum::<usize>(), 6);
        }
        for j in 0..a.n() {
            assert_eq!(dense.iter().filter(|r| r[j] == 1).count(), 3);
        }
    }

    #[test]
    fn column_support_examples() {
        let h = tiny();
        assert_eq!(h.column_support(0).unwrap(), vec![0, 1]);
        let mut c2 = h.column_support(2).unwrap();
        c2.sort_unstable();
        assert_eq!(c2, vec![0, 2]);
        assert!(h.column_support(3).is_err());
    }

    #[test]
    fn syndrome_examples() {
        let h = keygen(CodeParams::new(2, 13, 3).unwrap(), 5).unwrap();
        assert_eq!(syndrome(&h, &BitVec::zeros(26)).unwrap().weight(), 0);
        for j in 0..26 {
            let e = BitVec::from_support(26, vec![j]).unwrap();
            let mut col = h.column_support(j).unwrap();
            col.sort_unstable();
            assert_eq!(syndrome(&h, &e).unwrap().support(), &col[..]);
        }
        assert!(syndrome(&h, &BitVec::zeros(25)).is_err());
    }

    #[test]
    fn sample_error_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(sample_error(10, 0, &mut rng).unwrap().weight(), 0);
        let full = sample_error(10, 10, &mut rng).unwrap();
        assert_eq!(full.support(), &(0..10).collect::<Vec<_>>()[..]);
        assert!(sample_error(10, 11, &mut rng).is_err());
    }

    #[test]
    fn sample_error_is_uniform_per_position() {
        let (n, t, draws) = (20usize, 5usize, 100_000usize);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut freq = vec![0usize; n];
        for _ in 0..draws {
            for &i in sample_error(n, t, &mut rng).unwrap().support() {
                freq[i] += 1;
            }
        }
        let p = t as f64 / n as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for &f in &freq {
            assert!((f as f64 - draws as f64 * p).abs() < 4.0 * sigma);
        }
    }

    #[test]
    fn gamma_tiny_example() {
        // Columns {0,1}, {1,2}, {2,0}: every pair overlaps in one row.
        let rows = gamma_representative_rows(&tiny());
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].values(), &[1]);
        assert_eq!(rows[0].multiplicities(), &[2]);
    }

    #[test]
    fn key_json_round_trip() {
        let h = keygen(CodeParams::new(2, 4801, 45).unwrap(), 7).unwrap();
        let s = h.to_json().unwrap();
        assert!(s.starts_with("{\"n0\":2,\"p\":4801,\"v\":45,\"blocks\":[["));
        let back = ParityCheckMatrix::from_json(&s).unwrap();
        assert_eq!(back, h);
        assert_eq!(back.to_json().unwrap(), s);
        assert!(ParityCheckMatrix::from_json(r#"{"n0":1,"p":5,"v":2,"blocks":[[3,1]]}"#).is_err());
        assert!(ParityCheckMatrix::from_json(r#"{"n0":1,"p":5,"v":2,"blocks":[[1,7]]}"#).is_err());
        assert!(ParityCheckMatrix::from_json(r#"{"n0":2,"p":5,"v":2,"blocks":[[1,2]]}"#).is_err());
    }

    #[test]
    fn h0_invertibility_flag() {
        let p = CodeParams::new(1, 7, 3).unwrap();
        // x^7 - 1 = (x+1)(x^3+x+1)(x^3+x^2+1).
        let h = ParityCheckMatrix::from_supports(p, vec![vec![0, 1, 3]]).unwrap();
        assert!(!h.h0_invertible());
        let p = CodeParams::new(1, 5, 3).unwrap();
        // x^5 - 1 = (x+1)(x^4+x^3+x^2+x+1); 1 + x + x^2 shares no factor.
        let h = ParityCheckMatrix::from_supports(p, vec![vec![0, 1, 2]]).unwrap();
        assert!(h.h0_invertible());
        let p = CodeParams::new(1, 5, 2).unwrap();
        let h = ParityCheckMatrix::from_supports(p, vec![vec![0, 1]]).unwrap();
        assert!(!h.h0_invertible());
    }

    proptest! {
        #[test]
        fn syndrome_is_linear(seed in any::<u64>(), a in proptest::collection::vec(0usize..26, 0..8),
                              b in proptest::collection::vec(0usize..26, 0..8)) {
            let h = keygen(CodeParams::new(2, 13, 3).unwrap(), seed).unwrap();
            let ea = BitVec::from_support(26, a).unwrap();
            let eb = BitVec::from_support(26, b).unwrap();
            let lhs = syndrome(&h, &ea.xor(&eb).unwrap()).unwrap();
            let rhs = syndrome(&h, &ea).unwrap().xor(&syndrome(&h, &eb).unwrap()).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn columns_shift_within_block(seed in any::<u64>(), j in 0usize..12) {
            let h = keygen(CodeParams::new(2, 13, 4).unwrap(), seed).unwrap();
            for block in 0..2 {
                let c = block * 13 + j;
                let mut next = h.column_support(c + 1).unwrap();
                let mut shifted: Vec<usize> = h.column_support(c).unwrap().iter().map(|&i| (i + 1) % 13).collect();
                next.sort_unstable();
                shifted.sort_unstable();
                prop_assert_eq!(next, shifted);
            }
        }
    }
}
