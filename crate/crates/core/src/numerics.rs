//! Exact combinatorics and software high-precision reals.
//!
//! [`HpReal`] is a binary floating-point number `±m·2^e` whose mantissa `m`
//! carries exactly `prec` significant bits (or is zero). Every arithmetic
//! operation rounds to nearest, ties to even, so a single operation has a
//! relative error of at most `2^-prec`. The exponent is an `i64`, which keeps
//! quantities such as `(1 - 10^-5)^9550` or `2^-400000` representable without
//! underflow.
//!
//! Binary operations produce a result at the larger of the two operand
//! precisions.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::error::{Error, Result};

/// Arbitrary-precision nonnegative integer.
pub type BigInt = BigUint;

/// Default mantissa width in bits.
pub const DEFAULT_PRECISION: u32 = 256;

/// Extra bits carried by transcendental functions.
const GUARD_BITS: u32 = 64;

/// Binomial coefficient `C(n, k)`; zero when `k > n`.
pub fn binomial(n: u64, k: u64) -> BigInt {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 1..=k {
        acc *= n - k + i;
        acc /= i;
    }
    acc
}

/// Converts the exact fraction `num/den` to an [`HpReal`] rounded to nearest.
pub fn ratio_to_real(num: &BigInt, den: &BigInt, precision: u32) -> Result<HpReal> {
    if den.is_zero() {
        return Err(Error::DivisionByZero);
    }
    let a = HpReal::from_biguint(num.clone(), precision.max(num.bits() as u32).max(1));
    let b = HpReal::from_biguint(den.clone(), precision.max(den.bits() as u32));
    Ok(a.div_prec(&b, precision))
}

/// `x^e` for `x ≥ 0` and a nonnegative real exponent `e`.
///
/// The result is within `2^(8-prec)·(1 + |e·ln x|)` relative of the exact value.
pub fn hp_pow(x: &HpReal, e: &HpReal) -> Result<HpReal> {
    x.pow(e)
}

/// A mantissa/exponent binary float with run-time precision.
#[derive(Clone)]
pub struct HpReal {
    neg: bool,
    mant: BigUint,
    exp: i64,
    prec: u32,
}

impl HpReal {
    pub fn zero(prec: u32) -> Self {
        assert!(prec >= 2, "precision must be at least 2 bits");
        HpReal {
            neg: false,
            mant: BigUint::zero(),
            exp: 0,
            prec,
        }
    }

    pub fn one(prec: u32) -> Self {
        Self::from_u64(1, prec)
    }

    pub fn from_u64(v: u64, prec: u32) -> Self {
        Self::from_biguint(BigUint::from(v), prec)
    }

    pub fn from_biguint(v: BigUint, prec: u32) -> Self {
        Self::round(false, v, 0, false, prec)
    }

    /// Nearest representable value to `v`; NaN and infinities are rejected.
    pub fn from_f64(v: f64, prec: u32) -> Result<Self> {
        if !v.is_finite() {
            return Err(Error::Domain(format!("non-finite value {v}")));
        }
        if v == 0.0 {
            return Ok(Self::zero(prec));
        }
        let bits = v.abs().to_bits();
        let raw_exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (m, e) = if raw_exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), raw_exp - 1075)
        };
        Ok(Self::round(v < 0.0, BigUint::from(m), e, false, prec))
    }

    /// Exact fraction `num/den` rounded to `prec` bits.
    pub fn from_ratio(num: u64, den: u64, prec: u32) -> Result<Self> {
        ratio_to_real(&BigUint::from(num), &BigUint::from(den), prec)
    }

    pub fn precision(&self) -> u32 {
        self.prec
    }

    pub fn is_zero(&self) -> bool {
        self.mant.is_zero()
    }

    pub fn is_negative(&self) -> bool {
        self.neg
    }

    /// Same value rounded to a different precision.
    pub fn with_precision(&self, prec: u32) -> Self {
        Self::round(self.neg, self.mant.clone(), self.exp, false, prec)
    }

    fn round(neg: bool, mant: BigUint, exp: i64, sticky: bool, prec: u32) -> Self {
        if mant.is_zero() {
            return Self::zero(prec);
        }
        let bits = mant.bits();
        let prec64 = u64::from(prec);
        if bits <= prec64 {
            let shift = prec64 - bits;
            return HpReal {
                neg,
                mant: mant << shift,
                exp: exp - shift as i64,
                prec,
            };
        }
        let drop = bits - prec64;
        let half = mant.bit(drop - 1);
        let below_half = sticky || mant.trailing_zeros().unwrap_or(0) < drop - 1;
        let mut m = mant >> drop;
        let mut e = exp + drop as i64;
        if half && (below_half || m.bit(0)) {
            m += 1u32;
            if m.bits() > prec64 {
                m >>= 1;
                e += 1;
            }
        }
        HpReal {
            neg,
            mant: m,
            exp: e,
            prec,
        }
    }

    /// Position one past the most significant bit (`value ∈ [2^(top-1), 2^top)`).
    fn top(&self) -> i64 {
        self.exp + self.mant.bits() as i64
    }

    fn cmp_magnitude(&self, other: &Self) -> Ordering {
        match (self.is_zero(), other.is_zero()) {
            (true, true) => return Ordering::Equal,
            (true, false) => return Ordering::Less,
            (false, true) => return Ordering::Greater,
            _ => {}
        }
        match self.top().cmp(&other.top()) {
            Ordering::Equal => {}
            o => return o,
        }
        let e = self.exp.min(other.exp);
        let a = &self.mant << (self.exp - e) as u64;
        let b = &other.mant << (other.exp - e) as u64;
        a.cmp(&b)
    }

    fn add_signed(&self, other: &Self, other_neg: bool, prec: u32) -> Self {
        if other.is_zero() {
            return self.with_precision(prec);
        }
        if self.is_zero() {
            let mut r = other.with_precision(prec);
            r.neg = other_neg;
            return r;
        }
        let (big, big_neg, small, small_neg) = match self.cmp_magnitude(other) {
            Ordering::Less => (other, other_neg, self, self.neg),
            _ => (self, self.neg, other, other_neg),
        };
        let same = big_neg == small_neg;
        let big_bits = big.mant.bits() as i64;
        let gap = big.top() - small.top();
        if gap > big_bits.max(i64::from(prec)) + 3 {
            // `small` is below a quarter of the last mantissa unit of `big`.
            if big_bits + 2 <= i64::from(prec) {
                return Self::round(big_neg, big.mant.clone(), big.exp, false, prec);
            }
            let m4 = &big.mant << 2u64;
            let m = if same { m4 } else { m4 - 1u32 };
            return Self::round(big_neg, m, big.exp - 2, true, prec);
        }
        let e = big.exp.min(small.exp);
        let a = &big.mant << (big.exp - e) as u64;
        let b = &small.mant << (small.exp - e) as u64;
        if same {
            Self::round(big_neg, a + b, e, false, prec)
        } else {
            Self::round(big_neg, a - b, e, false, prec)
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.add_signed(other, other.neg, self.prec.max(other.prec))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add_signed(other, !other.neg, self.prec.max(other.prec))
    }

    /// `max(self - other, 0)`.
    pub fn saturating_sub(&self, other: &Self) -> Self {
        let d = self.sub(other);
        if d.neg {
            Self::zero(d.prec)
        } else {
            d
        }
    }

    /// `1 - self`, clamped at zero.
    pub fn complement(&self) -> Self {
        Self::one(self.prec).saturating_sub(self)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let prec = self.prec.max(other.prec);
        Self::round(
            self.neg ^ other.neg,
            &self.mant * &other.mant,
            self.exp + other.exp,
            false,
            prec,
        )
    }

    pub fn mul_u64(&self, k: u64) -> Self {
        Self::round(self.neg, &self.mant * k, self.exp, false, self.prec)
    }

    /// Multiplies by `2^k` exactly.
    pub fn mul_pow2(&self, k: i64) -> Self {
        let mut r = self.clone();
        if !r.is_zero() {
            r.exp += k;
        }
        r
    }

    fn div_prec(&self, other: &Self, prec: u32) -> Self {
        assert!(!other.is_zero(), "HpReal division by zero");
        if self.is_zero() {
            return Self::zero(prec);
        }
        let shift = (i64::from(prec) + 2 + other.mant.bits() as i64 - self.mant.bits() as i64).max(0);
        let num = &self.mant << shift as u64;
        let q = &num / &other.mant;
        let sticky = !(num % &other.mant).is_zero();
        Self::round(
            self.neg ^ other.neg,
            q,
            self.exp - shift - other.exp,
            sticky,
            prec,
        )
    }

    /// Division; errors on a zero divisor.
    pub fn checked_div(&self, other: &Self) -> Result<Self> {
        if other.is_zero() {
            return Err(Error::DivisionByZero);
        }
        Ok(self.div_prec(other, self.prec.max(other.prec)))
    }

    pub fn div(&self, other: &Self) -> Self {
        self.div_prec(other, self.prec.max(other.prec))
    }

    /// `self^k` by binary powering (one rounding per multiplication).
    pub fn powi(&self, mut k: u64) -> Self {
        let wp = self.prec + GUARD_BITS;
        let mut base = self.with_precision(wp);
        let mut acc = Self::one(wp);
        while k > 0 {
            if k & 1 == 1 {
                acc = acc.mul(&base);
            }
            k >>= 1;
            if k > 0 {
                base = base.mul(&base);
            }
        }
        acc.with_precision(self.prec)
    }

    /// Natural logarithm of a strictly positive value.
    pub fn ln(&self) -> Result<Self> {
        if self.is_zero() || self.neg {
            return Err(Error::Domain("logarithm of a nonpositive value".into()));
        }
        // self = m·2^k with m in [1/√2, √2).
        let bits = self.mant.bits() as i64;
        let mut k = self.exp + bits - 1;
        let mut m = HpReal {
            neg: false,
            mant: self.mant.clone(),
            exp: 1 - bits,
            prec: self.prec,
        };
        if m.to_f64() > std::f64::consts::SQRT_2 {
            m = m.mul_pow2(-1);
            k += 1;
        }
        let extra = 64 - k.unsigned_abs().leading_zeros();
        let wp = self.prec + GUARD_BITS + extra;
        let m = m.with_precision(wp);
        let one = Self::one(wp);
        let u = m.sub(&one).div(&m.add(&one));
        let mut r = atanh_series(&u, wp).mul_pow2(1);
        if k != 0 {
            let l2 = ln2(wp).mul(&Self::from_u64(k.unsigned_abs(), wp));
            r = if k > 0 { r.add(&l2) } else { r.sub(&l2) };
        }
        Ok(r.with_precision(self.prec))
    }

    /// `e^self`.
    pub fn exp(&self) -> Result<Self> {
        if self.is_zero() {
            return Ok(Self::one(self.prec));
        }
        let approx = self.to_f64();
        if !approx.is_finite() || approx.abs() > 4.0e18 {
            return Err(Error::Domain("exponent out of range".into()));
        }
        let k = (approx / std::f64::consts::LN_2).round() as i64;
        let squarings: u32 = 16;
        let extra = 64 - k.unsigned_abs().leading_zeros();
        let wp = self.prec + GUARD_BITS + squarings + extra;
        let mut r = self.with_precision(wp);
        if k != 0 {
            let l2 = ln2(wp).mul(&Self::from_u64(k.unsigned_abs(), wp));
            r = if k > 0 { r.sub(&l2) } else { r.add(&l2) };
        }
        let r = r.mul_pow2(-i64::from(squarings));
        // Taylor series of e^r for |r| < 2^-16.
        let one = Self::one(wp);
        let mut sum = one.clone();
        let mut term = one;
        let mut i = 1u64;
        loop {
            term = term.mul(&r).div(&Self::from_u64(i, wp));
            if term.is_zero() || sum.top() - term.top() > i64::from(wp) + 2 {
                break;
            }
            sum = sum.add(&term);
            i += 1;
        }
        for _ in 0..squarings {
            sum = sum.mul(&sum);
        }
        Ok(sum.mul_pow2(k).with_precision(self.prec))
    }

    /// `self^e` for `self ≥ 0` and `e ≥ 0`; `0^0` is an error.
    pub fn pow(&self, e: &Self) -> Result<Self> {
        if self.neg {
            return Err(Error::Domain("negative base".into()));
        }
        if e.neg {
            return Err(Error::Domain("negative exponent".into()));
        }
        if self.is_zero() {
            return if e.is_zero() {
                Err(Error::Domain("0^0 is undefined".into()))
            } else {
                Ok(Self::zero(self.prec))
            };
        }
        if e.is_zero() {
            return Ok(Self::one(self.prec));
        }
        let prec = self.prec.max(e.prec);
        if let Some(k) = e.to_u64_exact() {
            return Ok(self.with_precision(prec).powi(k));
        }
        let extra = 64 - (e.top().max(0) as u64).leading_zeros();
        let wp = prec + GUARD_BITS + extra;
        let l = self.with_precision(wp).ln()?;
        Ok(l.mul(&e.with_precision(wp)).exp()?.with_precision(prec))
    }

    fn to_u64_exact(&self) -> Option<u64> {
        if self.neg {
            return None;
        }
        if self.is_zero() {
            return Some(0);
        }
        if self.exp >= 0 {
            if self.top() > 64 {
                return None;
            }
            (&self.mant << self.exp as u64).to_u64()
        } else {
            let sh = (-self.exp) as u64;
            if self.mant.trailing_zeros().unwrap_or(0) < sh {
                return None;
            }
            (&self.mant >> sh).to_u64()
        }
    }

    /// Nearest `f64` (flushes to zero below the subnormal range).
    pub fn to_f64(&self) -> f64 {
        if self.is_zero() {
            return 0.0;
        }
        let bits = self.mant.bits();
        let (top, e) = if bits > 64 {
            let sh = bits - 64;
            let mut t = (&self.mant >> sh).to_u64().unwrap_or(u64::MAX);
            // Fold the discarded bits into the lowest bit so the u64 -> f64
            // conversion rounds correctly.
            if self.mant.trailing_zeros().unwrap_or(0) < sh {
                t |= 1;
            }
            (t, self.exp + sh as i64)
        } else {
            (self.mant.to_u64().unwrap_or(0), self.exp)
        };
        let v = ldexp(top as f64, e);
        if self.neg {
            -v
        } else {
            v
        }
    }

    /// `log2|self|` as an `f64`; `-inf` for zero.
    pub fn log2(&self) -> f64 {
        if self.is_zero() {
            return f64::NEG_INFINITY;
        }
        let bits = self.mant.bits();
        let sh = bits.saturating_sub(64);
        let t = (&self.mant >> sh).to_u64().unwrap_or(u64::MAX) as f64;
        t.log2() + (self.exp + sh as i64) as f64
    }

    /// Relative difference `|a - b| / max(|a|, |b|)`, zero when both are zero.
    pub fn rel_diff(&self, other: &Self) -> f64 {
        let d = self.sub(other);
        if d.is_zero() {
            return 0.0;
        }
        let scale = match self.cmp_magnitude(other) {
            Ordering::Less => other,
            _ => self,
        };
        2f64.powf(d.log2() - scale.log2())
    }

    /// Decimal scientific notation with `digits` significant digits.
    pub fn to_sci_string(&self, digits: usize) -> String {
        if self.is_zero() {
            return "0".to_string();
        }
        let digits = digits.max(1);
        // Estimate the decimal exponent and scale the value into [1, 10).
        let mut dexp = (self.log2() * std::f64::consts::LOG10_2).floor() as i64;
        let wp = self.prec + 64;
        let ten = Self::from_u64(10, wp);
        let abs = HpReal {
            neg: false,
            ..self.with_precision(wp)
        };
        let scaled = |de: i64| {
            let p = ten.powi(de.unsigned_abs());
            if de >= 0 {
                abs.div(&p)
            } else {
                abs.mul(&p)
            }
        };
        let mut s = scaled(dexp);
        if s.cmp_magnitude(&ten) != Ordering::Less {
            dexp += 1;
            s = scaled(dexp);
        } else if s.cmp_magnitude(&Self::one(wp)) == Ordering::Less {
            dexp -= 1;
            s = scaled(dexp);
        }
        // Integer with `digits` digits, rounded half up.
        let int = s
            .mul(&ten.powi(digits as u64 - 1))
            .add(&Self::from_ratio(1, 2, wp).expect("nonzero denominator"))
            .floor_biguint();
        let mut ds = int.to_str_radix(10);
        if ds.len() > digits {
            ds.truncate(digits);
            dexp += 1;
        }
        let mut out = String::new();
        if self.neg {
            out.push('-');
        }
        out.push_str(&ds[..1]);
        let rest = ds[1..].trim_end_matches('0');
        if !rest.is_empty() {
            out.push('.');
            out.push_str(rest);
        }
        out.push('e');
        out.push_str(&dexp.to_string());
        out
    }

    fn floor_biguint(&self) -> BigUint {
        if self.exp >= 0 {
            &self.mant << self.exp as u64
        } else {
            &self.mant >> (-self.exp) as u64
        }
    }
}

fn ldexp(x: f64, e: i64) -> f64 {
    if e > 2100 {
        return f64::INFINITY;
    }
    if e < -2200 {
        return 0.0;
    }
    let e = e as i32;
    let h = e / 2;
    x * 2f64.powi(h) * 2f64.powi(e - h)
}

/// `atanh(u) = u + u^3/3 + u^5/5 + ...` for `|u| ≤ 1/3`.
fn atanh_series(u: &HpReal, wp: u32) -> HpReal {
    if u.is_zero() {
        return HpReal::zero(wp);
    }
    let u2 = u.mul(u);
    let mut pow = u.clone();
    let mut sum = u.clone();
    let mut k = 3u64;
    loop {
        pow = pow.mul(&u2);
        let term = pow.div(&HpReal::from_u64(k, wp));
        if term.is_zero() || sum.top() - term.top() > i64::from(wp) + 2 {
            break;
        }
        sum = sum.add(&term);
        k += 2;
    }
    sum
}

/// `ln 2 = 2·atanh(1/3)` at `wp` bits.
fn ln2(wp: u32) -> HpReal {
    let third = HpReal::from_ratio(1, 3, wp + 8).expect("nonzero denominator");
    atanh_series(&third, wp + 8).mul_pow2(1).with_precision(wp)
}

impl PartialEq for HpReal {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for HpReal {}

impl PartialOrd for HpReal {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HpReal {
    fn cmp(&self, other: &Self) -> Ordering {
        let sa = !self.is_zero() && self.neg;
        let sb = !other.is_zero() && other.neg;
        match (sa, sb) {
            (false, true) => Ordering::Greater,
            (true, false) => Ordering::Less,
            (false, false) => self.cmp_magnitude(other),
            (true, true) => other.cmp_magnitude(self),
        }
    }
}

impl fmt::Debug for HpReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HpReal({}, prec={})", self.to_sci_string(20), self.prec)
    }
}

impl fmt::Display for HpReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let digits = f.precision().unwrap_or(17);
        f.write_str(&self.to_sci_string(digits))
    }
}

/// A top-level result recomputed at half precision for self-validation.
#[derive(Clone, Debug)]
pub struct CheckedValue {
    pub value: HpReal,
    pub half_precision_value: HpReal,
    /// Relative disagreement between the two evaluations.
    pub rel_diff: f64,
}

/// Relative disagreement above which a [`CheckedValue`] is flagged.
pub const CROSS_CHECK_TOLERANCE: f64 = 1e-6;

impl CheckedValue {
    pub fn consistent(&self) -> bool {
        self.rel_diff <= CROSS_CHECK_TOLERANCE
    }
}

/// Evaluates `f` at `precision` and `precision / 2` and records the disagreement.
pub fn cross_checked<F>(precision: u32, f: F) -> Result<CheckedValue>
where
    F: Fn(u32) -> Result<HpReal>,
{
    let value = f(precision)?;
    let half = f((precision / 2).max(24))?;
    let rel_diff = value.rel_diff(&half);
    Ok(CheckedValue {
        value,
        half_precision_value: half,
        rel_diff,
    })
}
