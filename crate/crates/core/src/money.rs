//! Exact monetary arithmetic.
//!
//! [`Dollars`] is a fixed-point amount with nine fractional digits stored in an
//! `i64` (nano-dollars). Ledger totals and budget comparisons never touch binary
//! floating point. [`Estimate`] is an exact rational amount used where averages
//! are involved (learned per-action costs and speculative trajectory costs).

use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Neg, Sub, SubAssign};
use std::str::FromStr;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use serde::{de, Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of fractional decimal digits carried by [`Dollars`].
pub const SCALE_DIGITS: u32 = 9;
const SCALE: i64 = 1_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MoneyError {
    #[error("invalid dollar amount `{0}`")]
    Parse(String),
    #[error("dollar amount `{0}` has more than {1} fractional digits")]
    Precision(String, u32),
    #[error("dollar amount out of range")]
    Overflow,
}

/// A signed dollar amount with nano-dollar resolution.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Dollars(i64);

impl Dollars {
    pub const ZERO: Dollars = Dollars(0);

    pub const fn from_nanos(nanos: i64) -> Self {
        Dollars(nanos)
    }

    pub const fn nanos(self) -> i64 {
        self.0
    }

    /// Whole cents, e.g. `from_cents(7)` is $0.07.
    pub const fn from_cents(cents: i64) -> Self {
        Dollars(cents * (SCALE / 100))
    }

    /// Parse a decimal string, rejecting anything finer than `max_digits`
    /// fractional digits.
    pub fn parse_with_precision(s: &str, max_digits: u32) -> Result<Self, MoneyError> {
        let t = s.trim();
        let t = t.strip_prefix('$').unwrap_or(t);
        let (neg, body) = match t.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, t.strip_prefix('+').unwrap_or(t)),
        };
        if body.is_empty() {
            return Err(MoneyError::Parse(s.to_string()));
        }
        let (int_part, frac_part) = match body.split_once('.') {
            Some((i, f)) => (i, f),
            None => (body, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(MoneyError::Parse(s.to_string()));
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(MoneyError::Parse(s.to_string()));
        }
        let frac_trimmed = frac_part.trim_end_matches('0');
        if frac_trimmed.len() as u32 > max_digits {
            return Err(MoneyError::Precision(s.to_string(), max_digits));
        }
        let int_val: i64 = if int_part.is_empty() {
            0
        } else {
            int_part.parse().map_err(|_| MoneyError::Overflow)?
        };
        let mut frac_val: i64 = 0;
        for (i, c) in frac_trimmed.chars().enumerate() {
            let digit = c.to_digit(10).expect("checked digit") as i64;
            frac_val += digit * 10_i64.pow(SCALE_DIGITS - 1 - i as u32);
        }
        let nanos = int_val
            .checked_mul(SCALE)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or(MoneyError::Overflow)?;
        Ok(Dollars(if neg { -nanos } else { nanos }))
    }

    /// Convert a float through its shortest round-trip decimal representation,
    /// so `0.0008_f64` becomes exactly $0.0008.
    pub fn from_f64_decimal(v: f64) -> Result<Self, MoneyError> {
        if !v.is_finite() {
            return Err(MoneyError::Parse(v.to_string()));
        }
        let text = format!("{v}");
        if text.contains('e') || text.contains('E') {
            return Err(MoneyError::Precision(text, SCALE_DIGITS));
        }
        Self::parse_with_precision(&text, SCALE_DIGITS)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / SCALE as f64
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }

    pub fn checked_mul_int(self, k: i64) -> Option<Self> {
        self.0.checked_mul(k).map(Dollars)
    }

    pub fn abs(self) -> Self {
        Dollars(self.0.abs())
    }

    pub fn to_estimate(self) -> Estimate {
        Estimate::from_dollars(self)
    }

    /// Render with exactly `digits` fractional digits, rounding half away from zero.
    pub fn format_fixed(self, digits: u32) -> String {
        let digits = digits.min(SCALE_DIGITS);
        let drop = 10_i64.pow(SCALE_DIGITS - digits);
        let mag = self.0.unsigned_abs() as i128;
        let drop = drop as i128;
        let rounded = (mag + drop / 2) / drop;
        let unit = 10_i128.pow(digits);
        let sign = if self.0 < 0 && rounded != 0 { "-" } else { "" };
        if digits == 0 {
            format!("{sign}{rounded}")
        } else {
            format!(
                "{sign}{}.{:0width$}",
                rounded / unit,
                rounded % unit,
                width = digits as usize
            )
        }
    }
}

impl fmt::Display for Dollars {
    /// Canonical form: trailing fractional zeros trimmed, at least one digit
    /// after the point (`0.018`, `-0.04`, `0.0`).
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mag = self.0.unsigned_abs();
        let sign = if self.0 < 0 { "-" } else { "" };
        let int = mag / SCALE as u64;
        let frac = mag % SCALE as u64;
        let mut frac_s = format!("{frac:09}");
        while frac_s.len() > 1 && frac_s.ends_with('0') {
            frac_s.pop();
        }
        write!(f, "{sign}{int}.{frac_s}")
    }
}

impl FromStr for Dollars {
    type Err = MoneyError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::parse_with_precision(s, SCALE_DIGITS)
    }
}

impl Add for Dollars {
    type Output = Dollars;
    fn add(self, rhs: Dollars) -> Dollars {
        Dollars(self.0.checked_add(rhs.0).expect("dollar overflow"))
    }
}

impl AddAssign for Dollars {
    fn add_assign(&mut self, rhs: Dollars) {
        *self = *self + rhs;
    }
}

impl Sub for Dollars {
    type Output = Dollars;
    fn sub(self, rhs: Dollars) -> Dollars {
        Dollars(self.0.checked_sub(rhs.0).expect("dollar overflow"))
    }
}

impl SubAssign for Dollars {
    fn sub_assign(&mut self, rhs: Dollars) {
        *self = *self - rhs;
    }
}

impl Neg for Dollars {
    type Output = Dollars;
    fn neg(self) -> Dollars {
        Dollars(-self.0)
    }
}

impl Sum for Dollars {
    fn sum<I: Iterator<Item = Dollars>>(iter: I) -> Dollars {
        iter.fold(Dollars::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a Dollars> for Dollars {
    fn sum<I: Iterator<Item = &'a Dollars>>(iter: I) -> Dollars {
        iter.copied().sum()
    }
}

impl Serialize for Dollars {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Dollars {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct V;
        impl de::Visitor<'_> for V {
            type Value = Dollars;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a decimal dollar amount as string or number")
            }
            fn visit_str<E: de::Error>(self, v: &str) -> Result<Dollars, E> {
                v.parse().map_err(E::custom)
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> Result<Dollars, E> {
                Dollars::from_f64_decimal(v).map_err(E::custom)
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> Result<Dollars, E> {
                v.checked_mul(SCALE)
                    .map(Dollars)
                    .ok_or_else(|| E::custom(MoneyError::Overflow))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> Result<Dollars, E> {
                i64::try_from(v)
                    .ok()
                    .and_then(|v| v.checked_mul(SCALE))
                    .map(Dollars)
                    .ok_or_else(|| E::custom(MoneyError::Overflow))
            }
        }
        d.deserialize_any(V)
    }
}

/// An exact rational dollar amount.
///
/// Averages of nano-dollar costs are generally not representable in nine
/// digits, so learned means and trajectory estimates are kept as rationals and
/// compared against [`Dollars`] budgets without rounding.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Estimate(BigRational);

impl Estimate {
    pub fn zero() -> Self {
        Estimate(BigRational::zero())
    }

    pub fn from_dollars(d: Dollars) -> Self {
        Estimate(BigRational::new(BigInt::from(d.0), BigInt::from(SCALE)))
    }

    /// `total / count`, exactly.
    pub fn mean(total: Dollars, count: u64) -> Self {
        assert!(count > 0, "mean of zero samples");
        Estimate(BigRational::new(
            BigInt::from(total.0),
            BigInt::from(SCALE) * BigInt::from(count),
        ))
    }

    pub fn scaled(&self, factor: u64) -> Self {
        Estimate(&self.0 * BigRational::from_integer(BigInt::from(factor)))
    }

    pub fn times(&self, count: u64) -> Self {
        self.scaled(count)
    }

    pub fn le_dollars(&self, budget: Dollars) -> bool {
        self.0 <= Estimate::from_dollars(budget).0
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    /// Exact when the value has at most nine fractional digits.
    pub fn to_dollars_exact(&self) -> Option<Dollars> {
        let nanos = &self.0 * BigRational::from_integer(BigInt::from(SCALE));
        if nanos.is_integer() {
            nanos.to_integer().to_i64().map(Dollars)
        } else {
            None
        }
    }

    /// Nearest nano-dollar, ties away from zero.
    pub fn round_to_dollars(&self) -> Dollars {
        let nanos = &self.0 * BigRational::from_integer(BigInt::from(SCALE));
        Dollars(
            nanos
                .round()
                .to_integer()
                .to_i64()
                .expect("estimate in range"),
        )
    }

    pub fn numer_denom(&self) -> (BigInt, BigInt) {
        (self.0.numer().clone(), self.0.denom().clone())
    }
}

impl Add<&Estimate> for &Estimate {
    type Output = Estimate;
    fn add(self, rhs: &Estimate) -> Estimate {
        Estimate(&self.0 + &rhs.0)
    }
}

impl AddAssign<&Estimate> for Estimate {
    fn add_assign(&mut self, rhs: &Estimate) {
        self.0 += &rhs.0;
    }
}

impl fmt::Display for Estimate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_dollars_exact() {
            Some(d) => write!(f, "{d}"),
            None => write!(f, "~{}", self.round_to_dollars()),
        }
    }
}
