//! Scalar abstraction shared by every finite formula in the crate.
//!
//! Finite products, pmfs, transition matrices and evolution run over any
//! [`Scalar`]: `f64`/`f32` for speed, [`Rational`](crate::Rational) when an
//! identity must hold exactly. Infinite products and contour quadrature are
//! float-only and work with `f64`/`Complex64` directly.

use std::fmt::Debug;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_integer::Integer;
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub trait Scalar:
    Num + Signed + PartialOrd + Clone + Debug + FromPrimitive + ToPrimitive + Send + Sync + 'static
{
    /// True when arithmetic is exact, so identities can be asserted with `==`.
    const EXACT: bool;

    fn from_int(n: i64) -> Self {
        Self::from_i64(n).expect("integer fits every scalar")
    }

    fn ratio(num: i64, den: i64) -> Self {
        Self::from_int(num) / Self::from_int(den)
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn upow(&self, n: usize) -> Self {
        num_traits::pow(self.clone(), n)
    }

    /// Integer power with negative exponents allowed (`self` must be nonzero then).
    fn ipow(&self, n: i64) -> Self {
        if n >= 0 {
            self.upow(n as usize)
        } else {
            Self::one() / self.upow(n.unsigned_abs() as usize)
        }
    }

    /// Product of two values; exact types cancel crosswise and skip the
    /// final normalization.
    fn mul_reduced(&self, rhs: &Self) -> Self {
        self.clone() * rhs.clone()
    }

    fn max_of(a: Self, b: Self) -> Self {
        if a >= b {
            a
        } else {
            b
        }
    }
}

impl Scalar for f64 {
    const EXACT: bool = false;
}

impl Scalar for f32 {
    const EXACT: bool = false;
}

impl Scalar for BigRational {
    const EXACT: bool = true;

    fn mul_reduced(&self, rhs: &Self) -> Self {
        if self.is_zero() || rhs.is_zero() {
            return BigRational::zero();
        }
        // Both operands are in lowest terms, so the crosswise-cancelled
        // product is too.
        let g1 = gcd_euclid_first(self.numer(), rhs.denom());
        let g2 = gcd_euclid_first(self.denom(), rhs.numer());
        let num = (self.numer() / &g1) * (rhs.numer() / &g2);
        let den = (self.denom() / &g2) * (rhs.denom() / &g1);
        if den.is_negative() {
            BigRational::new_raw(-num, -den)
        } else {
            BigRational::new_raw(num, den)
        }
    }
}

/// `gcd(a, b)` with one Euclid step up front, which is much faster than a
/// binary gcd when `b` is small relative to `a`.
fn gcd_euclid_first(a: &BigInt, b: &BigInt) -> BigInt {
    if a.bits() > b.bits() && !b.is_zero() {
        (a % b).gcd(b)
    } else if b.bits() > a.bits() && !a.is_zero() {
        (b % a).gcd(a)
    } else {
        a.gcd(b)
    }
}

/// Parses `"1/3"`, `"-2"`, `"0.45"` or `"1e-2"` into an exact rational.
///
/// Decimal input is read digit by digit, so `"0.1"` is exactly `1/10`.
pub fn parse_rational(s: &str) -> Result<BigRational> {
    let s = s.trim();
    let bad = || Error::Config(format!("cannot parse {s:?} as a rational number"));
    if let Some((n, d)) = s.split_once('/') {
        let n: BigInt = n.trim().parse().map_err(|_| bad())?;
        let d: BigInt = d.trim().parse().map_err(|_| bad())?;
        if d.is_zero() {
            return Err(bad());
        }
        return Ok(BigRational::new(n, d));
    }
    let (mantissa, exp) = match s.find(['e', 'E']) {
        Some(pos) => (&s[..pos], s[pos + 1..].parse::<i32>().map_err(|_| bad())?),
        None => (s, 0),
    };
    let (neg, mantissa) = match mantissa.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, mantissa.strip_prefix('+').unwrap_or(mantissa)),
    };
    let (int_part, frac_part) = mantissa.split_once('.').unwrap_or((mantissa, ""));
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(bad());
    }
    if !int_part.chars().chain(frac_part.chars()).all(|c| c.is_ascii_digit()) {
        return Err(bad());
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: BigInt = if digits.is_empty() {
        BigInt::zero()
    } else {
        digits.parse().map_err(|_| bad())?
    };
    let scale = exp - frac_part.len() as i32;
    let ten = BigInt::from(10u32);
    let mut value = BigRational::from_integer(numer);
    if scale >= 0 {
        value *= BigRational::from_integer(num_traits::pow(ten, scale as usize));
    } else {
        value /= BigRational::from_integer(num_traits::pow(ten, (-scale) as usize));
    }
    Ok(if neg { -value } else { value })
}

/// Converts an exact rational to the nearest `f64`.
pub fn rational_to_f64(r: &BigRational) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Exact rational with the same value as a finite `f64`.
pub fn f64_to_rational(x: f64) -> Result<BigRational> {
    BigRational::from_f64(x).ok_or_else(|| Error::Domain(format!("{x} is not finite")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> BigRational {
        BigRational::new(n.into(), d.into())
    }

    #[test]
    fn parses_fractions_and_decimals() {
        assert_eq!(parse_rational("1/3").unwrap(), r(1, 3));
        assert_eq!(parse_rational("0.45").unwrap(), r(9, 20));
        assert_eq!(parse_rational("-2").unwrap(), r(-2, 1));
        assert_eq!(parse_rational("1e-2").unwrap(), r(1, 100));
        assert_eq!(parse_rational(".5").unwrap(), r(1, 2));
        assert!(parse_rational("abc").is_err());
        assert!(parse_rational("1/0").is_err());
    }

    #[test]
    fn negative_powers() {
        assert_eq!(r(2, 3).ipow(-2), r(9, 4));
        assert_eq!(Scalar::ipow(&0.5f64, -3), 8.0);
    }

    proptest::proptest! {
        #[test]
        fn reduced_product_matches(a in -10_000i64..10_000, b in 1i64..10_000, c in -10_000i64..10_000, d in 1i64..10_000, e in 0u32..40) {
            let x = r(a, b) * BigRational::from_integer(BigInt::from(3).pow(e));
            let y = r(c, d);
            let z = x.mul_reduced(&y);
            proptest::prop_assert_eq!(&z, &(x * y));
            proptest::prop_assert_eq!(z.clone(), BigRational::new(z.numer().clone(), z.denom().clone()));
        }
    }
}
