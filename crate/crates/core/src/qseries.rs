//! q-Pochhammer symbols, basic hypergeometric series and the classical
//! identities the rest of the crate leans on.
//!
//! Convention: `(a;q)_n = prod_{i=0}^{n-1} (1 - a q^i)`, so `(a;q)_0 = 1` and
//! `(a;q)_n` has exactly `n` factors.

use std::collections::BTreeMap;
use std::ops::{Mul, Sub};

use num_complex::Complex64;
use num_traits::{One, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Default relative accuracy for truncated infinite products.
pub const PRODUCT_TOL: f64 = 1e-17;

/// Extra factors kept past the geometric cutoff of an infinite product.
const GUARD_FACTORS: usize = 8;

/// Finite q-Pochhammer symbol `(a;q)_n`.
pub fn qpoch<T>(a: &T, q: &T, n: usize) -> T
where
    T: Clone + One + Sub<Output = T> + Mul<Output = T>,
{
    let mut acc = T::one();
    let mut aq = a.clone();
    for i in 0..n {
        acc = acc * (T::one() - aq.clone());
        if i + 1 < n {
            aq = aq * q.clone();
        }
    }
    acc
}

fn check_q(q: f64) -> Result<()> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::Domain(format!("q = {q} must lie in [0, 1)")));
    }
    Ok(())
}

/// Number of factors kept by [`qpoch_inf`]: the smallest `i` with
/// `|a| q^i < tol (1 - q)`, plus guard factors.
pub fn qpoch_inf_cutoff(abs_a: f64, q: f64, tol: f64) -> usize {
    if abs_a == 0.0 {
        return 0;
    }
    if q == 0.0 {
        return 1;
    }
    let target = tol * (1.0 - q);
    let mut i = 0usize;
    let mut mag = abs_a;
    while mag >= target {
        mag *= q;
        i += 1;
        if i > 10_000_000 {
            break;
        }
    }
    i + GUARD_FACTORS
}

/// Infinite q-Pochhammer symbol `(a;q)_inf`, truncated so the neglected
/// tail changes the result by a relative amount below `tol`.
pub fn qpoch_inf(a: Complex64, q: f64, tol: f64) -> Result<Complex64> {
    check_q(q)?;
    if !(tol > 0.0) {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    if !a.re.is_finite() || !a.im.is_finite() {
        return Err(Error::Domain("a must be finite".into()));
    }
    let cutoff = qpoch_inf_cutoff(a.norm(), q, tol);
    Ok(qpoch(&a, &Complex64::new(q, 0.0), cutoff))
}

/// Real-argument version of [`qpoch_inf`].
pub fn qpoch_inf_real(a: f64, q: f64, tol: f64) -> Result<f64> {
    qpoch_inf(Complex64::new(a, 0.0), q, tol).map(|z| z.re)
}

/// Gaussian binomial `[n choose k]_q = (q;q)_n / ((q;q)_k (q;q)_{n-k})`.
pub fn qbinomial<T: Scalar>(n: usize, k: usize, q: &T) -> T {
    if k > n {
        return T::zero();
    }
    // Product form avoids dividing by (q;q)_j, which is fine for q<1 but
    // keeps rationals smaller.
    let k = k.min(n - k);
    let mut num = T::one();
    let mut den = T::one();
    for i in 0..k {
        num = num * (T::one() - q.upow(n - i));
        den = den * (T::one() - q.upow(i + 1));
    }
    num / den
}

/// q-integer `[j]_q = 1 + q + ... + q^{j-1}`.
pub fn qinteger<T: Scalar>(j: usize, q: &T) -> T {
    let mut acc = T::zero();
    let mut p = T::one();
    for _ in 0..j {
        acc = acc + p.clone();
        p = p * q.clone();
    }
    acc
}

/// q-factorial `k_q! = (q;q)_k / (1-q)^k = [1]_q [2]_q ... [k]_q`.
pub fn qfactorial<T: Scalar>(k: usize, q: &T) -> T {
    (1..=k).fold(T::one(), |acc, i| acc * qinteger(i, q))
}

/// Finite expansion `(a;q)_y = sum_r (-a)^r q^{r(r-1)/2} [y choose r]_q`.
pub fn expand_qpoch<T: Scalar>(a: &T, q: &T, y: usize) -> T {
    let mut acc = T::zero();
    for r in 0..=y {
        let term = (-a.clone()).upow(r) * q.upow(r * r.saturating_sub(1) / 2) * qbinomial(y, r, q);
        acc = acc + term;
    }
    acc
}

const TERMINATION_SCAN: usize = 4096;

/// Finds `n` with `a q^n = 1` (so `a = q^{-n}` and the series stops after `n`).
fn termination_index(a: Complex64, q: f64) -> Option<usize> {
    let mut aq = a;
    for n in 0..TERMINATION_SCAN {
        if (aq - 1.0).norm() < 1e-12 * aq.norm().max(1.0) {
            return Some(n);
        }
        aq *= q;
        if aq.norm() < 1e-300 {
            break;
        }
    }
    None
}

/// Basic hypergeometric series `2phi1(a, b; c; q, z)`.
///
/// Terminates when `a = q^{-n}`; otherwise requires `|z| < 1` and sums until
/// the term magnitude falls below `tol` relative to the partial sum.
pub fn phi21(
    a: Complex64,
    b: Complex64,
    c: Complex64,
    q: f64,
    z: Complex64,
    tol: f64,
) -> Result<Complex64> {
    check_q(q)?;
    let stop = termination_index(a, q);
    if stop.is_none() && z.norm() >= 1.0 {
        return Err(Error::Divergence { abs_z: z.norm() });
    }
    let max_terms = stop.map_or(1_000_000, |n| n + 1);
    let mut sum = Complex64::zero();
    let mut term = Complex64::one();
    let (mut aq, mut bq, mut cq, mut qn1) = (a, b, c, q);
    let mut small_run = 0;
    for n in 0..max_terms {
        sum += term;
        if stop.is_none() {
            if term.norm() < tol * sum.norm().max(1.0) {
                small_run += 1;
                if small_run >= 2 {
                    return Ok(sum);
                }
            } else {
                small_run = 0;
            }
        }
        if n + 1 == max_terms {
            break;
        }
        let den_c = Complex64::one() - cq;
        if den_c.norm() < 1e-14 {
            return Err(Error::Pole { index: n });
        }
        term = term * (Complex64::one() - aq) * (Complex64::one() - bq)
            / ((1.0 - qn1) * den_c)
            * z;
        aq *= q;
        bq *= q;
        cq *= q;
        qn1 *= q;
    }
    if stop.is_none() {
        return Err(Error::Divergence { abs_z: z.norm() });
    }
    Ok(sum)
}

/// Terminating `2phi1(q^{-n}, b; c; q, z)` in any scalar type (exact for rationals).
pub fn phi21_terminating<T: Scalar>(n: usize, b: &T, c: &T, q: &T, z: &T) -> Result<T> {
    if q.is_zero() {
        return Err(Error::Domain("q^{-n} needs q > 0".into()));
    }
    let qinv = T::one() / q.clone();
    let a = qinv.upow(n);
    let mut sum = T::zero();
    let mut term = T::one();
    let (mut aq, mut bq, mut cq, mut qj) = (a, b.clone(), c.clone(), q.clone());
    for j in 0..=n {
        sum = sum + term.clone();
        if j == n {
            break;
        }
        let den_c = T::one() - cq.clone();
        if den_c.is_zero() {
            return Err(Error::Pole { index: j });
        }
        term = term * (T::one() - aq.clone()) * (T::one() - bq.clone())
            / ((T::one() - qj.clone()) * den_c)
            * z.clone();
        aq = aq * q.clone();
        bq = bq * q.clone();
        cq = cq * q.clone();
        qj = qj * q.clone();
    }
    Ok(sum)
}

/// Right-hand side of the terminating q-Gauss sum: `(c/b;q)_n / (c;q)_n * b^n`.
pub fn qgauss_terminating_rhs<T: Scalar>(n: usize, b: &T, c: &T, q: &T) -> Result<T> {
    let den = qpoch(c, q, n);
    if den.is_zero() {
        return Err(Error::Pole { index: n });
    }
    Ok(qpoch(&(c.clone() / b.clone()), q, n) / den * b.upow(n))
}

/// One parameter tuple for [`identity_suite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IdentityCase {
    /// `(a;q)_{n+1} = (a;q)_n (1 - a q^n)`.
    Recurrence { a: Complex64, n: usize },
    /// (A) `(a;q)_n = (a;q)_inf / (a q^n;q)_inf`.
    InfiniteRatio { a: Complex64, n: usize },
    /// (B) `(a^{-1} q^{1-n};q)_n = (a;q)_n (-1/a)^n q^{-n(n-1)/2}`.
    Reflection { a: Complex64, n: usize },
    /// (C) `(a;q)_{n-k} = (a;q)_n / (a^{-1} q^{1-n};q)_k (-q/a)^k q^{k(k-1)/2 - nk}`.
    ShiftedIndex { a: Complex64, n: usize, k: usize },
    /// Heine's q-Gauss sum at `z = c/(ab)`.
    QGauss { a: Complex64, b: Complex64, c: Complex64 },
    /// `2phi1(q^{-n}, b; c; q, q) = (c/b;q)_n / (c;q)_n b^n`.
    QGaussTerminating { n: usize, b: Complex64, c: Complex64 },
    /// `(a;q)_y` against its finite binomial-type expansion.
    Expansion { a: Complex64, y: usize },
}

impl IdentityCase {
    pub fn name(&self) -> &'static str {
        match self {
            IdentityCase::Recurrence { .. } => "recurrence",
            IdentityCase::InfiniteRatio { .. } => "A",
            IdentityCase::Reflection { .. } => "B",
            IdentityCase::ShiftedIndex { .. } => "C",
            IdentityCase::QGauss { .. } => "q-gauss",
            IdentityCase::QGaussTerminating { .. } => "q-gauss-terminating",
            IdentityCase::Expansion { .. } => "expansion",
        }
    }

    /// Evaluates `(lhs, rhs)` at `q`.
    pub fn sides(&self, q: f64) -> Result<(Complex64, Complex64)> {
        check_q(q)?;
        let qc = Complex64::new(q, 0.0);
        let one = Complex64::one();
        let pow = |e: i64| -> Result<Complex64> {
            if e < 0 && q == 0.0 {
                return Err(Error::Domain("negative power of q = 0".into()));
            }
            Ok(Complex64::new(q.powi(e as i32), 0.0))
        };
        let nonzero = |a: Complex64| -> Result<()> {
            if a.norm() == 0.0 {
                return Err(Error::Domain("a must be nonzero".into()));
            }
            Ok(())
        };
        match *self {
            IdentityCase::Recurrence { a, n } => {
                let lhs = qpoch(&a, &qc, n + 1);
                let rhs = qpoch(&a, &qc, n) * (one - a * pow(n as i64)?);
                Ok((lhs, rhs))
            }
            IdentityCase::InfiniteRatio { a, n } => {
                let lhs = qpoch(&a, &qc, n);
                let tail = qpoch_inf(a * pow(n as i64)?, q, PRODUCT_TOL)?;
                if tail.norm() == 0.0 {
                    return Err(Error::Pole { index: n });
                }
                Ok((lhs, qpoch_inf(a, q, PRODUCT_TOL)? / tail))
            }
            IdentityCase::Reflection { a, n } => {
                nonzero(a)?;
                let ni = n as i64;
                let lhs = qpoch(&(a.inv() * pow(1 - ni)?), &qc, n);
                let rhs = qpoch(&a, &qc, n)
                    * (-a.inv()).powu(n as u32)
                    * pow(-(ni * (ni - 1) / 2))?;
                Ok((lhs, rhs))
            }
            IdentityCase::ShiftedIndex { a, n, k } => {
                nonzero(a)?;
                if k > n {
                    return Err(Error::Domain(format!("k = {k} exceeds n = {n}")));
                }
                let (ni, ki) = (n as i64, k as i64);
                let lhs = qpoch(&a, &qc, n - k);
                let den = qpoch(&(a.inv() * pow(1 - ni)?), &qc, k);
                if den.norm() == 0.0 {
                    return Err(Error::Pole { index: k });
                }
                let rhs = qpoch(&a, &qc, n) / den
                    * (-qc * a.inv()).powu(k as u32)
                    * pow(ki * (ki - 1) / 2 - ni * ki)?;
                Ok((lhs, rhs))
            }
            IdentityCase::QGauss { a, b, c } => {
                nonzero(a * b)?;
                let z = c / (a * b);
                if z.norm() >= 1.0 {
                    return Err(Error::Domain(format!("|c/ab| = {} must be < 1", z.norm())));
                }
                let lhs = phi21(a, b, c, q, z, 1e-17)?;
                let num = qpoch_inf(c / a, q, PRODUCT_TOL)? * qpoch_inf(c / b, q, PRODUCT_TOL)?;
                let den = qpoch_inf(c, q, PRODUCT_TOL)? * qpoch_inf(z, q, PRODUCT_TOL)?;
                if den.norm() == 0.0 {
                    return Err(Error::Pole { index: 0 });
                }
                Ok((lhs, num / den))
            }
            IdentityCase::QGaussTerminating { n, b, c } => {
                nonzero(b)?;
                if q == 0.0 {
                    return Err(Error::Domain("terminating q-Gauss needs q > 0".into()));
                }
                let a = Complex64::new(q.powi(-(n as i32)), 0.0);
                let lhs = phi21(a, b, c, q, qc, 1e-17)?;
                let rhs = qgauss_terminating_rhs_complex(n, b, c, q)?;
                Ok((lhs, rhs))
            }
            IdentityCase::Expansion { a, y } => {
                let lhs = qpoch(&a, &qc, y);
                let mut rhs = Complex64::zero();
                for r in 0..=y {
                    let qb = qbinomial(y, r, &q);
                    rhs += (-a).powu(r as u32) * q.powi((r * r.saturating_sub(1) / 2) as i32) * qb;
                }
                Ok((lhs, rhs))
            }
        }
    }
}

fn qgauss_terminating_rhs_complex(n: usize, b: Complex64, c: Complex64, q: f64) -> Result<Complex64> {
    let qc = Complex64::new(q, 0.0);
    let den = qpoch(&c, &qc, n);
    if den.norm() == 0.0 {
        return Err(Error::Pole { index: n });
    }
    Ok(qpoch(&(c / b), &qc, n) / den * b.powu(n as u32))
}

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct IdentityStats {
    pub evaluated: usize,
    pub max_abs: f64,
    pub max_rel: f64,
}

#[derive(Debug, Clone, Default, Serialize, PartialEq)]
pub struct IdentityReport {
    pub q: f64,
    pub identities: BTreeMap<String, IdentityStats>,
    /// Cases whose parameters violate the identity's preconditions.
    pub rejected: Vec<(String, String)>,
}

impl IdentityReport {
    pub fn max_abs(&self) -> f64 {
        self.identities.values().map(|s| s.max_abs).fold(0.0, f64::max)
    }

    pub fn max_rel(&self) -> f64 {
        self.identities.values().map(|s| s.max_rel).fold(0.0, f64::max)
    }
}

/// Evaluates every case and records the worst absolute and relative residual
/// per identity. Precondition violations are recorded, not fatal.
pub fn identity_suite(q: f64, cases: &[IdentityCase]) -> IdentityReport {
    let mut report = IdentityReport {
        q,
        ..Default::default()
    };
    for case in cases {
        match case.sides(q) {
            Ok((lhs, rhs)) => {
                let abs = (lhs - rhs).norm();
                let rel = abs / lhs.norm().max(rhs.norm()).max(f64::MIN_POSITIVE);
                let stats = report.identities.entry(case.name().to_string()).or_default();
                stats.evaluated += 1;
                stats.max_abs = stats.max_abs.max(abs);
                stats.max_rel = stats.max_rel.max(if abs == 0.0 { 0.0 } else { rel });
            }
            Err(e) => report.rejected.push((case.name().to_string(), e.to_string())),
        }
    }
    report
}

/// A deterministic grid of cases touching every identity; used by the CLI.
pub fn default_identity_cases() -> Vec<IdentityCase> {
    let c = |re: f64, im: f64| Complex64::new(re, im);
    let mut cases = Vec::new();
    let points = [c(0.2, 0.0), c(-0.7, 0.3), c(0.55, -0.4), c(1.3, 0.0), c(-2.1, 0.6)];
    for &a in &points {
        for n in 0..7 {
            cases.push(IdentityCase::Recurrence { a, n });
            cases.push(IdentityCase::InfiniteRatio { a, n });
            cases.push(IdentityCase::Reflection { a, n });
            cases.push(IdentityCase::Expansion { a, y: n });
            for k in 0..=n {
                cases.push(IdentityCase::ShiftedIndex { a, n, k });
            }
        }
    }
    for &(a, b, cc) in &[
        (0.5, 0.3, 0.1),
        (0.9, -0.6, 0.2),
        (-0.8, 0.7, 0.35),
        (0.6, 0.6, -0.25),
    ] {
        cases.push(IdentityCase::QGauss {
            a: c(a, 0.0),
            b: c(b, 0.0),
            c: c(cc, 0.0),
        });
    }
    for n in 0..6 {
        cases.push(IdentityCase::QGaussTerminating {
            n,
            b: c(0.45, 0.1),
            c: c(-0.3, 0.2),
        });
    }
    cases
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    #[test]
    fn qpoch_trivial_cases() {
        assert_eq!(qpoch(&c(3.7), &c(0.2), 0), c(1.0));
        assert_eq!(qpoch(&2.0, &0.5, 2), 0.0);
        assert_eq!(qpoch(&0.5, &0.0, 3), 0.5);
        assert_eq!(qpoch(&r(1, 2), &r(1, 3), 2), r(1, 2) * r(5, 6));
    }

    #[test]
    fn qpoch_inf_trivial_cases() {
        assert_eq!(qpoch_inf(c(0.0), 0.4, 1e-14).unwrap(), c(1.0));
        assert_abs_diff_eq!(qpoch_inf(c(0.3), 0.0, 1e-14).unwrap().re, 0.7);
        assert!(qpoch_inf(c(0.3), 1.0, 1e-14).is_err());
        assert!(qpoch_inf(c(0.3), 0.5, 0.0).is_err());
    }

    #[test]
    fn qpoch_inf_matches_deep_truncation() {
        let shallow = qpoch_inf(c(0.3), 0.5, 1e-14).unwrap();
        let deep = qpoch(&c(0.3), &c(0.5), 60);
        assert!((shallow - deep).norm() < 1e-13);
    }

    #[test]
    fn qfactorial_values() {
        assert_eq!(qfactorial::<f64>(0, &0.3), 1.0);
        assert_eq!(qfactorial(2, &r(2, 5)), r(7, 5));
        assert_eq!(qfactorial::<f64>(3, &0.0), 1.0);
        // (q;q)_k / (1-q)^k
        let q: f64 = 0.37;
        let direct = qpoch(&q, &q, 4) / (1.0 - q).powi(4);
        assert_abs_diff_eq!(qfactorial(4, &q), direct, epsilon = 1e-14);
    }

    #[test]
    fn phi21_trivial_cases() {
        let v = phi21(c(0.3), c(0.2), c(0.1), 0.5, c(0.0), 1e-16).unwrap();
        assert_eq!(v, c(1.0));
        let v = phi21(c(1.0), c(0.2), c(0.1), 0.5, c(0.9), 1e-16).unwrap();
        assert_eq!(v, c(1.0));
    }

    #[test]
    fn phi21_two_term_degeneration() {
        // a = q^{-1}, z = q: brute-force two-term sum equals (c/b;q)_1/(c;q)_1 b.
        let (q, b, cc) = (0.4, 0.3, 0.15);
        let v = phi21(c(1.0 / q), c(b), c(cc), q, c(q), 1e-16).unwrap();
        let brute = 1.0 + (1.0 - 1.0 / q) * (1.0 - b) / ((1.0 - q) * (1.0 - cc)) * q;
        let closed = (1.0 - cc / b) / (1.0 - cc) * b;
        assert_abs_diff_eq!(v.re, brute, epsilon = 1e-14);
        assert_abs_diff_eq!(v.re, closed, epsilon = 1e-14);
    }

    #[test]
    fn phi21_errors() {
        let e = phi21(c(0.3), c(0.2), c(0.1), 0.5, c(1.2), 1e-16).unwrap_err();
        assert!(matches!(e, Error::Divergence { .. }));
        // c = q^{-1} makes (c;q)_2 vanish before the a = q^{-3} termination.
        let q = 0.5;
        let e = phi21(c(8.0), c(0.2), c(2.0), q, c(0.3), 1e-16).unwrap_err();
        assert!(matches!(e, Error::Pole { index: 1 }));
    }

    #[test]
    fn identity_examples() {
        let report = identity_suite(
            0.4,
            &[IdentityCase::InfiniteRatio { a: c(0.2), n: 3 }],
        );
        assert!(report.identities["A"].max_abs < 1e-12);

        let report = identity_suite(
            0.45,
            &[IdentityCase::QGauss { a: c(0.5), b: c(0.3), c: c(0.1) }],
        );
        assert!(report.identities["q-gauss"].max_abs < 1e-10);

        let report = identity_suite(0.3, &[IdentityCase::Expansion { a: c(0.7), y: 4 }]);
        assert!(report.identities["expansion"].max_abs < 1e-12);
    }

    #[test]
    fn identity_suite_records_domain_errors() {
        let report = identity_suite(
            0.5,
            &[
                IdentityCase::QGauss { a: c(0.1), b: c(0.1), c: c(0.5) },
                IdentityCase::Reflection { a: c(0.0), n: 2 },
            ],
        );
        assert_eq!(report.rejected.len(), 2);
        assert!(report.identities.is_empty());
    }

    #[test]
    fn default_cases_hold() {
        for q in [0.0, 0.3, 0.7] {
            let report = identity_suite(q, &default_identity_cases());
            for (name, stats) in &report.identities {
                // The terminating sum has terms of size q^{-n} that cancel.
                let tol = if name == "q-gauss-terminating" { 1e-8 } else { 1e-12 };
                assert!(stats.max_rel < tol, "q = {q}, {name}: {stats:?}");
            }
        }
    }

    #[test]
    fn terminating_qgauss_exact() {
        for n in 0..7 {
            let (b, cc, q) = (r(3, 7), r(-2, 5), r(1, 3));
            let lhs = phi21_terminating(n, &b, &cc, &q, &q).unwrap();
            let rhs = qgauss_terminating_rhs(n, &b, &cc, &q).unwrap();
            assert_eq!(lhs, rhs, "n = {n}");
        }
    }

    #[test]
    fn expansion_exact() {
        let (a, q) = (r(7, 10), r(3, 10));
        for y in 0..8 {
            assert_eq!(expand_qpoch(&a, &q, y), qpoch(&a, &q, y));
        }
    }

    #[test]
    fn printed_upper_index_breaks_normalization() {
        // With n+1 factors per symbol, phi(0|1) + phi(1|1) != 1.
        let (q, mu, nu): (f64, f64, f64) = (0.4, 0.5, 0.1);
        let p = |a: f64, n: usize| qpoch(&a, &q, n + 1);
        let phi = |j: usize, m: usize| {
            mu.powi(j as i32) * p(nu / mu, j) * p(mu, m - j) / p(nu, m) * p(q, m) / (p(q, j) * p(q, m - j))
        };
        assert!((phi(0, 1) + phi(1, 1) - 1.0).abs() > 1e-3);
    }
}
