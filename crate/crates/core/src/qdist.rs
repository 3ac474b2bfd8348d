//! The (q, mu, nu)-deformed Binomial distribution
//!
//! ```text
//! phi(j|m) = mu^j (nu/mu;q)_j (mu;q)_{m-j} / (nu;q)_m * (q;q)_m / ((q;q)_j (q;q)_{m-j})
//! ```
//!
//! on `{0, ..., m}`, and its `m = inf` limit on all nonnegative integers.
//! The factor `mu^j (nu/mu;q)_j` is evaluated as `prod_{i<j} (mu - nu q^i)`,
//! which stays well defined at `mu = 0`.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::qseries::{qbinomial, qpoch, qpoch_inf_real, PRODUCT_TOL};
use crate::rng::RngStream;
use crate::scalar::{rational_to_f64, Scalar};
use crate::Rational;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub q: T,
    pub mu: T,
    pub nu: T,
}

impl<T: Scalar> ModelParams<T> {
    /// Checks `0 <= q < 1` and `0 <= nu <= mu < 1`.
    pub fn new(q: T, mu: T, nu: T) -> Result<Self> {
        let zero = T::zero();
        let one = T::one();
        if !(q >= zero && q < one) {
            return Err(Error::Domain(format!("q = {q:?} must lie in [0, 1)")));
        }
        if !(nu >= zero) {
            return Err(Error::Domain(format!("nu = {nu:?} must be nonnegative")));
        }
        if !(mu >= nu && mu < one) {
            return Err(Error::Domain(format!(
                "mu = {mu:?} must lie in [nu, 1) with nu = {nu:?}"
            )));
        }
        Ok(Self { q, mu, nu })
    }

    /// Same `q` and `nu`, different `mu`.
    pub fn with_mu(&self, mu: T) -> Result<Self> {
        Self::new(self.q.clone(), mu, self.nu.clone())
    }

    /// Single-particle move probability `(mu - nu) / (1 - nu)`.
    pub fn move_prob(&self) -> T {
        (self.mu.clone() - self.nu.clone()) / (T::one() - self.nu.clone())
    }

    pub fn to_f64(&self) -> ModelParams<f64> {
        ModelParams {
            q: self.q.to_f64_lossy(),
            mu: self.mu.to_f64_lossy(),
            nu: self.nu.to_f64_lossy(),
        }
    }
}

impl ModelParams<Rational> {
    pub fn parse(q: &str, mu: &str, nu: &str) -> Result<Self> {
        Self::new(
            crate::parse_rational(q)?,
            crate::parse_rational(mu)?,
            crate::parse_rational(nu)?,
        )
    }

    pub fn to_float(&self) -> ModelParams<f64> {
        ModelParams {
            q: rational_to_f64(&self.q),
            mu: rational_to_f64(&self.mu),
            nu: rational_to_f64(&self.nu),
        }
    }
}

/// Upper end of the support: a finite `m` or infinity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum JumpSupport {
    Finite(usize),
    Infinite,
}

impl fmt::Display for JumpSupport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            JumpSupport::Finite(m) => write!(f, "{m}"),
            JumpSupport::Infinite => write!(f, "inf"),
        }
    }
}

/// `prod_{i<j} (mu - nu q^i)`, i.e. `mu^j (nu/mu;q)_j`.
fn lead_factor<T: Scalar>(j: usize, p: &ModelParams<T>) -> T {
    let mut acc = T::one();
    let mut qi = T::one();
    for _ in 0..j {
        acc = acc * (p.mu.clone() - p.nu.clone() * qi.clone());
        qi = qi * p.q.clone();
    }
    acc
}

/// `phi(j|m)` for finite `m`, by direct products.
pub fn phi_pmf<T: Scalar>(j: usize, m: usize, p: &ModelParams<T>) -> Result<T> {
    if j > m {
        return Err(Error::Range { j, m });
    }
    let q = &p.q;
    let num = lead_factor(j, p) * qpoch(&p.mu, q, m - j) * qpoch(q, q, m);
    let den = qpoch(&p.nu, q, m) * qpoch(q, q, j) * qpoch(q, q, m - j);
    Ok(num / den)
}

/// The whole row `phi(0|m), ..., phi(m|m)` via the term ratio
/// `phi(j+1|m)/phi(j|m) = (mu - nu q^j)(1 - q^{m-j}) / ((1 - q^{j+1})(1 - mu q^{m-j-1}))`.
pub fn phi_row<T: Scalar>(m: usize, p: &ModelParams<T>) -> Vec<T> {
    let q = &p.q;
    let one = T::one();
    let mut row = Vec::with_capacity(m + 1);
    let qpow: Vec<T> = (0..=m).map(|i| q.upow(i)).collect();
    let poch = |a: &T| {
        qpow[..m]
            .iter()
            .fold(one.clone(), |acc, qi| acc.mul_reduced(&(one.clone() - a.clone() * qi.clone())))
    };
    let mut term = poch(&p.mu) / poch(&p.nu);
    for j in 0..=m {
        row.push(term.clone());
        if j == m {
            break;
        }
        let num = (p.mu.clone() - p.nu.clone() * qpow[j].clone()) * (one.clone() - qpow[m - j].clone());
        let den = (one.clone() - qpow[j + 1].clone()) * (one.clone() - p.mu.clone() * qpow[m - j - 1].clone());
        term = term.mul_reduced(&(num / den));
    }
    row
}

/// `phi(0|inf) = (mu;q)_inf / (nu;q)_inf`.
pub fn phi0_infinite(p: &ModelParams<f64>) -> Result<f64> {
    Ok(qpoch_inf_real(p.mu, p.q, PRODUCT_TOL)? / qpoch_inf_real(p.nu, p.q, PRODUCT_TOL)?)
}

/// `phi(j|inf) = prod_{i<j}(mu - nu q^i) (mu;q)_inf / ((nu;q)_inf (q;q)_j)`.
pub fn phi_pmf_infinite(j: usize, p: &ModelParams<f64>) -> Result<f64> {
    Ok(lead_factor(j, p) / qpoch(&p.q, &p.q, j) * phi0_infinite(p)?)
}

/// Dispatches on the support.
pub fn phi_pmf_support(j: usize, m: JumpSupport, p: &ModelParams<f64>) -> Result<f64> {
    match m {
        JumpSupport::Finite(m) => phi_pmf(j, m, p),
        JumpSupport::Infinite => phi_pmf_infinite(j, p),
    }
}

/// The `nu = 0` weight `mu^j (mu;q)_{m-j} [m choose j]_q`.
pub fn phi_pmf_geometric<T: Scalar>(j: usize, m: usize, q: &T, mu: &T) -> Result<T> {
    if j > m {
        return Err(Error::Range { j, m });
    }
    Ok(mu.upow(j) * qpoch(mu, q, m - j) * qbinomial(m, j, q))
}

/// `S_{m,y} = sum_{j<=m} phi(j|m) q^{jy}`.
pub fn duality_sum<T: Scalar>(m: usize, y: usize, p: &ModelParams<T>) -> T {
    let qy = p.q.upow(y);
    let mut acc = T::zero();
    let mut w = T::one();
    for v in phi_row(m, p) {
        acc = acc + v * w.clone();
        w = w * qy.clone();
    }
    acc
}

/// `|S_{m,y} - S_{y,m}|`; exactly zero in rational arithmetic.
pub fn verify_duality<T: Scalar>(m: usize, y: usize, p: &ModelParams<T>) -> T {
    (duality_sum(m, y, p) - duality_sum(y, m, p)).abs()
}

/// Truncated infinite sum with a certified bound on what was left out.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertifiedSum {
    pub value: f64,
    pub tail_bound: f64,
    pub terms: usize,
}

/// `sum_j phi(j|inf) x^j` for `0 <= x <= 1`, stopped once the geometric
/// majorant of the remaining terms is below `tol`.
///
/// For `j >= J` the term ratio is at most `mu x / (1 - q^{J+1})`, which bounds
/// the tail by `t_J r / (1 - r)`.
pub fn weighted_infinite_sum(x: f64, p: &ModelParams<f64>, tol: f64) -> Result<CertifiedSum> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("weight {x} must lie in [0, 1]")));
    }
    let mut term = phi0_infinite(p)?;
    let mut value = 0.0;
    let mut qj = 1.0; // q^j
    for j in 0..1_000_000usize {
        value += term;
        let next = term * (p.mu - p.nu * qj) / (1.0 - qj * p.q) * x;
        let r = p.mu * x / (1.0 - qj * p.q);
        if r < 1.0 {
            let bound = next / (1.0 - r);
            if bound <= tol {
                return Ok(CertifiedSum {
                    value,
                    tail_bound: bound,
                    terms: j + 1,
                });
            }
        }
        term = next;
        qj *= p.q;
    }
    Err(Error::TailBound {
        bound: f64::INFINITY,
        allowed: tol,
    })
}

/// `sum_j phi(j|inf) q^{jy}`, which should equal `phi(0|y)`.
pub fn duality_sum_infinite(y: usize, p: &ModelParams<f64>, tol: f64) -> Result<CertifiedSum> {
    weighted_infinite_sum(p.q.powi(y as i32), p, tol)
}

/// Largest finite `m` whose CDF table is cached by [`JumpSampler`].
pub const CACHED_ROWS: usize = 1024;
/// Hard cap on the enumerated support of the `m = inf` sampler.
pub const INFINITE_CAP: usize = 100_000;
/// Mass target for the `m = inf` table.
pub const INFINITE_MASS: f64 = 1.0 - 1e-12;

/// Inverse-CDF sampler for one parameter triple.
///
/// Finite rows are built on first use; the `m = inf` table is built up
/// front and stops at mass `1 - 1e-12` or `j = 10^5`.
pub struct JumpSampler {
    params: ModelParams<f64>,
    rows: Vec<OnceLock<Vec<f64>>>,
    infinite: Vec<f64>,
    infinite_deficit: f64,
    cap_events: AtomicU64,
}

impl fmt::Debug for JumpSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpSampler")
            .field("params", &self.params)
            .field("infinite_len", &self.infinite.len())
            .field("cap_events", &self.cap_events())
            .finish()
    }
}

fn cumulative(pmf: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    pmf.into_iter()
        .map(|v| {
            acc += v;
            acc
        })
        .collect()
}

impl JumpSampler {
    pub fn new(params: ModelParams<f64>) -> Result<Self> {
        let params = ModelParams::new(params.q, params.mu, params.nu)?;
        let mut pmf = Vec::new();
        let mut term = phi0_infinite(&params)?;
        let mut mass = 0.0;
        let mut qj = 1.0;
        for _ in 0..INFINITE_CAP {
            pmf.push(term);
            mass += term;
            if mass >= INFINITE_MASS || term == 0.0 && mass > 0.5 {
                break;
            }
            term *= (params.mu - params.nu * qj) / (1.0 - qj * params.q);
            qj *= params.q;
        }
        let infinite = cumulative(pmf);
        let infinite_deficit = (1.0 - mass).max(0.0);
        if mass < INFINITE_MASS {
            log::warn!(
                "m = inf jump table capped at j = {} with missing mass {:e}",
                infinite.len() - 1,
                infinite_deficit
            );
        }
        Ok(Self {
            params,
            rows: (0..=CACHED_ROWS).map(|_| OnceLock::new()).collect(),
            infinite,
            infinite_deficit,
            cap_events: AtomicU64::new(0),
        })
    }

    pub fn params(&self) -> &ModelParams<f64> {
        &self.params
    }

    /// Number of `m = inf` draws that landed beyond the enumerated table.
    pub fn cap_events(&self) -> u64 {
        self.cap_events.load(Ordering::Relaxed)
    }

    /// Mass not covered by the `m = inf` table.
    pub fn infinite_deficit(&self) -> f64 {
        self.infinite_deficit
    }

    fn finite_cdf(&self, m: usize) -> Vec<f64> {
        cumulative(phi_row(m, &self.params))
    }

    /// Maps a uniform `u` to a jump size.
    pub fn invert(&self, m: JumpSupport, u: f64) -> usize {
        match m {
            JumpSupport::Finite(0) => 0,
            JumpSupport::Finite(m) if m <= CACHED_ROWS => {
                let cdf = self.rows[m].get_or_init(|| self.finite_cdf(m));
                scan(cdf, u).unwrap_or(m)
            }
            JumpSupport::Finite(m) => {
                // Outside the cache: walk the row without storing it.
                let mut acc = 0.0;
                for (j, v) in phi_row(m, &self.params).into_iter().enumerate() {
                    acc += v;
                    if u < acc {
                        return j;
                    }
                }
                m
            }
            JumpSupport::Infinite => match scan(&self.infinite, u) {
                Some(j) => j,
                None => {
                    self.cap_events.fetch_add(1, Ordering::Relaxed);
                    self.infinite.len() - 1
                }
            },
        }
    }

    pub fn sample(&self, m: JumpSupport, stream: &mut RngStream) -> usize {
        if self.params.mu == self.params.nu {
            return 0;
        }
        self.invert(m, stream.uniform())
    }
}

fn scan(cdf: &[f64], u: f64) -> Option<usize> {
    cdf.iter().position(|&c| u < c)
}

/// One draw from `phi(.|m)`. Builds a throwaway sampler; use [`JumpSampler`] in loops.
pub fn phi_sample(m: JumpSupport, p: &ModelParams<f64>, stream: &mut RngStream) -> Result<usize> {
    Ok(JumpSampler::new(p.clone())?.sample(m, stream))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    fn exact(q: (i64, i64), mu: (i64, i64), nu: (i64, i64)) -> ModelParams<Rational> {
        ModelParams::new(r(q.0, q.1), r(mu.0, mu.1), r(nu.0, nu.1)).unwrap()
    }

    fn float(q: f64, mu: f64, nu: f64) -> ModelParams<f64> {
        ModelParams::new(q, mu, nu).unwrap()
    }

    #[test]
    fn params_validation() {
        assert!(ModelParams::new(1.0, 0.5, 0.1).is_err());
        assert!(ModelParams::new(0.5, 0.1, 0.2).is_err());
        assert!(ModelParams::new(0.5, 1.0, 0.2).is_err());
        assert!(ModelParams::new(0.5, 0.3, -0.1).is_err());
        assert!(ModelParams::new(f64::NAN, 0.3, 0.1).is_err());
        assert!(ModelParams::new(0.0, 0.0, 0.0).is_ok());
    }

    #[test]
    fn pmf_examples() {
        let p = exact((1, 3), (1, 2), (1, 5));
        assert_eq!(phi_pmf(0, 0, &p).unwrap(), r(1, 1));
        assert_eq!(phi_pmf(1, 1, &p).unwrap(), p.move_prob());
        assert_eq!(p.move_prob(), r(3, 8));
        assert_eq!(phi_pmf(2, 1, &p).unwrap_err(), Error::Range { j: 2, m: 1 });
        let eq = exact((1, 3), (1, 4), (1, 4));
        for m in 0..6 {
            for j in 0..=m {
                let v = phi_pmf(j, m, &eq).unwrap();
                assert_eq!(v, if j == 0 { r(1, 1) } else { r(0, 1) });
            }
        }
    }

    #[test]
    fn row_matches_direct_products() {
        let p = exact((2, 5), (3, 5), (1, 7));
        for m in 0..10 {
            let row = phi_row(m, &p);
            for (j, v) in row.iter().enumerate() {
                assert_eq!(*v, phi_pmf(j, m, &p).unwrap());
            }
        }
    }

    #[test]
    fn normalization_exact() {
        for p in [exact((1, 3), (1, 2), (1, 5)), exact((0, 1), (1, 2), (0, 1)), exact((9, 10), (4, 5), (4, 5))] {
            for m in 0..20 {
                let s = phi_row(m, &p).into_iter().fold(r(0, 1), |a, b| a + b);
                assert_eq!(s, r(1, 1));
            }
        }
    }

    #[test]
    fn duality_examples() {
        let p = exact((1, 3), (1, 2), (1, 5));
        assert_eq!(verify_duality(2, 1, &p), r(0, 1));
        assert_eq!(verify_duality(3, 5, &p), r(0, 1));
        for m in 0..5 {
            assert_eq!(duality_sum(m, 0, &p), r(1, 1));
            assert_eq!(duality_sum(0, m, &p), r(1, 1));
        }
    }

    #[test]
    fn infinite_duality_matches_phi0() {
        let p = float(0.45, 0.6, 0.15);
        for y in 0..8 {
            let s = duality_sum_infinite(y, &p, 1e-14).unwrap();
            let rhs = phi_pmf(0, y, &p).unwrap();
            assert!((s.value - rhs).abs() < 1e-12 + s.tail_bound, "y = {y}");
        }
    }

    #[test]
    fn finite_rows_approach_infinite() {
        let p = float(0.7, 0.7, 0.3);
        for j in 0..10 {
            let a = phi_pmf(j, 200, &p).unwrap();
            let b = phi_pmf_infinite(j, &p).unwrap();
            assert_abs_diff_eq!(a, b, epsilon = 1e-10);
        }
    }

    #[test]
    fn geometric_reduction() {
        let p = float(0.35, 0.55, 0.0);
        for m in 0..12 {
            for j in 0..=m {
                let a = phi_pmf(j, m, &p).unwrap();
                let b = phi_pmf_geometric(j, m, &p.q, &p.mu).unwrap();
                assert_abs_diff_eq!(a, b, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn sampler_degenerate_cases() {
        let mut s = RngStream::new(1, 1);
        let frozen = JumpSampler::new(float(0.4, 0.3, 0.3)).unwrap();
        let live = JumpSampler::new(float(0.4, 0.6, 0.2)).unwrap();
        for _ in 0..100 {
            assert_eq!(frozen.sample(JumpSupport::Infinite, &mut s), 0);
            assert_eq!(frozen.sample(JumpSupport::Finite(5), &mut s), 0);
            assert_eq!(live.sample(JumpSupport::Finite(0), &mut s), 0);
        }
        assert_eq!(live.cap_events(), 0);
        assert!(live.infinite_deficit() < 1e-12);
    }

    #[test]
    fn sampler_inverts_cdf() {
        let p = float(0.4, 0.6, 0.2);
        let sampler = JumpSampler::new(p.clone()).unwrap();
        let row = phi_row(3, &p);
        assert_eq!(sampler.invert(JumpSupport::Finite(3), 0.0), 0);
        assert_eq!(sampler.invert(JumpSupport::Finite(3), row[0] + 1e-9), 1);
        assert_eq!(sampler.invert(JumpSupport::Finite(3), 1.0 - 1e-15), 3);
        // Uncached rows agree with cached ones.
        let big = CACHED_ROWS + 5;
        let u = 0.77;
        let j = sampler.invert(JumpSupport::Finite(big), u);
        let cdf = cumulative(phi_row(big, &p));
        assert!(cdf[j] > u && (j == 0 || cdf[j - 1] <= u));
        // A uniform past the table counts as a cap event.
        sampler.invert(JumpSupport::Infinite, 1.0);
        assert_eq!(sampler.cap_events(), 1);
    }
}
