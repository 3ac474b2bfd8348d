//! Fredholm determinants for the e_q-Laplace transform
//! `E[1 / (zeta q^{x_n(t)+n}; q)_inf]` of TASEP from step data, the series
//! oracle built from exact q-moments, distribution recovery from moments and
//! the multiparticle hopping (MHADP) degeneration checks.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::chains::{tasep_mc, ParamSchedule};
use crate::error::{Error, Result};
use crate::exact::{qmoments_equal, solve_dense};
use crate::qdist::{phi_pmf, ModelParams};
use crate::qseries::{qpoch_inf, qpoch_inf_real, PRODUCT_TOL};
use crate::scalar::Scalar;

const POLE_GUARD: f64 = 1e-9;
pub const MAX_NYSTROM_NODES: usize = 512;

/// `g(w) = ((nu w;q)/(w;q))^n prod_{s<=t} (mu_s w;q)/(nu w;q) / (nu w;q)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GFunction {
    pub q: f64,
    pub nu: f64,
    pub n: usize,
    /// `mu_1, ..., mu_t`.
    pub mus: Vec<f64>,
}

impl GFunction {
    pub fn new(n: usize, t: usize, p: &ModelParams<f64>, mu_schedule: Option<&[f64]>) -> Result<Self> {
        let mus: Vec<f64> = (1..=t)
            .map(|s| mu_schedule.and_then(|m| m.get(s - 1).copied()).unwrap_or(p.mu))
            .collect();
        if let Some(bad) = mus.iter().find(|&&m| !(m >= p.nu && m < 1.0)) {
            return Err(Error::Schedule(format!("mu_s = {bad} leaves [nu, 1) with nu = {}", p.nu)));
        }
        Ok(Self {
            q: p.q,
            nu: p.nu,
            n,
            mus,
        })
    }

    pub fn t(&self) -> usize {
        self.mus.len()
    }

    fn check_poles(&self, w: Complex64) -> Result<()> {
        let near = |base: f64| {
            // zeros of (base w; q)_inf sit at q^{-j} / base.
            if base == 0.0 {
                return false;
            }
            let mut p = 1.0 / base;
            while p <= 2.0 * w.norm() + 2.0 {
                if (w - p).norm() < POLE_GUARD * p.max(1.0) {
                    return true;
                }
                if self.q == 0.0 {
                    break;
                }
                p /= self.q;
            }
            false
        };
        let nu_power = self.n as i64 - self.t() as i64 - 1;
        if (self.n > 0 && near(1.0)) || (nu_power < 0 && near(self.nu)) {
            return Err(Error::PoleProximity(format!("{w}")));
        }
        Ok(())
    }

    pub fn eval(&self, w: Complex64) -> Result<Complex64> {
        self.check_poles(w)?;
        let poch = |a: f64| qpoch_inf(a * w, self.q, PRODUCT_TOL);
        let nu_w = poch(self.nu)?;
        let mut g = (nu_w / poch(1.0)?).powi(self.n as i32) / nu_w;
        for &m in &self.mus {
            g *= poch(m)? / nu_w;
        }
        Ok(g)
    }

    /// `g(w)/g(qw)` with the infinite products cancelled.
    pub fn ratio_q(&self, w: Complex64) -> Complex64 {
        let one = Complex64::new(1.0, 0.0);
        let nu_w = one - self.nu * w;
        let mut f = (nu_w / (one - w)).powi(self.n as i32) / nu_w;
        for &m in &self.mus {
            f *= (one - m * w) / nu_w;
        }
        f
    }
}

/// `g(w)` at a single point.
pub fn g_eval(w: Complex64, n: usize, t: usize, p: &ModelParams<f64>, mu_schedule: Option<&[f64]>) -> Result<Complex64> {
    GFunction::new(n, t, p, mu_schedule)?.eval(w)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize)]
pub enum KernelKind {
    MellinBarnes,
    Cauchy,
}

/// Nyström discretization: a w-circle, its starting node count, and for the
/// Mellin-Barnes kernel the truncation and step of the s-line.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct KernelConfig {
    pub kind: KernelKind,
    pub center: f64,
    pub radius: f64,
    pub nodes: usize,
    pub max_nodes: usize,
    /// Half-length `L` of the s-line; derived from the integrand when `None`.
    pub s_cutoff: Option<f64>,
    /// Step on the s-line; derived from the strip of analyticity when `None`.
    pub s_step: Option<f64>,
    /// Stop doubling once the determinant changes by less than this.
    pub tol: f64,
}

impl KernelConfig {
    /// Circle around 1 with radius `min(r_q, (1/nu - 1)/2, (1/q - 1)/2)`,
    /// where `r_q = (1 - sqrt q)/(2 (1 + sqrt q))` keeps `q^s w` off the circle.
    pub fn mellin_barnes(p: &ModelParams<f64>) -> Result<Self> {
        let sq = p.q.sqrt();
        let mut r = 0.5 * (1.0 - sq) / (1.0 + sq);
        if p.nu > 0.0 {
            r = r.min(0.5 * (1.0 / p.nu - 1.0));
        }
        if p.q > 0.0 {
            r = r.min(0.5 * (1.0 / p.q - 1.0));
        }
        if r < 1e-3 {
            return Err(Error::Config(format!(
                "Mellin-Barnes circle radius {r:.2e} is below 1e-3 for q = {}, nu = {}",
                p.q, p.nu
            )));
        }
        Ok(Self {
            kind: KernelKind::MellinBarnes,
            center: 1.0,
            radius: r,
            nodes: 16,
            max_nodes: MAX_NYSTROM_NODES,
            s_cutoff: None,
            s_step: None,
            tol: 1e-11,
        })
    }

    /// Circle around 0 with radius `min(1/sqrt(nu), 1/q, 4)`.
    pub fn cauchy(p: &ModelParams<f64>) -> Result<Self> {
        let mut r: f64 = 4.0;
        if p.nu > 0.0 {
            r = r.min(1.0 / p.nu.sqrt());
        }
        if p.q > 0.0 {
            r = r.min(1.0 / p.q);
        }
        Ok(Self {
            kind: KernelKind::Cauchy,
            center: 0.0,
            radius: r,
            nodes: 32,
            max_nodes: MAX_NYSTROM_NODES,
            s_cutoff: None,
            s_step: None,
            tol: 1e-11,
        })
    }

    pub fn validate(&self, q: f64, nu: f64) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let contains = |z: f64| (z - self.center).abs() < self.radius;
        if self.nodes < 2 || self.nodes > self.max_nodes {
            return bad(format!("node count {} outside [2, {}]", self.nodes, self.max_nodes));
        }
        if !contains(1.0) {
            return bad("w-circle must contain 1".into());
        }
        if nu > 0.0 && !(1.0 / nu - self.center > self.radius) {
            return bad(format!("w-circle must exclude 1/nu = {}", 1.0 / nu));
        }
        match self.kind {
            KernelKind::MellinBarnes => {
                if contains(0.0) {
                    return bad("Mellin-Barnes w-circle must exclude 0".into());
                }
                if q > 0.0 && !(1.0 / q - self.center > self.radius) {
                    return bad(format!("Mellin-Barnes w-circle must exclude 1/q = {}", 1.0 / q));
                }
                // q^s w for Re s = 1/2 must stay strictly inside the circle.
                let sq = q.sqrt();
                if !(sq * (self.center + self.radius) < self.center - self.radius) {
                    return bad("sqrt(q) times the w-circle meets the w-circle".into());
                }
            }
            KernelKind::Cauchy => {
                if !contains(0.0) {
                    return bad("Cauchy w-circle must contain 0".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct FredholmValue {
    pub value: Complex64,
    /// Change of the determinant at the last node doubling.
    pub change: f64,
    /// Successive determinant changes, one per doubling.
    pub changes: Vec<f64>,
    pub nodes: usize,
    pub s_nodes: usize,
}

fn check_zeta(zeta: Complex64) -> Result<()> {
    if zeta.im == 0.0 && zeta.re > 0.0 {
        return Err(Error::Domain(format!("zeta = {zeta} lies on the positive real axis")));
    }
    if !zeta.re.is_finite() || !zeta.im.is_finite() {
        return Err(Error::Domain("zeta must be finite".into()));
    }
    Ok(())
}

fn circle_nodes(cfg: &KernelConfig, m: usize) -> (Vec<Complex64>, Vec<Complex64>) {
    (0..m)
        .map(|i| {
            let e = Complex64::from_polar(1.0, 2.0 * PI * i as f64 / m as f64);
            // dw / (2 pi i) = r e^{i theta} d theta / (2 pi).
            (cfg.center + cfg.radius * e, cfg.radius * e / m as f64)
        })
        .unzip()
}

fn determinant(kernel: DMatrix<Complex64>) -> Complex64 {
    let n = kernel.nrows();
    (DMatrix::identity(n, n) + kernel).lu().determinant()
}

fn nystrom<F>(cfg: &KernelConfig, build: F) -> Result<FredholmValue>
where
    F: Fn(usize) -> Result<(DMatrix<Complex64>, usize)>,
{
    let mut m = cfg.nodes;
    let (k0, mut s_nodes) = build(m)?;
    let mut prev = determinant(k0);
    let mut changes = Vec::new();
    loop {
        if 2 * m > cfg.max_nodes {
            return Err(Error::Convergence {
                doublings: changes.len(),
                last_change: changes.last().copied().unwrap_or(f64::INFINITY),
            });
        }
        m *= 2;
        let (k, s) = build(m)?;
        s_nodes = s_nodes.max(s);
        let det = determinant(k);
        let change = (det - prev).norm();
        changes.push(change);
        prev = det;
        if change < cfg.tol {
            return Ok(FredholmValue {
                value: det,
                change,
                changes,
                nodes: m,
                s_nodes,
            });
        }
    }
}

/// `det(I + K_zeta)` with the Mellin-Barnes kernel
/// `K(w, w') = (2 pi i)^{-1} int_{1/2 - i inf}^{1/2 + i inf} pi / sin(-pi s) (-zeta)^s g(w)/g(q^s w) / (q^s w - w') ds`.
pub fn det_mb(zeta: Complex64, g: &GFunction, cfg: &KernelConfig) -> Result<FredholmValue> {
    check_zeta(zeta)?;
    cfg.validate(g.q, g.nu)?;
    if cfg.kind != KernelKind::MellinBarnes {
        return Err(Error::Config("det_mb needs a Mellin-Barnes configuration".into()));
    }
    if zeta == Complex64::new(0.0, 0.0) {
        return Ok(FredholmValue {
            value: Complex64::new(1.0, 0.0),
            change: 0.0,
            changes: vec![],
            nodes: 0,
            s_nodes: 0,
        });
    }
    let log_mz = (-zeta).ln();
    let kappa = PI - log_mz.im.abs();
    let ln_q = g.q.ln();
    let sq = g.q.sqrt();
    let (c, r) = (cfg.center, cfg.radius);
    // Gap between q^s w and the circle, and the strip where it stays open.
    let gap = (c - r) - sq * (c + r);
    let strip = (((c - r) / (sq * (c + r))).ln() / -ln_q).min(0.5);
    let h = cfg.s_step.unwrap_or(2.0 * PI * strip / 40.0);
    nystrom(cfg, |m| {
        let (w, dw) = circle_nodes(cfg, m);
        let gw: Vec<Complex64> = w.iter().map(|&x| g.eval(x)).collect::<Result<_>>()?;
        let ratio = |a: usize, y: f64| -> Result<Complex64> {
            let qs = Complex64::new(0.5, y).expz(ln_q);
            Ok(gw[a] / g.eval(qs * w[a])?)
        };
        let cutoff = match cfg.s_cutoff {
            Some(l) => l,
            None => {
                let period = 2.0 * PI / -ln_q;
                let mut bound: f64 = 1.0;
                for a in 0..m {
                    for i in 0..64 {
                        bound = bound.max(ratio(a, period * i as f64 / 64.0)?.norm());
                    }
                }
                let tail_tol = 1e-3 * cfg.tol;
                let scale = 2.0 * bound * zeta.norm().sqrt() / (gap * kappa * tail_tol);
                (scale.ln() / kappa).max(1.0)
            }
        };
        if cutoff > 2000.0 {
            return Err(Error::Config(format!(
                "s-line cutoff {cutoff:.0} too long; zeta = {zeta} is too close to the positive axis"
            )));
        }
        let js = (cutoff / h).ceil() as i64;
        let s_nodes = (2 * js + 1) as usize;
        let rows: Vec<Vec<Complex64>> = (0..m)
            .into_par_iter()
            .map(|a| -> Result<Vec<Complex64>> {
                let mut row = vec![Complex64::new(0.0, 0.0); m];
                for j in -js..=js {
                    let y = j as f64 * h;
                    let s = Complex64::new(0.5, y);
                    let qs = s.expz(ln_q);
                    let coef = h / (2.0 * PI) * PI / (-PI * s).sin() * (s * log_mz).exp() * ratio(a, y)?;
                    let qw = qs * w[a];
                    for (b, slot) in row.iter_mut().enumerate() {
                        *slot += coef / (qw - w[b]);
                    }
                }
                Ok(row)
            })
            .collect::<Result<_>>()?;
        Ok((DMatrix::from_fn(m, m, |a, b| rows[a][b] * dw[b]), s_nodes))
    })
}

trait ExpZ {
    fn expz(self, ln_base: f64) -> Complex64;
}

impl ExpZ for Complex64 {
    /// `base^self` for a positive real base given by its logarithm.
    fn expz(self, ln_base: f64) -> Complex64 {
        (self * ln_base).exp()
    }
}

/// `det(I + zeta K~) / (zeta; q)_inf` with `K~(w, w') = (g(w)/g(qw)) / (q w' - w)`.
pub fn det_cauchy(zeta: Complex64, g: &GFunction, cfg: &KernelConfig) -> Result<FredholmValue> {
    check_zeta(zeta)?;
    cfg.validate(g.q, g.nu)?;
    if cfg.kind != KernelKind::Cauchy {
        return Err(Error::Config("det_cauchy needs a Cauchy configuration".into()));
    }
    let norm = qpoch_inf(zeta, g.q, PRODUCT_TOL)?;
    let mut out = nystrom(cfg, |m| {
        let (w, dw) = circle_nodes(cfg, m);
        let f: Vec<Complex64> = w.iter().map(|&x| g.ratio_q(x)).collect();
        Ok((
            DMatrix::from_fn(m, m, |a, b| zeta * f[a] / (g.q * w[b] - w[a]) * dw[b]),
            0,
        ))
    })?;
    out.value /= norm;
    out.change /= norm.norm();
    Ok(out)
}

/// Partial sum with a certified bound on the neglected terms.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct SeriesValue {
    pub value: Complex64,
    pub tail_bound: f64,
    pub terms: usize,
}

/// `sum_k mu_k zeta^k / (q;q)_k` with `mu_k = E[q^{k (x_n(t)+n)}]` from the
/// exact dual-chain oracle. Since `mu_k <= 1`, terms from `K` on sum to at most
/// `|zeta|^K / ((q;q)_inf (1 - |zeta|))`; `K` is the first index where that
/// drops below `tol`.
pub fn laplace_series_oracle<T: Scalar>(
    zeta: Complex64,
    n: usize,
    t: usize,
    sched: &ParamSchedule<T>,
    k_max: usize,
    tol: f64,
) -> Result<SeriesValue> {
    let q = sched.base.q.to_f64_lossy();
    let az = zeta.norm();
    if az >= 1.0 {
        return Err(Error::Domain(format!("|zeta| = {az} must be below 1 for the series")));
    }
    let qq_inf = qpoch_inf_real(q, q, PRODUCT_TOL)?;
    let tail = |k: usize| az.powi(k as i32) / (qq_inf * (1.0 - az));
    let terms = (0..=k_max + 1).find(|&k| tail(k) < tol).unwrap_or(k_max + 1);
    if terms > k_max + 1 {
        return Err(Error::Truncation {
            last_term: tail(k_max + 1),
            tol,
        });
    }
    if terms == k_max + 1 && tail(terms) >= tol {
        return Err(Error::Truncation {
            last_term: tail(terms),
            tol,
        });
    }
    let moments = if terms == 0 {
        vec![]
    } else {
        qmoments_equal(n, terms - 1, t, sched)?
    };
    let mut value = Complex64::new(0.0, 0.0);
    let mut zk = Complex64::new(1.0, 0.0);
    let mut qq = 1.0;
    for (k, mk) in moments.iter().enumerate() {
        if k > 0 {
            zk *= zeta;
            qq *= 1.0 - q.powi(k as i32);
        }
        value += zk * mk.to_f64_lossy() / qq;
    }
    Ok(SeriesValue {
        value,
        tail_bound: tail(terms),
        terms,
    })
}

/// Monte Carlo estimate of `E[1/(zeta q^{x_n(t)+n}; q)_inf]` as (real, imaginary) parts.
pub fn laplace_mc(
    zeta: Complex64,
    n: usize,
    t: usize,
    sched: &ParamSchedule<f64>,
    replicas: u64,
    seed: u64,
) -> Result<(crate::chains::McEstimate, crate::chains::McEstimate)> {
    let q = sched.base.q;
    let value = |x: &[i64]| {
        let h = q.powi((x[n - 1] + n as i64) as i32);
        1.0 / qpoch_inf(zeta * h, q, PRODUCT_TOL).expect("finite argument")
    };
    if n == 0 {
        return Err(Error::Domain("particle index starts at 1".into()));
    }
    let re = tasep_mc(n, t, sched, replicas, seed, |x| value(x).re)?;
    let im = tasep_mc(n, t, sched, replicas, seed, |x| value(x).im)?;
    Ok((re, im))
}

/// Result of moment inversion on `{0, ..., S}`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvertedPmf<T> {
    pub pmf: Vec<T>,
    /// Chernoff bound on `P(x_n(t) + n > S)`.
    pub tail_bound: f64,
    /// Bound on `|pmf[s] - P(x_n(t) + n = s)|` for every `s <= S`.
    pub error_bound: f64,
}

impl<T: Scalar> InvertedPmf<T> {
    pub fn to_f64(&self) -> Vec<f64> {
        self.pmf.iter().map(Scalar::to_f64_lossy).collect()
    }

    pub fn mass_defect(&self) -> f64 {
        1.0 - self.to_f64().iter().sum::<f64>()
    }
}

/// Chernoff bound on `P(x_1(t) + 1 > s)`, which dominates `P(x_n(t) + n > s)`.
/// Each step of the first particle is `phi(.|inf)` with moment generating function
/// `E[e^{l J}] = (mu;q)(nu e^l;q) / ((nu;q)(mu e^l;q))` for `mu e^l < 1`.
pub fn tail_bound(t: usize, sched: &ParamSchedule<f64>, s: usize) -> Result<f64> {
    let q = sched.base.q;
    let nu = sched.base.nu;
    let mus: Vec<f64> = (1..=t).map(|k| sched.mu_at(k)).collect();
    let mu_max = mus.iter().cloned().fold(0.0, f64::max);
    if t == 0 || mu_max == 0.0 {
        return Ok(0.0);
    }
    let lam_max = -(mu_max.ln());
    let mut best: f64 = 1.0;
    for i in 1..400 {
        let lam = lam_max * i as f64 / 400.0;
        let e = lam.exp();
        let mut log_mgf = 0.0;
        for &m in &mus {
            let num = qpoch_inf_real(m, q, PRODUCT_TOL)? * qpoch_inf_real(nu * e, q, PRODUCT_TOL)?;
            let den = qpoch_inf_real(nu, q, PRODUCT_TOL)? * qpoch_inf_real(m * e, q, PRODUCT_TOL)?;
            log_mgf += (num / den).ln();
        }
        best = best.min((log_mgf - lam * (s as f64 + 1.0)).exp());
    }
    // Guard against rounding in the products.
    Ok(best * (1.0 + 1e-9))
}

/// Bound `1/((q;q)_inf)^2` on the Lagrange basis at points of `[0, q^{S+1}]`
/// for nodes `1, q, ..., q^S`: how tail mass leaks into the recovered pmf.
pub fn leakage_factor(q: f64) -> Result<f64> {
    Ok(1.0 / qpoch_inf_real(q, q, PRODUCT_TOL)?.powi(2))
}

/// Smallest `S` whose certified per-bin error is below `allowed`.
pub fn auto_support_cap(t: usize, sched: &ParamSchedule<f64>, allowed: f64) -> Result<usize> {
    let lf = leakage_factor(sched.base.q)?;
    for s in 0..=500 {
        if tail_bound(t, sched, s)? * lf < allowed {
            return Ok(s);
        }
    }
    Err(Error::TailBound {
        bound: tail_bound(t, sched, 500)? * lf,
        allowed,
    })
}

/// Solves `mu_k = sum_{s=0}^{S} q^{k s} P(s)`, `k = 0..S`, for the law of
/// `x_n(t) + n`. Moments come from the exact oracle.
pub fn invert_distribution<T: Scalar>(
    n: usize,
    t: usize,
    sched: &ParamSchedule<T>,
    support_cap: usize,
) -> Result<InvertedPmf<T>> {
    if n == 0 {
        return Err(Error::Domain("particle index starts at 1".into()));
    }
    let fsched = sched.to_f64();
    let tail = tail_bound(t, &fsched, support_cap)?;
    if tail >= 1e-9 {
        return Err(Error::TailBound {
            bound: tail,
            allowed: 1e-9,
        });
    }
    let q = sched.base.q.clone();
    let size = support_cap + 1;
    let moments = qmoments_equal(n, support_cap, t, sched)?;
    let nodes: Vec<T> = (0..size).map(|s| q.upow(s)).collect();
    let a: Vec<Vec<T>> = (0..size).map(|k| nodes.iter().map(|x| x.upow(k)).collect()).collect();
    let pmf = solve_dense(a, moments)?;
    if !T::EXACT && pmf.iter().any(|p| p.to_f64_lossy() < -1e-12 || !p.to_f64_lossy().is_finite()) {
        return Err(Error::IllConditioned);
    }
    Ok(InvertedPmf {
        pmf,
        tail_bound: tail,
        error_bound: tail * leakage_factor(fsched.base.q)?,
    })
}

/// `g(w)` of the MHADP limit with the exponent in the form the scaling produces:
/// `(1/(1-w))^n exp(-tau (1-q) sum_i q^i w / (1 - q^{i+1} w)) / (qw; q)_inf`.
pub fn mhadp_g(w: Complex64, n: usize, tau: f64, q: f64) -> Result<Complex64> {
    let one = Complex64::new(1.0, 0.0);
    Ok((one / (one - w)).powi(n as i32) * mhadp_exponential(w, tau, q).exp()
        / qpoch_inf(q * w, q, PRODUCT_TOL)?)
}

fn mhadp_exponential(w: Complex64, tau: f64, q: f64) -> Complex64 {
    let mut sum = Complex64::new(0.0, 0.0);
    let mut qi = 1.0;
    while qi * w.norm() > 1e-18 {
        sum += qi * w / (1.0 - qi * q * w);
        qi *= q;
        if qi == 0.0 {
            break;
        }
    }
    -tau * (1.0 - q) * sum
}

fn mhadp_params(q: f64, eps: f64) -> Result<ModelParams<f64>> {
    ModelParams::new(q, q, (q - eps) / (1.0 - eps))
}

/// `max_{1<=j<=m} |phi(j|m)/eps - 1/[j]_{1/q}|` at `mu = q`, `nu = (q-eps)/(1-eps)`.
pub fn mhadp_rate_residuals(q: f64, m: usize, eps_list: &[f64]) -> Result<Vec<f64>> {
    eps_list
        .iter()
        .map(|&eps| {
            let p = mhadp_params(q, eps)?;
            let mut worst: f64 = 0.0;
            for j in 1..=m {
                let rate = q.powi(j as i32 - 1) * (1.0 - q) / (1.0 - q.powi(j as i32));
                worst = worst.max((phi_pmf(j, m, &p)? / eps - rate).abs());
            }
            Ok(worst)
        })
        .collect()
}

/// `|g_eps(w) - g_lim(w)|` for each `eps`, with `t = round(tau/eps)`.
pub fn mhadp_g_limit_check(w: Complex64, n: usize, tau: f64, q: f64, eps_list: &[f64]) -> Result<Vec<f64>> {
    let limit = mhadp_g(w, n, tau, q)?;
    eps_list
        .iter()
        .map(|&eps| {
            let p = mhadp_params(q, eps)?;
            let t = (tau / eps).round() as usize;
            Ok((GFunction::new(n, t, &p, None)?.eval(w)? - limit).norm())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chains::{tasep_position_histogram, ParamSchedule};
    use crate::qdist::phi_pmf_infinite;
    use crate::Rational;

    fn params(q: f64, mu: f64, nu: f64) -> ModelParams<f64> {
        ModelParams::new(q, mu, nu).unwrap()
    }

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn g_trivial_cases() {
        let p = params(0.5, 0.4, 0.1);
        let w = c(0.3, 0.7);
        let g = g_eval(w, 0, 0, &p, None).unwrap();
        let expect = 1.0 / qpoch_inf(0.1 * w, 0.5, PRODUCT_TOL).unwrap();
        assert!((g - expect).norm() < 1e-14);
        let g = g_eval(w, 0, 0, &params(0.5, 0.4, 0.0), None).unwrap();
        assert!((g - 1.0).norm() < 1e-15);
    }

    #[test]
    fn g_ratio_cancels() {
        let p = params(0.45, 0.6, 0.2);
        let g = GFunction::new(3, 4, &p, Some(&[0.3, 0.5])).unwrap();
        for w in [c(0.4, 0.3), c(-1.2, 0.5), c(2.0, -1.0), c(0.9, 0.05)] {
            let direct = g.eval(w).unwrap() / g.eval(0.45 * w).unwrap();
            assert!((direct / g.ratio_q(w) - 1.0).norm() < 1e-12, "{w}");
        }
    }

    #[test]
    fn g_pole_guard() {
        let p = params(0.5, 0.4, 0.1);
        assert!(matches!(g_eval(c(2.0, 0.0), 1, 0, &p, None), Err(Error::PoleProximity(_))));
        assert!(matches!(g_eval(c(10.0, 0.0), 0, 1, &p, None), Err(Error::PoleProximity(_))));
        assert!(g_eval(c(2.0, 0.0), 0, 0, &p, None).is_ok());
    }

    #[test]
    fn configs_validate() {
        let p = params(0.5, 0.4, 0.1);
        KernelConfig::mellin_barnes(&p).unwrap().validate(0.5, 0.1).unwrap();
        KernelConfig::cauchy(&p).unwrap().validate(0.5, 0.1).unwrap();
        let mut bad = KernelConfig::mellin_barnes(&p).unwrap();
        bad.radius = 0.5;
        assert!(bad.validate(0.5, 0.1).is_err());
        let mut bad = KernelConfig::cauchy(&p).unwrap();
        bad.radius = 20.0;
        assert!(bad.validate(0.5, 0.1).is_err());
    }

    #[test]
    fn zeta_domain() {
        let p = params(0.5, 0.4, 0.1);
        let g = GFunction::new(1, 1, &p, None).unwrap();
        let cfg = KernelConfig::cauchy(&p).unwrap();
        assert!(det_cauchy(c(0.2, 0.0), &g, &cfg).is_err());
        let v = det_cauchy(c(0.0, 0.0), &g, &cfg).unwrap();
        assert!((v.value - 1.0).norm() < 1e-15);
    }

    #[test]
    fn three_pipelines_agree() {
        let p = params(0.5, 0.4, 0.1);
        let sched = ParamSchedule::constant(p.clone());
        let g = GFunction::new(2, 2, &p, None).unwrap();
        let mb = KernelConfig::mellin_barnes(&p).unwrap();
        let ca = KernelConfig::cauchy(&p).unwrap();
        for zeta in [c(-0.2, 0.0), c(0.0, 0.2), c(0.12, -0.16)] {
            let a = det_mb(zeta, &g, &mb).unwrap();
            let b = det_cauchy(zeta, &g, &ca).unwrap();
            let s = laplace_series_oracle(zeta, 2, 2, &sched, 40, 1e-12).unwrap();
            assert!((a.value - b.value).norm() < 1e-9, "{zeta}: {a:?} {b:?}");
            assert!((a.value - s.value).norm() < 1e-9, "{zeta}: {a:?} {s:?}");
        }
    }

    #[test]
    fn small_zeta_limit() {
        let p = params(0.5, 0.4, 0.1);
        let g = GFunction::new(2, 2, &p, None).unwrap();
        let v = det_mb(c(-1e-6, 0.0), &g, &KernelConfig::mellin_barnes(&p).unwrap()).unwrap();
        assert!((v.value - 1.0).norm() < 1e-5 && (v.value - 1.0).norm() > 0.0);
    }

    #[test]
    fn nystrom_changes_shrink() {
        let p = params(0.5, 0.6, 0.25);
        let g = GFunction::new(3, 3, &p, None).unwrap();
        let mut cfg = KernelConfig::cauchy(&p).unwrap();
        cfg.nodes = 8;
        cfg.tol = 1e-13;
        let v = det_cauchy(c(-0.4, 0.2), &g, &cfg).unwrap();
        let big: Vec<f64> = v.changes.iter().cloned().filter(|&d| d > 1e-12).collect();
        assert!(big.windows(2).all(|w| w[1] < 0.1 * w[0]), "{:?}", v.changes);
    }

    #[test]
    fn series_trivial_cases() {
        let q = 0.5;
        let zeta = c(0.1, -0.2);
        let direct = 1.0 / qpoch_inf(zeta, q, PRODUCT_TOL).unwrap();
        let s = laplace_series_oracle(zeta, 2, 0, &ParamSchedule::constant(params(q, 0.4, 0.1)), 40, 1e-13).unwrap();
        assert!((s.value - direct).norm() < 1e-10);
        let s = laplace_series_oracle(zeta, 2, 3, &ParamSchedule::constant(params(q, 0.3, 0.3)), 40, 1e-13).unwrap();
        assert!((s.value - direct).norm() < 1e-10);
        let s = laplace_series_oracle(c(0.0, 0.0), 1, 1, &ParamSchedule::constant(params(q, 0.4, 0.1)), 40, 1e-13).unwrap();
        assert_eq!(s.value, c(1.0, 0.0));
        assert!(laplace_series_oracle(c(0.9, 0.1), 1, 1, &ParamSchedule::constant(params(q, 0.4, 0.1)), 5, 1e-13).is_err());
    }

    #[test]
    fn inversion_step_data() {
        let p = ModelParams::<Rational>::parse("1/2", "2/5", "1/10").unwrap();
        let inv = invert_distribution(2, 0, &ParamSchedule::constant(p), 3).unwrap();
        assert_eq!(inv.pmf[0], Rational::from_integer(1.into()));
        assert!(inv.pmf[1..].iter().all(|x| *x == Rational::from_integer(0.into())));
    }

    #[test]
    fn inversion_first_particle() {
        let p = ModelParams::<Rational>::parse("1/2", "2/5", "1/10").unwrap();
        let sched = ParamSchedule::constant(p.clone());
        let s = auto_support_cap(1, &sched.to_f64(), 1e-10).unwrap();
        let inv = invert_distribution(1, 1, &sched, s).unwrap();
        let pf = p.to_float();
        for (j, v) in inv.to_f64().iter().enumerate() {
            assert!(*v >= 0.0);
            assert!((v - phi_pmf_infinite(j, &pf).unwrap()).abs() < 1e-9, "{j}");
        }
        assert!(inv.mass_defect().abs() < 1e-9);
    }

    #[test]
    fn inversion_matches_simulation() {
        let p = ModelParams::<Rational>::parse("1/2", "3/5", "1/4").unwrap();
        let sched = ParamSchedule::constant(p);
        let fs = sched.to_f64();
        let s = auto_support_cap(2, &fs, 1e-10).unwrap();
        let inv = invert_distribution(2, 2, &sched, s).unwrap().to_f64();
        let hist = tasep_position_histogram(2, 2, &fs, 20_000, 7, s + 1).unwrap();
        for (b, pv) in inv.iter().enumerate() {
            let se = (pv * (1.0 - pv) / 20_000.0).sqrt().max(1e-6);
            assert!((hist.frequency(b) - pv).abs() < 5.0 * se, "bin {b}");
        }
    }

    #[test]
    fn mhadp_first_order() {
        let eps = [1e-2, 1e-3, 1e-4];
        let r = mhadp_rate_residuals(0.5, 5, &eps).unwrap();
        let g = mhadp_g_limit_check(c(0.3, 0.2), 2, 1.0, 0.5, &eps).unwrap();
        for v in [r, g] {
            for w in v.windows(2) {
                let f = w[0] / w[1];
                assert!((7.0..13.0).contains(&f), "{v:?}");
            }
        }
        let z = mhadp_g_limit_check(c(0.0, 0.0), 2, 1.0, 0.5, &eps).unwrap();
        assert!(z.iter().all(|&x| x < 1e-15));
    }
}
