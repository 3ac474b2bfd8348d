//! Nested contour integrals for the q-moments
//!
//! ```text
//! u(t; n) = (-1)^k q^{k(k-1)/2} (2 pi i)^{-k} oint ... oint
//!           prod_{A<B} (z_A - z_B)/(z_A - q z_B)
//!           prod_j ((1 - nu z_j)/(1 - z_j))^{n_j} prod_{s<=t} (1 - mu_s z_j)/(1 - nu z_j)
//!                  dz_j / (z_j (1 - nu z_j))
//! ```
//!
//! on circles around 1 with `gamma_A` enclosing `q gamma_B` for `A < B`.
//! Quadrature is the trapezoid rule on each circle. Node sets are nested
//! (`theta_m = 2 pi m / M`), so halving `M` subsamples the grid.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::exact::BoundaryCoeffs;
use crate::qdist::ModelParams;

pub const DEFAULT_NODES: usize = 256;
pub const MIN_NODES: usize = 32;
pub const MAX_NODES: usize = 16384;
pub const MAX_DOUBLINGS: usize = 6;
/// Default bound on `|I_M - I_{M/2}|`.
pub const DEFAULT_TOL: f64 = 1e-7;
/// Nodes per unit of `radius / distance to the nearest singularity`.
const NODE_DENSITY: f64 = 52.0;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct Circle {
    pub center: f64,
    pub radius: f64,
    pub nodes: usize,
}

/// Circles `gamma_1, ..., gamma_k`, outermost first.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ContourSpec {
    pub circles: Vec<Circle>,
    /// Margin the spec was planned with.
    pub delta: f64,
}

fn upper_radius(nu: f64) -> f64 {
    if nu > 0.0 {
        (1.0 / nu - 1.0).min(1.0)
    } else {
        1.0
    }
}

fn recursion_radii(k: usize, q: f64, eps: f64, delta: f64) -> Vec<f64> {
    let mut r = vec![0.0; k];
    r[k - 1] = eps;
    for j in (0..k - 1).rev() {
        r[j] = (1.0 - q) + q * r[j + 1] + delta;
    }
    r
}

fn check_plan_args(k: usize, q: f64, nu: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::Domain("k must be at least 1".into()));
    }
    if !(0.0..1.0).contains(&q) || !(0.0..1.0).contains(&nu) {
        return Err(Error::Domain(format!("need q, nu in [0, 1), got q = {q}, nu = {nu}")));
    }
    Ok(())
}

/// Radii `r_k = eps`, `r_j = (1 - q) + q r_{j+1} + delta`, all circles
/// centered at 1 with [`DEFAULT_NODES`] nodes.
pub fn plan_contours(k: usize, q: f64, nu: f64, eps: f64, delta: f64) -> Result<ContourSpec> {
    check_plan_args(k, q, nu)?;
    if !(eps > 0.0) || !(delta > 0.0) {
        return Err(Error::Domain("eps and delta must be positive".into()));
    }
    let r = recursion_radii(k, q, eps, delta);
    let bound = upper_radius(nu) - delta;
    if !(r[0] < bound) {
        return Err(Error::ContourInfeasible(format!(
            "r_1 = {:.6} must be < min(1, 1/nu - 1) - delta = {:.6} (k = {k}, q = {q}, nu = {nu})",
            r[0], bound
        )));
    }
    Ok(ContourSpec {
        circles: r
            .into_iter()
            .map(|radius| Circle {
                center: 1.0,
                radius,
                nodes: DEFAULT_NODES,
            })
            .collect(),
        delta,
    })
}

/// Chooses `eps` and `delta` from the available slack and sets per-circle
/// node counts from the distance to the nearest singularity.
pub fn plan_contours_auto(k: usize, q: f64, nu: f64) -> Result<ContourSpec> {
    check_plan_args(k, q, nu)?;
    let u = upper_radius(nu);
    let (eps, delta) = if k == 1 {
        (0.5 * u, 0.25 * u)
    } else {
        // r_1 + delta = (1 - q^{k-1}) + delta (1 + [k-1]_q) + q^{k-1} eps.
        let qk = q.powi(k as i32 - 1);
        let slack = u - (1.0 - qk);
        if !(slack > 0.0) || qk == 0.0 {
            return Err(Error::ContourInfeasible(format!(
                "no nested circles exist: need 1 - q^(k-1) = {:.6} < min(1, 1/nu - 1) = {u:.6} (k = {k}, q = {q}, nu = {nu})",
                1.0 - qk
            )));
        }
        let qint: f64 = (0..k - 1).map(|i| q.powi(i as i32)).sum();
        let share = 0.15;
        (share * slack / qk, (1.0 - share) * slack / (1.0 + qint))
    };
    let mut spec = plan_contours(k, q, nu, eps, delta * (1.0 - 1e-9))?;
    spec.delta = delta * (1.0 - 1e-9);
    for j in 0..k {
        let d = singularity_distance(&spec, j, q, nu);
        let m = (NODE_DENSITY * spec.circles[j].radius / d).ceil() as usize;
        spec.circles[j].nodes = (m + m % 2).clamp(MIN_NODES, MAX_NODES);
    }
    Ok(spec)
}

/// Distance from circle `j` to the nearest singularity of the integrand in `z_j`.
fn singularity_distance(spec: &ContourSpec, j: usize, q: f64, nu: f64) -> f64 {
    let c = &spec.circles;
    let cj = c[j];
    let mut d = (cj.center - cj.radius).abs();
    if nu > 0.0 {
        d = d.min((1.0 / nu - cj.center).abs() - cj.radius);
    }
    for b in j + 1..c.len() {
        // q gamma_B sits inside gamma_j.
        d = d.min(cj.radius - (cj.center - q * c[b].center).abs() - q * c[b].radius);
    }
    for a in 0..j {
        // gamma_A / q encloses gamma_j.
        if q > 0.0 {
            d = d.min(c[a].radius / q - (c[a].center / q - cj.center).abs() - cj.radius);
        }
    }
    d.max(1e-12)
}

impl ContourSpec {
    pub fn k(&self) -> usize {
        self.circles.len()
    }

    pub fn nodes(&self) -> Vec<usize> {
        self.circles.iter().map(|c| c.nodes).collect()
    }

    /// Checks containment of 1, exclusion of 0 and `1/nu`, and nesting
    /// `q gamma_B` inside `gamma_A` (A < B) with margin `delta`.
    pub fn validate(&self, q: f64, nu: f64) -> Result<()> {
        let fail = |msg: String| Err(Error::ContourInfeasible(msg));
        for (j, c) in self.circles.iter().enumerate() {
            let j1 = j + 1;
            if c.nodes < 2 || c.nodes % 2 == 1 {
                return fail(format!("circle {j1} needs a positive even node count, got {}", c.nodes));
            }
            if !((1.0 - c.center).abs() < c.radius) {
                return fail(format!("circle {j1} does not contain 1"));
            }
            if !(c.center.abs() > c.radius) {
                return fail(format!("circle {j1} contains 0"));
            }
            if nu > 0.0 && !((1.0 / nu - c.center).abs() > c.radius) {
                return fail(format!("circle {j1} contains 1/nu = {}", 1.0 / nu));
            }
        }
        for a in 0..self.k() {
            for b in a + 1..self.k() {
                let (ca, cb) = (self.circles[a], self.circles[b]);
                let outer = (ca.center - q * cb.center).abs() + q * cb.radius;
                if !(outer + self.delta * (1.0 - 1e-9) <= ca.radius) {
                    return fail(format!(
                        "q * circle {} reaches radius {outer:.6} but circle {} has radius {:.6} (margin {})",
                        b + 1,
                        a + 1,
                        ca.radius,
                        self.delta
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn with_nodes(&self, nodes: &[usize]) -> Self {
        let mut s = self.clone();
        for (c, &m) in s.circles.iter_mut().zip(nodes) {
            c.nodes = m;
        }
        s
    }
}

/// Model data for the integrand: `q`, `nu` and `mu_1, mu_2, ...`.
#[derive(Clone, Debug, PartialEq)]
pub struct IntegrandParams {
    pub q: f64,
    pub nu: f64,
    pub mu: f64,
    /// Time-dependent `mu_s`; steps beyond its length use `mu`.
    pub mu_schedule: Vec<f64>,
}

impl IntegrandParams {
    pub fn new(p: &ModelParams<f64>, mu_schedule: Option<&[f64]>) -> Result<Self> {
        let sched = mu_schedule.map(<[f64]>::to_vec).unwrap_or_default();
        for &m in &sched {
            if !(m >= p.nu && m < 1.0) {
                return Err(Error::Schedule(format!("mu_s = {m} leaves [nu, 1) with nu = {}", p.nu)));
            }
        }
        Ok(Self {
            q: p.q,
            nu: p.nu,
            mu: p.mu,
            mu_schedule: sched,
        })
    }

    fn mu_at(&self, s: usize) -> f64 {
        self.mu_schedule.get(s - 1).copied().unwrap_or(self.mu)
    }
}

/// One moment `u(t; n)` with `n` any integer vector of length `k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MomentRequest {
    pub nvec: Vec<i64>,
    pub t: usize,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ContourValue {
    pub value: Complex64,
    /// `|I_M - I_{M/2}|` at the accepted node counts.
    pub change: f64,
    pub nodes: Vec<usize>,
    pub doublings: usize,
}

struct Variable {
    z: Vec<Complex64>,
    base: Vec<Complex64>,
    ratio: Vec<Complex64>,
    /// `prod_{s<=t} (1 - mu_s z)/(1 - nu z)` for `t = 0..=t_max`.
    time: Vec<Vec<Complex64>>,
}

struct Grid {
    vars: Vec<Variable>,
    /// `cross[(A, B)][m_A * M_B + m_B] = (z_A - z_B)/(z_A - q z_B)`.
    cross: HashMap<(usize, usize), Vec<Complex64>>,
    sizes: Vec<usize>,
    prefactor: f64,
}

impl Grid {
    fn new(spec: &ContourSpec, nodes: &[usize], params: &IntegrandParams, t_max: usize) -> Self {
        let (q, nu) = (params.q, params.nu);
        let vars: Vec<Variable> = spec
            .circles
            .iter()
            .zip(nodes)
            .map(|(c, &m)| {
                let mut z = Vec::with_capacity(m);
                let mut base = Vec::with_capacity(m);
                let mut ratio = Vec::with_capacity(m);
                for i in 0..m {
                    let e = Complex64::from_polar(1.0, 2.0 * PI * i as f64 / m as f64);
                    let zi = c.center + c.radius * e;
                    let w = c.radius * e / m as f64;
                    z.push(zi);
                    base.push(w / (zi * (1.0 - nu * zi)));
                    ratio.push((1.0 - nu * zi) / (1.0 - zi));
                }
                let mut time = vec![vec![Complex64::new(1.0, 0.0); m]];
                for s in 1..=t_max {
                    let mu_s = params.mu_at(s);
                    let prev = &time[s - 1];
                    let next = z.iter().zip(prev).map(|(zi, p)| p * (1.0 - mu_s * zi) / (1.0 - nu * zi)).collect();
                    time.push(next);
                }
                Variable { z, base, ratio, time }
            })
            .collect();
        let k = vars.len();
        let mut cross = HashMap::new();
        for a in 0..k {
            for b in a + 1..k {
                let mut c = Vec::with_capacity(nodes[a] * nodes[b]);
                for za in &vars[a].z {
                    for zb in &vars[b].z {
                        c.push((za - zb) / (za - q * zb));
                    }
                }
                cross.insert((a, b), c);
            }
        }
        let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
        Self {
            vars,
            cross,
            sizes: nodes.to_vec(),
            prefactor: sign * q.powi((k * (k - 1) / 2) as i32),
        }
    }

    fn weights(&self, j: usize, n: i64, t: usize) -> Vec<Complex64> {
        let v = &self.vars[j];
        v.base
            .iter()
            .zip(&v.ratio)
            .zip(&v.time[t])
            .map(|((b, r), tt)| b * r.powi(n as i32) * tt)
            .collect()
    }

    /// `G(m_1..m_{k-1}) = sum_{m_k} g_k(m_k) prod_{A<k} c_{A,k}(m_A, m_k)`, flattened.
    fn inner(&self, g_last: &[Complex64]) -> Vec<Complex64> {
        let k = self.vars.len();
        if k == 1 {
            return vec![g_last.iter().sum()];
        }
        let last = k - 1;
        let m_last = self.sizes[last];
        let outer_len: usize = self.sizes[..last].iter().product();
        let first = self.sizes[0];
        let chunk = outer_len / first;
        let mut out = vec![Complex64::new(0.0, 0.0); outer_len];
        out.par_chunks_mut(chunk).enumerate().for_each(|(m0, dst)| {
            let c0 = &self.cross[&(0, last)][m0 * m_last..(m0 + 1) * m_last];
            let p: Vec<Complex64> = g_last.iter().zip(c0).map(|(g, c)| g * c).collect();
            let mut idx = vec![0usize; last];
            idx[0] = m0;
            self.inner_rec(1, &mut idx, &p, dst, &mut 0);
        });
        out
    }

    fn inner_rec(&self, level: usize, idx: &mut Vec<usize>, p: &[Complex64], dst: &mut [Complex64], pos: &mut usize) {
        let last = self.vars.len() - 1;
        let m_last = self.sizes[last];
        if level == last {
            dst[*pos] = p.iter().sum();
            *pos += 1;
            return;
        }
        let c = &self.cross[&(level, last)];
        for m in 0..self.sizes[level] {
            let row = &c[m * m_last..(m + 1) * m_last];
            if level + 1 == last {
                let mut acc = Complex64::new(0.0, 0.0);
                for (a, b) in p.iter().zip(row) {
                    acc += a * b;
                }
                dst[*pos] = acc;
                *pos += 1;
            } else {
                let next: Vec<Complex64> = p.iter().zip(row).map(|(a, b)| a * b).collect();
                idx[level] = m;
                self.inner_rec(level + 1, idx, &next, dst, pos);
            }
        }
    }

    /// `sum g_1 ... g_{k-1} prod_{A<B<k} c_{A,B} G`.
    fn outer(&self, g: &[Vec<Complex64>], inner: &[Complex64]) -> Complex64 {
        let k = self.vars.len();
        if k == 1 {
            return inner[0];
        }
        let last = k - 1;
        let first = self.sizes[0];
        let chunk = inner.len() / first;
        let partial: Vec<Complex64> = (0..first)
            .into_par_iter()
            .map(|m0| {
                let mut idx = vec![0usize; last];
                idx[0] = m0;
                let block = &inner[m0 * chunk..(m0 + 1) * chunk];
                g[0][m0] * self.outer_rec(1, &mut idx, g, block)
            })
            .collect();
        partial.iter().sum()
    }

    fn outer_rec(&self, level: usize, idx: &mut Vec<usize>, g: &[Vec<Complex64>], block: &[Complex64]) -> Complex64 {
        let last = self.vars.len() - 1;
        if level == last {
            return block[0];
        }
        let chunk = block.len() / self.sizes[level];
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..self.sizes[level] {
            let mut f = g[level][m];
            for a in 0..level {
                f *= self.cross[&(a, level)][idx[a] * self.sizes[level] + m];
            }
            idx[level] = m;
            acc += f * self.outer_rec(level + 1, idx, g, &block[m * chunk..(m + 1) * chunk]);
        }
        acc
    }

    fn evaluate(&self, reqs: &[MomentRequest]) -> Vec<Complex64> {
        let k = self.vars.len();
        let mut groups: BTreeMap<(i64, usize), Vec<usize>> = BTreeMap::new();
        for (i, r) in reqs.iter().enumerate() {
            groups.entry((r.nvec[k - 1], r.t)).or_default().push(i);
        }
        let mut out = vec![Complex64::new(0.0, 0.0); reqs.len()];
        for ((n_last, t), members) in groups {
            let inner = self.inner(&self.weights(k - 1, n_last, t));
            for i in members {
                let r = &reqs[i];
                let g: Vec<Vec<Complex64>> = (0..k - 1).map(|j| self.weights(j, r.nvec[j], r.t)).collect();
                out[i] = self.prefactor * self.outer(&g, &inner);
            }
        }
        out
    }
}

/// Evaluates many moments sharing one contour family, doubling every node
/// count until each result changes by less than `tol` between `M/2` and `M`.
pub fn qmoment_contour_batch(
    reqs: &[MomentRequest],
    params: &IntegrandParams,
    spec: &ContourSpec,
    tol: f64,
) -> Result<Vec<ContourValue>> {
    spec.validate(params.q, params.nu)?;
    let k = spec.k();
    if let Some(bad) = reqs.iter().find(|r| r.nvec.len() != k) {
        return Err(Error::Domain(format!("request {:?} does not have k = {k} entries", bad.nvec)));
    }
    if reqs.is_empty() {
        return Ok(Vec::new());
    }
    let t_max = reqs.iter().map(|r| r.t).max().unwrap_or(0);
    let mut nodes = spec.nodes();
    let half: Vec<usize> = nodes.iter().map(|m| m / 2).collect();
    let mut coarse = Grid::new(spec, &half, params, t_max).evaluate(reqs);
    let mut fine = Grid::new(spec, &nodes, params, t_max).evaluate(reqs);
    let mut doublings = 0;
    loop {
        let change = fine
            .iter()
            .zip(&coarse)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        if change < tol {
            let changes: Vec<f64> = fine.iter().zip(&coarse).map(|(a, b)| (a - b).norm()).collect();
            return Ok(fine
                .into_iter()
                .zip(changes)
                .map(|(value, change)| ContourValue {
                    value,
                    change,
                    nodes: nodes.clone(),
                    doublings,
                })
                .collect());
        }
        if doublings == MAX_DOUBLINGS || nodes.iter().any(|&m| 2 * m > MAX_NODES) {
            return Err(Error::Convergence {
                doublings,
                last_change: change,
            });
        }
        doublings += 1;
        nodes.iter_mut().for_each(|m| *m *= 2);
        coarse = fine;
        fine = Grid::new(spec, &nodes, params, t_max).evaluate(reqs);
    }
}

/// Single moment; plans contours automatically when `spec` is `None`.
pub fn qmoment_contour(
    nvec: &[i64],
    t: usize,
    p: &ModelParams<f64>,
    mu_schedule: Option<&[f64]>,
    spec: Option<&ContourSpec>,
    tol: f64,
) -> Result<ContourValue> {
    let params = IntegrandParams::new(p, mu_schedule)?;
    let planned;
    let spec = match spec {
        Some(s) => s,
        None => {
            planned = plan_contours_auto(nvec.len(), p.q, p.nu)?;
            &planned
        }
    };
    let req = MomentRequest { nvec: nvec.to_vec(), t };
    Ok(qmoment_contour_batch(&[req], &params, spec, tol)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct IdentityResidual {
    pub residual: f64,
    /// Largest `|I_M - I_{M/2}|` among the integrals involved.
    pub quadrature_change: f64,
}

fn spec_for(k: usize, p: &ModelParams<f64>, spec: Option<&ContourSpec>) -> Result<ContourSpec> {
    match spec {
        Some(s) => Ok(s.clone()),
        None => plan_contours_auto(k, p.q, p.nu),
    }
}

/// `|u(t+1; n) - prod_i [nabla]_i u(t; n)|` where
/// `[nabla]_i u(n) = (mu-nu)/(1-nu) u(n - e_i) + (1-mu)/(1-nu) u(n)`.
pub fn check_free_evolution(
    nvec: &[i64],
    t: usize,
    p: &ModelParams<f64>,
    mu_schedule: Option<&[f64]>,
    spec: Option<&ContourSpec>,
    tol: f64,
) -> Result<IdentityResidual> {
    let k = nvec.len();
    let params = IntegrandParams::new(p, mu_schedule)?;
    let spec = spec_for(k, p, spec)?;
    let mu = params.mu_at(t + 1);
    let jump = (mu - p.nu) / (1.0 - p.nu);
    let stay = (1.0 - mu) / (1.0 - p.nu);
    let mut reqs = vec![MomentRequest { nvec: nvec.to_vec(), t: t + 1 }];
    let mut coeffs = vec![-1.0];
    for subset in 0..(1usize << k) {
        let mut n = nvec.to_vec();
        let mut c = 1.0;
        for (i, ni) in n.iter_mut().enumerate() {
            if subset >> i & 1 == 1 {
                *ni -= 1;
                c *= jump;
            } else {
                c *= stay;
            }
        }
        reqs.push(MomentRequest { nvec: n, t });
        coeffs.push(c);
    }
    combine(&reqs, &coeffs, &params, &spec, tol)
}

/// Two-body boundary combination at the adjacent pair `(i, i+1)` (0-based `i`):
/// `alpha u(n - e_i - e_{i+1}) + beta u(n - e_{i+1}) + gamma u(n) - u(n - e_i)`.
pub fn check_boundary(
    nvec: &[i64],
    i: usize,
    t: usize,
    p: &ModelParams<f64>,
    mu_schedule: Option<&[f64]>,
    spec: Option<&ContourSpec>,
    tol: f64,
) -> Result<IdentityResidual> {
    let k = nvec.len();
    if i + 1 >= k || nvec[i] != nvec[i + 1] {
        return Err(Error::Domain(format!("entries {i} and {} of {nvec:?} must be equal", i + 1)));
    }
    let params = IntegrandParams::new(p, mu_schedule)?;
    let spec = spec_for(k, p, spec)?;
    let c = BoundaryCoeffs::new(&p.q, &p.nu);
    let shift = |a: bool, b: bool| {
        let mut n = nvec.to_vec();
        if a {
            n[i] -= 1;
        }
        if b {
            n[i + 1] -= 1;
        }
        MomentRequest { nvec: n, t }
    };
    let reqs = [shift(true, true), shift(false, true), shift(false, false), shift(true, false)];
    combine(&reqs, &[c.alpha, c.beta, c.gamma, -1.0], &params, &spec, tol)
}

fn combine(
    reqs: &[MomentRequest],
    coeffs: &[f64],
    params: &IntegrandParams,
    spec: &ContourSpec,
    tol: f64,
) -> Result<IdentityResidual> {
    let vals = qmoment_contour_batch(reqs, params, spec, tol)?;
    let total: Complex64 = vals.iter().zip(coeffs).map(|(v, c)| v.value * c).sum();
    Ok(IdentityResidual {
        residual: total.norm(),
        quadrature_change: vals.iter().map(|v| v.change).fold(0.0, f64::max),
    })
}
