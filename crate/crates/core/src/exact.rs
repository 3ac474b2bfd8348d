//! Exact evolution of the Boson chain on `Y^N_k = {y : sum y_i = k}`.
//!
//! Everything here is generic over [`Scalar`]; with [`Rational`] the
//! identities are checked with `==`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use num_traits::Zero;

use crate::chains::{OccupationState, ParamSchedule, ParticleState, WeylIndex};
use crate::error::{Error, Result};
use crate::qdist::{phi_pmf, phi_row, weighted_infinite_sum, ModelParams};
use crate::scalar::Scalar;
use crate::Rational;

pub const DEFAULT_STATE_CAP: u128 = 2_000_000;

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

/// `Y^N_k` in lexicographic order on `(y_0, ..., y_N)`.
#[derive(Debug, Clone)]
pub struct StateSpace {
    n_sites: usize,
    k: usize,
    states: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
}

impl StateSpace {
    pub fn new(n_sites: usize, k: usize) -> Result<Self> {
        Self::with_cap(n_sites, k, DEFAULT_STATE_CAP)
    }

    pub fn with_cap(n_sites: usize, k: usize, cap: u128) -> Result<Self> {
        if n_sites == 0 {
            return Err(Error::Domain("N must be at least 1".into()));
        }
        let needed = binomial((n_sites + k) as u128, k as u128);
        if needed > cap {
            return Err(Error::Capacity {
                what: "state space",
                needed,
                cap,
            });
        }
        let mut states = Vec::with_capacity(needed as usize);
        let mut cur = vec![0; n_sites + 1];
        fill(&mut cur, 0, k, &mut states);
        let index = states.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
        Ok(Self {
            n_sites,
            k,
            states,
            index,
        })
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[usize] {
        &self.states[i]
    }

    pub fn states(&self) -> &[Vec<usize>] {
        &self.states
    }

    pub fn index_of(&self, y: &[usize]) -> Option<usize> {
        self.index.get(y).copied()
    }
}

fn fill(cur: &mut Vec<usize>, pos: usize, left: usize, out: &mut Vec<Vec<usize>>) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(cur.clone());
        return;
    }
    for v in 0..=left {
        cur[pos] = v;
        fill(cur, pos + 1, left - v, out);
    }
    cur[pos] = 0;
}

/// Canonical list of `Y^N_k`.
pub fn enumerate_states(n_sites: usize, k: usize) -> Result<Vec<OccupationState>> {
    Ok(StateSpace::new(n_sites, k)?
        .states
        .into_iter()
        .map(|y| OccupationState { y })
        .collect())
}

/// Row-major sparse matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix<T> {
    pub rows: Vec<Vec<(usize, T)>>,
}

impl<T: Scalar> SparseMatrix<T> {
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    pub fn identity(n: usize) -> Self {
        Self {
            rows: (0..n).map(|i| vec![(i, T::one())]).collect(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.rows[i]
            .binary_search_by_key(&j, |e| e.0)
            .map(|p| self.rows[i][p].1.clone())
            .unwrap_or_else(|_| T::zero())
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// `M v`.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|row| {
                row.iter()
                    .fold(T::zero(), |acc, (j, p)| acc + p.clone() * v[*j].clone())
            })
            .collect()
    }

    /// `r M` for a row vector `r`.
    pub fn vec_mul(&self, r: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        for (i, row) in self.rows.iter().enumerate() {
            if r[i].is_zero() {
                continue;
            }
            for (j, p) in row {
                out[*j] = out[*j].clone() + r[i].clone() * p.clone();
            }
        }
        out
    }

    /// `self * other`.
    pub fn mul(&self, other: &Self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|row| {
                let mut acc: BTreeMap<usize, T> = BTreeMap::new();
                for (k, a) in row {
                    for (j, b) in &other.rows[*k] {
                        let e = acc.entry(*j).or_insert_with(T::zero);
                        *e = e.clone() + a.clone() * b.clone();
                    }
                }
                acc.into_iter().filter(|(_, v)| !v.is_zero()).collect()
            })
            .collect();
        Self { rows }
    }

    pub fn row_sums(&self) -> Vec<T> {
        self.rows
            .iter()
            .map(|row| row.iter().fold(T::zero(), |acc, (_, p)| acc + p.clone()))
            .collect()
    }

    /// Largest `|row sum - 1|`.
    pub fn stochasticity_defect(&self) -> T {
        self.row_sums()
            .into_iter()
            .map(|s| (s - T::one()).abs())
            .fold(T::zero(), T::max_of)
    }
}

/// `phi` rows for every site and occupation value up to `k` at step `t -> t+1`.
fn site_rows<T: Scalar>(n_sites: usize, k: usize, sched: &ParamSchedule<T>, t: usize) -> Result<Vec<Vec<Vec<T>>>> {
    (1..=n_sites)
        .map(|i| {
            let p = sched.site_params(i, t)?;
            Ok((0..=k).map(|m| phi_row(m, &p)).collect())
        })
        .collect()
}

/// One-step transition matrix `P_{t+1}` of the Boson chain, built by
/// enumerating the parallel jump vectors `(s_1, ..., s_N)`.
pub fn boson_matrix<T: Scalar>(space: &StateSpace, sched: &ParamSchedule<T>, t: usize) -> Result<SparseMatrix<T>> {
    let rows_phi = site_rows(space.n_sites, space.k, sched, t)?;
    let rows = space
        .states
        .iter()
        .map(|y| {
            let mut out = Vec::new();
            let mut next = y.clone();
            parallel_moves(y, 1, T::one(), &rows_phi, &mut next, space, &mut out);
            out.sort_by_key(|e: &(usize, T)| e.0);
            out
        })
        .collect();
    Ok(SparseMatrix { rows })
}

fn parallel_moves<T: Scalar>(
    y: &[usize],
    site: usize,
    weight: T,
    rows_phi: &[Vec<Vec<T>>],
    next: &mut Vec<usize>,
    space: &StateSpace,
    out: &mut Vec<(usize, T)>,
) {
    if site == y.len() {
        out.push((space.index_of(next).expect("moves stay in the space"), weight));
        return;
    }
    for (s, p) in rows_phi[site - 1][y[site]].iter().enumerate() {
        if p.is_zero() {
            continue;
        }
        next[site] -= s;
        next[site - 1] += s;
        parallel_moves(y, site + 1, weight.clone() * p.clone(), rows_phi, next, space, out);
        next[site] += s;
        next[site - 1] -= s;
    }
}

/// Matrix of the single-site transfer operator `[A]_i`: site `i` sends
/// `s ~ phi(.|y_i)` particles to site `i-1`.
pub fn site_operator<T: Scalar>(space: &StateSpace, i: usize, sched: &ParamSchedule<T>, t: usize) -> Result<SparseMatrix<T>> {
    if i == 0 || i > space.n_sites {
        return Err(Error::Domain(format!("site {i} outside 1..={}", space.n_sites)));
    }
    let p = sched.site_params(i, t)?;
    let rows_phi: Vec<Vec<T>> = (0..=space.k).map(|m| phi_row(m, &p)).collect();
    let rows = space
        .states
        .iter()
        .map(|y| {
            let mut out: Vec<(usize, T)> = rows_phi[y[i]]
                .iter()
                .enumerate()
                .filter(|(_, v)| !v.is_zero())
                .map(|(s, v)| {
                    let mut z = y.clone();
                    z[i] -= s;
                    z[i - 1] += s;
                    (space.index_of(&z).expect("moves stay in the space"), v.clone())
                })
                .collect();
            out.sort_by_key(|e| e.0);
            out
        })
        .collect();
    Ok(SparseMatrix { rows })
}

/// Operator product `[A]_{order[0]} [A]_{order[1]} ...` acting on functions.
pub fn composed_matrix<T: Scalar>(
    space: &StateSpace,
    order: &[usize],
    sched: &ParamSchedule<T>,
    t: usize,
) -> Result<SparseMatrix<T>> {
    let mut acc = SparseMatrix::identity(space.len());
    for &i in order {
        acc = acc.mul(&site_operator(space, i, sched, t)?);
    }
    Ok(acc)
}

/// `[A]_1 [A]_2 ... [A]_N`.
pub fn boson_matrix_composed<T: Scalar>(space: &StateSpace, sched: &ParamSchedule<T>, t: usize) -> Result<SparseMatrix<T>> {
    let order: Vec<usize> = (1..=space.n_sites).collect();
    composed_matrix(space, &order, sched, t)
}

/// Particles only move toward site 0, so every tail sum `sum_{i>=j} y_i`
/// is nonincreasing along a transition. Returns the first offending pair.
pub fn triangularity_violation<T: Scalar>(space: &StateSpace, m: &SparseMatrix<T>) -> Option<(usize, usize)> {
    for (i, row) in m.rows.iter().enumerate() {
        let a = space.state(i);
        for (j, v) in row {
            if v.is_zero() {
                continue;
            }
            let b = space.state(*j);
            let (mut ta, mut tb) = (0, 0);
            for site in (0..a.len()).rev() {
                ta += a[site];
                tb += b[site];
                if tb > ta {
                    return Some((i, *j));
                }
            }
        }
    }
    None
}

/// Values indexed by a [`StateSpace`].
#[derive(Debug, Clone)]
pub struct StateVector<T> {
    pub space: Arc<StateSpace>,
    pub values: Vec<T>,
}

impl<T: Scalar> StateVector<T> {
    pub fn from_fn(space: Arc<StateSpace>, f: impl Fn(&[usize]) -> T) -> Self {
        let values = space.states.iter().map(|y| f(y)).collect();
        Self { space, values }
    }

    pub fn constant(space: Arc<StateSpace>, v: T) -> Self {
        Self::from_fn(space, |_| v.clone())
    }

    /// `h_0(y) = 1{y_0 = 0}`, the step initial data.
    pub fn step_initial(space: Arc<StateSpace>) -> Self {
        Self::from_fn(space, |y| if y[0] == 0 { T::one() } else { T::zero() })
    }

    pub fn get(&self, y: &[usize]) -> Option<&T> {
        self.space.index_of(y).map(|i| &self.values[i])
    }
}

/// `h(t) = P_t ... P_1 h_0`, the solution of the true evolution equation.
pub fn evolve_true<T: Scalar>(h0: &StateVector<T>, t: usize, sched: &ParamSchedule<T>) -> Result<StateVector<T>> {
    let mut values = h0.values.clone();
    let mut cached: Option<SparseMatrix<T>> = None;
    for s in 0..t {
        let m = match (&cached, sched.mu_t.is_empty()) {
            (Some(m), true) => m.clone(),
            _ => boson_matrix(&h0.space, sched, s)?,
        };
        values = m.mul_vec(&values);
        if sched.mu_t.is_empty() {
            cached = Some(m);
        }
    }
    Ok(StateVector {
        space: h0.space.clone(),
        values,
    })
}

/// `E[prod_i q^{x_{n_i}(t) + n_i}]` for TASEP step initial data, through the
/// dual Boson chain started at `y(n)`:
/// `e_{y(n)}^T P_t P_{t-1} ... P_1 h_0`.
///
/// `h_0` vanishes once a particle reaches site 0 and `y_0` never decreases,
/// so the row is propagated only over states with `y_0 = 0`: site 1 contributes
/// the factor `phi(0|y_1)` and the other sites move freely.
pub fn qmoment_oracle<T: Scalar>(nvec: &WeylIndex, t: usize, sched: &ParamSchedule<T>) -> Result<T> {
    if nvec.n.last() == Some(&0) {
        return Ok(T::zero());
    }
    if nvec.k() == 0 {
        return Ok(T::one());
    }
    let n_sites = nvec.max();
    sched.validate(n_sites, t)?;
    let start = nvec.to_occupation(n_sites)?;
    let mut row: HashMap<Vec<usize>, T> = HashMap::from([(start.y, T::one())]);
    let homogeneous = sched.mu_t.is_empty();
    let mut cached: Option<Vec<Vec<Vec<T>>>> = None;
    for s in (0..t).rev() {
        if !homogeneous || cached.is_none() {
            cached = Some(site_rows(n_sites, nvec.k(), sched, s)?);
        }
        let rows_phi = cached.as_ref().expect("set above");
        let mut next: HashMap<Vec<usize>, T> = HashMap::with_capacity(row.len());
        for (y, w) in &row {
            let stay = rows_phi[0][y[1]][0].clone();
            if stay.is_zero() {
                continue;
            }
            let mut z = y.clone();
            surviving_moves(y, 2, w.clone() * stay, rows_phi, &mut z, &mut next);
        }
        row = next;
    }
    Ok(row.into_values().fold(T::zero(), |acc, v| acc + v))
}

fn surviving_moves<T: Scalar>(
    y: &[usize],
    site: usize,
    weight: T,
    rows_phi: &[Vec<Vec<T>>],
    z: &mut Vec<usize>,
    out: &mut HashMap<Vec<usize>, T>,
) {
    if site == y.len() {
        let slot = out.entry(z.clone()).or_insert_with(T::zero);
        *slot = slot.clone() + weight;
        return;
    }
    for (s, p) in rows_phi[site - 1][y[site]].iter().enumerate() {
        if p.is_zero() {
            continue;
        }
        z[site] -= s;
        z[site - 1] += s;
        surviving_moves(y, site + 1, weight.clone() * p.clone(), rows_phi, z, out);
        z[site] += s;
        z[site - 1] -= s;
    }
}

/// `mu_k = E[q^{k (x_n(t) + n)}]` for `k = 0, ..., k_max`.
pub fn qmoments_equal<T: Scalar>(n: usize, k_max: usize, t: usize, sched: &ParamSchedule<T>) -> Result<Vec<T>> {
    (0..=k_max)
        .map(|k| qmoment_oracle(&WeylIndex { n: vec![n; k] }, t, sched))
        .collect()
}

/// `H(x, y) = prod_{i>=1} q^{y_i (x_i + i)}`, and 0 when `y_0 > 0`.
pub fn h_functional<T: Scalar>(x: &ParticleState, y: &OccupationState, q: &T) -> Result<T> {
    if y.n_sites() != x.len() {
        return Err(Error::Domain(format!(
            "state has {} sites but {} particles",
            y.n_sites(),
            x.len()
        )));
    }
    if y.y[0] > 0 {
        return Ok(T::zero());
    }
    let e: i64 = (1..=x.len()).map(|i| y.y[i] as i64 * (x.get(i) + i as i64)).sum();
    if e < 0 && q.is_zero() {
        return Err(Error::Domain("negative power of q = 0".into()));
    }
    Ok(q.ipow(e))
}

/// `alpha, beta, gamma` of the two-body boundary condition.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryCoeffs<T> {
    pub alpha: T,
    pub beta: T,
    pub gamma: T,
}

impl<T: Scalar> BoundaryCoeffs<T> {
    pub fn new(q: &T, nu: &T) -> Self {
        let one = T::one();
        let den = one.clone() - q.clone() * nu.clone();
        Self {
            alpha: nu.clone() * (one.clone() - q.clone()) / den.clone(),
            beta: (q.clone() - nu.clone()) / den.clone(),
            gamma: (one - q.clone()) / den,
        }
    }
}

/// Result of an intertwining check.
#[derive(Debug, Clone, PartialEq)]
pub struct IntertwiningReport<T> {
    pub max_residual: T,
    pub pairs: usize,
    /// Largest certified truncation bound of the first particle's sum (0 in closed form).
    pub max_tail_bound: f64,
}

/// Strictly decreasing `x` with `x_N >= -N` and `x_1 <= window - 1`.
pub fn position_grid(n: usize, window: i64) -> Vec<ParticleState> {
    fn rec(n: usize, hi: i64, lo: i64, cur: &mut Vec<i64>, out: &mut Vec<ParticleState>) {
        if cur.len() == n {
            out.push(ParticleState { x: cur.clone() });
            return;
        }
        let remaining = (n - cur.len()) as i64;
        let mut v = hi;
        while v - (remaining - 1) >= lo {
            cur.push(v);
            rec(n, v - 1, lo, cur, out);
            cur.pop();
            v -= 1;
        }
    }
    let mut out = Vec::new();
    rec(n, window - 1, -(n as i64), &mut Vec::new(), &mut out);
    out
}

/// How the first particle's infinite sum `sum_j phi(j|inf) q^{j y_1}` is evaluated.
pub enum FirstParticle<'a, T> {
    /// Closed form `phi(0|y_1)`.
    ClosedForm,
    /// Caller-supplied evaluation returning `(value, certified tail bound)`.
    Custom(&'a dyn Fn(usize, &ModelParams<T>) -> Result<(T, f64)>),
}

fn intertwining_residual<T: Scalar>(
    n: usize,
    k_max: usize,
    window: i64,
    sched: &ParamSchedule<T>,
    t: usize,
    first: FirstParticle<'_, T>,
) -> Result<IntertwiningReport<T>> {
    sched.validate(n, t + 1)?;
    let q = sched.base.q.clone();
    let grid = position_grid(n, window);
    let params: Vec<ModelParams<T>> = (1..=n).map(|i| sched.site_params(i, t)).collect::<Result<_>>()?;

    let max_exp = k_max * (window as usize + n + 1);
    let qpow: Vec<T> = (0..=max_exp).map(|e| q.upow(e)).collect();

    // Duality factors for particles 2..N: sum_j phi(j|m) q^{j y}, by (particle, m, y).
    let max_gap = (window as usize + n) + 1;
    let mut dual: Vec<Vec<Vec<T>>> = Vec::with_capacity(n);
    for p in params.iter().skip(1) {
        let by_m = (0..=max_gap)
            .map(|m| {
                let row = phi_row(m, p);
                (0..=k_max)
                    .map(|y| {
                        let qy = q.upow(y);
                        let mut w = T::one();
                        let mut acc = T::zero();
                        for v in &row {
                            acc = acc + v.clone() * w.clone();
                            w = w * qy.clone();
                        }
                        acc
                    })
                    .collect()
            })
            .collect();
        dual.push(by_m);
    }
    let mut first_vals = Vec::with_capacity(k_max + 1);
    let mut max_tail_bound: f64 = 0.0;
    for y in 0..=k_max {
        let (v, b) = match &first {
            FirstParticle::ClosedForm => (phi_pmf(0, y, &params[0])?, 0.0),
            FirstParticle::Custom(f) => f(y, &params[0])?,
        };
        max_tail_bound = max_tail_bound.max(b);
        first_vals.push(v);
    }

    let mut max_residual = T::zero();
    let mut pairs = 0;
    for k in 0..=k_max {
        let space = StateSpace::new(n, k)?;
        let m = boson_matrix(&space, sched, t)?;
        for x in &grid {
            let shifted: Vec<usize> = (1..=n).map(|i| (x.get(i) + i as i64) as usize).collect();
            let h = |y: &[usize]| -> T {
                if y[0] > 0 {
                    return T::zero();
                }
                let e: usize = (1..=n).map(|i| y[i] * shifted[i - 1]).sum();
                qpow[e].clone()
            };
            for (row_idx, y) in space.states.iter().enumerate() {
                let lhs = if y[0] > 0 {
                    T::zero()
                } else {
                    let mut acc = h(y) * first_vals[y[1]].clone();
                    for i in 2..=n {
                        let gap = (x.get(i - 1) - x.get(i) - 1) as usize;
                        acc = acc * dual[i - 2][gap][y[i]].clone();
                    }
                    acc
                };
                let rhs = m.rows[row_idx]
                    .iter()
                    .fold(T::zero(), |acc, (j, p)| acc + p.clone() * h(space.state(*j)));
                let r = (lhs - rhs).abs();
                if r > max_residual {
                    max_residual = r;
                }
                pairs += 1;
            }
        }
    }
    Ok(IntertwiningReport {
        max_residual,
        pairs,
        max_tail_bound,
    })
}

/// `max |P^TASEP_{t+1} H - H (P^Boson_{t+1})^T|` over the position grid and
/// all `y` with at most `k_max` particles, with the first particle's
/// infinite sum in closed form. Exact in rational arithmetic.
pub fn verify_intertwining<T: Scalar>(
    n: usize,
    k_max: usize,
    window: i64,
    sched: &ParamSchedule<T>,
    t: usize,
) -> Result<IntertwiningReport<T>> {
    intertwining_residual(n, k_max, window, sched, t, FirstParticle::ClosedForm)
}

/// Float version that sums the first particle's jumps directly, stopping
/// once the certified tail is below `tol / 10`.
pub fn verify_intertwining_truncated(
    n: usize,
    k_max: usize,
    window: i64,
    sched: &ParamSchedule<f64>,
    t: usize,
    tol: f64,
) -> Result<IntertwiningReport<f64>> {
    let allowed = tol / 10.0;
    let f = move |y: usize, p: &ModelParams<f64>| -> Result<(f64, f64)> {
        let s = weighted_infinite_sum(p.q.powi(y as i32), p, allowed)?;
        if s.tail_bound > allowed {
            return Err(Error::TailBound {
                bound: s.tail_bound,
                allowed,
            });
        }
        Ok((s.value, s.tail_bound))
    };
    intertwining_residual(n, k_max, window, sched, t, FirstParticle::Custom(&f))
}

/// A word in the free monoid on `{A, B}`; bit `i` set means letter `i` is `B`.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FreeWord {
    pub bits: u64,
    pub len: usize,
}

impl FreeWord {
    pub fn concat(self, other: FreeWord) -> FreeWord {
        FreeWord {
            bits: self.bits | (other.bits << self.len),
            len: self.len + other.len,
        }
    }

    /// `A^j B^{len-j}`.
    pub fn a_then_b(j: usize, len: usize) -> FreeWord {
        FreeWord {
            bits: ((1u64 << len) - 1) & !((1u64 << j) - 1),
            len,
        }
    }

    pub fn count_b(&self) -> usize {
        self.bits.count_ones() as usize
    }
}

impl fmt::Debug for FreeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.len {
            f.write_str(if self.bits >> i & 1 == 1 { "B" } else { "A" })?;
        }
        Ok(())
    }
}

impl fmt::Display for FreeWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Noncommutative polynomial, homogeneous of one degree.
pub type FreePoly = BTreeMap<u64, Rational>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinexpReport {
    pub m: usize,
    pub member: bool,
    /// Nonzero coefficients of `(pA + (1-p)B)^m - sum_j phi(j|m) A^j B^{m-j}`.
    pub difference_terms: usize,
    pub generators: usize,
    pub rank: usize,
}

pub const BINEXP_MAX_DEGREE: usize = 12;

/// Checks that `(pA + (1-p)B)^m - sum_j phi(j|m) A^j B^{m-j}` lies in the
/// degree-`m` slice of the two-sided ideal generated by
/// `BA - alpha AA - beta AB - gamma BB`, by exact rank comparison.
pub fn verify_binexp(m: usize, p: &ModelParams<Rational>) -> Result<BinexpReport> {
    if m > BINEXP_MAX_DEGREE {
        return Err(Error::Capacity {
            what: "binomial expansion degree",
            needed: m as u128,
            cap: BINEXP_MAX_DEGREE as u128,
        });
    }
    let c = BoundaryCoeffs::new(&p.q, &p.nu);
    let prob = p.move_prob();
    let one = Rational::from_int(1);

    let mut diff: FreePoly = BTreeMap::new();
    for bits in 0..(1u64 << m) {
        let b = bits.count_ones() as usize;
        let v = prob.upow(m - b) * (one.clone() - prob.clone()).upow(b);
        add_term(&mut diff, bits, v);
    }
    for (j, v) in phi_row(m, p).into_iter().enumerate() {
        add_term(&mut diff, FreeWord::a_then_b(j, m).bits, -v);
    }
    let difference_terms = diff.len();

    let (member, generators, rank) = ideal_contains(m, &c, diff);
    Ok(BinexpReport {
        m,
        member,
        difference_terms,
        generators,
        rank,
    })
}

/// Membership of a homogeneous degree-`m` polynomial in the span of
/// `u R v` with `R = BA - alpha AA - beta AB - gamma BB` and `|u| + |v| = m - 2`.
/// Returns `(member, generator count, rank of the generators)`.
pub fn ideal_contains(m: usize, c: &BoundaryCoeffs<Rational>, poly: FreePoly) -> (bool, usize, usize) {
    // Leftmost letter is bit 0, set bit is B.
    let relation: [(u64, Rational); 4] = [
        (0b01, Rational::from_int(1)),
        (0b00, -c.alpha.clone()),
        (0b10, -c.beta.clone()),
        (0b11, -c.gamma.clone()),
    ];
    let mut echelon = Echelon::default();
    let mut generators = 0;
    if m >= 2 {
        for pos in 0..m - 1 {
            for rest in 0..(1u64 << (m - 2)) {
                let low = rest & ((1u64 << pos) - 1);
                let high = (rest >> pos) << (pos + 2);
                let mut g: FreePoly = BTreeMap::new();
                for (r, v) in &relation {
                    g.insert(low | (r << pos) | high, v.clone());
                }
                g.retain(|_, v| !v.is_zero());
                generators += 1;
                echelon.insert(g);
            }
        }
    }
    (echelon.reduce(poly).is_empty(), generators, echelon.rank())
}

fn add_term(poly: &mut FreePoly, key: u64, v: Rational) {
    let e = poly.entry(key).or_insert_with(|| Rational::from_int(0));
    *e += v;
    if e.is_zero() {
        poly.remove(&key);
    }
}

/// Sparse row echelon form keyed by leading (smallest) word.
#[derive(Default)]
struct Echelon {
    pivots: BTreeMap<u64, FreePoly>,
}

impl Echelon {
    fn rank(&self) -> usize {
        self.pivots.len()
    }

    /// Cancels leading terms against pivot rows until the leading word is
    /// not a pivot (or the vector vanishes).
    fn reduce(&self, mut v: FreePoly) -> FreePoly {
        while let Some((&lead, coef)) = v.iter().next() {
            let Some(row) = self.pivots.get(&lead) else {
                break;
            };
            let factor = coef.clone() / row[&lead].clone();
            for (key, rv) in row {
                add_term(&mut v, *key, -(factor.clone() * rv.clone()));
            }
        }
        v
    }

    fn insert(&mut self, v: FreePoly) {
        let r = self.reduce(v);
        if let Some((&lead, _)) = r.iter().next() {
            self.pivots.insert(lead, r);
        }
    }
}

/// Gaussian elimination with pivoting on the first nonzero entry (exact
/// scalars) or the largest one (floats).
pub fn solve_dense<T: Scalar>(mut a: Vec<Vec<T>>, mut b: Vec<T>) -> Result<Vec<T>> {
    let n = b.len();
    if a.len() != n || a.iter().any(|r| r.len() != n) {
        return Err(Error::Domain("system must be square".into()));
    }
    for col in 0..n {
        let pivot = if T::EXACT {
            (col..n).find(|&r| !a[r][col].is_zero())
        } else {
            (col..n)
                .filter(|&r| !a[r][col].is_zero())
                .max_by(|&r, &s| a[r][col].abs().partial_cmp(&a[s][col].abs()).expect("finite"))
        }
        .ok_or(Error::IllConditioned)?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in col + 1..n {
            if a[r][col].is_zero() {
                continue;
            }
            let f = a[r][col].clone() / a[col][col].clone();
            for c in col..n {
                let v = a[col][c].clone() * f.clone();
                a[r][c] = a[r][c].clone() - v;
            }
            let v = b[col].clone() * f;
            b[r] = b[r].clone() - v;
        }
    }
    let mut x = vec![T::zero(); n];
    for r in (0..n).rev() {
        let mut acc = b[r].clone();
        for c in r + 1..n {
            acc = acc - a[r][c].clone() * x[c].clone();
        }
        x[r] = acc / a[r][r].clone();
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chains::ParamSchedule;

    fn r(n: i64, d: i64) -> Rational {
        Rational::new(n.into(), d.into())
    }

    fn exact(q: Rational, mu: Rational, nu: Rational) -> ParamSchedule<Rational> {
        ParamSchedule::constant(ModelParams::new(q, mu, nu).unwrap())
    }

    fn base() -> ParamSchedule<Rational> {
        exact(r(1, 3), r(1, 2), r(1, 5))
    }

    #[test]
    fn enumeration_examples() {
        let s = enumerate_states(1, 1).unwrap();
        assert_eq!(s.iter().map(|y| y.y.clone()).collect::<Vec<_>>(), vec![vec![0, 1], vec![1, 0]]);
        assert_eq!(enumerate_states(2, 2).unwrap().len(), 6);
        assert_eq!(enumerate_states(3, 4).unwrap().len(), 35);
        let err = StateSpace::with_cap(10, 10, 1000).unwrap_err();
        assert!(matches!(err, Error::Capacity { needed: 184_756, .. }));
    }

    #[test]
    fn enumeration_is_lexicographic() {
        let s = StateSpace::new(3, 4).unwrap();
        assert!(s.states().windows(2).all(|w| w[0] < w[1]));
        for (i, y) in s.states().iter().enumerate() {
            assert_eq!(s.index_of(y), Some(i));
        }
    }

    #[test]
    fn matrix_examples() {
        let sched = base();
        let space = StateSpace::new(1, 1).unwrap();
        let m = boson_matrix(&space, &sched, 0).unwrap();
        assert_eq!(m.get(0, 1), sched.base.move_prob());
        assert_eq!(m.stochasticity_defect(), r(0, 1));

        let frozen = exact(r(1, 3), r(1, 4), r(1, 4));
        let space = StateSpace::new(3, 3).unwrap();
        let m = boson_matrix(&space, &frozen, 0).unwrap();
        assert_eq!(m, SparseMatrix::identity(space.len()));
    }

    #[test]
    fn matrices_stochastic_and_triangular() {
        let sched = ParamSchedule::new(
            ModelParams::new(r(2, 5), r(3, 5), r(1, 7)).unwrap(),
            vec![r(1, 1), r(6, 5), r(3, 4)],
            vec![r(1, 2), r(2, 3)],
        )
        .unwrap();
        for k in 0..5 {
            let space = StateSpace::new(3, k).unwrap();
            for t in 0..2 {
                let m = boson_matrix(&space, &sched, t).unwrap();
                assert_eq!(m.stochasticity_defect(), r(0, 1));
                assert_eq!(triangularity_violation(&space, &m), None);
            }
        }
    }

    #[test]
    fn composition_order() {
        let sched = base();
        let space = StateSpace::new(3, 3).unwrap();
        let parallel = boson_matrix(&space, &sched, 0).unwrap();
        assert_eq!(boson_matrix_composed(&space, &sched, 0).unwrap(), parallel);
        let reversed = composed_matrix(&space, &[3, 2, 1], &sched, 0).unwrap();
        assert_ne!(reversed, parallel);
    }

    #[test]
    fn evolution_examples() {
        let sched = base();
        let space = Arc::new(StateSpace::new(1, 1).unwrap());
        let h0 = StateVector::step_initial(space.clone());
        assert_eq!(evolve_true(&h0, 0, &sched).unwrap().values, h0.values);
        let h1 = evolve_true(&h0, 1, &sched).unwrap();
        let expect = (r(1, 1) - sched.base.mu.clone()) / (r(1, 1) - sched.base.nu.clone());
        assert_eq!(h1.get(&[0, 1]).unwrap(), &expect);
        let ones = StateVector::constant(Arc::new(StateSpace::new(2, 3).unwrap()), r(1, 1));
        assert!(evolve_true(&ones, 4, &sched).unwrap().values.iter().all(|v| *v == r(1, 1)));
    }

    #[test]
    fn oracle_examples() {
        let sched = base();
        let w = |n: Vec<usize>| WeylIndex::new(n).unwrap();
        assert_eq!(qmoment_oracle(&w(vec![3, 1]), 0, &sched).unwrap(), r(1, 1));
        let expect = (r(1, 1) - sched.base.mu.clone()) / (r(1, 1) - sched.base.nu.clone());
        assert_eq!(qmoment_oracle(&w(vec![1]), 1, &sched).unwrap(), expect);
        for t in 0..4 {
            assert_eq!(qmoment_oracle(&w(vec![2, 0]), t, &sched).unwrap(), r(0, 1));
        }
    }

    #[test]
    fn oracle_matches_full_evolution() {
        let sched = ParamSchedule::new(
            ModelParams::new(r(1, 2), r(2, 5), r(1, 10)).unwrap(),
            vec![],
            vec![r(2, 5), r(1, 2), r(3, 10)],
        )
        .unwrap();
        let nvec = WeylIndex::new(vec![3, 1, 1]).unwrap();
        let space = Arc::new(StateSpace::new(3, 3).unwrap());
        let h = evolve_true(&StateVector::step_initial(space), 3, &sched).unwrap();
        let y = nvec.to_occupation(3).unwrap();
        assert_eq!(&qmoment_oracle(&nvec, 3, &sched).unwrap(), h.get(&y.y).unwrap());
        let sched = ParamSchedule::new(sched.base.clone(), vec![r(1, 1), r(9, 10), r(4, 5)], sched.mu_t.clone()).unwrap();
        let h = evolve_true(&StateVector::step_initial(h.space.clone()), 3, &sched).unwrap();
        assert_eq!(&qmoment_oracle(&nvec, 3, &sched).unwrap(), h.get(&y.y).unwrap());
    }

    #[test]
    fn oracle_known_float_value() {
        let sched = ParamSchedule::constant(ModelParams::new(0.5, 0.4, 0.1).unwrap());
        let v: f64 = qmoment_oracle(&WeylIndex::new(vec![3, 1]).unwrap(), 3, &sched).unwrap();
        assert!((v - 0.29109811565951915).abs() < 1e-14);
    }

    #[test]
    fn h_examples() {
        let q = r(1, 3);
        let x = ParticleState::step(2);
        let y = |v: Vec<usize>| OccupationState::new(v).unwrap();
        assert_eq!(h_functional(&x, &y(vec![0, 0, 0]), &q).unwrap(), r(1, 1));
        assert_eq!(h_functional(&x, &y(vec![1, 0, 0]), &q).unwrap(), r(0, 1));
        assert_eq!(h_functional(&x, &y(vec![0, 2, 1]), &q).unwrap(), r(1, 1));
        let x = ParticleState::new(vec![3, -1]).unwrap();
        assert_eq!(h_functional(&x, &y(vec![0, 1, 2]), &q).unwrap(), r(1, 3 * 3 * 3 * 3 * 9));
    }

    #[test]
    fn position_grid_size() {
        assert_eq!(position_grid(3, 12).len(), 455);
        assert!(position_grid(2, 4).iter().all(|x| x.x[1] >= -2 && x.x[0] <= 3));
    }

    #[test]
    fn intertwining_exact_small() {
        let rep = verify_intertwining(2, 3, 6, &base(), 0).unwrap();
        assert_eq!(rep.max_residual, r(0, 1));
        let sched = ParamSchedule::new(
            ModelParams::new(r(2, 5), r(1, 2), r(1, 6)).unwrap(),
            vec![r(3, 2), r(1, 1)],
            vec![r(1, 2), r(3, 5)],
        )
        .unwrap();
        let rep = verify_intertwining(2, 3, 6, &sched, 1).unwrap();
        assert_eq!(rep.max_residual, r(0, 1));
    }

    #[test]
    fn intertwining_truncated_small() {
        let sched = ParamSchedule::constant(ModelParams::new(0.4, 0.6, 0.15).unwrap());
        let rep = verify_intertwining_truncated(2, 3, 6, &sched, 0, 1e-10).unwrap();
        assert!(rep.max_residual < 1e-10, "{rep:?}");
        assert!(rep.max_tail_bound <= 1e-11);
    }

    #[test]
    fn boundary_coefficients_sum_to_one() {
        let c = BoundaryCoeffs::new(&r(1, 3), &r(1, 5));
        assert_eq!(c.alpha.clone() + c.beta.clone() + c.gamma.clone(), r(1, 1));
        let c0 = BoundaryCoeffs::new(&r(1, 3), &r(0, 1));
        assert_eq!(c0.alpha, r(0, 1));
    }

    #[test]
    fn binexp_small_degrees() {
        let p = ModelParams::new(r(1, 3), r(1, 2), r(1, 5)).unwrap();
        let rep = verify_binexp(1, &p).unwrap();
        assert!(rep.member);
        assert_eq!(rep.difference_terms, 0);
        for m in 2..=5 {
            assert!(verify_binexp(m, &p).unwrap().member, "m = {m}");
        }
        assert!(verify_binexp(13, &p).is_err());
    }

    #[test]
    fn ideal_rejects_wrong_expansions() {
        let p = ModelParams::new(r(1, 3), r(1, 2), r(1, 5)).unwrap();
        let c = BoundaryCoeffs::new(&p.q, &p.nu);
        let prob = p.move_prob();
        let m = 3;
        // Ordinary binomial weights in place of phi.
        let mut poly: FreePoly = BTreeMap::new();
        for bits in 0..(1u64 << m) {
            let b = bits.count_ones() as usize;
            let v = prob.upow(m - b) * (r(1, 1) - prob.clone()).upow(b);
            add_term(&mut poly, bits, v);
        }
        let binom = [1, 3, 3, 1];
        for j in 0..=m {
            let v = Rational::from_int(binom[j]) * prob.upow(j) * (r(1, 1) - prob.clone()).upow(m - j);
            add_term(&mut poly, FreeWord::a_then_b(j, m).bits, -v);
        }
        assert!(!ideal_contains(m, &c, poly).0);
        // A single relation instance is a member; a single word is not.
        let mut rel: FreePoly = BTreeMap::new();
        add_term(&mut rel, 0b01, r(1, 1));
        add_term(&mut rel, 0b00, -c.alpha.clone());
        add_term(&mut rel, 0b10, -c.beta.clone());
        add_term(&mut rel, 0b11, -c.gamma.clone());
        assert!(ideal_contains(2, &c, rel).0);
        let mut word: FreePoly = BTreeMap::new();
        add_term(&mut word, 0b01, r(1, 1));
        assert!(!ideal_contains(2, &c, word).0);
    }

    #[test]
    fn free_word_display() {
        assert_eq!(FreeWord::a_then_b(2, 5).to_string(), "AABBB");
        let w = FreeWord { bits: 0b01, len: 2 };
        assert_eq!(w.to_string(), "BA");
        assert_eq!(w.concat(FreeWord { bits: 1, len: 1 }).to_string(), "BAB");
    }

    #[test]
    fn dense_solver() {
        let a = vec![vec![r(0, 1), r(2, 1)], vec![r(3, 1), r(1, 1)]];
        let x = solve_dense(a, vec![r(4, 1), r(5, 1)]).unwrap();
        assert_eq!(x, vec![r(1, 1), r(2, 1)]);
        let a = vec![vec![1.0, 1.0], vec![1.0, 1.0]];
        assert_eq!(solve_dense(a, vec![1.0, 2.0]).unwrap_err(), Error::IllConditioned);
    }
}
