//! Markov chains: the N-site Boson process (line and ring), the TASEP with
//! a virtual particle at `+inf`, the gap coupling between them, and a
//! deterministic Monte Carlo driver.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::qdist::{JumpSampler, JumpSupport, ModelParams};
use crate::qseries::{qpoch, qpoch_inf_real, PRODUCT_TOL};
use crate::rng::RngStream;
use crate::scalar::Scalar;

/// Occupation numbers `y_0, ..., y_N`. Site 0 is absorbing on the line.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OccupationState {
    pub y: Vec<usize>,
}

impl OccupationState {
    pub fn new(y: Vec<usize>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::Domain("occupation vector needs site 0".into()));
        }
        Ok(Self { y })
    }

    pub fn zero(n_sites: usize) -> Self {
        Self {
            y: vec![0; n_sites + 1],
        }
    }

    /// `N`, the number of sites excluding site 0.
    pub fn n_sites(&self) -> usize {
        self.y.len() - 1
    }

    pub fn total(&self) -> usize {
        self.y.iter().sum()
    }

    pub fn to_weyl(&self) -> WeylIndex {
        let mut n = Vec::with_capacity(self.total());
        for (i, &c) in self.y.iter().enumerate().rev() {
            n.extend(std::iter::repeat_n(i, c));
        }
        WeylIndex { n }
    }
}

/// Weakly decreasing site labels `N >= n_1 >= ... >= n_k >= 0`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct WeylIndex {
    pub n: Vec<usize>,
}

impl WeylIndex {
    pub fn new(n: Vec<usize>) -> Result<Self> {
        if n.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Domain(format!("{n:?} is not weakly decreasing")));
        }
        Ok(Self { n })
    }

    pub fn k(&self) -> usize {
        self.n.len()
    }

    /// Largest entry, or 0 for the empty index.
    pub fn max(&self) -> usize {
        self.n.first().copied().unwrap_or(0)
    }

    pub fn to_occupation(&self, n_sites: usize) -> Result<OccupationState> {
        let mut y = vec![0; n_sites + 1];
        for &i in &self.n {
            if i > n_sites {
                return Err(Error::Domain(format!("index {i} exceeds N = {n_sites}")));
            }
            y[i] += 1;
        }
        Ok(OccupationState { y })
    }
}

/// TASEP positions `x_1 > x_2 > ... > x_N`; `x_0 = +inf` is implicit.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ParticleState {
    pub x: Vec<i64>,
}

impl ParticleState {
    pub fn new(x: Vec<i64>) -> Result<Self> {
        if x.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::Domain(format!("{x:?} is not strictly decreasing")));
        }
        Ok(Self { x })
    }

    /// Step initial data `x_n = -n`.
    pub fn step(n_particles: usize) -> Self {
        Self {
            x: (1..=n_particles as i64).map(|n| -n).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// `x_n` for `n >= 1`.
    pub fn get(&self, n: usize) -> i64 {
        self.x[n - 1]
    }

    /// Jump support of particle `n`: infinite for the first particle,
    /// otherwise the free space `x_{n-1} - x_n - 1`.
    pub fn support(&self, n: usize) -> JumpSupport {
        if n == 1 {
            JumpSupport::Infinite
        } else {
            JumpSupport::Finite((self.x[n - 2] - self.x[n - 1] - 1) as usize)
        }
    }
}

/// Model parameters plus particle/site weights `a_i` and time weights `mu_t`.
///
/// Site (or particle) `i` at the step `t -> t+1` uses `mu = a_i mu_{t+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSchedule<T> {
    pub base: ModelParams<T>,
    /// `a_1, a_2, ...`; missing entries default to 1.
    pub a: Vec<T>,
    /// `mu_1, mu_2, ...`; missing entries default to `base.mu`.
    pub mu_t: Vec<T>,
}

impl<T: Scalar> ParamSchedule<T> {
    pub fn constant(base: ModelParams<T>) -> Self {
        Self {
            base,
            a: Vec::new(),
            mu_t: Vec::new(),
        }
    }

    pub fn new(base: ModelParams<T>, a: Vec<T>, mu_t: Vec<T>) -> Result<Self> {
        if let Some(bad) = a.iter().find(|v| !(**v > T::zero())) {
            return Err(Error::Schedule(format!("site weight {bad:?} must be positive")));
        }
        Ok(Self { base, a, mu_t })
    }

    pub fn a_i(&self, i: usize) -> T {
        self.a.get(i - 1).cloned().unwrap_or_else(T::one)
    }

    /// `mu_t` for `t >= 1`.
    pub fn mu_at(&self, t: usize) -> T {
        self.mu_t
            .get(t - 1)
            .cloned()
            .unwrap_or_else(|| self.base.mu.clone())
    }

    /// True when every weight is 1 and no time schedule is given.
    pub fn is_homogeneous(&self) -> bool {
        self.a.iter().all(|v| v.is_one()) && self.mu_t.iter().all(|v| *v == self.base.mu)
    }

    /// Parameters of site/particle `i` for the step `t -> t+1`.
    pub fn site_params(&self, i: usize, t: usize) -> Result<ModelParams<T>> {
        let mu = self.a_i(i) * self.mu_at(t + 1);
        ModelParams::new(self.base.q.clone(), mu.clone(), self.base.nu.clone()).map_err(|_| {
            Error::Schedule(format!(
                "a_{i} * mu_{} = {mu:?} leaves [nu, 1) with nu = {:?}",
                t + 1,
                self.base.nu
            ))
        })
    }

    /// Checks every `(i, t)` with `i <= n_sites`, `t < horizon`.
    pub fn validate(&self, n_sites: usize, horizon: usize) -> Result<()> {
        for t in 0..horizon {
            for i in 1..=n_sites {
                self.site_params(i, t)?;
            }
        }
        Ok(())
    }

    pub fn to_f64(&self) -> ParamSchedule<f64> {
        ParamSchedule {
            base: self.base.to_f64(),
            a: self.a.iter().map(|v| v.to_f64_lossy()).collect(),
            mu_t: self.mu_t.iter().map(|v| v.to_f64_lossy()).collect(),
        }
    }
}

/// One [`JumpSampler`] per distinct effective `mu`, indexed by `(t, i)`.
#[derive(Debug)]
pub struct SamplerBank {
    samplers: Vec<JumpSampler>,
    index: Vec<Vec<usize>>,
    n_sites: usize,
}

impl SamplerBank {
    pub fn new(sched: &ParamSchedule<f64>, n_sites: usize, horizon: usize) -> Result<Self> {
        let mut samplers = Vec::new();
        let mut seen: HashMap<u64, usize> = HashMap::new();
        let mut index = Vec::with_capacity(horizon);
        for t in 0..horizon.max(1) {
            let mut row = Vec::with_capacity(n_sites);
            for i in 1..=n_sites.max(1) {
                let p = sched.site_params(i, t)?;
                let id = match seen.get(&p.mu.to_bits()) {
                    Some(&id) => id,
                    None => {
                        samplers.push(JumpSampler::new(p.clone())?);
                        seen.insert(p.mu.to_bits(), samplers.len() - 1);
                        samplers.len() - 1
                    }
                };
                row.push(id);
            }
            index.push(row);
        }
        Ok(Self {
            samplers,
            index,
            n_sites,
        })
    }

    /// Bank for a single parameter triple (ring geometry, homogeneous runs).
    pub fn homogeneous(p: &ModelParams<f64>) -> Result<Self> {
        Self::new(&ParamSchedule::constant(p.clone()), 1, 1)
    }

    pub fn horizon(&self) -> usize {
        self.index.len()
    }

    /// Sampler for site/particle `i` at the step `t -> t+1`.
    pub fn get(&self, i: usize, t: usize) -> &JumpSampler {
        let row = &self.index[t.min(self.index.len() - 1)];
        &self.samplers[row[(i - 1).min(row.len() - 1)]]
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn cap_events(&self) -> u64 {
        self.samplers.iter().map(|s| s.cap_events()).sum()
    }
}

/// Draws `s_1, ..., s_N` for a Boson step from the time-`t` state.
pub fn boson_draws(y: &[usize], bank: &SamplerBank, t: usize, stream: &mut RngStream) -> Vec<usize> {
    (1..y.len())
        .map(|i| bank.get(i, t).sample(JumpSupport::Finite(y[i]), stream))
        .collect()
}

/// Applies draws in parallel: `y_i -= s_i`, `y_{i-1} += s_i`.
pub fn apply_boson_draws(y: &OccupationState, draws: &[usize]) -> Result<OccupationState> {
    if draws.len() != y.n_sites() {
        return Err(Error::Domain(format!(
            "{} draws for {} sites",
            draws.len(),
            y.n_sites()
        )));
    }
    let mut next = y.y.clone();
    for (i, &s) in draws.iter().enumerate() {
        let site = i + 1;
        if s > y.y[site] {
            return Err(Error::Range { j: s, m: y.y[site] });
        }
        next[site] -= s;
        next[site - 1] += s;
    }
    Ok(OccupationState { y: next })
}

/// One step of the line Boson process.
pub fn boson_step(
    y: &OccupationState,
    bank: &SamplerBank,
    t: usize,
    stream: &mut RngStream,
) -> OccupationState {
    let draws = boson_draws(&y.y, bank, t, stream);
    let next = apply_boson_draws(y, &draws).expect("draws respect the support");
    debug_assert_eq!(next.total(), y.total());
    next
}

/// Draws `j_1, ..., j_N` for a TASEP step from the time-`t` gaps.
pub fn tasep_draws(x: &ParticleState, bank: &SamplerBank, t: usize, stream: &mut RngStream) -> Vec<usize> {
    (1..=x.len())
        .map(|n| bank.get(n, t).sample(x.support(n), stream))
        .collect()
}

pub fn apply_tasep_draws(x: &ParticleState, draws: &[usize]) -> Result<ParticleState> {
    if draws.len() != x.len() {
        return Err(Error::Domain(format!("{} draws for {} particles", draws.len(), x.len())));
    }
    for n in 2..=x.len() {
        if let JumpSupport::Finite(m) = x.support(n) {
            if draws[n - 1] > m {
                return Err(Error::Range { j: draws[n - 1], m });
            }
        }
    }
    let next: Vec<i64> = x.x.iter().zip(draws).map(|(&xi, &j)| xi + j as i64).collect();
    Ok(ParticleState { x: next })
}

/// One step of the TASEP.
pub fn tasep_step(x: &ParticleState, bank: &SamplerBank, t: usize, stream: &mut RngStream) -> ParticleState {
    let draws = tasep_draws(x, bank, t, stream);
    let next = apply_tasep_draws(x, &draws).expect("draws respect the support");
    debug_assert!(next.x.windows(2).all(|w| w[0] > w[1]));
    next
}

/// In-place TASEP step; particles are updated from the last one forward so
/// each draw still sees the time-`t` gap.
pub fn tasep_step_in_place(x: &mut [i64], bank: &SamplerBank, t: usize, stream: &mut RngStream) {
    // Draw for particle 1 first to keep the stream order of `tasep_draws`.
    let mut prev_old = i64::MAX;
    for n in 1..=x.len() {
        let cur = x[n - 1];
        let support = if n == 1 {
            JumpSupport::Infinite
        } else {
            JumpSupport::Finite((prev_old - cur - 1) as usize)
        };
        let j = bank.get(n, t).sample(support, stream);
        prev_old = cur;
        x[n - 1] = cur + j as i64;
    }
    debug_assert!(x.windows(2).all(|w| w[0] > w[1]));
}

/// Gaps `g_i = x_{i-1} - x_i`; `g_1` is infinite and reported as `None`.
pub fn gaps(x: &ParticleState) -> Vec<Option<usize>> {
    let mut g = Vec::with_capacity(x.len());
    if !x.is_empty() {
        g.push(None);
    }
    for w in x.x.windows(2) {
        g.push(Some((w[0] - w[1]) as usize));
    }
    g
}

/// Gap dynamics induced by TASEP draws: `g_i -> g_i + j_{i-1} - j_i`.
pub fn gap_boson_update(g: &[Option<usize>], draws: &[usize]) -> Vec<Option<usize>> {
    g.iter()
        .enumerate()
        .map(|(idx, gi)| gi.map(|v| (v as i64 + draws[idx - 1] as i64 - draws[idx] as i64) as usize))
        .collect()
}

/// `C_s = #{n : x_n + n >= s}`, so `{x_n + n >= s} = {C_s >= n}`.
pub fn current_count(x: &ParticleState, s: i64) -> usize {
    x.x.iter()
        .enumerate()
        .filter(|(i, &xi)| xi + *i as i64 + 1 >= s)
        .count()
}

/// `prod_i q^{x_{n_i} + n_i}` with the convention `x_0 + 0 = +inf`, so any
/// `n_i = 0` gives 0.
pub fn q_moment_observable(x: &[i64], nvec: &[usize], q: f64) -> f64 {
    let mut e = 0i64;
    for &n in nvec {
        if n == 0 {
            return 0.0;
        }
        e += x[n - 1] + n as i64;
    }
    q.powi(e as i32)
}

/// Ring of `L` sites; site `i` sends to `i - 1 mod L`, all in parallel.
pub fn ring_boson_step(y: &mut [usize], sampler: &JumpSampler, stream: &mut RngStream, scratch: &mut Vec<usize>) {
    let l = y.len();
    scratch.clear();
    scratch.extend(y.iter().map(|&yi| sampler.sample(JumpSupport::Finite(yi), stream)));
    #[cfg(debug_assertions)]
    let before: usize = y.iter().sum();
    for i in 0..l {
        let s = scratch[i];
        y[i] -= s;
        y[(i + l - 1) % l] += s;
    }
    #[cfg(debug_assertions)]
    debug_assert_eq!(before, y.iter().sum::<usize>());
}

/// Product-measure marginal
/// `P(y = n) = rho^n (nu;q)_n / (q;q)_n * (rho;q)_inf / (rho nu;q)_inf`.
pub fn stationary_pmf(rho: f64, n: usize, p: &ModelParams<f64>) -> Result<f64> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::Domain(format!("rho = {rho} must lie in [0, 1)")));
    }
    let norm = qpoch_inf_real(rho, p.q, PRODUCT_TOL)? / qpoch_inf_real(rho * p.nu, p.q, PRODUCT_TOL)?;
    Ok(rho.powi(n as i32) * qpoch(&p.nu, &p.q, n) / qpoch(&p.q, &p.q, n) * norm)
}

/// Stationary pmf on `{0, ..., n_max}` with the tail mass appended last.
pub fn stationary_table(rho: f64, p: &ModelParams<f64>, tail: f64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut mass = 0.0;
    for n in 0..100_000 {
        let v = stationary_pmf(rho, n, p)?;
        out.push(v);
        mass += v;
        if 1.0 - mass < tail {
            break;
        }
    }
    out.push((1.0 - mass).max(0.0));
    Ok(out)
}

/// Mean and standard error of a Monte Carlo estimate.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub replicas: u64,
}

impl McEstimate {
    /// `|mean - target|` in units of the standard error. A deterministic
    /// observable (zero standard error) scores 0 when it matches the target to
    /// rounding and infinity otherwise.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.mean - target).abs();
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d <= 1e-12 * target.abs().max(1.0) {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

const BLOCK: u64 = 4096;

/// Runs `f` once per replica with stream `(master_seed, replica)` and
/// reduces `dim` observables. Blocks of replicas are summed in a fixed order,
/// so the result is bitwise independent of the thread count.
pub fn mc_estimate_vec<F>(replicas: u64, master_seed: u64, dim: usize, f: F) -> Result<Vec<McEstimate>>
where
    F: Fn(&mut RngStream, &mut [f64]) + Sync,
{
    if replicas < 2 {
        return Err(Error::Domain("at least two replicas are needed".into()));
    }
    let blocks = replicas.div_ceil(BLOCK);
    let partial: Vec<Vec<(f64, f64)>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![(0.0, 0.0); dim];
            let mut out = vec![0.0; dim];
            for r in b * BLOCK..((b + 1) * BLOCK).min(replicas) {
                let mut stream = RngStream::new(master_seed, r);
                out.iter_mut().for_each(|v| *v = 0.0);
                f(&mut stream, &mut out);
                for (a, &v) in acc.iter_mut().zip(&out) {
                    a.0 += v;
                    a.1 += v * v;
                }
            }
            acc
        })
        .collect();
    let n = replicas as f64;
    Ok((0..dim)
        .map(|d| {
            let (s, s2) = partial.iter().fold((0.0, 0.0), |acc, blk| (acc.0 + blk[d].0, acc.1 + blk[d].1));
            let mean = s / n;
            let var = ((s2 - n * mean * mean) / (n - 1.0)).max(0.0);
            McEstimate {
                mean,
                stderr: (var / n).sqrt(),
                replicas,
            }
        })
        .collect())
}

/// Scalar version of [`mc_estimate_vec`].
pub fn mc_estimate<F>(replicas: u64, master_seed: u64, f: F) -> Result<McEstimate>
where
    F: Fn(&mut RngStream) -> f64 + Sync,
{
    Ok(mc_estimate_vec(replicas, master_seed, 1, |s, out| out[0] = f(s))?[0])
}

/// Runs the TASEP from step data for `t` steps and evaluates `obs` at the end.
pub fn tasep_mc<F>(
    n_particles: usize,
    t: usize,
    sched: &ParamSchedule<f64>,
    replicas: u64,
    master_seed: u64,
    obs: F,
) -> Result<McEstimate>
where
    F: Fn(&[i64]) -> f64 + Sync,
{
    sched.validate(n_particles, t)?;
    let bank = SamplerBank::new(sched, n_particles, t)?;
    let est = mc_estimate(replicas, master_seed, |stream| {
        let mut x = ParticleState::step(n_particles).x;
        for s in 0..t {
            tasep_step_in_place(&mut x, &bank, s, stream);
        }
        obs(&x)
    })?;
    if bank.cap_events() > 0 {
        log::warn!("{} draws hit the m = inf table cap", bank.cap_events());
    }
    Ok(est)
}

/// Monte Carlo estimate of `E[prod_i q^{x_{n_i}(t) + n_i}]` from step data.
pub fn tasep_qmoment_mc(
    nvec: &WeylIndex,
    t: usize,
    sched: &ParamSchedule<f64>,
    replicas: u64,
    master_seed: u64,
) -> Result<McEstimate> {
    let q = sched.base.q;
    let n_particles = nvec.max().max(1);
    tasep_mc(n_particles, t, sched, replicas, master_seed, |x| {
        q_moment_observable(x, &nvec.n, q)
    })
}

/// Histogram of an integer observable, with per-bin binomial standard errors.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
    /// Samples at or above `counts.len()`.
    pub overflow: u64,
    pub replicas: u64,
}

impl Histogram {
    pub fn frequency(&self, b: usize) -> f64 {
        self.counts[b] as f64 / self.replicas as f64
    }

    pub fn stderr(&self, b: usize) -> f64 {
        let p = self.frequency(b);
        (p * (1.0 - p) / self.replicas as f64).sqrt()
    }
}

/// Deterministic histogram over replicas, same stream layout as [`mc_estimate_vec`].
pub fn mc_histogram<F>(replicas: u64, master_seed: u64, bins: usize, f: F) -> Histogram
where
    F: Fn(&mut RngStream) -> usize + Sync,
{
    let blocks = replicas.div_ceil(BLOCK);
    let partial: Vec<Vec<u64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut c = vec![0u64; bins + 1];
            for r in b * BLOCK..((b + 1) * BLOCK).min(replicas) {
                let mut stream = RngStream::new(master_seed, r);
                c[f(&mut stream).min(bins)] += 1;
            }
            c
        })
        .collect();
    let mut counts = vec![0u64; bins + 1];
    for blk in &partial {
        for (a, b) in counts.iter_mut().zip(blk) {
            *a += b;
        }
    }
    let overflow = counts.pop().unwrap_or(0);
    Histogram {
        counts,
        overflow,
        replicas,
    }
}

/// Histogram of `x_n(t) + n` under step initial data.
pub fn tasep_position_histogram(
    n: usize,
    t: usize,
    sched: &ParamSchedule<f64>,
    replicas: u64,
    master_seed: u64,
    bins: usize,
) -> Result<Histogram> {
    sched.validate(n, t)?;
    let bank = SamplerBank::new(sched, n, t)?;
    Ok(mc_histogram(replicas, master_seed, bins, |stream| {
        let mut x = ParticleState::step(n).x;
        for s in 0..t {
            tasep_step_in_place(&mut x, &bank, s, stream);
        }
        (x[n - 1] + n as i64) as usize
    }))
}

/// One bin of the ring stationarity experiment.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct StationarityBin {
    /// Occupation value; the last bin collects everything at or above it.
    pub n: usize,
    pub expected: f64,
    pub observed: f64,
    /// Larger of the empirical standard error and the product-measure one.
    pub stderr: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct StationarityReport {
    pub sites: usize,
    pub steps: usize,
    pub replicas: u64,
    pub rho: f64,
    pub bins: Vec<StationarityBin>,
    pub max_z: f64,
}

impl StationarityReport {
    pub fn within(&self, sigmas: f64) -> bool {
        self.max_z <= sigmas
    }
}

/// Starts a ring of `sites` sites from i.i.d. product-measure marginals, runs
/// `steps` parallel updates, and compares the one-site marginal (averaged
/// over sites within each replica) against the initial pmf.
pub fn ring_stationarity(
    sites: usize,
    rho: f64,
    steps: usize,
    replicas: u64,
    master_seed: u64,
    p: &ModelParams<f64>,
) -> Result<StationarityReport> {
    if sites < 2 {
        return Err(Error::Domain("a ring needs at least two sites".into()));
    }
    let table = stationary_table(rho, p, 1e-9)?;
    let nbins = table.len();
    let mut cdf = Vec::with_capacity(nbins);
    let mut acc = 0.0;
    for v in &table[..nbins - 1] {
        acc += v;
        cdf.push(acc);
    }
    let sampler = JumpSampler::new(p.clone())?;
    let est = mc_estimate_vec(replicas, master_seed, nbins, |stream, out| {
        let mut y: Vec<usize> = (0..sites)
            .map(|_| {
                let u = stream.uniform();
                cdf.iter().position(|&c| u < c).unwrap_or(nbins - 1)
            })
            .collect();
        let mut scratch = Vec::with_capacity(sites);
        for _ in 0..steps {
            ring_boson_step(&mut y, &sampler, stream, &mut scratch);
        }
        let w = 1.0 / sites as f64;
        for &yi in &y {
            out[yi.min(nbins - 1)] += w;
        }
    })?;
    let bins: Vec<StationarityBin> = est
        .iter()
        .enumerate()
        .map(|(n, e)| {
            // Under the product measure the site fraction has variance p(1-p)/L.
            let p = table[n];
            let model = (p * (1.0 - p) / (sites as f64 * replicas as f64)).sqrt();
            let stderr = e.stderr.max(model);
            let z = McEstimate { stderr, ..*e }.z_score(p);
            StationarityBin {
                n,
                expected: p,
                observed: e.mean,
                stderr,
                z,
            }
        })
        .collect();
    let max_z = bins.iter().map(|b| b.z).fold(0.0, f64::max);
    Ok(StationarityReport {
        sites,
        steps,
        replicas,
        rho,
        bins,
        max_z,
    })
}
