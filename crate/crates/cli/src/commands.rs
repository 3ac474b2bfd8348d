use clap::ValueEnum;
use num_complex::Complex64;
use qmunu::chains::{
    boson_step, mc_estimate, ring_stationarity, tasep_position_histogram, tasep_qmoment_mc, SamplerBank, WeylIndex,
};
use qmunu::contour::{
    check_boundary, check_free_evolution, plan_contours_auto, qmoment_contour, qmoment_contour_batch, Circle,
    ContourSpec, IntegrandParams, MomentRequest, DEFAULT_NODES, DEFAULT_TOL,
};
use qmunu::exact::{qmoment_oracle, qmoments_equal, verify_binexp, verify_intertwining, verify_intertwining_truncated};
use qmunu::fredholm::{auto_support_cap, det_cauchy, det_mb, invert_distribution, GFunction, KernelConfig};
use qmunu::qdist::{duality_sum, duality_sum_infinite, phi_pmf, phi_pmf_geometric, phi_pmf_infinite, phi_row};
use qmunu::qseries::{default_identity_cases, identity_suite, phi21_terminating, qgauss_terminating_rhs, qpoch};
use qmunu::{parse_rational, Rational, Scalar};

use crate::config::{Kernel, Options, Process};
use crate::report::{col, Plot, Report, Series};
use crate::CliError;

type Res<T> = Result<T, CliError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Qseries,
    Dist,
    Intertwine,
    Binexp,
    /// Free-evolution and boundary identities of the contour formula.
    Evolution,
    /// Contour integrals against the exact dual-chain oracle.
    Pipeline,
    All,
}

struct Check {
    suite: &'static str,
    name: String,
    residual: f64,
    tol: f64,
    pass: bool,
    detail: String,
}

impl Check {
    fn float(suite: &'static str, name: impl Into<String>, residual: f64, tol: f64, detail: String) -> Self {
        Self {
            suite,
            name: name.into(),
            residual,
            tol,
            pass: residual <= tol,
            detail,
        }
    }

    fn exact(suite: &'static str, name: impl Into<String>, residual: f64, detail: String) -> Self {
        Self {
            suite,
            name: name.into(),
            residual,
            tol: 0.0,
            pass: residual == 0.0,
            detail,
        }
    }
}

fn rat(s: &str) -> Rational {
    parse_rational(s).expect("literal")
}

fn lossy(v: &Rational) -> f64 {
    v.to_f64_lossy()
}

/// Exact `sum v == 1` without reducing intermediate fractions.
fn sums_to_one(values: &[Rational]) -> bool {
    let mut level: Vec<_> = values.iter().map(|v| (v.numer().clone(), v.denom().clone())).collect();
    if level.is_empty() {
        return false;
    }
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [(a, b), (c, d)] => (a * d + c * b, b * d),
                [x] => x.clone(),
                _ => unreachable!(),
            })
            .collect();
    }
    level[0].0 == level[0].1
}

fn suite_qseries(o: &Options) -> Res<Vec<Check>> {
    const S: &str = "qseries";
    let q = o.exact_params()?.q;
    let qf = lossy(&q);
    let rep = identity_suite(qf, &default_identity_cases());
    let mut out = Vec::new();
    for (name, stats) in &rep.identities {
        let default = if name.starts_with("q-gauss") { 1e-10 } else { 1e-12 };
        out.push(Check::float(
            S,
            format!("{name} (relative)"),
            stats.max_rel,
            o.tol.unwrap_or(default),
            format!("{} cases", stats.evaluated),
        ));
    }
    if !rep.rejected.is_empty() {
        out.push(Check::float(
            S,
            "preconditions",
            0.0,
            0.0,
            format!("{} cases skipped: {}", rep.rejected.len(), rep.rejected[0].1),
        ));
    }

    let mut bad = 0usize;
    let mut count = 0usize;
    for a in ["2/5", "-2/3", "5/4", "1"] {
        let a = rat(a);
        for n in 0..=10 {
            let lhs = qpoch(&a, &q, n + 1);
            let rhs = qpoch(&a, &q, n) * (Rational::from_int(1) - a.clone() * q.upow(n));
            bad += usize::from(lhs != rhs);
            count += 1;
        }
    }
    out.push(Check::exact(S, "recurrence (rational)", bad as f64, format!("{count} cases, failures counted")));

    let (b, c) = (rat("3/5"), rat("1/7"));
    let mut bad = 0usize;
    for n in 0..=8 {
        let lhs = phi21_terminating(n, &b, &c, &q, &q)?;
        let rhs = qgauss_terminating_rhs(n, &b, &c, &q)?;
        bad += usize::from(lhs != rhs);
    }
    out.push(Check::exact(
        S,
        "terminating q-Gauss (rational)",
        bad as f64,
        "n <= 8, b = 3/5, c = 1/7, failures counted".into(),
    ));
    Ok(out)
}

fn suite_dist(o: &Options) -> Res<Vec<Check>> {
    const S: &str = "dist";
    let p = o.exact_params()?;
    let pf = p.to_float();
    let max_m = o.max_m.unwrap_or(64);
    let max_y = o.max_y.unwrap_or(12);
    let mut out = Vec::new();

    let mut exact_ok = true;
    let mut min_value = Rational::from_int(0);
    let mut float_err: f64 = 0.0;
    for m in 0..=max_m {
        let row = phi_row(m, &p);
        exact_ok &= sums_to_one(&row);
        for v in &row {
            if *v < min_value {
                min_value = v.clone();
            }
        }
        float_err = float_err.max((phi_row(m, &pf).iter().sum::<f64>() - 1.0).abs());
    }
    out.push(Check::exact(
        S,
        "normalization (rational)",
        if exact_ok { 0.0 } else { float_err.max(f64::MIN_POSITIVE) },
        format!("m <= {max_m}"),
    ));
    out.push(Check::float(S, "normalization (float)", float_err, o.tol.unwrap_or(1e-12), format!("m <= {max_m}")));
    out.push(Check::exact(S, "nonnegativity", (-lossy(&min_value)).max(0.0), format!("m <= {max_m}")));

    let mut sym: f64 = 0.0;
    for m in 0..=max_y {
        for y in 0..=max_y {
            sym = sym.max(lossy(&(duality_sum(m, y, &p) - duality_sum(y, m, &p))).abs());
        }
    }
    out.push(Check::exact(S, "duality symmetry (rational)", sym, format!("m, y <= {max_y}")));

    let mut inf_err: f64 = 0.0;
    for y in 0..=max_y {
        let s = duality_sum_infinite(y, &pf, 1e-12)?;
        let closed = qpoch(&pf.mu, &pf.q, y) / qpoch(&pf.nu, &pf.q, y);
        inf_err = inf_err.max((s.value - closed).abs() + s.tail_bound);
    }
    out.push(Check::float(
        S,
        "infinite duality",
        inf_err,
        o.tol.unwrap_or(1e-10),
        format!("y <= {max_y}, error plus certified tail"),
    ));

    if pf.q <= 0.7 && pf.mu <= 0.7 {
        let mut err: f64 = 0.0;
        for j in 0..=20 {
            err = err.max((phi_pmf(j, 200, &pf)? - phi_pmf_infinite(j, &pf)?).abs());
        }
        out.push(Check::float(S, "m = 200 vs m = inf", err, o.tol.unwrap_or(1e-10), "j <= 20".into()));
    }
    if pf.nu == 0.0 {
        let mut err: f64 = 0.0;
        for m in 0..=max_m {
            for j in 0..=m {
                err = err.max((phi_pmf(j, m, &pf)? - phi_pmf_geometric(j, m, &pf.q, &pf.mu)?).abs());
            }
        }
        out.push(Check::float(S, "nu = 0 reduction", err, o.tol.unwrap_or(1e-14), format!("m <= {max_m}")));
    }
    Ok(out)
}

fn suite_intertwine(o: &Options) -> Res<Vec<Check>> {
    const S: &str = "intertwine";
    let sched = o.exact_schedule()?;
    let fsched = sched.to_f64();
    let (n_max, k, window, steps) = (o.n.unwrap_or(3), o.k.unwrap_or(4), o.window.unwrap_or(12), o.t.unwrap_or(1));
    let tol = o.tol.unwrap_or(1e-10);
    let mut exact: f64 = 0.0;
    let mut float: f64 = 0.0;
    let mut tail: f64 = 0.0;
    let mut pairs = 0;
    for n in 1..=n_max {
        for t in 0..steps.max(1) {
            let rep = verify_intertwining(n, k, window, &sched, t)?;
            exact = exact.max(lossy(&rep.max_residual));
            pairs += rep.pairs;
            let rep = verify_intertwining_truncated(n, k, window, &fsched, t, tol)?;
            float = float.max(rep.max_residual);
            tail = tail.max(rep.max_tail_bound);
        }
    }
    let detail = format!("N <= {n_max}, k <= {k}, window {window}, {pairs} pairs");
    Ok(vec![
        Check::exact(S, "closed form (rational)", exact, detail.clone()),
        Check::float(S, "truncated sum (float)", float, tol, format!("{detail}, max tail bound {tail:e}")),
    ])
}

fn suite_binexp(o: &Options) -> Res<Vec<Check>> {
    let p = o.exact_params()?;
    (0..=o.max_m.unwrap_or(8))
        .map(|m| {
            let rep = verify_binexp(m, &p)?;
            Ok(Check::exact(
                "binexp",
                format!("m = {m}"),
                if rep.member { 0.0 } else { 1.0 },
                format!(
                    "{} difference terms, rank {} of {} generators",
                    rep.difference_terms, rep.rank, rep.generators
                ),
            ))
        })
        .collect()
}

fn suite_evolution(o: &Options) -> Res<Vec<Check>> {
    const S: &str = "evolution";
    let p = o.float_params()?;
    let sched = o.float_mu_schedule()?;
    let tmax = o.t.unwrap_or(3);
    let tol = o.tol.unwrap_or(1e-8);
    let mut free: f64 = 0.0;
    let mut quad: f64 = 0.0;
    let mut cases = 0;
    for nvec in [&[1][..], &[2], &[3], &[1, 1], &[2, 1], &[2, 2], &[3, 1], &[3, 2]] {
        for t in 0..tmax {
            let r = check_free_evolution(nvec, t, &p, sched.as_deref(), None, DEFAULT_TOL)?;
            free = free.max(r.residual);
            quad = quad.max(r.quadrature_change);
            cases += 1;
        }
    }
    let mut boundary: f64 = 0.0;
    let mut bcases = 0;
    for nvec in [[1, 1], [2, 2], [3, 3]] {
        for t in 0..=tmax {
            let r = check_boundary(&nvec, 0, t, &p, sched.as_deref(), None, DEFAULT_TOL)?;
            boundary = boundary.max(r.residual);
            quad = quad.max(r.quadrature_change);
            bcases += 1;
        }
    }
    Ok(vec![
        Check::float(S, "free evolution", free, tol, format!("{cases} cases, k <= 2")),
        Check::float(
            S,
            "boundary",
            boundary,
            tol,
            format!("{bcases} cases, max quadrature change {quad:e}"),
        ),
    ])
}

fn weakly_decreasing(k: usize, max: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 1..=max {
        for mut rest in weakly_decreasing(k - 1, first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

fn suite_pipeline(o: &Options) -> Res<Vec<Check>> {
    let p = o.float_params()?;
    let mu_sched = o.float_mu_schedule()?;
    let sched = o.exact_schedule()?;
    let (k_max, n_max, tmax) = (o.k.unwrap_or(2), o.n.unwrap_or(3), o.t.unwrap_or(3));
    let tol = o.tol.unwrap_or(1e-8);
    let ip = IntegrandParams::new(&p, mu_sched.as_deref())?;
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for k in 1..=k_max {
        let spec = plan_contours_auto(k, p.q, p.nu)?;
        let nvecs = weakly_decreasing(k, n_max);
        let reqs: Vec<MomentRequest> = nvecs
            .iter()
            .flat_map(|n| {
                (0..=tmax).map(move |t| MomentRequest {
                    nvec: n.iter().map(|&v| v as i64).collect(),
                    t,
                })
            })
            .collect();
        let values = qmoment_contour_batch(&reqs, &ip, &spec, DEFAULT_TOL)?;
        for (req, v) in reqs.iter().zip(values) {
            let w = WeylIndex::new(req.nvec.iter().map(|&x| x as usize).collect())?;
            let oracle = lossy(&qmoment_oracle(&w, req.t, &sched)?);
            worst = worst.max((v.value.re - oracle).abs() / oracle.abs());
            cases += 1;
        }
    }
    Ok(vec![Check::float(
        "pipeline",
        "contour vs exact oracle (relative)",
        worst,
        tol,
        format!("{cases} cases, k <= {k_max}, n_i <= {n_max}, t <= {tmax}"),
    )])
}

pub fn verify(suite: Suite, o: &Options) -> Res<Report> {
    let mut checks = Vec::new();
    let all = suite == Suite::All;
    if all || suite == Suite::Qseries {
        checks.extend(suite_qseries(o)?);
    }
    if all || suite == Suite::Dist {
        checks.extend(suite_dist(o)?);
    }
    if all || suite == Suite::Intertwine {
        checks.extend(suite_intertwine(o)?);
    }
    if all || suite == Suite::Binexp {
        checks.extend(suite_binexp(o)?);
    }
    if all || suite == Suite::Evolution {
        checks.extend(suite_evolution(o)?);
    }
    if all || suite == Suite::Pipeline {
        checks.extend(suite_pipeline(o)?);
    }
    let mut rep = Report::new(vec![
        col("suite", "identity suite"),
        col("check", "identity or comparison"),
        col("residual", "largest residual over the cases"),
        col("tolerance", "pass threshold (0 means exact equality)"),
        col("pass", "residual within tolerance"),
        col("detail", "case description"),
    ]);
    for c in &checks {
        rep.push(vec![
            c.suite.into(),
            c.name.clone().into(),
            c.residual.into(),
            c.tol.into(),
            c.pass.into(),
            c.detail.clone().into(),
        ]);
    }
    rep.pass = checks.iter().all(|c| c.pass);
    rep.note("checks", checks.len());
    rep.note("failed", checks.iter().filter(|c| !c.pass).count());
    rep.note(
        "max_residual",
        checks.iter().filter(|c| c.tol > 0.0).map(|c| c.residual).fold(0.0, f64::max),
    );
    rep.plot = Some(Plot {
        title: "verification residuals".into(),
        x_label: "check".into(),
        y_label: "residual".into(),
        x: (0..checks.len()).map(|i| i as f64).collect(),
        series: vec![
            Series {
                name: "residual".into(),
                y: checks.iter().map(|c| c.residual).collect(),
                err: None,
            },
            Series {
                name: "tolerance".into(),
                y: checks.iter().map(|c| c.tol).collect(),
                err: None,
            },
        ],
        log_y: true,
    });
    Ok(rep)
}

/// Moment index from `--n-vec` or `--observable` (`q-moment:3,2,1` or `3,2,1`).
fn moment_index(o: &Options) -> Res<Vec<i64>> {
    if let Some(v) = &o.n_vec {
        return Ok(v.clone());
    }
    let obs = Options::require(&o.observable, "n-vec")?;
    let list = obs.strip_prefix("q-moment:").unwrap_or(&obs);
    list.split(',')
        .map(|s| s.trim().parse::<i64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|_| CliError::usage("observable", format!("expected q-moment:n1,n2,..., got {obs:?}")))
}

fn weyl(nvec: &[i64]) -> Res<WeylIndex> {
    if nvec.iter().any(|&v| v < 0) {
        return Err(CliError::usage("observable", "entries must be nonnegative"));
    }
    WeylIndex::new(nvec.iter().map(|&v| v as usize).collect()).map_err(|e| CliError::usage("observable", e.to_string()))
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(";")
}

fn homogeneous_only(o: &Options, what: &str) -> Res<()> {
    if o.a.is_some() || o.mu_schedule.is_some() {
        return Err(CliError::usage("mu-schedule", format!("{what} takes constant parameters only")));
    }
    Ok(())
}

pub fn simulate(o: &Options) -> Res<Report> {
    let process = Options::require(&o.process, "process")?;
    let seed = o.seed.unwrap_or(1);
    let replicas = o.replicas.unwrap_or(100_000);
    if process == Process::Ring {
        homogeneous_only(o, "the ring")?;
        let p = o.float_params()?;
        let sites = o.sites.unwrap_or(8);
        let steps = o.t.unwrap_or(100);
        let rho = o.density.unwrap_or(0.5);
        let r = ring_stationarity(sites, rho, steps, replicas, seed, &p)?;
        let mut rep = Report::new(vec![
            col("n", "occupation value; the last row collects larger values"),
            col("frequency", "fraction of sites with this occupation"),
            col("stderr", "standard error of the frequency"),
        ]);
        for b in &r.bins {
            rep.push(vec![b.n.into(), b.observed.into(), b.stderr.into()]);
        }
        rep.note("sites", sites);
        rep.note("steps", steps);
        rep.note("replicas", replicas);
        rep.plot = Some(Plot {
            title: format!("ring of {sites} sites after {steps} steps"),
            x_label: "occupation".into(),
            y_label: "frequency".into(),
            x: r.bins.iter().map(|b| b.n as f64).collect(),
            series: vec![Series {
                name: "observed".into(),
                y: r.bins.iter().map(|b| b.observed).collect(),
                err: Some(r.bins.iter().map(|b| b.stderr).collect()),
            }],
            log_y: false,
        });
        return Ok(rep);
    }

    let sched = o.exact_schedule()?.to_f64();
    let t = Options::require(&o.t, "t")?;
    if o.observable.as_deref() == Some("position") {
        if process != Process::Tasep {
            return Err(CliError::usage("observable", "position is a TASEP observable"));
        }
        let n = Options::require(&o.n, "n")?;
        let bins = 64;
        let h = tasep_position_histogram(n, t, &sched, replicas, seed, bins)?;
        let mut rep = Report::new(vec![
            col("s", "value of x_n(t) + n"),
            col("frequency", "empirical probability"),
            col("stderr", "binomial standard error"),
        ]);
        for s in 0..bins {
            rep.push(vec![s.into(), h.frequency(s).into(), h.stderr(s).into()]);
        }
        rep.note("overflow", h.overflow);
        rep.note("replicas", replicas);
        rep.plot = Some(Plot {
            title: format!("x_{n}({t}) + {n}"),
            x_label: "s".into(),
            y_label: "frequency".into(),
            x: (0..bins).map(|s| s as f64).collect(),
            series: vec![Series {
                name: "empirical".into(),
                y: (0..bins).map(|s| h.frequency(s)).collect(),
                err: Some((0..bins).map(|s| h.stderr(s)).collect()),
            }],
            log_y: false,
        });
        return Ok(rep);
    }

    let nvec = moment_index(o)?;
    let w = weyl(&nvec)?;
    let est = match process {
        Process::Tasep => tasep_qmoment_mc(&w, t, &sched, replicas, seed)?,
        Process::Boson => {
            // Duality: the q-moment equals the probability that the Boson chain
            // started from the occupation vector of n has not reached site 0.
            let n_sites = w.max().max(1);
            let start = w.to_occupation(n_sites)?;
            sched.validate(n_sites, t)?;
            let bank = SamplerBank::new(&sched, n_sites, t)?;
            mc_estimate(replicas, seed, |stream| {
                let mut y = start.clone();
                for s in (0..t).rev() {
                    y = boson_step(&y, &bank, s, stream);
                }
                f64::from(u8::from(y.y[0] == 0))
            })?
        }
        Process::Ring => unreachable!(),
    };
    let mut rep = Report::new(vec![
        col("observable", "moment index n_1;n_2;..."),
        col("t", "time"),
        col("mean", "Monte Carlo estimate of E[prod_i q^(x_{n_i}(t) + n_i)]"),
        col("stderr", "standard error"),
        col("replicas", "independent replicas"),
    ]);
    rep.push(vec![join(&nvec).into(), t.into(), est.mean.into(), est.stderr.into(), replicas.into()]);
    Ok(rep)
}

pub fn exact(o: &Options) -> Res<Report> {
    let sched = o.exact_schedule()?;
    let t = Options::require(&o.t, "t")?;
    let mut rep = Report::new(vec![
        col("observable", "moment index n_1;n_2;..."),
        col("t", "time"),
        col("value", "exact rational value"),
        col("value_f64", "value as a double"),
    ]);
    if o.observable.is_some() || o.n_vec.is_some() {
        let nvec = moment_index(o)?;
        let v = qmoment_oracle(&weyl(&nvec)?, t, &sched)?;
        rep.push(vec![join(&nvec).into(), t.into(), v.to_string().into(), lossy(&v).into()]);
        return Ok(rep);
    }
    let n = Options::require(&o.n, "n")?;
    let k = Options::require(&o.k, "k")?;
    let values = qmoments_equal(n, k, t, &sched)?;
    for (j, v) in values.iter().enumerate() {
        rep.push(vec![join(&vec![n; j]).into(), t.into(), v.to_string().into(), lossy(v).into()]);
    }
    rep.plot = Some(Plot {
        title: format!("E[q^(k (x_{n}({t}) + {n}))]"),
        x_label: "k".into(),
        y_label: "moment".into(),
        x: (0..values.len()).map(|j| j as f64).collect(),
        series: vec![Series {
            name: "exact".into(),
            y: values.iter().map(lossy).collect(),
            err: None,
        }],
        log_y: true,
    });
    Ok(rep)
}

pub fn moments(o: &Options) -> Res<Report> {
    let p = o.float_params()?;
    let sched = o.float_mu_schedule()?;
    let nvec = moment_index(o)?;
    let t = Options::require(&o.t, "t")?;
    let tol = o.tol.unwrap_or(DEFAULT_TOL);
    let spec = match &o.radii {
        Some(radii) => {
            if radii.len() != nvec.len() {
                return Err(CliError::usage("radii", format!("need {} radii, got {}", nvec.len(), radii.len())));
            }
            let spec = ContourSpec {
                circles: radii
                    .iter()
                    .map(|&radius| Circle {
                        center: 1.0,
                        radius,
                        nodes: DEFAULT_NODES,
                    })
                    .collect(),
                delta: 0.0,
            };
            spec.validate(p.q, p.nu).map_err(|e| CliError::usage("radii", e.to_string()))?;
            Some(spec)
        }
        None => None,
    };
    let v = qmoment_contour(&nvec, t, &p, sched.as_deref(), spec.as_ref(), tol)?;
    let mut rep = Report::new(vec![
        col("n_vec", "moment index n_1;n_2;..."),
        col("t", "time"),
        col("value", "real part of the nested contour integral"),
        col("imag_residual", "imaginary part (zero in exact arithmetic)"),
        col("change", "|I_M - I_(M/2)| at the accepted node counts"),
        col("nodes", "trapezoid nodes per circle, outermost first"),
        col("doublings", "node doublings needed to converge"),
    ]);
    rep.push(vec![
        join(&nvec).into(),
        t.into(),
        v.value.re.into(),
        v.value.im.into(),
        v.change.into(),
        join(&v.nodes).into(),
        v.doublings.into(),
    ]);
    rep.pass = v.value.im.abs() <= tol && v.change <= tol;
    Ok(rep)
}

pub fn fredholm(o: &Options) -> Res<Report> {
    let p = o.float_params()?;
    let sched = o.float_mu_schedule()?;
    let zeta = Complex64::new(Options::require(&o.zeta_re, "zeta-re")?, o.zeta_im.unwrap_or(0.0));
    let n = Options::require(&o.n, "n")?;
    let t = Options::require(&o.t, "t")?;
    let kind = o.kernel.unwrap_or(Kernel::Mb);
    let mut cfg = match kind {
        Kernel::Mb => KernelConfig::mellin_barnes(&p)?,
        Kernel::Cauchy => KernelConfig::cauchy(&p)?,
    };
    if let Some(tol) = o.tol {
        cfg.tol = tol;
    }
    let g = GFunction::new(n, t, &p, sched.as_deref())?;
    let v = match kind {
        Kernel::Mb => det_mb(zeta, &g, &cfg)?,
        Kernel::Cauchy => det_cauchy(zeta, &g, &cfg)?,
    };
    let mut rep = Report::new(vec![
        col("zeta_re", "real part of zeta"),
        col("zeta_im", "imaginary part of zeta"),
        col("det_re", "real part of the Fredholm determinant"),
        col("det_im", "imaginary part of the Fredholm determinant"),
        col("change", "determinant change at the last node doubling"),
        col("nodes", "Nystrom nodes on the w-circle"),
        col("s_nodes", "nodes on the s-line (0 for the Cauchy kernel)"),
    ]);
    rep.push(vec![
        zeta.re.into(),
        zeta.im.into(),
        v.value.re.into(),
        v.value.im.into(),
        v.change.into(),
        v.nodes.into(),
        v.s_nodes.into(),
    ]);
    rep.pass = v.change <= cfg.tol;
    rep.note("changes", &v.changes);
    rep.note("kernel", &cfg);
    Ok(rep)
}

pub fn invert(o: &Options) -> Res<Report> {
    let sched = o.exact_schedule()?;
    let fsched = sched.to_f64();
    let n = Options::require(&o.n, "n")?;
    let t = Options::require(&o.t, "t")?;
    let tol = o.tol.unwrap_or(1e-9);
    let cap = match o.support_cap {
        Some(s) => s,
        None => auto_support_cap(t, &fsched, tol)?,
    };
    let inv = invert_distribution(n, t, &sched, cap)?;
    let mut rep = Report::new(vec![
        col("s", "value of x_n(t) + n"),
        col("probability", "recovered probability"),
        col("exact", "exact rational solution of the truncated moment system"),
    ]);
    let pmf = inv.to_f64();
    for (s, (v, f)) in inv.pmf.iter().zip(&pmf).enumerate() {
        rep.push(vec![s.into(), (*f).into(), v.to_string().into()]);
    }
    rep.pass = inv.error_bound <= tol;
    rep.note("support_cap", cap);
    rep.note("tail_bound", inv.tail_bound);
    rep.note("error_bound", inv.error_bound);
    rep.note("mass_defect", inv.mass_defect());
    rep.plot = Some(Plot {
        title: format!("law of x_{n}({t}) + {n}"),
        x_label: "s".into(),
        y_label: "probability".into(),
        x: (0..pmf.len()).map(|s| s as f64).collect(),
        series: vec![Series {
            name: "inverted".into(),
            y: pmf,
            err: None,
        }],
        log_y: false,
    });
    Ok(rep)
}

pub fn stationarity(o: &Options) -> Res<Report> {
    homogeneous_only(o, "the ring")?;
    let p = o.float_params()?;
    let sites = o.sites.unwrap_or(8);
    let steps = o.t.unwrap_or(100);
    let replicas = o.replicas.unwrap_or(1_000_000);
    let rho = o.density.unwrap_or(0.5);
    let sigmas = o.tol.unwrap_or(3.0);
    let r = ring_stationarity(sites, rho, steps, replicas, o.seed.unwrap_or(1), &p)?;
    let mut rep = Report::new(vec![
        col("n", "occupation value; the last row collects larger values"),
        col("expected", "product-measure probability"),
        col("observed", "fraction of sites after the run"),
        col("stderr", "larger of the empirical and product-measure standard errors"),
        col("z", "|observed - expected| / stderr"),
    ]);
    for b in &r.bins {
        rep.push(vec![b.n.into(), b.expected.into(), b.observed.into(), b.stderr.into(), b.z.into()]);
    }
    rep.pass = r.within(sigmas);
    rep.note("max_z", r.max_z);
    rep.note("sigmas", sigmas);
    rep.note("sites", sites);
    rep.note("steps", steps);
    rep.note("replicas", replicas);
    rep.plot = Some(Plot {
        title: format!("one-site marginal, L = {sites}, T = {steps}"),
        x_label: "occupation".into(),
        y_label: "probability".into(),
        x: r.bins.iter().map(|b| b.n as f64).collect(),
        series: vec![
            Series {
                name: "product measure".into(),
                y: r.bins.iter().map(|b| b.expected).collect(),
                err: None,
            },
            Series {
                name: "observed".into(),
                y: r.bins.iter().map(|b| b.observed).collect(),
                err: Some(r.bins.iter().map(|b| b.stderr).collect()),
            },
        ],
        log_y: false,
    });
    Ok(rep)
}
