use num_complex::Complex64;
use proptest::prelude::*;
use qmunu::chains::{tasep_mc, tasep_qmoment_mc, ParamSchedule, WeylIndex};
use qmunu::contour::{plan_contours_auto, qmoment_contour, IntegrandParams, MomentRequest, DEFAULT_TOL};
use qmunu::exact::{
    boson_matrix, qmoment_oracle, triangularity_violation, BoundaryCoeffs, StateSpace,
};
use qmunu::fredholm::{det_cauchy, det_mb, laplace_series_oracle, GFunction, KernelConfig};
use qmunu::qdist::{
    duality_sum, phi_pmf, phi_pmf_geometric, phi_pmf_infinite, phi_row, ModelParams,
};
use qmunu::qseries::{identity_suite, qpoch, qpoch_inf, IdentityCase, PRODUCT_TOL};
use qmunu::Rational;

fn rational(num: i64, den: i64) -> Rational {
    Rational::new(num.into(), den.into())
}

/// Rational `(q, mu, nu)` with `0 <= nu <= mu < 1`, `0 < q < 1`.
fn exact_params() -> impl Strategy<Value = ModelParams<Rational>> {
    (1i64..20, 0i64..20, 0i64..=20).prop_map(|(q, mu, frac)| {
        let q = rational(q, 20);
        let mu = rational(mu, 20);
        let nu = mu.clone() * rational(frac, 20);
        ModelParams::new(q, mu, nu).unwrap()
    })
}

fn float_params(nu_max: f64) -> impl Strategy<Value = ModelParams<f64>> {
    (0.1f64..0.7, 0.0f64..1.0, 0.0f64..1.0).prop_map(move |(q, a, b)| {
        let nu = nu_max * a;
        let mu = nu + (0.95 - nu) * b;
        ModelParams::new(q, mu, nu).unwrap()
    })
}

fn small_complex() -> impl Strategy<Value = Complex64> {
    (0.1f64..0.9, -3.0f64..3.0).prop_map(|(r, th)| Complex64::from_polar(r, th))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn pochhammer_identities(a in small_complex(), q in 0.1f64..0.8, n in 0usize..12, k in 0usize..12) {
        let k = k.min(n);
        let cases = [
            IdentityCase::Recurrence { a, n },
            IdentityCase::InfiniteRatio { a, n },
            IdentityCase::Reflection { a, n },
            IdentityCase::ShiftedIndex { a, n, k },
        ];
        let rep = identity_suite(q, &cases);
        prop_assert!(rep.max_rel() < 1e-12, "{rep:?}");
    }

    #[test]
    fn q_gauss(a in small_complex(), b in small_complex(), q in 0.1f64..0.8, scale in 0.05f64..0.9) {
        // c chosen so |c/(ab)| = scale.
        let c = a * b * scale;
        let rep = identity_suite(q, &[IdentityCase::QGauss { a, b, c }]);
        prop_assert!(rep.max_rel() < 1e-10, "{rep:?}");
    }

    #[test]
    fn normalization_rational(p in exact_params(), m in 0usize..24) {
        let s: Rational = (0..=m).map(|j| phi_pmf(j, m, &p).unwrap()).sum();
        prop_assert_eq!(s, rational(1, 1));
        prop_assert_eq!(phi_row(m, &p), (0..=m).map(|j| phi_pmf(j, m, &p).unwrap()).collect::<Vec<_>>());
    }

    #[test]
    fn pmf_nonnegative_and_normalized(p in float_params(0.9), m in 0usize..64) {
        let row = phi_row(m, &p);
        prop_assert!(row.iter().all(|&v| v >= 0.0));
        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duality_symmetric(p in exact_params(), m in 0usize..=12, y in 0usize..=12) {
        prop_assert_eq!(duality_sum(m, y, &p), duality_sum(y, m, &p));
    }

    #[test]
    fn finite_m_approaches_infinite(q in 0.05f64..0.7, mu in 0.0f64..0.7, frac in 0.0f64..1.0, j in 0usize..10) {
        let p = ModelParams::new(q, mu, mu * frac).unwrap();
        prop_assert!((phi_pmf(j, 200, &p).unwrap() - phi_pmf_infinite(j, &p).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn nu_zero_reduction(q in 0.05f64..0.9, mu in 0.0f64..0.95, m in 0usize..30, j in 0usize..30) {
        let j = j.min(m);
        let p = ModelParams::new(q, mu, 0.0).unwrap();
        let a = phi_pmf(j, m, &p).unwrap();
        let b = phi_pmf_geometric(j, m, &q, &mu).unwrap();
        prop_assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn boundary_coefficients(p in exact_params()) {
        prop_assume!(p.nu != rational(1, 1));
        let c = BoundaryCoeffs::new(&p.q, &p.nu);
        prop_assert_eq!(c.alpha + c.beta + c.gamma, rational(1, 1));
        prop_assert_eq!(p.move_prob(), phi_pmf(1, 1, &p).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transition_matrices_stochastic_and_triangular(p in exact_params(), sites in 1usize..4, k in 1usize..4) {
        let space = StateSpace::new(sites, k).unwrap();
        let m = boson_matrix(&space, &ParamSchedule::constant(p), 0).unwrap();
        prop_assert_eq!(m.stochasticity_defect(), rational(0, 1));
        prop_assert!(triangularity_violation(&space, &m).is_none());
    }

}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn contour_matches_oracle(p in float_params(0.3), n in prop::collection::vec(1usize..=5, 1..=3), t in 0usize..=5) {
        let mut n = n;
        n.sort_unstable_by(|a, b| b.cmp(a));
        let nv: Vec<i64> = n.iter().map(|&x| x as i64).collect();
        let v = qmoment_contour(&nv, t, &p, None, None, DEFAULT_TOL).unwrap();
        let oracle: f64 = qmoment_oracle(&WeylIndex::new(n).unwrap(), t, &ParamSchedule::constant(p)).unwrap();
        prop_assert!(v.value.im.abs() < 1e-10);
        prop_assert!((v.value.re - oracle).abs() < 1e-8 * oracle, "{} vs {}", v.value.re, oracle);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn fredholm_formulas_agree(p in float_params(0.3), r in 0.05f64..0.5, th in 1.2f64..5.0, n in 1usize..4, t in 0usize..4) {
        let zeta = Complex64::from_polar(r, th);
        let g = GFunction::new(n, t, &p, None).unwrap();
        let a = det_mb(zeta, &g, &KernelConfig::mellin_barnes(&p).unwrap()).unwrap().value;
        let b = det_cauchy(zeta, &g, &KernelConfig::cauchy(&p).unwrap()).unwrap().value;
        prop_assert!((a - b).norm() < 1e-6 * b.norm(), "{a} vs {b}");
        // Real parameters: the transform commutes with conjugation.
        let c = det_cauchy(zeta.conj(), &g, &KernelConfig::cauchy(&p).unwrap()).unwrap().value;
        prop_assert!((c - b.conj()).norm() < 1e-10);
    }
}

#[test]
fn initial_data_reproduced() {
    let p = ModelParams::new(0.35, 0.5, 0.2).unwrap();
    for nvec in [vec![1], vec![4, 2], vec![3, 3, 1]] {
        let v = qmoment_contour(&nvec, 0, &p, None, None, DEFAULT_TOL).unwrap();
        assert!((v.value - 1.0).norm() < 1e-12);
    }
    for nvec in [vec![2, 0], vec![3, 1, 0]] {
        let v = qmoment_contour(&nvec, 0, &p, None, None, DEFAULT_TOL).unwrap();
        assert!(v.value.norm() < 1e-12);
    }
}

#[test]
fn trapezoid_ratio_on_default_grid() {
    // Plan with the automatic radii, then compare 256 and 512 nodes per circle
    // against a refined reference.
    let p = ModelParams::new(0.5, 0.6, 0.1).unwrap();
    let ip = IntegrandParams::new(&p, None).unwrap();
    let base = plan_contours_auto(2, 0.5, 0.1).unwrap();
    let req = [MomentRequest { nvec: vec![4, 2], t: 3 }];
    let at = |m: usize| {
        let spec = base.with_nodes(&[m, m]);
        qmunu::contour::qmoment_contour_batch(&req, &ip, &spec, f64::INFINITY).unwrap()[0].value
    };
    let reference = at(4096);
    let e256 = (at(256) - reference).norm();
    let e512 = (at(512) - reference).norm();
    assert!(e512 <= 0.1 * e256 || e512 < 1e-14, "{e256:e} {e512:e}");
}

#[test]
fn oracle_matches_simulation() {
    let p = ModelParams::new(0.5, 0.6, 0.2).unwrap();
    let sched = ParamSchedule::constant(p);
    for (nvec, t) in [(vec![2, 1], 3), (vec![3], 4)] {
        let w = WeylIndex::new(nvec).unwrap();
        let oracle: f64 = qmoment_oracle(&w, t, &sched).unwrap();
        let mc = tasep_qmoment_mc(&w, t, &sched, 1_000_000, 3).unwrap();
        assert!(mc.z_score(oracle) < 4.0, "{mc:?} vs {oracle}");
    }
}

#[test]
fn series_matches_simulation() {
    let p = ModelParams::new(0.5, 0.4, 0.1).unwrap();
    let sched = ParamSchedule::constant(p);
    let zeta = Complex64::new(-0.2, 0.15);
    let s = laplace_series_oracle(zeta, 2, 3, &sched, 40, 1e-12).unwrap().value;
    let q = 0.5f64;
    let value = |x: &[i64]| 1.0 / qpoch_inf(zeta * q.powi((x[1] + 2) as i32), q, PRODUCT_TOL).unwrap();
    let re = tasep_mc(2, 3, &sched, 1_000_000, 21, |x| value(x).re).unwrap();
    let im = tasep_mc(2, 3, &sched, 1_000_000, 21, |x| value(x).im).unwrap();
    assert!(re.z_score(s.re) < 4.0 && im.z_score(s.im) < 4.0, "{re:?} {im:?} {s}");
}

#[test]
fn qpoch_recurrence_rational() {
    let q = rational(2, 7);
    let a = rational(-3, 5);
    for n in 0..20 {
        assert_eq!(
            qpoch(&a, &q, n + 1),
            qpoch(&a, &q, n) * (rational(1, 1) - a.clone() * num_traits::pow(q.clone(), n))
        );
    }
}
