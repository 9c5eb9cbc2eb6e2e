use std::sync::Arc;

use condflow::chainrule::{verify_ito, ToleranceRule, VerifyOptions};
use condflow::measures::{
    dm2, integral_identity_dm, CylindricalFunctional, EmpiricalMeasure, MeasurePair,
};
use condflow::measures::w2_squared;
use condflow::particle::{simulate_ensemble, EnsembleConfig, InitialLaw};
use condflow::paths::{simulate_brownian, Partition, SamplePath, SdeCoefficients};
use condflow::quadvar::{weighted_qv_sum, WeightProcess};
use condflow::rng::{normal, RngStream};
use proptest::prelude::*;

fn atoms(n: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-3.0..3.0f64, 1..=n)
}

fn scalar(v: &[f64]) -> EmpiricalMeasure {
    EmpiricalMeasure::from_scalars(v).unwrap()
}

fn path_from(p: &Arc<Partition>, seed: u64) -> SamplePath {
    simulate_brownian(p, 1, RngStream::new(seed, 7)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn partition_mesh_is_max_gap(gaps in proptest::collection::vec(0.01..1.0f64, 1..20)) {
        let mut times = vec![0.0];
        for g in &gaps {
            times.push(times.last().unwrap() + g);
        }
        let p = Partition::new(times.clone()).unwrap();
        let max = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        prop_assert_eq!(p.mesh(), max);
        prop_assert_eq!(p.times()[0], 0.0);
        prop_assert!(p.times().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn brownian_decomposition_reconstructs(seed in any::<u64>(), n in 1usize..64) {
        let p = Arc::new(Partition::uniform(1.0, n).unwrap());
        let w = path_from(&p, seed);
        prop_assert!(w.reconstruction_error().unwrap() <= 1e-12);
        let sum: f64 = (0..n).map(|k| w.increment(k)[0]).sum();
        prop_assert!((sum - (w.terminal()[0] - w.initial()[0])).abs() < 1e-12);
    }

    #[test]
    fn weighted_sum_is_bilinear(seed in any::<u64>(), a in -2.0..2.0f64, b in -2.0..2.0f64, n in 2usize..40) {
        let p = Arc::new(Partition::uniform(1.0, n).unwrap());
        let (x, y, z) = (path_from(&p, seed), path_from(&p, seed ^ 1), path_from(&p, seed ^ 2));
        let comb = SamplePath::scalar(p.clone(), x.values().iter().zip(y.values()).map(|(u, v)| a * u + b * v).collect()).unwrap();
        let h = WeightProcess::scalar_fn(p.clone(), |t| 1.0 + t * t);
        let lhs = weighted_qv_sum(&h, &comb, Some(&z), &p).unwrap();
        let rhs = a * weighted_qv_sum(&h, &x, Some(&z), &p).unwrap() + b * weighted_qv_sum(&h, &y, Some(&z), &p).unwrap();
        prop_assert!((lhs - rhs).abs() < 1e-12 * (1.0 + lhs.abs()));
        let h2 = WeightProcess::scalar_fn(p.clone(), |t| a * (1.0 + t * t) + b * t);
        let ht = WeightProcess::scalar_fn(p.clone(), |t| t);
        let lin = weighted_qv_sum(&h2, &x, None, &p).unwrap();
        let parts = a * weighted_qv_sum(&h, &x, None, &p).unwrap() + b * weighted_qv_sum(&ht, &x, None, &p).unwrap();
        prop_assert!((lin - parts).abs() < 1e-12 * (1.0 + lin.abs()));
    }

    #[test]
    fn mixed_sum_obeys_cauchy_schwarz(seed in any::<u64>(), n in 2usize..40, drift in -3.0..3.0f64) {
        let p = Arc::new(Partition::uniform(1.0, n).unwrap());
        let m = path_from(&p, seed);
        let a = SamplePath::from_fn(p.clone(), 1, |t| vec![drift * (t + (3.0 * t).sin())]).unwrap();
        let h = WeightProcess::scalar_fn(p.clone(), |t| (5.0 * t).cos());
        let mixed = weighted_qv_sum(&h, &a, Some(&m), &p).unwrap().abs();
        let qa = weighted_qv_sum(&WeightProcess::scalar_fn(p.clone(), |_| 1.0), &a, None, &p).unwrap();
        let qm = weighted_qv_sum(&WeightProcess::scalar_fn(p.clone(), |_| 1.0), &m, None, &p).unwrap();
        prop_assert!(mixed <= h.sup_norm() * qa.sqrt() * qm.sqrt() * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn w2_is_a_metric(a in atoms(8), b in atoms(8), c in atoms(8)) {
        let (ma, mb, mc) = (scalar(&a), scalar(&b), scalar(&c));
        let d = |x: &EmpiricalMeasure, y: &EmpiricalMeasure| w2_squared(x, y).unwrap().sqrt();
        prop_assert_eq!(w2_squared(&ma, &mb).unwrap(), w2_squared(&mb, &ma).unwrap());
        prop_assert!(d(&ma, &mc) <= d(&ma, &mb) + d(&mb, &mc) + 1e-12);
        prop_assert_eq!(w2_squared(&ma, &ma).unwrap(), 0.0);
        let mut rev = a.clone();
        rev.reverse();
        prop_assert_eq!(w2_squared(&ma, &scalar(&rev)).unwrap(), 0.0);
    }

    #[test]
    fn mixture_endpoints_are_exact(a in atoms(6), b in atoms(6)) {
        let (m, mp) = (scalar(&a), scalar(&b));
        for u in condflow::registry::functionals() {
            prop_assert_eq!(u.eval(&EmpiricalMeasure::mixture(0.0, &m, &mp).unwrap()).unwrap(), u.eval(&m).unwrap());
            prop_assert_eq!(u.eval(&EmpiricalMeasure::mixture(1.0, &m, &mp).unwrap()).unwrap(), u.eval(&mp).unwrap());
        }
    }

    #[test]
    fn integral_identity_for_polynomials(a in atoms(6), b in atoms(6)) {
        let pair = MeasurePair::new(scalar(&a), scalar(&b)).unwrap();
        for u in condflow::registry::functionals().into_iter().filter(|u| u.is_polynomial()) {
            let c = integral_identity_dm(&u, &pair).unwrap();
            prop_assert!(c.error < 1e-10, "{}: {}", u.name(), c.error);
        }
    }

    #[test]
    fn second_derivative_is_symmetric(a in atoms(6), x in -3.0..3.0f64, y in -3.0..3.0f64) {
        let m = scalar(&a);
        for u in condflow::registry::functionals() {
            prop_assert_eq!(dm2(&u, &m, &[x], &[y]).unwrap(), dm2(&u, &m, &[y], &[x]).unwrap());
        }
    }

    #[test]
    fn functionals_ignore_atom_order(a in atoms(10), shift in 0usize..10) {
        let mut b = a.clone();
        let s = shift % a.len();
        b.rotate_left(s);
        for u in condflow::registry::functionals() {
            let (x, y) = (u.eval(&scalar(&a)).unwrap(), u.eval(&scalar(&b)).unwrap());
            prop_assert!((x - y).abs() <= 1e-14 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn estimators_ignore_particle_labels(seed in any::<u64>(), shift in 1usize..12) {
        let p = Arc::new(Partition::uniform(1.0, 8).unwrap());
        let cfg = EnsembleConfig::new(
            SdeCoefficients::constant(0.2, 1.0, 0.5),
            InitialLaw::Gaussian { mean: vec![0.0], std: 1.0 },
            12,
            p,
        );
        let ens = simulate_ensemble(&cfg, RngStream::new(seed, 0)).unwrap();
        let perm: Vec<usize> = (0..12).map(|j| (j + shift) % 12).collect();
        let per = ens.permuted(&perm).unwrap();
        let f = |r: condflow::particle::ParticleRef<'_>| r.terminal()[0].sin() + r.state(3)[0];
        prop_assert_eq!(ens.cond_expect(f), per.cond_expect(f));
        let h = |a: condflow::particle::ParticleRef<'_>, b: condflow::particle::ParticleRef<'_>| {
            (a.terminal()[0] - b.terminal()[0]).powi(2) + a.initial()[0] * b.terminal()[0]
        };
        prop_assert_eq!(ens.cond_expect_pair(h), per.cond_expect_pair(h));
    }

    #[test]
    fn product_pairs_match_the_u_statistic(seed in any::<u64>()) {
        let p = Arc::new(Partition::uniform(1.0, 4).unwrap());
        let cfg = EnsembleConfig::new(SdeCoefficients::constant(0.0, 1.0, 1.0), InitialLaw::dirac(&[0.5]), 9, p);
        let ens = simulate_ensemble(&cfg, RngStream::new(seed, 0)).unwrap();
        let f = |r: condflow::particle::ParticleRef<'_>| r.terminal()[0];
        let g = |r: condflow::particle::ParticleRef<'_>| r.terminal()[0].cos();
        let fast = ens.cond_expect_product(f, g).value;
        let direct = ens.cond_expect_pair(|a, b| f(a) * g(b)).value;
        prop_assert!((fast - direct).abs() < 1e-12 * (1.0 + direct.abs()));
    }

    #[test]
    fn identical_keys_identical_draws(seed in any::<u64>(), tag in any::<u64>(), idx in any::<u64>()) {
        let s = RngStream::new(seed, 3).derive(tag, idx);
        let (mut g1, mut g2) = (s.generator(), s.generator());
        let a: Vec<f64> = (0..8).map(|_| normal(&mut g1)).collect();
        let b: Vec<f64> = (0..8).map(|_| normal(&mut g2)).collect();
        prop_assert_eq!(a, b);
        prop_assert_ne!(s, RngStream::new(seed, 3).derive(tag, idx.wrapping_add(1)));
    }
}

#[test]
fn dirac_flow_without_idiosyncratic_noise_has_zero_spread() {
    let p = Arc::new(Partition::uniform(1.0, 16).unwrap());
    let cfg = EnsembleConfig::new(SdeCoefficients::constant(0.3, 0.0, 1.0), InitialLaw::dirac(&[1.0]), 10, p);
    let ens = simulate_ensemble(&cfg, RngStream::new(2, 0)).unwrap();
    let e = ens.cond_expect(|r| r.terminal()[0].exp());
    assert_eq!(e.stderr, 0.0);
}

fn ito_rows(u: &CylindricalFunctional) -> condflow::chainrule::VerificationReport {
    let p = Arc::new(Partition::uniform(1.0, 32).unwrap());
    let cfg = EnsembleConfig::new(SdeCoefficients::constant(0.1, 1.0, 0.5), InitialLaw::dirac(&[0.3]), 16, p);
    verify_ito(u, &cfg, &VerifyOptions::new(4, 12, ToleranceRule::MeanAbs { c: 0.5 })).unwrap()
}

#[test]
fn residual_is_lhs_minus_terms_on_every_row() {
    let r = ito_rows(&CylindricalFunctional::cos_mean());
    for row in &r.rows {
        let want = row.lhs - row.terms.iter().sum::<f64>();
        assert!((row.residual - want).abs() <= 1e-14 * (1.0 + row.lhs.abs()));
    }
}

#[test]
fn verifier_terms_are_linear_in_the_functional() {
    let (u, v) = (CylindricalFunctional::second_moment_squared(), CylindricalFunctional::cos_mean());
    let (alpha, beta) = (1.5, -0.75);
    let comb = CylindricalFunctional::linear_combination("comb", &[(alpha, &u), (beta, &v)]).unwrap();
    let (ru, rv, rc) = (ito_rows(&u), ito_rows(&v), ito_rows(&comb));
    for ((a, b), c) in ru.rows.iter().zip(&rv.rows).zip(&rc.rows) {
        let close = |x: f64, y: f64| (x - y).abs() <= 1e-10 * (1.0 + x.abs());
        assert!(close(c.lhs, alpha * a.lhs + beta * b.lhs));
        for j in 0..c.terms.len() {
            assert!(close(c.terms[j], alpha * a.terms[j] + beta * b.terms[j]), "term {j}");
        }
    }
}

#[test]
fn additive_sde_terminal_moments_match() {
    let p = Arc::new(Partition::uniform(1.0, 3).unwrap());
    let cfg = EnsembleConfig::new(SdeCoefficients::constant(0.5, 1.0, 0.0), InitialLaw::dirac(&[0.0]), 4000, p);
    let ens = simulate_ensemble(&cfg, RngStream::new(8, 0)).unwrap();
    let m = ens.cond_expect(|r| r.terminal()[0]);
    assert!((m.value - 0.5).abs() < 3.0 * m.stderr);
    let v = ens.cond_expect(|r| (r.terminal()[0] - 0.5).powi(2));
    assert!((v.value - 1.0).abs() < 3.0 * v.stderr);
    let _ = normal;
}
