mod common;

use std::sync::Arc;

use condflow::measures::EmpiricalMeasure;
use condflow::mfc::{
    dpp_check, family_gap, gaussian_cloud, gaussian_moments, generator, lq_lipschitz_oracle, solve_riccati,
    AffineFeedback, ConstantFeedback, ControlFamily, ControlProblem, DppExpectation, DppSettings, LqParams,
    MeasureArg, QuadraticValue, RiccatiFeedback, ValueCandidate,
};
use condflow::rng::RngStream;
use common::{lq_generator, lq_time_derivative, mean_se, riccati_closed_form};
use proptest::prelude::*;

fn setup() -> (LqParams, Arc<condflow::mfc::RiccatiSolution>, ControlProblem) {
    let p = LqParams::default();
    let sol = Arc::new(solve_riccati(&p).unwrap());
    let problem = ControlProblem::lq(&p, 12.0).unwrap();
    (p, sol, problem)
}

#[test]
fn riccati_matches_hyperbolic_closed_form() {
    let (p, sol, _) = setup();
    for j in 0..=40 {
        let t = j as f64 / 40.0;
        let got = sol.at(t);
        let want = riccati_closed_form(&p, t);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-7, "t = {t}: {got:?} vs {want:?}");
        }
    }
}

#[test]
fn riccati_closed_form_other_regimes() {
    // |P_T| above and below κ, and no running cost
    for (q, r, cg, cm) in [(0.5, 4.0, 3.0, 0.2), (0.0, 0.0, 1.0, 1.0), (8.0, 1.0, 0.1, 0.0)] {
        let p = LqParams { q, r, c_g: cg, c_m: cm, ..LqParams::default() };
        let sol = solve_riccati(&p).unwrap();
        for t in [0.0, 0.3, 0.9] {
            let (got, want) = (sol.at(t), riccati_closed_form(&p, t));
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-7, "{p:?} t = {t}");
            }
        }
    }
}

#[test]
fn terminal_condition_is_exact() {
    let (p, sol, problem) = setup();
    let v = QuadraticValue::riccati(sol);
    for (mean, var) in [(0.0, 0.1), (-0.7, 2.0), (1.3, 0.45)] {
        let m = gaussian_moments(mean, var);
        assert_eq!(v.value(p.horizon, &[], &m), (problem.terminal)(&[], &m));
    }
}

#[test]
fn candidate_derivatives_agree_with_finite_differences() {
    let (_, sol, _) = setup();
    let v = QuadraticValue::riccati(sol);
    let (t, mean, var) = (0.4, 0.3, 0.6);
    let base = v.value(t, &[], &gaussian_moments(mean, var));
    let h = 1e-6;
    let dt_fd = (v.value(t + h, &[], &gaussian_moments(mean, var)) - v.value(t - h, &[], &gaussian_moments(mean, var))) / (2.0 * h);
    assert!((dt_fd - v.dt(t, &[], &gaussian_moments(mean, var))).abs() < 1e-5);
    // a mass ε at x moves the value by ε δ_m V(x) + O(ε²); compare x-slopes
    let m = gaussian_moments(mean, var);
    let dv = |x: f64| {
        let eps = 1e-6;
        let mean_e = (1.0 - eps) * mean + eps * x;
        let second = (1.0 - eps) * (var + mean * mean) + eps * x * x;
        (v.value(t, &[], &gaussian_moments(mean_e, second - mean_e * mean_e)) - base) / eps
    };
    for x in [-1.0, 0.2, 1.7] {
        let slope = (dv(x + 1e-3) - dv(x - 1e-3)) / 2e-3;
        assert!((slope - v.dx_dm(t, &[], &m, x)).abs() < 1e-3, "x = {x}");
        let curv = (dv(x + 1e-2) - 2.0 * dv(x) + dv(x - 1e-2)) / 1e-4;
        assert!((curv - v.dxx_dm(t, &[], &m, x)).abs() < 1e-2);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generator_matches_closed_form(
        t in 0.0..1.0f64, mean in -1.0..1.0f64, var in 0.05..1.5f64,
        c0 in -2.0..2.0f64, c1 in -2.0..2.0f64, centered in any::<bool>(),
    ) {
        let (p, sol, problem) = setup();
        let v = QuadraticValue::riccati(sol.clone());
        let fb = AffineFeedback { c0, c1, centered, a_max: 1e6 };
        let got = generator(&problem, &v, t, &[], MeasureArg::Gaussian { mean, var }, &fb);
        let [pc, rc, _] = sol.at(t);
        let want = lq_generator(&p, (pc, rc), mean, var, c0, c1, centered);
        prop_assert!((got - want).abs() < 1e-9 * (1.0 + want.abs()), "{got} vs {want}");
        let dt = v.dt(t, &[], &gaussian_moments(mean, var));
        prop_assert!((dt - lq_time_derivative(&p, (pc, rc), mean, var)).abs() < 1e-6);
    }

    #[test]
    fn lipschitz_oracle_is_the_gradient(t in 0.0..1.0f64, mean in -1.0..1.0f64, var in 0.1..1.0f64, c0 in -2.0..2.0f64, c1 in -2.0..2.0f64) {
        let (p, sol, _) = setup();
        let [pc, rc, _] = sol.at(t);
        let phi = |m: f64, v: f64| lq_generator(&p, (pc, rc), m, v, c0, c1, false);
        let h = 1e-5;
        let fd_mean = (phi(mean + h, var) - phi(mean - h, var)) / (2.0 * h);
        let fd_var = (phi(mean, var + h) - phi(mean, var - h)) / (2.0 * h);
        let (dm, dv) = lq_lipschitz_oracle(&p, &sol, t, c0, c1, mean);
        prop_assert!((dm - fd_mean).abs() < 1e-6 && (dv - fd_var).abs() < 1e-6);
    }

    #[test]
    fn sup_is_monotone_in_the_grid(keep0 in proptest::collection::vec(any::<bool>(), 7), keep1 in proptest::collection::vec(any::<bool>(), 7), t in 0.0..1.0f64) {
        let (_, sol, problem) = setup();
        let v = QuadraticValue::riccati(sol);
        let full: Vec<f64> = (0..7).map(|i| -3.0 + i as f64).collect();
        let pick = |keep: &[bool]| {
            let mut s: Vec<f64> = full.iter().zip(keep).filter(|(_, k)| **k).map(|(x, _)| *x).collect();
            if s.is_empty() { s.push(full[3]); }
            s
        };
        let objective = |c0: f64, c1: f64| {
            generator(&problem, &v, t, &[], MeasureArg::Gaussian { mean: 0.2, var: 0.5 }, &AffineFeedback::centered(c0, c1, 12.0))
        };
        let small = ControlFamily::grid(pick(&keep0), pick(&keep1)).sup(objective).unwrap().0;
        let big = ControlFamily::grid(full.clone(), full.clone()).sup(objective).unwrap().0;
        prop_assert!(big >= small);
    }
}

#[test]
fn representation_independence() {
    let (_, sol, problem) = setup();
    let v = QuadraticValue::riccati(sol.clone());
    let (t, mean, var) = (0.3, 0.25, 0.6);
    let fb = RiccatiFeedback { solution: sol, a_max: 12.0 };
    let gauss = generator(&problem, &v, t, &[], MeasureArg::Gaussian { mean, var }, &fb);
    // 20 batches of 5000 atoms; the full sample has 10⁵
    let mut atoms = Vec::with_capacity(100_000);
    let mut batch_values = Vec::new();
    let mut g = RngStream::new(99, 0).generator();
    for _ in 0..20 {
        let b: Vec<f64> = (0..5000).map(|_| mean + var.sqrt() * condflow::rng::normal(&mut g)).collect();
        let m = EmpiricalMeasure::from_scalars(&b).unwrap();
        batch_values.push(generator(&problem, &v, t, &[], MeasureArg::Empirical(&m), &fb));
        atoms.extend(b);
    }
    let all = EmpiricalMeasure::from_scalars(&atoms).unwrap();
    let sample = generator(&problem, &v, t, &[], MeasureArg::Empirical(&all), &fb);
    let (_, se_batch) = mean_se(&batch_values);
    // the batch mean's standard error is that of the pooled sample
    assert!((sample - gauss).abs() <= 3.0 * se_batch, "{sample} vs {gauss} (se {se_batch})");
}

#[test]
fn dpp_ordering_with_common_random_numbers() {
    let (_, sol, problem) = setup();
    let v = QuadraticValue::riccati(sol.clone());
    let s = DppSettings { steps: 20, particles: 200, paths: 16, seed: 41, c: 1.0 };
    let run = |c: Arc<dyn condflow::particle::FeedbackLaw>| {
        dpp_check(&problem, &v, c, 0.2, 0.5, (0.1, 0.4), &s, DppExpectation::Admissible).unwrap()
    };
    let opt = run(Arc::new(RiccatiFeedback { solution: sol.clone(), a_max: 12.0 }));
    for c in [
        Arc::new(ConstantFeedback(0.0)) as Arc<dyn condflow::particle::FeedbackLaw>,
        Arc::new(ConstantFeedback(2.0)),
        Arc::new(AffineFeedback::centered(0.0, -3.0, 12.0)),
        Arc::new(AffineFeedback::centered(0.5, 0.0, 12.0)),
    ] {
        let sub = run(c);
        assert!(opt.estimate >= sub.estimate, "{} < {}", opt.estimate, sub.estimate);
    }
}

#[test]
fn gaussian_cloud_is_reproducible() {
    let a = gaussian_cloud(0.1, 0.3, 50, RngStream::new(5, 0)).unwrap();
    let b = gaussian_cloud(0.1, 0.3, 50, RngStream::new(5, 0)).unwrap();
    assert_eq!(a.atoms(), b.atoms());
}

#[test]
fn affine_family_gap_is_small_at_spot_nodes() {
    let (_, sol, problem) = setup();
    let v = QuadraticValue::riccati(sol);
    for node in [(0.0, 0.0, 0.5), (0.5, 0.3, 0.2), (0.875, -0.4, 0.9)] {
        let g = family_gap(&problem, &v, &ControlFamily::default(), node, &[-0.5, 0.0, 0.5]).unwrap();
        // the optimum is affine, so no piecewise-constant control beats the family
        assert!(g.gap <= 1e-6, "{node:?}: {g:?}");
    }
}
