//! Acceptance suite: one pass/fail line per criterion, non-zero exit if any
//! fails. Each criterion returns its serialized numeric payload so the last
//! criterion can rerun everything and compare bytes.

use std::sync::Arc;
use std::time::{Duration, Instant};

use condflow::chainrule::{
    verify_brownian_corollary, verify_factor_model, verify_ito, verify_ito_wentzell, BracketMode, ToleranceRule,
    VerificationReport, VerifyOptions,
};
use condflow::measures::{
    fd_check_dm, fd_check_dm2, integral_identity_dm, integral_identity_dm2, CylindricalFunctional, EmpiricalMeasure,
    MeasurePair,
};
use condflow::mfc::{
    constant_control_gap, dpp_check, hjb_residual, policy_value, solve_riccati, ConstantFeedback, ControlFamily,
    ControlProblem, DppExpectation, DppSettings, LqLattice, LqParams, QuadraticValue, RiccatiFeedback,
};
use condflow::particle::{measure_flow_modulus, EnsembleConfig, InitialLaw};
use condflow::paths::{Partition, SdeCoefficients};
use condflow::quadvar::{brownian_lemma_study, BrownianWeight};
use condflow::registry;

const SEED: u64 = 2024;
/// `C` in `3·SE + C(n^{-1/2} + N^{-1/2})` for the Itô formula.
const C_ITO: f64 = 0.5;
/// `C` in `3·SE + C·Δt` for the chain-rule instances and the DPP gap.
const C_DT: f64 = 1.0;
const TOL_HJB: f64 = 1e-4;

struct Outcome {
    pass: bool,
    detail: String,
    payload: String,
}

fn json(v: &impl serde::Serialize) -> String {
    serde_json::to_string(v).unwrap()
}

fn grid(n: usize) -> Arc<Partition> {
    Arc::new(Partition::uniform(1.0, n).unwrap())
}

fn derivative_battery() -> Outcome {
    let pair = MeasurePair::new(
        EmpiricalMeasure::from_scalars(&[-1.0, 0.25, 1.5]).unwrap(),
        EmpiricalMeasure::from_scalars(&[-0.5, 0.0, 0.8, 2.0]).unwrap(),
    )
    .unwrap();
    let eps = [1e-1, 1e-2, 1e-3, 1e-4];
    let (mut pass, mut worst_order, mut worst_identity) = (true, f64::INFINITY, 0.0f64);
    let mut payload = String::new();
    for u in registry::functionals() {
        let d1 = fd_check_dm(&u, &pair, &eps).unwrap();
        let d2 = fd_check_dm2(&u, &pair, &eps, None).unwrap();
        for r in d1.rows.iter().chain(&d2.rows) {
            worst_order = r.observed_order.map_or(worst_order, |p| worst_order.min(p));
        }
        pass &= d1.order_ok && d2.order_ok;
        if u.is_polynomial() {
            let i1 = integral_identity_dm(&u, &pair).unwrap();
            let i2 = integral_identity_dm2(&u, &pair, &[0.3]).unwrap();
            worst_identity = worst_identity.max(i1.error).max(i2.error);
            payload += &json(&(&i1, &i2));
        }
        payload += &json(&(&d1, &d2));
    }
    pass &= worst_identity < 1e-10;
    Outcome { pass, detail: format!("min order {worst_order:.3}, max identity error {worst_identity:.1e}"), payload }
}

fn lemma() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    let mut payload = String::new();
    for w in [BrownianWeight::One, BrownianWeight::Time] {
        let s = brownian_lemma_study(w, 1.0, &[256, 1024, 4096], 200, SEED).unwrap();
        let last = s.rows.last().unwrap();
        let ratios: Vec<String> = s.rows.iter().filter_map(|r| r.ratio).map(|q| format!("{q:.2}")).collect();
        pass &= last.n == 4096 && last.mean_abs_error < 0.05 && s.trend_ok == Some(true);
        detail.push(format!("H={w:?}: L1 {:.4} at n=4096, ratios [{}]", last.mean_abs_error, ratios.join(", ")));
        payload += &json(&s);
    }
    Outcome { pass, detail: detail.join("; "), payload }
}

fn ito() -> Outcome {
    let opts = VerifyOptions::new(4, SEED, ToleranceRule::MeanAbs { c: C_ITO }).with_mode(BracketMode::Pairwise);
    let mut worst = 0.0f64;
    let mut payload = String::new();
    for n in [8, 64, 512] {
        let cfg = EnsembleConfig::new(SdeCoefficients::constant(0.3, 0.0, 0.7), InitialLaw::dirac(&[0.5]), 16, grid(n));
        let r = verify_ito(&CylindricalFunctional::mean_squared(), &cfg, &opts).unwrap();
        worst = r.rows.iter().map(|x| x.residual.abs()).fold(worst, f64::max);
        payload += &json(&r);
    }
    let cfg = EnsembleConfig::new(SdeCoefficients::constant(0.0, 1.0, 0.5), InitialLaw::dirac(&[0.0]), 4096, grid(1024));
    let r = verify_ito(
        &CylindricalFunctional::second_moment(),
        &cfg,
        &VerifyOptions::new(64, SEED, ToleranceRule::MeanAbs { c: C_ITO }),
    )
    .unwrap();
    payload += &json(&r);
    let (a, b, c) = (worst < 1e-10, r.mean_abs <= r.bound, r.q90_abs <= r.bound);
    Outcome {
        pass: a && b && c,
        detail: format!(
            "(a) max telescoping residual {worst:.1e}; (b) mean|res| {:.4} ± {:.4}; (c) q90 {:.4}; bound {:.4} with C = {C_ITO}",
            r.mean_abs, r.se_abs, r.q90_abs, r.bound
        ),
        payload,
    }
}

fn chain_rule_detail(r: &VerificationReport, label: &str) -> String {
    let ab = r.ablation.as_ref().unwrap();
    format!(
        "residual {:+.4} ± {:.4} (bound {:.4}); without {label} {:+.4} ± {:.4} (target {}, bound {:.4})",
        r.mean, r.se, r.bound, ab.mean, ab.stderr, ab.target, ab.bound
    )
}

fn wentzell() -> Outcome {
    let cfg = EnsembleConfig::new(SdeCoefficients::constant(0.0, 1.0, 1.0), InitialLaw::dirac(&[0.0]), 64, grid(256));
    let opts = VerifyOptions::new(200, SEED, ToleranceRule::SignedMean { c: C_DT });
    let r = verify_ito_wentzell(&registry::wentzell_ablation(), &cfg, &opts, Some(1.0)).unwrap();
    let pass = r.pass && r.ablation.as_ref().is_some_and(|a| a.pass && a.target == 1.0);
    Outcome { pass, detail: chain_rule_detail(&r, "<N,M>"), payload: json(&r) }
}

fn corollaries() -> Outcome {
    let opts = VerifyOptions::new(200, SEED, ToleranceRule::SignedMean { c: C_DT });
    let cfg = EnsembleConfig::new(SdeCoefficients::constant(0.0, 0.0, 1.0), InitialLaw::dirac(&[0.0]), 8, grid(256));
    let b = verify_brownian_corollary(&registry::brownian_psi0(), &cfg, &opts, Some(1.0)).unwrap();
    let coeffs = SdeCoefficients::constant(0.0, 0.5, 1.0).with_constant_factor(0.0, 0.5, 1.0);
    let cfg = EnsembleConfig::new(coeffs, InitialLaw::dirac(&[0.0]), 64, grid(256)).with_factor(vec![0.0]);
    let f = verify_factor_model(&registry::factor_product(), &cfg, &opts, Some(1.0)).unwrap();
    let ok = |r: &VerificationReport| r.pass && r.ablation.as_ref().is_some_and(|a| a.pass);
    Outcome {
        pass: ok(&b) && ok(&f),
        detail: format!("Brownian: {}; factor: {}", chain_rule_detail(&b, "psi0 term"), chain_rule_detail(&f, "<X,Y>")),
        payload: json(&b) + &json(&f),
    }
}

fn lq() -> (LqParams, Arc<condflow::mfc::RiccatiSolution>, ControlProblem) {
    let p = LqParams::default();
    let sol = Arc::new(solve_riccati(&p).unwrap());
    let a_max = (2.0 * LqLattice::standard(p.horizon).feedback_bound(&sol)).ceil();
    let problem = ControlProblem::lq(&p, a_max).unwrap();
    (p, sol, problem)
}

fn hjb() -> Outcome {
    let (p, sol, problem) = lq();
    let lattice = LqLattice::standard(p.horizon);
    let value = QuadraticValue::riccati(sol.clone());
    let family = ControlFamily::default();
    let good = hjb_residual(&problem, &value, &lattice, &family, &[], TOL_HJB).unwrap();
    let bad = hjb_residual(&problem, &value.clone().perturbed(0.1), &lattice, &family, &[], TOL_HJB).unwrap();
    let fb = Arc::new(RiccatiFeedback { solution: sol, a_max: problem.a_max });
    let settings = DppSettings { steps: 100, particles: 500, paths: 256, seed: SEED, c: 0.0 };
    let nodes = [(0.0, (0.25, 0.55)), (0.5, (-0.5, 1.0)), (0.75, (0.0, 0.1))];
    let mc: Vec<_> =
        nodes.iter().map(|&(t, law)| policy_value(&problem, &value, fb.clone(), t, law, &settings).unwrap()).collect();
    let z: Vec<String> = mc.iter().map(|c| format!("{:+.2}", (c.estimate - c.target) / c.stderr)).collect();
    Outcome {
        pass: lattice.len() == 225 && good.pass && bad.max_abs_residual >= 0.05 && mc.iter().all(|c| c.pass),
        detail: format!(
            "max|res| {:.1e} on {} nodes; perturbed max|res| {:.3}; MC z-scores [{}]",
            good.max_abs_residual,
            good.rows.len(),
            bad.max_abs_residual,
            z.join(", ")
        ),
        payload: json(&good) + &json(&bad) + &json(&mc),
    }
}

fn dpp() -> Outcome {
    let (_, sol, problem) = lq();
    let value = QuadraticValue::riccati(sol.clone());
    let s = DppSettings { steps: 50, particles: 1000, paths: 64, seed: SEED, c: C_DT };
    let (t, theta, law) = (0.0, 0.25, (0.2, 0.5));
    let fb = Arc::new(RiccatiFeedback { solution: sol.clone(), a_max: problem.a_max });
    let opt = dpp_check(&problem, &value, fb, t, theta, law, &s, DppExpectation::Optimal).unwrap();
    let oracle = constant_control_gap(&sol, t, theta, law, problem.a_max);
    let sub = dpp_check(
        &problem,
        &value,
        Arc::new(ConstantFeedback(problem.a_max)),
        t,
        theta,
        law,
        &s,
        DppExpectation::Suboptimal { oracle: Some(oracle) },
    )
    .unwrap();
    Outcome {
        pass: opt.pass && sub.pass,
        detail: format!(
            "optimal gap {:+.4} ± {:.4} (bound {:.4}); a = {} gap {:.3} ± {:.3}, oracle {:.3}",
            opt.estimate, opt.stderr, opt.bound, problem.a_max, sub.estimate, sub.stderr, oracle
        ),
        payload: json(&opt) + &json(&sub),
    }
}

fn modulus() -> Outcome {
    let cfg = EnsembleConfig::new(
        SdeCoefficients::constant(0.3, 1.0, 0.5),
        InitialLaw::Gaussian { mean: vec![0.0], std: 1.0 },
        256,
        grid(64),
    );
    let pairs: Vec<(usize, usize)> = (0..20).map(|j| (j, j + 1 + 2 * j)).collect();
    let r = measure_flow_modulus(&cfg, &pairs, 16, SEED).unwrap();
    let slack = r.rows.iter().map(|x| x.bound + 3.0 * x.stderr - x.mean).fold(f64::INFINITY, f64::min);
    Outcome {
        pass: r.pass && r.rows.len() == 20,
        detail: format!("{} pairs, min slack {slack:.4}", r.rows.len()),
        payload: json(&r),
    }
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 derivative battery", derivative_battery, Duration::from_secs(1)),
        ("2 quadratic-variation lemma", lemma, Duration::from_secs(30)),
        ("3 Ito formula", ito, Duration::from_secs(300)),
        ("4 Ito-Wentzell ablation", wentzell, Duration::from_secs(300)),
        ("5 corollaries", corollaries, Duration::from_secs(600)),
        ("6 HJB residuals", hjb, Duration::from_secs(120)),
        ("7 dynamic programming", dpp, Duration::from_secs(120)),
        ("8 measure-flow modulus", modulus, Duration::from_secs(60)),
    ];
    let mut all = true;
    let mut payloads = Vec::new();
    for (name, run, limit) in criteria {
        let t0 = Instant::now();
        let o = run();
        let took = t0.elapsed();
        let pass = o.pass && took < limit;
        all &= pass;
        println!("{} {name} ({:.2?} / {:?}): {}", if pass { "PASS" } else { "FAIL" }, took, limit, o.detail);
        payloads.push(o.payload);
    }
    let t0 = Instant::now();
    let mismatched: Vec<&str> =
        criteria.iter().zip(&payloads).filter(|((_, run, _), p)| run().payload != **p).map(|((n, _, _), _)| *n).collect();
    let pass = mismatched.is_empty();
    all &= pass;
    println!(
        "{} 9 reproducibility ({:.2?}): {}",
        if pass { "PASS" } else { "FAIL" },
        t0.elapsed(),
        if pass { "all payloads byte-identical on rerun".to_string() } else { format!("differs: {mismatched:?}") }
    );
    if !all {
        std::process::exit(1);
    }
}
