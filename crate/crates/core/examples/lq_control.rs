//! Linear-quadratic mean-field control with common noise: Riccati value,
//! HJB residuals, Monte Carlo policy value and dynamic-programming gaps.

use std::sync::Arc;

use condflow::mfc::{
    constant_control_gap, dpp_check, hjb_residual, policy_value, solve_riccati, ConstantFeedback, ControlFamily,
    ControlProblem, DppExpectation, DppSettings, LqLattice, LqParams, QuadraticValue, RiccatiFeedback,
};

fn main() -> condflow::Result<()> {
    let params = LqParams::default();
    let sol = Arc::new(solve_riccati(&params)?);
    let lattice = LqLattice::standard(params.horizon);
    let a_max = (2.0 * lattice.feedback_bound(&sol)).ceil();
    let problem = ControlProblem::lq(&params, a_max)?;
    println!("Riccati: {} steps, halving diff {:.1e}, a_max = {a_max}", sol.steps, sol.halving_diff);

    let value = QuadraticValue::riccati(sol.clone());
    let t0 = std::time::Instant::now();
    let hjb = hjb_residual(&problem, &value, &lattice, &ControlFamily::default(), &[], 1e-4)?;
    println!("HJB max |res| = {:.2e} over {} nodes ({:.1?})", hjb.max_abs_residual, hjb.rows.len(), t0.elapsed());
    let bad = hjb_residual(&problem, &value.clone().perturbed(0.1), &lattice, &ControlFamily::default(), &[], 1e-4)?;
    println!("perturbed candidate max |res| = {:.3}", bad.max_abs_residual);

    let feedback = Arc::new(RiccatiFeedback { solution: sol.clone(), a_max });
    let settings = DppSettings { steps: 100, particles: 1000, paths: 64, seed: 5, c: 1.0 };
    for (t, law) in [(0.0, (0.2, 0.5)), (0.5, (-0.3, 0.8)), (0.25, (0.0, 0.2))] {
        let pv = policy_value(&problem, &value, feedback.clone(), t, law, &settings)?;
        println!("V({t}, {law:?}) = {:.4}  MC {:.4} ± {:.4}  pass = {}", pv.target, pv.estimate, pv.stderr, pv.pass);
    }

    let (t, theta, law) = (0.0, 0.25, (0.2, 0.5));
    let s = DppSettings { steps: 50, ..settings };
    let opt = dpp_check(&problem, &value, feedback, t, theta, law, &s, DppExpectation::Optimal)?;
    println!("DPP optimal gap {:.2e} ± {:.1e} (bound {:.1e}) pass = {}", opt.estimate, opt.stderr, opt.bound, opt.pass);
    let oracle = constant_control_gap(&sol, t, theta, law, a_max);
    let sub = dpp_check(
        &problem,
        &value,
        Arc::new(ConstantFeedback(a_max)),
        t,
        theta,
        law,
        &s,
        DppExpectation::Suboptimal { oracle: Some(oracle) },
    )?;
    println!("DPP a ≡ {a_max}: gap {:.3} ± {:.3}, oracle {:.3}, pass = {}", sub.estimate, sub.stderr, oracle, sub.pass);
    Ok(())
}
