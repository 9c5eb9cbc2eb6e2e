//! Empirical Lipschitz constant in `W₂` of the controlled generator of the
//! LQ value for a fixed affine feedback.

use std::sync::Arc;

use condflow::mfc::{lipschitz_audit, solve_riccati, AffineFeedback, ControlProblem, LqParams, QuadraticValue};

fn main() -> condflow::Result<()> {
    let params = LqParams::default();
    let sol = Arc::new(solve_riccati(&params)?);
    let problem = ControlProblem::lq(&params, 12.0)?;
    let value = QuadraticValue::riccati(sol.clone());
    let feedback = AffineFeedback::absolute(0.5, -1.0, 1e6);
    let audit = lipschitz_audit(&problem, &params, &sol, &value, 0.3, feedback, (-0.5, 0.5), (0.1, 1.0), 400, 4)?;
    println!(
        "max ratio {:.4} (quarter {:.4}), analytic bound {:.4}, stable {}, pass {}",
        audit.max_ratio, audit.max_ratio_coarse, audit.analytic_bound, audit.stable, audit.pass
    );
    for r in audit.rows.iter().filter(|r| r.oracle.is_some()).take(6) {
        println!("  {:?} ratio {:.4} oracle {:.4}", r.kind, r.ratio, r.oracle.unwrap());
    }
    Ok(())
}
