//! Factor-model chain rule for `u(t, m, y) = y · mean(m)` with the factor
//! and the states loading on the same common noise.

use std::sync::Arc;

use condflow::chainrule::{verify_factor_model, BracketMode, ToleranceRule, VerifyOptions};
use condflow::paths::{Partition, SdeCoefficients};
use condflow::particle::{EnsembleConfig, InitialLaw};
use condflow::registry;

fn main() -> condflow::Result<()> {
    let horizon = 1.0;
    let partition = Arc::new(Partition::uniform(horizon, 256)?);
    let coeffs = SdeCoefficients::constant(0.0, 0.5, 1.0).with_constant_factor(0.0, 0.5, 1.0);
    let cfg = EnsembleConfig::new(coeffs, InitialLaw::dirac(&[0.0]), 64, partition).with_factor(vec![0.0]);
    let u = registry::factor_product();
    let opts = VerifyOptions::new(200, 3, ToleranceRule::SignedMean { c: 1.0 });
    let r = verify_factor_model(&u, &cfg, &opts, Some(horizon))?;
    for name in &r.term_names {
        println!("{name:>20}: {:+.5}", r.term_mean(name).unwrap());
    }
    let ab = r.ablation.unwrap();
    println!("residual {:+.4} ± {:.4}, without ⟨X,Y⟩ term {:+.4}, pass = {}", r.mean, r.se, ab.mean, r.pass);
    let pw = verify_factor_model(&u, &cfg, &opts.with_mode(BracketMode::Pairwise), None)?;
    println!("pairwise brackets: mean |residual| = {:.1e}", pw.mean_abs);
    Ok(())
}
