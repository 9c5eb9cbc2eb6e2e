//! Brownian specialization `dU = ψ⁰(m)·dW⁰` with `ψ⁰ = mean`, where the
//! `∂_xδ_m ψ⁰ : (σ⁰)ᵀ` term carries the whole correction.

use std::sync::Arc;

use condflow::chainrule::{verify_brownian_corollary, ToleranceRule, VerifyOptions};
use condflow::paths::{Partition, SdeCoefficients};
use condflow::particle::{EnsembleConfig, InitialLaw};
use condflow::registry;

fn main() -> condflow::Result<()> {
    let horizon = 1.0;
    let partition = Arc::new(Partition::uniform(horizon, 256)?);
    let cfg = EnsembleConfig::new(SdeCoefficients::constant(0.0, 0.0, 1.0), InitialLaw::dirac(&[0.0]), 8, partition);
    let opts = VerifyOptions::new(200, 5, ToleranceRule::SignedMean { c: 1.0 });
    let r = verify_brownian_corollary(&registry::brownian_psi0(), &cfg, &opts, Some(horizon))?;
    for name in &r.term_names {
        println!("{name:>18}: {:+.5}", r.term_mean(name).unwrap());
    }
    let ab = r.ablation.unwrap();
    println!("residual {:+.4} ± {:.4}, without psi0 term {:+.4}, pass = {}", r.mean, r.se, ab.mean, r.pass);
    Ok(())
}
