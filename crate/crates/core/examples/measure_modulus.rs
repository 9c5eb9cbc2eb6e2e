//! `E W₂(μ_s, μ_t)` along a particle system against
//! `‖b‖(t − s) + (‖σ‖² + ‖σ⁰‖²)^{1/2} √(t − s)`.

use std::sync::Arc;

use condflow::paths::{Partition, SdeCoefficients};
use condflow::particle::{measure_flow_modulus, EnsembleConfig, InitialLaw};

fn main() -> condflow::Result<()> {
    let partition = Arc::new(Partition::uniform(1.0, 64)?);
    let cfg = EnsembleConfig::new(
        SdeCoefficients::constant(0.3, 1.0, 0.5),
        InitialLaw::Gaussian { mean: vec![0.0], std: 1.0 },
        256,
        partition,
    );
    let pairs: Vec<(usize, usize)> = (0..20).map(|j| (j, j + 1 + 2 * j)).collect();
    let report = measure_flow_modulus(&cfg, &pairs, 16, 3)?;
    for r in &report.rows {
        println!(
            "s = {:.4} t = {:.4}  coupling {:.4} (exact W₂ {:.4})  bound {:.4}",
            r.s,
            r.t,
            r.mean,
            r.exact_w2.unwrap_or(f64::NAN),
            r.bound
        );
    }
    println!("pass = {}", report.pass);
    Ok(())
}
