//! Itô formula for `u(μ_t) = (∫x² dμ_t)` along a particle system with
//! idiosyncratic and common noise.

use std::sync::Arc;

use condflow::chainrule::{verify_ito, ToleranceRule, VerifyOptions};
use condflow::measures::CylindricalFunctional;
use condflow::paths::{Partition, SdeCoefficients};
use condflow::particle::{EnsembleConfig, InitialLaw};

fn main() -> condflow::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (n, particles, paths) = match args[..] {
        [n, p, m] => (n, p, m),
        _ => (256, 512, 16),
    };
    let partition = Arc::new(Partition::uniform(1.0, n)?);
    let cfg = EnsembleConfig::new(SdeCoefficients::constant(0.0, 1.0, 0.5), InitialLaw::dirac(&[0.0]), particles, partition);
    let opts = VerifyOptions::new(paths, 2024, ToleranceRule::MeanAbs { c: 0.5 });
    let t0 = std::time::Instant::now();
    let report = verify_ito(&CylindricalFunctional::second_moment(), &cfg, &opts)?;
    println!("n={n} N={particles} M={paths} ({:.1?})", t0.elapsed());
    for name in &report.term_names {
        println!("  {name:>14}: {:+.6}", report.term_mean(name).unwrap());
    }
    println!("  mean |res| = {:.3e}  q90 = {:.3e}  bound = {:.3e}  pass = {}", report.mean_abs, report.q90_abs, report.bound, report.pass);
    Ok(())
}
