//! Itô-formula residuals over a grid of time steps and particle counts.

use std::sync::Arc;

use condflow::chainrule::{convergence_sweep, verify_ito, ToleranceRule, VerifyOptions};
use condflow::measures::CylindricalFunctional;
use condflow::paths::{Partition, SdeCoefficients};
use condflow::particle::{EnsembleConfig, InitialLaw};

fn main() -> condflow::Result<()> {
    let u = CylindricalFunctional::second_moment();
    let grid = [(16, 64, 32), (64, 64, 32), (256, 64, 32), (64, 16, 32), (64, 256, 32)];
    let table = convergence_sweep(&grid, |n, particles, paths| {
        let partition = Arc::new(Partition::uniform(1.0, n)?);
        let cfg = EnsembleConfig::new(SdeCoefficients::constant(0.0, 1.0, 0.5), InitialLaw::dirac(&[0.0]), particles, partition);
        verify_ito(&u, &cfg, &VerifyOptions::new(paths, 8, ToleranceRule::MeanAbs { c: 0.5 }))
    })?;
    print!("{}", table.to_csv());
    println!("n trend {:?}, particle trend {:?}", table.n_trend, table.particle_trend);
    Ok(())
}
