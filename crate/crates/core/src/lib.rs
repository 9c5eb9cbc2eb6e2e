//! Monte Carlo verification of chain rules for flows of conditional laws.

pub mod chainrule;
pub mod cli;
pub mod error;
pub mod linalg;
pub mod measures;
pub mod mfc;
pub mod particle;
pub mod paths;
pub mod quadrature;
pub mod quadvar;
pub mod registry;
pub mod rng;

pub use error::{Error, Result};

/// Decimal with 17 significant digits, the lossless format used in every
/// CSV table.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}
