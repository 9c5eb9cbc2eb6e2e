//! Named functionals, random-field specs and designed instances.

use crate::chainrule::{DriverKind, NoiseTag, RandomFieldSpec};
use crate::error::{invalid, Result};
use crate::measures::{CylindricalFunctional, FactorFunctional};

pub const WENTZELL_ABLATION: &str = "wentzell-ablation";
pub const BROWNIAN_PSI0: &str = "brownian-psi0";
pub const FACTOR_PRODUCT: &str = "factor-product";
pub const LQ_COMMON_NOISE: &str = "lq-common-noise";

const FUNCTIONALS: [&str; 6] = ["cos-mean", "mean", "mean-squared", "second-moment", "second-moment-squared", "variance"];

/// Every registry key, sorted.
pub fn names() -> Vec<&'static str> {
    let mut v: Vec<&str> = FUNCTIONALS.to_vec();
    v.extend([WENTZELL_ABLATION, BROWNIAN_PSI0, FACTOR_PRODUCT, LQ_COMMON_NOISE]);
    v.sort_unstable();
    v
}

/// Scalar cylindrical functionals by name.
pub fn functional(name: &str) -> Result<CylindricalFunctional> {
    Ok(match name {
        "cos-mean" => CylindricalFunctional::cos_mean(),
        "mean" => CylindricalFunctional::mean(),
        "mean-squared" => CylindricalFunctional::mean_squared(),
        "second-moment" => CylindricalFunctional::second_moment(),
        "second-moment-squared" => CylindricalFunctional::second_moment_squared(),
        "variance" => CylindricalFunctional::variance(),
        _ => return Err(invalid(format!("no functional named {name:?}"))),
    })
}

pub fn functionals() -> Vec<CylindricalFunctional> {
    FUNCTIONALS.iter().map(|n| functional(n).expect("registered")).collect()
}

/// `U_t(m) = ∫_0^t mean(m) dW⁰_s`. Along states with `σ⁰ = 1` the
/// `⟨N, M⟩` correction equals the horizon exactly.
pub fn wentzell_ablation() -> RandomFieldSpec {
    RandomFieldSpec::constant_in_time(WENTZELL_ABLATION, CylindricalFunctional::constant(1, 0.0)).with_driver(
        CylindricalFunctional::mean(),
        DriverKind::Martingale { scale: 1.0, noise: NoiseTag::Common { component: 0 } },
    )
}

/// Brownian specialization with `φ = ψ = 0` and `ψ⁰ = mean`; along states
/// with `σ⁰ = 1` the `∂_xδ_m ψ⁰ : (σ⁰)ᵀ` term equals the horizon.
pub fn brownian_psi0() -> RandomFieldSpec {
    RandomFieldSpec::constant_in_time(BROWNIAN_PSI0, CylindricalFunctional::constant(1, 0.0)).with_driver(
        CylindricalFunctional::mean(),
        DriverKind::Martingale { scale: 1.0, noise: NoiseTag::Common { component: 0 } },
    )
}

/// `u(t, m, y) = y · mean(m)`; with `σ⁰ = γ⁰ = 1` the `⟨X, Y⟩` term equals
/// the horizon.
pub fn factor_product() -> FactorFunctional {
    FactorFunctional::factor_product(&CylindricalFunctional::mean(), 1, 0, 1)
        .expect("valid factor product")
        .with_name(FACTOR_PRODUCT)
}

pub fn random_field(name: &str) -> Result<RandomFieldSpec> {
    match name {
        WENTZELL_ABLATION => Ok(wentzell_ablation()),
        BROWNIAN_PSI0 => Ok(brownian_psi0()),
        _ => Err(invalid(format!("no random field named {name:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sorted_and_complete() {
        let n = names();
        let mut s = n.clone();
        s.sort();
        assert_eq!(n, s);
        assert!(n.contains(&"mean-squared") && n.contains(&"lq-common-noise"));
        for f in FUNCTIONALS {
            assert_eq!(functional(f).unwrap().name(), f);
        }
        assert!(functional("nope").is_err());
    }
}
