//! Finite-difference and integral-identity checks of the measure derivatives.

use serde::Serialize;

use super::{CylindricalFunctional, EmpiricalMeasure};
use crate::error::{invalid, Result};
use crate::quadrature::gauss_legendre_unit;

/// Two measures and their linear interpolation `m̄^λ = λ m' + (1 − λ) m`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurePair {
    pub m: EmpiricalMeasure,
    pub m_prime: EmpiricalMeasure,
}

impl MeasurePair {
    pub fn new(m: EmpiricalMeasure, m_prime: EmpiricalMeasure) -> Result<Self> {
        if m.dim() != m_prime.dim() {
            return Err(invalid("pair members live in different dimensions"));
        }
        Ok(MeasurePair { m, m_prime })
    }

    pub fn mixture(&self, lambda: f64) -> Result<EmpiricalMeasure> {
        EmpiricalMeasure::mixture(lambda, &self.m, &self.m_prime)
    }

    /// `∫ f d(m' − m)`.
    pub fn signed_integral(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.m_prime.integrate(&mut f) - self.m.integrate(&mut f)
    }

    /// Atoms of both measures, the default probe points for `δ²_m` checks.
    pub fn probe_points(&self) -> Vec<Vec<f64>> {
        let a = (0..self.m.len()).map(|i| self.m.atom(i).to_vec());
        let b = (0..self.m_prime.len()).map(|i| self.m_prime.atom(i).to_vec());
        a.chain(b).collect()
    }
}

/// One row of a finite-difference table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FdRow {
    pub eps: f64,
    pub error: f64,
    /// Slope of `log error` against `log ε` from the previous row.
    pub observed_order: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub name: String,
    pub rows: Vec<FdRow>,
    /// Every error at roundoff level.
    pub exact: bool,
    /// `error(ε)/ε` stays bounded: every measured order is at least
    /// [`MIN_ORDER`], or the errors are at roundoff level.
    pub order_ok: bool,
}

pub const MIN_ORDER: f64 = 0.9;

/// Errors at or below this relative level are treated as roundoff.
const ROUNDOFF: f64 = 1e-11;

fn validate_eps(eps: &[f64]) -> Result<()> {
    if eps.is_empty() || eps.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(invalid("ε values must lie in (0, 1]"));
    }
    if eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid("ε values must be strictly decreasing"));
    }
    Ok(())
}

fn tabulate(name: String, eps: &[f64], errors: Vec<f64>, scale: f64) -> DerivativeCheck {
    let floor = ROUNDOFF * scale.max(1.0);
    let mut rows = Vec::with_capacity(eps.len());
    let mut order_ok = true;
    for (i, (&e, &err)) in eps.iter().zip(&errors).enumerate() {
        let observed_order = if i > 0 && err > floor && errors[i - 1] > floor {
            let p = (errors[i - 1] / err).ln() / (eps[i - 1] / e).ln();
            if p < MIN_ORDER {
                order_ok = false;
            }
            Some(p)
        } else {
            None
        };
        rows.push(FdRow { eps: e, error: err, observed_order });
    }
    let exact = errors.iter().all(|e| *e <= floor);
    DerivativeCheck { name, rows, exact, order_ok }
}

/// Compares `(u(m̄^ε) − u(m))/ε` with `⟨δ_m u(m), m' − m⟩`.
pub fn fd_check_dm(u: &CylindricalFunctional, pair: &MeasurePair, eps: &[f64]) -> Result<DerivativeCheck> {
    validate_eps(eps)?;
    let base = u.eval(&pair.m)?;
    let frozen = u.freeze(&pair.m)?;
    let pairing = pair.signed_integral(|x| frozen.dm(x));
    let mut errors = Vec::with_capacity(eps.len());
    for &e in eps {
        let shifted = u.eval(&pair.mixture(e)?)?;
        errors.push(((shifted - base) / e - pairing).abs());
    }
    Ok(tabulate(u.name().to_string(), eps, errors, base.abs() + pairing.abs()))
}

/// Compares `(δ_m u(m̄^ε, x) − δ_m u(m, x))/ε` with `∫ δ²_m u(m, x, x̂) (m' − m)(dx̂)`,
/// taking the largest error over the probe points (default: all atoms).
pub fn fd_check_dm2(
    u: &CylindricalFunctional,
    pair: &MeasurePair,
    eps: &[f64],
    probes: Option<&[Vec<f64>]>,
) -> Result<DerivativeCheck> {
    validate_eps(eps)?;
    let owned;
    let probes = match probes {
        Some(p) => p,
        None => {
            owned = pair.probe_points();
            &owned
        }
    };
    let frozen = u.freeze(&pair.m)?;
    let base: Vec<f64> = probes.iter().map(|x| frozen.dm(x)).collect();
    let pairing: Vec<f64> = probes.iter().map(|x| pair.signed_integral(|xh| frozen.dm2(x, xh))).collect();
    let scale = base.iter().chain(&pairing).fold(0.0f64, |a, b| a.max(b.abs()));
    let mut errors = Vec::with_capacity(eps.len());
    for &e in eps {
        let shifted = u.freeze(&pair.mixture(e)?)?;
        let err = probes
            .iter()
            .enumerate()
            .map(|(i, x)| ((shifted.dm(x) - base[i]) / e - pairing[i]).abs())
            .fold(0.0, f64::max);
        errors.push(err);
    }
    Ok(tabulate(u.name().to_string(), eps, errors, scale))
}

/// Both sides of an integral identity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub error: f64,
}

/// Number of Gauss–Legendre nodes used for the `λ`-integrals.
pub const LAMBDA_NODES: usize = 16;

/// `u(m') − u(m)` against `∫₀¹ ∫ δ_m u(m̄^λ, x) (m' − m)(dx) dλ`.
pub fn integral_identity_dm(u: &CylindricalFunctional, pair: &MeasurePair) -> Result<IdentityCheck> {
    let lhs = u.eval(&pair.m_prime)? - u.eval(&pair.m)?;
    let (nodes, weights) = gauss_legendre_unit(LAMBDA_NODES);
    let mut rhs = 0.0;
    for (l, w) in nodes.iter().zip(&weights) {
        let frozen = u.freeze(&pair.mixture(*l)?)?;
        rhs += w * pair.signed_integral(|x| frozen.dm(x));
    }
    Ok(IdentityCheck { lhs, rhs, error: (lhs - rhs).abs() })
}

/// `δ_m u(m', x) − δ_m u(m, x)` against `∫₀¹ ∫ δ²_m u(m̄^λ, x, x̂) (m' − m)(dx̂) dλ`.
pub fn integral_identity_dm2(u: &CylindricalFunctional, pair: &MeasurePair, x: &[f64]) -> Result<IdentityCheck> {
    let lhs = u.freeze(&pair.m_prime)?.dm(x) - u.freeze(&pair.m)?.dm(x);
    let (nodes, weights) = gauss_legendre_unit(LAMBDA_NODES);
    let mut rhs = 0.0;
    for (l, w) in nodes.iter().zip(&weights) {
        let frozen = u.freeze(&pair.mixture(*l)?)?;
        rhs += w * pair.signed_integral(|xh| frozen.dm2(x, xh));
    }
    Ok(IdentityCheck { lhs, rhs, error: (lhs - rhs).abs() })
}

#[cfg(test)]
mod tests {
    use super::*;

    const EPS: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-4];

    fn pair(a: &[f64], b: &[f64]) -> MeasurePair {
        MeasurePair::new(EmpiricalMeasure::from_scalars(a).unwrap(), EmpiricalMeasure::from_scalars(b).unwrap()).unwrap()
    }

    #[test]
    fn mean_is_exact() {
        let c = fd_check_dm(&CylindricalFunctional::mean(), &pair(&[0.0, 1.0], &[3.0]), &EPS).unwrap();
        assert!(c.exact && c.order_ok);
    }

    #[test]
    fn mean_squared_dirac_pair_has_error_eps() {
        let c = fd_check_dm(&CylindricalFunctional::mean_squared(), &pair(&[0.0], &[1.0]), &EPS).unwrap();
        for r in &c.rows {
            assert!((r.error - r.eps).abs() < 1e-12 * r.eps.max(1e-4) / 1e-4);
        }
        assert!(c.order_ok && !c.exact);
        for r in &c.rows[1..] {
            assert!((r.observed_order.unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn identical_pair_is_zero() {
        let p = pair(&[0.5, -1.0], &[0.5, -1.0]);
        for u in [CylindricalFunctional::cos_mean(), CylindricalFunctional::variance()] {
            let c = fd_check_dm(&u, &p, &EPS).unwrap();
            assert!(c.rows.iter().all(|r| r.error == 0.0));
            let c2 = fd_check_dm2(&u, &p, &EPS, None).unwrap();
            assert!(c2.rows.iter().all(|r| r.error == 0.0));
        }
    }

    #[test]
    fn mean_squared_dm2_is_exact() {
        let p = pair(&[0.0, 2.0], &[1.0, 5.0, -1.0]);
        let c = fd_check_dm2(&CylindricalFunctional::mean_squared(), &p, &EPS, None).unwrap();
        assert!(c.exact);
    }

    #[test]
    fn second_moment_squared_dm2_has_order_one() {
        let p = pair(&[0.0, 2.0], &[1.0, 3.0]);
        let c = fd_check_dm2(&CylindricalFunctional::second_moment_squared(), &p, &EPS, None).unwrap();
        // δ_m u(m,x) = 2 v x², v(m̄^ε) = v + ε Δv, so the error is 0: order
        // is only visible for non-quadratic outer maps
        assert!(c.order_ok);
        let c = fd_check_dm2(&CylindricalFunctional::cos_mean(), &p, &EPS, None).unwrap();
        assert!(c.order_ok && !c.exact);
    }

    #[test]
    fn integral_identity_polynomial() {
        let p = pair(&[0.0, 2.0, -0.5], &[1.0, 3.0]);
        for u in [CylindricalFunctional::mean_squared(), CylindricalFunctional::variance()] {
            assert!(integral_identity_dm(&u, &p).unwrap().error < 1e-12);
            assert!(integral_identity_dm2(&u, &p, &[0.7]).unwrap().error < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_eps() {
        let p = pair(&[0.0], &[1.0]);
        let u = CylindricalFunctional::mean();
        assert!(fd_check_dm(&u, &p, &[1e-2, 1e-1]).is_err());
        assert!(fd_check_dm(&u, &p, &[]).is_err());
        assert!(fd_check_dm(&u, &p, &[0.0]).is_err());
    }
}
