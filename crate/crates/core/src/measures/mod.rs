//! Empirical measures, quadratic Wasserstein cost, and the cylindrical
//! functional calculus.

mod checks;
mod functional;

pub use checks::{
    fd_check_dm, fd_check_dm2, integral_identity_dm, integral_identity_dm2, DerivativeCheck, FdRow, IdentityCheck, MeasurePair,
    LAMBDA_NODES, MIN_ORDER,
};
pub use functional::{
    d2x_dm, d_lions, dm, dm2, dm2_cross, eval, Combination, Cosine, CylindricalFunctional, CylindricalLift,
    FactorFunctional, FactorJet, FactorOuter, FactorProduct, FactorSum, FrozenDerivatives, FrozenFactor, Linear,
    OuterFunction, QuadraticForm, ScalarMap, SquaredNorm, TestFunction, TimeLinear,
};

use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// Largest atom count for which multi-dimensional transport is solved by
/// enumerating assignments.
pub const MAX_BRUTE_FORCE_ATOMS: usize = 8;

/// A finitely supported probability measure. Weights are uniform unless
/// the measure was built as a mixture or from explicit weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmpiricalMeasure {
    dim: usize,
    atoms: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl EmpiricalMeasure {
    /// Uniform measure on row-major `atoms` of dimension `dim`.
    pub fn new(dim: usize, atoms: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("measure dimension must be at least 1"));
        }
        if atoms.is_empty() {
            return Err(invalid("an empirical measure needs at least one atom"));
        }
        if atoms.len() % dim != 0 {
            return Err(invalid("atom buffer length is not a multiple of the dimension"));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(invalid("atoms must be finite"));
        }
        Ok(EmpiricalMeasure { dim, atoms, weights: None })
    }

    pub fn from_scalars(atoms: &[f64]) -> Result<Self> {
        Self::new(1, atoms.to_vec())
    }

    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::new(point.len(), point.to_vec())
    }

    /// Measure with explicit nonnegative weights (renormalized to sum 1).
    pub fn weighted(dim: usize, atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let mut m = Self::new(dim, atoms)?;
        if weights.len() != m.len() {
            return Err(invalid("one weight per atom is required"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("weights must have positive mass"));
        }
        m.weights = Some(weights.into_iter().map(|w| w / total).collect());
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.atoms.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn is_uniform(&self) -> bool {
        self.weights.is_none()
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.dim..(i + 1) * self.dim]
    }

    pub fn weight(&self, i: usize) -> f64 {
        match &self.weights {
            Some(w) => w[i],
            None => 1.0 / self.len() as f64,
        }
    }

    /// `∫ f dm`.
    pub fn integrate(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        match &self.weights {
            None => {
                let s: f64 = (0..self.len()).map(|i| f(self.atom(i))).sum();
                s / self.len() as f64
            }
            Some(w) => (0..self.len()).map(|i| w[i] * f(self.atom(i))).sum(),
        }
    }

    pub fn mean(&self) -> Vec<f64> {
        (0..self.dim).map(|j| self.integrate(|x| x[j])).collect()
    }

    pub fn moments(&self) -> MeasureMoments {
        MeasureMoments::of(self)
    }

    /// `λ m' + (1 − λ) m` as a weighted union of atoms. The endpoints return
    /// the original measures unchanged.
    pub fn mixture(lambda: f64, m: &EmpiricalMeasure, m_prime: &EmpiricalMeasure) -> Result<EmpiricalMeasure> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(invalid(format!("mixing weight {lambda} outside [0, 1]")));
        }
        if m.dim != m_prime.dim {
            return Err(invalid("cannot mix measures of different dimensions"));
        }
        if lambda == 0.0 {
            return Ok(m.clone());
        }
        if lambda == 1.0 {
            return Ok(m_prime.clone());
        }
        let mut atoms = m.atoms.clone();
        atoms.extend_from_slice(&m_prime.atoms);
        let mut weights: Vec<f64> = (0..m.len()).map(|i| (1.0 - lambda) * m.weight(i)).collect();
        weights.extend((0..m_prime.len()).map(|i| lambda * m_prime.weight(i)));
        Ok(EmpiricalMeasure { dim: m.dim, atoms, weights: Some(weights) })
    }

    /// Atoms of a scalar measure sorted increasingly with their weights.
    fn sorted_scalar(&self) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = (0..self.len()).map(|i| (self.atoms[i], self.weight(i))).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }
}

/// Uniform measure on the given atoms.
pub fn empirical(dim: usize, atoms: Vec<f64>) -> Result<EmpiricalMeasure> {
    EmpiricalMeasure::new(dim, atoms)
}

/// Mean and raw second-moment matrix of a measure; the only measure
/// information the coefficients of the particle system may depend on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeasureMoments {
    pub dim: usize,
    pub mean: Vec<f64>,
    /// `∫ x xᵀ dm`, row-major.
    pub second: Vec<f64>,
}

impl MeasureMoments {
    pub fn of(m: &EmpiricalMeasure) -> Self {
        let d = m.dim;
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d * d];
        for i in 0..m.len() {
            let w = m.weight(i);
            let x = m.atom(i);
            for a in 0..d {
                mean[a] += w * x[a];
                for b in 0..d {
                    second[a * d + b] += w * x[a] * x[b];
                }
            }
        }
        MeasureMoments { dim: d, mean, second }
    }

    /// Moments of the uniform measure on row-major points.
    pub fn of_points(dim: usize, points: &[f64]) -> Self {
        let n = points.len() / dim;
        let mut mean = vec![0.0; dim];
        let mut second = vec![0.0; dim * dim];
        for x in points.chunks_exact(dim) {
            for a in 0..dim {
                mean[a] += x[a];
                for b in 0..dim {
                    second[a * dim + b] += x[a] * x[b];
                }
            }
        }
        let inv = 1.0 / n as f64;
        mean.iter_mut().for_each(|v| *v *= inv);
        second.iter_mut().for_each(|v| *v *= inv);
        MeasureMoments { dim, mean, second }
    }

    /// Scalar variance (first coordinate).
    pub fn variance(&self) -> f64 {
        self.second[0] - self.mean[0] * self.mean[0]
    }

    pub fn covariance(&self) -> Vec<f64> {
        let d = self.dim;
        let mut c = self.second.clone();
        for a in 0..d {
            for b in 0..d {
                c[a * d + b] -= self.mean[a] * self.mean[b];
            }
        }
        c
    }
}

/// Squared quadratic transport cost `inf_π ∫ |x − x'|² π(dx, dx')`.
///
/// Scalar measures use the monotone (quantile) coupling and accept any atom
/// counts and weights. In higher dimension both measures must be uniform
/// with the same number of atoms, at most [`MAX_BRUTE_FORCE_ATOMS`].
pub fn w2_squared(m: &EmpiricalMeasure, m_prime: &EmpiricalMeasure) -> Result<f64> {
    if m.dim != m_prime.dim {
        return Err(invalid("measures live in different dimensions"));
    }
    if m.dim == 1 {
        return Ok(w2_squared_scalar(m, m_prime));
    }
    if !m.is_uniform() || !m_prime.is_uniform() || m.len() != m_prime.len() {
        return Err(Error::Unsupported(
            "multi-dimensional transport needs uniform measures with equal atom counts".into(),
        ));
    }
    if m.len() > MAX_BRUTE_FORCE_ATOMS {
        return Err(Error::Unsupported(format!(
            "multi-dimensional transport is limited to {MAX_BRUTE_FORCE_ATOMS} atoms"
        )));
    }
    Ok(assignment_cost(m, m_prime))
}

fn w2_squared_scalar(m: &EmpiricalMeasure, m_prime: &EmpiricalMeasure) -> f64 {
    let a = m.sorted_scalar();
    let b = m_prime.sorted_scalar();
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut cost = 0.0;
    loop {
        let mass = ra.min(rb);
        let diff = a[i].0 - b[j].0;
        cost += mass * diff * diff;
        ra -= mass;
        rb -= mass;
        // exhausted atoms advance; residual roundoff below 1e-15 is dropped
        if ra <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra = a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb = b[j].1;
        }
    }
    cost
}

fn assignment_cost(m: &EmpiricalMeasure, m_prime: &EmpiricalMeasure) -> f64 {
    let n = m.len();
    let cost = |i: usize, j: usize| -> f64 { m.atom(i).iter().zip(m_prime.atom(j)).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut perm: Vec<usize> = (0..n).collect();
    let total = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(i, &j)| cost(i, j)).sum::<f64>() };
    let mut best = total(&perm);
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(total(&perm));
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    best / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empirical_basics() {
        let m = EmpiricalMeasure::from_scalars(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.mean(), vec![2.0]);
        let d = EmpiricalMeasure::from_scalars(&[5.0]).unwrap();
        assert_eq!(d.mean(), vec![5.0]);
        assert_eq!(d.moments().variance(), 0.0);
        let z = EmpiricalMeasure::from_scalars(&[0.0, 0.0]).unwrap();
        assert_eq!(z.mean(), vec![0.0]);
        assert_eq!(z.len(), 2);
        assert!(matches!(EmpiricalMeasure::from_scalars(&[]), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn w2_examples() {
        let d0 = EmpiricalMeasure::from_scalars(&[0.0]).unwrap();
        let d1 = EmpiricalMeasure::from_scalars(&[1.0]).unwrap();
        assert_eq!(w2_squared(&d0, &d1).unwrap(), 1.0);
        assert_eq!(w2_squared(&d1, &d1).unwrap(), 0.0);
        let a = EmpiricalMeasure::from_scalars(&[0.0, 2.0]).unwrap();
        let b = EmpiricalMeasure::from_scalars(&[1.0, 3.0]).unwrap();
        assert_eq!(w2_squared(&a, &b).unwrap(), 1.0);
    }

    #[test]
    fn w2_unequal_counts_scalar() {
        // δ_0 against uniform{−1, 1}: every coupling costs 1
        let a = EmpiricalMeasure::from_scalars(&[0.0]).unwrap();
        let b = EmpiricalMeasure::from_scalars(&[-1.0, 1.0]).unwrap();
        assert!((w2_squared(&a, &b).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn w2_multi_dimensional() {
        let a = EmpiricalMeasure::new(2, vec![0.0, 0.0, 1.0, 1.0]).unwrap();
        let b = EmpiricalMeasure::new(2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(w2_squared(&a, &b).unwrap(), 0.0);
        let c = EmpiricalMeasure::new(2, vec![0.0, 0.0]).unwrap();
        assert!(matches!(w2_squared(&a, &c), Err(Error::Unsupported(_))));
        let big = EmpiricalMeasure::new(2, vec![0.0; 18]).unwrap();
        assert!(matches!(w2_squared(&big, &big), Err(Error::Unsupported(_))));
    }

    #[test]
    fn mixture_endpoints_are_exact() {
        let m = EmpiricalMeasure::from_scalars(&[0.0, 2.0]).unwrap();
        let mp = EmpiricalMeasure::from_scalars(&[1.0, 5.0, 7.0]).unwrap();
        assert_eq!(EmpiricalMeasure::mixture(0.0, &m, &mp).unwrap(), m);
        assert_eq!(EmpiricalMeasure::mixture(1.0, &m, &mp).unwrap(), mp);
        let half = EmpiricalMeasure::mixture(0.5, &m, &mp).unwrap();
        assert_eq!(half.len(), 5);
        let expected = 0.5 * 1.0 + 0.5 * 13.0 / 3.0;
        assert!((half.mean()[0] - expected).abs() < 1e-14);
        assert!(EmpiricalMeasure::mixture(1.5, &m, &mp).is_err());
    }

    #[test]
    fn moments_of_points_match_measure() {
        let pts = vec![1.0, -2.0, 0.5, 3.0];
        let m = EmpiricalMeasure::from_scalars(&pts).unwrap();
        let a = MeasureMoments::of(&m);
        let b = MeasureMoments::of_points(1, &pts);
        assert!((a.mean[0] - b.mean[0]).abs() < 1e-15);
        assert!((a.variance() - b.variance()).abs() < 1e-14);
    }
}
