//! Coefficient ODEs of the quadratic value ansatz
//! `V(t, m) = P(t) Var(m) + R(t) mean(m)² + c(t)`.

use serde::Serialize;

use super::LqParams;
use crate::error::{invalid, Error, Result};

/// Target agreement between successive step halvings.
pub const HALVING_TOL: f64 = 1e-8;
const MAX_STEPS: usize = 1 << 20;

/// `(P', R', c')` at `(P, R)`.
pub(crate) fn rhs(p: &LqParams, z: [f64; 3]) -> [f64; 3] {
    [
        0.5 * p.q - 2.0 * z[0] * z[0],
        0.5 * p.r - 2.0 * z[1] * z[1],
        -(z[0] * p.sigma * p.sigma + z[1] * p.sigma0 * p.sigma0),
    ]
}

/// Backward RK4 solution on a uniform grid of `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiccatiSolution {
    pub params: LqParams,
    pub steps: usize,
    /// Max difference against the solution with half as many steps.
    pub halving_diff: f64,
    #[serde(skip)]
    nodes: Vec<[f64; 3]>,
}

fn rk4_backward(params: &LqParams, steps: usize) -> Vec<[f64; 3]> {
    let h = -params.horizon / steps as f64;
    let mut z = [-0.5 * params.c_g, -0.5 * params.c_m, 0.0];
    let mut out = vec![[0.0; 3]; steps + 1];
    out[steps] = z;
    let add = |z: [f64; 3], k: [f64; 3], s: f64| [z[0] + s * k[0], z[1] + s * k[1], z[2] + s * k[2]];
    for j in (0..steps).rev() {
        let k1 = rhs(params, z);
        let k2 = rhs(params, add(z, k1, 0.5 * h));
        let k3 = rhs(params, add(z, k2, 0.5 * h));
        let k4 = rhs(params, add(z, k3, h));
        for i in 0..3 {
            z[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        out[j] = z;
    }
    out
}

/// Solves the Riccati system, halving the step until two successive grids
/// agree to [`HALVING_TOL`] at their shared nodes.
pub fn solve_riccati(params: &LqParams) -> Result<RiccatiSolution> {
    params.validate()?;
    let mut steps = 8;
    let mut coarse = rk4_backward(params, steps);
    loop {
        let fine = rk4_backward(params, 2 * steps);
        let diff = coarse
            .iter()
            .enumerate()
            .flat_map(|(j, z)| (0..3).map(move |i| (z[i], j, i)))
            .map(|(v, j, i)| (v - fine[2 * j][i]).abs())
            .fold(0.0, f64::max);
        if !diff.is_finite() {
            return Err(Error::NumericOverflow("Riccati solution blew up".into()));
        }
        steps *= 2;
        if diff < HALVING_TOL {
            return Ok(RiccatiSolution { params: params.clone(), steps, halving_diff: diff, nodes: fine });
        }
        if steps >= MAX_STEPS {
            return Err(invalid("Riccati step halving did not converge"));
        }
        coarse = fine;
    }
}

impl RiccatiSolution {
    /// `(P, R, c)` at `t ∈ [0, T]` by cubic Hermite interpolation.
    pub fn at(&self, t: f64) -> [f64; 3] {
        let horizon = self.params.horizon;
        let h = horizon / self.steps as f64;
        let s = (t.clamp(0.0, horizon) / h).min(self.steps as f64);
        let j = (s.floor() as usize).min(self.steps - 1);
        let u = s - j as f64;
        let (z0, z1) = (self.nodes[j], self.nodes[j + 1]);
        if u == 0.0 {
            return z0;
        }
        if u == 1.0 {
            return z1;
        }
        let (d0, d1) = (rhs(&self.params, z0), rhs(&self.params, z1));
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        let mut z = [0.0; 3];
        for i in 0..3 {
            z[i] = h00 * z0[i] + h10 * h * d0[i] + h01 * z1[i] + h11 * h * d1[i];
        }
        z
    }

    /// `(P', R', c')` at `t`.
    pub fn derivative(&self, t: f64) -> [f64; 3] {
        rhs(&self.params, self.at(t))
    }

    pub fn p(&self, t: f64) -> f64 {
        self.at(t)[0]
    }

    pub fn r(&self, t: f64) -> f64 {
        self.at(t)[1]
    }

    /// Optimal feedback `a*(t, x, m) = 2P(x − mean) + 2R mean` (unclamped).
    pub fn optimal_control(&self, t: f64, x: f64, mean: f64) -> f64 {
        let z = self.at(t);
        2.0 * z[0] * (x - mean) + 2.0 * z[1] * mean
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn terminal_values_match_the_reward() {
        let p = LqParams::default();
        let s = solve_riccati(&p).unwrap();
        assert_eq!(s.at(p.horizon), [-0.5 * p.c_g, -0.5 * p.c_m, 0.0]);
        assert!(s.halving_diff < HALVING_TOL);
    }

    #[test]
    fn zero_rewards_give_zero_solution() {
        let p = LqParams { q: 0.0, r: 0.0, c_g: 0.0, c_m: 0.0, ..LqParams::default() };
        let s = solve_riccati(&p).unwrap();
        assert_eq!(s.at(0.3), [0.0, 0.0, 0.0]);
    }

    #[test]
    fn interpolation_is_smooth_between_nodes() {
        let s = solve_riccati(&LqParams::default()).unwrap();
        let h = 1.0 / s.steps as f64;
        let a = s.p(0.5 + 0.37 * h);
        let lin = s.p(0.5) + 0.37 * h * s.derivative(0.5)[0];
        assert!((a - lin).abs() < h * h);
    }
}
