//! Mean-field control with common noise: the HJB generator, residuals of
//! candidate value functions and Monte Carlo dynamic-programming checks on a
//! linear-quadratic instance with a closed-form oracle.
//!
//! State and common noise are scalar. The value function and rewards see a
//! measure only through its moments.

mod audit;
mod dpp;
mod hjb;
mod riccati;

pub use audit::{lipschitz_audit, lq_lipschitz_oracle, AuditKind, AuditRow, LipschitzAudit};
pub use dpp::{constant_control_gap, dpp_check, gaussian_cloud, policy_value, DppExpectation, DppReport, DppSettings, PolicyValue};
pub use hjb::{family_gap, hjb_residual, ControlFamily, FamilyGap, HjbReport, HjbRow, LqLattice};
pub use riccati::{solve_riccati, RiccatiSolution, HALVING_TOL};

use std::fmt;
use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::{EmpiricalMeasure, MeasureMoments};
use crate::particle::FeedbackLaw;
use crate::paths::{SdeCoefficients, StateArgs};
use crate::quadrature::gauss_legendre_unit;

/// Arguments of the running reward.
#[derive(Debug, Clone, Copy)]
pub struct RewardArgs<'a> {
    pub t: f64,
    pub y: &'a [f64],
    pub m: &'a MeasureMoments,
    pub x: f64,
    pub a: f64,
}

pub type RunningReward = Arc<dyn Fn(&RewardArgs<'_>) -> f64 + Send + Sync>;
pub type TerminalReward = Arc<dyn Fn(&[f64], &MeasureMoments) -> f64 + Send + Sync>;

/// Maximize `E[∫ f(s, Y, μ, X, a) ds + g(Y_T, μ_T)]` over feedback
/// controls valued in `[−a_max, a_max]`.
#[derive(Clone)]
pub struct ControlProblem {
    pub name: String,
    pub coeffs: SdeCoefficients,
    pub running: RunningReward,
    pub terminal: TerminalReward,
    pub horizon: f64,
    pub a_max: f64,
}

impl fmt::Debug for ControlProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ControlProblem")
            .field("name", &self.name)
            .field("coeffs", &self.coeffs)
            .field("horizon", &self.horizon)
            .field("a_max", &self.a_max)
            .finish()
    }
}

impl ControlProblem {
    pub fn new(
        name: impl Into<String>,
        coeffs: SdeCoefficients,
        running: RunningReward,
        terminal: TerminalReward,
        horizon: f64,
        a_max: f64,
    ) -> Result<Self> {
        if coeffs.state_dim() != 1 || coeffs.common_dim() != 1 {
            return Err(invalid("control problems have scalar state and common noise"));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon must be positive"));
        }
        if !(a_max > 0.0 && a_max.is_finite()) {
            return Err(invalid("the control set must be a bounded interval"));
        }
        Ok(ControlProblem { name: name.into(), coeffs, running, terminal, horizon, a_max })
    }

    /// `dX = a dt + σ dW + σ⁰ dW⁰`,
    /// `f = −a²/2 − (q/2)(x − mean)² − (r/2) mean²`,
    /// `g = −(c_g/2) Var − (c_m/2) mean²`.
    pub fn lq(params: &LqParams, a_max: f64) -> Result<Self> {
        params.validate()?;
        let (sigma, sigma0, q, r, cg, cm) = (params.sigma, params.sigma0, params.q, params.r, params.c_g, params.c_m);
        let coeffs = SdeCoefficients::constant(0.0, sigma, sigma0).with_drift(|s: &StateArgs<'_>, out| out[0] = s.a, a_max);
        let running: RunningReward = Arc::new(move |s: &RewardArgs<'_>| {
            let mean = s.m.mean[0];
            -0.5 * s.a * s.a - 0.5 * q * (s.x - mean).powi(2) - 0.5 * r * mean * mean
        });
        let terminal: TerminalReward = Arc::new(move |_, m: &MeasureMoments| {
            -0.5 * cg * m.variance() - 0.5 * cm * (m.mean[0] * m.mean[0])
        });
        ControlProblem::new("lq-common-noise", coeffs, running, terminal, params.horizon, a_max)
    }
}

/// Constants of the linear-quadratic instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LqParams {
    pub horizon: f64,
    pub sigma: f64,
    pub sigma0: f64,
    pub q: f64,
    pub r: f64,
    pub c_g: f64,
    pub c_m: f64,
}

impl Default for LqParams {
    fn default() -> Self {
        LqParams { horizon: 1.0, sigma: 0.5, sigma0: 0.5, q: 2.0, r: 0.5, c_g: 1.0, c_m: 2.0 }
    }
}

impl LqParams {
    pub fn validate(&self) -> Result<()> {
        let all = [self.horizon, self.sigma, self.sigma0, self.q, self.r, self.c_g, self.c_m];
        if all.iter().any(|v| !v.is_finite()) || self.horizon <= 0.0 {
            return Err(invalid("LQ constants must be finite with a positive horizon"));
        }
        if self.q < 0.0 || self.r < 0.0 || self.c_g < 0.0 || self.c_m < 0.0 {
            return Err(invalid("LQ penalties must be nonnegative"));
        }
        Ok(())
    }
}

/// A measure argument: a Gaussian law given by its moments or an empirical
/// (possibly weighted) measure.
#[derive(Debug, Clone, Copy)]
pub enum MeasureArg<'a> {
    Gaussian { mean: f64, var: f64 },
    Empirical(&'a EmpiricalMeasure),
}

/// Gaussian integrals run over `mean ± TAIL·sd`.
const TAIL: f64 = 12.0;
const PANEL_NODES: usize = 20;

pub fn gaussian_moments(mean: f64, var: f64) -> MeasureMoments {
    MeasureMoments { dim: 1, mean: vec![mean], second: vec![var + mean * mean] }
}

fn panel_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre_unit(PANEL_NODES))
}

impl MeasureArg<'_> {
    pub fn moments(&self) -> MeasureMoments {
        match self {
            MeasureArg::Gaussian { mean, var } => gaussian_moments(*mean, *var),
            MeasureArg::Empirical(m) => MeasureMoments::of(m),
        }
    }

    /// `∫ h(x) m(dx)` for a vector-valued `h`, written into `out`.
    ///
    /// Gaussian laws use composite Gauss–Legendre panels of width at most
    /// two standard deviations, split at `kinks`.
    pub fn integrate(&self, kinks: &[f64], out: &mut [f64], mut h: impl FnMut(f64, &mut [f64])) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = vec![0.0; out.len()];
        match *self {
            MeasureArg::Empirical(m) => {
                for i in 0..m.len() {
                    h(m.atom(i)[0], &mut buf);
                    let w = m.weight(i);
                    out.iter_mut().zip(&buf).for_each(|(o, b)| *o += w * b);
                }
            }
            MeasureArg::Gaussian { mean, var } => {
                if var <= 0.0 {
                    h(mean, out);
                    return;
                }
                let sd = var.sqrt();
                let (lo, hi) = (mean - TAIL * sd, mean + TAIL * sd);
                let mut cuts = vec![lo];
                cuts.extend(kinks.iter().copied().filter(|k| *k > lo && *k < hi));
                cuts.push(hi);
                cuts.sort_by(f64::total_cmp);
                let (nodes, weights) = panel_rule();
                let norm = 1.0 / (sd * (2.0 * std::f64::consts::PI).sqrt());
                for w in cuts.windows(2) {
                    let panels = ((w[1] - w[0]) / (2.0 * sd)).ceil().max(1.0) as usize;
                    let width = (w[1] - w[0]) / panels as f64;
                    for p in 0..panels {
                        let a = w[0] + p as f64 * width;
                        for (z, wt) in nodes.iter().zip(weights) {
                            let x = a + z * width;
                            let dens = norm * (-0.5 * ((x - mean) / sd).powi(2)).exp();
                            h(x, &mut buf);
                            let c = wt * width * dens;
                            out.iter_mut().zip(&buf).for_each(|(o, b)| *o += c * b);
                        }
                    }
                }
            }
        }
    }
}

/// Candidate value function `V(t, y, m)` with the derivative fields the
/// generator needs. Measure derivatives are taken at scalar `x`; the
/// second-order interaction kernel is separable,
/// `∂_x∂_x̂δ²_m V(x, x̂) = Σ_ab H_ab g_a(x) g_b(x̂)`.
pub trait ValueCandidate: Send + Sync {
    fn value(&self, t: f64, y: &[f64], m: &MeasureMoments) -> f64;
    fn dt(&self, t: f64, y: &[f64], m: &MeasureMoments) -> f64;
    fn dy(&self, _t: f64, y: &[f64], _m: &MeasureMoments) -> Vec<f64> {
        vec![0.0; y.len()]
    }
    /// Row-major `d_y × d_y`.
    fn dyy(&self, _t: f64, y: &[f64], _m: &MeasureMoments) -> Vec<f64> {
        vec![0.0; y.len() * y.len()]
    }
    fn dx_dm(&self, t: f64, y: &[f64], m: &MeasureMoments, x: f64) -> f64;
    fn dxx_dm(&self, t: f64, y: &[f64], m: &MeasureMoments, x: f64) -> f64;
    fn dx_dm_dy(&self, _t: f64, y: &[f64], _m: &MeasureMoments, _x: f64) -> Vec<f64> {
        vec![0.0; y.len()]
    }
    fn pair_rank(&self) -> usize;
    fn pair_factors(&self, t: f64, y: &[f64], m: &MeasureMoments, x: f64, out: &mut [f64]);
    /// Row-major `H`.
    fn pair_matrix(&self, t: f64, y: &[f64], m: &MeasureMoments) -> Vec<f64>;
}

/// Time coefficients of the quadratic ansatz.
#[derive(Debug, Clone)]
pub enum QuadraticCoefficients {
    Riccati(Arc<RiccatiSolution>),
    Constant { p: f64, r: f64, c: f64 },
}

/// `V(t, m) = (P(t) + ε) Var(m) + R(t) mean(m)² + c(t)`.
#[derive(Debug, Clone)]
pub struct QuadraticValue {
    pub coefficients: QuadraticCoefficients,
    pub perturbation: f64,
}

impl QuadraticValue {
    pub fn riccati(sol: Arc<RiccatiSolution>) -> Self {
        QuadraticValue { coefficients: QuadraticCoefficients::Riccati(sol), perturbation: 0.0 }
    }

    pub fn constant(p: f64, r: f64, c: f64) -> Self {
        QuadraticValue { coefficients: QuadraticCoefficients::Constant { p, r, c }, perturbation: 0.0 }
    }

    /// The terminal reward of the LQ instance as a time-constant candidate.
    pub fn terminal(params: &LqParams) -> Self {
        Self::constant(-0.5 * params.c_g, -0.5 * params.c_m, 0.0)
    }

    pub fn perturbed(mut self, eps: f64) -> Self {
        self.perturbation = eps;
        self
    }

    /// `(P + ε, R, c)` and their time derivatives.
    fn coeffs(&self, t: f64) -> ([f64; 3], [f64; 3]) {
        let (mut z, dz) = match &self.coefficients {
            QuadraticCoefficients::Riccati(s) => (s.at(t), s.derivative(t)),
            QuadraticCoefficients::Constant { p, r, c } => ([*p, *r, *c], [0.0; 3]),
        };
        z[0] += self.perturbation;
        (z, dz)
    }
}

impl ValueCandidate for QuadraticValue {
    fn value(&self, t: f64, _y: &[f64], m: &MeasureMoments) -> f64 {
        let (z, _) = self.coeffs(t);
        z[0] * m.variance() + z[1] * (m.mean[0] * m.mean[0]) + z[2]
    }

    fn dt(&self, t: f64, _y: &[f64], m: &MeasureMoments) -> f64 {
        let (_, dz) = self.coeffs(t);
        dz[0] * m.variance() + dz[1] * m.mean[0] * m.mean[0] + dz[2]
    }

    fn dx_dm(&self, t: f64, _y: &[f64], m: &MeasureMoments, x: f64) -> f64 {
        let (z, _) = self.coeffs(t);
        let mean = m.mean[0];
        2.0 * z[0] * (x - mean) + 2.0 * z[1] * mean
    }

    fn dxx_dm(&self, t: f64, _y: &[f64], _m: &MeasureMoments, _x: f64) -> f64 {
        2.0 * self.coeffs(t).0[0]
    }

    fn pair_rank(&self) -> usize {
        1
    }

    fn pair_factors(&self, _t: f64, _y: &[f64], _m: &MeasureMoments, _x: f64, out: &mut [f64]) {
        out[0] = 1.0;
    }

    fn pair_matrix(&self, t: f64, _y: &[f64], _m: &MeasureMoments) -> Vec<f64> {
        let (z, _) = self.coeffs(t);
        vec![2.0 * (z[1] - z[0])]
    }
}

/// `a = clamp(c₀ + c₁(x − mean))`, or `clamp(c₀ + c₁ x)` when not centered.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AffineFeedback {
    pub c0: f64,
    pub c1: f64,
    pub centered: bool,
    pub a_max: f64,
}

impl AffineFeedback {
    pub fn centered(c0: f64, c1: f64, a_max: f64) -> Self {
        AffineFeedback { c0, c1, centered: true, a_max }
    }

    pub fn absolute(c0: f64, c1: f64, a_max: f64) -> Self {
        AffineFeedback { c0, c1, centered: false, a_max }
    }

    fn origin(&self, m: &MeasureMoments) -> f64 {
        if self.centered {
            m.mean[0]
        } else {
            0.0
        }
    }
}

impl FeedbackLaw for AffineFeedback {
    fn control(&self, _t: f64, x: &[f64], m: &MeasureMoments) -> f64 {
        (self.c0 + self.c1 * (x[0] - self.origin(m))).clamp(-self.a_max, self.a_max)
    }

    fn kinks(&self, _t: f64, m: &MeasureMoments) -> Vec<f64> {
        if self.c1 == 0.0 {
            return Vec::new();
        }
        let o = self.origin(m);
        vec![o + (-self.a_max - self.c0) / self.c1, o + (self.a_max - self.c0) / self.c1]
    }
}

/// Constant control `a ≡ value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstantFeedback(pub f64);

impl FeedbackLaw for ConstantFeedback {
    fn control(&self, _t: f64, _x: &[f64], _m: &MeasureMoments) -> f64 {
        self.0
    }
}

/// The Riccati feedback `clamp(2P(t)(x − mean) + 2R(t) mean)`.
#[derive(Debug, Clone)]
pub struct RiccatiFeedback {
    pub solution: Arc<RiccatiSolution>,
    pub a_max: f64,
}

impl FeedbackLaw for RiccatiFeedback {
    fn control(&self, t: f64, x: &[f64], m: &MeasureMoments) -> f64 {
        self.solution.optimal_control(t, x[0], m.mean[0]).clamp(-self.a_max, self.a_max)
    }

    fn kinks(&self, t: f64, m: &MeasureMoments) -> Vec<f64> {
        let z = self.solution.at(t);
        AffineFeedback::centered(2.0 * z[1] * m.mean[0], 2.0 * z[0], self.a_max).kinks(t, m)
    }
}

/// `∫ f^a dm + L^a V(t, y, m)` with
///
/// ```text
/// L^a V = ∫ (b·∂_xδ_m V + ½(σσᵀ + σ⁰σ⁰ᵀ) : ∂²_xδ_m V + σ⁰γ⁰ᵀ : ∂_xδ_m∂_y V)(x) m(dx)
///       + ½ ∫∫ σ⁰(x)σ⁰(x̂)ᵀ : ∂_x∂_x̂δ²_m V(x, x̂) m(dx) m(dx̂)
/// ```
///
/// The factor-only terms `∂_t V + k·∂_y V + ½(γγᵀ + γ⁰γ⁰ᵀ) : ∂²_y V` are
/// not included; see [`hjb_residual`].
pub fn generator(
    problem: &ControlProblem,
    value: &dyn ValueCandidate,
    t: f64,
    y: &[f64],
    m: MeasureArg<'_>,
    control: &dyn FeedbackLaw,
) -> f64 {
    let mo = m.moments();
    let coeffs = &problem.coeffs;
    let dy = coeffs.factor_dim();
    let mut gamma0 = vec![0.0; dy];
    if dy > 0 {
        let mut fv = coeffs.factor_buffer();
        coeffs.evaluate_factor(t, y, &mut fv);
        gamma0.copy_from_slice(&fv.common_diffusion);
    }
    let rank = value.pair_rank();
    let h = value.pair_matrix(t, y, &mo);
    let mut buf = coeffs.values_buffer();
    let mut g = vec![0.0; rank];
    let mut out = vec![0.0; 1 + rank];
    m.integrate(&control.kinks(t, &mo), &mut out, |x, o| {
        let a = control.control(t, &[x], &mo);
        coeffs.evaluate(&StateArgs { t, x: &[x], y, m: &mo, a }, &mut buf);
        let (b, s, s0) = (buf.drift[0], buf.diffusion[0], buf.common_diffusion[0]);
        let mut v = (problem.running)(&RewardArgs { t, y, m: &mo, x, a })
            + b * value.dx_dm(t, y, &mo, x)
            + 0.5 * (s * s + s0 * s0) * value.dxx_dm(t, y, &mo, x);
        if dy > 0 {
            let mixed = value.dx_dm_dy(t, y, &mo, x);
            v += s0 * gamma0.iter().zip(&mixed).map(|(g, c)| g * c).sum::<f64>();
        }
        o[0] = v;
        value.pair_factors(t, y, &mo, x, &mut g);
        for (oa, ga) in o[1..].iter_mut().zip(&g) {
            *oa = s0 * ga;
        }
    });
    let s = &out[1..];
    let mut double = 0.0;
    for a in 0..rank {
        for b in 0..rank {
            double += h[a * rank + b] * s[a] * s[b];
        }
    }
    out[0] + 0.5 * double
}

/// `∂_t V + k·∂_y V + ½(γγᵀ + γ⁰γ⁰ᵀ) : ∂²_y V`.
pub(crate) fn factor_part(problem: &ControlProblem, value: &dyn ValueCandidate, t: f64, y: &[f64], mo: &MeasureMoments) -> f64 {
    let mut v = value.dt(t, y, mo);
    let dy = problem.coeffs.factor_dim();
    if dy == 0 {
        return v;
    }
    let mut fv = problem.coeffs.factor_buffer();
    problem.coeffs.evaluate_factor(t, y, &mut fv);
    let grad = value.dy(t, y, mo);
    let hess = value.dyy(t, y, mo);
    v += fv.drift.iter().zip(&grad).map(|(k, g)| k * g).sum::<f64>();
    let d0 = problem.coeffs.common_dim();
    for i in 0..dy {
        for j in 0..dy {
            let mut c = 0.0;
            for l in 0..dy {
                c += fv.diffusion[i * dy + l] * fv.diffusion[j * dy + l];
            }
            for l in 0..d0 {
                c += fv.common_diffusion[i * d0 + l] * fv.common_diffusion[j * d0 + l];
            }
            v += 0.5 * c * hess[i * dy + j];
        }
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_problem() -> ControlProblem {
        let coeffs = SdeCoefficients::zero(1, 1);
        ControlProblem::new("zero", coeffs, Arc::new(|_| 0.0), Arc::new(|_, _| 0.0), 1.0, 1.0).unwrap()
    }

    #[test]
    fn zero_value_zero_reward() {
        let p = zero_problem();
        let v = QuadraticValue::constant(0.0, 0.0, 0.0);
        for a in [-1.0, 0.0, 0.7] {
            let g = generator(&p, &v, 0.2, &[], MeasureArg::Gaussian { mean: 0.1, var: 0.4 }, &ConstantFeedback(a));
            assert_eq!(g, 0.0);
        }
    }

    #[test]
    fn control_cost_only() {
        let mut p = zero_problem();
        p.running = Arc::new(|s| -0.5 * s.a * s.a);
        let v = QuadraticValue::constant(0.0, 0.0, 0.0);
        let m = MeasureArg::Gaussian { mean: 0.3, var: 0.5 };
        let g = generator(&p, &v, 0.0, &[], m, &AffineFeedback::absolute(0.2, 0.5, 10.0));
        // E[(0.2 + 0.5 X)²] with X ~ N(0.3, 0.5)
        let exact = -0.5 * (0.35f64.powi(2) + 0.25 * 0.5);
        assert!((g - exact).abs() < 1e-12, "{g} {exact}");
        assert_eq!(generator(&p, &v, 0.0, &[], m, &ConstantFeedback(0.0)), 0.0);
    }

    #[test]
    fn gaussian_quadrature_handles_kinks() {
        let m = MeasureArg::Gaussian { mean: 0.0, var: 1.0 };
        let mut out = [0.0];
        // E[max(X, 0)] = 1/√(2π)
        m.integrate(&[0.0], &mut out, |x, o| o[0] = x.max(0.0));
        assert!((out[0] - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn affine_kinks_bound_the_clamp() {
        let f = AffineFeedback::centered(1.0, 2.0, 3.0);
        let m = gaussian_moments(0.5, 1.0);
        let k = f.kinks(0.0, &m);
        assert_eq!(f.control(0.0, &[k[0]], &m), -3.0);
        assert!((f.control(0.0, &[k[1]], &m) - 3.0).abs() < 1e-15);
    }
}
