//! Empirical Lipschitz constants of `m ↦ ∫ f^a dm + L^a V(t, m)`.

use serde::Serialize;

use super::{generator, AffineFeedback, ControlProblem, LqParams, MeasureArg, RiccatiSolution, ValueCandidate};
use crate::error::{invalid, Result};
use crate::measures::{w2_squared, EmpiricalMeasure};
use crate::quadrature::gauss_hermite_normal;
use crate::rng::RngStream;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditKind {
    /// Same variance, shifted mean.
    Translation,
    /// Same mean, different variance.
    Scaling,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub kind: AuditKind,
    pub from: (f64, f64),
    pub to: (f64, f64),
    pub w2: f64,
    pub ratio: f64,
    /// Closed-form ratio for translation and scaling pairs.
    pub oracle: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzAudit {
    pub t: f64,
    pub feedback: AffineFeedback,
    pub rows: Vec<AuditRow>,
    /// Max ratio over the first quarter of the pairs.
    pub max_ratio_coarse: f64,
    pub max_ratio: f64,
    /// Bound from the closed-form derivatives over the moment box.
    pub analytic_bound: f64,
    pub stable: bool,
    pub pass: bool,
}

/// Gauss–Hermite surrogate of `N(mean, var)`; transport between two such
/// surrogates is exact for the Gaussian pair.
fn surrogate(mean: f64, var: f64, nodes: &(Vec<f64>, Vec<f64>)) -> Result<EmpiricalMeasure> {
    let sd = var.sqrt();
    EmpiricalMeasure::weighted(1, nodes.0.iter().map(|z| mean + sd * z).collect(), nodes.1.clone())
}

/// `(∂_mean Φ, ∂_var Φ)` for `Φ(mean, var) = ∫ f^a dm + L^a V` with the
/// Riccati value and the uncentered feedback `a = c₀ + c₁x`.
pub fn lq_lipschitz_oracle(params: &LqParams, sol: &RiccatiSolution, t: f64, c0: f64, c1: f64, mean: f64) -> (f64, f64) {
    let [p, r, _] = sol.at(t);
    let d_mean = -c1 * (c0 + c1 * mean) - params.r * mean + 2.0 * r * c0 + 4.0 * r * c1 * mean;
    let d_var = -0.5 * c1 * c1 - 0.5 * params.q + 2.0 * p * c1;
    (d_mean, d_var)
}

/// Relative spread between coarse and full max ratios counted as stable.
const STABLE_REL: f64 = 0.1;
const SURROGATE_NODES: usize = 20;

/// Samples `pairs` measure pairs of each kind in the moment box
/// `mean ∈ means`, `var ∈ vars` and records
/// `|Φ(m') − Φ(m)| / W₂(m, m')`. Passes iff every ratio is finite and the
/// max ratio changes by at most 10% from a quarter of the pairs to all of
/// them.
#[allow(clippy::too_many_arguments)]
pub fn lipschitz_audit(
    problem: &ControlProblem,
    params: &LqParams,
    sol: &RiccatiSolution,
    value: &dyn ValueCandidate,
    t: f64,
    feedback: AffineFeedback,
    means: (f64, f64),
    vars: (f64, f64),
    pairs: usize,
    seed: u64,
) -> Result<LipschitzAudit> {
    if pairs < 4 || !(vars.0 > 0.0 && vars.1 >= vars.0 && means.1 >= means.0) {
        return Err(invalid("audit needs at least four pairs and a nondegenerate moment box"));
    }
    if feedback.centered {
        return Err(invalid("the audit holds the feedback fixed in x; use an uncentered feedback"));
    }
    let gh = gauss_hermite_normal(SURROGATE_NODES);
    let phi = |mean: f64, var: f64| -> Result<(f64, EmpiricalMeasure)> {
        let s = surrogate(mean, var, &gh)?;
        Ok((generator(problem, value, t, &[], MeasureArg::Empirical(&s), &feedback), s))
    };
    let mut g = RngStream::new(seed, 0).generator();
    let mut rows = Vec::with_capacity(3 * pairs);
    for j in 0..3 * pairs {
        let kind = [AuditKind::Translation, AuditKind::Scaling, AuditKind::Random][j % 3];
        let mean = g.random_range(means.0..=means.1);
        let var = g.random_range(vars.0..=vars.1);
        let to = match kind {
            AuditKind::Translation => (g.random_range(means.0..=means.1), var),
            AuditKind::Scaling => (mean, g.random_range(vars.0..=vars.1)),
            AuditKind::Random => (g.random_range(means.0..=means.1), g.random_range(vars.0..=vars.1)),
        };
        let (a, ma) = phi(mean, var)?;
        let (b, mb) = phi(to.0, to.1)?;
        let w2 = w2_squared(&ma, &mb)?.sqrt();
        if w2 == 0.0 {
            continue;
        }
        let (dm, dv) = lq_lipschitz_oracle(params, sol, t, feedback.c0, feedback.c1, 0.5 * (mean + to.0));
        let oracle = match kind {
            AuditKind::Translation => Some(dm.abs()),
            AuditKind::Scaling => Some(dv.abs() * (var.sqrt() + to.1.sqrt())),
            AuditKind::Random => None,
        };
        rows.push(AuditRow { kind, from: (mean, var), to, w2, ratio: (b - a).abs() / w2, oracle });
    }
    let max_of = |rs: &[AuditRow]| rs.iter().map(|r| r.ratio).fold(0.0, f64::max);
    let max_ratio = max_of(&rows);
    let max_ratio_coarse = max_of(&rows[..rows.len() / 4]);
    let mut analytic_bound = 0.0f64;
    for m in [means.0, means.1] {
        let (dm, dv) = lq_lipschitz_oracle(params, sol, t, feedback.c0, feedback.c1, m);
        analytic_bound = analytic_bound.max((dm * dm + (dv * 2.0 * vars.1.sqrt()).powi(2)).sqrt());
    }
    let finite = rows.iter().all(|r| r.ratio.is_finite());
    let stable = finite && (max_ratio - max_ratio_coarse) <= STABLE_REL * max_ratio;
    Ok(LipschitzAudit {
        t,
        feedback,
        rows,
        max_ratio_coarse,
        max_ratio,
        analytic_bound,
        stable,
        pass: finite && stable && max_ratio <= analytic_bound * (1.0 + 1e-9),
    })
}
