//! Monte Carlo policy values and dynamic-programming gaps.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::{gaussian_moments, ControlProblem, RewardArgs, RiccatiSolution, ValueCandidate};
use crate::error::{invalid, Result};
use crate::measures::EmpiricalMeasure;
use crate::particle::{simulate_ensemble, EnsembleConfig, FeedbackLaw, InitialLaw, ParticleEnsemble};
use crate::paths::Partition;
use crate::quadrature::gauss_legendre_unit;
use crate::quadvar::mean_stderr;
use crate::rng::{normal, tags, RngStream};

/// Monte Carlo sizes: `steps` Euler steps over `[t, θ]`, `particles` per
/// common path and `paths` common paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DppSettings {
    pub steps: usize,
    pub particles: usize,
    pub paths: usize,
    pub seed: u64,
    /// Constant `C` of the `C·Δt` discretization allowance.
    pub c: f64,
}

/// `n` atoms drawn from `N(0, 1)` and affinely adjusted so the uniform
/// measure has exactly the requested mean and variance.
pub fn gaussian_cloud(mean: f64, var: f64, n: usize, rng: RngStream) -> Result<EmpiricalMeasure> {
    if n < 2 || var < 0.0 {
        return Err(invalid("a Gaussian cloud needs two atoms and a nonnegative variance"));
    }
    let mut g = rng.generator();
    let mut z: Vec<f64> = (0..n).map(|_| normal(&mut g)).collect();
    let mu = z.iter().sum::<f64>() / n as f64;
    z.iter_mut().for_each(|v| *v -= mu);
    let sd = (z.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
    let s = var.sqrt() / sd;
    EmpiricalMeasure::from_scalars(&z.iter().map(|v| mean + s * v).collect::<Vec<_>>())
}

fn run_paths(
    problem: &ControlProblem,
    control: Arc<dyn FeedbackLaw>,
    t: f64,
    theta: f64,
    law: (f64, f64),
    settings: &DppSettings,
    finish: impl Fn(&ParticleEnsemble) -> f64 + Sync,
) -> Result<Vec<f64>> {
    if !(theta > t) {
        return Err(invalid("the later time must exceed the start time"));
    }
    if t < 0.0 || theta > problem.horizon + 1e-12 {
        return Err(invalid("times must lie in the control horizon"));
    }
    if settings.steps == 0 || settings.paths == 0 {
        return Err(invalid("steps and paths must be positive"));
    }
    let root = RngStream::new(settings.seed, 0);
    let cloud = gaussian_cloud(law.0, law.1, settings.particles, root.derive(tags::INITIAL_LAW, 0))?;
    let partition = Arc::new(Partition::uniform(theta - t, settings.steps)?);
    let cfg = EnsembleConfig::new(problem.coeffs.clone(), InitialLaw::Measure(cloud), settings.particles, partition)
        .with_control(control)
        .starting_at(t);
    (0..settings.paths)
        .into_par_iter()
        .map(|r| {
            let ens = simulate_ensemble(&cfg, root.derive(tags::OUTER_PATH, r as u64))?;
            let n = ens.partition().cells();
            let y: [f64; 0] = [];
            let mut running = 0.0;
            for k in 0..n {
                let m = ens.moments(k);
                let tk = ens.time(k);
                let mut s = 0.0;
                for i in 0..ens.len() {
                    let x = ens.state(k, i)[0];
                    let a = ens.control_at(k, i);
                    s += (problem.running)(&RewardArgs { t: tk, y: &y, m, x, a });
                }
                running += ens.partition().dt(k) * s / ens.len() as f64;
            }
            Ok(running + finish(&ens))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyValue {
    pub estimate: f64,
    pub stderr: f64,
    /// Candidate value `V(t, m)` the estimate is compared with.
    pub target: f64,
    pub pass: bool,
}

/// `E[∫_t^T f ds + g(μ_T)]` under `control` from `N(mean, var)` at `t`,
/// checked against `value` within 3 standard errors.
pub fn policy_value(
    problem: &ControlProblem,
    value: &dyn ValueCandidate,
    control: Arc<dyn FeedbackLaw>,
    t: f64,
    law: (f64, f64),
    settings: &DppSettings,
) -> Result<PolicyValue> {
    let xs = run_paths(problem, control, t, problem.horizon, law, settings, |ens| {
        (problem.terminal)(&[], ens.moments(ens.partition().cells()))
    })?;
    let (estimate, stderr) = mean_stderr(&xs);
    let target = value.value(t, &[], &gaussian_moments(law.0, law.1));
    Ok(PolicyValue { estimate, stderr, target, pass: (estimate - target).abs() <= 3.0 * stderr })
}

/// What a DPP gap should look like.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DppExpectation {
    /// `|gap| ≤ 3 SE + C·Δt`.
    Optimal,
    /// `gap < −3 SE`, and within 25% of `oracle` when given.
    Suboptimal { oracle: Option<f64> },
    /// `gap ≤ 3 SE`.
    Admissible,
}

/// Relative agreement required between a suboptimal gap and its oracle.
pub const ORACLE_REL_TOL: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DppReport {
    pub t: f64,
    pub theta: f64,
    pub mean: f64,
    pub var: f64,
    pub settings: DppSettings,
    pub expectation: DppExpectation,
    pub estimate: f64,
    pub stderr: f64,
    pub dt: f64,
    pub bound: f64,
    pub pass: bool,
    #[serde(skip)]
    pub per_path: Vec<f64>,
}

/// Estimates `E[∫_t^θ f ds + V(θ, μ_θ)] − V(t, m)` under `control` from
/// `m = N(mean, var)`.
pub fn dpp_check(
    problem: &ControlProblem,
    value: &dyn ValueCandidate,
    control: Arc<dyn FeedbackLaw>,
    t: f64,
    theta: f64,
    law: (f64, f64),
    settings: &DppSettings,
    expectation: DppExpectation,
) -> Result<DppReport> {
    let v0 = value.value(t, &[], &gaussian_moments(law.0, law.1));
    let per_path = run_paths(problem, control, t, theta, law, settings, |ens| {
        value.value(theta, &[], ens.moments(ens.partition().cells())) - v0
    })?;
    let (estimate, stderr) = mean_stderr(&per_path);
    let dt = (theta - t) / settings.steps as f64;
    let (bound, pass) = match expectation {
        DppExpectation::Optimal => {
            let b = 3.0 * stderr + settings.c * dt;
            (b, estimate.abs() <= b)
        }
        DppExpectation::Suboptimal { oracle } => {
            let close = oracle.is_none_or(|o| (estimate - o).abs() <= ORACLE_REL_TOL * o.abs());
            (-3.0 * stderr, estimate < -3.0 * stderr && close)
        }
        DppExpectation::Admissible => (3.0 * stderr, estimate <= 3.0 * stderr),
    };
    Ok(DppReport {
        t,
        theta,
        mean: law.0,
        var: law.1,
        settings: *settings,
        expectation,
        estimate,
        stderr,
        dt,
        bound,
        pass,
        per_path,
    })
}

/// Limit DPP gap of the constant control `a ≡ alpha` against the Riccati
/// value:
///
/// ```text
/// −½ ∫_t^θ [4P² (Var + σ²(s − t)) + (α − 2R(mean + α(s − t)))² + 4R²σ⁰²(s − t)] ds
/// ```
pub fn constant_control_gap(sol: &RiccatiSolution, t: f64, theta: f64, law: (f64, f64), alpha: f64) -> f64 {
    let (mean, var) = law;
    let (s2, s02) = (sol.params.sigma.powi(2), sol.params.sigma0.powi(2));
    let (nodes, weights) = gauss_legendre_unit(32);
    let h = theta - t;
    let mut acc = 0.0;
    for (z, w) in nodes.iter().zip(&weights) {
        let u = z * h;
        let [p, r, _] = sol.at(t + u);
        let drift = alpha - 2.0 * r * (mean + alpha * u);
        acc += w * (4.0 * p * p * (var + s2 * u) + drift * drift + 4.0 * r * r * s02 * u);
    }
    -0.5 * h * acc
}
