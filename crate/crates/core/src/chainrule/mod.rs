//! Both sides of the chain rules for flows of conditional laws, evaluated on
//! simulated particle systems.
//!
//! Every verifier simulates `M` independent common noise paths, each with an
//! ensemble of `N` particles, and reports per path the increment of the
//! functional (left side), each right-side term discretized with
//! left-endpoint evaluation, and the residual.

mod engine;
mod field;
mod report;
mod sweep;

pub use field::{build_random_field, DriverKind, FieldDriver, NoiseTag, RandomField, RandomFieldSpec};
pub use report::{quantile, ReportRow, RunSize, TargetCheck, ToleranceRule, VerificationReport};
pub use sweep::{convergence_sweep, SweepRow, SweepTable};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::measures::{CylindricalFunctional, FactorFunctional};
use crate::particle::{simulate_ensemble, EnsembleConfig, ParticleEnsemble};
use crate::rng::{tags, RngStream};
use engine::{correction_term, factor_second_term, measure_terms, mixed_factor_term, StepData};

/// How bracket increments `d⟨X⟩`, `d⟨X, X̂⟩`, `d⟨N, X⟩`, `d⟨X, Y⟩` are
/// discretized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BracketMode {
    /// `σσᵀΔt`-type increments from the left-endpoint coefficients.
    #[default]
    Analytic,
    /// Realized products of path increments.
    Pairwise,
}

/// Monte Carlo settings shared by the verifiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    /// Outer (common noise) paths `M`.
    pub paths: usize,
    pub seed: u64,
    pub mode: BracketMode,
    pub rule: ToleranceRule,
}

impl VerifyOptions {
    pub fn new(paths: usize, seed: u64, rule: ToleranceRule) -> Self {
        VerifyOptions { paths, seed, mode: BracketMode::Analytic, rule }
    }

    pub fn with_mode(mut self, mode: BracketMode) -> Self {
        self.mode = mode;
        self
    }

    /// Random stream of outer path `r`.
    pub fn path_stream(&self, r: usize) -> RngStream {
        RngStream::new(self.seed, 0).derive(tags::OUTER_PATH, r as u64)
    }
}

fn check_run(config: &EnsembleConfig, dim: usize, opts: &VerifyOptions) -> Result<RunSize> {
    if opts.paths == 0 {
        return Err(invalid("at least one outer path is required"));
    }
    if config.particles < 2 {
        return Err(invalid("the pair terms need at least two particles"));
    }
    if dim != config.coeffs.state_dim() {
        return Err(invalid("functional and state dimensions differ"));
    }
    let c = opts.rule.constant();
    if !(c >= 0.0 && c.is_finite()) {
        return Err(invalid("tolerance constant must be finite and nonnegative"));
    }
    Ok(RunSize {
        n: config.partition.cells(),
        particles: config.particles,
        paths: opts.paths,
        horizon: config.partition.horizon(),
    })
}

fn per_path<F>(config: &EnsembleConfig, opts: &VerifyOptions, row: F) -> Result<Vec<ReportRow>>
where
    F: Fn(usize, &ParticleEnsemble) -> Result<ReportRow> + Sync,
{
    (0..opts.paths)
        .into_par_iter()
        .map(|r| {
            let ens = simulate_ensemble(config, opts.path_stream(r))?;
            row(r, &ens)
        })
        .collect()
}

pub const ITO_TERMS: [&str; 3] = ["stochastic", "second_order", "cross"];
pub const ITO_DIAGNOSTICS: [&str; 2] = ["drift", "common_stochastic"];

/// Itô formula for `u(μ_t)`:
///
/// ```text
/// u(μ_T) − u(μ_0) = E⁰[∫ ∂_xδ_m u · dX + ½ ∂²_xδ_m u : d⟨X⟩]
///                 + ½ E⁰Ê⁰[∫ ∂_x∂_x̂δ²_m u : d⟨X, X̂⟩]
/// ```
pub fn verify_ito(u: &CylindricalFunctional, config: &EnsembleConfig, opts: &VerifyOptions) -> Result<VerificationReport> {
    let size = check_run(config, u.dim(), opts)?;
    let rows = per_path(config, opts, |r, ens| {
        let n = ens.partition().cells();
        let lhs = u.eval_features(&u.features_of_points(ens.states_at(n))?)?
            - u.eval_features(&u.features_of_points(ens.states_at(0))?)?;
        let mut sd = StepData::new(ens);
        let (mut stoch, mut second, mut cross, mut drift, mut common) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for k in 0..n {
            sd.load(ens, k);
            let fz = u.freeze_features(&u.features_of_points(ens.states_at(k))?);
            let t = measure_terms(&fz, &sd, opts.mode);
            stoch += t.stoch;
            second += t.second;
            cross += t.cross;
            drift += t.drift;
            common += t.common;
        }
        Ok(ReportRow::new(r, lhs, vec![stoch, second, cross], vec![drift, common]))
    })?;
    Ok(VerificationReport::assemble("verify-ito", u.name(), size, opts.mode, opts.rule, &ITO_TERMS, &ITO_DIAGNOSTICS, rows, None))
}

pub const WENTZELL_TERMS: [&str; 6] =
    ["field_finite_variation", "field_martingale", "stochastic", "second_order", "cross", "correction"];

/// Itô–Wentzell formula for a random field `U_t(μ_t)` with
/// `dU_t(m) = Σ f_r(m) dD_r`:
///
/// ```text
/// U_T(μ_T) − U_0(μ_0) = ∫ φ(μ) · dB + ψ(μ) · dN
///     + E⁰[∫ ∂_xδ_m U · dX + ½ ∂²_xδ_m U : d⟨X⟩] + ½ E⁰Ê⁰[∫ ∂_x∂_x̂δ²_m U : d⟨X, X̂⟩]
///     + E⁰[∫ ∂_xδ_m ψ : d⟨N, M⟩]
/// ```
///
/// With `expected_correction = Some(c)` the report also checks that the
/// residual without the `⟨N, M⟩` term sits at `c`.
pub fn verify_ito_wentzell(
    spec: &RandomFieldSpec,
    config: &EnsembleConfig,
    opts: &VerifyOptions,
    expected_correction: Option<f64>,
) -> Result<VerificationReport> {
    let size = check_run(config, spec.dim(), opts)?;
    let rows = per_path(config, opts, |r, ens| {
        let field = build_random_field(spec, &spec.driver_paths(ens)?)?;
        let n = ens.partition().cells();
        let u_end = field.at(n)?;
        let lhs = u_end.eval_features(&u_end.features_of_points(ens.states_at(n))?)?
            - spec.initial.eval_features(&spec.initial.features_of_points(ens.states_at(0))?)?;
        let mut sd = StepData::new(ens);
        let mut terms = [0.0; 6];
        for k in 0..n {
            sd.load(ens, k);
            let pts = ens.states_at(k);
            let uk = field.at(k)?;
            let t = measure_terms(&uk.freeze_features(&uk.features_of_points(pts)?), &sd, opts.mode);
            terms[2] += t.stoch;
            terms[3] += t.second;
            terms[4] += t.cross;
            for (j, drv) in spec.drivers.iter().enumerate() {
                let f = &drv.coefficient;
                let fz = f.freeze_features(&f.features_of_points(pts)?);
                let inc = field.increments(k)[j];
                match drv.kind {
                    DriverKind::FiniteVariation { .. } => terms[0] += fz.value() * inc,
                    DriverKind::Martingale { scale, noise } => {
                        terms[1] += fz.value() * inc;
                        terms[5] += driver_correction(&fz, &sd, opts.mode, inc, scale, noise);
                    }
                }
            }
        }
        Ok(ReportRow::new(r, lhs, terms.to_vec(), vec![]))
    })?;
    let ablation = expected_correction.map(|c| (5, c));
    Ok(VerificationReport::assemble(
        "verify-wentzell",
        &spec.name,
        size,
        opts.mode,
        opts.rule,
        &WENTZELL_TERMS,
        &[],
        rows,
        ablation,
    ))
}

fn driver_correction(
    fz: &crate::measures::FrozenDerivatives,
    sd: &StepData,
    mode: BracketMode,
    dn: f64,
    scale: f64,
    noise: NoiseTag,
) -> f64 {
    let (d, d0) = (sd.d, sd.d0);
    let dt = sd.dt;
    match noise {
        NoiseTag::Common { component } => correction_term(fz, sd, mode, dn, &|i, out| {
            let s0 = sd.sigma0_i(i);
            for a in 0..d {
                out[a] = scale * s0[a * d0 + component] * dt;
            }
            true
        }),
        NoiseTag::Idiosyncratic { component, particle } => correction_term(fz, sd, mode, dn, &|i, out| {
            if i != particle {
                return false;
            }
            let s = sd.sigma_i(i);
            for a in 0..d {
                out[a] = scale * s[a * d + component] * dt;
            }
            true
        }),
        NoiseTag::Independent => correction_term(fz, sd, mode, dn, &|_, _| false),
    }
}

pub const BROWNIAN_TERMS: [&str; 8] = [
    "field_dt",
    "field_dw",
    "field_dw0",
    "drift",
    "common_stochastic",
    "second_order",
    "psi0_correction",
    "cross",
];
pub const BROWNIAN_DIAGNOSTICS: [&str; 1] = ["idiosyncratic_stochastic"];

/// Brownian specialization: `dU = φ dt + ψ·dW + ψ⁰·dW⁰` and
/// `dX = b dt + σ dW + σ⁰ dW⁰`, with the right side
///
/// ```text
/// ∫ φ ds + ∫ ψ·dW + ∫ ψ⁰·dW⁰ + E⁰[∫ ∂_xδ_m U·b ds + ∫ (σ⁰)ᵀ∂_xδ_m U·dW⁰]
///   + ½E⁰[∫ ∂²_xδ_m U : (σσᵀ + σ⁰σ⁰ᵀ) ds] + E⁰[∫ ∂_xδ_m ψ⁰ : (σ⁰)ᵀ ds]
///   + ½E⁰Ê⁰[∫ ∂_x∂_x̂δ²_m U : σ⁰(σ̂⁰)ᵀ ds]
/// ```
///
/// Finite-variation drivers play the role of `φ dt`, idiosyncratic-tagged
/// drivers of `ψ·dW` and common-tagged drivers of `ψ⁰·dW⁰`. The particle
/// average of `∫ ∂_xδ_m U·σ dW` vanishes in the limit and is reported as a
/// diagnostic only. `expected_correction` checks the `ψ⁰` correction term
/// by ablation.
pub fn verify_brownian_corollary(
    spec: &RandomFieldSpec,
    config: &EnsembleConfig,
    opts: &VerifyOptions,
    expected_correction: Option<f64>,
) -> Result<VerificationReport> {
    let size = check_run(config, spec.dim(), opts)?;
    if spec.drivers.iter().any(|d| matches!(d.kind, DriverKind::Martingale { noise: NoiseTag::Independent, .. })) {
        return Err(invalid("the Brownian specialization only has W- and W⁰-driven fields"));
    }
    let rows = per_path(config, opts, |r, ens| {
        let field = build_random_field(spec, &spec.driver_paths(ens)?)?;
        let n = ens.partition().cells();
        let u_end = field.at(n)?;
        let lhs = u_end.eval_features(&u_end.features_of_points(ens.states_at(n))?)?
            - spec.initial.eval_features(&spec.initial.features_of_points(ens.states_at(0))?)?;
        let mut sd = StepData::new(ens);
        let mut t8 = [0.0; 8];
        let mut idio = 0.0;
        for k in 0..n {
            sd.load(ens, k);
            let pts = ens.states_at(k);
            let uk = field.at(k)?;
            let t = measure_terms(&uk.freeze_features(&uk.features_of_points(pts)?), &sd, opts.mode);
            t8[3] += t.drift;
            t8[4] += t.common;
            t8[5] += t.second;
            t8[7] += t.cross;
            idio += t.stoch - t.drift - t.common;
            for (j, drv) in spec.drivers.iter().enumerate() {
                let f = &drv.coefficient;
                let fz = f.freeze_features(&f.features_of_points(pts)?);
                let inc = field.increments(k)[j];
                match drv.kind {
                    DriverKind::FiniteVariation { .. } => t8[0] += fz.value() * inc,
                    DriverKind::Martingale { noise: NoiseTag::Idiosyncratic { .. }, .. } => t8[1] += fz.value() * inc,
                    DriverKind::Martingale { scale, noise } => {
                        t8[2] += fz.value() * inc;
                        t8[6] += driver_correction(&fz, &sd, opts.mode, inc, scale, noise);
                    }
                }
            }
        }
        Ok(ReportRow::new(r, lhs, t8.to_vec(), vec![idio]))
    })?;
    Ok(VerificationReport::assemble(
        "verify-brownian",
        &spec.name,
        size,
        opts.mode,
        opts.rule,
        &BROWNIAN_TERMS,
        &BROWNIAN_DIAGNOSTICS,
        rows,
        expected_correction.map(|c| (6, c)),
    ))
}

pub const FACTOR_TERMS: [&str; 7] =
    ["time", "factor", "factor_second_order", "stochastic", "second_order", "mixed", "cross"];

/// Factor model `Θ_t = (t, μ_t, Y_t)`:
///
/// ```text
/// u(Θ_T) − u(Θ_0) = ∫ ∂_t u ds + ∂_y u · dY + ½ ∂²_y u : d⟨Y⟩
///   + E⁰[∫ ∂_xδ_m u · dX + ½ ∂²_xδ_m u : d⟨X⟩ + ∂_xδ_m∂_y u : d⟨X, Y⟩]
///   + ½ E⁰Ê⁰[∫ ∂_x∂_x̂δ²_m u : d⟨X, X̂⟩]
/// ```
///
/// `expected_mixed` checks the `⟨X, Y⟩` term by ablation.
pub fn verify_factor_model(
    u: &FactorFunctional,
    config: &EnsembleConfig,
    opts: &VerifyOptions,
    expected_mixed: Option<f64>,
) -> Result<VerificationReport> {
    let size = check_run(config, u.dim(), opts)?;
    if config.coeffs.factor_dim() != u.factor_dim() || config.factor_init.is_none() {
        return Err(invalid("the ensemble must simulate a factor of the functional's dimension"));
    }
    let rows = per_path(config, opts, |r, ens| {
        let n = ens.partition().cells();
        let val = |k: usize| -> Result<f64> {
            Ok(u.freeze_features(ens.time(k), &u.features_of_points(ens.states_at(k)), ens.factor_at(k))?.value())
        };
        let lhs = val(n)? - val(0)?;
        let mut sd = StepData::new(ens);
        let mut t7 = [0.0; 7];
        for k in 0..n {
            sd.load(ens, k);
            let ff = u.freeze_features(ens.time(k), &u.features_of_points(ens.states_at(k)), ens.factor_at(k))?;
            t7[0] += ff.dt() * sd.dt;
            t7[1] += ff.grad_y().iter().zip(&sd.dy_inc).map(|(a, b)| a * b).sum::<f64>();
            t7[2] += factor_second_term(&ff, &sd, opts.mode);
            let t = measure_terms(ff.measure(), &sd, opts.mode);
            t7[3] += t.stoch;
            t7[4] += t.second;
            t7[5] += mixed_factor_term(&ff, &sd, opts.mode);
            t7[6] += t.cross;
        }
        Ok(ReportRow::new(r, lhs, t7.to_vec(), vec![]))
    })?;
    Ok(VerificationReport::assemble(
        "verify-factor",
        u.name(),
        size,
        opts.mode,
        opts.rule,
        &FACTOR_TERMS,
        &[],
        rows,
        expected_mixed.map(|c| (5, c)),
    ))
}
