//! Common-noise particle systems and conditional-expectation estimators.
//!
//! All particles of an ensemble share one realization of the common noise
//! `W⁰` (and of the factor `Y`); each particle owns its idiosyncratic
//! Brownian motion. The empirical measure of the particles at time `t`
//! stands in for the conditional law `μ_t = L(X_t | W⁰)`.

use std::fmt::Debug;
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::measures::{w2_squared, EmpiricalMeasure, MeasureMoments};
use crate::paths::{simulate_brownian, simulate_factor, CoefficientValues, Partition, SamplePath, SdeCoefficients, StateArgs};
use crate::quadvar::mean_stderr;
use crate::rng::{normal, tags, RngStream};

/// Scalar feedback control `a(t, x, m)`.
pub trait FeedbackLaw: Debug + Send + Sync {
    fn control(&self, t: f64, x: &[f64], m: &MeasureMoments) -> f64;

    /// Scalar states where `x ↦ a(t, x, m)` has a kink; quadrature rules
    /// split there.
    fn kinks(&self, _t: f64, _m: &MeasureMoments) -> Vec<f64> {
        Vec::new()
    }
}

/// Law of the initial particle positions.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialLaw {
    /// Uniform measure whose atom count divides the particle count; each
    /// atom is replicated equally, so the initial empirical law is exact.
    Measure(EmpiricalMeasure),
    /// Independent `N(mean, std² I)` draws.
    Gaussian { mean: Vec<f64>, std: f64 },
}

impl InitialLaw {
    pub fn dirac(x: &[f64]) -> Self {
        InitialLaw::Measure(EmpiricalMeasure::dirac(x).expect("finite point"))
    }

    fn dim(&self) -> usize {
        match self {
            InitialLaw::Measure(m) => m.dim(),
            InitialLaw::Gaussian { mean, .. } => mean.len(),
        }
    }

    fn sample(&self, n: usize, rng: RngStream) -> Result<Vec<f64>> {
        match self {
            InitialLaw::Measure(m) => {
                if !m.is_uniform() || n % m.len() != 0 {
                    return Err(invalid(format!(
                        "initial measure with {} atoms cannot be represented exactly by {n} particles",
                        m.len()
                    )));
                }
                let rep = n / m.len();
                let mut out = Vec::with_capacity(n * m.dim());
                for i in 0..m.len() {
                    for _ in 0..rep {
                        out.extend_from_slice(m.atom(i));
                    }
                }
                Ok(out)
            }
            InitialLaw::Gaussian { mean, std } => {
                if !(*std >= 0.0) {
                    return Err(invalid("initial standard deviation must be nonnegative"));
                }
                let mut out = Vec::with_capacity(n * mean.len());
                for i in 0..n {
                    let mut g = rng.derive(tags::INITIAL_LAW, i as u64).generator();
                    out.extend(mean.iter().map(|m| m + std * normal(&mut g)));
                }
                Ok(out)
            }
        }
    }
}

/// Everything needed to simulate one ensemble, except the random streams.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub coeffs: SdeCoefficients,
    pub initial: InitialLaw,
    pub particles: usize,
    pub partition: Arc<Partition>,
    pub control: Option<Arc<dyn FeedbackLaw>>,
    /// Initial factor value; required iff the coefficients carry a factor.
    pub factor_init: Option<Vec<f64>>,
    /// Physical time of the first grid point (the grid itself starts at 0).
    pub start_time: f64,
}

impl EnsembleConfig {
    pub fn new(coeffs: SdeCoefficients, initial: InitialLaw, particles: usize, partition: Arc<Partition>) -> Self {
        EnsembleConfig { coeffs, initial, particles, partition, control: None, factor_init: None, start_time: 0.0 }
    }

    pub fn with_control(mut self, control: Arc<dyn FeedbackLaw>) -> Self {
        self.control = Some(control);
        self
    }

    pub fn with_factor(mut self, y0: Vec<f64>) -> Self {
        self.factor_init = Some(y0);
        self
    }

    pub fn starting_at(mut self, t: f64) -> Self {
        self.start_time = t;
        self
    }
}

/// `N` particle paths driven by one common noise path.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble {
    config: EnsembleConfig,
    rng: RngStream,
    dim: usize,
    n: usize,
    common_path: SamplePath,
    factor_path: Option<SamplePath>,
    /// Time-major: `states[k][i·d + j]` flattened.
    states: Vec<f64>,
    moments: Vec<MeasureMoments>,
}

/// Simulates an ensemble, drawing the common noise from `rng`.
pub fn simulate_ensemble(config: &EnsembleConfig, rng: RngStream) -> Result<ParticleEnsemble> {
    let d0 = config.coeffs.common_dim().max(1);
    let common = simulate_brownian(&config.partition, d0, rng.derive(tags::COMMON_NOISE, 0))?;
    simulate_ensemble_with_common(config, common, rng)
}

/// Simulates an ensemble on a given common noise path. Particle `i` draws
/// its idiosyncratic increments in order from `rng.particle(i)`.
pub fn simulate_ensemble_with_common(
    config: &EnsembleConfig,
    common_path: SamplePath,
    rng: RngStream,
) -> Result<ParticleEnsemble> {
    let n = config.particles;
    if n < 2 {
        return Err(invalid("an ensemble needs at least two particles"));
    }
    let coeffs = &config.coeffs;
    let d = coeffs.state_dim();
    let d0 = coeffs.common_dim();
    let p = &config.partition;
    if config.initial.dim() != d {
        return Err(invalid("initial law dimension does not match the coefficients"));
    }
    if !common_path.partition().matches(p) {
        return Err(Error::PartitionMismatch("common path lives on a different partition".into()));
    }
    if common_path.dim() != d0.max(1) {
        return Err(invalid("common path dimension does not match the coefficients"));
    }
    let factor_path = match (coeffs.factor_dim(), &config.factor_init) {
        (0, None) => None,
        (0, Some(_)) => return Err(invalid("factor initial value given but the coefficients carry no factor")),
        (_, None) => return Err(invalid("coefficients carry a factor but no initial value was given")),
        (_, Some(y0)) => Some(simulate_factor(coeffs, y0, p, &common_path, rng.derive(tags::FACTOR_NOISE, 0))?),
    };

    let steps = p.len();
    let stride = n * d;
    let mut states = vec![0.0; steps * stride];
    states[..stride].copy_from_slice(&config.initial.sample(n, rng)?);
    let mut moments = Vec::with_capacity(steps);
    moments.push(MeasureMoments::of_points(d, &states[..stride]));
    let mut gens: Vec<ChaCha8Rng> = (0..n).map(|i| rng.particle(i).generator()).collect();
    let mut dw0 = vec![0.0; d0];
    let empty: [f64; 0] = [];

    for k in 0..p.cells() {
        let t = config.start_time + p.times()[k];
        let dt = p.dt(k);
        let sd = dt.sqrt();
        if d0 > 0 {
            common_path.increment_into(k, &mut dw0);
        }
        let y = factor_path.as_ref().map(|f| f.at(k)).unwrap_or(&empty);
        let m = &moments[k];
        let (cur, next) = states.split_at_mut((k + 1) * stride);
        let cur = &cur[k * stride..];
        let next = &mut next[..stride];
        let control = config.control.as_deref();
        let dw0 = &dw0;
        next.par_chunks_mut(d)
            .zip(cur.par_chunks(d))
            .zip(gens.par_iter_mut())
            .with_min_len(256)
            .for_each_init(
                || (coeffs.values_buffer(), vec![0.0; d]),
                |(buf, dw), ((xn, x), g)| {
                    for v in dw.iter_mut() {
                        *v = sd * normal(g);
                    }
                    let a = control.map_or(0.0, |c| c.control(t, x, m));
                    coeffs.evaluate(&StateArgs { t, x, y, m, a }, buf);
                    euler_step(x, xn, buf, dw, dw0, dt, d, d0);
                },
            );
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: k + 1, time: config.start_time + p.times()[k + 1] });
        }
        moments.push(MeasureMoments::of_points(d, next));
    }

    Ok(ParticleEnsemble { config: config.clone(), rng, dim: d, n, common_path, factor_path, states, moments })
}

#[allow(clippy::too_many_arguments)]
#[inline]
fn euler_step(x: &[f64], xn: &mut [f64], c: &CoefficientValues, dw: &[f64], dw0: &[f64], dt: f64, d: usize, d0: usize) {
    for a in 0..d {
        let mut v = x[a] + c.drift[a] * dt;
        for b in 0..d {
            v += c.diffusion[a * d + b] * dw[b];
        }
        for b in 0..d0 {
            v += c.common_diffusion[a * d0 + b] * dw0[b];
        }
        xn[a] = v;
    }
}

/// Read access to one particle of an ensemble.
#[derive(Debug, Clone, Copy)]
pub struct ParticleRef<'a> {
    ensemble: &'a ParticleEnsemble,
    index: usize,
}

impl<'a> ParticleRef<'a> {
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn state(&self, k: usize) -> &'a [f64] {
        self.ensemble.state(k, self.index)
    }

    pub fn initial(&self) -> &'a [f64] {
        self.state(0)
    }

    pub fn terminal(&self) -> &'a [f64] {
        self.state(self.ensemble.partition().len() - 1)
    }

    pub fn increment(&self, k: usize) -> Vec<f64> {
        let (a, b) = (self.state(k), self.state(k + 1));
        b.iter().zip(a).map(|(b, a)| b - a).collect()
    }
}

/// An estimate of a conditional expectation with its cross-particle
/// standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionalEstimate {
    pub value: f64,
    pub stderr: f64,
    pub particles: usize,
}

/// Order-independent sum: sorting first makes the result invariant under
/// any permutation of the summands.
fn sorted_sum(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.iter().sum()
}

fn sorted_mean_se(mut xs: Vec<f64>) -> (f64, f64) {
    xs.sort_by(f64::total_cmp);
    if xs[0] == xs[xs.len() - 1] {
        // a degenerate sample has no spread, independently of roundoff
        return (xs[0], 0.0);
    }
    let n = xs.len() as f64;
    let mean = sorted_sum(xs.clone()) / n;
    let var = sorted_sum(xs.iter().map(|x| (x - mean) * (x - mean)).collect()) / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl ParticleEnsemble {
    pub fn config(&self) -> &EnsembleConfig {
        &self.config
    }

    pub fn rng(&self) -> RngStream {
        self.rng
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.config.partition
    }

    pub fn coefficients(&self) -> &SdeCoefficients {
        &self.config.coeffs
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn common_path(&self) -> &SamplePath {
        &self.common_path
    }

    pub fn factor_path(&self) -> Option<&SamplePath> {
        self.factor_path.as_ref()
    }

    /// Physical time of grid point `k`.
    pub fn time(&self, k: usize) -> f64 {
        self.config.start_time + self.config.partition.times()[k]
    }

    /// All particle states at grid point `k`, row-major `N × d`.
    pub fn states_at(&self, k: usize) -> &[f64] {
        let s = self.n * self.dim;
        &self.states[k * s..(k + 1) * s]
    }

    pub fn state(&self, k: usize, i: usize) -> &[f64] {
        let s = self.n * self.dim;
        &self.states[k * s + i * self.dim..k * s + (i + 1) * self.dim]
    }

    pub fn particle(&self, i: usize) -> ParticleRef<'_> {
        ParticleRef { ensemble: self, index: i }
    }

    /// Path of particle `i` as a standalone sample path.
    pub fn particle_path(&self, i: usize) -> SamplePath {
        let values = (0..self.config.partition.len()).flat_map(|k| self.state(k, i).iter().copied()).collect();
        SamplePath::new(self.config.partition.clone(), self.dim, values).expect("shapes are consistent")
    }

    /// Regenerates the idiosyncratic Brownian path that drove particle `i`.
    pub fn idiosyncratic_noise(&self, i: usize) -> SamplePath {
        simulate_brownian(&self.config.partition, self.dim, self.rng.particle(i)).expect("dimension is positive")
    }

    /// Empirical measure at grid point `k`.
    pub fn empirical(&self, k: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::new(self.dim, self.states_at(k).to_vec()).expect("particle states are finite")
    }

    pub fn moments(&self, k: usize) -> &MeasureMoments {
        &self.moments[k]
    }

    pub fn factor_at(&self, k: usize) -> &[f64] {
        self.factor_path.as_ref().map(|f| f.at(k)).unwrap_or(&[])
    }

    /// Control applied to particle `i` on cell `k`.
    pub fn control_at(&self, k: usize, i: usize) -> f64 {
        self.config.control.as_ref().map_or(0.0, |c| c.control(self.time(k), self.state(k, i), &self.moments[k]))
    }

    /// The coefficient values used for particle `i` on cell `k`.
    pub fn coefficients_at(&self, k: usize, i: usize, out: &mut CoefficientValues) {
        let args = StateArgs {
            t: self.time(k),
            x: self.state(k, i),
            y: self.factor_at(k),
            m: &self.moments[k],
            a: self.control_at(k, i),
        };
        self.config.coeffs.evaluate(&args, out);
    }

    /// Ensemble with particle indices relabelled: new particle `j` is old
    /// particle `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<ParticleEnsemble> {
        let mut seen = vec![false; self.n];
        if perm.len() != self.n || perm.iter().any(|&i| i >= self.n || std::mem::replace(&mut seen[i], true)) {
            return Err(invalid("not a permutation of the particle indices"));
        }
        let mut out = self.clone();
        let d = self.dim;
        for k in 0..self.config.partition.len() {
            let src = self.states_at(k);
            let s = self.n * d;
            let dst = &mut out.states[k * s..(k + 1) * s];
            for (j, &i) in perm.iter().enumerate() {
                dst[j * d..(j + 1) * d].copy_from_slice(&src[i * d..(i + 1) * d]);
            }
        }
        Ok(out)
    }

    /// `E⁰[f(X)]` as the particle average.
    pub fn cond_expect(&self, f: impl Fn(ParticleRef<'_>) -> f64 + Sync) -> ConditionalEstimate {
        let vals: Vec<f64> = (0..self.n).into_par_iter().map(|i| f(self.particle(i))).collect();
        let (value, stderr) = sorted_mean_se(vals);
        ConditionalEstimate { value, stderr, particles: self.n }
    }

    /// `E⁰Ê⁰[h(X, X̂)]` as the average over ordered pairs of distinct
    /// particles. The standard error uses the first-order projection of the
    /// U-statistic.
    pub fn cond_expect_pair(&self, h: impl Fn(ParticleRef<'_>, ParticleRef<'_>) -> f64 + Sync) -> ConditionalEstimate {
        let n = self.n;
        let table: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (0..n).map(|j| if i == j { 0.0 } else { h(self.particle(i), self.particle(j)) }).collect())
            .collect();
        let off_diagonal = || table.iter().enumerate().flat_map(|(i, r)| r.iter().enumerate().filter(move |(j, _)| *j != i));
        let first = table[0][1];
        if off_diagonal().all(|(_, v)| *v == first) {
            return ConditionalEstimate { value: first, stderr: 0.0, particles: n };
        }
        let all: Vec<f64> = table.iter().flat_map(|r| r.iter().copied()).collect();
        let value = sorted_sum(all) / (n * (n - 1)) as f64;
        let proj: Vec<f64> = (0..n)
            .map(|i| {
                let row = sorted_sum(table[i].clone());
                let col = sorted_sum(table.iter().map(|r| r[i]).collect());
                (row + col) / (n - 1) as f64 - 2.0 * value
            })
            .collect();
        let (_, se) = sorted_mean_se(proj);
        ConditionalEstimate { value, stderr: se, particles: n }
    }

    /// Pair estimator for product statistics `f(X) g(X̂)` in linear time:
    /// `(Σf Σg − Σfg) / (N(N−1))`.
    pub fn cond_expect_product(
        &self,
        f: impl Fn(ParticleRef<'_>) -> f64 + Sync,
        g: impl Fn(ParticleRef<'_>) -> f64 + Sync,
    ) -> ConditionalEstimate {
        let fv: Vec<f64> = (0..self.n).into_par_iter().map(|i| f(self.particle(i))).collect();
        let gv: Vec<f64> = (0..self.n).into_par_iter().map(|i| g(self.particle(i))).collect();
        product_u_statistic(&fv, &gv)
    }
}

/// `(Σf Σg − Σfg) / (N(N−1))` with its projection standard error.
pub fn product_u_statistic(f: &[f64], g: &[f64]) -> ConditionalEstimate {
    let n = f.len();
    let nf = n as f64;
    let sf = sorted_sum(f.to_vec());
    let sg = sorted_sum(g.to_vec());
    let sfg = sorted_sum(f.iter().zip(g).map(|(a, b)| a * b).collect());
    let value = (sf * sg - sfg) / (nf * (nf - 1.0));
    let proj: Vec<f64> =
        (0..n).map(|i| (f[i] * (sg - g[i]) + g[i] * (sf - f[i])) / (nf - 1.0) - 2.0 * value).collect();
    let (_, se) = sorted_mean_se(proj);
    ConditionalEstimate { value, stderr: se, particles: n }
}

/// Synchronous-coupling cost `(1/N Σ_i |X^i_t − X^i_s|²)^{1/2}` between the
/// empirical measures at grid points `s < t`; an upper bound for
/// `W₂(μ̂_s, μ̂_t)`.
pub fn synchronous_modulus(ensemble: &ParticleEnsemble, s: usize, t: usize) -> Result<f64> {
    if s >= t || t >= ensemble.partition().len() {
        return Err(invalid("need grid indices s < t inside the partition"));
    }
    let a = ensemble.states_at(s);
    let b = ensemble.states_at(t);
    let sq: Vec<f64> = a.iter().zip(b).map(|(a, b)| (b - a) * (b - a)).collect();
    Ok((sorted_sum(sq) / ensemble.len() as f64).sqrt())
}

/// One `(s, t)` pair of a measure-flow modulus study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusRow {
    pub s: f64,
    pub t: f64,
    /// Outer average of the synchronous coupling cost.
    pub mean: f64,
    pub stderr: f64,
    /// Outer average of the exact `W₂` of the empirical measures (scalar
    /// states only).
    pub exact_w2: Option<f64>,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModulusReport {
    pub rows: Vec<ModulusRow>,
    pub repetitions: usize,
    pub pass: bool,
}

/// Roundoff allowance when the bound is attained exactly.
const MODULUS_SLACK: f64 = 1e-12;

/// `E[W₂(μ̂_s, μ̂_t)]` over repeated ensembles against
/// `‖b‖(t − s) + (‖σ‖² + ‖σ⁰‖²)^{1/2} √(t − s)` for each grid index pair.
pub fn measure_flow_modulus(
    config: &EnsembleConfig,
    pairs: &[(usize, usize)],
    repetitions: usize,
    seed: u64,
) -> Result<ModulusReport> {
    if repetitions == 0 || pairs.is_empty() {
        return Err(invalid("need at least one repetition and one time pair"));
    }
    let root = RngStream::new(seed, 0);
    let costs: Vec<Vec<(f64, Option<f64>)>> = (0..repetitions)
        .into_par_iter()
        .map(|r| -> Result<Vec<(f64, Option<f64>)>> {
            let ens = simulate_ensemble(config, root.derive(tags::OUTER_PATH, r as u64))?;
            pairs
                .iter()
                .map(|&(s, t)| {
                    let sync = synchronous_modulus(&ens, s, t)?;
                    let exact = if ens.dim() == 1 {
                        Some(w2_squared(&ens.empirical(s), &ens.empirical(t))?.sqrt())
                    } else {
                        None
                    };
                    Ok((sync, exact))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let b = config.coeffs.bounds();
    let times = config.partition.times();
    let mut rows = Vec::with_capacity(pairs.len());
    for (j, &(s, t)) in pairs.iter().enumerate() {
        let sync: Vec<f64> = costs.iter().map(|c| c[j].0).collect();
        let (mean, stderr) = mean_stderr(&sync);
        let exact_w2 = costs[0][j].1.map(|_| costs.iter().map(|c| c[j].1.unwrap_or(0.0)).sum::<f64>() / repetitions as f64);
        let h = times[t] - times[s];
        let bound = b.drift * h + (b.diffusion.powi(2) + b.common_diffusion.powi(2)).sqrt() * h.sqrt();
        let pass = mean <= bound + 3.0 * stderr + MODULUS_SLACK;
        rows.push(ModulusRow { s: times[s], t: times[t], mean, stderr, exact_w2, bound, pass });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ModulusReport { rows, repetitions, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Arc<Partition> {
        Arc::new(Partition::uniform(1.0, n).unwrap())
    }

    fn cfg(b: f64, s: f64, s0: f64, init: InitialLaw, n: usize) -> EnsembleConfig {
        EnsembleConfig::new(SdeCoefficients::constant(b, s, s0), init, n, grid(16))
    }

    #[test]
    fn frozen_dynamics() {
        let m = EmpiricalMeasure::from_scalars(&[1.0, -2.0]).unwrap();
        let e = simulate_ensemble(&cfg(0.0, 0.0, 0.0, InitialLaw::Measure(m), 4), RngStream::new(1, 0)).unwrap();
        assert_eq!(e.states_at(16), e.states_at(0));
        assert_eq!(e.states_at(0), &[1.0, 1.0, -2.0, -2.0]);
    }

    #[test]
    fn pure_common_noise_moves_a_dirac() {
        let e = simulate_ensemble(&cfg(0.0, 0.0, 1.0, InitialLaw::dirac(&[0.5]), 8), RngStream::new(2, 0)).unwrap();
        for k in 0..17 {
            let w0 = e.common_path().at(k)[0];
            assert!(e.states_at(k).iter().all(|x| (x - (0.5 + w0)).abs() < 1e-14));
        }
        let est = e.cond_expect(|p| p.terminal()[0]);
        assert_eq!(est.stderr, 0.0);
        let pair = e.cond_expect_pair(|a, b| a.terminal()[0] * b.terminal()[0]);
        let x = e.state(16, 0)[0];
        assert!((pair.value - x * x).abs() < 1e-14);
        assert_eq!(pair.stderr, 0.0);
    }

    #[test]
    fn rejects_single_particle_and_foreign_grids() {
        let c = cfg(0.0, 1.0, 0.0, InitialLaw::dirac(&[0.0]), 1);
        assert!(matches!(simulate_ensemble(&c, RngStream::new(0, 0)), Err(Error::InvalidArgument(_))));
        let c = cfg(0.0, 1.0, 0.0, InitialLaw::dirac(&[0.0]), 4);
        let w = simulate_brownian(&grid(8), 1, RngStream::new(0, 0)).unwrap();
        assert!(matches!(simulate_ensemble_with_common(&c, w, RngStream::new(0, 0)), Err(Error::PartitionMismatch(_))));
        let m = EmpiricalMeasure::from_scalars(&[0.0, 1.0, 2.0]).unwrap();
        let c = cfg(0.0, 1.0, 0.0, InitialLaw::Measure(m), 4);
        assert!(simulate_ensemble(&c, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn blow_up_names_the_step() {
        let coeffs = SdeCoefficients::zero(1, 1).with_drift(|a, out| out[0] = 1e300 * (1.0 + a.x[0].abs()), f64::INFINITY);
        let c = EnsembleConfig::new(coeffs, InitialLaw::dirac(&[1.0]), 2, grid(16));
        match simulate_ensemble(&c, RngStream::new(0, 0)) {
            Err(Error::BlowUp { step, .. }) => assert!((1..=16).contains(&step)),
            other => panic!("expected blow-up, got {other:?}"),
        }
    }

    #[test]
    fn idiosyncratic_noise_is_regenerated() {
        let e = simulate_ensemble(&cfg(0.0, 1.0, 0.0, InitialLaw::dirac(&[0.0]), 4), RngStream::new(5, 0)).unwrap();
        for i in 0..4 {
            let w = e.idiosyncratic_noise(i);
            let x = e.particle_path(i);
            for k in 0..17 {
                assert!((w.at(k)[0] - x.at(k)[0]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn product_fast_path_matches_pairs() {
        let e = simulate_ensemble(&cfg(0.1, 1.0, 0.5, InitialLaw::dirac(&[0.0]), 16), RngStream::new(6, 0)).unwrap();
        let slow = e.cond_expect_pair(|a, b| a.terminal()[0].sin() * b.terminal()[0]);
        let fast = e.cond_expect_product(|a| a.terminal()[0].sin(), |b| b.terminal()[0]);
        assert!((slow.value - fast.value).abs() < 1e-13);
        assert!((slow.stderr - fast.stderr).abs() < 1e-12);
    }

    #[test]
    fn estimators_are_permutation_invariant() {
        let e = simulate_ensemble(&cfg(0.0, 1.0, 0.3, InitialLaw::dirac(&[0.0]), 9), RngStream::new(7, 0)).unwrap();
        let perm = [3, 1, 8, 0, 2, 7, 6, 5, 4];
        let q = e.permuted(&perm).unwrap();
        let f = |p: ParticleRef<'_>| p.terminal()[0].exp();
        assert_eq!(e.cond_expect(f), q.cond_expect(f));
        let h = |a: ParticleRef<'_>, b: ParticleRef<'_>| a.terminal()[0] * b.state(3)[0];
        assert_eq!(e.cond_expect_pair(h), q.cond_expect_pair(h));
        assert!(e.permuted(&[0, 0, 1, 2, 3, 4, 5, 6, 7]).is_err());
    }

    #[test]
    fn deterministic_translation_attains_the_bound() {
        let c = cfg(1.0, 0.0, 0.0, InitialLaw::dirac(&[0.0]), 4);
        let r = measure_flow_modulus(&c, &[(2, 10)], 2, 0).unwrap();
        assert!((r.rows[0].mean - 0.5).abs() < 1e-14);
        assert!((r.rows[0].bound - 0.5).abs() < 1e-15);
        assert!(r.pass);
    }
}
