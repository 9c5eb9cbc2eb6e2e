//! Time grids, sample paths and Euler–Maruyama simulation of the state,
//! factor and driver processes.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::measures::MeasureMoments;
use crate::rng::{normal, RngStream};

/// Relative tolerance used when matching grid points of two partitions.
const GRID_MATCH_TOL: f64 = 1e-12;

/// A subdivision `0 = t_0 < t_1 < ... < t_n = T`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Partition {
    times: Vec<f64>,
    mesh: f64,
}

impl Partition {
    pub fn new(times: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(invalid("a partition needs at least two points"));
        }
        if times[0] != 0.0 {
            return Err(invalid(format!("partition must start at 0, got {}", times[0])));
        }
        let mut mesh = 0.0_f64;
        for w in times.windows(2) {
            let gap = w[1] - w[0];
            if !(gap > 0.0) || !w[1].is_finite() {
                return Err(invalid("partition times must be finite and strictly increasing"));
            }
            mesh = mesh.max(gap);
        }
        Ok(Partition { times, mesh })
    }

    /// `n + 1` equispaced points on `[0, horizon]`.
    pub fn uniform(horizon: f64, n: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid(format!("horizon must be positive, got {horizon}")));
        }
        if n == 0 {
            return Err(invalid("number of cells must be at least 1"));
        }
        let mut times: Vec<f64> = (0..=n).map(|i| horizon * i as f64 / n as f64).collect();
        times[n] = horizon;
        Partition::new(times)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn mesh(&self) -> f64 {
        self.mesh
    }

    pub fn horizon(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Number of cells `(t_k, t_{k+1}]`.
    pub fn cells(&self) -> usize {
        self.times.len() - 1
    }

    /// Width of cell `k`, i.e. `t_{k+1} - t_k`.
    pub fn dt(&self, k: usize) -> f64 {
        self.times[k + 1] - self.times[k]
    }

    /// Index in `finer` of every point of `self`; fails unless `self` is
    /// subordinate to `finer`.
    pub fn embed_in(&self, finer: &Partition) -> Result<Vec<usize>> {
        let tol = GRID_MATCH_TOL * finer.horizon().max(1.0);
        if (self.horizon() - finer.horizon()).abs() > tol {
            return Err(Error::PartitionMismatch(format!(
                "horizons differ: {} vs {}",
                self.horizon(),
                finer.horizon()
            )));
        }
        let mut out = Vec::with_capacity(self.len());
        let mut j = 0;
        for &t in &self.times {
            while j < finer.len() && finer.times[j] < t - tol {
                j += 1;
            }
            if j == finer.len() || (finer.times[j] - t).abs() > tol {
                return Err(Error::PartitionMismatch(format!("grid point {t} missing from the finer partition")));
            }
            out.push(j);
        }
        Ok(out)
    }

    pub fn matches(&self, other: &Partition) -> bool {
        self.len() == other.len()
            && self
                .times
                .iter()
                .zip(&other.times)
                .all(|(a, b)| (a - b).abs() <= GRID_MATCH_TOL * self.horizon().max(1.0))
    }

    /// Index `i` of the cell `(t_{i-1}, t_i]` containing `s > 0`; 0 for `s = 0`.
    pub(crate) fn cell_of(&self, s: f64) -> usize {
        match self.times.binary_search_by(|t| t.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i,
        }
    }
}

pub fn make_uniform_partition(horizon: f64, n: usize) -> Result<Partition> {
    Partition::uniform(horizon, n)
}

/// Finite-variation and martingale parts of a path, both started at 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub finite_variation: Vec<f64>,
    pub martingale: Vec<f64>,
}

/// One realization of an `R^d`-valued process on a grid, stored row-major
/// (`values[k * dim + j]` is component `j` at `t_k`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SamplePath {
    #[serde(skip)]
    partition: Arc<Partition>,
    dim: usize,
    values: Vec<f64>,
    decomposition: Option<Decomposition>,
}

impl SamplePath {
    pub fn new(partition: Arc<Partition>, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("path dimension must be at least 1"));
        }
        if values.len() != partition.len() * dim {
            return Err(invalid(format!(
                "path has {} values, expected {} points x {} components",
                values.len(),
                partition.len(),
                dim
            )));
        }
        Ok(SamplePath { partition, dim, values, decomposition: None })
    }

    pub fn scalar(partition: Arc<Partition>, values: Vec<f64>) -> Result<Self> {
        Self::new(partition, 1, values)
    }

    /// Samples `f` at every grid point.
    pub fn from_fn(partition: Arc<Partition>, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut values = Vec::with_capacity(partition.len() * dim);
        for &t in partition.times() {
            let v = f(t);
            if v.len() != dim {
                return Err(invalid("sampled value has the wrong dimension"));
            }
            values.extend(v);
        }
        Self::new(partition, dim, values)
    }

    pub fn constant(partition: Arc<Partition>, value: &[f64]) -> Result<Self> {
        let v = value.to_vec();
        Self::from_fn(partition, value.len(), move |_| v.clone())
    }

    /// Attaches `(A, M)`; rejects pairs that do not reconstruct the path.
    pub fn with_decomposition(mut self, finite_variation: Vec<f64>, martingale: Vec<f64>) -> Result<Self> {
        if finite_variation.len() != self.values.len() || martingale.len() != self.values.len() {
            return Err(invalid("decomposition length does not match the path"));
        }
        let d = self.dim;
        if finite_variation[..d].iter().chain(&martingale[..d]).any(|v| *v != 0.0) {
            return Err(invalid("decomposition parts must start at 0"));
        }
        let dec = Decomposition { finite_variation, martingale };
        self.decomposition = Some(dec);
        let err = self.reconstruction_error().unwrap_or(0.0);
        let scale = self.values.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
        if err > 1e-9 * scale {
            return Err(invalid(format!("decomposition does not reconstruct the path (error {err})")));
        }
        Ok(self)
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.partition.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn initial(&self) -> &[f64] {
        self.at(0)
    }

    pub fn terminal(&self) -> &[f64] {
        self.at(self.len() - 1)
    }

    /// `Y_{t_{k+1}} - Y_{t_k}` written into `out`.
    pub fn increment_into(&self, k: usize, out: &mut [f64]) {
        let d = self.dim;
        for j in 0..d {
            out[j] = self.values[(k + 1) * d + j] - self.values[k * d + j];
        }
    }

    pub fn increment(&self, k: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.increment_into(k, &mut out);
        out
    }

    pub fn decomposition(&self) -> Option<&Decomposition> {
        self.decomposition.as_ref()
    }

    /// Finite-variation part as a path (`None` without a decomposition).
    pub fn finite_variation_path(&self) -> Option<SamplePath> {
        self.decomposition.as_ref().map(|d| SamplePath {
            partition: self.partition.clone(),
            dim: self.dim,
            values: d.finite_variation.clone(),
            decomposition: None,
        })
    }

    pub fn martingale_path(&self) -> Option<SamplePath> {
        self.decomposition.as_ref().map(|d| SamplePath {
            partition: self.partition.clone(),
            dim: self.dim,
            values: d.martingale.clone(),
            decomposition: None,
        })
    }

    /// `max_k |A_k + M_k + X_0 - X_k|`.
    pub fn reconstruction_error(&self) -> Option<f64> {
        let dec = self.decomposition.as_ref()?;
        let d = self.dim;
        let mut err = 0.0_f64;
        for (idx, v) in self.values.iter().enumerate() {
            let rebuilt = self.values[idx % d] + dec.finite_variation[idx] + dec.martingale[idx];
            err = err.max((rebuilt - v).abs());
        }
        Some(err)
    }

    /// Value at an arbitrary time, interpolating linearly between grid points.
    pub fn value_at(&self, s: f64) -> Result<Vec<f64>> {
        let horizon = self.partition.horizon();
        if !(0.0..=horizon).contains(&s) {
            return Err(invalid(format!("time {s} outside [0, {horizon}]")));
        }
        let times = self.partition.times();
        let i = self.partition.cell_of(s);
        if i == 0 || times[i] == s {
            return Ok(self.at(i).to_vec());
        }
        let w = (s - times[i - 1]) / (times[i] - times[i - 1]);
        Ok(self.at(i - 1).iter().zip(self.at(i)).map(|(a, b)| a + w * (b - a)).collect())
    }

    /// Applies `f` componentwise; the decomposition is dropped.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> SamplePath {
        SamplePath {
            partition: self.partition.clone(),
            dim: self.dim,
            values: self.values.iter().map(|v| f(*v)).collect(),
            decomposition: None,
        }
    }

    pub(crate) fn from_parts(partition: Arc<Partition>, dim: usize, values: Vec<f64>, decomposition: Option<Decomposition>) -> Self {
        SamplePath { partition, dim, values, decomposition }
    }
}

/// Arguments of the state coefficients `b, σ, σ⁰` at one particle.
#[derive(Debug, Clone, Copy)]
pub struct StateArgs<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub m: &'a MeasureMoments,
    pub a: f64,
}

/// Writes a vector or row-major matrix value into the output buffer.
pub type StateField = Arc<dyn Fn(&StateArgs<'_>, &mut [f64]) + Send + Sync>;
/// Factor coefficient `(t, y) -> value`.
pub type FactorField = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Stated sup-norms of the coefficients (`f64::INFINITY` when unknown).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoefficientBounds {
    pub drift: f64,
    pub diffusion: f64,
    pub common_diffusion: f64,
    pub factor_drift: f64,
    pub factor_diffusion: f64,
    pub factor_common_diffusion: f64,
}

impl CoefficientBounds {
    pub fn unknown() -> Self {
        CoefficientBounds {
            drift: f64::INFINITY,
            diffusion: f64::INFINITY,
            common_diffusion: f64::INFINITY,
            factor_drift: f64::INFINITY,
            factor_diffusion: f64::INFINITY,
            factor_common_diffusion: f64::INFINITY,
        }
    }
}

/// Coefficients of
///
/// ```text
/// dX = b(t,X,Y,m,a) dt + σ(t,X,Y,m,a) dW + σ⁰(t,X,Y,m,a) dW⁰
/// dY = k(t,Y) dt + γ(t,Y) dB + γ⁰(t,Y) dW⁰
/// ```
///
/// `σ` is `d × d`, `σ⁰` is `d × d₀`, `γ` is `d_y × d_y` and `γ⁰` is
/// `d_y × d₀`, all row-major.
#[derive(Clone)]
pub struct SdeCoefficients {
    state_dim: usize,
    common_dim: usize,
    factor_dim: usize,
    drift: StateField,
    diffusion: StateField,
    common_diffusion: StateField,
    factor_drift: FactorField,
    factor_diffusion: FactorField,
    factor_common_diffusion: FactorField,
    bounds: CoefficientBounds,
}

impl std::fmt::Debug for SdeCoefficients {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeCoefficients")
            .field("state_dim", &self.state_dim)
            .field("common_dim", &self.common_dim)
            .field("factor_dim", &self.factor_dim)
            .field("bounds", &self.bounds)
            .finish()
    }
}

fn zero_state() -> StateField {
    Arc::new(|_, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0))
}

fn zero_factor() -> FactorField {
    Arc::new(|_, _, out: &mut [f64]| out.iter_mut().for_each(|v| *v = 0.0))
}

impl SdeCoefficients {
    /// All coefficients identically zero.
    pub fn zero(state_dim: usize, common_dim: usize) -> Self {
        SdeCoefficients {
            state_dim,
            common_dim,
            factor_dim: 0,
            drift: zero_state(),
            diffusion: zero_state(),
            common_diffusion: zero_state(),
            factor_drift: zero_factor(),
            factor_diffusion: zero_factor(),
            factor_common_diffusion: zero_factor(),
            bounds: CoefficientBounds {
                drift: 0.0,
                diffusion: 0.0,
                common_diffusion: 0.0,
                factor_drift: 0.0,
                factor_diffusion: 0.0,
                factor_common_diffusion: 0.0,
            },
        }
    }

    /// Scalar state with constant `b`, `σ`, `σ⁰`.
    pub fn constant(drift: f64, sigma: f64, sigma0: f64) -> Self {
        let mut c = Self::zero(1, 1);
        c.drift = Arc::new(move |_, out| out[0] = drift);
        c.diffusion = Arc::new(move |_, out| out[0] = sigma);
        c.common_diffusion = Arc::new(move |_, out| out[0] = sigma0);
        c.bounds.drift = drift.abs();
        c.bounds.diffusion = sigma.abs();
        c.bounds.common_diffusion = sigma0.abs();
        c
    }

    pub fn with_drift(mut self, f: impl Fn(&StateArgs<'_>, &mut [f64]) + Send + Sync + 'static, bound: f64) -> Self {
        self.drift = Arc::new(f);
        self.bounds.drift = bound;
        self
    }

    pub fn with_diffusion(mut self, f: impl Fn(&StateArgs<'_>, &mut [f64]) + Send + Sync + 'static, bound: f64) -> Self {
        self.diffusion = Arc::new(f);
        self.bounds.diffusion = bound;
        self
    }

    pub fn with_common_diffusion(
        mut self,
        f: impl Fn(&StateArgs<'_>, &mut [f64]) + Send + Sync + 'static,
        bound: f64,
    ) -> Self {
        self.common_diffusion = Arc::new(f);
        self.bounds.common_diffusion = bound;
        self
    }

    /// General factor dynamics of dimension `dim`.
    pub fn with_factor(mut self, dim: usize, drift: FactorField, diffusion: FactorField, common: FactorField) -> Self {
        self.factor_dim = dim;
        self.factor_drift = drift;
        self.factor_diffusion = diffusion;
        self.factor_common_diffusion = common;
        self.bounds.factor_drift = f64::INFINITY;
        self.bounds.factor_diffusion = f64::INFINITY;
        self.bounds.factor_common_diffusion = f64::INFINITY;
        self
    }

    /// Scalar factor with constant `k`, `γ`, `γ⁰` (requires `d₀ = 1`).
    pub fn with_constant_factor(mut self, k: f64, gamma: f64, gamma0: f64) -> Self {
        assert_eq!(self.common_dim, 1, "constant scalar factor needs a scalar common noise");
        self.factor_dim = 1;
        self.factor_drift = Arc::new(move |_, _, out| out[0] = k);
        self.factor_diffusion = Arc::new(move |_, _, out| out[0] = gamma);
        self.factor_common_diffusion = Arc::new(move |_, _, out| out[0] = gamma0);
        self.bounds.factor_drift = k.abs();
        self.bounds.factor_diffusion = gamma.abs();
        self.bounds.factor_common_diffusion = gamma0.abs();
        self
    }

    pub fn with_bounds(mut self, bounds: CoefficientBounds) -> Self {
        self.bounds = bounds;
        self
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn common_dim(&self) -> usize {
        self.common_dim
    }

    pub fn factor_dim(&self) -> usize {
        self.factor_dim
    }

    pub fn bounds(&self) -> &CoefficientBounds {
        &self.bounds
    }

    /// Evaluates `b`, `σ`, `σ⁰` into the scratch buffers.
    pub fn evaluate(&self, args: &StateArgs<'_>, out: &mut CoefficientValues) {
        (self.drift)(args, &mut out.drift);
        (self.diffusion)(args, &mut out.diffusion);
        (self.common_diffusion)(args, &mut out.common_diffusion);
    }

    pub fn evaluate_factor(&self, t: f64, y: &[f64], out: &mut FactorValues) {
        (self.factor_drift)(t, y, &mut out.drift);
        (self.factor_diffusion)(t, y, &mut out.diffusion);
        (self.factor_common_diffusion)(t, y, &mut out.common_diffusion);
    }

    pub fn values_buffer(&self) -> CoefficientValues {
        CoefficientValues {
            drift: vec![0.0; self.state_dim],
            diffusion: vec![0.0; self.state_dim * self.state_dim],
            common_diffusion: vec![0.0; self.state_dim * self.common_dim],
        }
    }

    pub fn factor_buffer(&self) -> FactorValues {
        FactorValues {
            drift: vec![0.0; self.factor_dim],
            diffusion: vec![0.0; self.factor_dim * self.factor_dim],
            common_diffusion: vec![0.0; self.factor_dim * self.common_dim],
        }
    }
}

/// Scratch buffers for one evaluation of the state coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientValues {
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub common_diffusion: Vec<f64>,
}

impl CoefficientValues {
    pub fn all_finite(&self) -> bool {
        self.drift.iter().chain(&self.diffusion).chain(&self.common_diffusion).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorValues {
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub common_diffusion: Vec<f64>,
}

/// Brownian motion started at 0 with decomposition `(0, W)`.
pub fn simulate_brownian(partition: &Arc<Partition>, dim: usize, rng: RngStream) -> Result<SamplePath> {
    if dim == 0 {
        return Err(invalid("Brownian dimension must be at least 1"));
    }
    let mut g = rng.generator();
    let n = partition.len();
    let mut values = vec![0.0; n * dim];
    for k in 0..partition.cells() {
        let sd = partition.dt(k).sqrt();
        for j in 0..dim {
            values[(k + 1) * dim + j] = values[k * dim + j] + sd * normal(&mut g);
        }
    }
    let fv = vec![0.0; values.len()];
    let mart = values.clone();
    Ok(SamplePath::from_parts(partition.clone(), dim, values, Some(Decomposition { finite_variation: fv, martingale: mart })))
}

/// Euler–Maruyama path of the factor `Y`; its own Brownian driver is drawn
/// from `rng`, the common increments are read from `common_path`.
pub fn simulate_factor(
    coeffs: &SdeCoefficients,
    y0: &[f64],
    partition: &Arc<Partition>,
    common_path: &SamplePath,
    rng: RngStream,
) -> Result<SamplePath> {
    let dy = coeffs.factor_dim();
    let d0 = coeffs.common_dim();
    if dy == 0 {
        return Err(invalid("coefficients carry no factor dynamics"));
    }
    if y0.len() != dy {
        return Err(invalid(format!("initial factor has dimension {}, expected {dy}", y0.len())));
    }
    if !common_path.partition().matches(partition) {
        return Err(Error::PartitionMismatch("common path lives on a different partition".into()));
    }
    if common_path.dim() != d0 {
        return Err(invalid("common path dimension does not match the coefficients"));
    }
    let n = partition.len();
    let mut values = vec![0.0; n * dy];
    let mut fv = vec![0.0; n * dy];
    let mut mart = vec![0.0; n * dy];
    values[..dy].copy_from_slice(y0);
    let mut buf = coeffs.factor_buffer();
    let mut g = rng.generator();
    let mut db = vec![0.0; dy];
    let mut dw0 = vec![0.0; d0];
    for k in 0..partition.cells() {
        let t = partition.times()[k];
        let dt = partition.dt(k);
        let sd = dt.sqrt();
        db.iter_mut().for_each(|v| *v = sd * normal(&mut g));
        common_path.increment_into(k, &mut dw0);
        let (cur, next) = values.split_at_mut((k + 1) * dy);
        let y = &cur[k * dy..];
        coeffs.evaluate_factor(t, y, &mut buf);
        for i in 0..dy {
            let drift = buf.drift[i] * dt;
            let mut noise = 0.0;
            for j in 0..dy {
                noise += buf.diffusion[i * dy + j] * db[j];
            }
            for j in 0..d0 {
                noise += buf.common_diffusion[i * d0 + j] * dw0[j];
            }
            next[i] = y[i] + drift + noise;
            fv[(k + 1) * dy + i] = fv[k * dy + i] + drift;
            mart[(k + 1) * dy + i] = mart[k * dy + i] + noise;
            if !next[i].is_finite() {
                return Err(Error::BlowUp { step: k, time: t });
            }
        }
    }
    SamplePath::new(partition.clone(), dy, values)?.with_decomposition(fv, mart)
}
