//! Random fields `U_t(m) = U₀(m) + Σ_r ∫₀ᵗ f_r(m) dD_r` driven by scalar
//! finite-variation or martingale paths.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::measures::{CylindricalFunctional, EmpiricalMeasure};
use crate::particle::ParticleEnsemble;
use crate::paths::{simulate_brownian, Partition, SamplePath};
use crate::rng::tags;

/// Which Brownian motion drives a martingale driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseTag {
    /// Component of the idiosyncratic noise of one reference particle.
    Idiosyncratic { component: usize, particle: usize },
    /// Component of the common noise `W⁰`.
    Common { component: usize },
    /// A Brownian motion independent of the particle system.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DriverKind {
    /// `B_t = rate · t`.
    FiniteVariation { rate: f64 },
    /// `N_t = scale · W_t` for the tagged Brownian motion `W`.
    Martingale { scale: f64, noise: NoiseTag },
}

/// One term `f(m) dD` of the field dynamics.
#[derive(Debug, Clone)]
pub struct FieldDriver {
    pub coefficient: CylindricalFunctional,
    pub kind: DriverKind,
}

#[derive(Debug, Clone)]
pub struct RandomFieldSpec {
    pub name: String,
    pub initial: CylindricalFunctional,
    pub drivers: Vec<FieldDriver>,
}

impl RandomFieldSpec {
    /// Deterministic field `U_t = U₀`.
    pub fn constant_in_time(name: impl Into<String>, initial: CylindricalFunctional) -> Self {
        RandomFieldSpec { name: name.into(), initial, drivers: Vec::new() }
    }

    pub fn with_driver(mut self, coefficient: CylindricalFunctional, kind: DriverKind) -> Self {
        self.drivers.push(FieldDriver { coefficient, kind });
        self
    }

    pub fn dim(&self) -> usize {
        self.initial.dim()
    }

    fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.drivers.iter().any(|r| r.coefficient.dim() != d) {
            return Err(invalid("field coefficients act on a different state dimension"));
        }
        Ok(())
    }

    /// Builds the driver paths for this spec from an ensemble's noises.
    pub fn driver_paths(&self, ens: &ParticleEnsemble) -> Result<Vec<SamplePath>> {
        let p = ens.partition();
        self.drivers
            .iter()
            .enumerate()
            .map(|(r, drv)| -> Result<SamplePath> {
                match drv.kind {
                    DriverKind::FiniteVariation { rate } => {
                        let path = SamplePath::from_fn(p.clone(), 1, |t| vec![rate * t])?;
                        let n = path.len();
                        path.with_decomposition(
                            (0..n).map(|k| rate * p.times()[k]).collect(),
                            vec![0.0; n],
                        )
                    }
                    DriverKind::Martingale { scale, noise } => {
                        let (w, component) = match noise {
                            NoiseTag::Common { component } => {
                                if component >= ens.coefficients().common_dim() {
                                    return Err(invalid(format!(
                                        "driver {r} uses common noise component {component}, which the ensemble lacks"
                                    )));
                                }
                                (ens.common_path().clone(), component)
                            }
                            NoiseTag::Idiosyncratic { component, particle } => {
                                if component >= ens.dim() || particle >= ens.len() {
                                    return Err(invalid(format!(
                                        "driver {r} references an idiosyncratic noise the ensemble lacks"
                                    )));
                                }
                                (ens.idiosyncratic_noise(particle), component)
                            }
                            NoiseTag::Independent => {
                                (simulate_brownian(p, 1, ens.rng().derive(tags::FIELD_DRIVER, r as u64))?, 0)
                            }
                        };
                        let vals: Vec<f64> = (0..w.len()).map(|k| scale * w.at(k)[component]).collect();
                        let n = vals.len();
                        SamplePath::scalar(p.clone(), vals.clone())?.with_decomposition(vec![0.0; n], vals)
                    }
                }
            })
            .collect()
    }
}

/// A random field on a grid: the initial functional plus grid integrals of
/// the driver increments.
#[derive(Debug, Clone)]
pub struct RandomField {
    spec: RandomFieldSpec,
    partition: Arc<Partition>,
    /// `weights[k][r] = Σ_{j<k} ΔD_r,j`.
    weights: Vec<Vec<f64>>,
    increments: Vec<Vec<f64>>,
}

/// Integrates the spec's coefficient fields against the driver paths.
pub fn build_random_field(spec: &RandomFieldSpec, drivers: &[SamplePath]) -> Result<RandomField> {
    spec.validate()?;
    if drivers.len() != spec.drivers.len() {
        return Err(invalid("one driver path per field driver is required"));
    }
    let partition = match drivers.first() {
        Some(d) => d.partition().clone(),
        None => Arc::new(Partition::uniform(1.0, 1)?),
    };
    if drivers.iter().any(|d| !d.partition().matches(&partition) || d.dim() != 1) {
        return Err(invalid("driver paths must be scalar and share one partition"));
    }
    let cells = partition.cells();
    let r = drivers.len();
    let mut increments = vec![vec![0.0; r]; cells];
    let mut weights = vec![vec![0.0; r]; cells + 1];
    for k in 0..cells {
        for (j, drv) in drivers.iter().enumerate() {
            let inc = drv.at(k + 1)[0] - drv.at(k)[0];
            increments[k][j] = inc;
            weights[k + 1][j] = weights[k][j] + inc;
        }
    }
    Ok(RandomField { spec: spec.clone(), partition, weights, increments })
}

impl RandomField {
    pub fn spec(&self) -> &RandomFieldSpec {
        &self.spec
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    /// Driver increments `ΔD_r` over cell `k`.
    pub fn increments(&self, k: usize) -> &[f64] {
        &self.increments[k]
    }

    /// `U_{t_k}` as a cylindrical functional.
    pub fn at(&self, k: usize) -> Result<CylindricalFunctional> {
        let mut terms: Vec<(f64, &CylindricalFunctional)> = vec![(1.0, &self.spec.initial)];
        for (w, drv) in self.weights[k].iter().zip(&self.spec.drivers) {
            terms.push((*w, &drv.coefficient));
        }
        CylindricalFunctional::linear_combination(format!("{}@{k}", self.spec.name), &terms)
    }

    pub fn eval(&self, k: usize, m: &EmpiricalMeasure) -> Result<f64> {
        self.at(k)?.eval(m)
    }

    /// Largest gap between `∂_xδ_m U_{t_k}(m, x)` computed from the
    /// integrated field and from integrating `∂_xδ_m` of the coefficients.
    pub fn derivative_decomposition_error(&self, k: usize, m: &EmpiricalMeasure, x: &[f64]) -> Result<f64> {
        let direct = self.at(k)?.freeze(m)?.d_lions(x);
        let mut summed = self.spec.initial.freeze(m)?.d_lions(x);
        let coef: Vec<Vec<f64>> = self
            .spec
            .drivers
            .iter()
            .map(|drv| drv.coefficient.freeze(m).map(|f| f.d_lions(x)))
            .collect::<Result<_>>()?;
        for j in 0..k {
            for (r, c) in coef.iter().enumerate() {
                for (s, v) in summed.iter_mut().zip(c) {
                    *s += v * self.increments[j][r];
                }
            }
        }
        Ok(direct.iter().zip(&summed).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }
}
