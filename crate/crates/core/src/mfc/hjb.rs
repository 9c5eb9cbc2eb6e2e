//! HJB residuals of candidate value functions on a moment lattice.

use serde::Serialize;

use super::{factor_part, gaussian_moments, generator, AffineFeedback, ControlProblem, MeasureArg, RiccatiSolution, ValueCandidate};
use crate::error::{invalid, Result};
use crate::fmt_f64;
use crate::measures::MeasureMoments;
use crate::particle::FeedbackLaw;

/// Gaussian laws `N(mean, var)` at times `t`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LqLattice {
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
    pub times: Vec<f64>,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

impl LqLattice {
    pub fn uniform(mean: (f64, f64, usize), var: (f64, f64, usize), horizon: f64, times: usize) -> Self {
        LqLattice {
            means: linspace(mean.0, mean.1, mean.2),
            vars: linspace(var.0, var.1, var.2),
            times: linspace(0.0, horizon, times),
        }
    }

    /// 5 means in `[−0.5, 0.5]`, 5 variances in `[0.1, 1]`, 9 times.
    pub fn standard(horizon: f64) -> Self {
        Self::uniform((-0.5, 0.5, 5), (0.1, 1.0, 5), horizon, 9)
    }

    pub fn len(&self) -> usize {
        self.means.len() * self.vars.len() * self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Largest `|a*|` of the Riccati feedback over the lattice, for `x`
    /// within four standard deviations of the mean.
    pub fn feedback_bound(&self, sol: &RiccatiSolution) -> f64 {
        let mut sup = 0.0f64;
        for &t in &self.times {
            for &mean in &self.means {
                for &var in &self.vars {
                    for z in [-4.0, 4.0] {
                        sup = sup.max(sol.optimal_control(t, mean + z * var.sqrt(), mean).abs());
                    }
                }
            }
        }
        sup
    }
}

/// Centered affine feedbacks `c₀ + c₁(x − mean)` on a grid, followed by
/// `refine` zoom steps that halve the spacing around the incumbent.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlFamily {
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    pub refine: usize,
}

impl Default for ControlFamily {
    fn default() -> Self {
        ControlFamily { c0: linspace(-3.0, 3.0, 13), c1: linspace(-3.0, 3.0, 13), refine: 12 }
    }
}

fn spacing(v: &[f64]) -> f64 {
    if v.len() < 2 {
        0.0
    } else {
        (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64
    }
}

impl ControlFamily {
    pub fn grid(c0: Vec<f64>, c1: Vec<f64>) -> Self {
        ControlFamily { c0, c1, refine: 0 }
    }

    /// `(sup, c₀, c₁)` of `objective` over the family.
    pub fn sup(&self, objective: impl Fn(f64, f64) -> f64) -> Result<(f64, f64, f64)> {
        if self.c0.is_empty() || self.c1.is_empty() {
            return Err(invalid("control family is empty"));
        }
        let mut best = (f64::NEG_INFINITY, self.c0[0], self.c1[0]);
        for &a in &self.c0 {
            for &b in &self.c1 {
                let v = objective(a, b);
                if v > best.0 {
                    best = (v, a, b);
                }
            }
        }
        let (mut h0, mut h1) = (spacing(&self.c0), spacing(&self.c1));
        for _ in 0..self.refine {
            h0 *= 0.5;
            h1 *= 0.5;
            let (_, a0, b0) = best;
            for i in -1i32..=1 {
                for j in -1i32..=1 {
                    if i == 0 && j == 0 {
                        continue;
                    }
                    let (a, b) = (a0 + i as f64 * h0, b0 + j as f64 * h1);
                    let v = objective(a, b);
                    if v > best.0 {
                        best = (v, a, b);
                    }
                }
            }
        }
        Ok(best)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbRow {
    pub t: f64,
    pub mean: f64,
    pub var: f64,
    pub value: f64,
    /// `∂_t V` plus the factor terms.
    pub time_terms: f64,
    pub sup: f64,
    pub c0: f64,
    pub c1: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HjbReport {
    pub rows: Vec<HjbRow>,
    pub max_abs_residual: f64,
    /// `max |V(T, y, m) − g(y, m)|` over the lattice.
    pub terminal_error: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl HjbReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,mean,var,value,time_terms,sup,c0,c1,residual\n");
        for r in &self.rows {
            let cols = [r.t, r.mean, r.var, r.value, r.time_terms, r.sup, r.c0, r.c1, r.residual];
            s.push_str(&cols.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

/// Residual of
///
/// ```text
/// 0 = −∂_t V − k·∂_y V − ½(γγᵀ + γ⁰γ⁰ᵀ) : ∂²_y V − sup_a {∫ f^a dm + L^a V}
/// ```
///
/// at every lattice node, with the sup taken over `family` and a fixed
/// factor value `y`. The report passes iff the largest residual is at most
/// `tolerance` and the terminal condition holds to `tolerance`.
pub fn hjb_residual(
    problem: &ControlProblem,
    value: &dyn ValueCandidate,
    lattice: &LqLattice,
    family: &ControlFamily,
    y: &[f64],
    tolerance: f64,
) -> Result<HjbReport> {
    use rayon::prelude::*;
    if lattice.is_empty() {
        return Err(invalid("residual lattice is empty"));
    }
    if y.len() != problem.coeffs.factor_dim() {
        return Err(invalid("factor value has the wrong dimension"));
    }
    let nodes: Vec<(f64, f64, f64)> = lattice
        .times
        .iter()
        .flat_map(|&t| lattice.means.iter().flat_map(move |&m| lattice.vars.iter().map(move |&v| (t, m, v))))
        .collect();
    let rows: Vec<HjbRow> = nodes
        .par_iter()
        .map(|&(t, mean, var)| {
            let mo = gaussian_moments(mean, var);
            let m = MeasureArg::Gaussian { mean, var };
            let time_terms = factor_part(problem, value, t, y, &mo);
            let (sup, c0, c1) = family.sup(|c0, c1| {
                generator(problem, value, t, y, m, &AffineFeedback::centered(c0, c1, problem.a_max))
            })?;
            Ok(HjbRow { t, mean, var, value: value.value(t, y, &mo), time_terms, sup, c0, c1, residual: -time_terms - sup })
        })
        .collect::<Result<_>>()?;
    let max_abs_residual = rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max);
    let mut terminal_error = 0.0f64;
    for &mean in &lattice.means {
        for &var in &lattice.vars {
            let mo = gaussian_moments(mean, var);
            let e = (value.value(problem.horizon, y, &mo) - (problem.terminal)(y, &mo)).abs();
            terminal_error = terminal_error.max(e);
        }
    }
    let pass = max_abs_residual <= tolerance && terminal_error <= tolerance;
    Ok(HjbReport { rows, max_abs_residual, terminal_error, tolerance, pass })
}

/// Piecewise-constant feedback on the bins cut by `edges`.
#[derive(Debug, Clone, PartialEq)]
struct PiecewiseFeedback {
    edges: Vec<f64>,
    values: Vec<f64>,
}

impl FeedbackLaw for PiecewiseFeedback {
    fn control(&self, _t: f64, x: &[f64], _m: &MeasureMoments) -> f64 {
        self.values[self.edges.partition_point(|e| *e <= x[0])]
    }

    fn kinks(&self, _t: f64, _m: &MeasureMoments) -> Vec<f64> {
        self.edges.clone()
    }
}

/// Sup over the affine family against a nonparametric sup over controls
/// constant on bins of the state.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilyGap {
    pub t: f64,
    pub mean: f64,
    pub var: f64,
    pub affine_sup: f64,
    pub piecewise_sup: f64,
    /// `piecewise_sup − affine_sup`; positive values mean the affine family
    /// misses part of the supremum.
    pub gap: f64,
}

const GOLDEN_ITERS: usize = 80;
const SWEEPS: usize = 3;

/// Compares the affine-family sup with a coordinate-ascent sup over
/// controls constant on the bins `mean + sd·z` for the cut points `z`.
pub fn family_gap(
    problem: &ControlProblem,
    value: &dyn ValueCandidate,
    family: &ControlFamily,
    node: (f64, f64, f64),
    cuts: &[f64],
) -> Result<FamilyGap> {
    let (t, mean, var) = node;
    let y: Vec<f64> = vec![0.0; problem.coeffs.factor_dim()];
    let m = MeasureArg::Gaussian { mean, var };
    let (affine_sup, _, _) =
        family.sup(|c0, c1| generator(problem, value, t, &y, m, &AffineFeedback::centered(c0, c1, problem.a_max)))?;
    let edges: Vec<f64> = cuts.iter().map(|z| mean + var.sqrt() * z).collect();
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(invalid("bin cut points must increase"));
    }
    let mut pw = PiecewiseFeedback { values: vec![0.0; edges.len() + 1], edges };
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut best = generator(problem, value, t, &y, m, &pw);
    for _ in 0..SWEEPS {
        for j in 0..pw.values.len() {
            let eval = |a: f64, pw: &mut PiecewiseFeedback| {
                pw.values[j] = a;
                generator(problem, value, t, &y, m, pw)
            };
            let (mut lo, mut hi) = (-problem.a_max, problem.a_max);
            let mut x1 = hi - phi * (hi - lo);
            let mut x2 = lo + phi * (hi - lo);
            let mut f1 = eval(x1, &mut pw);
            let mut f2 = eval(x2, &mut pw);
            for _ in 0..GOLDEN_ITERS {
                if f1 < f2 {
                    lo = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = lo + phi * (hi - lo);
                    f2 = eval(x2, &mut pw);
                } else {
                    hi = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = hi - phi * (hi - lo);
                    f1 = eval(x1, &mut pw);
                }
            }
            let x = 0.5 * (lo + hi);
            best = eval(x, &mut pw);
        }
    }
    Ok(FamilyGap { t, mean, var, affine_sup, piecewise_sup: best, gap: best - affine_sup })
}
