//! Cylindrical functionals `u(m) = F(⟨φ₁,m⟩, …, ⟨φ_k,m⟩)` and their exact
//! measure derivatives.
//!
//! With `v_i = ⟨φ_i, m⟩`:
//!
//! ```text
//! δ_m u(m,x)          = Σ_i ∂_iF(v) φ_i(x)
//! ∂_x δ_m u(m,x)      = Σ_i ∂_iF(v) ∇φ_i(x)
//! ∂²_x δ_m u(m,x)     = Σ_i ∂_iF(v) ∇²φ_i(x)
//! δ²_m u(m,x,x̂)       = Σ_ij ∂²_ijF(v) φ_i(x) φ_j(x̂)
//! ∂_x∂_x̂ δ²_m u(m,x,x̂) = Σ_ij ∂²_ijF(v) ∇φ_i(x) ∇φ_j(x̂)ᵀ
//! ```

use std::fmt::Debug;
use std::sync::Arc;

use super::EmpiricalMeasure;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;

/// A test function `φ: R^d → R` with exact derivatives.
pub trait TestFunction: Debug + Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64], out: &mut [f64]);
    /// Row-major `d × d`.
    fn hessian(&self, x: &[f64], out: &mut [f64]);
    /// `sup_x |∇²φ(x)|` (entrywise).
    fn hessian_bound(&self) -> f64;
}

/// An outer map `F: R^k → R` with exact gradient and Hessian.
pub trait OuterFunction: Debug + Send + Sync {
    fn arity(&self) -> usize;
    fn value(&self, v: &[f64]) -> f64;
    fn gradient(&self, v: &[f64], out: &mut [f64]);
    /// Row-major `k × k`, symmetric.
    fn hessian(&self, v: &[f64], out: &mut [f64]);
    /// Polynomial outer maps make the λ-integrands polynomial, so the
    /// integral identities hold to quadrature roundoff.
    fn is_polynomial(&self) -> bool;
}

/// `φ(x) = c·x + offset`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub coef: Vec<f64>,
    pub offset: f64,
}

impl TestFunction for Linear {
    fn dim(&self) -> usize {
        self.coef.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.coef.iter().zip(x).map(|(c, x)| c * x).sum::<f64>() + self.offset
    }
    fn gradient(&self, _x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.coef);
    }
    fn hessian(&self, _x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    fn hessian_bound(&self) -> f64 {
        0.0
    }
}

/// `φ(x) = |x|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SquaredNorm {
    pub dim: usize,
}

impl TestFunction for SquaredNorm {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (o, v) in out.iter_mut().zip(x) {
            *o = 2.0 * v;
        }
    }
    fn hessian(&self, _x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            out[i * d + i] = 2.0;
        }
    }
    fn hessian_bound(&self) -> f64 {
        2.0
    }
}

/// `φ(x) = cos(ω·x + phase)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cosine {
    pub freq: Vec<f64>,
    pub phase: f64,
}

impl Cosine {
    fn arg(&self, x: &[f64]) -> f64 {
        self.freq.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.phase
    }
}

impl TestFunction for Cosine {
    fn dim(&self) -> usize {
        self.freq.len()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.arg(x).cos()
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let s = -self.arg(x).sin();
        for (o, w) in out.iter_mut().zip(&self.freq) {
            *o = s * w;
        }
    }
    fn hessian(&self, x: &[f64], out: &mut [f64]) {
        let c = -self.arg(x).cos();
        let d = self.freq.len();
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = c * self.freq[i] * self.freq[j];
            }
        }
    }
    fn hessian_bound(&self) -> f64 {
        self.freq.iter().map(|w| w * w).fold(0.0, f64::max)
    }
}

/// `F(v) = c + l·v + ½ vᵀ H v` with symmetric `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    pub constant: f64,
    pub linear: Vec<f64>,
    pub hessian: Vec<f64>,
}

impl QuadraticForm {
    pub fn new(constant: f64, linear: Vec<f64>, hessian: Vec<f64>) -> Result<Self> {
        let k = linear.len();
        if hessian.len() != k * k {
            return Err(invalid("quadratic form Hessian must be k × k"));
        }
        for i in 0..k {
            for j in 0..i {
                if hessian[i * k + j] != hessian[j * k + i] {
                    return Err(invalid("quadratic form Hessian must be symmetric"));
                }
            }
        }
        Ok(QuadraticForm { constant, linear, hessian })
    }
}

impl OuterFunction for QuadraticForm {
    fn arity(&self) -> usize {
        self.linear.len()
    }
    fn value(&self, v: &[f64]) -> f64 {
        let k = self.arity();
        let mut q = 0.0;
        for i in 0..k {
            for j in 0..k {
                q += v[i] * self.hessian[i * k + j] * v[j];
            }
        }
        self.constant + self.linear.iter().zip(v).map(|(l, v)| l * v).sum::<f64>() + 0.5 * q
    }
    fn gradient(&self, v: &[f64], out: &mut [f64]) {
        let k = self.arity();
        for i in 0..k {
            out[i] = self.linear[i] + (0..k).map(|j| self.hessian[i * k + j] * v[j]).sum::<f64>();
        }
    }
    fn hessian(&self, _v: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&self.hessian);
    }
    fn is_polynomial(&self) -> bool {
        true
    }
}

/// Smooth scalar maps of a single feature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalarMap {
    Cos,
    Sin,
    Exp,
}

impl ScalarMap {
    fn derivatives(self, v: f64) -> (f64, f64, f64) {
        match self {
            ScalarMap::Cos => (v.cos(), -v.sin(), -v.cos()),
            ScalarMap::Sin => (v.sin(), v.cos(), -v.sin()),
            ScalarMap::Exp => {
                let e = v.exp();
                (e, e, e)
            }
        }
    }
}

impl OuterFunction for ScalarMap {
    fn arity(&self) -> usize {
        1
    }
    fn value(&self, v: &[f64]) -> f64 {
        self.derivatives(v[0]).0
    }
    fn gradient(&self, v: &[f64], out: &mut [f64]) {
        out[0] = self.derivatives(v[0]).1;
    }
    fn hessian(&self, v: &[f64], out: &mut [f64]) {
        out[0] = self.derivatives(v[0]).2;
    }
    fn is_polynomial(&self) -> bool {
        false
    }
}

/// `F(v₁, …, v_r) = Σ_r w_r F_r(v_r)` over concatenated argument blocks.
#[derive(Debug, Clone)]
pub struct Combination {
    terms: Vec<(f64, Arc<dyn OuterFunction>)>,
}

impl Combination {
    pub fn new(terms: Vec<(f64, Arc<dyn OuterFunction>)>) -> Self {
        Combination { terms }
    }
}

impl OuterFunction for Combination {
    fn arity(&self) -> usize {
        self.terms.iter().map(|(_, f)| f.arity()).sum()
    }
    fn value(&self, v: &[f64]) -> f64 {
        let mut off = 0;
        let mut s = 0.0;
        for (w, f) in &self.terms {
            let k = f.arity();
            s += w * f.value(&v[off..off + k]);
            off += k;
        }
        s
    }
    fn gradient(&self, v: &[f64], out: &mut [f64]) {
        let mut off = 0;
        for (w, f) in &self.terms {
            let k = f.arity();
            f.gradient(&v[off..off + k], &mut out[off..off + k]);
            out[off..off + k].iter_mut().for_each(|g| *g *= w);
            off += k;
        }
    }
    fn hessian(&self, v: &[f64], out: &mut [f64]) {
        let total = self.arity();
        out.iter_mut().for_each(|h| *h = 0.0);
        let mut off = 0;
        let mut block = Vec::new();
        for (w, f) in &self.terms {
            let k = f.arity();
            block.resize(k * k, 0.0);
            f.hessian(&v[off..off + k], &mut block);
            for i in 0..k {
                for j in 0..k {
                    out[(off + i) * total + off + j] = w * block[i * k + j];
                }
            }
            off += k;
        }
    }
    fn is_polynomial(&self) -> bool {
        self.terms.iter().all(|(_, f)| f.is_polynomial())
    }
}

/// `u(m) = F(⟨φ₁,m⟩, …, ⟨φ_k,m⟩)`.
#[derive(Debug, Clone)]
pub struct CylindricalFunctional {
    name: String,
    dim: usize,
    outer: Arc<dyn OuterFunction>,
    tests: Vec<Arc<dyn TestFunction>>,
}

impl CylindricalFunctional {
    pub fn new(
        name: impl Into<String>,
        outer: Arc<dyn OuterFunction>,
        tests: Vec<Arc<dyn TestFunction>>,
    ) -> Result<Self> {
        if tests.is_empty() {
            return Err(invalid("a cylindrical functional needs at least one test function"));
        }
        if outer.arity() != tests.len() {
            return Err(invalid(format!(
                "outer map takes {} features but {} test functions were given",
                outer.arity(),
                tests.len()
            )));
        }
        let dim = tests[0].dim();
        if tests.iter().any(|t| t.dim() != dim) {
            return Err(invalid("test functions disagree on the state dimension"));
        }
        Ok(CylindricalFunctional { name: name.into(), dim, outer, tests })
    }

    fn scalar(name: &str, outer: QuadraticForm, tests: Vec<Arc<dyn TestFunction>>) -> Self {
        Self::new(name, Arc::new(outer), tests).expect("built-in functional is well formed")
    }

    /// `∫ x dm` on the line.
    pub fn mean() -> Self {
        Self::scalar("mean", QuadraticForm { constant: 0.0, linear: vec![1.0], hessian: vec![0.0] }, vec![x_test()])
    }

    /// `(∫ x dm)²`.
    pub fn mean_squared() -> Self {
        Self::scalar("mean-squared", QuadraticForm { constant: 0.0, linear: vec![0.0], hessian: vec![2.0] }, vec![x_test()])
    }

    /// `∫ x² dm`.
    pub fn second_moment() -> Self {
        Self::scalar(
            "second-moment",
            QuadraticForm { constant: 0.0, linear: vec![1.0], hessian: vec![0.0] },
            vec![Arc::new(SquaredNorm { dim: 1 })],
        )
    }

    /// `∫ x² dm − (∫ x dm)²`.
    pub fn variance() -> Self {
        Self::scalar(
            "variance",
            QuadraticForm { constant: 0.0, linear: vec![0.0, 1.0], hessian: vec![-2.0, 0.0, 0.0, 0.0] },
            vec![x_test(), Arc::new(SquaredNorm { dim: 1 })],
        )
    }

    /// `(∫ x² dm)²`.
    pub fn second_moment_squared() -> Self {
        Self::scalar(
            "second-moment-squared",
            QuadraticForm { constant: 0.0, linear: vec![0.0], hessian: vec![2.0] },
            vec![Arc::new(SquaredNorm { dim: 1 })],
        )
    }

    /// `cos(∫ x dm)`.
    pub fn cos_mean() -> Self {
        Self::new("cos-mean", Arc::new(ScalarMap::Cos), vec![x_test()]).expect("built-in functional is well formed")
    }

    /// `u ≡ c` on measures over `R^dim`.
    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(
            "constant",
            Arc::new(QuadraticForm { constant: c, linear: vec![0.0], hessian: vec![0.0] }),
            vec![Arc::new(Linear { coef: vec![0.0; dim], offset: 0.0 })],
        )
        .expect("constant functional is well formed")
    }

    /// `∫ x_j dm` on measures over `R^dim`.
    pub fn coordinate_mean(dim: usize, j: usize) -> Result<Self> {
        if j >= dim {
            return Err(invalid("coordinate index out of range"));
        }
        let mut coef = vec![0.0; dim];
        coef[j] = 1.0;
        Self::new(
            format!("mean-{j}"),
            Arc::new(QuadraticForm { constant: 0.0, linear: vec![1.0], hessian: vec![0.0] }),
            vec![Arc::new(Linear { coef, offset: 0.0 })],
        )
    }

    /// `Σ_r w_r u_r`, with concatenated features.
    pub fn linear_combination(name: impl Into<String>, terms: &[(f64, &CylindricalFunctional)]) -> Result<Self> {
        if terms.is_empty() {
            return Err(invalid("empty linear combination"));
        }
        let dim = terms[0].1.dim;
        if terms.iter().any(|(_, u)| u.dim != dim) {
            return Err(invalid("combined functionals live on different state dimensions"));
        }
        let outer = Combination::new(terms.iter().map(|(w, u)| (*w, u.outer.clone())).collect());
        let tests = terms.iter().flat_map(|(_, u)| u.tests.iter().cloned()).collect();
        Self::new(name, Arc::new(outer), tests)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn arity(&self) -> usize {
        self.tests.len()
    }

    pub fn outer(&self) -> &Arc<dyn OuterFunction> {
        &self.outer
    }

    pub fn tests(&self) -> &[Arc<dyn TestFunction>] {
        &self.tests
    }

    pub fn is_polynomial(&self) -> bool {
        self.outer.is_polynomial()
    }

    /// Largest recorded `sup |∇²φ_i|`.
    pub fn hessian_bound(&self) -> f64 {
        self.tests.iter().map(|t| t.hessian_bound()).fold(0.0, f64::max)
    }

    /// Features `v_i = ⟨φ_i, m⟩`.
    pub fn features(&self, m: &EmpiricalMeasure) -> Result<Vec<f64>> {
        self.check_dim(m.dim())?;
        let v: Vec<f64> = self.tests.iter().map(|t| m.integrate(|x| t.value(x))).collect();
        if v.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow(format!("{}: non-finite feature", self.name)));
        }
        Ok(v)
    }

    /// Features of the uniform measure on row-major points.
    pub fn features_of_points(&self, points: &[f64]) -> Result<Vec<f64>> {
        let n = points.len() / self.dim;
        let mut v = vec![0.0; self.tests.len()];
        for x in points.chunks_exact(self.dim) {
            for (vi, t) in v.iter_mut().zip(&self.tests) {
                *vi += t.value(x);
            }
        }
        v.iter_mut().for_each(|vi| *vi /= n as f64);
        if v.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericOverflow(format!("{}: non-finite feature", self.name)));
        }
        Ok(v)
    }

    pub fn eval(&self, m: &EmpiricalMeasure) -> Result<f64> {
        let v = self.features(m)?;
        self.eval_features(&v)
    }

    pub fn eval_features(&self, v: &[f64]) -> Result<f64> {
        let u = self.outer.value(v);
        if !u.is_finite() {
            return Err(Error::NumericOverflow(format!("{}: non-finite value", self.name)));
        }
        Ok(u)
    }

    /// Freezes the outer derivatives at `m`; the returned object evaluates
    /// every derivative field in `x` without touching `m` again.
    pub fn freeze(&self, m: &EmpiricalMeasure) -> Result<FrozenDerivatives> {
        let v = self.features(m)?;
        Ok(self.freeze_features(&v))
    }

    pub fn freeze_features(&self, v: &[f64]) -> FrozenDerivatives {
        let k = self.tests.len();
        let mut grad = vec![0.0; k];
        let mut hess = vec![0.0; k * k];
        self.outer.gradient(v, &mut grad);
        self.outer.hessian(v, &mut hess);
        FrozenDerivatives { dim: self.dim, value: self.outer.value(v), tests: self.tests.clone(), grad, hess }
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.dim {
            return Err(invalid(format!("{} acts on R^{}, measure lives in R^{d}", self.name, self.dim)));
        }
        Ok(())
    }
}

fn x_test() -> Arc<dyn TestFunction> {
    Arc::new(Linear { coef: vec![1.0], offset: 0.0 })
}

/// Derivative fields of a cylindrical functional at a fixed measure.
#[derive(Debug, Clone)]
pub struct FrozenDerivatives {
    dim: usize,
    value: f64,
    tests: Vec<Arc<dyn TestFunction>>,
    grad: Vec<f64>,
    hess: Vec<f64>,
}

impl FrozenDerivatives {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `u(m)`.
    pub fn value(&self) -> f64 {
        self.value
    }

    /// `∂_iF(v)`.
    pub fn outer_gradient(&self) -> &[f64] {
        &self.grad
    }

    /// `∂²_ijF(v)`, row-major.
    pub fn outer_hessian(&self) -> &[f64] {
        &self.hess
    }

    pub fn tests(&self) -> &[Arc<dyn TestFunction>] {
        &self.tests
    }

    /// `δ_m u(m, x)`.
    pub fn dm(&self, x: &[f64]) -> f64 {
        self.tests.iter().zip(&self.grad).map(|(t, g)| g * t.value(x)).sum()
    }

    /// `∂_x δ_m u(m, x)`.
    pub fn d_lions_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = vec![0.0; self.dim];
        for (t, g) in self.tests.iter().zip(&self.grad) {
            if *g == 0.0 {
                continue;
            }
            t.gradient(x, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += g * b;
            }
        }
    }

    pub fn d_lions(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.d_lions_into(x, &mut out);
        out
    }

    /// `∂²_x δ_m u(m, x)`, row-major `d × d`.
    pub fn d2x_dm_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut buf = vec![0.0; self.dim * self.dim];
        for (t, g) in self.tests.iter().zip(&self.grad) {
            if *g == 0.0 {
                continue;
            }
            t.hessian(x, &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += g * b;
            }
        }
    }

    pub fn d2x_dm(&self, x: &[f64]) -> Matrix {
        let mut out = vec![0.0; self.dim * self.dim];
        self.d2x_dm_into(x, &mut out);
        Matrix::from_row_major(self.dim, self.dim, out)
    }

    /// `δ²_m u(m, x, x̂)`.
    pub fn dm2(&self, x: &[f64], xh: &[f64]) -> f64 {
        let k = self.tests.len();
        let a: Vec<f64> = self.tests.iter().map(|t| t.value(x)).collect();
        let b: Vec<f64> = self.tests.iter().map(|t| t.value(xh)).collect();
        // pairing (i, j) with (j, i) keeps the value exactly symmetric in (x, x̂)
        let mut s = 0.0;
        for i in 0..k {
            s += self.hess[i * k + i] * (a[i] * b[i]);
            for j in i + 1..k {
                let h = 0.5 * (self.hess[i * k + j] + self.hess[j * k + i]);
                s += h * (a[i] * b[j] + a[j] * b[i]);
            }
        }
        s
    }

    /// `∇φ_i(x)` stacked as a row-major `k × d` table. The cross derivative
    /// is `Gᵀ(x) ∇²F G(x̂)` in terms of these tables.
    pub fn gradient_table_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, t) in self.tests.iter().enumerate() {
            t.gradient(x, &mut out[i * self.dim..(i + 1) * self.dim]);
        }
    }

    /// `∂_x ∂_x̂ δ²_m u(m, x, x̂)`, row-major `d × d`.
    pub fn dm2_cross(&self, x: &[f64], xh: &[f64]) -> Matrix {
        let (k, d) = (self.tests.len(), self.dim);
        let mut ga = vec![0.0; k * d];
        let mut gb = vec![0.0; k * d];
        self.gradient_table_into(x, &mut ga);
        self.gradient_table_into(xh, &mut gb);
        let mut out = Matrix::zeros(d, d);
        for i in 0..k {
            for j in 0..k {
                let h = self.hess[i * k + j];
                if h == 0.0 {
                    continue;
                }
                for a in 0..d {
                    for b in 0..d {
                        let cur = out.get(a, b);
                        out.set(a, b, cur + h * ga[i * d + a] * gb[j * d + b]);
                    }
                }
            }
        }
        out
    }
}

/// `u(m)`.
pub fn eval(u: &CylindricalFunctional, m: &EmpiricalMeasure) -> Result<f64> {
    u.eval(m)
}

/// `δ_m u(m, x)`.
pub fn dm(u: &CylindricalFunctional, m: &EmpiricalMeasure, x: &[f64]) -> Result<f64> {
    Ok(u.freeze(m)?.dm(x))
}

/// `∂_x δ_m u(m, x)`, the Lions derivative.
pub fn d_lions(u: &CylindricalFunctional, m: &EmpiricalMeasure, x: &[f64]) -> Result<Vec<f64>> {
    Ok(u.freeze(m)?.d_lions(x))
}

/// `∂²_x δ_m u(m, x)`.
pub fn d2x_dm(u: &CylindricalFunctional, m: &EmpiricalMeasure, x: &[f64]) -> Result<Matrix> {
    Ok(u.freeze(m)?.d2x_dm(x))
}

/// `δ²_m u(m, x, x̂)`.
pub fn dm2(u: &CylindricalFunctional, m: &EmpiricalMeasure, x: &[f64], xh: &[f64]) -> Result<f64> {
    Ok(u.freeze(m)?.dm2(x, xh))
}

/// `∂_x ∂_x̂ δ²_m u(m, x, x̂)`.
pub fn dm2_cross(u: &CylindricalFunctional, m: &EmpiricalMeasure, x: &[f64], xh: &[f64]) -> Result<Matrix> {
    Ok(u.freeze(m)?.dm2_cross(x, xh))
}

/// Outer map of a time- and factor-dependent functional
/// `u(t, m, y) = G(t, y, ⟨φ₁,m⟩, …, ⟨φ_k,m⟩)`.
pub trait FactorOuter: Debug + Send + Sync {
    fn arity(&self) -> usize;
    fn factor_dim(&self) -> usize;
    /// Fills every partial derivative of `G` at `(t, y, v)`.
    fn derivatives(&self, t: f64, y: &[f64], v: &[f64], out: &mut FactorJet);
}

/// All partial derivatives of a factor outer map at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorJet {
    pub value: f64,
    pub dt: f64,
    /// `∂_v G`, length `k`.
    pub grad_v: Vec<f64>,
    /// `∂²_vv G`, `k × k`.
    pub hess_v: Vec<f64>,
    /// `∂_y G`, length `d_y`.
    pub grad_y: Vec<f64>,
    /// `∂²_yy G`, `d_y × d_y`.
    pub hess_y: Vec<f64>,
    /// `∂_v ∂_y G`, `k × d_y`.
    pub mixed: Vec<f64>,
}

impl FactorJet {
    fn zeros(k: usize, dy: usize) -> Self {
        FactorJet {
            value: 0.0,
            dt: 0.0,
            grad_v: vec![0.0; k],
            hess_v: vec![0.0; k * k],
            grad_y: vec![0.0; dy],
            hess_y: vec![0.0; dy * dy],
            mixed: vec![0.0; k * dy],
        }
    }

    fn clear(&mut self) {
        self.value = 0.0;
        self.dt = 0.0;
        for v in [&mut self.grad_v, &mut self.hess_v, &mut self.grad_y, &mut self.hess_y, &mut self.mixed] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }
}

/// `G(t, y, v) = F(v)`.
#[derive(Debug, Clone)]
pub struct CylindricalLift {
    pub outer: Arc<dyn OuterFunction>,
    pub factor_dim: usize,
}

impl FactorOuter for CylindricalLift {
    fn arity(&self) -> usize {
        self.outer.arity()
    }
    fn factor_dim(&self) -> usize {
        self.factor_dim
    }
    fn derivatives(&self, _t: f64, _y: &[f64], v: &[f64], out: &mut FactorJet) {
        out.clear();
        out.value = self.outer.value(v);
        self.outer.gradient(v, &mut out.grad_v);
        self.outer.hessian(v, &mut out.hess_v);
    }
}

/// `G(t, y, v) = y_j^p F(v)`.
#[derive(Debug, Clone)]
pub struct FactorProduct {
    pub outer: Arc<dyn OuterFunction>,
    pub factor_dim: usize,
    pub coord: usize,
    pub power: i32,
}

impl FactorOuter for FactorProduct {
    fn arity(&self) -> usize {
        self.outer.arity()
    }
    fn factor_dim(&self) -> usize {
        self.factor_dim
    }
    fn derivatives(&self, _t: f64, y: &[f64], v: &[f64], out: &mut FactorJet) {
        out.clear();
        let (k, dy, j, p) = (self.outer.arity(), self.factor_dim, self.coord, self.power);
        let yj = y[j];
        let pf = p as f64;
        let (y0, y1, y2) = (
            yj.powi(p),
            if p >= 1 { pf * yj.powi(p - 1) } else { 0.0 },
            if p >= 2 { pf * (pf - 1.0) * yj.powi(p - 2) } else { 0.0 },
        );
        let f = self.outer.value(v);
        let mut g = vec![0.0; k];
        self.outer.gradient(v, &mut g);
        self.outer.hessian(v, &mut out.hess_v);
        out.hess_v.iter_mut().for_each(|h| *h *= y0);
        out.value = y0 * f;
        for i in 0..k {
            out.grad_v[i] = y0 * g[i];
            out.mixed[i * dy + j] = y1 * g[i];
        }
        out.grad_y[j] = y1 * f;
        out.hess_y[j * dy + j] = y2 * f;
    }
}

/// `G(t, y, v) = c·t`; carries one dummy feature so it composes with the
/// other outer maps.
#[derive(Debug, Clone, Copy)]
pub struct TimeLinear {
    pub coef: f64,
    pub factor_dim: usize,
}

impl FactorOuter for TimeLinear {
    fn arity(&self) -> usize {
        1
    }
    fn factor_dim(&self) -> usize {
        self.factor_dim
    }
    fn derivatives(&self, t: f64, _y: &[f64], _v: &[f64], out: &mut FactorJet) {
        out.clear();
        out.value = self.coef * t;
        out.dt = self.coef;
    }
}

/// Sum of factor outer maps over concatenated feature blocks.
#[derive(Debug, Clone)]
pub struct FactorSum {
    terms: Vec<Arc<dyn FactorOuter>>,
    factor_dim: usize,
}

impl FactorOuter for FactorSum {
    fn arity(&self) -> usize {
        self.terms.iter().map(|t| t.arity()).sum()
    }
    fn factor_dim(&self) -> usize {
        self.factor_dim
    }
    fn derivatives(&self, t: f64, y: &[f64], v: &[f64], out: &mut FactorJet) {
        out.clear();
        let total = self.arity();
        let dy = self.factor_dim;
        let mut off = 0;
        for term in &self.terms {
            let k = term.arity();
            let mut jet = FactorJet::zeros(k, dy);
            term.derivatives(t, y, &v[off..off + k], &mut jet);
            out.value += jet.value;
            out.dt += jet.dt;
            for i in 0..k {
                out.grad_v[off + i] = jet.grad_v[i];
                for j in 0..k {
                    out.hess_v[(off + i) * total + off + j] = jet.hess_v[i * k + j];
                }
                for j in 0..dy {
                    out.mixed[(off + i) * dy + j] = jet.mixed[i * dy + j];
                }
            }
            for (o, g) in out.grad_y.iter_mut().zip(&jet.grad_y) {
                *o += g;
            }
            for (o, h) in out.hess_y.iter_mut().zip(&jet.hess_y) {
                *o += h;
            }
            off += k;
        }
    }
}

/// `u(t, m, y) = G(t, y, ⟨φ₁,m⟩, …, ⟨φ_k,m⟩)`.
#[derive(Debug, Clone)]
pub struct FactorFunctional {
    name: String,
    dim: usize,
    outer: Arc<dyn FactorOuter>,
    tests: Vec<Arc<dyn TestFunction>>,
}

impl FactorFunctional {
    pub fn new(
        name: impl Into<String>,
        outer: Arc<dyn FactorOuter>,
        tests: Vec<Arc<dyn TestFunction>>,
    ) -> Result<Self> {
        if tests.is_empty() || outer.arity() != tests.len() {
            return Err(invalid("factor functional arity does not match its test functions"));
        }
        let dim = tests[0].dim();
        if tests.iter().any(|t| t.dim() != dim) {
            return Err(invalid("test functions disagree on the state dimension"));
        }
        Ok(FactorFunctional { name: name.into(), dim, outer, tests })
    }

    /// `u(t, m, y) = u(m)`.
    pub fn lift(u: &CylindricalFunctional, factor_dim: usize) -> Self {
        let outer = CylindricalLift { outer: u.outer().clone(), factor_dim };
        FactorFunctional { name: u.name().to_string(), dim: u.dim(), outer: Arc::new(outer), tests: u.tests().to_vec() }
    }

    /// `u(t, m, y) = y_j^p u(m)`.
    pub fn factor_product(u: &CylindricalFunctional, factor_dim: usize, coord: usize, power: i32) -> Result<Self> {
        if coord >= factor_dim || power < 0 {
            return Err(invalid("factor coordinate out of range or negative power"));
        }
        let outer = FactorProduct { outer: u.outer().clone(), factor_dim, coord, power };
        Ok(FactorFunctional {
            name: format!("y{coord}^{power}*{}", u.name()),
            dim: u.dim(),
            outer: Arc::new(outer),
            tests: u.tests().to_vec(),
        })
    }

    /// `u(t, m, y) = c·t` on measures over `R^dim`.
    pub fn time_linear(dim: usize, factor_dim: usize, coef: f64) -> Self {
        FactorFunctional {
            name: "time".into(),
            dim,
            outer: Arc::new(TimeLinear { coef, factor_dim }),
            tests: vec![Arc::new(Linear { coef: vec![0.0; dim], offset: 0.0 })],
        }
    }

    pub fn sum(name: impl Into<String>, parts: &[FactorFunctional]) -> Result<Self> {
        if parts.is_empty() {
            return Err(invalid("empty sum"));
        }
        let dim = parts[0].dim;
        let dy = parts[0].outer.factor_dim();
        if parts.iter().any(|p| p.dim != dim || p.outer.factor_dim() != dy) {
            return Err(invalid("summands disagree on dimensions"));
        }
        let outer = FactorSum { terms: parts.iter().map(|p| p.outer.clone()).collect(), factor_dim: dy };
        let tests = parts.iter().flat_map(|p| p.tests.iter().cloned()).collect();
        Self::new(name, Arc::new(outer), tests)
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn factor_dim(&self) -> usize {
        self.outer.factor_dim()
    }

    pub fn eval(&self, t: f64, m: &EmpiricalMeasure, y: &[f64]) -> Result<f64> {
        Ok(self.freeze(t, m, y)?.value())
    }

    pub fn freeze(&self, t: f64, m: &EmpiricalMeasure, y: &[f64]) -> Result<FrozenFactor> {
        if m.dim() != self.dim {
            return Err(invalid("measure dimension does not match the functional"));
        }
        let v: Vec<f64> = self.tests.iter().map(|f| m.integrate(|x| f.value(x))).collect();
        self.freeze_features(t, &v, y)
    }

    pub fn freeze_features(&self, t: f64, v: &[f64], y: &[f64]) -> Result<FrozenFactor> {
        if y.len() != self.factor_dim() {
            return Err(invalid("factor value has the wrong dimension"));
        }
        let mut jet = FactorJet::zeros(self.tests.len(), self.factor_dim());
        self.outer.derivatives(t, y, v, &mut jet);
        if !jet.value.is_finite() || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericOverflow(format!("{}: non-finite value", self.name)));
        }
        let base = FrozenDerivatives {
            dim: self.dim,
            value: jet.value,
            tests: self.tests.clone(),
            grad: jet.grad_v.clone(),
            hess: jet.hess_v.clone(),
        };
        Ok(FrozenFactor { base, jet })
    }

    /// Features of the uniform measure on row-major points.
    pub fn features_of_points(&self, points: &[f64]) -> Vec<f64> {
        let n = points.len() / self.dim;
        let mut v = vec![0.0; self.tests.len()];
        for x in points.chunks_exact(self.dim) {
            for (vi, t) in v.iter_mut().zip(&self.tests) {
                *vi += t.value(x);
            }
        }
        v.iter_mut().for_each(|vi| *vi /= n as f64);
        v
    }
}

/// Derivative fields of a factor functional at a fixed `(t, m, y)`.
#[derive(Debug, Clone)]
pub struct FrozenFactor {
    base: FrozenDerivatives,
    jet: FactorJet,
}

impl FrozenFactor {
    pub fn value(&self) -> f64 {
        self.jet.value
    }

    pub fn dt(&self) -> f64 {
        self.jet.dt
    }

    pub fn grad_y(&self) -> &[f64] {
        &self.jet.grad_y
    }

    pub fn hess_y(&self) -> &[f64] {
        &self.jet.hess_y
    }

    /// Measure derivatives at fixed `(t, y)`.
    pub fn measure(&self) -> &FrozenDerivatives {
        &self.base
    }

    /// `∂_x δ_m ∂_y u(t, m, y, x)`, row-major `d × d_y`.
    pub fn mixed_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.base.dim;
        let dy = self.jet.grad_y.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut g = vec![0.0; d];
        for (i, t) in self.base.tests.iter().enumerate() {
            t.gradient(x, &mut g);
            for a in 0..d {
                for j in 0..dy {
                    out[a * dy + j] += self.jet.mixed[i * dy + j] * g[a];
                }
            }
        }
    }
}
