//! Per-step discretization of the terms shared by every chain rule.

use crate::measures::{FrozenDerivatives, FrozenFactor};
use crate::particle::ParticleEnsemble;

use super::BracketMode;

/// Particle states, increments and left-endpoint coefficients on one cell.
pub(crate) struct StepData {
    pub k: usize,
    pub n: usize,
    pub d: usize,
    pub d0: usize,
    pub dy: usize,
    pub dt: f64,
    pub x: Vec<f64>,
    pub dx: Vec<f64>,
    pub drift: Vec<f64>,
    pub sigma: Vec<f64>,
    pub sigma0: Vec<f64>,
    pub dw0: Vec<f64>,
    pub dy_inc: Vec<f64>,
    pub gamma: Vec<f64>,
    pub gamma0: Vec<f64>,
}

impl StepData {
    pub fn new(ens: &ParticleEnsemble) -> Self {
        let c = ens.coefficients();
        let (n, d, d0, dy) = (ens.len(), ens.dim(), c.common_dim(), c.factor_dim());
        StepData {
            k: 0,
            n,
            d,
            d0,
            dy,
            dt: 0.0,
            x: vec![0.0; n * d],
            dx: vec![0.0; n * d],
            drift: vec![0.0; n * d],
            sigma: vec![0.0; n * d * d],
            sigma0: vec![0.0; n * d * d0],
            dw0: vec![0.0; d0.max(1)],
            dy_inc: vec![0.0; dy],
            gamma: vec![0.0; dy * dy],
            gamma0: vec![0.0; dy * d0],
        }
    }

    pub fn load(&mut self, ens: &ParticleEnsemble, k: usize) {
        let (n, d, d0) = (self.n, self.d, self.d0);
        self.k = k;
        self.dt = ens.partition().dt(k);
        self.x.copy_from_slice(ens.states_at(k));
        let next = ens.states_at(k + 1);
        for (o, (a, b)) in self.dx.iter_mut().zip(next.iter().zip(&self.x)) {
            *o = a - b;
        }
        ens.common_path().increment_into(k, &mut self.dw0);
        let mut buf = ens.coefficients().values_buffer();
        for i in 0..n {
            ens.coefficients_at(k, i, &mut buf);
            self.drift[i * d..(i + 1) * d].copy_from_slice(&buf.drift);
            self.sigma[i * d * d..(i + 1) * d * d].copy_from_slice(&buf.diffusion);
            self.sigma0[i * d * d0..(i + 1) * d * d0].copy_from_slice(&buf.common_diffusion);
        }
        if let Some(y) = ens.factor_path() {
            y.increment_into(k, &mut self.dy_inc);
            let mut fb = ens.coefficients().factor_buffer();
            ens.coefficients().evaluate_factor(ens.time(k), y.at(k), &mut fb);
            self.gamma.copy_from_slice(&fb.diffusion);
            self.gamma0.copy_from_slice(&fb.common_diffusion);
        }
    }

    pub fn xi(&self, i: usize) -> &[f64] {
        &self.x[i * self.d..(i + 1) * self.d]
    }

    pub fn dxi(&self, i: usize) -> &[f64] {
        &self.dx[i * self.d..(i + 1) * self.d]
    }

    pub fn sigma_i(&self, i: usize) -> &[f64] {
        &self.sigma[i * self.d * self.d..(i + 1) * self.d * self.d]
    }

    pub fn sigma0_i(&self, i: usize) -> &[f64] {
        &self.sigma0[i * self.d * self.d0..(i + 1) * self.d * self.d0]
    }

    /// Bracket increment `d⟨X^i⟩` over the cell, `d × d`.
    fn bracket(&self, i: usize, mode: BracketMode, out: &mut [f64]) {
        let d = self.d;
        match mode {
            BracketMode::Analytic => {
                let (s, s0, d0) = (self.sigma_i(i), self.sigma0_i(i), self.d0);
                for a in 0..d {
                    for b in 0..d {
                        let mut v = 0.0;
                        for r in 0..d {
                            v += s[a * d + r] * s[b * d + r];
                        }
                        for r in 0..d0 {
                            v += s0[a * d0 + r] * s0[b * d0 + r];
                        }
                        out[a * d + b] = v * self.dt;
                    }
                }
            }
            BracketMode::Pairwise => {
                let dx = self.dxi(i);
                for a in 0..d {
                    for b in 0..d {
                        out[a * d + b] = dx[a] * dx[b];
                    }
                }
            }
        }
    }
}

/// Measure-derivative terms of one cell, each already averaged over
/// particles (or ordered particle pairs).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct StepTerms {
    /// `E⁰[∂_xδ_m u · ΔX]`
    pub stoch: f64,
    /// `E⁰[∂_xδ_m u · b] Δt`
    pub drift: f64,
    /// `E⁰[(σ⁰)ᵀ∂_xδ_m u · ΔW⁰]`
    pub common: f64,
    /// `½ E⁰[∂²_xδ_m u : d⟨X⟩]`
    pub second: f64,
    /// `½ E⁰Ê⁰[∂_x∂_x̂δ²_m u : d⟨X, X̂⟩]`
    pub cross: f64,
}

/// Evaluates the measure-derivative terms of `fz` on the cell loaded in `sd`.
pub(crate) fn measure_terms(fz: &FrozenDerivatives, sd: &StepData, mode: BracketMode) -> StepTerms {
    let (n, d, d0) = (sd.n, sd.d, sd.d0);
    let kt = fz.tests().len();
    let grad = fz.outer_gradient();
    let hess = fz.outer_hessian();
    let has_cross = hess.iter().any(|h| *h != 0.0);
    // cross-term vectors A_a^i: (σ⁰)ᵀ∇φ_a in R^{d0}, or ∇φ_a·ΔX in R
    let q = match mode {
        BracketMode::Analytic => d0,
        BracketMode::Pairwise => 1,
    };
    let mut sum_a = vec![0.0; kt * q];
    let mut diag = vec![0.0; kt * kt];
    let mut a_i = vec![0.0; kt * q];
    let mut gtab = vec![0.0; kt * d];
    let mut lions = vec![0.0; d];
    let mut hphi = vec![0.0; d * d];
    let mut d2 = vec![0.0; d * d];
    let mut br = vec![0.0; d * d];
    let mut t = StepTerms::default();

    for i in 0..n {
        let x = sd.xi(i);
        let dx = sd.dxi(i);
        fz.gradient_table_into(x, &mut gtab);
        lions.iter_mut().for_each(|v| *v = 0.0);
        for a in 0..kt {
            for p in 0..d {
                lions[p] += grad[a] * gtab[a * d + p];
            }
        }
        let s0 = sd.sigma0_i(i);
        let b = &sd.drift[i * d..(i + 1) * d];
        for p in 0..d {
            t.stoch += lions[p] * dx[p];
            t.drift += lions[p] * b[p] * sd.dt;
            for r in 0..d0 {
                t.common += lions[p] * s0[p * d0 + r] * sd.dw0[r];
            }
        }

        d2.iter_mut().for_each(|v| *v = 0.0);
        let mut any_second = false;
        for (a, test) in fz.tests().iter().enumerate() {
            if grad[a] == 0.0 || test.hessian_bound() == 0.0 {
                continue;
            }
            any_second = true;
            test.hessian(x, &mut hphi);
            for (o, h) in d2.iter_mut().zip(&hphi) {
                *o += grad[a] * h;
            }
        }
        if any_second {
            sd.bracket(i, mode, &mut br);
            t.second += 0.5 * d2.iter().zip(&br).map(|(a, b)| a * b).sum::<f64>();
        }

        if has_cross {
            for a in 0..kt {
                let g = &gtab[a * d..(a + 1) * d];
                match mode {
                    BracketMode::Analytic => {
                        for r in 0..d0 {
                            a_i[a * q + r] = (0..d).map(|p| s0[p * d0 + r] * g[p]).sum();
                        }
                    }
                    BracketMode::Pairwise => a_i[a] = (0..d).map(|p| g[p] * dx[p]).sum(),
                }
            }
            for (s, v) in sum_a.iter_mut().zip(&a_i) {
                *s += v;
            }
            for a in 0..kt {
                for c in 0..kt {
                    diag[a * kt + c] += (0..q).map(|r| a_i[a * q + r] * a_i[c * q + r]).sum::<f64>();
                }
            }
        }
    }

    let nf = n as f64;
    t.stoch /= nf;
    t.drift /= nf;
    t.common /= nf;
    t.second /= nf;
    if has_cross {
        let dtf = match mode {
            BracketMode::Analytic => sd.dt,
            BracketMode::Pairwise => 1.0,
        };
        let mut c = 0.0;
        for a in 0..kt {
            for b in 0..kt {
                let h = hess[a * kt + b];
                if h == 0.0 {
                    continue;
                }
                let outer: f64 = (0..q).map(|r| sum_a[a * q + r] * sum_a[b * q + r]).sum();
                c += h * (outer - diag[a * kt + b]);
            }
        }
        t.cross = 0.5 * c * dtf / (nf * (nf - 1.0));
    }
    t
}

/// `E⁰[∂_xδ_m f(μ, X) · d⟨N, X⟩]` over the cell for a scalar driver `N`.
///
/// `bracket_i` returns the analytic bracket increment of particle `i` with
/// `N`, or `None` when it vanishes; in pairwise mode the realized product
/// `ΔX^i ΔN` is used for every particle.
pub(crate) fn correction_term(
    fz: &FrozenDerivatives,
    sd: &StepData,
    mode: BracketMode,
    dn: f64,
    bracket_i: &dyn Fn(usize, &mut [f64]) -> bool,
) -> f64 {
    let d = sd.d;
    let mut lions = vec![0.0; d];
    let mut br = vec![0.0; d];
    let mut s = 0.0;
    for i in 0..sd.n {
        let active = match mode {
            BracketMode::Analytic => bracket_i(i, &mut br),
            BracketMode::Pairwise => {
                for (b, x) in br.iter_mut().zip(sd.dxi(i)) {
                    *b = x * dn;
                }
                true
            }
        };
        if !active {
            continue;
        }
        fz.d_lions_into(sd.xi(i), &mut lions);
        s += lions.iter().zip(&br).map(|(a, b)| a * b).sum::<f64>();
    }
    s / sd.n as f64
}

/// `E⁰[∂_xδ_m∂_y u : d⟨X, Y⟩]` over the cell.
pub(crate) fn mixed_factor_term(ff: &FrozenFactor, sd: &StepData, mode: BracketMode) -> f64 {
    let (d, d0, dy) = (sd.d, sd.d0, sd.dy);
    let mut mixed = vec![0.0; d * dy];
    let mut br = vec![0.0; d * dy];
    let mut s = 0.0;
    for i in 0..sd.n {
        match mode {
            BracketMode::Analytic => {
                let s0 = sd.sigma0_i(i);
                for a in 0..d {
                    for j in 0..dy {
                        br[a * dy + j] = (0..d0).map(|r| s0[a * d0 + r] * sd.gamma0[j * d0 + r]).sum::<f64>() * sd.dt;
                    }
                }
            }
            BracketMode::Pairwise => {
                let dx = sd.dxi(i);
                for a in 0..d {
                    for j in 0..dy {
                        br[a * dy + j] = dx[a] * sd.dy_inc[j];
                    }
                }
            }
        }
        ff.mixed_into(sd.xi(i), &mut mixed);
        s += mixed.iter().zip(&br).map(|(a, b)| a * b).sum::<f64>();
    }
    s / sd.n as f64
}

/// `½ ∂²_y u : d⟨Y⟩` over the cell.
pub(crate) fn factor_second_term(ff: &FrozenFactor, sd: &StepData, mode: BracketMode) -> f64 {
    let (dy, d0) = (sd.dy, sd.d0);
    let h = ff.hess_y();
    let mut s = 0.0;
    for a in 0..dy {
        for b in 0..dy {
            let br = match mode {
                BracketMode::Analytic => {
                    let g: f64 = (0..dy).map(|r| sd.gamma[a * dy + r] * sd.gamma[b * dy + r]).sum();
                    let g0: f64 = (0..d0).map(|r| sd.gamma0[a * d0 + r] * sd.gamma0[b * d0 + r]).sum();
                    (g + g0) * sd.dt
                }
                BracketMode::Pairwise => sd.dy_inc[a] * sd.dy_inc[b],
            };
            s += h[a * dy + b] * br;
        }
    }
    0.5 * s
}
