//! Closed-form oracles shared by the integration tests. None of them call
//! into the solvers they check.

#![allow(dead_code)]

use condflow::mfc::LqParams;

/// Solution of `y' = a − 2y²`, `y(T) = y_T`, as a function of the time to
/// go `τ`, together with `∫_0^τ y`.
fn scalar_riccati(a: f64, y_t: f64, tau: f64) -> (f64, f64) {
    if a == 0.0 {
        let d = 1.0 - 2.0 * y_t * tau;
        return (y_t / d, -0.5 * d.ln());
    }
    let k = (a / 2.0).sqrt();
    let ratio = -y_t / k;
    let u = 2.0 * k * tau;
    if ratio.abs() < 1.0 {
        let c = ratio.atanh();
        (-k * (u + c).tanh(), -0.5 * ((u + c).cosh().ln() - c.cosh().ln()))
    } else if ratio.abs() > 1.0 {
        let c = (1.0 / ratio).atanh();
        (-k / (u + c).tanh(), -0.5 * ((u + c).sinh().abs().ln() - c.sinh().abs().ln()))
    } else {
        (y_t, y_t * tau)
    }
}

/// `[P, R, c](t)` for the LQ instance, from hyperbolic closed forms.
pub fn riccati_closed_form(p: &LqParams, t: f64) -> [f64; 3] {
    let tau = p.horizon - t;
    let (pp, ip) = scalar_riccati(p.q / 2.0, -p.c_g / 2.0, tau);
    let (rr, ir) = scalar_riccati(p.r / 2.0, -p.c_m / 2.0, tau);
    [pp, rr, p.sigma * p.sigma * ip + p.sigma0 * p.sigma0 * ir]
}

/// `∫ f^a dm + L^a V` for `V = P Var + R mean² + c`, `m = N(mean, var)` and
/// the unclamped feedback `a = c₀ + c₁(x − o)` with `o = mean` when
/// centered and `o = 0` otherwise.
#[allow(clippy::too_many_arguments)]
pub fn lq_generator(p: &LqParams, pr: (f64, f64), mean: f64, var: f64, c0: f64, c1: f64, centered: bool) -> f64 {
    let (pc, rc) = pr;
    let a_mean = if centered { c0 } else { c0 + c1 * mean };
    let a2 = a_mean * a_mean + c1 * c1 * var;
    let running = -0.5 * a2 - 0.5 * p.q * var - 0.5 * p.r * mean * mean;
    let transport = 2.0 * pc * c1 * var + 2.0 * rc * mean * a_mean;
    running + transport + pc * p.sigma * p.sigma + rc * p.sigma0 * p.sigma0
}

/// `∂_t V` for the same candidate, from the Riccati right-hand side.
pub fn lq_time_derivative(p: &LqParams, pr: (f64, f64), mean: f64, var: f64) -> f64 {
    let (pc, rc) = pr;
    let dp = 0.5 * p.q - 2.0 * pc * pc;
    let dr = 0.5 * p.r - 2.0 * rc * rc;
    let dc = -(pc * p.sigma * p.sigma + rc * p.sigma0 * p.sigma0);
    dp * var + dr * mean * mean + dc
}

/// Sample mean and standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}
