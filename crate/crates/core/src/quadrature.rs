//! Gauss–Legendre and Gauss–Hermite rules.

/// Roots of `f` on `[lo, hi]` located by a sign-change scan followed by
/// bisection. Only used for the small polynomial rules below.
fn scan_roots(f: impl Fn(f64) -> f64, lo: f64, hi: f64, expected: usize) -> Vec<f64> {
    let steps = 20_000 * expected.max(1);
    let h = (hi - lo) / steps as f64;
    let mut roots = Vec::with_capacity(expected);
    let mut a = lo;
    let mut fa = f(a);
    for i in 1..=steps {
        let b = lo + h * i as f64;
        let fb = f(b);
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            let (mut l, mut r, mut fl) = (a, b, fa);
            for _ in 0..200 {
                let mid = 0.5 * (l + r);
                let fm = f(mid);
                if fm == 0.0 || (r - l) < 1e-16 * mid.abs().max(1.0) {
                    l = mid;
                    r = mid;
                    break;
                }
                if fl * fm < 0.0 {
                    r = mid;
                } else {
                    l = mid;
                    fl = fm;
                }
            }
            roots.push(0.5 * (l + r));
        }
        a = b;
        fa = fb;
    }
    roots
}

/// `(P_n(x), P_{n-1}(x))` for Legendre polynomials.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 1..n {
        let p2 = ((2 * k + 1) as f64 * x * p1 - k as f64 * p0) / (k + 1) as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// `n`-point Gauss–Legendre rule on `[0, 1]`: `(nodes, weights)`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let roots = scan_roots(|x| legendre(n, x).0, -1.0 + 1e-12, 1.0 - 1e-12, n);
    assert_eq!(roots.len(), n, "Legendre root scan failed");
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for x in roots {
        let (pn, pn1) = legendre(n, x);
        // P_n'(x) = n (x P_n - P_{n-1}) / (x^2 - 1)
        let dp = n as f64 * (x * pn - pn1) / (x * x - 1.0);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes.push(0.5 * (x + 1.0));
        weights.push(0.5 * w);
    }
    (nodes, weights)
}

/// Probabilists' Hermite `He_n(x)` and `He_{n-1}(x)`.
fn hermite_prob(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let (mut h0, mut h1) = (1.0, x);
    for k in 1..n {
        let h2 = x * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    (h1, h0)
}

/// `n`-point Gauss–Hermite rule for the standard normal law: nodes `z_i`
/// and probability weights `w_i` with `Σ w_i p(z_i) = E[p(Z)]` for
/// polynomials of degree up to `2n - 1`.
pub fn gauss_hermite_normal(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let bound = 2.0 * (n as f64).sqrt() + 2.0;
    let roots = scan_roots(|x| hermite_prob(n, x).0, -bound, bound, n);
    assert_eq!(roots.len(), n, "Hermite root scan failed");
    let mut fact = 1.0;
    for k in 2..=n {
        fact *= k as f64;
    }
    let mut weights: Vec<f64> = roots
        .iter()
        .map(|&x| {
            let h = hermite_prob(n, x).1;
            fact / ((n * n) as f64 * h * h)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let mut nodes = roots;
    // symmetrize against scan asymmetry
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let z = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -z;
        nodes[j] = z;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre_unit(16);
        for p in 0..32 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(p)).sum();
            assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-14, "degree {p}: {q}");
        }
    }

    #[test]
    fn hermite_normal_moments() {
        let (z, w) = gauss_hermite_normal(8);
        let moment = |p: i32| -> f64 { z.iter().zip(&w).map(|(z, w)| w * z.powi(p)).sum() };
        assert!((moment(0) - 1.0).abs() < 1e-14);
        assert!(moment(1).abs() < 1e-14);
        assert!((moment(2) - 1.0).abs() < 1e-13);
        assert!((moment(4) - 3.0).abs() < 1e-12);
        assert!((moment(6) - 15.0).abs() < 1e-11);
        assert!((moment(14) - 135135.0).abs() < 1e-6 * 135135.0);
    }
}
