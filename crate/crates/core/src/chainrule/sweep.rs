//! Residual tables over grids of `(n, N, M)`.

use serde::Serialize;

use super::VerificationReport;
use crate::error::{invalid, Result};
use crate::fmt_f64;
use crate::quadvar::RATIO_BAND;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub particles: usize,
    pub paths: usize,
    pub mean_abs: f64,
    pub se_abs: f64,
    pub mean: f64,
    pub se: f64,
    pub pass: bool,
    /// `mean_abs(n/4) / mean_abs(n)` at the same `N` and `M`.
    pub n_ratio: Option<f64>,
    /// `mean_abs(N/4) / mean_abs(N)` at the same `n` and `M`.
    pub particle_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// All `n` ratios inside the band; `None` without any ratio.
    pub n_trend: Option<bool>,
    pub particle_trend: Option<bool>,
}

/// Residuals at or below this level count as exact, so ratios are not
/// formed from them.
const EXACT: f64 = 1e-12;

fn in_band(q: f64) -> bool {
    (RATIO_BAND.0..=RATIO_BAND.1).contains(&q)
}

/// Runs `verify(n, N, M)` for every grid cell and forms trend ratios
/// between cells whose `n` (or `N`) differs by a factor of four.
pub fn convergence_sweep(
    grid: &[(usize, usize, usize)],
    verify: impl Fn(usize, usize, usize) -> Result<VerificationReport>,
) -> Result<SweepTable> {
    if grid.is_empty() {
        return Err(invalid("sweep grid is empty"));
    }
    let mut rows: Vec<SweepRow> = Vec::with_capacity(grid.len());
    for &(n, particles, paths) in grid {
        let r = verify(n, particles, paths)?;
        rows.push(SweepRow {
            n,
            particles,
            paths,
            mean_abs: r.mean_abs,
            se_abs: r.se_abs,
            mean: r.mean,
            se: r.se,
            pass: r.pass,
            n_ratio: None,
            particle_ratio: None,
        });
    }
    let ratio = |a: &SweepRow, b: &SweepRow| {
        if a.mean_abs <= EXACT && b.mean_abs <= EXACT {
            None
        } else {
            Some(a.mean_abs / b.mean_abs)
        }
    };
    for j in 0..rows.len() {
        let (n, np, m) = (rows[j].n, rows[j].particles, rows[j].paths);
        let coarse_n = rows.iter().find(|r| r.n * 4 == n && r.particles == np && r.paths == m);
        let nr = coarse_n.and_then(|r| ratio(r, &rows[j]));
        let coarse_p = rows.iter().find(|r| r.particles * 4 == np && r.n == n && r.paths == m);
        let pr = coarse_p.and_then(|r| ratio(r, &rows[j]));
        rows[j].n_ratio = nr;
        rows[j].particle_ratio = pr;
    }
    let trend = |f: fn(&SweepRow) -> Option<f64>| {
        let qs: Vec<f64> = rows.iter().filter_map(f).collect();
        if qs.is_empty() {
            None
        } else {
            Some(qs.iter().all(|q| in_band(*q)))
        }
    };
    let n_trend = trend(|r| r.n_ratio);
    let particle_trend = trend(|r| r.particle_ratio);
    Ok(SweepTable { rows, n_trend, particle_trend })
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        let mut s = String::from("n,particles,paths,mean_abs,se_abs,mean,se,n_ratio,particle_ratio,pass\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.n,
                r.particles,
                r.paths,
                fmt_f64(r.mean_abs),
                fmt_f64(r.se_abs),
                fmt_f64(r.mean),
                fmt_f64(r.se),
                opt(r.n_ratio),
                opt(r.particle_ratio),
                r.pass
            ));
        }
        s
    }
}
