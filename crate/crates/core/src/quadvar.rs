//! Increments, variation and weighted quadratic-variation sums along
//! partitions.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::paths::{simulate_brownian, Partition, SamplePath};
use crate::rng::{tags, RngStream};

/// Increments `Δ^π Y` over the cells of a partition restricted to `[0, s]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementTable {
    /// Cell endpoints `t_0 < … < t_j (≤ s)`, with `s` appended when it is
    /// not a grid point.
    pub times: Vec<f64>,
    pub dim: usize,
    /// Row-major, one row per cell.
    pub increments: Vec<f64>,
}

impl IncrementTable {
    pub fn cells(&self) -> usize {
        self.increments.len() / self.dim
    }

    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.dim..(i + 1) * self.dim]
    }

    /// `Σ_i Δ_i = Y_s − Y_0`.
    pub fn total(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.dim];
        for row in self.increments.chunks_exact(self.dim) {
            for (a, b) in s.iter_mut().zip(row) {
                *a += b;
            }
        }
        s
    }
}

/// Increments of `path` along `p` up to time `s`; the last cell ends at `s`.
/// `p` must be a sub-grid of the path's partition.
pub fn increments(path: &SamplePath, p: &Partition, s: f64) -> Result<IncrementTable> {
    let horizon = p.horizon();
    if !(0.0..=horizon).contains(&s) {
        return Err(invalid(format!("time {s} outside [0, {horizon}]")));
    }
    let idx = p.embed_in(path.partition())?;
    let d = path.dim();
    let mut times = vec![0.0];
    let mut incs = Vec::new();
    for k in 1..p.len() {
        let t = p.times()[k];
        if t <= s {
            times.push(t);
            let (a, b) = (path.at(idx[k - 1]), path.at(idx[k]));
            incs.extend(b.iter().zip(a).map(|(b, a)| b - a));
        } else {
            let last = *times.last().expect("non-empty");
            if s > last {
                let ys = path.value_at(s)?;
                let a = path.at(idx[k - 1]);
                times.push(s);
                incs.extend(ys.iter().zip(a).map(|(b, a)| b - a));
            }
            break;
        }
    }
    Ok(IncrementTable { times, dim: d, increments: incs })
}

/// `Σ_i |ΔY_i|` on the path's own grid.
pub fn total_variation(path: &SamplePath) -> f64 {
    let d = path.dim();
    let mut buf = vec![0.0; d];
    let mut tv = 0.0;
    for k in 0..path.len() - 1 {
        path.increment_into(k, &mut buf);
        tv += buf.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    tv
}

/// `Σ_i ΔY_i ΔY_iᵀ` along `p`.
pub fn realized_qv(path: &SamplePath, p: &Partition) -> Result<Matrix> {
    realized_covariation(path, path, p)
}

/// `Σ_i ΔX_i ΔX̂_iᵀ` along `p`.
pub fn realized_covariation(x: &SamplePath, xh: &SamplePath, p: &Partition) -> Result<Matrix> {
    if !x.partition().matches(xh.partition()) {
        return Err(Error::PartitionMismatch("paths live on different grids".into()));
    }
    let idx = p.embed_in(x.partition())?;
    let (d, dh) = (x.dim(), xh.dim());
    let mut out = Matrix::zeros(d, dh);
    let s = out.as_mut_slice();
    for w in idx.windows(2) {
        let (a0, a1) = (x.at(w[0]), x.at(w[1]));
        let (b0, b1) = (xh.at(w[0]), xh.at(w[1]));
        for i in 0..d {
            let da = a1[i] - a0[i];
            for j in 0..dh {
                s[i * dh + j] += da * (b1[j] - b0[j]);
            }
        }
    }
    Ok(out)
}

/// A matrix-valued process that is constant on each cell `(t_{i−1}, t_i]`
/// of its partition, taking the value sampled at the left endpoint.
#[derive(Debug, Clone, Serialize)]
pub struct WeightProcess {
    #[serde(skip)]
    partition: Arc<Partition>,
    rows: usize,
    cols: usize,
    /// One row-major `rows × cols` block per cell.
    values: Vec<f64>,
    sup_norm: f64,
}

impl WeightProcess {
    pub fn constant(partition: Arc<Partition>, h: &Matrix) -> Self {
        Self::from_fn(partition, h.rows(), h.cols(), |_, _| h.clone())
    }

    /// Scalar weight `H_t = h(t)` sampled at left endpoints.
    pub fn scalar_fn(partition: Arc<Partition>, h: impl Fn(f64) -> f64) -> Self {
        Self::from_fn(partition, 1, 1, |t, _| Matrix::scalar(h(t)))
    }

    /// `H_{t_{i−1}} = h(t_{i−1}, i − 1)` on every cell.
    pub fn from_fn(partition: Arc<Partition>, rows: usize, cols: usize, h: impl Fn(f64, usize) -> Matrix) -> Self {
        let mut values = Vec::with_capacity(partition.cells() * rows * cols);
        for k in 0..partition.cells() {
            let m = h(partition.times()[k], k);
            assert_eq!((m.rows(), m.cols()), (rows, cols), "weight block has the wrong shape");
            values.extend_from_slice(m.as_slice());
        }
        let sup_norm = values.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        WeightProcess { partition, rows, cols, values, sup_norm }
    }

    pub fn partition(&self) -> &Arc<Partition> {
        &self.partition
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn cell(&self, k: usize) -> &[f64] {
        let n = self.rows * self.cols;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }
}

/// `Σ_i H_{t_{i−1}} : ΔX_i ΔX̂_iᵀ` along `p`; `xh = None` uses `X` itself.
pub fn weighted_qv_sum(h: &WeightProcess, x: &SamplePath, xh: Option<&SamplePath>, p: &Partition) -> Result<f64> {
    let xh = xh.unwrap_or(x);
    if !h.partition.matches(p) {
        return Err(Error::PartitionMismatch("weight process is not piecewise constant along the partition".into()));
    }
    if !x.partition().matches(xh.partition()) {
        return Err(Error::PartitionMismatch("paths live on different grids".into()));
    }
    if (h.rows, h.cols) != (x.dim(), xh.dim()) {
        return Err(invalid("weight shape does not match the path dimensions"));
    }
    let idx = p.embed_in(x.partition())?;
    let (d, dh) = (x.dim(), xh.dim());
    let mut total = 0.0;
    for (k, w) in idx.windows(2).enumerate() {
        let hk = h.cell(k);
        let (a0, a1) = (x.at(w[0]), x.at(w[1]));
        let (b0, b1) = (xh.at(w[0]), xh.at(w[1]));
        for i in 0..d {
            let da = a1[i] - a0[i];
            for j in 0..dh {
                total += hk[i * dh + j] * da * (b1[j] - b0[j]);
            }
        }
    }
    Ok(total)
}

/// One row of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub n: usize,
    pub mean_abs_error: f64,
    pub stderr: f64,
    /// `error(n/4) / error(n)` when `n/4` is also in the study.
    pub ratio: Option<f64>,
    pub ratio_ok: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceStudy {
    pub rows: Vec<StudyRow>,
    pub seeds: usize,
    /// All measured ratios inside the band; `None` without any ratio.
    pub trend_ok: Option<bool>,
}

/// Accepted band for the error ratio when the cell count quadruples.
pub const RATIO_BAND: (f64, f64) = (1.3, 3.0);

impl ConvergenceStudy {
    /// CSV with columns `n, mean_abs_error, stderr, ratio_flag`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,mean_abs_error,stderr,ratio_flag\n");
        for r in &self.rows {
            let flag = match r.ratio_ok {
                Some(true) => "pass",
                Some(false) => "fail",
                None => "",
            };
            s.push_str(&format!("{},{},{},{}\n", r.n, crate::fmt_f64(r.mean_abs_error), crate::fmt_f64(r.stderr), flag));
        }
        s
    }
}

/// Inputs of a convergence study for `Σ H : ΔX ΔXᵀ → ∫ H : d⟨X⟩`.
pub struct LemmaStudy<'a> {
    pub horizon: f64,
    pub n_list: &'a [usize],
    pub seeds: usize,
    pub seed: u64,
    /// Simulates `X` on the given grid.
    pub path: &'a (dyn Fn(&Arc<Partition>, RngStream) -> Result<SamplePath> + Sync),
    /// Builds `H` on the grid, possibly depending on the path.
    pub weight: &'a (dyn Fn(&Arc<Partition>, &SamplePath) -> WeightProcess + Sync),
    /// The limit `∫₀ᵀ H : d⟨X⟩` for the path.
    pub limit: &'a (dyn Fn(&SamplePath) -> f64 + Sync),
}

/// Mean absolute error of the weighted sum against its limit, per `n`,
/// over independent paths.
pub fn lemma_convergence_study(study: &LemmaStudy<'_>) -> Result<ConvergenceStudy> {
    if study.n_list.is_empty() || study.seeds == 0 {
        return Err(invalid("a convergence study needs at least one n and one seed"));
    }
    let root = RngStream::new(study.seed, 0);
    let mut rows: Vec<StudyRow> = Vec::with_capacity(study.n_list.len());
    for &n in study.n_list {
        let p = Arc::new(Partition::uniform(study.horizon, n)?);
        let errors: Vec<f64> = (0..study.seeds)
            .into_par_iter()
            .map(|j| -> Result<f64> {
                let rng = root.derive(tags::OUTER_PATH, j as u64);
                let x = (study.path)(&p, rng)?;
                let h = (study.weight)(&p, &x);
                let sum = weighted_qv_sum(&h, &x, None, &p)?;
                Ok((sum - (study.limit)(&x)).abs())
            })
            .collect::<Result<_>>()?;
        let (mean, se) = mean_stderr(&errors);
        let prev = rows.iter().find(|r| r.n * 4 == n);
        let ratio = prev.map(|r| r.mean_abs_error / mean);
        let ratio_ok = ratio.map(|q| (RATIO_BAND.0..=RATIO_BAND.1).contains(&q));
        rows.push(StudyRow { n, mean_abs_error: mean, stderr: se, ratio, ratio_ok });
    }
    let flags: Vec<bool> = rows.iter().filter_map(|r| r.ratio_ok).collect();
    let trend_ok = if flags.is_empty() { None } else { Some(flags.iter().all(|f| *f)) };
    Ok(ConvergenceStudy { rows, seeds: study.seeds, trend_ok })
}

/// Weight `H` of the Brownian convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BrownianWeight {
    /// `H ≡ 1`, limit `T`.
    One,
    /// `H(t) = t`, limit `T²/2`.
    Time,
}

/// Convergence study of `Σ H(t_k) (ΔW_k)² → ∫₀ᵀ H dt` for scalar Brownian
/// motion.
pub fn brownian_lemma_study(
    weight: BrownianWeight,
    horizon: f64,
    n_list: &[usize],
    seeds: usize,
    seed: u64,
) -> Result<ConvergenceStudy> {
    let path = |p: &Arc<Partition>, rng: RngStream| simulate_brownian(p, 1, rng);
    let h = move |p: &Arc<Partition>, _: &SamplePath| match weight {
        BrownianWeight::One => WeightProcess::scalar_fn(p.clone(), |_| 1.0),
        BrownianWeight::Time => WeightProcess::scalar_fn(p.clone(), |t| t),
    };
    let limit = move |_: &SamplePath| match weight {
        BrownianWeight::One => horizon,
        BrownianWeight::Time => 0.5 * horizon * horizon,
    };
    lemma_convergence_study(&LemmaStudy { horizon, n_list, seeds, seed, path: &path, weight: &h, limit: &limit })
}

/// Sample mean and its standard error.
pub fn mean_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
