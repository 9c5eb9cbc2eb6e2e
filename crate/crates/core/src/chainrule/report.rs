//! Residual reports.

use serde::Serialize;

use crate::fmt_f64;
use crate::quadvar::mean_stderr;

/// How a report decides `pass`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ToleranceRule {
    /// `mean |res| ≤ 3·SE(|res|) + c·(n^{-1/2} + N^{-1/2})`, and the 0.9
    /// quantile of `|res|` within the same bound.
    MeanAbs { c: f64 },
    /// `|mean res| ≤ 3·SE(res) + c·Δt`.
    SignedMean { c: f64 },
}

impl ToleranceRule {
    pub fn constant(&self) -> f64 {
        match self {
            ToleranceRule::MeanAbs { c } | ToleranceRule::SignedMean { c } => *c,
        }
    }
}

/// Size of a verification run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunSize {
    /// Grid cells.
    pub n: usize,
    /// Particles per ensemble.
    pub particles: usize,
    /// Outer (common noise) paths.
    pub paths: usize,
    pub horizon: f64,
}

impl RunSize {
    pub fn mesh(&self) -> f64 {
        self.horizon / self.n as f64
    }
}

/// One outer path: the left side, every right-side term and the residual.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub path: usize,
    pub lhs: f64,
    /// Values in the order of [`VerificationReport::term_names`].
    pub terms: Vec<f64>,
    /// `lhs − Σ terms`.
    pub residual: f64,
    /// Values in the order of [`VerificationReport::diagnostic_names`];
    /// not part of the residual.
    pub diagnostics: Vec<f64>,
}

impl ReportRow {
    pub fn new(path: usize, lhs: f64, terms: Vec<f64>, diagnostics: Vec<f64>) -> Self {
        let residual = lhs - terms.iter().sum::<f64>();
        ReportRow { path, lhs, terms, residual, diagnostics }
    }
}

/// Statistics of a residual with a known target value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TargetCheck {
    pub mean: f64,
    pub stderr: f64,
    pub target: f64,
    pub bound: f64,
    pub pass: bool,
}

impl TargetCheck {
    pub fn new(values: &[f64], target: f64, c: f64, mesh: f64) -> Self {
        let (mean, stderr) = mean_stderr(values);
        let bound = 3.0 * stderr + c * mesh;
        TargetCheck { mean, stderr, target, bound, pass: (mean - target).abs() <= bound }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub experiment: String,
    pub functional: String,
    pub size: RunSize,
    pub bracket_mode: super::BracketMode,
    pub rule: ToleranceRule,
    pub term_names: Vec<String>,
    pub diagnostic_names: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub mean_abs: f64,
    pub se_abs: f64,
    pub mean: f64,
    pub se: f64,
    pub q90_abs: f64,
    pub bound: f64,
    /// Term removed for the ablation check.
    pub ablated_term: Option<String>,
    /// Residual with `ablated_term` removed, checked against the expected
    /// size of that term.
    pub ablation: Option<TargetCheck>,
    pub pass: bool,
}

impl VerificationReport {
    pub(crate) fn assemble(
        experiment: &str,
        functional: &str,
        size: RunSize,
        bracket_mode: super::BracketMode,
        rule: ToleranceRule,
        term_names: &[&str],
        diagnostic_names: &[&str],
        rows: Vec<ReportRow>,
        ablation: Option<(usize, f64)>,
    ) -> Self {
        let res: Vec<f64> = rows.iter().map(|r| r.residual).collect();
        let abs: Vec<f64> = res.iter().map(|r| r.abs()).collect();
        let (mean_abs, se_abs) = mean_stderr(&abs);
        let (mean, se) = mean_stderr(&res);
        let q90_abs = quantile(&abs, 0.9);
        let (bound, pass) = match rule {
            ToleranceRule::MeanAbs { c } => {
                let b = 3.0 * se_abs + c * ((size.n as f64).powf(-0.5) + (size.particles as f64).powf(-0.5));
                (b, mean_abs <= b && q90_abs <= b)
            }
            ToleranceRule::SignedMean { c } => {
                let b = 3.0 * se + c * size.mesh();
                (b, mean.abs() <= b)
            }
        };
        // the ablated residual adds the correction term back
        let ablation_spec = ablation;
        let ablation = ablation.map(|(term, target)| {
            let vals: Vec<f64> = rows.iter().map(|r| r.residual + r.terms[term]).collect();
            TargetCheck::new(&vals, target, rule.constant(), size.mesh())
        });
        let ablated_term = ablation_spec.map(|(term, _)| term_names[term].to_string());
        let pass = pass && ablation.is_none_or(|a| a.pass);
        VerificationReport {
            experiment: experiment.to_string(),
            functional: functional.to_string(),
            size,
            bracket_mode,
            rule,
            term_names: term_names.iter().map(|s| s.to_string()).collect(),
            diagnostic_names: diagnostic_names.iter().map(|s| s.to_string()).collect(),
            rows,
            mean_abs,
            se_abs,
            mean,
            se,
            q90_abs,
            bound,
            ablated_term,
            ablation,
            pass,
        }
    }

    /// Value of a named term in row `r`.
    pub fn term(&self, r: usize, name: &str) -> Option<f64> {
        let j = self.term_names.iter().position(|n| n == name)?;
        Some(self.rows[r].terms[j])
    }

    /// Mean over rows of a named term.
    pub fn term_mean(&self, name: &str) -> Option<f64> {
        let j = self.term_names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r.terms[j]).sum::<f64>() / self.rows.len() as f64)
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.residual).collect()
    }

    /// Term table: `path, lhs, <terms>, residual, <diagnostics>`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("path,lhs");
        for n in &self.term_names {
            s.push(',');
            s.push_str(n);
        }
        s.push_str(",residual");
        for n in &self.diagnostic_names {
            s.push(',');
            s.push_str(n);
        }
        s.push('\n');
        for r in &self.rows {
            s.push_str(&format!("{},{}", r.path, fmt_f64(r.lhs)));
            for v in &r.terms {
                s.push(',');
                s.push_str(&fmt_f64(*v));
            }
            s.push(',');
            s.push_str(&fmt_f64(r.residual));
            for v in &r.diagnostics {
                s.push(',');
                s.push_str(&fmt_f64(*v));
            }
            s.push('\n');
        }
        s
    }
}

/// Empirical quantile by the nearest-rank rule.
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}
