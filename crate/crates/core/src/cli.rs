//! Command-line experiment runner: TOML configs, report files and exit
//! statuses.
//!
//! Every experiment computes its results in full before any file is
//! written, so a configuration error leaves the output directory untouched.
//! A tolerance failure still writes every file and exits with
//! [`EXIT_FAIL`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::chainrule::{
    convergence_sweep, verify_brownian_corollary, verify_factor_model, verify_ito, verify_ito_wentzell, BracketMode,
    ToleranceRule, VerificationReport, VerifyOptions,
};
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::measures::{fd_check_dm, fd_check_dm2, integral_identity_dm, integral_identity_dm2, EmpiricalMeasure, MeasurePair};
use crate::mfc::{
    constant_control_gap, dpp_check, hjb_residual, policy_value, solve_riccati, ConstantFeedback, ControlFamily,
    ControlProblem, DppExpectation, DppSettings, LqLattice, LqParams, QuadraticValue, RiccatiFeedback,
};
use crate::particle::{EnsembleConfig, FeedbackLaw, InitialLaw};
use crate::paths::{Partition, SdeCoefficients};
use crate::quadvar::{brownian_lemma_study, BrownianWeight};
use crate::registry;

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "condflow", version, about = "Chain rules for flows of conditional laws, checked by simulation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed; overrides the configuration.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (results do not depend on it).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Convergence of weighted quadratic-variation sums for Brownian motion.
    LemmaQv,
    /// Finite-difference battery for the measure derivatives.
    DerivCheck,
    /// Itô formula for a registry functional.
    VerifyIto,
    /// Itô–Wentzell formula with the correction ablation.
    VerifyWentzell,
    /// Brownian specialization of the Itô–Wentzell formula.
    VerifyBrownian,
    /// Factor-model chain rule.
    VerifyFactor,
    /// Residual table over a grid of sizes.
    Sweep,
    /// HJB residuals of the Riccati value on the moment lattice.
    HjbLq,
    /// Dynamic-programming gap of a feedback control.
    DppCheck,
    /// Registry keys.
    List,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::LemmaQv => "lemma-qv",
            Command::DerivCheck => "deriv-check",
            Command::VerifyIto => "verify-ito",
            Command::VerifyWentzell => "verify-wentzell",
            Command::VerifyBrownian => "verify-brownian",
            Command::VerifyFactor => "verify-factor",
            Command::Sweep => "sweep",
            Command::HjbLq => "hjb-lq",
            Command::DppCheck => "dpp-check",
            Command::List => "list",
        }
    }

    fn needs_seed(self) -> bool {
        !matches!(self, Command::DerivCheck | Command::List)
    }
}

/// State coefficients `dX = b dt + σ dW + σ⁰ dW⁰` with an optional scalar
/// factor `dY = k dt + γ dB + γ⁰ dW⁰`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoefficientConfig {
    pub drift: f64,
    pub sigma: f64,
    pub sigma0: f64,
    /// Initial state; with `initial_std` the mean of a Gaussian start.
    pub x0: f64,
    pub initial_std: Option<f64>,
    pub factor: Option<FactorConfig>,
}

impl Default for CoefficientConfig {
    fn default() -> Self {
        CoefficientConfig { drift: 0.0, sigma: 1.0, sigma0: 0.5, x0: 0.0, initial_std: None, factor: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FactorConfig {
    pub k: f64,
    pub gamma: f64,
    pub gamma0: f64,
    pub y0: f64,
}

impl Default for FactorConfig {
    fn default() -> Self {
        FactorConfig { k: 0.0, gamma: 0.5, gamma0: 1.0, y0: 0.0 }
    }
}

/// Tolerance constants per experiment family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToleranceConfig {
    /// `C` in `3·SE + C(n^{-1/2} + N^{-1/2})` for the Itô formula and sweeps.
    pub c_ito: f64,
    /// `C` in `3·SE + C·Δt` for the Itô–Wentzell and corollary checks.
    pub c_wentzell: f64,
    /// `C` in `3·SE + C·Δt` for the optimal DPP gap.
    pub c_dpp: f64,
    pub tol_hjb: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig { c_ito: 0.5, c_wentzell: 1.0, c_dpp: 1.0, tol_hjb: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaConfig {
    pub weight: BrownianWeight,
    pub n_list: Vec<usize>,
    pub seeds: usize,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        LemmaConfig { weight: BrownianWeight::One, n_list: vec![256, 1024, 4096], seeds: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DerivConfig {
    pub eps: Vec<f64>,
    pub m: Vec<f64>,
    pub m_prime: Vec<f64>,
}

impl Default for DerivConfig {
    fn default() -> Self {
        DerivConfig { eps: vec![1e-1, 1e-2, 1e-3, 1e-4], m: vec![-1.0, 0.25, 1.5], m_prime: vec![-0.5, 0.0, 0.8, 2.0] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HjbConfig {
    /// `ε` in the candidate `V + ε Var`.
    pub perturbation: f64,
    /// Control bound; by default twice the largest Riccati feedback on the
    /// lattice, rounded up.
    pub a_max: Option<f64>,
    pub refine: usize,
    /// Monte Carlo policy values at these `(t, mean, var)` nodes.
    pub mc_nodes: Vec<[f64; 3]>,
    pub mc_steps: usize,
    pub mc_particles: usize,
    pub mc_paths: usize,
}

impl Default for HjbConfig {
    fn default() -> Self {
        HjbConfig {
            perturbation: 0.0,
            a_max: None,
            refine: 12,
            mc_nodes: vec![[0.0, 0.25, 0.55], [0.5, -0.5, 1.0], [0.75, 0.0, 0.1]],
            mc_steps: 100,
            mc_particles: 500,
            mc_paths: 256,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DppControl {
    Optimal,
    /// `a ≡ a_max`.
    Constant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DppConfig {
    pub control: DppControl,
    pub t: f64,
    pub theta: f64,
    pub mean: f64,
    pub var: f64,
    pub steps: usize,
    pub particles: usize,
    pub paths: usize,
    pub a_max: Option<f64>,
}

impl Default for DppConfig {
    fn default() -> Self {
        DppConfig {
            control: DppControl::Optimal,
            t: 0.0,
            theta: 0.25,
            mean: 0.2,
            var: 0.5,
            steps: 50,
            particles: 1000,
            paths: 64,
            a_max: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// `(n, N, M)` cells.
    pub grid: Vec<[usize; 3]>,
}

/// Everything a run may read; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    /// Registry key of the functional or spec.
    pub functional: Option<String>,
    pub n: Option<usize>,
    pub particles: Option<usize>,
    pub paths: Option<usize>,
    pub horizon: Option<f64>,
    pub bracket_mode: Option<BracketMode>,
    #[serde(default)]
    pub coefficients: CoefficientConfig,
    #[serde(default)]
    pub tolerance: ToleranceConfig,
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub lemma: LemmaConfig,
    #[serde(default)]
    pub deriv: DerivConfig,
    #[serde(default)]
    pub lq: LqParams,
    #[serde(default)]
    pub hjb: HjbConfig,
    #[serde(default)]
    pub dpp: DppConfig,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn size(&self, v: Option<usize>, default: usize, what: &str) -> Result<usize> {
        let v = v.unwrap_or(default);
        if v == 0 {
            return Err(Error::Config(format!("{what} must be positive")));
        }
        Ok(v)
    }
}

/// A finished run: files to write and the overall verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub experiment: String,
    pub files: Vec<(String, String)>,
    pub pass: bool,
    pub streams: BTreeMap<String, String>,
}

fn json_text(v: &impl Serialize) -> Result<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| Error::Config(e.to_string()))
}

fn verifier_output(experiment: &str, report: &VerificationReport) -> Result<RunOutput> {
    Ok(RunOutput {
        experiment: experiment.into(),
        files: vec![("report.json".into(), json_text(report)?), ("terms.csv".into(), report.to_csv())],
        pass: report.pass,
        streams: outer_path_streams(),
    })
}

fn outer_path_streams() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("outer-path r".into(), "root(seed).derive(OUTER_PATH, r)".into()),
        ("common noise".into(), "outer(r).derive(COMMON_NOISE, 0)".into()),
        ("factor noise".into(), "outer(r).derive(FACTOR_NOISE, 0)".into()),
        ("particle i".into(), "outer(r).particle(i)".into()),
        ("initial law i".into(), "outer(r).derive(INITIAL_LAW, i)".into()),
        ("field driver j".into(), "outer(r).derive(FIELD_DRIVER, j)".into()),
    ])
}

fn ensemble(cfg: &ExperimentConfig, n: usize, particles: usize) -> Result<EnsembleConfig> {
    let c = &cfg.coefficients;
    let horizon = cfg.horizon.unwrap_or(1.0);
    let partition = Arc::new(Partition::uniform(horizon, n)?);
    let mut coeffs = SdeCoefficients::constant(c.drift, c.sigma, c.sigma0);
    if let Some(f) = &c.factor {
        coeffs = coeffs.with_constant_factor(f.k, f.gamma, f.gamma0);
    }
    let initial = match c.initial_std {
        Some(std) => InitialLaw::Gaussian { mean: vec![c.x0], std },
        None => InitialLaw::dirac(&[c.x0]),
    };
    let mut e = EnsembleConfig::new(coeffs, initial, particles, partition);
    if let Some(f) = &c.factor {
        e = e.with_factor(vec![f.y0]);
    }
    Ok(e)
}

fn verify_options(cfg: &ExperimentConfig, seed: u64, paths: usize, rule: ToleranceRule) -> VerifyOptions {
    VerifyOptions::new(paths, seed, rule).with_mode(cfg.bracket_mode.unwrap_or_default())
}

fn check_experiment_name(cfg: &ExperimentConfig, cmd: Command) -> Result<()> {
    match &cfg.experiment {
        Some(e) if e != cmd.name() => {
            Err(Error::Config(format!("configuration is for {e:?}, not {:?}", cmd.name())))
        }
        _ => Ok(()),
    }
}

/// Runs one experiment without touching the file system.
pub fn execute(cmd: Command, cfg: &ExperimentConfig, seed: Option<u64>) -> Result<RunOutput> {
    check_experiment_name(cfg, cmd)?;
    let seed = match (seed.or(cfg.seed), cmd.needs_seed()) {
        (Some(s), _) => s,
        (None, false) => 0,
        (None, true) => return Err(Error::Config("a seed is required (config `seed` or --seed)".into())),
    };
    let name = cmd.name();
    let horizon = cfg.horizon.unwrap_or(1.0);
    let tol = &cfg.tolerance;
    match cmd {
        Command::List => Ok(RunOutput {
            experiment: name.into(),
            files: vec![("registry.txt".into(), registry::names().join("\n") + "\n")],
            pass: true,
            streams: BTreeMap::new(),
        }),
        Command::LemmaQv => {
            let l = &cfg.lemma;
            let study = brownian_lemma_study(l.weight, horizon, &l.n_list, l.seeds, seed)?;
            let last = study.rows.last().expect("nonempty study");
            let pass = study.trend_ok.unwrap_or(true) && (last.n < 4096 || last.mean_abs_error < 0.05);
            Ok(RunOutput {
                experiment: name.into(),
                files: vec![("report.json".into(), json_text(&study)?), ("convergence.csv".into(), study.to_csv())],
                pass,
                streams: BTreeMap::from([("seed j".into(), "root(seed).derive(OUTER_PATH, j)".into())]),
            })
        }
        Command::DerivCheck => {
            let d = &cfg.deriv;
            let pair = MeasurePair::new(EmpiricalMeasure::from_scalars(&d.m)?, EmpiricalMeasure::from_scalars(&d.m_prime)?)?;
            let names: Vec<String> = match &cfg.functional {
                Some(f) => vec![f.clone()],
                None => registry::functionals().iter().map(|u| u.name().to_string()).collect(),
            };
            let mut csv = String::from("functional,derivative,eps,error,observed_order\n");
            let mut entries = Vec::new();
            let mut pass = true;
            for n in &names {
                let u = registry::functional(n)?;
                let c1 = fd_check_dm(&u, &pair, &d.eps)?;
                let c2 = fd_check_dm2(&u, &pair, &d.eps, None)?;
                let id1 = integral_identity_dm(&u, &pair)?;
                let id2 = integral_identity_dm2(&u, &pair, &[0.3])?;
                for (kind, c) in [("dm", &c1), ("dm2", &c2)] {
                    for r in &c.rows {
                        let order = r.observed_order.map(fmt_f64).unwrap_or_default();
                        csv.push_str(&format!("{n},{kind},{},{},{order}\n", fmt_f64(r.eps), fmt_f64(r.error)));
                    }
                }
                let identity_ok = !u.is_polynomial() || (id1.error < 1e-10 && id2.error < 1e-10);
                pass &= c1.order_ok && c2.order_ok && identity_ok;
                entries.push(json!({"functional": n, "dm": c1, "dm2": c2, "identity_dm": id1, "identity_dm2": id2,
                    "identity_ok": identity_ok}));
            }
            Ok(RunOutput {
                experiment: name.into(),
                files: vec![("report.json".into(), json_text(&entries)?), ("fd.csv".into(), csv)],
                pass,
                streams: BTreeMap::new(),
            })
        }
        Command::VerifyIto => {
            let u = registry::functional(cfg.functional.as_deref().unwrap_or("second-moment"))?;
            let n = cfg.size(cfg.n, 256, "n")?;
            let np = cfg.size(cfg.particles, 512, "particles")?;
            let m = cfg.size(cfg.paths, 16, "paths")?;
            let opts = verify_options(cfg, seed, m, ToleranceRule::MeanAbs { c: tol.c_ito });
            verifier_output(name, &verify_ito(&u, &ensemble(cfg, n, np)?, &opts)?)
        }
        Command::VerifyWentzell => {
            let spec = registry::random_field(cfg.functional.as_deref().unwrap_or(registry::WENTZELL_ABLATION))?;
            let n = cfg.size(cfg.n, 256, "n")?;
            let np = cfg.size(cfg.particles, 64, "particles")?;
            let m = cfg.size(cfg.paths, 200, "paths")?;
            let opts = verify_options(cfg, seed, m, ToleranceRule::SignedMean { c: tol.c_wentzell });
            let expected = (spec.name == registry::WENTZELL_ABLATION).then_some(cfg.coefficients.sigma0 * horizon);
            verifier_output(name, &verify_ito_wentzell(&spec, &ensemble(cfg, n, np)?, &opts, expected)?)
        }
        Command::VerifyBrownian => {
            let spec = registry::random_field(cfg.functional.as_deref().unwrap_or(registry::BROWNIAN_PSI0))?;
            let n = cfg.size(cfg.n, 256, "n")?;
            let np = cfg.size(cfg.particles, 8, "particles")?;
            let m = cfg.size(cfg.paths, 200, "paths")?;
            let opts = verify_options(cfg, seed, m, ToleranceRule::SignedMean { c: tol.c_wentzell });
            let expected = (spec.name == registry::BROWNIAN_PSI0).then_some(cfg.coefficients.sigma0 * horizon);
            verifier_output(name, &verify_brownian_corollary(&spec, &ensemble(cfg, n, np)?, &opts, expected)?)
        }
        Command::VerifyFactor => {
            match cfg.functional.as_deref() {
                None | Some(registry::FACTOR_PRODUCT) => {}
                Some(other) => return Err(Error::Config(format!("no factor functional named {other:?}"))),
            }
            let mut cfg = cfg.clone();
            cfg.coefficients.factor.get_or_insert_with(FactorConfig::default);
            let f = cfg.coefficients.factor.clone().expect("set above");
            let n = cfg.size(cfg.n, 256, "n")?;
            let np = cfg.size(cfg.particles, 64, "particles")?;
            let m = cfg.size(cfg.paths, 200, "paths")?;
            let opts = verify_options(&cfg, seed, m, ToleranceRule::SignedMean { c: tol.c_wentzell });
            let expected = Some(cfg.coefficients.sigma0 * f.gamma0 * horizon);
            verifier_output(name, &verify_factor_model(&registry::factor_product(), &ensemble(&cfg, n, np)?, &opts, expected)?)
        }
        Command::Sweep => {
            let u = registry::functional(cfg.functional.as_deref().unwrap_or("second-moment"))?;
            let grid: Vec<(usize, usize, usize)> = match &cfg.sweep {
                Some(s) if !s.grid.is_empty() => s.grid.iter().map(|g| (g[0], g[1], g[2])).collect(),
                _ => vec![(16, 256, 16), (64, 256, 16), (256, 256, 16)],
            };
            if grid.iter().any(|g| g.0 == 0 || g.1 == 0 || g.2 == 0) {
                return Err(Error::Config("sweep sizes must be positive".into()));
            }
            let table = convergence_sweep(&grid, |n, np, m| {
                let opts = verify_options(cfg, seed, m, ToleranceRule::MeanAbs { c: tol.c_ito });
                verify_ito(&u, &ensemble(cfg, n, np)?, &opts)
            })?;
            let pass = table.rows.iter().all(|r| r.pass);
            Ok(RunOutput {
                experiment: name.into(),
                files: vec![("report.json".into(), json_text(&table)?), ("sweep.csv".into(), table.to_csv())],
                pass,
                streams: outer_path_streams(),
            })
        }
        Command::HjbLq => run_hjb(cfg, seed),
        Command::DppCheck => run_dpp(cfg, seed),
    }
}

fn lq_setup(cfg: &ExperimentConfig, a_max: Option<f64>) -> Result<(Arc<crate::mfc::RiccatiSolution>, LqLattice, ControlProblem)> {
    let sol = Arc::new(solve_riccati(&cfg.lq)?);
    let lattice = LqLattice::standard(cfg.lq.horizon);
    let a_max = a_max.unwrap_or_else(|| (2.0 * lattice.feedback_bound(&sol)).ceil());
    let problem = ControlProblem::lq(&cfg.lq, a_max)?;
    Ok((sol, lattice, problem))
}

fn run_hjb(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let h = &cfg.hjb;
    let (sol, lattice, problem) = lq_setup(cfg, h.a_max)?;
    let value = QuadraticValue::riccati(sol.clone()).perturbed(h.perturbation);
    let family = ControlFamily { refine: h.refine, ..ControlFamily::default() };
    let report = hjb_residual(&problem, &value, &lattice, &family, &[], cfg.tolerance.tol_hjb)?;
    let settings = DppSettings { steps: h.mc_steps, particles: h.mc_particles, paths: h.mc_paths, seed, c: 0.0 };
    let feedback: Arc<dyn FeedbackLaw> = Arc::new(RiccatiFeedback { solution: sol.clone(), a_max: problem.a_max });
    let mut checks = Vec::new();
    for node in &h.mc_nodes {
        checks.push(policy_value(&problem, &value, feedback.clone(), node[0], (node[1], node[2]), &settings)?);
    }
    let pass = report.pass && checks.iter().all(|c| c.pass);
    let body = json!({
        "a_max": problem.a_max,
        "riccati_steps": sol.steps,
        "riccati_halving_diff": sol.halving_diff,
        "perturbation": h.perturbation,
        "max_abs_residual": report.max_abs_residual,
        "terminal_error": report.terminal_error,
        "tolerance": report.tolerance,
        "residual_pass": report.pass,
        "mc_nodes": h.mc_nodes,
        "mc_checks": checks,
        "pass": pass,
    });
    Ok(RunOutput {
        experiment: "hjb-lq".into(),
        files: vec![("report.json".into(), json_text(&body)?), ("residuals.csv".into(), report.to_csv())],
        pass,
        streams: BTreeMap::from([
            ("initial cloud".into(), "root(seed).derive(INITIAL_LAW, 0)".into()),
            ("outer-path r".into(), "root(seed).derive(OUTER_PATH, r)".into()),
        ]),
    })
}

fn run_dpp(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let d = &cfg.dpp;
    let (sol, _, problem) = lq_setup(cfg, d.a_max)?;
    let value = QuadraticValue::riccati(sol.clone());
    let settings = DppSettings { steps: d.steps, particles: d.particles, paths: d.paths, seed, c: cfg.tolerance.c_dpp };
    let law = (d.mean, d.var);
    let (control, expectation, oracle): (Arc<dyn FeedbackLaw>, _, _) = match d.control {
        DppControl::Optimal => {
            (Arc::new(RiccatiFeedback { solution: sol.clone(), a_max: problem.a_max }), DppExpectation::Optimal, None)
        }
        DppControl::Constant => {
            let o = constant_control_gap(&sol, d.t, d.theta, law, problem.a_max);
            (Arc::new(ConstantFeedback(problem.a_max)), DppExpectation::Suboptimal { oracle: Some(o) }, Some(o))
        }
    };
    let r = dpp_check(&problem, &value, control, d.t, d.theta, law, &settings, expectation)?;
    let verdict = match (d.control, r.pass) {
        (DppControl::Optimal, true) => "gap within 3 SE + C dt of zero",
        (DppControl::Optimal, false) => "gap outside 3 SE + C dt",
        (DppControl::Constant, true) => "strictly negative gap matching the oracle",
        (DppControl::Constant, false) => "gap not separated from zero or off the oracle",
    };
    let body = json!({
        "a_max": problem.a_max,
        "report": r,
        "oracle": oracle,
        "verdict": verdict,
    });
    Ok(RunOutput {
        experiment: "dpp-check".into(),
        files: vec![("report.json".into(), json_text(&body)?)],
        pass: r.pass,
        streams: BTreeMap::from([
            ("initial cloud".into(), "root(seed).derive(INITIAL_LAW, 0)".into()),
            ("outer-path r".into(), "root(seed).derive(OUTER_PATH, r)".into()),
        ]),
    })
}

/// Writes the run's files plus `manifest.json` into `dir`.
pub fn write_output(dir: &Path, cfg: &ExperimentConfig, seed: Option<u64>, out: &RunOutput) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Config(format!("{}: {e}", dir.display())))?;
    let mut echo = cfg.clone();
    echo.experiment = Some(out.experiment.clone());
    if seed.is_some() {
        echo.seed = seed;
    }
    echo.out = None;
    let mut names: Vec<&str> = out.files.iter().map(|(n, _)| n.as_str()).collect();
    names.push("manifest.json");
    let manifest = json!({
        "experiment": out.experiment,
        "version": env!("CARGO_PKG_VERSION"),
        "config": echo,
        "rng_streams": out.streams,
        "files": names,
        "pass": out.pass,
    });
    let mut files = out.files.clone();
    files.push(("manifest.json".into(), json_text(&manifest)?));
    for (name, body) in &files {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}

/// Parses the command line, runs and returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_PASS };
        }
    };
    match run(&cli) {
        Ok(out) => {
            if cli.command == Command::List {
                for (_, body) in &out.files {
                    print!("{body}");
                }
            }
            if out.pass {
                EXIT_PASS
            } else {
                EXIT_FAIL
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
    }
}

/// Runs a parsed command line, writing files unless the command is `list`.
pub fn run(cli: &Cli) -> Result<RunOutput> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // a pool may already exist when called twice in one process
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    let cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let out = execute(cli.command, &cfg, cli.seed)?;
    if cli.command != Command::List {
        let dir = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("condflow-out"));
        write_output(&dir, &cfg, cli.seed, &out)?;
        eprintln!("{}: {} ({})", out.experiment, if out.pass { "pass" } else { "FAIL" }, dir.display());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(ExperimentConfig::parse("seed = 1\nbogus = 2\n").is_err());
        assert!(ExperimentConfig::parse("[coefficients]\nsigma = 1.0\nextra = 1\n").is_err());
        assert!(ExperimentConfig::parse("seed = 1\n[coefficients]\nsigma = 2.0\n").is_ok());
    }

    #[test]
    fn seed_is_required_for_random_runs() {
        let cfg = ExperimentConfig::default();
        assert!(execute(Command::VerifyIto, &cfg, None).is_err());
        assert!(execute(Command::List, &cfg, None).is_ok());
    }

    #[test]
    fn mismatched_experiment_is_rejected() {
        let cfg = ExperimentConfig::parse("experiment = \"hjb-lq\"\nseed = 1\n").unwrap();
        assert!(execute(Command::VerifyIto, &cfg, None).is_err());
    }

    #[test]
    fn list_is_sorted() {
        let out = execute(Command::List, &ExperimentConfig::default(), None).unwrap();
        let names: Vec<&str> = out.files[0].1.lines().collect();
        let mut sorted = names.clone();
        sorted.sort();
        assert_eq!(names, sorted);
    }
}
