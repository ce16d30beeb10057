//! Declarative sweeps behind the `regmest` binary.
//!
//! A TOML file selects dimensions, covariance models, estimators and grids;
//! anything it leaves out falls back to the defaults of the chosen experiment
//! setup (see [`ExperimentConfig::resolve`]). Unknown keys are rejected.
//!
//! ```toml
//! N = 150
//! n = 100
//! trials = 100
//! seed = 7
//! cov_legit = 0.9                 # Toeplitz coefficient, or { file = "C.csv" }
//!
//! [[estimators]]
//! kind = "mtyler"                 # scm | rscm | mtyler | mhuber
//! K = "1/c"                       # number, "1/c" or "min(1,1/c)"
//! t = 0.1
//!
//! [grids]
//! rho = { start = 0.1, stop = 1.0, count = 10 }
//! eps = [0.0, 0.05, 0.1]
//! ```
//!
//! Every sweep returns typed rows; [`write_table`] renders them as CSV with 17
//! significant digits and a `status` column, and [`write_gnuplot`] emits a
//! plot script that drops rows whose status is not `ok`.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::asymptotics;
use crate::calibration::{self, CalibrationError, CalibrationReport};
use crate::estimators::{EstimatorError, EstimatorResult, EstimatorSpec, SolverOptions, Start};
use crate::matrix_io;
use crate::robustness::{self, ImiMode, MonteCarlo, RobustnessError};
use crate::sampling::{sample_clean, CovarianceModel, Dataset, ScalarField};
use crate::weights::{min_admissible_rho, RegularizedContext, WeightFunction, WeightKind};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("input: {0}")]
    Input(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("solver: {0}")]
    Solver(String),
}

impl ExperimentError {
    /// 1 for solver failures, 2 for bad input.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Solver(_) => 1,
            _ => 2,
        }
    }
}

fn solver_error(e: impl std::fmt::Display) -> ExperimentError {
    ExperimentError::Solver(e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LossCurve,
    MiCurve,
    ImiVsAspect,
    ImiVsRho,
    Estimate,
    Calibrate,
}

/// A Toeplitz coefficient `b` (`[C]_ij = b^|i-j|`) or a matrix file.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum CovSpec {
    Toeplitz(f64),
    File {
        file: PathBuf,
    },
}

/// Scale `K` of a weight function, possibly tied to the aspect ratio.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum ScaleSpec {
    Value(f64),
    Rule(String),
}

impl ScaleSpec {
    pub fn at(&self, c: f64) -> Result<f64, ExperimentError> {
        match self {
            ScaleSpec::Value(k) => Ok(*k),
            ScaleSpec::Rule(rule) => match rule.chars().filter(|ch| !ch.is_whitespace()).collect::<String>().as_str() {
                "1/c" => Ok(1.0 / c),
                "min(1,1/c)" => Ok((1.0f64).min(1.0 / c)),
                other if other.parse::<f64>().is_ok() => Ok(other.parse().expect("checked")),
                _ => Err(ExperimentError::Config(format!("K = {rule:?}: expected a number, \"1/c\" or \"min(1,1/c)\""))),
            },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKindConfig {
    Scm,
    Rscm,
    Mtyler,
    Mhuber,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKindConfig,
    #[serde(rename = "K")]
    pub scale: Option<ScaleSpec>,
    pub t: Option<f64>,
}

impl EstimatorConfig {
    fn m(kind: EstimatorKindConfig, scale: &str) -> Self {
        Self { kind, scale: Some(ScaleSpec::Rule(scale.into())), t: Some(0.1) }
    }

    fn plain(kind: EstimatorKindConfig) -> Self {
        Self { kind, scale: None, t: None }
    }

    /// The estimator at aspect ratio `c`.
    pub fn spec(&self, c: f64) -> Result<EstimatorSpec, ExperimentError> {
        let kind = match self.kind {
            EstimatorKindConfig::Scm => return Ok(EstimatorSpec::Scm),
            EstimatorKindConfig::Rscm => return Ok(EstimatorSpec::Rscm),
            EstimatorKindConfig::Mtyler => WeightKind::MTyler,
            EstimatorKindConfig::Mhuber => WeightKind::MHuber,
        };
        let k = self.scale.clone().unwrap_or(ScaleSpec::Rule("min(1,1/c)".into())).at(c)?;
        let w = WeightFunction::new(kind, k, self.t.unwrap_or(0.1)).map_err(|e| ExperimentError::Config(format!("estimator {}: {e}", kind.name())))?;
        Ok(EstimatorSpec::M(w))
    }
}

/// An explicit list of values or `count` evenly spaced points.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    List(Vec<f64>),
    Range {
        start: f64,
        stop: f64,
        count: usize,
    },
}

impl GridSpec {
    fn range(start: f64, stop: f64, count: usize) -> Self {
        GridSpec::Range { start, stop, count }
    }

    pub fn values(&self) -> Vec<f64> {
        match self {
            GridSpec::List(v) => v.clone(),
            GridSpec::Range { start, stop, count } => match count {
                0 => Vec::new(),
                1 => vec![*start],
                _ => (0..*count).map(|k| if k + 1 == *count { *stop } else { start + (stop - start) * k as f64 / (count - 1) as f64 }).collect(),
            },
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grids {
    pub rho: Option<GridSpec>,
    pub eps: Option<GridSpec>,
    pub c: Option<GridSpec>,
}

/// Shrinkage used by `mi_curve` and `estimate`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum RhoChoice {
    Value(f64),
    /// `"none"`, `"optimal"` (oracle, mapped per estimator) or `"auto"` (data driven).
    Rule(String),
}

#[derive(Clone, Debug, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentKind>,
    #[serde(rename = "N")]
    pub dim: Option<usize>,
    pub n: Option<usize>,
    pub cov_legit: Option<CovSpec>,
    pub cov_outlier: Option<CovSpec>,
    pub estimators: Option<Vec<EstimatorConfig>>,
    #[serde(default)]
    pub grids: Grids,
    pub trials: Option<usize>,
    pub seed: Option<u64>,
    pub output: Option<String>,
    pub rho: Option<RhoChoice>,
    pub field: Option<ScalarField>,
    pub imi_mode: Option<ImiMode>,
    pub solver: Option<SolverOptions>,
    /// Rescale covariance files to unit normalized trace.
    pub normalize_covariances: Option<bool>,
}

/// A configuration with every default filled in and validated.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub kind: ExperimentKind,
    pub dim: usize,
    pub n: usize,
    pub cov_legit: CovarianceModel,
    pub cov_outlier: CovarianceModel,
    pub estimators: Vec<EstimatorConfig>,
    pub rho_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    pub c_grid: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub output: String,
    pub rho: RhoChoice,
    pub field: ScalarField,
    pub imi_mode: ImiMode,
    pub solver: SolverOptions,
}

impl Resolved {
    pub fn aspect_ratio(&self) -> f64 {
        self.dim as f64 / self.n as f64
    }
}

struct Defaults {
    dim: usize,
    n: usize,
    estimators: Vec<EstimatorConfig>,
    rho: GridSpec,
    eps: GridSpec,
    c: GridSpec,
    trials: usize,
    rho_choice: &'static str,
    output: &'static str,
}

fn defaults(kind: ExperimentKind) -> Defaults {
    use EstimatorKindConfig::*;
    let m_pair = |scale: &str| vec![EstimatorConfig::m(Mtyler, scale), EstimatorConfig::m(Mhuber, scale)];
    let with = |mut v: Vec<EstimatorConfig>, extra: EstimatorKindConfig| {
        v.push(EstimatorConfig::plain(extra));
        v
    };
    let base = Defaults {
        dim: 150,
        n: 100,
        estimators: with(m_pair("1/c"), Rscm),
        rho: GridSpec::range(0.1, 1.0, 10),
        eps: GridSpec::range(0.0, 0.15, 16),
        c: GridSpec::range(0.05, 3.0, 60),
        trials: 100,
        rho_choice: "none",
        output: "loss_curve",
    };
    match kind {
        ExperimentKind::LossCurve => base,
        ExperimentKind::MiCurve => Defaults { dim: 50, n: 200, estimators: with(m_pair("1"), Scm), trials: 200, output: "mi_curve", ..base },
        ExperimentKind::ImiVsAspect => Defaults { estimators: with(m_pair("min(1,1/c)"), Rscm), trials: 0, output: "imi_aspect", ..base },
        ExperimentKind::ImiVsRho => Defaults { rho: GridSpec::range(0.1, 1.0, 91), trials: 0, output: "imi_rho", ..base },
        ExperimentKind::Estimate => Defaults {
            estimators: vec![EstimatorConfig::m(Mtyler, "min(1,1/c)")],
            rho_choice: "auto",
            trials: 0,
            output: "estimate",
            ..base
        },
        ExperimentKind::Calibrate => Defaults { estimators: m_pair("1/c"), trials: 0, output: "calibrate", ..base },
    }
}

fn load_cov(spec: &CovSpec, dim: usize, normalize: bool, base: &Path) -> Result<CovarianceModel, ExperimentError> {
    let model = match spec {
        CovSpec::Toeplitz(b) => CovarianceModel::toeplitz(dim, *b).map_err(|e| ExperimentError::Config(format!("toeplitz({b}): {e}")))?,
        CovSpec::File { file } => {
            let path = if file.is_absolute() { file.clone() } else { base.join(file) };
            let reader = std::io::BufReader::new(std::fs::File::open(&path).map_err(|e| ExperimentError::Input(format!("{}: {e}", path.display())))?);
            let m = CovarianceModel::from_reader(reader).map_err(|e| ExperimentError::Input(format!("{}: {e}", path.display())))?;
            if m.dim() != dim {
                return Err(ExperimentError::Config(format!("{} is {}x{} but N = {dim}", path.display(), m.dim(), m.dim())));
            }
            m
        }
    };
    if normalize {
        model.normalized().map_err(|e| ExperimentError::Config(e.to_string()))
    } else {
        Ok(model)
    }
}

fn check_grid(name: &str, values: &[f64], ok: impl Fn(f64) -> bool, range: &str) -> Result<(), ExperimentError> {
    if values.is_empty() {
        return Err(ExperimentError::Config(format!("grids.{name} is empty")));
    }
    if let Some(bad) = values.iter().find(|&&x| !ok(x)) {
        return Err(ExperimentError::Config(format!("grids.{name}: {bad} is outside {range}")));
    }
    if values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ExperimentError::Config(format!("grids.{name} must be strictly increasing")));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            ExperimentError::Config(m) => ExperimentError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fills defaults for `kind` and validates. Relative matrix paths are
    /// resolved against `base`.
    pub fn resolve(&self, kind: ExperimentKind, base: &Path) -> Result<Resolved, ExperimentError> {
        if let Some(declared) = self.experiment {
            if declared != kind {
                return Err(ExperimentError::Config(format!("config declares experiment {declared:?} but {kind:?} was requested")));
            }
        }
        let d = defaults(kind);
        let dim = self.dim.unwrap_or(d.dim);
        let n = self.n.unwrap_or(d.n);
        if dim == 0 || n == 0 {
            return Err(ExperimentError::Config("N and n must be positive".into()));
        }
        let normalize = self.normalize_covariances.unwrap_or(false);
        let cov_legit = load_cov(self.cov_legit.as_ref().unwrap_or(&CovSpec::Toeplitz(0.9)), dim, normalize, base)?;
        let cov_outlier = load_cov(self.cov_outlier.as_ref().unwrap_or(&CovSpec::Toeplitz(0.2)), dim, normalize, base)?;
        let estimators = self.estimators.clone().unwrap_or(d.estimators);
        if estimators.is_empty() {
            return Err(ExperimentError::Config("estimators: at least one estimator is required".into()));
        }
        let rho_grid = self.grids.rho.as_ref().unwrap_or(&d.rho).values();
        let eps_grid = self.grids.eps.as_ref().unwrap_or(&d.eps).values();
        let c_grid = self.grids.c.as_ref().unwrap_or(&d.c).values();
        check_grid("rho", &rho_grid, |x| x > 0.0 && x <= 1.0, "(0, 1]")?;
        check_grid("eps", &eps_grid, |x| (0.0..1.0).contains(&x), "[0, 1)")?;
        check_grid("c", &c_grid, |x| x > 0.0 && x.is_finite(), "(0, inf)")?;
        let c0 = dim as f64 / n as f64;
        for (i, e) in estimators.iter().enumerate() {
            for c in c_grid.iter().chain(std::iter::once(&c0)) {
                e.spec(*c).map_err(|err| ExperimentError::Config(format!("estimators[{i}]: {err}")))?;
            }
        }
        let rho = self.rho.clone().unwrap_or(RhoChoice::Rule(d.rho_choice.into()));
        match &rho {
            RhoChoice::Value(r) if !(*r >= 0.0 && *r <= 1.0) => return Err(ExperimentError::Config(format!("rho = {r} must lie in [0, 1]"))),
            RhoChoice::Rule(r) if !matches!(r.as_str(), "none" | "optimal" | "auto") => {
                return Err(ExperimentError::Config(format!("rho = {r:?}: expected a number, \"none\", \"optimal\" or \"auto\"")))
            }
            _ => {}
        }
        let solver = self.solver.unwrap_or_default();
        if !(solver.tolerance > 0.0) || solver.max_iterations == 0 {
            return Err(ExperimentError::Config("solver: tolerance and max_iterations must be positive".into()));
        }
        Ok(Resolved {
            kind,
            dim,
            n,
            cov_legit,
            cov_outlier,
            estimators,
            rho_grid,
            eps_grid,
            c_grid,
            trials: self.trials.unwrap_or(d.trials),
            seed: self.seed.unwrap_or(0),
            output: self.output.clone().unwrap_or_else(|| d.output.into()),
            rho,
            field: self.field.unwrap_or_default(),
            imi_mode: self.imi_mode.unwrap_or_default(),
            solver,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    OutOfRegime,
    NonConverged,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::OutOfRegime => "out_of_regime",
            Status::NonConverged => "non_converged",
        }
    }
}

/// A row of a CSV table.
pub trait Record {
    const HEADER: &'static [&'static str];
    fn fields(&self) -> Vec<String>;
}

fn num(x: f64) -> String {
    if x.is_finite() { format!("{x:.16e}") } else { String::new() }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

/// Writes a CSV table; with `timestamp` the first line is a `#` comment
/// carrying the generation time.
pub fn write_table<R: Record, W: Write>(mut out: W, rows: &[R], timestamp: bool) -> std::io::Result<()> {
    if timestamp {
        let secs = std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map_or(0, |d| d.as_secs());
        writeln!(out, "# generated at unix time {secs}")?;
    }
    writeln!(out, "{}", R::HEADER.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.fields().join(","))?;
    }
    Ok(())
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Shrinkage below which the estimator does not exist.
fn rho_floor(spec: &EstimatorSpec, c: f64) -> f64 {
    match spec {
        EstimatorSpec::M(w) => min_admissible_rho(w, c),
        _ => 0.0,
    }
}

/// `rho` whose mapped parameter is the oracle `rho*`: `rho*` itself for the
/// RSCM, the smallest preimage for M-estimators.
pub fn optimal_rho(spec: &EstimatorSpec, c: f64, cov: &CovarianceModel) -> Result<f64, CalibrationError> {
    let rho_star = calibration::oracle_optimum(c, cov)?.rho_star;
    match spec {
        EstimatorSpec::M(w) => calibration::rho_bar_to_rho(rho_star, w, c, cov),
        _ => Ok(rho_star),
    }
}

fn rho_bar_of(spec: &EstimatorSpec, rho: f64, c: f64, cov: &CovarianceModel) -> Option<f64> {
    match spec {
        EstimatorSpec::M(w) => RegularizedContext::new(rho, c).ok().and_then(|ctx| calibration::rho_to_rho_bar(w, ctx, cov).ok()),
        EstimatorSpec::Rscm => Some(rho),
        EstimatorSpec::Scm => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossRowKind {
    /// One point of the loss-vs-rho curve.
    Curve,
    /// Mean of the data-driven `rho_hat` and the loss there.
    RhoHat,
    /// The preimage of the oracle `rho*` and the loss there.
    RhoHatStar,
    /// The asymptotic optimum `L*` at `rho*`.
    LStar,
}

impl LossRowKind {
    fn as_str(self) -> &'static str {
        match self {
            LossRowKind::Curve => "curve",
            LossRowKind::RhoHat => "rho_hat",
            LossRowKind::RhoHatStar => "rho_hat_star",
            LossRowKind::LStar => "l_star",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossRow {
    pub kind: LossRowKind,
    pub estimator: String,
    pub rho: f64,
    pub rho_bar: Option<f64>,
    pub mean_loss: f64,
    pub stderr: f64,
    pub loss_of_equivalent: Option<f64>,
    pub status: Status,
}

impl Record for LossRow {
    const HEADER: &'static [&'static str] = &["kind", "estimator", "rho", "rho_bar", "mean_loss", "stderr", "loss_of_equivalent", "status"];
    fn fields(&self) -> Vec<String> {
        vec![
            self.kind.as_str().into(),
            self.estimator.clone(),
            num(self.rho),
            opt(self.rho_bar),
            num(self.mean_loss),
            num(self.stderr),
            opt(self.loss_of_equivalent),
            self.status.as_str().into(),
        ]
    }
}

struct LossPoint {
    rho: f64,
    kind: LossRowKind,
    state: Option<asymptotics::AsymptoticState>,
    losses: Vec<f64>,
    equivalent: Vec<f64>,
    failures: usize,
    admissible: bool,
}

/// Expected quadratic loss against `rho` on clean data.
///
/// For every trial one dataset is drawn and each estimator is fitted on the
/// `rho` grid (plus the preimage of `rho*`), warm-started along the grid. The
/// deterministic equivalent on the same data gives `loss_of_equivalent`, and
/// the data-driven `rho_hat` is computed per trial for M-estimators.
pub fn run_loss_curve(cfg: &Resolved) -> Result<Vec<LossRow>, ExperimentError> {
    let c = cfg.aspect_ratio();
    let cov = &cfg.cov_legit;
    let oracle = calibration::oracle_optimum(c, cov).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let specs: Vec<EstimatorSpec> = cfg.estimators.iter().map(|e| e.spec(c)).collect::<Result<_, _>>()?;

    let mut points: Vec<Vec<LossPoint>> = Vec::new();
    for spec in &specs {
        let mut rhos: Vec<(f64, LossRowKind)> = match spec {
            EstimatorSpec::Scm => vec![(0.0, LossRowKind::Curve)],
            _ => cfg.rho_grid.iter().map(|&r| (r, LossRowKind::Curve)).collect(),
        };
        if !matches!(spec, EstimatorSpec::Scm) {
            match optimal_rho(spec, c, cov) {
                Ok(r) => rhos.push((r, LossRowKind::RhoHatStar)),
                Err(e) => log::warn!("{}: no preimage of rho* = {}: {e}", spec.label(), oracle.rho_star),
            }
        }
        rhos.sort_by(|a, b| a.0.total_cmp(&b.0));
        let floor = rho_floor(spec, c);
        let pts = rhos
            .into_iter()
            .map(|(rho, kind)| {
                let admissible = rho > floor || (floor == 0.0 && !matches!(spec, EstimatorSpec::M(_)));
                let state = match spec {
                    EstimatorSpec::M(w) if admissible => {
                        RegularizedContext::new(rho, c).ok().and_then(|ctx| asymptotics::solve_gamma(w, ctx, cov).ok())
                    }
                    _ => None,
                };
                LossPoint { rho, kind, state, losses: Vec::new(), equivalent: Vec::new(), failures: 0, admissible }
            })
            .collect();
        points.push(pts);
    }

    let mut rho_hats: Vec<Vec<(f64, f64)>> = vec![Vec::new(); specs.len()];
    let mut rho_hat_failures = vec![0usize; specs.len()];
    for seed in robustness::trial_seeds(cfg.seed, cfg.trials) {
        let y = sample_clean(cov, cfg.n, seed, cfg.field).map_err(|e| ExperimentError::Config(e.to_string()))?;
        for (e, spec) in specs.iter().enumerate() {
            let mut warm: Option<Vec<f64>> = None;
            for p in points[e].iter_mut().filter(|p| p.admissible) {
                let start = warm.as_deref().map_or(Start::Options, Start::Weights);
                match spec.fit(&y, p.rho, &cfg.solver, start) {
                    Ok(fit) => {
                        p.losses.push(calibration::quadratic_loss(&fit.estimate, cov).map_err(solver_error)?);
                        if let Some(state) = &p.state {
                            let s = asymptotics::equivalent_clean(&y, state).map_err(solver_error)?;
                            p.equivalent.push(calibration::quadratic_loss(&s, cov).map_err(solver_error)?);
                        }
                        warm = Some(fit.weights);
                    }
                    Err(err) => {
                        log::warn!("{} at rho = {}: {err}", spec.label(), p.rho);
                        p.failures += 1;
                    }
                }
            }
            if let EstimatorSpec::M(w) = spec {
                match calibration::estimate_rho_hat(&y, w, &cfg.solver) {
                    Ok(fit) => {
                        let loss = calibration::quadratic_loss(&fit.estimate.estimate, cov).map_err(solver_error)?;
                        rho_hats[e].push((fit.report.rho_hat.unwrap_or(f64::NAN), loss));
                    }
                    Err(err) => {
                        log::warn!("{} rho_hat: {err}", spec.label());
                        rho_hat_failures[e] += 1;
                    }
                }
            }
        }
    }

    let mut rows = Vec::new();
    for (e, spec) in specs.iter().enumerate() {
        for p in &points[e] {
            let (mean_loss, stderr) = mean_and_stderr(&p.losses);
            let status = if !p.admissible {
                Status::OutOfRegime
            } else if p.failures > 0 {
                Status::NonConverged
            } else {
                Status::Ok
            };
            rows.push(LossRow {
                kind: p.kind,
                estimator: spec.label().into(),
                rho: p.rho,
                rho_bar: if p.admissible { rho_bar_of(spec, p.rho, c, cov) } else { None },
                mean_loss,
                stderr,
                loss_of_equivalent: (!p.equivalent.is_empty()).then(|| mean_and_stderr(&p.equivalent).0),
                status,
            });
        }
        if matches!(spec, EstimatorSpec::M(_)) && cfg.trials > 0 {
            let (rhos, losses): (Vec<f64>, Vec<f64>) = rho_hats[e].iter().copied().unzip();
            let mean_rho = mean_and_stderr(&rhos).0;
            let (mean_loss, stderr) = mean_and_stderr(&losses);
            rows.push(LossRow {
                kind: LossRowKind::RhoHat,
                estimator: spec.label().into(),
                rho: mean_rho,
                rho_bar: if mean_rho.is_finite() { rho_bar_of(spec, mean_rho, c, cov) } else { None },
                mean_loss,
                stderr,
                loss_of_equivalent: None,
                status: if rho_hat_failures[e] > 0 { Status::NonConverged } else { Status::Ok },
            });
        }
    }
    rows.push(LossRow {
        kind: LossRowKind::LStar,
        estimator: "all".into(),
        rho: oracle.rho_star,
        rho_bar: Some(oracle.rho_star),
        mean_loss: oracle.l_star,
        stderr: 0.0,
        loss_of_equivalent: None,
        status: Status::Ok,
    });
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MiRow {
    pub estimator: String,
    pub eps: f64,
    pub rho: f64,
    pub mi_asymptotic: Option<f64>,
    pub mi_empirical: Option<f64>,
    pub stderr: Option<f64>,
    /// `eps * IMI`.
    pub linear_approx: Option<f64>,
    pub status: Status,
}

impl Record for MiRow {
    const HEADER: &'static [&'static str] = &["estimator", "eps", "rho", "mi_asymptotic", "mi_empirical", "stderr", "linear_approx", "status"];
    fn fields(&self) -> Vec<String> {
        vec![
            self.estimator.clone(),
            num(self.eps),
            num(self.rho),
            opt(self.mi_asymptotic),
            opt(self.mi_empirical),
            opt(self.stderr),
            opt(self.linear_approx),
            self.status.as_str().into(),
        ]
    }
}

fn in_regime(spec: &EstimatorSpec, rho: f64, c: f64) -> bool {
    match spec {
        EstimatorSpec::M(w) if rho == 0.0 => asymptotics::check_non_regularized_regime(w, c).is_ok(),
        EstimatorSpec::M(w) => rho > min_admissible_rho(w, c),
        EstimatorSpec::Scm => c < 1.0 || rho > 0.0,
        EstimatorSpec::Rscm => true,
    }
}

fn status_of(err: &RobustnessError) -> Status {
    match err {
        RobustnessError::Asymptotic(asymptotics::AsymptoticError::Precondition(_)) | RobustnessError::Weight(_) => Status::OutOfRegime,
        _ => Status::NonConverged,
    }
}

/// Shrinkage of each estimator in `mi_curve`.
fn mi_rho(cfg: &Resolved, spec: &EstimatorSpec, c: f64) -> Result<f64, ExperimentError> {
    Ok(match (&cfg.rho, spec) {
        (_, EstimatorSpec::Scm) => 0.0,
        (RhoChoice::Value(r), _) => *r,
        (RhoChoice::Rule(r), _) if r == "optimal" => optimal_rho(spec, c, &cfg.cov_legit).map_err(solver_error)?,
        (RhoChoice::Rule(r), EstimatorSpec::Rscm) if r == "none" => 0.0,
        (RhoChoice::Rule(r), _) if r == "none" => 0.0,
        (RhoChoice::Rule(r), _) => return Err(ExperimentError::Config(format!("rho = {r:?} is not supported by mi_curve"))),
    })
}

/// Measure of influence against `eps`: asymptotic curve, Monte-Carlo points
/// (when `trials > 0`) and the linear approximation `eps * IMI`.
pub fn run_mi_curve(cfg: &Resolved) -> Result<Vec<MiRow>, ExperimentError> {
    let c = cfg.aspect_ratio();
    let (cm, dm) = (&cfg.cov_legit, &cfg.cov_outlier);
    robustness::check_normalized(cm, dm).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    for e in &cfg.estimators {
        let spec = e.spec(c)?;
        let rho = mi_rho(cfg, &spec, c)?;
        let mc = MonteCarlo { field: cfg.field, solver: cfg.solver, ..MonteCarlo::new(cfg.n, cfg.trials, cfg.seed) };
        let regime = in_regime(&spec, rho, c);
        let imi = if regime { robustness::imi(&spec, rho, c, cm, dm, cfg.imi_mode).ok() } else { None };
        for &eps in &cfg.eps_grid {
            let mut row = MiRow {
                estimator: spec.label().into(),
                eps,
                rho,
                mi_asymptotic: None,
                mi_empirical: None,
                stderr: None,
                linear_approx: imi.map(|i| eps * i),
                status: Status::Ok,
            };
            if !regime {
                row.status = Status::OutOfRegime;
                rows.push(row);
                continue;
            }
            match robustness::mi_asymptotic(&spec, rho, c, eps, cm, dm) {
                Ok(v) => row.mi_asymptotic = Some(v),
                Err(err) => row.status = status_of(&err),
            }
            if cfg.trials > 0 {
                match robustness::mi_empirical(&spec, cm, dm, eps, rho, &mc) {
                    Ok(est) => {
                        row.mi_empirical = Some(est.value);
                        row.stderr = Some(est.stderr);
                        if est.failures > 0 {
                            row.status = Status::NonConverged;
                        }
                    }
                    Err(err) => {
                        log::warn!("{} at eps = {eps}: {err}", spec.label());
                        row.status = Status::NonConverged;
                    }
                }
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Regularized,
    NonRegularized,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImiAspectRow {
    pub regime: Regime,
    pub estimator: String,
    pub c: f64,
    pub scale: Option<f64>,
    pub rho: Option<f64>,
    pub imi: Option<f64>,
    /// The same quantity in the small-`t` mode.
    pub imi_small_t: Option<f64>,
    pub status: Status,
}

impl Record for ImiAspectRow {
    const HEADER: &'static [&'static str] = &["regime", "estimator", "c", "K", "rho", "imi", "imi_small_t", "status"];
    fn fields(&self) -> Vec<String> {
        vec![
            match self.regime {
                Regime::Regularized => "regularized".into(),
                Regime::NonRegularized => "non_regularized".into(),
            },
            self.estimator.clone(),
            num(self.c),
            opt(self.scale),
            opt(self.rho),
            opt(self.imi),
            opt(self.imi_small_t),
            self.status.as_str().into(),
        ]
    }
}

fn imi_pair(spec: &EstimatorSpec, rho: f64, c: f64, cm: &CovarianceModel, dm: &CovarianceModel) -> (Result<f64, RobustnessError>, Option<f64>) {
    let exact = robustness::imi(spec, rho, c, cm, dm, ImiMode::Exact);
    let small = robustness::imi(spec, rho, c, cm, dm, ImiMode::SmallT).ok();
    (exact, small)
}

/// IMI against the aspect ratio at each estimator's oracle shrinkage, with the
/// non-regularized IMI as reference. Points where an estimator does not exist
/// are flagged `out_of_regime` and carry no value.
pub fn run_imi_vs_aspect(cfg: &Resolved) -> Result<Vec<ImiAspectRow>, ExperimentError> {
    let (cm, dm) = (&cfg.cov_legit, &cfg.cov_outlier);
    robustness::check_normalized(cm, dm).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    for e in &cfg.estimators {
        for &c in &cfg.c_grid {
            let spec = e.spec(c)?;
            let scale = match &spec {
                EstimatorSpec::M(w) => Some(w.scale()),
                _ => None,
            };
            let mut reg = ImiAspectRow {
                regime: Regime::Regularized,
                estimator: spec.label().into(),
                c,
                scale,
                rho: None,
                imi: None,
                imi_small_t: None,
                status: Status::Ok,
            };
            match optimal_rho(&spec, c, cm) {
                Ok(rho) if in_regime(&spec, rho, c) => {
                    reg.rho = Some(rho);
                    let (exact, small) = imi_pair(&spec, rho, c, cm, dm);
                    reg.imi_small_t = small;
                    match exact {
                        Ok(v) => reg.imi = Some(v),
                        Err(err) => reg.status = status_of(&err),
                    }
                }
                Ok(rho) => {
                    reg.rho = Some(rho);
                    reg.status = Status::OutOfRegime;
                }
                Err(_) => reg.status = Status::OutOfRegime,
            }
            rows.push(reg);

            let mut non = ImiAspectRow { regime: Regime::NonRegularized, rho: Some(0.0), ..rows.last().cloned().expect("pushed") };
            non.imi = None;
            non.imi_small_t = None;
            non.status = Status::Ok;
            let spec0 = match spec {
                EstimatorSpec::Rscm => EstimatorSpec::Scm,
                other => other,
            };
            non.estimator = spec0.label().into();
            non.scale = None;
            if let EstimatorSpec::M(w) = &spec0 {
                non.scale = Some(w.scale());
            }
            if in_regime(&spec0, 0.0, c) || matches!(spec0, EstimatorSpec::Scm) {
                let (exact, small) = imi_pair(&spec0, 0.0, c, cm, dm);
                non.imi_small_t = small;
                match exact {
                    Ok(v) => non.imi = Some(v),
                    Err(err) => non.status = status_of(&err),
                }
            } else {
                non.status = Status::OutOfRegime;
            }
            rows.push(non);
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImiRhoRow {
    /// `curve` or `rho_hat_star` (the marker at the oracle shrinkage).
    pub kind: &'static str,
    pub estimator: String,
    pub rho: f64,
    pub imi: Option<f64>,
    pub imi_small_t: Option<f64>,
    pub status: Status,
}

impl Record for ImiRhoRow {
    const HEADER: &'static [&'static str] = &["kind", "estimator", "rho", "imi", "imi_small_t", "status"];
    fn fields(&self) -> Vec<String> {
        vec![self.kind.into(), self.estimator.clone(), num(self.rho), opt(self.imi), opt(self.imi_small_t), self.status.as_str().into()]
    }
}

/// IMI against the shrinkage at a fixed aspect ratio `N/n`.
pub fn run_imi_vs_rho(cfg: &Resolved) -> Result<Vec<ImiRhoRow>, ExperimentError> {
    let c = cfg.aspect_ratio();
    let (cm, dm) = (&cfg.cov_legit, &cfg.cov_outlier);
    robustness::check_normalized(cm, dm).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let mut rows = Vec::new();
    for e in &cfg.estimators {
        let spec = e.spec(c)?;
        let mut points: Vec<(&'static str, f64)> = cfg.rho_grid.iter().map(|&r| ("curve", r)).collect();
        if let Ok(r) = optimal_rho(&spec, c, cm) {
            points.push(("rho_hat_star", r));
        }
        for (kind, rho) in points {
            let mut row = ImiRhoRow { kind, estimator: spec.label().into(), rho, imi: None, imi_small_t: None, status: Status::Ok };
            if in_regime(&spec, rho, c) {
                let (exact, small) = imi_pair(&spec, rho, c, cm, dm);
                row.imi_small_t = small;
                match exact {
                    Ok(v) => row.imi = Some(v),
                    Err(err) => row.status = status_of(&err),
                }
            } else {
                row.status = Status::OutOfRegime;
            }
            rows.push(row);
        }
    }
    Ok(rows)
}

/// JSON report of a single fit.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub estimator: String,
    #[serde(rename = "N")]
    pub dim: usize,
    pub n: usize,
    pub rho: f64,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub calibration: Option<CalibrationReport>,
}

fn read_dataset(path: &Path) -> Result<Dataset, ExperimentError> {
    let file = std::fs::File::open(path).map_err(|e| ExperimentError::Input(format!("{}: {e}", path.display())))?;
    Dataset::read_csv(std::io::BufReader::new(file)).map_err(|e| ExperimentError::Input(format!("{}: {e}", path.display())))
}

/// Fits the first configured estimator to the samples in `input` (rows are
/// variables, columns samples). `rho = "auto"` selects the data-driven
/// shrinkage for M-estimators. Non-convergence still returns the report, with
/// `converged = false`.
pub fn run_estimate(cfg_raw: &ExperimentConfig, input: &Path, base: &Path) -> Result<(EstimatorResult, EstimateReport), ExperimentError> {
    let y = read_dataset(input)?;
    let mut raw = cfg_raw.clone();
    raw.dim = Some(y.dim());
    raw.n = Some(y.len());
    let cfg = raw.resolve(ExperimentKind::Estimate, base)?;
    let c = y.aspect_ratio();
    let spec = cfg.estimators[0].spec(c)?;
    let report = |fit: &EstimatorResult, rho: f64, calibration: Option<CalibrationReport>| EstimateReport {
        estimator: spec.label().into(),
        dim: y.dim(),
        n: y.len(),
        rho,
        iterations: fit.iterations,
        residual: fit.residual,
        converged: fit.converged,
        calibration,
    };
    let outcome = match (&cfg.rho, &spec) {
        (RhoChoice::Rule(r), EstimatorSpec::M(w)) if r == "auto" => {
            calibration::estimate_rho_hat(&y, w, &cfg.solver).map(|fit| {
                let rho = fit.report.rho_hat.unwrap_or(f64::NAN);
                let rep = report(&fit.estimate, rho, Some(fit.report.clone()));
                (fit.estimate, rep)
            })
        }
        _ => {
            let rho = match &cfg.rho {
                RhoChoice::Value(r) => *r,
                RhoChoice::Rule(r) if r == "optimal" => optimal_rho(&spec, c, &cfg.cov_legit).map_err(solver_error)?,
                RhoChoice::Rule(r) if r == "none" || r == "auto" => 0.0,
                RhoChoice::Rule(r) => return Err(ExperimentError::Config(format!("rho = {r:?}"))),
            };
            spec.fit(&y, rho, &cfg.solver, Start::Options).map(|fit| {
                let rep = report(&fit, rho, None);
                (fit, rep)
            }).map_err(CalibrationError::from)
        }
    };
    match outcome {
        Ok(pair) => Ok(pair),
        Err(CalibrationError::Estimator(EstimatorError::NonConvergence(fit))) => {
            let rep = report(&fit, f64::NAN, None);
            Ok((*fit, rep))
        }
        Err(CalibrationError::Estimator(e @ EstimatorError::Parameter(_)))
        | Err(CalibrationError::Estimator(e @ EstimatorError::PreconditionViolation(_)))
        | Err(CalibrationError::Estimator(e @ EstimatorError::Admissibility(_))) => Err(ExperimentError::Config(e.to_string())),
        Err(e) => Err(solver_error(e)),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationEntry {
    pub estimator: String,
    /// Preimage of the oracle `rho*` for this estimator.
    pub rho_hat_star: Option<f64>,
    /// Data-driven calibration when samples were supplied.
    pub data: Option<CalibrationReport>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationSummary {
    pub c: f64,
    pub oracle: CalibrationReport,
    pub estimators: Vec<CalibrationEntry>,
}

/// Oracle optimum for `cov_legit` and, when `input` is given, the data-driven
/// `rho_hat` of every M-estimator on those samples.
pub fn calibrate(cfg_raw: &ExperimentConfig, input: Option<&Path>, base: &Path) -> Result<CalibrationSummary, ExperimentError> {
    let data = input.map(read_dataset).transpose()?;
    let mut raw = cfg_raw.clone();
    if let Some(y) = &data {
        raw.dim = Some(y.dim());
        raw.n = Some(y.len());
    }
    let cfg = raw.resolve(ExperimentKind::Calibrate, base)?;
    let c = cfg.aspect_ratio();
    let oracle = calibration::oracle_optimum(c, &cfg.cov_legit).map_err(|e| ExperimentError::Config(e.to_string()))?;
    let mut estimators = Vec::new();
    for e in &cfg.estimators {
        let spec = e.spec(c)?;
        let rho_hat_star = optimal_rho(&spec, c, &cfg.cov_legit).ok();
        let data = match (&data, &spec) {
            (Some(y), EstimatorSpec::M(w)) => Some(calibration::estimate_rho_hat(y, w, &cfg.solver).map_err(solver_error)?.report),
            _ => None,
        };
        estimators.push(CalibrationEntry { estimator: spec.label().into(), rho_hat_star, data });
    }
    Ok(CalibrationSummary { c, oracle, estimators })
}

/// `<prefix>.<ext>`.
pub fn output_path(prefix: &str, ext: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}.{ext}"))
}

pub fn write_csv_file<R: Record>(prefix: &str, rows: &[R], timestamp: bool) -> Result<PathBuf, ExperimentError> {
    let path = output_path(prefix, "csv");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    write_table(&mut out, rows, timestamp)?;
    out.flush()?;
    Ok(path)
}

pub fn write_matrix_file(prefix: &str, m: &crate::linalg::CMatrix) -> Result<PathBuf, ExperimentError> {
    let path = output_path(prefix, "estimate.csv");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut out = std::io::BufWriter::new(std::fs::File::create(&path)?);
    matrix_io::write_matrix(&mut out, m)?;
    out.flush()?;
    Ok(path)
}

/// A gnuplot script plotting `y_col` against `x_col`, one curve per estimator
/// (and per `split_col` value when given), keeping only `ok` rows.
pub fn gnuplot_script(csv: &Path, title: &str, x_col: &str, y_cols: &[&str], header: &[&str], estimators: &[String], split: Option<(&str, &str)>) -> String {
    let col = |name: &str| header.iter().position(|h| *h == name).map_or(0, |i| i + 1);
    let status = col("status");
    let est = col("estimator");
    let file = csv.file_name().map_or_else(|| csv.display().to_string(), |f| f.to_string_lossy().into_owned());
    let mut s = String::new();
    let _ = writeln!(s, "set datafile separator ','");
    let _ = writeln!(s, "set datafile commentschars '#'");
    let _ = writeln!(s, "set title '{title}'");
    let _ = writeln!(s, "set xlabel '{x_col}'");
    let _ = writeln!(s, "ok(e) = (strcol({status}) eq 'ok' && strcol({est}) eq e)");
    let filter = split.map_or_else(String::new, |(name, value)| format!(" && strcol({}) eq '{value}'", col(name)));
    let mut plots = Vec::new();
    for e in estimators {
        for y in y_cols {
            plots.push(format!(
                "'{file}' skip 1 using {x}:((ok('{e}'){filter}) ? ${yc} : 1/0) with linespoints title '{e} {y}'",
                x = col(x_col),
                yc = col(y)
            ));
        }
    }
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

pub fn write_gnuplot(prefix: &str, script: &str) -> Result<PathBuf, ExperimentError> {
    let path = output_path(prefix, "gp");
    std::fs::write(&path, script)?;
    Ok(path)
}

/// Divides the trial count by 10 (at least one trial when any were asked for).
pub fn quick_trials(trials: usize) -> usize {
    if trials == 0 { 0 } else { (trials / 10).max(1) }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve(text: &str, kind: ExperimentKind) -> Result<Resolved, ExperimentError> {
        ExperimentConfig::from_toml(text)?.resolve(kind, Path::new("."))
    }

    #[test]
    fn defaults_per_experiment() {
        let r = resolve("", ExperimentKind::LossCurve).unwrap();
        assert_eq!((r.dim, r.n, r.trials), (150, 100, 100));
        assert_eq!(r.rho_grid.len(), 10);
        assert_eq!(*r.rho_grid.last().unwrap(), 1.0);
        let r = resolve("", ExperimentKind::MiCurve).unwrap();
        assert_eq!((r.dim, r.n), (50, 200));
        assert_eq!(r.eps_grid[0], 0.0);
    }

    #[test]
    fn unknown_keys_and_bad_grids_are_rejected() {
        let err = resolve("N = 10\nbogus = 1\n", ExperimentKind::LossCurve).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert_eq!(err.exit_code(), 2);
        assert!(resolve("estimators = []", ExperimentKind::LossCurve).unwrap_err().to_string().contains("at least one"));
        assert!(resolve("[grids]\nrho = [0.5, 0.2]", ExperimentKind::LossCurve).unwrap_err().to_string().contains("increasing"));
        assert!(resolve("[grids]\neps = [1.0]", ExperimentKind::MiCurve).is_err());
        assert!(resolve("[[estimators]]\nkind = \"mtyler\"\nK = \"2/c\"", ExperimentKind::LossCurve).is_err());
        assert!(resolve("experiment = \"mi_curve\"", ExperimentKind::LossCurve).is_err());
        assert!(resolve("[grids]\nrho = { start = 0.2, stop = 1.0, count = 5 }", ExperimentKind::LossCurve).is_ok());
    }

    #[test]
    fn scale_rules() {
        assert_eq!(ScaleSpec::Rule("1/c".into()).at(2.0).unwrap(), 0.5);
        assert_eq!(ScaleSpec::Rule("min(1, 1/c)".into()).at(0.5).unwrap(), 1.0);
        assert_eq!(ScaleSpec::Value(0.3).at(9.0).unwrap(), 0.3);
    }

    #[test]
    fn csv_has_status_and_full_precision() {
        let rows = vec![ImiRhoRow { kind: "curve", estimator: "mtyler".into(), rho: 0.1, imi: None, imi_small_t: Some(1.0 / 3.0), status: Status::OutOfRegime }];
        let mut buf = Vec::new();
        write_table(&mut buf, &rows, false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line, "curve,mtyler,1.0000000000000001e-1,,3.3333333333333331e-1,out_of_regime");
        let parsed: f64 = line.split(',').nth(4).unwrap().parse().unwrap();
        assert_eq!(parsed, 1.0 / 3.0);
    }

    #[test]
    fn mi_curve_zero_eps_and_regime_flags() {
        let r = resolve("N = 12\nn = 48\ntrials = 4\n[grids]\neps = [0.0, 0.1]", ExperimentKind::MiCurve).unwrap();
        let rows = run_mi_curve(&r).unwrap();
        for row in rows.iter().filter(|r| r.eps == 0.0) {
            assert_eq!(row.mi_asymptotic, Some(0.0));
            assert_eq!(row.mi_empirical, Some(0.0));
        }
        // K = 1 at c = 2 leaves the non-regularized regime.
        let r = resolve("N = 20\nn = 10\ntrials = 0\n[grids]\neps = [0.1]", ExperimentKind::MiCurve).unwrap();
        let rows = run_mi_curve(&r).unwrap();
        assert!(rows.iter().filter(|r| r.estimator != "scm").all(|r| r.status == Status::OutOfRegime && r.mi_asymptotic.is_none()));
    }

    #[test]
    fn aspect_sweep_flags_non_regularized_points() {
        let r = resolve("N = 30\n[grids]\nc = [0.5, 1.2, 2.0]", ExperimentKind::ImiVsAspect).unwrap();
        let rows = run_imi_vs_aspect(&r).unwrap();
        for row in rows.iter().filter(|r| r.regime == Regime::NonRegularized && r.estimator != "scm") {
            if row.c >= 1.0 {
                assert_eq!(row.status, Status::OutOfRegime);
                assert!(row.imi.is_none());
            } else {
                assert_eq!(row.status, Status::Ok);
            }
        }
        assert!(rows.iter().filter(|r| r.regime == Regime::Regularized).all(|r| r.status == Status::Ok && r.imi.is_some()));
    }

    #[test]
    fn rho_sweep_flags_inadmissible_points() {
        let r = resolve("N = 30\nn = 20\n[grids]\nrho = [0.05, 0.5]", ExperimentKind::ImiVsRho).unwrap();
        let rows = run_imi_vs_rho(&r).unwrap();
        let low: Vec<_> = rows.iter().filter(|r| r.rho == 0.05).collect();
        assert!(low.iter().filter(|r| r.estimator != "rscm").all(|r| r.status == Status::OutOfRegime));
        assert!(rows.iter().any(|r| r.kind == "rho_hat_star"));
    }

    #[test]
    fn loss_curve_small_run_is_deterministic() {
        let text = "N = 12\nn = 8\ntrials = 3\nseed = 4\n[grids]\nrho = [0.3, 0.7, 1.0]";
        let a = run_loss_curve(&resolve(text, ExperimentKind::LossCurve).unwrap()).unwrap();
        let b = run_loss_curve(&resolve(text, ExperimentKind::LossCurve).unwrap()).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().any(|r| r.kind == LossRowKind::LStar));
        assert_eq!(a.iter().filter(|r| r.kind == LossRowKind::RhoHat).count(), 2);
        let at_one: Vec<_> = a.iter().filter(|r| r.rho == 1.0 && r.kind == LossRowKind::Curve).collect();
        let l_identity = calibration::quadratic_loss(&crate::linalg::identity(12), &CovarianceModel::toeplitz(12, 0.9).unwrap()).unwrap();
        assert!(at_one.iter().all(|r| (r.mean_loss - l_identity).abs() < 1e-12));
    }
}
