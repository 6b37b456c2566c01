//! Batch front-end: evaluations, parameter sweeps, cross-engine comparison
//! and CSV output. Thresholds arrive in dB and files are 1-based here; both
//! are converted once before reaching the core.

use std::fmt::{self, Write as _};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use chn_core::analytic::{Analyzer, AnalyticError, DelayValue};
use chn_core::mc::{self, McError, McEstimate, McOptions};
use chn_core::model::{ConfigError, ModelError, NetworkConfig, ValidationError};
use chn_core::quadrature::Tolerance;
use rayon::prelude::*;

pub const CSV_HEADER: &str = "sweep_var,sweep_value,file,engine,coverage,coverage_err,delay,delay_err,samples,seed";

/// Pass threshold on |z| for a cross-engine cell.
pub const COMPARE_Z_LIMIT: f64 = 3.0;
/// Minimum pass fraction for a comparison to succeed.
pub const COMPARE_MIN_PASS_FRACTION: f64 = 0.95;

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Debug)]
pub enum CliError {
    Io(io::Error),
    Config(ConfigError),
    Invalid(ValidationError),
    FileUncached { file: usize },
    FileOutOfRange { file: usize, num_files: usize },
    Numerical(String),
    Usage(String),
    ComparisonFailed { pass_fraction: f64 },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) | CliError::Usage(_) => 1,
            CliError::Config(_) | CliError::Invalid(_) => 2,
            CliError::FileUncached { .. } | CliError::FileOutOfRange { .. } => 3,
            CliError::Numerical(_) => 4,
            CliError::ComparisonFailed { .. } => 5,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Config(e) => write!(f, "config invalid: {e}"),
            CliError::Invalid(e) => write!(f, "config invalid: {e}"),
            CliError::FileUncached { file } => write!(f, "file {} is not cached in any tier", file + 1),
            CliError::FileOutOfRange { file, num_files } => {
                write!(f, "file {} out of range (M = {num_files})", file + 1)
            }
            CliError::Numerical(msg) => write!(f, "numerical failure: {msg}"),
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::ComparisonFailed { pass_fraction } => {
                write!(f, "comparison failed: pass fraction {pass_fraction:.4} < {COMPARE_MIN_PASS_FRACTION}")
            }
        }
    }
}

impl std::error::Error for CliError {}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<ValidationError> for CliError {
    fn from(e: ValidationError) -> Self {
        CliError::Invalid(e)
    }
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::FileOutOfRange { index, count } => CliError::FileOutOfRange { file: index, num_files: count },
        other => CliError::Usage(other.to_string()),
    }
}

impl From<AnalyticError> for CliError {
    fn from(e: AnalyticError) -> Self {
        match e {
            AnalyticError::Model(m) => model_error(m),
            AnalyticError::FileUncached { file } => CliError::FileUncached { file },
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<McError> for CliError {
    fn from(e: McError) -> Self {
        match e {
            McError::Model(m) => model_error(m),
            McError::FileUncached { file } => CliError::FileUncached { file },
            other => CliError::Numerical(other.to_string()),
        }
    }
}

pub fn load_config(path: &Path) -> Result<NetworkConfig, CliError> {
    let text = fs::read_to_string(path)?;
    Ok(NetworkConfig::from_json_str(&text)?)
}

/// Checks a 0-based file index against the config before any work starts.
pub fn check_file(config: &NetworkConfig, file: usize) -> Result<(), CliError> {
    config.check_file(file).map_err(model_error)?;
    if !config.is_cached(file).map_err(model_error)? {
        return Err(CliError::FileUncached { file });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Engine {
    Analytic,
    Mc,
}

impl Engine {
    pub fn name(self) -> &'static str {
        match self {
            Engine::Analytic => "analytic",
            Engine::Mc => "mc",
        }
    }
}

/// Inclusive grid `start + i*step` for `i = 0..=n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub start: f64,
    pub stop: f64,
    pub step: f64,
}

impl Grid {
    pub fn new(start: f64, stop: f64, step: f64) -> Result<Self, CliError> {
        if !(start.is_finite() && stop.is_finite() && step.is_finite()) {
            return Err(CliError::Usage("grid bounds must be finite".into()));
        }
        if step <= 0.0 {
            return Err(CliError::Usage(format!("grid step must be positive, got {step}")));
        }
        if start > stop {
            return Err(CliError::Usage(format!("grid start {start} exceeds stop {stop}")));
        }
        Ok(Self { start, stop, step })
    }

    /// A single point, or `start:stop:step`.
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("cannot parse '{t}' as a number")))
        };
        match parts.as_slice() {
            [x] => {
                let x = num(x)?;
                Self::new(x, x, 1.0)
            }
            [a, b, c] => Self::new(num(a)?, num(b)?, num(c)?),
            _ => Err(CliError::Usage(format!("expected <x> or <start:stop:step>, got '{s}'"))),
        }
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.stop - self.start) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.start + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepVariable {
    TauDb,
    DensityRatio,
    /// 0-based tier index.
    Activity(usize),
}

impl SweepVariable {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "tau_db" => Ok(SweepVariable::TauDb),
            "density_ratio" => Ok(SweepVariable::DensityRatio),
            _ => {
                let tier = s
                    .strip_prefix("activity:")
                    .and_then(|t| t.parse::<usize>().ok())
                    .filter(|&t| t >= 1)
                    .ok_or_else(|| {
                        CliError::Usage(format!(
                            "unknown sweep variable '{s}' (tau_db, density_ratio or activity:<tier>)"
                        ))
                    })?;
                Ok(SweepVariable::Activity(tier - 1))
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            SweepVariable::TauDb => "tau_db".into(),
            SweepVariable::DensityRatio => "density_ratio".into(),
            SweepVariable::Activity(t) => format!("activity_{}", t + 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    /// 0-based file indices.
    pub files: Vec<usize>,
    pub engines: Vec<Engine>,
    /// Threshold used when the swept variable is not `tau_db`.
    pub tau_db: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.values.is_empty() {
            return Err(CliError::Usage("sweep has no grid points".into()));
        }
        if self.files.is_empty() {
            return Err(CliError::Usage("sweep needs at least one file".into()));
        }
        if self.engines.is_empty() {
            return Err(CliError::Usage("sweep needs at least one engine".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settings {
    pub tolerance: Tolerance,
    pub mc: McOptions,
}

impl Default for Settings {
    fn default() -> Self {
        Self { tolerance: Tolerance::default(), mc: McOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub sweep_var: String,
    pub sweep_value: f64,
    /// 0-based; written 1-based.
    pub file: usize,
    pub engine: Engine,
    pub coverage: f64,
    /// Quadrature error estimate (analytic) or standard error (MC).
    pub coverage_err: f64,
    pub delay: DelayValue,
    pub delay_err: f64,
    pub samples: Option<usize>,
    pub seed: Option<u64>,
    pub heavy_tail_flag: bool,
}

fn fmt_num(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".into()
    } else if v != 0.0 && (v.abs() < 1e-4 || v.abs() >= 1e15) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        let (delay, delay_err) = match self.delay {
            DelayValue::Finite(d) => (fmt_num(d), fmt_num(self.delay_err)),
            DelayValue::Infinite => ("inf".to_string(), String::new()),
        };
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.sweep_var,
            fmt_num(self.sweep_value),
            self.file + 1,
            self.engine.name(),
            fmt_num(self.coverage),
            fmt_num(self.coverage_err),
            delay,
            delay_err,
            self.samples.map(|s| s.to_string()).unwrap_or_default(),
            self.seed.map(|s| s.to_string()).unwrap_or_default(),
        )
    }
}

pub fn render_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

/// Writes `contents` to `path`, or to standard output when `path` is
/// `None`. A partially written file is removed.
pub fn write_output(path: Option<&Path>, contents: &str) -> Result<(), CliError> {
    match path {
        None => {
            let mut out = io::stdout().lock();
            out.write_all(contents.as_bytes())?;
            out.flush()?;
        }
        Some(p) => {
            if let Err(e) = fs::write(p, contents) {
                let _ = fs::remove_file(p);
                return Err(e.into());
            }
        }
    }
    Ok(())
}

fn evaluate(
    config: &NetworkConfig,
    file: usize,
    tau_db: f64,
    engine: Engine,
    settings: &Settings,
    sweep_var: &str,
    sweep_value: f64,
) -> Result<ResultRow, CliError> {
    let tau = db_to_linear(tau_db);
    let base = ResultRow {
        sweep_var: sweep_var.to_string(),
        sweep_value,
        file,
        engine,
        coverage: 0.0,
        coverage_err: 0.0,
        delay: DelayValue::Infinite,
        delay_err: 0.0,
        samples: None,
        seed: None,
        heavy_tail_flag: false,
    };
    match engine {
        Engine::Analytic => {
            let analyzer = Analyzer::new(config).with_tolerance(settings.tolerance);
            let cov = analyzer.coverage(file, tau)?;
            let del = analyzer.delay(file, tau)?;
            Ok(ResultRow {
                coverage: cov.total,
                coverage_err: cov.abs_error_estimate,
                delay: del.total,
                delay_err: del.abs_error_estimate,
                ..base
            })
        }
        Engine::Mc => {
            let s = mc::simulate(config, file, tau, &settings.mc)?;
            let delay = if s.delay.mean.is_finite() {
                DelayValue::Finite(s.delay.mean)
            } else {
                DelayValue::Infinite
            };
            Ok(ResultRow {
                coverage: s.coverage.mean,
                coverage_err: s.coverage.std_error,
                delay,
                delay_err: s.delay.std_error,
                samples: Some(settings.mc.num_samples),
                seed: Some(settings.mc.seed),
                heavy_tail_flag: s.delay.heavy_tail_flag,
                ..base
            })
        }
    }
}

/// One row per engine for a single file and threshold.
pub fn run_eval(
    config: &NetworkConfig,
    file: usize,
    tau_db: f64,
    engines: &[Engine],
    settings: &Settings,
) -> Result<Vec<ResultRow>, CliError> {
    check_file(config, file)?;
    engines
        .iter()
        .map(|&e| evaluate(config, file, tau_db, e, settings, "tau_db", tau_db))
        .collect()
}

fn config_at(config: &NetworkConfig, variable: SweepVariable, value: f64) -> Result<NetworkConfig, CliError> {
    match variable {
        SweepVariable::TauDb => Ok(config.clone()),
        SweepVariable::DensityRatio => {
            if config.num_tiers() < 2 {
                return Err(CliError::Usage("density_ratio sweeps need at least two tiers".into()));
            }
            let base = config.tiers()[0].density;
            Ok(config.with_density(1, value * base)?)
        }
        SweepVariable::Activity(t) => {
            if t >= config.num_tiers() {
                return Err(CliError::Usage(format!(
                    "activity tier {} out of range (K = {})",
                    t + 1,
                    config.num_tiers()
                )));
            }
            Ok(config.with_activity(t, value)?)
        }
    }
}

/// Evaluates every (grid point, file, engine) cell. Rows come back
/// grid-major, then file, then engine.
pub fn run_sweep(config: &NetworkConfig, spec: &SweepSpec, settings: &Settings) -> Result<Vec<ResultRow>, CliError> {
    spec.validate()?;
    for &f in &spec.files {
        check_file(config, f)?;
    }
    let label = spec.variable.label();
    let configs: Vec<NetworkConfig> = spec
        .values
        .iter()
        .map(|&v| config_at(config, spec.variable, v))
        .collect::<Result<_, _>>()?;
    let cells: Vec<(usize, usize, Engine)> = (0..spec.values.len())
        .flat_map(|g| spec.files.iter().flat_map(move |&f| spec.engines.iter().map(move |&e| (g, f, e))))
        .collect();
    cells
        .par_iter()
        .map(|&(g, file, engine)| {
            let value = spec.values[g];
            let tau_db = if spec.variable == SweepVariable::TauDb { value } else { spec.tau_db };
            evaluate(&configs[g], file, tau_db, engine, settings, &label, value)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Coverage,
    Delay,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Coverage => "coverage",
            Metric::Delay => "delay",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum CellStatus {
    Pass,
    /// Analytic value infinite and the MC samples flagged a heavy tail.
    PassDivergenceConsistent,
    Fail,
    Error(String),
}

impl CellStatus {
    pub fn passed(&self) -> bool {
        matches!(self, CellStatus::Pass | CellStatus::PassDivergenceConsistent)
    }

    pub fn label(&self) -> String {
        match self {
            CellStatus::Pass => "PASS".into(),
            CellStatus::PassDivergenceConsistent => "PASS(divergence-consistent)".into(),
            CellStatus::Fail => "FAIL".into(),
            CellStatus::Error(e) => format!("FAIL({e})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareCell {
    pub metric: Metric,
    pub file: usize,
    pub tau_db: f64,
    pub analytic: f64,
    pub estimate: Option<McEstimate>,
    pub z: f64,
    pub status: CellStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub cells: Vec<CompareCell>,
}

impl ComparisonReport {
    pub fn pass_fraction(&self) -> f64 {
        if self.cells.is_empty() {
            return 0.0;
        }
        self.cells.iter().filter(|c| c.status.passed()).count() as f64 / self.cells.len() as f64
    }

    pub fn succeeded(&self) -> bool {
        self.pass_fraction() >= COMPARE_MIN_PASS_FRACTION
    }

    pub fn render(&self) -> String {
        let mut out = String::from("metric,file,tau_db,analytic,mc_mean,mc_std_error,ci95_lo,ci95_hi,z,heavy_tail,status\n");
        for c in &self.cells {
            let (mean, se, lo, hi, tail) = match &c.estimate {
                Some(e) => (
                    fmt_num(e.mean),
                    fmt_num(e.std_error),
                    fmt_num(e.ci95_lo),
                    fmt_num(e.ci95_hi),
                    e.heavy_tail_flag.to_string(),
                ),
                None => Default::default(),
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{}",
                c.metric.name(),
                c.file + 1,
                fmt_num(c.tau_db),
                fmt_num(c.analytic),
                mean,
                se,
                lo,
                hi,
                if c.z.is_nan() { String::new() } else { format!("{:.3}", c.z) },
                tail,
                c.status.label()
            );
        }
        let passed = self.cells.iter().filter(|c| c.status.passed()).count();
        let _ = writeln!(
            out,
            "summary: {passed}/{} cells passed, pass fraction {:.4}",
            self.cells.len(),
            self.pass_fraction()
        );
        out
    }
}

/// Classifies one cell. A zero standard error passes only on an exact match
/// up to rounding.
pub fn judge(analytic: f64, estimate: &McEstimate) -> (f64, CellStatus) {
    if analytic.is_infinite() {
        let status = if estimate.heavy_tail_flag || estimate.mean.is_infinite() {
            CellStatus::PassDivergenceConsistent
        } else {
            CellStatus::Fail
        };
        return (f64::NAN, status);
    }
    let diff = estimate.mean - analytic;
    let z = if estimate.std_error > 0.0 {
        diff / estimate.std_error
    } else if diff.abs() <= 1e-12 * analytic.abs().max(1.0) {
        0.0
    } else {
        f64::INFINITY
    };
    let status = if z.abs() <= COMPARE_Z_LIMIT { CellStatus::Pass } else { CellStatus::Fail };
    (z, status)
}

/// Runs both engines over `files x tau_db` for each metric. Errors local to
/// a cell (such as a window too small) are reported in that cell.
pub fn run_compare(
    config: &NetworkConfig,
    files: &[usize],
    tau_db: &[f64],
    metrics: &[Metric],
    settings: &Settings,
) -> Result<ComparisonReport, CliError> {
    if files.is_empty() || tau_db.is_empty() || metrics.is_empty() {
        return Err(CliError::Usage("comparison grid is empty".into()));
    }
    for &f in files {
        check_file(config, f)?;
    }
    let analyzer = Analyzer::new(config).with_tolerance(settings.tolerance);
    let mut cells = Vec::new();
    for &file in files {
        for &t in tau_db {
            let tau = db_to_linear(t);
            let sim = mc::simulate(config, file, tau, &settings.mc);
            for &metric in metrics {
                let analytic = match metric {
                    Metric::Coverage => analyzer.coverage(file, tau)?.total,
                    Metric::Delay => analyzer.delay(file, tau)?.total.value(),
                };
                let cell = match &sim {
                    Ok(s) => {
                        let est = match metric {
                            Metric::Coverage => s.coverage,
                            Metric::Delay => s.delay,
                        };
                        let (z, status) = judge(analytic, &est);
                        CompareCell { metric, file, tau_db: t, analytic, estimate: Some(est), z, status }
                    }
                    Err(e) => CompareCell {
                        metric,
                        file,
                        tau_db: t,
                        analytic,
                        estimate: None,
                        z: f64::NAN,
                        status: CellStatus::Error(e.to_string()),
                    },
                };
                cells.push(cell);
            }
        }
    }
    Ok(ComparisonReport { cells })
}
