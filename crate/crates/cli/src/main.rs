use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chn_cli::{
    load_config, render_csv, run_compare, run_eval, run_sweep, write_output, CliError, Engine, Grid, Metric,
    Settings, SweepSpec, SweepVariable,
};
use chn_core::mc;
use chn_core::model::{ConfigError, NetworkConfig};
use chn_core::quadrature::Tolerance;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "chn", version, about = "Coverage and local delay of cache-aided K-tier networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate one file at one threshold.
    Eval(EvalArgs),
    /// Sweep threshold, density ratio or a tier's activity; writes CSV.
    Sweep(SweepArgs),
    /// Run the Monte Carlo engine and print the full estimate.
    Simulate(SimulateArgs),
    /// Check the analytic engine against Monte Carlo over a grid.
    Compare(CompareArgs),
    /// Validate a config document.
    Validate {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Analytic,
    Mc,
    Both,
}

impl EngineArg {
    fn engines(self) -> Vec<Engine> {
        match self {
            EngineArg::Analytic => vec![Engine::Analytic],
            EngineArg::Mc => vec![Engine::Mc],
            EngineArg::Both => vec![Engine::Analytic, Engine::Mc],
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Coverage,
    Delay,
    Both,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Simulation window radius; chosen from the sparsest tier by default.
    #[arg(long)]
    window_radius: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    rel_tol: Option<f64>,
    /// Ignore BSs outside the simulation window.
    #[arg(long)]
    no_far_field: bool,
}

impl Common {
    fn settings(&self) -> Settings {
        let d = Tolerance::default();
        let tolerance = Tolerance::new(self.abs_tol.unwrap_or(d.abs), self.rel_tol.unwrap_or(d.rel));
        let mut mc = mc::McOptions::with_samples(self.samples, self.seed);
        mc.window_radius = self.window_radius;
        mc.far_field_correction = !self.no_far_field;
        Settings { tolerance, mc }
    }
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// 1-based file index.
    #[arg(long)]
    file: usize,
    #[arg(long, allow_hyphen_values = true)]
    tau_db: f64,
    #[arg(long, value_enum, default_value_t = EngineArg::Analytic)]
    engine: EngineArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// tau_db, density_ratio or activity:<tier>.
    #[arg(long, default_value = "tau_db")]
    var: String,
    /// Grid as start:stop:step (or a single value).
    #[arg(long, allow_hyphen_values = true)]
    range: Option<String>,
    /// Explicit comma-separated grid values.
    #[arg(long, allow_hyphen_values = true, value_delimiter = ',')]
    values: Option<Vec<f64>>,
    /// Threshold in dB: the grid when sweeping tau_db, otherwise fixed.
    #[arg(long, allow_hyphen_values = true)]
    tau_db: Option<String>,
    /// 1-based file indices; all files by default.
    #[arg(long, value_delimiter = ',')]
    files: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = EngineArg::Analytic)]
    engine: EngineArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    file: usize,
    #[arg(long, allow_hyphen_values = true)]
    tau_db: f64,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    files: Option<Vec<usize>>,
    /// Threshold grid in dB (start:stop:step or a single value).
    #[arg(long, allow_hyphen_values = true)]
    tau_db: String,
    #[arg(long, value_enum, default_value_t = MetricArg::Both)]
    metric: MetricArg,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn file_index(one_based: usize) -> Result<usize, CliError> {
    one_based
        .checked_sub(1)
        .ok_or_else(|| CliError::Usage("file indices start at 1".into()))
}

fn file_list(config: &NetworkConfig, files: &Option<Vec<usize>>) -> Result<Vec<usize>, CliError> {
    match files {
        Some(v) => v.iter().map(|&f| file_index(f)).collect(),
        None => Ok((0..config.num_files()).collect()),
    }
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let config = load_config(&a.common.config)?;
    let rows = run_eval(&config, file_index(a.file)?, a.tau_db, &a.engine.engines(), &a.common.settings())?;
    write_output(a.out.as_deref(), &render_csv(&rows))
}

fn sweep(a: SweepArgs) -> Result<(), CliError> {
    let config = load_config(&a.common.config)?;
    let variable = SweepVariable::parse(&a.var)?;
    let grid_arg = if variable == SweepVariable::TauDb { a.range.as_ref().or(a.tau_db.as_ref()) } else { a.range.as_ref() };
    let values = match (&a.values, grid_arg) {
        (Some(v), None) => v.clone(),
        (None, Some(r)) => Grid::parse(r)?.points(),
        _ => return Err(CliError::Usage("give exactly one of --range/--tau-db grid or --values".into())),
    };
    let tau_db = match (variable, &a.tau_db) {
        (SweepVariable::TauDb, _) => 0.0,
        (_, Some(t)) => t.parse().map_err(|_| CliError::Usage(format!("cannot parse tau '{t}'")))?,
        (_, None) => return Err(CliError::Usage("--tau-db is required unless sweeping tau_db".into())),
    };
    let spec = SweepSpec { variable, values, files: file_list(&config, &a.files)?, engines: a.engine.engines(), tau_db };
    let rows = run_sweep(&config, &spec, &a.common.settings())?;
    write_output(a.out.as_deref(), &render_csv(&rows))
}

fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let config = load_config(&a.common.config)?;
    let file = file_index(a.file)?;
    chn_cli::check_file(&config, file)?;
    let s = mc::simulate(&config, file, chn_cli::db_to_linear(a.tau_db), &a.common.settings().mc)?;
    println!("window_radius: {}", s.window_radius);
    println!("seed: {}", s.seed);
    println!("rng: {}", s.rng_algorithm);
    for (name, e) in [("coverage", s.coverage), ("delay", s.delay)] {
        println!(
            "{name}: mean {} std_error {} ci95 [{}, {}] used {} discarded {} heavy_tail {}",
            e.mean, e.std_error, e.ci95_lo, e.ci95_hi, e.samples_used, e.samples_discarded, e.heavy_tail_flag
        );
    }
    Ok(())
}

fn compare(a: CompareArgs) -> Result<(), CliError> {
    let config = load_config(&a.common.config)?;
    let files = file_list(&config, &a.files)?;
    let taus = Grid::parse(&a.tau_db)?.points();
    let metrics = match a.metric {
        MetricArg::Coverage => vec![Metric::Coverage],
        MetricArg::Delay => vec![Metric::Delay],
        MetricArg::Both => vec![Metric::Coverage, Metric::Delay],
    };
    let report = run_compare(&config, &files, &taus, &metrics, &a.common.settings())?;
    write_output(a.out.as_deref(), &report.render())?;
    if report.succeeded() {
        Ok(())
    } else {
        Err(CliError::ComparisonFailed { pass_fraction: report.pass_fraction() })
    }
}

fn validate(config: &Path) -> Result<(), CliError> {
    let c = load_config(config)?;
    println!("valid: {} tiers, {} files", c.num_tiers(), c.num_files());
    Ok(())
}

fn report(e: &CliError) {
    match e {
        CliError::Config(ConfigError::Invalid(v)) | CliError::Invalid(v) => {
            eprintln!("error: config invalid ({} violations)", v.violations.len());
            for violation in &v.violations {
                eprintln!("  - {violation}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => sweep(a),
        Command::Simulate(a) => simulate(a),
        Command::Compare(a) => compare(a),
        Command::Validate { config } => validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
