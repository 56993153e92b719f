//! The `cdpanel` command line: `test` applies the statistics to a CSV panel,
//! `simulate` runs Monte Carlo experiments.
//!
//! Exit codes: 0 success, 2 input or usage error, 3 numerical degeneracy.

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use crate::cce::{cce_fit, ols_filter_panel, RegressionDesign};
use crate::cd::{compute_statistics, decide, draw_rademacher, CdWResiduals, TestName};
use crate::dgp::{DgpConfig, ErrorDist};
use crate::error::Error;
use crate::factor::fit_pca;
use crate::io::{
    bytes_hash, config_hash, format_table, load_panel_csv, write_records, ExperimentSpec, GridCell, Layout,
    LoadOptions, LoadedPanel, OutputFormat, ResultRecord,
};
use crate::mc::{run_monte_carlo, McOptions};
use crate::panel::{demean_units, PanelMatrix};
use crate::rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cdpanel", version, about = "Cross-sectional dependence tests for panel residuals")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Test a panel stored as CSV for cross-sectional dependence.
    Test(TestArgs),
    /// Run Monte Carlo experiments and report rejection frequencies.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Wide,
    Long,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FilterArg {
    /// Subtract each unit's mean.
    Demean,
    /// Unit-by-unit least squares on the designated regressor and common-factor columns.
    Ols,
    /// Common correlated effects with an intercept plus the common-factor columns.
    Cce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DistArg {
    Gaussian,
    Chi2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CdWArg {
    Unscaled,
    Scaled,
}

impl From<CdWArg> for CdWResiduals {
    fn from(a: CdWArg) -> Self {
        match a {
            CdWArg::Unscaled => CdWResiduals::Unscaled,
            CdWArg::Scaled => CdWResiduals::Scaled,
        }
    }
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
        }
    }
}

#[derive(Debug, Args)]
pub struct TestArgs {
    /// Panel CSV file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value = "wide")]
    pub layout: LayoutArg,
    /// Number of factors: a single value (`2`) or an inclusive range (`1..4` or `1-4`).
    #[arg(long, default_value = "1")]
    pub m: String,
    #[arg(long, value_enum, default_value = "demean")]
    pub filter: FilterArg,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    /// Comma-separated tests (CD, CD_STAR, CD_W, CD_W_PLUS) or `all`.
    #[arg(long, default_value = "all")]
    pub tests: String,
    /// Seed for the Rademacher weights of CD_W.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Format of the result records.
    #[arg(long, value_enum, default_value = "json")]
    pub output: FormatArg,
    /// File for the result records; printed to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Regressor columns of a LONG file (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub x_cols: Vec<String>,
    /// Common-factor columns of a LONG file (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub d_cols: Vec<String>,
    #[arg(long, value_enum, default_value = "unscaled")]
    pub cd_w_residuals: CdWArg,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment specification (JSON or TOML); inline flags are ignored when given.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "T", alias = "t")]
    pub t: Option<usize>,
    #[arg(long)]
    pub m0: Option<usize>,
    /// Comma-separated factor strengths, one per factor.
    #[arg(long, value_delimiter = ',')]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub rho: f64,
    #[arg(long, value_enum, default_value = "gaussian")]
    pub dist: DistArg,
    /// Generate the panel regression design and filter it by CCE.
    #[arg(long)]
    pub regressors: bool,
    /// Factors extracted: a single value or an inclusive range.
    #[arg(long, default_value = "1")]
    pub m: String,
    #[arg(long, default_value_t = 1000)]
    pub reps: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.05)]
    pub level: f64,
    #[arg(long, default_value = "all")]
    pub tests: String,
    #[arg(long, value_enum, default_value = "json")]
    pub output: FormatArg,
    /// File for the result records; printed to standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (defaults to CDPANEL_THREADS, then all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        Self { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_numerical() { EXIT_NUMERICAL } else { EXIT_INPUT };
        Self { code, message: e.to_string() }
    }
}

/// Parses `3`, `1..4`, `1..=4` or `1-4` into an inclusive list.
pub fn parse_m_range(s: &str) -> Result<Vec<usize>, String> {
    let s = s.trim();
    let num = |p: &str| p.trim().parse::<usize>().map_err(|_| format!("invalid number of factors '{s}'"));
    let (lo, hi) = if let Some((a, b)) = s.split_once("..") {
        (num(a)?, num(b.trim_start_matches('='))?)
    } else if let Some((a, b)) = s.split_once('-') {
        (num(a)?, num(b)?)
    } else {
        let m = num(s)?;
        (m, m)
    };
    if lo == 0 || hi < lo {
        return Err(format!("invalid factor range '{s}'"));
    }
    Ok((lo..=hi).collect())
}

pub fn parse_tests(s: &str) -> Result<Vec<TestName>, String> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(TestName::ALL.to_vec());
    }
    let mut out = Vec::new();
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let t = TestName::parse(part).ok_or_else(|| format!("unknown test '{}'", part.trim()))?;
        if !out.contains(&t) {
            out.push(t);
        }
    }
    if out.is_empty() {
        return Err("no tests selected".into());
    }
    Ok(out)
}

fn check_level(level: f64) -> Result<(), CliError> {
    if level > 0.0 && level < 1.0 {
        Ok(())
    } else {
        Err(CliError::input(format!("--level must lie in (0, 1), got {level}")))
    }
}

fn emit(records: &[ResultRecord], format: OutputFormat, out: Option<&PathBuf>) -> Result<(), CliError> {
    let table = format_table(records);
    match out {
        Some(path) => {
            let file = std::fs::File::create(path)
                .map_err(|e| CliError::input(format!("cannot write {}: {e}", path.display())))?;
            let mut w = std::io::BufWriter::new(file);
            write_records(records, format, &mut w)?;
            w.flush().map_err(|e| CliError::input(e.to_string()))?;
            print!("{table}");
        }
        None => {
            eprint!("{table}");
            let stdout = std::io::stdout();
            write_records(records, format, stdout.lock())?;
        }
    }
    Ok(())
}

fn filter_panel(data: &LoadedPanel, filter: FilterArg) -> Result<PanelMatrix<f64>, CliError> {
    let t = data.panel.t();
    match filter {
        FilterArg::Demean => Ok(demean_units(&data.panel)),
        FilterArg::Ols => {
            if data.x.is_empty() && data.d.ncols() == 0 {
                return Err(CliError::input("--filter ols needs --x-cols or --d-cols"));
            }
            let kx = data.x.first().map_or(0, |x| x.ncols());
            Ok(ols_filter_panel(&data.panel, |i| {
                let mut z = DMatrix::zeros(t, data.d.ncols() + kx);
                z.columns_mut(0, data.d.ncols()).copy_from(&data.d);
                if kx > 0 {
                    z.columns_mut(data.d.ncols(), kx).copy_from(&data.x[i]);
                }
                z
            })?)
        }
        FilterArg::Cce => {
            if data.x.is_empty() {
                return Err(CliError::input("--filter cce needs regressor columns (--x-cols)"));
            }
            let mut d = DMatrix::from_element(t, data.d.ncols() + 1, 1.0);
            d.columns_mut(1, data.d.ncols()).copy_from(&data.d);
            let design = RegressionDesign::from_panel(&data.panel, data.x.clone(), d)?;
            Ok(cce_fit(&design)?.vhat)
        }
    }
}

fn filter_name(f: FilterArg) -> &'static str {
    match f {
        FilterArg::Demean => "demean",
        FilterArg::Ols => "ols",
        FilterArg::Cce => "cce",
    }
}

/// Runs `cdpanel test`; returns the exit code.
pub fn cmd_test(args: &TestArgs) -> i32 {
    match run_test(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn run_test(args: &TestArgs) -> Result<i32, CliError> {
    check_level(args.level)?;
    let ms = parse_m_range(&args.m).map_err(CliError::input)?;
    let tests = parse_tests(&args.tests).map_err(CliError::input)?;
    let layout = match args.layout {
        LayoutArg::Wide => Layout::Wide,
        LayoutArg::Long => Layout::Long,
    };
    let options = LoadOptions { layout, x_columns: args.x_cols.clone(), d_columns: args.d_cols.clone() };
    let data = load_panel_csv(&args.input, &options)?;
    let filtered = filter_panel(&data, args.filter)?;
    let (n, t) = (filtered.n(), filtered.t());

    let input_bytes = std::fs::read(&args.input).map_err(|e| CliError::input(e.to_string()))?;
    let hash = config_hash(&(
        bytes_hash(&input_bytes),
        filter_name(args.filter),
        &args.x_cols,
        &args.d_cols,
        args.level,
        args.seed,
    ));
    let weights = draw_rademacher(n, &mut rng::stream(args.seed, 0));

    let mut records = Vec::new();
    let mut degenerate = false;
    for &m in &ms {
        let fit = fit_pca(&filtered, m).map_err(|e| with_context(e, m))?;
        let stats = compute_statistics(&fit, &weights, args.cd_w_residuals.into()).map_err(|e| with_context(e, m))?;
        for &test in &tests {
            let outcome = stats.value(test).map(|v| decide(v, args.level, test)).map_err(|e| (test, e));
            if outcome.is_err() {
                degenerate = true;
            }
            records.push(ResultRecord::from_outcome(
                outcome,
                n,
                t,
                m,
                args.seed,
                args.level,
                filter_name(args.filter),
                &hash,
            ));
        }
    }
    emit(&records, args.output.into(), args.out.as_ref())?;
    Ok(if degenerate { EXIT_NUMERICAL } else { EXIT_OK })
}

fn with_context(e: Error, m: usize) -> CliError {
    let mut c = CliError::from(e);
    c.message = format!("m = {m}: {}", c.message);
    c
}

fn inline_cells(args: &SimulateArgs) -> Result<Vec<GridCell>, CliError> {
    let n = args.n.ok_or_else(|| CliError::input("simulate needs --grid or --n"))?;
    let t = args.t.ok_or_else(|| CliError::input("simulate needs --grid or --T"))?;
    let alphas = if args.alphas.is_empty() {
        vec![1.0; args.m0.unwrap_or(1)]
    } else {
        args.alphas.clone()
    };
    if let Some(m0) = args.m0 {
        if m0 != alphas.len() {
            return Err(CliError::input(format!("--m0 {m0} does not match {} factor strengths", alphas.len())));
        }
    }
    let dist = match args.dist {
        DistArg::Gaussian => ErrorDist::Gaussian,
        DistArg::Chi2 => ErrorDist::Chi2,
    };
    let config = DgpConfig::pure(n, t, &alphas)
        .with_rho(args.rho)
        .with_errors(dist)
        .with_regressors(args.regressors);
    config.validate()?;
    let ms = parse_m_range(&args.m).map_err(CliError::input)?;
    Ok(ms.into_iter().map(|m_used| GridCell { config: config.clone(), m_used }).collect())
}

/// Runs `cdpanel simulate`; returns the exit code.
pub fn cmd_simulate(args: &SimulateArgs) -> i32 {
    match run_simulate(args) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

fn run_simulate(args: &SimulateArgs) -> Result<i32, CliError> {
    let (cells, reps, seed, level, tests, out) = match &args.grid {
        Some(path) => {
            let spec = ExperimentSpec::load(path).map_err(|e| CliError::input(e.to_string()))?;
            let cells = spec.cells().map_err(|e| CliError::input(e.to_string()))?;
            let out = args.out.clone().or_else(|| spec.output.as_ref().map(PathBuf::from));
            (cells, spec.replications, spec.master_seed, spec.level, spec.tests(), out)
        }
        None => {
            let tests = parse_tests(&args.tests).map_err(CliError::input)?;
            (inline_cells(args)?, args.reps, args.seed, args.level, tests, args.out.clone())
        }
    };
    check_level(level)?;
    if reps == 0 {
        return Err(CliError::input("--reps must be positive"));
    }
    let options = McOptions { threads: args.threads, ..Default::default() };

    let mut records = Vec::new();
    for (k, cell) in cells.iter().enumerate() {
        let c = &cell.config;
        eprintln!(
            "[{}/{}] n={} T={} alphas={:?} rho={} dist={:?} regressors={} m={} reps={reps}",
            k + 1,
            cells.len(),
            c.n,
            c.t,
            c.alphas,
            c.rho_spatial,
            c.error_dist,
            c.include_regressors,
            cell.m_used
        );
        let result = run_monte_carlo(c, cell.m_used, reps, seed, level, options).map_err(|e| {
            let mut err = CliError::from(e);
            err.message = format!("cell {}: {}", k + 1, err.message);
            err
        })?;
        records.extend(ResultRecord::from_mc(&result, &tests));
    }
    emit(&records, args.output.into(), out.as_ref())?;
    Ok(EXIT_OK)
}

/// Parses arguments and dispatches; returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a),
    }
}
