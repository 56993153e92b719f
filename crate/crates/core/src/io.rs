//! CSV panel ingestion, experiment specifications and result records.
//!
//! WIDE files have a header row `unit,<period labels...>` and one row per unit.
//! LONG files have `unit,time,value` as their first three columns followed by
//! optional named regressor (`x`) and common-factor (`d`) columns.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cd::{TestName, TestOutcome};
use crate::dgp::{ArParams, BetaParams, DgpConfig, ErrorDist, LoadingParams, SigmaParams};
use crate::error::{Error, Result};
use crate::mc::McResult;
use crate::panel::PanelMatrix;

/// Version string stamped on every result record.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Significant digits used for reals in result files.
pub const SIGNIFICANT_DIGITS: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Layout {
    #[default]
    Wide,
    Long,
}

impl Layout {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "wide" => Some(Layout::Wide),
            "long" => Some(Layout::Long),
            _ => None,
        }
    }
}

/// Column designations for LONG files.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoadOptions {
    pub layout: Layout,
    pub x_columns: Vec<String>,
    pub d_columns: Vec<String>,
}

/// A balanced panel with its labels and optional covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPanel {
    pub panel: PanelMatrix<f64>,
    pub unit_labels: Vec<String>,
    pub time_labels: Vec<String>,
    /// One `T × k_x` matrix per unit; empty when no regressor columns were named.
    pub x: Vec<DMatrix<f64>>,
    /// `T × k_d` common factors; zero columns when none were named.
    pub d: DMatrix<f64>,
}

pub fn load_panel_csv(path: &Path, options: &LoadOptions) -> Result<LoadedPanel> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    read_panel_csv(file, options)
}

pub fn read_panel_csv<R: Read>(reader: R, options: &LoadOptions) -> Result<LoadedPanel> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    match options.layout {
        Layout::Wide => {
            if !options.x_columns.is_empty() || !options.d_columns.is_empty() {
                return Err(Error::InvalidConfig("regressor columns require the LONG layout".into()));
            }
            read_wide(&mut rdr)
        }
        Layout::Long => read_long(&mut rdr, options),
    }
}

fn parse_value(field: &str, line: u64, column: &str) -> Result<f64> {
    field
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse(format!("line {line}, column {column}: '{field}' is not a finite number")))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn read_wide<R: Read>(rdr: &mut csv::Reader<R>) -> Result<LoadedPanel> {
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() < 2 {
        return Err(Error::Parse("WIDE header needs a unit column and period labels".into()));
    }
    let time_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut unit_labels = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = record_line(&rec);
        if rec.len() != header.len() {
            return Err(Error::UnbalancedPanel(format!(
                "line {line} has {} fields, header has {}",
                rec.len(),
                header.len()
            )));
        }
        let unit = rec[0].to_string();
        if !seen.insert(unit.clone()) {
            return Err(Error::DuplicateCell(format!("unit '{unit}' appears twice")));
        }
        for (k, field) in rec.iter().enumerate().skip(1) {
            values.push(parse_value(field, line, &header[k])?);
        }
        unit_labels.push(unit);
    }
    let t = time_labels.len();
    let n = unit_labels.len();
    let panel = PanelMatrix::from_unit_major(n, t, &values)?;
    Ok(LoadedPanel { panel, unit_labels, time_labels, x: Vec::new(), d: DMatrix::zeros(t, 0) })
}

/// Sorts labels numerically when all of them are numbers, lexicographically otherwise.
fn sort_labels(labels: &mut [String]) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
    if numeric.is_some() {
        labels.sort_by(|a, b| {
            let (x, y) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        });
    } else {
        labels.sort();
    }
}

fn column_index(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::InvalidConfig(format!("column '{name}' not found in header")))
}

fn read_long<R: Read>(rdr: &mut csv::Reader<R>, options: &LoadOptions) -> Result<LoadedPanel> {
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.len() < 3 {
        return Err(Error::Parse("LONG header needs unit, time and value columns".into()));
    }
    let x_idx: Vec<usize> = options.x_columns.iter().map(|c| column_index(&header, c)).collect::<Result<_>>()?;
    let d_idx: Vec<usize> = options.d_columns.iter().map(|c| column_index(&header, c)).collect::<Result<_>>()?;

    // (unit, time) -> (value, x values, d values)
    type Cell = (f64, Vec<f64>, Vec<f64>);
    let mut cells: HashMap<(String, String), Cell> = HashMap::new();
    let mut units = Vec::new();
    let mut times = Vec::new();
    let (mut unit_seen, mut time_seen) = (HashSet::new(), HashSet::new());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_error)?;
        let line = record_line(&rec);
        if rec.len() != header.len() {
            return Err(Error::Parse(format!("line {line} has {} fields, header has {}", rec.len(), header.len())));
        }
        let unit = rec[0].to_string();
        let time = rec[1].to_string();
        let value = parse_value(&rec[2], line, &header[2])?;
        let xs = x_idx.iter().map(|&k| parse_value(&rec[k], line, &header[k])).collect::<Result<Vec<_>>>()?;
        let ds = d_idx.iter().map(|&k| parse_value(&rec[k], line, &header[k])).collect::<Result<Vec<_>>>()?;
        if unit_seen.insert(unit.clone()) {
            units.push(unit.clone());
        }
        if time_seen.insert(time.clone()) {
            times.push(time.clone());
        }
        if cells.insert((unit.clone(), time.clone()), (value, xs, ds)).is_some() {
            return Err(Error::DuplicateCell(format!("unit '{unit}', time '{time}' (line {line})")));
        }
    }
    sort_labels(&mut units);
    sort_labels(&mut times);
    let (n, t) = (units.len(), times.len());
    let (kx, kd) = (x_idx.len(), d_idx.len());

    let mut y = DMatrix::zeros(t, n);
    let mut x = vec![DMatrix::zeros(t, kx); n];
    let mut d = DMatrix::zeros(t, kd);
    for (i, unit) in units.iter().enumerate() {
        for (s, time) in times.iter().enumerate() {
            let (value, xs, ds) = cells
                .get(&(unit.clone(), time.clone()))
                .ok_or_else(|| Error::UnbalancedPanel(format!("no observation for unit '{unit}', time '{time}'")))?;
            y[(s, i)] = *value;
            for (k, v) in xs.iter().enumerate() {
                x[i][(s, k)] = *v;
            }
            for (k, v) in ds.iter().enumerate() {
                if i == 0 {
                    d[(s, k)] = *v;
                } else if d[(s, k)] != *v {
                    return Err(Error::InvalidPanel(format!(
                        "common factor column '{}' differs across units at time '{time}' (unit '{unit}')",
                        options.d_columns[k]
                    )));
                }
            }
        }
    }
    let panel = PanelMatrix::from_time_by_unit(y)?;
    if kx == 0 {
        x.clear();
    }
    Ok(LoadedPanel { panel, unit_labels: units, time_labels: times, x, d })
}

/// Writes a panel in the WIDE layout. Values use the shortest exact decimal form.
pub fn write_wide_csv<W: Write>(
    panel: &PanelMatrix<f64>,
    unit_labels: Option<&[String]>,
    time_labels: Option<&[String]>,
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["unit".to_string()];
    match time_labels {
        Some(l) => header.extend(l.iter().cloned()),
        None => header.extend((1..=panel.t()).map(|s| s.to_string())),
    }
    w.write_record(&header).map_err(csv_error)?;
    for i in 0..panel.n() {
        let label = unit_labels.map_or_else(|| (i + 1).to_string(), |l| l[i].clone());
        let mut row = vec![label];
        row.extend(panel.unit(i).iter().map(|v| v.to_string()));
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Rounds to [`SIGNIFICANT_DIGITS`] significant digits; the result prints exactly.
pub fn round_sig(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{:.*e}", SIGNIFICANT_DIGITS - 1, x).parse().unwrap_or(x)
}

/// Accepts either a single value or a list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    pub fn to_vec(&self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

fn default_level() -> f64 {
    0.05
}

fn default_rho() -> OneOrMany<f64> {
    OneOrMany::One(0.0)
}

fn default_dist() -> OneOrMany<ErrorDist> {
    OneOrMany::One(ErrorDist::Gaussian)
}

fn default_regressors() -> OneOrMany<bool> {
    OneOrMany::One(false)
}

/// A grid of experiment cells; list-valued fields are crossed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub n: OneOrMany<usize>,
    #[serde(rename = "T", alias = "t")]
    pub t: OneOrMany<usize>,
    /// Factor strengths; the number of entries sets `m0`.
    pub alphas: OneOrMany<Vec<f64>>,
    #[serde(default = "default_rho")]
    pub rho: OneOrMany<f64>,
    #[serde(default = "default_dist")]
    pub error_dist: OneOrMany<ErrorDist>,
    #[serde(default = "default_regressors")]
    pub include_regressors: OneOrMany<bool>,
    pub m_used: OneOrMany<usize>,
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default = "default_level")]
    pub level: f64,
    /// Tests to report; all when absent.
    #[serde(default)]
    pub tests: Option<Vec<TestName>>,
    #[serde(default)]
    pub output: Option<String>,
    #[serde(default)]
    pub loading_params: LoadingParams,
    #[serde(default)]
    pub sigma_params: SigmaParams,
    #[serde(default)]
    pub beta_params: BetaParams,
    #[serde(default)]
    pub ar_params: ArParams,
}

/// One experiment cell of a grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCell {
    pub config: DgpConfig,
    pub m_used: usize,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse(format!("experiment spec: {e}")))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(format!("experiment spec: {e}")))
    }

    /// Reads JSON or TOML, chosen by extension (JSON first when unknown).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml(&text),
            Some("json") => Self::from_json(&text),
            _ => Self::from_json(&text).or_else(|_| Self::from_toml(&text)),
        }
    }

    pub fn tests(&self) -> Vec<TestName> {
        self.tests.clone().unwrap_or_else(|| TestName::ALL.to_vec())
    }

    /// Expands the grid in the order n, T, alphas, rho, error_dist, regressors, m_used.
    pub fn cells(&self) -> Result<Vec<GridCell>> {
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be positive".into()));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidConfig(format!("level must lie in (0, 1), got {}", self.level)));
        }
        let mut out = Vec::new();
        for n in self.n.to_vec() {
            for t in self.t.to_vec() {
                for alphas in self.alphas.to_vec() {
                    for rho in self.rho.to_vec() {
                        for dist in self.error_dist.to_vec() {
                            for reg in self.include_regressors.to_vec() {
                                for m in self.m_used.to_vec() {
                                    let config = DgpConfig {
                                        n,
                                        t,
                                        m0: alphas.len(),
                                        alphas: alphas.clone(),
                                        rho_spatial: rho,
                                        error_dist: dist,
                                        include_regressors: reg,
                                        loading_params: self.loading_params.clone(),
                                        sigma_params: self.sigma_params.clone(),
                                        beta_params: self.beta_params.clone(),
                                        ar_params: self.ar_params.clone(),
                                    };
                                    config.validate()?;
                                    if m == 0 {
                                        return Err(Error::InvalidConfig("m_used must be at least 1".into()));
                                    }
                                    out.push(GridCell { config, m_used: m });
                                }
                            }
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(Error::InvalidConfig("experiment grid is empty".into()));
        }
        Ok(out)
    }
}

/// Short SHA-256 digest of a serializable value's canonical JSON.
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("configuration serializes");
    Sha256::digest(&json).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Short SHA-256 digest of raw bytes.
pub fn bytes_hash(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// One output row: a test outcome on data, or one test of one simulated cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub test_name: TestName,
    /// The statistic on data; its Monte Carlo mean for simulated cells.
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub reject: Option<bool>,
    pub n: usize,
    #[serde(rename = "T")]
    pub t: usize,
    pub m_used: usize,
    pub seed: u64,
    pub level: f64,
    pub config_hash: String,
    pub version: String,
    pub filter: Option<String>,
    pub m0: Option<usize>,
    pub alphas: Option<String>,
    pub rho: Option<f64>,
    pub error_dist: Option<ErrorDist>,
    pub include_regressors: Option<bool>,
    pub replications: Option<usize>,
    pub effective_replications: Option<usize>,
    pub rejections: Option<usize>,
    pub rejection_rate: Option<f64>,
    pub sd: Option<f64>,
    pub failures: Option<usize>,
    pub error: Option<String>,
}

fn round_opt(x: Option<f64>) -> Option<f64> {
    x.filter(|v| v.is_finite()).map(round_sig)
}

impl ResultRecord {
    /// Row for a test applied to data.
    #[allow(clippy::too_many_arguments)]
    pub fn from_outcome(
        outcome: std::result::Result<TestOutcome, (TestName, Error)>,
        n: usize,
        t: usize,
        m_used: usize,
        seed: u64,
        level: f64,
        filter: &str,
        config_hash: &str,
    ) -> Self {
        let (test_name, statistic, p_value, reject, error) = match outcome {
            Ok(o) => (o.test, Some(o.statistic), Some(o.p_value), Some(o.reject), None),
            Err((test, e)) => (test, None, None, None, Some(e.to_string())),
        };
        Self {
            test_name,
            statistic: round_opt(statistic),
            p_value: round_opt(p_value),
            reject,
            n,
            t,
            m_used,
            seed,
            level,
            config_hash: config_hash.to_string(),
            version: VERSION.to_string(),
            filter: Some(filter.to_string()),
            m0: None,
            alphas: None,
            rho: None,
            error_dist: None,
            include_regressors: None,
            replications: None,
            effective_replications: None,
            rejections: None,
            rejection_rate: None,
            sd: None,
            failures: None,
            error,
        }
    }

    /// One row per selected test of a Monte Carlo cell.
    pub fn from_mc(result: &McResult, tests: &[TestName]) -> Vec<Self> {
        let cfg = &result.config;
        let hash = config_hash(&(cfg, result.m_used, result.replications, result.master_seed, result.level));
        let alphas = cfg.alphas.iter().map(|a| format!("{}", round_sig(*a))).collect::<Vec<_>>().join(";");
        tests
            .iter()
            .map(|&test| {
                let s = result.summary(test);
                let failures = result.failed_replications
                    + result.test_failures.iter().find(|(t, _)| *t == test).map_or(0, |(_, k)| *k);
                Self {
                    test_name: test,
                    statistic: round_opt(Some(s.mean)),
                    p_value: None,
                    reject: None,
                    n: cfg.n,
                    t: cfg.t,
                    m_used: result.m_used,
                    seed: result.master_seed,
                    level: result.level,
                    config_hash: hash.clone(),
                    version: VERSION.to_string(),
                    filter: Some(if cfg.include_regressors { "cce" } else { "demean" }.to_string()),
                    m0: Some(cfg.m0),
                    alphas: Some(alphas.clone()),
                    rho: Some(cfg.rho_spatial),
                    error_dist: Some(cfg.error_dist),
                    include_regressors: Some(cfg.include_regressors),
                    replications: Some(result.replications),
                    effective_replications: Some(s.replications),
                    rejections: Some(s.rejections),
                    rejection_rate: round_opt(Some(s.rejection_rate)),
                    sd: round_opt(Some(s.sd)),
                    failures: Some(failures),
                    error: None,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputFormat {
    #[default]
    Json,
    Csv,
}

impl OutputFormat {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Some(OutputFormat::Json),
            "csv" => Some(OutputFormat::Csv),
            _ => None,
        }
    }
}

pub fn write_records<W: Write>(records: &[ResultRecord], format: OutputFormat, mut writer: W) -> Result<()> {
    match format {
        OutputFormat::Json => {
            serde_json::to_writer_pretty(&mut writer, records).map_err(|e| Error::Io(e.to_string()))?;
            writeln!(writer)?;
        }
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            for r in records {
                w.serialize(r).map_err(csv_error)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn read_records<R: Read>(format: OutputFormat, reader: R) -> Result<Vec<ResultRecord>> {
    match format {
        OutputFormat::Json => serde_json::from_reader(reader).map_err(|e| Error::Parse(e.to_string())),
        OutputFormat::Csv => csv::Reader::from_reader(reader)
            .deserialize()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(csv_error),
    }
}

/// Human-readable table of records.
pub fn format_table(records: &[ResultRecord]) -> String {
    let mut out = String::new();
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    for r in records {
        let verdict = match (r.reject, r.rejection_rate) {
            (Some(true), _) => "reject".to_string(),
            (Some(false), _) => "accept".to_string(),
            (None, Some(rate)) => format!("rate {:.1}%", 100.0 * rate),
            _ => r.error.clone().unwrap_or_default(),
        };
        out.push_str(&format!(
            "n={:<5} T={:<5} m={:<3} {:<10} stat={:<12} p={:<10} {}\n",
            r.n,
            r.t,
            r.m_used,
            r.test_name.as_str(),
            fmt(r.statistic),
            fmt(r.p_value),
            verdict
        ));
    }
    out
}
