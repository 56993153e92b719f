//! Monte Carlo rejection frequencies.
//!
//! Replication `r` draws everything from stream `r` of the master seed, so the
//! result does not depend on scheduling. Per-replication outcomes are collected
//! in index order before any floating-point reduction.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cce::{cce_fit, RegressionDesign};
use crate::cd::{compute_statistics, decide, draw_rademacher, CdStatistics, CdWResiduals, TestName};
use crate::dgp::{CellParams, DgpConfig, PanelGenerator};
use crate::error::{Error, Result};
use crate::factor::fit_pca;
use crate::panel::{demean_units, PanelMatrix};
use crate::rng;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "CDPANEL_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct McOptions {
    /// Worker threads; `None` reads [`THREADS_ENV`], then falls back to all cores.
    pub threads: Option<usize>,
    pub cd_w_residuals: CdWResiduals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSummary {
    pub test: TestName,
    pub rejections: usize,
    /// Replications in which this statistic was computed.
    pub replications: usize,
    pub rejection_rate: f64,
    pub mean: f64,
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    pub config: DgpConfig,
    pub m_used: usize,
    /// Requested replications.
    pub replications: usize,
    pub master_seed: u64,
    pub level: f64,
    /// Replications where the pipeline failed before any statistic was computed.
    pub failed_replications: usize,
    /// Per test: statistic-specific failures (e.g. a degenerate bias correction).
    pub test_failures: Vec<(TestName, usize)>,
    pub tests: Vec<TestSummary>,
    pub theta_hat_mean: f64,
}

impl McResult {
    pub fn summary(&self, test: TestName) -> &TestSummary {
        self.tests.iter().find(|s| s.test == test).expect("all tests are summarized")
    }

    pub fn rate(&self, test: TestName) -> f64 {
        self.summary(test).rejection_rate
    }
}

/// Filters one generated panel and fits `m_used` factors; returns its statistics.
pub fn run_replication(
    generator: &PanelGenerator,
    m_used: usize,
    master_seed: u64,
    r: u64,
    cd_w_residuals: CdWResiduals,
) -> Result<CdStatistics<f64>> {
    let mut stream = rng::stream(master_seed, r);
    let g = generator.generate(&mut stream)?;
    let filtered: PanelMatrix<f64> = match (&g.x, &g.d) {
        (Some(x), Some(d)) => {
            let xs = (0..x.ncols()).map(|i| x.columns(i, 1).into_owned()).collect();
            let design = RegressionDesign::from_panel(&g.y, xs, d.clone())?;
            cce_fit(&design)?.vhat
        }
        _ => demean_units(&g.y),
    };
    let fit = fit_pca(&filtered, m_used)?;
    let weights = draw_rademacher(filtered.n(), &mut stream);
    compute_statistics(&fit, &weights, cd_w_residuals)
}

fn thread_count(opt: Option<usize>) -> Option<usize> {
    opt.or_else(|| std::env::var(THREADS_ENV).ok()?.trim().parse().ok())
        .filter(|&k| k > 0)
}

/// Runs `reps` replications of one cell and aggregates rejection frequencies at `level`.
pub fn run_monte_carlo(
    config: &DgpConfig,
    m_used: usize,
    reps: usize,
    master_seed: u64,
    level: f64,
    options: McOptions,
) -> Result<McResult> {
    if reps == 0 {
        return Err(Error::InvalidConfig("at least one replication is required".into()));
    }
    if m_used == 0 {
        return Err(Error::InvalidConfig("m_used must be at least 1".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidConfig(format!("level must lie in (0, 1), got {level}")));
    }
    config.validate()?;
    let cell = CellParams::draw(config, &mut rng::cell_stream(master_seed));
    let generator = PanelGenerator::new(config.clone(), cell)?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = thread_count(options.threads) {
        builder = builder.num_threads(k);
    }
    let pool = builder.build().map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let outcomes: Vec<Result<CdStatistics<f64>>> = pool.install(|| {
        (0..reps as u64)
            .into_par_iter()
            .map(|r| run_replication(&generator, m_used, master_seed, r, options.cd_w_residuals))
            .collect()
    });

    let failed_replications = outcomes.iter().filter(|o| o.is_err()).count();
    let ok: Vec<&CdStatistics<f64>> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let mut tests = Vec::with_capacity(TestName::ALL.len());
    let mut test_failures = Vec::new();
    for test in TestName::ALL {
        let values: Vec<f64> = ok.iter().filter_map(|s| s.value(test).ok()).collect();
        let failures = ok.len() - values.len();
        if failures > 0 {
            test_failures.push((test, failures));
        }
        tests.push(summarize(test, &values, level));
    }
    let theta: Vec<f64> = ok.iter().map(|s| s.bias.theta_hat).collect();
    let theta_hat_mean = if theta.is_empty() { f64::NAN } else { theta.iter().sum::<f64>() / theta.len() as f64 };

    Ok(McResult {
        config: config.clone(),
        m_used,
        replications: reps,
        master_seed,
        level,
        failed_replications,
        test_failures,
        tests,
        theta_hat_mean,
    })
}

fn summarize(test: TestName, values: &[f64], level: f64) -> TestSummary {
    let k = values.len();
    let rejections = values.iter().filter(|&&v| decide(v, level, test).reject).count();
    let mean = values.iter().sum::<f64>() / k as f64;
    let sd = if k > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1) as f64).sqrt()
    } else {
        0.0
    };
    TestSummary {
        test,
        rejections,
        replications: k,
        rejection_rate: if k > 0 { rejections as f64 / k as f64 } else { f64::NAN },
        mean: if k > 0 { mean } else { f64::NAN },
        sd,
    }
}
