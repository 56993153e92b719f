//! Simulated panels with latent factors, observed covariates and spatially
//! correlated errors.
//!
//! ```text
//! y_it = a_i + σ_i (β_i1 d_t + β_i2 x_it + m0^{-1/2} γ_iᵀ f_t + ε_it)
//! x_it = γ_xi1 f_1t + γ_xi2 f_2t + e_xit
//! ε_·t = c (I − ρW)⁻¹ ζ_·t
//! ```
//!
//! Within one replication, draws are taken from the stream in this order:
//! `σ_i`, loadings (factor by factor), regression parameters (`β_i1`, `β_i2`,
//! `γ_xi1`, `γ_xi2`, `ρ_i` per unit), latent factors, `d_t`, `e_xit` (unit by
//! unit), then the errors (period by period, `n` draws each).

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelMatrix;

/// Periods discarded before AR(1) output when the start is not stationary.
pub const AR_BURN_IN: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ErrorDist {
    /// `N(0, 1)`
    #[default]
    Gaussian,
    /// `(χ²(2) − 2) / 2`
    #[serde(alias = "chi2_2", alias = "chi2")]
    Chi2,
}

impl ErrorDist {
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            ErrorDist::Gaussian => StandardNormal.sample(rng),
            ErrorDist::Chi2 => (chi2_2(rng) - 2.0) / 2.0,
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Some(ErrorDist::Gaussian),
            "chi2" | "chi2_2" | "chisq" => Some(ErrorDist::Chi2),
            _ => None,
        }
    }
}

/// `χ²(2)` as the sum of two squared standard normals.
fn chi2_2<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let a: f64 = StandardNormal.sample(rng);
    let b: f64 = StandardNormal.sample(rng);
    a * a + b * b
}

fn normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, variance: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    mean + variance.sqrt() * z
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoadingParams {
    /// Mean of the nonzero loadings of factor 1 and factor 2.
    pub means: [f64; 2],
    pub variances: [f64; 2],
}

impl Default for LoadingParams {
    fn default() -> Self {
        Self { means: [0.5, 1.0], variances: [0.5, 1.0] }
    }
}

/// `σ_i² = floor + chi2_weight · s_i²` with `s_i² ~ χ²(2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SigmaParams {
    pub floor: f64,
    pub chi2_weight: f64,
}

impl Default for SigmaParams {
    /// `E(σ_i²) = 1`.
    fn default() -> Self {
        Self { floor: 0.5, chi2_weight: 0.25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BetaParams {
    /// Means of `β_i1` (on `d_t`) and `β_i2` (on `x_it`).
    pub means: [f64; 2],
    pub variances: [f64; 2],
    /// Uniform ranges of `γ_xi1` and `γ_xi2`.
    pub x_loading_ranges: [[f64; 2]; 2],
    /// Intercepts `a_i ~ N(mean, variance)`, fixed within an experiment cell.
    pub intercept_mean: f64,
    pub intercept_variance: f64,
}

impl Default for BetaParams {
    fn default() -> Self {
        Self {
            means: [0.5, 0.5],
            variances: [0.25, 0.25],
            x_loading_ranges: [[0.25, 0.75], [0.1, 0.5]],
            intercept_mean: 1.0,
            intercept_variance: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArParams {
    pub rho_d: f64,
    pub rho_f: f64,
    /// `ρ_i ~ U(0, rho_x_max)` for the regressor errors.
    pub rho_x_max: f64,
}

impl Default for ArParams {
    fn default() -> Self {
        Self { rho_d: 0.8, rho_f: 0.9, rho_x_max: 0.95 }
    }
}

/// One experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    #[serde(rename = "T", alias = "t")]
    pub t: usize,
    pub m0: usize,
    /// Strength of each latent factor, one per factor.
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub rho_spatial: f64,
    #[serde(default)]
    pub error_dist: ErrorDist,
    #[serde(default)]
    pub include_regressors: bool,
    #[serde(default)]
    pub loading_params: LoadingParams,
    #[serde(default)]
    pub sigma_params: SigmaParams,
    #[serde(default)]
    pub beta_params: BetaParams,
    #[serde(default)]
    pub ar_params: ArParams,
}

impl DgpConfig {
    /// Pure latent factor cell with default parameters.
    pub fn pure(n: usize, t: usize, alphas: &[f64]) -> Self {
        Self {
            n,
            t,
            m0: alphas.len(),
            alphas: alphas.to_vec(),
            rho_spatial: 0.0,
            error_dist: ErrorDist::Gaussian,
            include_regressors: false,
            loading_params: LoadingParams::default(),
            sigma_params: SigmaParams::default(),
            beta_params: BetaParams::default(),
            ar_params: ArParams::default(),
        }
    }

    pub fn with_rho(mut self, rho: f64) -> Self {
        self.rho_spatial = rho;
        self
    }

    pub fn with_errors(mut self, dist: ErrorDist) -> Self {
        self.error_dist = dist;
        self
    }

    pub fn with_regressors(mut self, on: bool) -> Self {
        self.include_regressors = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n < 3 || self.t < 3 {
            return bad(format!("need n >= 3 and T >= 3, got n={}, T={}", self.n, self.t));
        }
        if !(1..=2).contains(&self.m0) {
            return bad(format!("m0 must be 1 or 2, got {}", self.m0));
        }
        if self.alphas.len() != self.m0 {
            return bad(format!("{} factor strengths for m0={}", self.alphas.len(), self.m0));
        }
        if self.alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return bad(format!("factor strengths must lie in [0, 1], got {:?}", self.alphas));
        }
        if !(0.0..1.0).contains(&self.rho_spatial) {
            return bad(format!("rho_spatial must lie in [0, 1), got {}", self.rho_spatial));
        }
        let ar = &self.ar_params;
        if [ar.rho_d, ar.rho_f].iter().any(|r| r.abs() >= 1.0) || !(0.0..1.0).contains(&ar.rho_x_max) {
            return bad("AR coefficients must be below one in absolute value".into());
        }
        let lp = &self.loading_params;
        let bp = &self.beta_params;
        if lp.variances.iter().chain(&bp.variances).any(|v| *v < 0.0) || bp.intercept_variance < 0.0 {
            return bad("variances must be nonnegative".into());
        }
        let sp = &self.sigma_params;
        if sp.floor <= 0.0 || sp.chi2_weight < 0.0 {
            return bad("sigma parameters must give a positive scale".into());
        }
        Ok(())
    }
}

/// Row-normalized band weights: neighbors `i−2, i−1, i+1, i+2`, truncated at the edges.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialWeightMatrix {
    w: DMatrix<f64>,
}

impl SpatialWeightMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    /// Wraps an arbitrary square weight matrix.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        if !w.is_square() {
            return Err(Error::Dimension("spatial weights must be square".into()));
        }
        Ok(Self { w })
    }
}

pub fn build_spatial_weights(n: usize) -> Result<SpatialWeightMatrix> {
    if n < 3 {
        return Err(Error::InvalidConfig(format!("spatial weights need n >= 3, got {n}")));
    }
    let mut w = DMatrix::zeros(n, n);
    for i in 0..n {
        let neighbors: Vec<usize> = [i.wrapping_sub(2), i.wrapping_sub(1), i + 1, i + 2]
            .into_iter()
            .filter(|&j| j < n)
            .collect();
        let share = 1.0 / neighbors.len() as f64;
        for j in neighbors {
            w[(i, j)] = share;
        }
    }
    Ok(SpatialWeightMatrix { w })
}

fn spatial_inverse(w: &SpatialWeightMatrix, rho: f64) -> Result<DMatrix<f64>> {
    let n = w.n();
    let a = DMatrix::identity(n, n) - w.matrix() * rho;
    let inv = a.lu().try_inverse().ok_or(Error::SingularSpatialSystem)?;
    if inv.iter().all(|v| v.is_finite()) {
        Ok(inv)
    } else {
        Err(Error::SingularSpatialSystem)
    }
}

/// `c = sqrt(n / tr[(I − ρW)⁻¹ (I − ρW)⁻ᵀ])`.
pub fn spatial_scale(w: &SpatialWeightMatrix, rho: f64) -> Result<f64> {
    let inv = spatial_inverse(w, rho)?;
    Ok((w.n() as f64 / inv.norm_squared()).sqrt())
}

/// Precomputed map `ζ ↦ c (I − ρW)⁻¹ ζ` for one `(W, ρ)`.
#[derive(Debug, Clone)]
pub struct SpatialFilter {
    rho: f64,
    scale: f64,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl SpatialFilter {
    pub fn new(w: &SpatialWeightMatrix, rho: f64) -> Result<Self> {
        let scale = spatial_scale(w, rho)?;
        let n = w.n();
        let lu = (DMatrix::identity(n, n) - w.matrix() * rho).lu();
        Ok(Self { rho, scale, lu })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Transforms every column (one period) of an `n × T` matrix.
    pub fn apply(&self, zeta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let solved = self.lu.solve(zeta).ok_or(Error::SingularSpatialSystem)?;
        Ok(solved * self.scale)
    }
}

/// Number of units with a nonzero loading on a factor of strength `alpha`: `⌊n^α⌋`.
pub fn nonzero_loadings(n: usize, alpha: f64) -> usize {
    // the small offset keeps exact integer powers such as 1000^(2/3) from rounding down
    (((n as f64).powf(alpha) + 1e-9).floor() as usize).min(n)
}

/// First `⌊n^α⌋` entries i.i.d. `N(mean, variance)`, the rest exactly zero.
pub fn gen_loadings<R: Rng + ?Sized>(n: usize, alpha: f64, mean: f64, variance: f64, rng: &mut R) -> Vec<f64> {
    let k = nonzero_loadings(n, alpha);
    (0..n).map(|i| if i < k { normal(rng, mean, variance) } else { 0.0 }).collect()
}

/// AR(1) with unit stationary variance: `z_t = ρ z_{t−1} + sqrt(1 − ρ²) v_t`.
///
/// Gaussian innovations start from the stationary distribution; others run
/// [`AR_BURN_IN`] periods from zero first.
pub fn gen_ar1<R: Rng + ?Sized>(t: usize, rho: f64, innovations: ErrorDist, rng: &mut R) -> Vec<f64> {
    let sd = (1.0 - rho * rho).sqrt();
    let mut out = Vec::with_capacity(t);
    match innovations {
        ErrorDist::Gaussian => {
            if t == 0 {
                return out;
            }
            let mut z = innovations.draw(rng);
            out.push(z);
            for _ in 1..t {
                z = rho * z + sd * innovations.draw(rng);
                out.push(z);
            }
        }
        ErrorDist::Chi2 => {
            let mut z = 0.0;
            for s in 0..AR_BURN_IN + t {
                z = rho * z + sd * innovations.draw(rng);
                if s >= AR_BURN_IN {
                    out.push(z);
                }
            }
        }
    }
    out
}

/// `n × T` errors; i.i.d. when `spatial` is `None`, otherwise filtered period by period.
pub fn gen_errors<R: Rng + ?Sized>(
    n: usize,
    t: usize,
    spatial: Option<&SpatialFilter>,
    dist: ErrorDist,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let mut zeta = DMatrix::zeros(n, t);
    for s in 0..t {
        for i in 0..n {
            zeta[(i, s)] = dist.draw(rng);
        }
    }
    match spatial {
        Some(filter) if filter.rho() != 0.0 => filter.apply(&zeta),
        _ => Ok(zeta),
    }
}

/// Parameters held fixed across the replications of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellParams {
    pub intercepts: Vec<f64>,
}

impl CellParams {
    pub fn draw<R: Rng + ?Sized>(config: &DgpConfig, rng: &mut R) -> Self {
        let bp = &config.beta_params;
        Self {
            intercepts: (0..config.n)
                .map(|_| normal(rng, bp.intercept_mean, bp.intercept_variance))
                .collect(),
        }
    }
}

/// The unobserved components of a simulated panel.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelTruth {
    pub sigma: Vec<f64>,
    /// `n × m0`, the loadings `γ_i` before the `σ_i m0^{-1/2}` scaling.
    pub gamma: DMatrix<f64>,
    /// `n × 2` slopes `(β_i1, β_i2)`; zero in the pure factor design.
    pub beta: DMatrix<f64>,
    /// `n × 2` loadings of `x_it` on `(f_1t, f_2t)`.
    pub gamma_x: DMatrix<f64>,
    /// `T × k` latent factors (`k = 2` when regressors are present, else `m0`).
    pub factors: DMatrix<f64>,
    /// `n × T` errors `ε_it`.
    pub errors: DMatrix<f64>,
}

impl PanelTruth {
    /// `v_it = σ_i (m0^{-1/2} γ_iᵀ f_t + ε_it)` as a `T × n` matrix.
    pub fn latent_component(&self) -> DMatrix<f64> {
        let m0 = self.gamma.ncols();
        let scale = 1.0 / (m0 as f64).sqrt();
        let f = self.factors.columns(0, m0);
        let common = &f * self.gamma.transpose() * scale; // T × n
        DMatrix::from_fn(common.nrows(), common.ncols(), |s, i| {
            self.sigma[i] * (common[(s, i)] + self.errors[(i, s)])
        })
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedPanel {
    pub y: PanelMatrix<f64>,
    /// `T × n` regressor `x_it`, present in the regression design.
    pub x: Option<DMatrix<f64>>,
    /// `T × 2` observed common factors `[1, d_t]`, present in the regression design.
    pub d: Option<DMatrix<f64>>,
    pub truth: PanelTruth,
}

/// Everything needed to generate replications of one cell.
#[derive(Debug, Clone)]
pub struct PanelGenerator {
    config: DgpConfig,
    cell: CellParams,
    spatial: Option<SpatialFilter>,
}

impl PanelGenerator {
    pub fn new(config: DgpConfig, cell: CellParams) -> Result<Self> {
        config.validate()?;
        if cell.intercepts.len() != config.n {
            return Err(Error::Dimension("one intercept per unit required".into()));
        }
        let spatial = if config.rho_spatial > 0.0 {
            let w = build_spatial_weights(config.n)?;
            Some(SpatialFilter::new(&w, config.rho_spatial)?)
        } else {
            None
        };
        Ok(Self { config, cell, spatial })
    }

    pub fn config(&self) -> &DgpConfig {
        &self.config
    }

    pub fn cell(&self) -> &CellParams {
        &self.cell
    }

    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GeneratedPanel> {
        let cfg = &self.config;
        let (n, t, m0) = (cfg.n, cfg.t, cfg.m0);
        let lp = &cfg.loading_params;
        let bp = &cfg.beta_params;
        let ar = &cfg.ar_params;

        let sp = &cfg.sigma_params;
        let sigma: Vec<f64> = (0..n).map(|_| (sp.floor + sp.chi2_weight * chi2_2(rng)).sqrt()).collect();
        let mut gamma = DMatrix::zeros(n, m0);
        for j in 0..m0 {
            let col = gen_loadings(n, cfg.alphas[j], lp.means[j], lp.variances[j], rng);
            gamma.column_mut(j).copy_from_slice(&col);
        }

        let mut beta = DMatrix::zeros(n, 2);
        let mut gamma_x = DMatrix::zeros(n, 2);
        let mut rho_x = vec![0.0; n];
        if cfg.include_regressors {
            for i in 0..n {
                beta[(i, 0)] = normal(rng, bp.means[0], bp.variances[0]);
                beta[(i, 1)] = normal(rng, bp.means[1], bp.variances[1]);
                gamma_x[(i, 0)] = uniform(rng, bp.x_loading_ranges[0][0], bp.x_loading_ranges[0][1]);
                gamma_x[(i, 1)] = uniform(rng, bp.x_loading_ranges[1][0], bp.x_loading_ranges[1][1]);
                rho_x[i] = uniform(rng, 0.0, ar.rho_x_max);
            }
        }

        let k_factors = if cfg.include_regressors { 2 } else { m0 };
        let mut factors = DMatrix::zeros(t, k_factors);
        for j in 0..k_factors {
            let f = gen_ar1(t, ar.rho_f, ErrorDist::Chi2, rng);
            factors.column_mut(j).copy_from_slice(&f);
        }

        let (x, d) = if cfg.include_regressors {
            let d_t = gen_ar1(t, ar.rho_d, ErrorDist::Gaussian, rng);
            let mut x = DMatrix::zeros(t, n);
            for i in 0..n {
                let ex = gen_ar1(t, rho_x[i], ErrorDist::Gaussian, rng);
                for s in 0..t {
                    x[(s, i)] = gamma_x[(i, 0)] * factors[(s, 0)] + gamma_x[(i, 1)] * factors[(s, 1)] + ex[s];
                }
            }
            let mut d = DMatrix::from_element(t, 2, 1.0);
            d.column_mut(1).copy_from_slice(&d_t);
            (Some(x), Some(d))
        } else {
            (None, None)
        };

        let errors = gen_errors(n, t, self.spatial.as_ref(), cfg.error_dist, rng)?;

        let truth = PanelTruth { sigma, gamma, beta, gamma_x, factors, errors };
        let v = truth.latent_component();
        let mut y = v;
        for i in 0..n {
            let a = self.cell.intercepts[i];
            let s_i = truth.sigma[i];
            for s in 0..t {
                let mut obs = a + y[(s, i)];
                if let (Some(x), Some(d)) = (&x, &d) {
                    obs += s_i * (truth.beta[(i, 0)] * d[(s, 1)] + truth.beta[(i, 1)] * x[(s, i)]);
                }
                y[(s, i)] = obs;
            }
        }
        Ok(GeneratedPanel { y: PanelMatrix::from_time_by_unit(y)?, x, d, truth })
    }
}

/// One panel from a fresh cell: intercepts are drawn first from the same stream.
pub fn gen_panel<R: Rng + ?Sized>(config: &DgpConfig, rng: &mut R) -> Result<GeneratedPanel> {
    let cell = CellParams::draw(config, rng);
    PanelGenerator::new(config.clone(), cell)?.generate(rng)
}

fn uniform_second_moment(range: [f64; 2]) -> f64 {
    let [a, b] = range;
    (a * a + a * b + b * b) / 3.0
}

fn uniform_mean(range: [f64; 2]) -> f64 {
    (range[0] + range[1]) / 2.0
}

fn eta_squared(
    cfg: &DgpConfig,
    gamma_sq: f64,
    gamma_x_sq: f64,
    gamma_x_gamma: f64,
) -> f64 {
    let m0 = cfg.m0 as f64;
    let mut eta = gamma_sq / m0;
    if cfg.include_regressors {
        let bp = &cfg.beta_params;
        let b1 = bp.means[0].powi(2) + bp.variances[0];
        let b2 = bp.means[1].powi(2) + bp.variances[1];
        eta += b1 + b2 * (1.0 + gamma_x_sq) + 2.0 * bp.means[1] * gamma_x_gamma / m0.sqrt();
    }
    eta
}

/// Limit of the pooled R², `η² / (1 + η²)`, from the population moments of the design.
pub fn pooled_r_squared(config: &DgpConfig) -> f64 {
    let n = config.n as f64;
    let lp = &config.loading_params;
    let bp = &config.beta_params;
    let mut gamma_sq = 0.0;
    let mut gamma_mean = [0.0; 2];
    for j in 0..config.m0 {
        let share = nonzero_loadings(config.n, config.alphas[j]) as f64 / n;
        gamma_sq += share * (lp.means[j].powi(2) + lp.variances[j]);
        gamma_mean[j] = share * lp.means[j];
    }
    let gx_sq = uniform_second_moment(bp.x_loading_ranges[0]) + uniform_second_moment(bp.x_loading_ranges[1]);
    let gx_g = uniform_mean(bp.x_loading_ranges[0]) * gamma_mean[0]
        + uniform_mean(bp.x_loading_ranges[1]) * gamma_mean[1];
    let eta = eta_squared(config, gamma_sq, gx_sq, gx_g);
    eta / (1.0 + eta)
}

/// Same limit with population moments replaced by sample moments of drawn loadings.
pub fn pooled_r_squared_sample(config: &DgpConfig, truth: &PanelTruth) -> f64 {
    let n = truth.gamma.nrows() as f64;
    let gamma_sq = truth.gamma.norm_squared() / n;
    let gx_sq = if config.include_regressors { truth.gamma_x.norm_squared() / n } else { 0.0 };
    let m0 = truth.gamma.ncols();
    let gx_g = if config.include_regressors {
        (0..truth.gamma.nrows())
            .map(|i| (0..m0).map(|j| truth.gamma_x[(i, j)] * truth.gamma[(i, j)]).sum::<f64>())
            .sum::<f64>()
            / n
    } else {
        0.0
    };
    let eta = eta_squared(config, gamma_sq, gx_sq, gx_g);
    eta / (1.0 + eta)
}

/// Cross-section average of the per-unit sample variances of an `n × T` matrix.
pub fn average_unit_variance(errors: &DMatrix<f64>) -> f64 {
    let t = errors.ncols() as f64;
    let mut total = 0.0;
    for row in errors.row_iter() {
        let mean = row.sum() / t;
        total += row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (t - 1.0);
    }
    total / errors.nrows() as f64
}
