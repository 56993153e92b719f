//! Tests for cross-sectional dependence in panel residuals.
//!
//! The pipeline filters observed effects out of an `n × T` panel (unit means,
//! least squares, or common correlated effects), extracts `m` principal
//! components, and computes four statistics from the residuals: the standard
//! CD statistic, its bias-corrected version CD*, the randomized CD_W and the
//! screened CD_W+.
//!
//! The estimation and testing code is generic over [`Real`] (`f32` or `f64`);
//! the aliases below fix the scalar type. Simulation, I/O and the CLI use `f64`.
//!
//! ```
//! use cdpanel::{compute_statistics, demean_units, fit_pca, CdWResiduals, PanelF64, RademacherWeights};
//!
//! let rows: Vec<Vec<f64>> = (0..6)
//!     .map(|i| (0..8).map(|t| ((i * 7 + t * 3) % 5) as f64 + 0.1 * i as f64).collect())
//!     .collect();
//! let panel = demean_units(&PanelF64::from_rows(&rows).unwrap());
//! let fit = fit_pca(&panel, 1).unwrap();
//! let stats = compute_statistics(&fit, &RademacherWeights::ones(6), CdWResiduals::Unscaled).unwrap();
//! assert!(stats.cd.is_finite());
//! ```

pub mod cce;
pub mod cd;
pub mod cli;
pub mod dgp;
pub mod error;
pub mod factor;
pub mod io;
pub mod mc;
pub mod panel;
pub mod rng;
pub mod scalar;

pub use cce::{build_augmented_averages, cce_fit, ols_filter, ols_filter_panel, CceFit, RegressionDesign, ResidualMaker};
pub use cd::{
    bias_correction_from_parts, cd_star, cd_statistic, cd_time_aggregated, cd_w, cd_w_plus, compute_statistics,
    decide, draw_rademacher, estimate_bias_correction, screening_delta, screening_threshold, two_sided_p_value,
    BiasCorrection, CdStatistics, CdWResiduals, RademacherWeights, TestName, TestOutcome,
};
pub use dgp::{
    build_spatial_weights, gen_ar1, gen_errors, gen_loadings, gen_panel, pooled_r_squared, spatial_scale, DgpConfig,
    ErrorDist, PanelGenerator, SpatialWeightMatrix,
};
pub use error::{Error, Result};
pub use factor::{fit_pca, fit_pca_with, residuals_from_fit, FactorModelFit, PcaSolver};
pub use io::{load_panel_csv, ExperimentSpec, Layout, LoadOptions, ResultRecord};
pub use mc::{run_monte_carlo, McOptions, McResult};
pub use panel::{demean_units, pairwise_correlations, scale_residuals, CorrelationSet, PanelMatrix, ScaledResiduals};
pub use scalar::Real;

pub type PanelF64 = PanelMatrix<f64>;
pub type PanelF32 = PanelMatrix<f32>;
pub type FactorFitF64 = FactorModelFit<f64>;
pub type FactorFitF32 = FactorModelFit<f32>;
pub type ScaledResidualsF64 = ScaledResiduals<f64>;
pub type ScaledResidualsF32 = ScaledResiduals<f32>;
pub type CorrelationsF64 = CorrelationSet<f64>;
pub type CorrelationsF32 = CorrelationSet<f32>;
pub type StatisticsF64 = CdStatistics<f64>;
pub type StatisticsF32 = CdStatistics<f32>;
pub type DesignF64 = RegressionDesign<f64>;
pub type DesignF32 = RegressionDesign<f32>;
pub type CceFitF64 = CceFit<f64>;
pub type CceFitF32 = CceFit<f32>;
