//! CD, bias-corrected CD*, randomized CD_W and power-enhanced CD_W+ statistics.
//!
//! All four statistics are compared with a standard normal limit using a
//! two-sided p-value `2(1 − Φ(|z|))`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::factor::FactorModelFit;
use crate::panel::{self, CorrelationSet, PanelMatrix, ScaledResiduals};
use crate::scalar::Real;

/// Smallest admissible `|1 − θ̂|` in the CD* denominator.
pub const DENOM_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TestName {
    #[serde(rename = "CD")]
    Cd,
    #[serde(rename = "CD_STAR")]
    CdStar,
    #[serde(rename = "CD_W")]
    CdW,
    #[serde(rename = "CD_W_PLUS")]
    CdWPlus,
}

impl TestName {
    pub const ALL: [TestName; 4] = [TestName::Cd, TestName::CdStar, TestName::CdW, TestName::CdWPlus];

    pub fn as_str(self) -> &'static str {
        match self {
            TestName::Cd => "CD",
            TestName::CdStar => "CD_STAR",
            TestName::CdW => "CD_W",
            TestName::CdWPlus => "CD_W_PLUS",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().replace(['-', '+', '*'], "_").as_str() {
            "CD" => Some(TestName::Cd),
            "CD_STAR" | "CDSTAR" | "CD_" => Some(TestName::CdStar),
            "CD_W" | "CDW" => Some(TestName::CdW),
            "CD_W_PLUS" | "CDWPLUS" | "CD_W_" | "CDW_" => Some(TestName::CdWPlus),
            _ => None,
        }
    }
}

impl fmt::Display for TestName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Estimated bias-correction parameter and its ingredients.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasCorrection<S: Real> {
    pub theta_hat: S,
    pub a_hat: DVector<S>,
    pub phi_hat: DVector<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub test: TestName,
    pub statistic: f64,
    pub p_value: f64,
    pub reject: bool,
    pub level: f64,
}

/// I.i.d. ±1 weights, one per unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RademacherWeights {
    w: Vec<i8>,
}

impl RademacherWeights {
    pub fn new(w: Vec<i8>) -> Result<Self> {
        if w.iter().any(|&v| v != 1 && v != -1) {
            return Err(Error::InvalidConfig("Rademacher weights must be +1 or -1".into()));
        }
        Ok(Self { w })
    }

    pub fn ones(n: usize) -> Self {
        Self { w: vec![1; n] }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn as_slice(&self) -> &[i8] {
        &self.w
    }

    pub fn negated(&self) -> Self {
        Self { w: self.w.iter().map(|v| -v).collect() }
    }
}

/// `CD = sqrt(2T / (n(n−1))) Σ_{i<j} ρ̂_ij`.
pub fn cd_statistic<S: Real>(rho: &CorrelationSet<S>, t: usize) -> S {
    let n = S::of_usize(rho.n());
    let sum = rho.values().iter().fold(S::zero(), |acc, &r| acc + r);
    (S::of(2.0) * S::of_usize(t) / (n * (n - S::one()))).sqrt() * sum
}

/// CD computed period by period from the scaled residuals:
/// `sqrt(n/(n−1)) T^{-1/2} Σ_t [(n^{-1/2} Σ_i ẽ_it)² − 1] / √2`.
pub fn cd_time_aggregated<S: Real>(scaled: &ScaledResiduals<S>) -> S {
    let (n, t) = (S::of_usize(scaled.n()), S::of_usize(scaled.t()));
    let e = scaled.tilde_e.time_by_unit();
    let mut total = S::zero();
    for row in e.row_iter() {
        let avg = row.sum() / n.sqrt();
        total += avg * avg - S::one();
    }
    (n / (n - S::one())).sqrt() * total / (t.sqrt() * S::of(2.0).sqrt())
}

/// `θ̂ = 1 − n⁻¹ Σ â_i²` with `â_i = 1 − σ̂_i φ̂ᵀγ̂_i` and `φ̂ = n⁻¹ Σ γ̂_i / σ̂_i`.
pub fn estimate_bias_correction<S: Real>(
    fit: &FactorModelFit<S>,
    scaled: &ScaledResiduals<S>,
) -> Result<BiasCorrection<S>> {
    bias_correction_from_parts(&fit.loadings, &scaled.sigma_hat)
}

/// Bias correction from an `n × m` loading matrix and the per-unit scales.
pub fn bias_correction_from_parts<S: Real>(
    loadings: &DMatrix<S>,
    sigma_hat: &DVector<S>,
) -> Result<BiasCorrection<S>> {
    let n = loadings.nrows();
    if sigma_hat.len() != n || n == 0 {
        return Err(Error::Dimension(format!(
            "{} loadings rows but {} unit scales",
            n,
            sigma_hat.len()
        )));
    }
    let floor = S::of(panel::SCALE_FLOOR).sqrt();
    if let Some(unit) = sigma_hat.iter().position(|&s| s <= floor) {
        return Err(Error::DegenerateUnitScale {
            unit,
            mean_square: (sigma_hat[unit] * sigma_hat[unit]).as_f64(),
        });
    }
    let nf = S::of_usize(n);
    let mut phi = DVector::zeros(loadings.ncols());
    for (i, row) in loadings.row_iter().enumerate() {
        phi += row.transpose() / sigma_hat[i];
    }
    phi /= nf;
    let a_hat = DVector::from_fn(n, |i, _| {
        S::one() - sigma_hat[i] * loadings.row(i).transpose().dot(&phi)
    });
    let theta_hat = S::one() - a_hat.norm_squared() / nf;
    Ok(BiasCorrection { theta_hat, a_hat, phi_hat: phi })
}

/// `CD* = (CD + sqrt(T/2) θ̂) / (1 − θ̂)`.
pub fn cd_star<S: Real>(cd: S, bc: &BiasCorrection<S>, t: usize) -> Result<S> {
    let denom = S::one() - bc.theta_hat;
    if denom.abs() <= S::of(DENOM_FLOOR) {
        return Err(Error::DegenerateCorrection { one_minus_theta: denom.as_f64() });
    }
    Ok((cd + (S::of_usize(t) / S::of(2.0)).sqrt() * bc.theta_hat) / denom)
}

/// Draws `n` independent ±1 weights, one generator draw per unit.
pub fn draw_rademacher<R: Rng + ?Sized>(n: usize, rng: &mut R) -> RademacherWeights {
    RademacherWeights {
        w: (0..n).map(|_| if rng.random::<bool>() { 1 } else { -1 }).collect(),
    }
}

/// `CD_W = sqrt(2/(T n(n−1))) Σ_t Σ_{i>j} (w_i e_it)(w_j e_jt)`.
///
/// Uses the identity `Σ_{i>j} a_i a_j = ((Σ a_i)² − Σ a_i²) / 2` per period.
pub fn cd_w<S: Real>(residuals: &PanelMatrix<S>, weights: &RademacherWeights) -> Result<S> {
    let n = residuals.n();
    if weights.len() != n {
        return Err(Error::Dimension(format!(
            "{} weights for {} units",
            weights.len(),
            n
        )));
    }
    let w: Vec<S> = weights.as_slice().iter().map(|&v| S::of(f64::from(v))).collect();
    let e = residuals.time_by_unit();
    let mut total = S::zero();
    for row in e.row_iter() {
        let mut sum = S::zero();
        let mut sq = S::zero();
        for (v, &wi) in row.iter().zip(&w) {
            sum += wi * *v;
            sq += *v * *v;
        }
        total += (sum * sum - sq) / S::of(2.0);
    }
    let nf = S::of_usize(n);
    let scale = (S::of(2.0) / (S::of_usize(residuals.t()) * nf * (nf - S::one()))).sqrt();
    Ok(scale * total)
}

/// Screening threshold `2 sqrt(ln n / T)`.
pub fn screening_threshold<S: Real>(n: usize, t: usize) -> S {
    S::of(2.0) * (S::of_usize(n).ln() / S::of_usize(t)).sqrt()
}

/// `Δ = Σ_{i>j} |ρ̂_ij| 1(|ρ̂_ij| > 2 sqrt(ln n / T))`.
pub fn screening_delta<S: Real>(rho: &CorrelationSet<S>, n: usize, t: usize) -> S {
    let threshold = screening_threshold::<S>(n, t);
    rho.values()
        .iter()
        .map(|r| r.abs())
        .filter(|&a| a > threshold)
        .fold(S::zero(), |acc, a| acc + a)
}

pub fn cd_w_plus<S: Real>(cdw: S, delta: S) -> S {
    cdw + delta
}

/// Two-sided standard normal p-value `2(1 − Φ(|z|))`, evaluated as
/// `erfc(|z|/√2)` so the far tail keeps full relative precision.
pub fn two_sided_p_value(statistic: f64) -> f64 {
    if statistic.is_nan() {
        return f64::NAN;
    }
    libm::erfc(statistic.abs() / std::f64::consts::SQRT_2).clamp(0.0, 1.0)
}

/// Turns a statistic into a decision at `level`; rejects iff `p < level`.
pub fn decide<S: Real>(statistic: S, level: f64, test: TestName) -> TestOutcome {
    assert!(level > 0.0 && level < 1.0, "level must lie in (0, 1), got {level}");
    let statistic = statistic.as_f64();
    let p_value = two_sided_p_value(statistic);
    TestOutcome { test, statistic, p_value, reject: p_value < level, level }
}

/// Which residuals enter `CD_W`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdWResiduals {
    #[default]
    Unscaled,
    Scaled,
}

/// All statistics computed from one factor fit.
#[derive(Debug, Clone, PartialEq)]
pub struct CdStatistics<S: Real> {
    pub cd: S,
    /// `Err` when the bias correction is degenerate.
    pub cd_star: std::result::Result<S, Error>,
    pub cd_w: S,
    pub cd_w_plus: S,
    pub delta: S,
    pub bias: BiasCorrection<S>,
}

impl<S: Real> CdStatistics<S> {
    pub fn value(&self, test: TestName) -> Result<S> {
        match test {
            TestName::Cd => Ok(self.cd),
            TestName::CdStar => self.cd_star.clone(),
            TestName::CdW => Ok(self.cd_w),
            TestName::CdWPlus => Ok(self.cd_w_plus),
        }
    }
}

/// Computes CD, CD*, CD_W and CD_W+ from the residuals of `fit`.
pub fn compute_statistics<S: Real>(
    fit: &FactorModelFit<S>,
    weights: &RademacherWeights,
    cd_w_residuals: CdWResiduals,
) -> Result<CdStatistics<S>> {
    let residuals = fit.residuals();
    let (n, t) = (residuals.n(), residuals.t());
    let scaled = panel::scale_residuals(residuals)?;
    let rho = panel::pairwise_correlations(&scaled);
    let cd = cd_statistic(&rho, t);
    let bias = estimate_bias_correction(fit, &scaled)?;
    let cd_star_value = cd_star(cd, &bias, t);
    let cdw = match cd_w_residuals {
        CdWResiduals::Unscaled => cd_w(residuals, weights)?,
        CdWResiduals::Scaled => cd_w(&scaled.tilde_e, weights)?,
    };
    let delta = screening_delta(&rho, n, t);
    Ok(CdStatistics {
        cd,
        cd_star: cd_star_value,
        cd_w: cdw,
        cd_w_plus: cd_w_plus(cdw, delta),
        delta,
        bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn panel(rows: &[&[f64]]) -> PanelMatrix<f64> {
        PanelMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn cd_single_perfect_pair() {
        let rho = CorrelationSet::from_upper(2, vec![1.0]).unwrap();
        assert_abs_diff_eq!(cd_statistic(&rho, 4), 2.0, epsilon = 1e-15);
        let zero = CorrelationSet::from_upper(5, vec![0.0; 10]).unwrap();
        assert_eq!(cd_statistic(&zero, 30), 0.0);
    }

    #[test]
    fn time_aggregated_examples() {
        let p = panel(&[&[1.0, -1.0, 1.0, -1.0], &[1.0, -1.0, 1.0, -1.0]]);
        let s = panel::scale_residuals(&p).unwrap();
        assert_abs_diff_eq!(cd_time_aggregated(&s), 2.0, epsilon = 1e-12);

        let p = panel(&[&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0], &[1.0, -1.0, -1.0, 1.0]]);
        let s = panel::scale_residuals(&p).unwrap();
        assert_abs_diff_eq!(cd_time_aggregated(&s), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn bias_correction_examples() {
        let sigma = DVector::from_vec(vec![1.0, 1.0]);

        let zero = DMatrix::zeros(2, 1);
        let bc = bias_correction_from_parts(&zero, &sigma).unwrap();
        assert_eq!(bc.a_hat.as_slice(), &[1.0, 1.0]);
        assert_eq!(bc.theta_hat, 0.0);

        let g = DMatrix::from_column_slice(2, 1, &[2f64.sqrt(), 0.0]);
        let bc = bias_correction_from_parts(&g, &sigma).unwrap();
        assert_abs_diff_eq!(bc.phi_hat[0], 2f64.sqrt() / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bc.a_hat[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bc.a_hat[1], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(bc.theta_hat, 0.5, epsilon = 1e-15);

        let g = DMatrix::from_column_slice(2, 1, &[1.0, -1.0]);
        let bc = bias_correction_from_parts(&g, &sigma).unwrap();
        assert_eq!(bc.phi_hat[0], 0.0);
        assert_eq!(bc.theta_hat, 0.0);

        assert!(bias_correction_from_parts(&g, &DVector::from_vec(vec![1.0])).is_err());
    }

    #[test]
    fn cd_star_examples() {
        let bc = |theta: f64| BiasCorrection {
            theta_hat: theta,
            a_hat: DVector::zeros(1),
            phi_hat: DVector::zeros(1),
        };
        assert_eq!(cd_star(1.7, &bc(0.0), 100).unwrap(), 1.7);
        let v = cd_star(0.1, &bc(0.5), 160).unwrap();
        let expected = (0.1 + 80f64.sqrt() * 0.5) / 0.5;
        assert_abs_diff_eq!(v, expected, epsilon = 1e-12);
        assert_abs_diff_eq!(v, 9.14427, epsilon = 1e-5);
        assert!(matches!(cd_star(0.1, &bc(1.0), 50), Err(Error::DegenerateCorrection { .. })));
    }

    #[test]
    fn rademacher_draws() {
        let mut a = ChaCha20Rng::seed_from_u64(7);
        let mut b = ChaCha20Rng::seed_from_u64(7);
        let wa = draw_rademacher(50, &mut a);
        assert_eq!(wa, draw_rademacher(50, &mut b));
        assert!(wa.as_slice().iter().all(|&v| v == 1 || v == -1));

        let n = 100_000;
        let w = draw_rademacher(n, &mut a);
        let mean = w.as_slice().iter().map(|&v| f64::from(v)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 4.0 / (n as f64).sqrt());
        assert!(RademacherWeights::new(vec![1, 0]).is_err());
    }

    #[test]
    fn cd_w_examples() {
        // identical rows, all weights +1: sqrt(1/T) Σ_t e_1t²
        let row = [0.5, -1.5, 2.0, 1.0, -0.3];
        let p = panel(&[&row, &row]);
        let s: f64 = row.iter().map(|v| v * v).sum();
        let v = cd_w(&p, &RademacherWeights::ones(2)).unwrap();
        assert_abs_diff_eq!(v, (1.0f64 / 5.0).sqrt() * s, epsilon = 1e-12);

        let p = panel(&[&[0.3, -1.0, 0.2], &[1.1, 0.4, -0.9], &[-0.5, 0.8, 1.2]]);
        let w = RademacherWeights::new(vec![1, -1, -1]).unwrap();
        let a = cd_w(&p, &w).unwrap();
        assert_abs_diff_eq!(a, cd_w(&p, &w.negated()).unwrap(), epsilon = 1e-15);
        assert!(cd_w(&p, &RademacherWeights::ones(2)).is_err());
    }

    #[test]
    fn screening_examples() {
        let thr: f64 = screening_threshold(100, 100);
        assert_abs_diff_eq!(thr, 0.429193, epsilon = 1e-6);

        let mut vals = vec![0.0; 100 * 99 / 2];
        vals[0] = 0.5;
        vals[1] = 0.3;
        vals[2] = -0.44;
        let rho = CorrelationSet::from_upper(100, vals).unwrap();
        assert_abs_diff_eq!(screening_delta(&rho, 100, 100), 0.94, epsilon = 1e-12);

        let small = CorrelationSet::from_upper(100, vec![0.1; 4950]).unwrap();
        assert_eq!(screening_delta(&small, 100, 100), 0.0);

        let t = 50;
        let at: f64 = screening_threshold(2, t);
        let boundary = CorrelationSet::from_upper(2, vec![at]).unwrap();
        assert_eq!(screening_delta(&boundary, 2, t), 0.0);
    }

    #[test]
    fn cd_w_plus_examples() {
        assert_eq!(cd_w_plus(0.7, 0.0), 0.7);
        assert_abs_diff_eq!(cd_w_plus(-1.2, 0.94), -0.26, epsilon = 1e-15);
    }

    #[test]
    fn decide_examples() {
        let o = decide(0.0, 0.05, TestName::Cd);
        assert_eq!(o.p_value, 1.0);
        assert!(!o.reject);

        // two-sided 5% critical value
        let z = 1.959_963_984_540_054;
        assert_abs_diff_eq!(decide(z, 0.05, TestName::Cd).p_value, 0.05, epsilon = 1e-12);
        let o = decide(1.959964, 0.05, TestName::CdStar);
        assert_abs_diff_eq!(o.p_value, 0.05, epsilon = 1e-8);
        assert!(!decide(1.95996, 0.05, TestName::CdStar).reject);

        let o = decide(10.0, 0.05, TestName::CdWPlus);
        assert!(o.p_value < 1e-20 && o.p_value > 0.0);
        assert!(o.reject);
        assert_eq!(o.reject, o.p_value < o.level);
    }

    #[test]
    fn p_value_against_known_quantiles() {
        // 2(1 − Φ(z)) for tabulated z
        let cases = [
            (1.0, 0.317_310_507_862_914_1),
            (2.575_829_303_548_901, 0.01),
            (3.0, 0.002_699_796_063_260_189),
        ];
        for (z, p) in cases {
            assert_abs_diff_eq!(two_sided_p_value(z), p, epsilon = 1e-14);
            assert_abs_diff_eq!(two_sided_p_value(-z), p, epsilon = 1e-14);
        }
    }

    #[test]
    fn test_name_parsing() {
        for t in TestName::ALL {
            assert_eq!(TestName::parse(t.as_str()), Some(t));
        }
        assert_eq!(TestName::parse("cd*"), Some(TestName::CdStar));
        assert_eq!(TestName::parse("CDW+"), Some(TestName::CdWPlus));
        assert_eq!(TestName::parse("nope"), None);
    }
}
