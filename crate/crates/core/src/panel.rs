//! Balanced panel storage, unit de-meaning, residual scaling and pairwise
//! residual correlations.
//!
//! A panel holds `n` units observed over `T` periods. Values are kept in a
//! `T × n` column-major [`DMatrix`], so each unit's time series is contiguous
//! (row-major `n × T` in memory) and the matrix itself is the usual `Y` with
//! one column per unit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Lower bound on a unit's residual mean square below which scaling fails.
pub const SCALE_FLOOR: f64 = 1e-10;

/// `n × T` real panel with at least two units and two periods, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PanelMatrix<S: Real> {
    // T × n, column i is unit i
    data: DMatrix<S>,
}

impl<S: Real> PanelMatrix<S> {
    /// Builds a panel from unit-major values: `values[i * t + s]` is unit `i`
    /// at period `s`.
    pub fn from_unit_major(n: usize, t: usize, values: &[S]) -> Result<Self> {
        if values.len() != n * t {
            return Err(Error::Dimension(format!(
                "expected {} values for a {n}x{t} panel, got {}",
                n * t,
                values.len()
            )));
        }
        Self::from_time_by_unit(DMatrix::from_column_slice(t, n, values))
    }

    /// Builds a panel from one vector per unit.
    pub fn from_rows(rows: &[Vec<S>]) -> Result<Self> {
        let n = rows.len();
        let t = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != t) {
            return Err(Error::Dimension("unit rows have different lengths".into()));
        }
        let flat: Vec<S> = rows.iter().flatten().copied().collect();
        Self::from_unit_major(n, t, &flat)
    }

    /// Wraps a `T × n` matrix whose columns are units.
    pub fn from_time_by_unit(data: DMatrix<S>) -> Result<Self> {
        let (t, n) = data.shape();
        if n < 2 || t < 2 {
            return Err(Error::InvalidPanel(format!(
                "need n >= 2 and T >= 2, got n={n}, T={t}"
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidPanel(format!(
                "non-finite value at unit {}, period {}",
                pos / t,
                pos % t
            )));
        }
        Ok(Self { data })
    }

    pub(crate) fn from_time_by_unit_unchecked(data: DMatrix<S>) -> Self {
        debug_assert!(data.ncols() >= 2 && data.nrows() >= 2);
        Self { data }
    }

    /// Number of units.
    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    /// Number of periods.
    pub fn t(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, unit: usize, period: usize) -> S {
        self.data[(period, unit)]
    }

    /// Time series of one unit.
    pub fn unit(&self, unit: usize) -> &[S] {
        let t = self.t();
        &self.data.as_slice()[unit * t..(unit + 1) * t]
    }

    /// The `T × n` matrix with one column per unit.
    pub fn time_by_unit(&self) -> &DMatrix<S> {
        &self.data
    }

    pub fn into_time_by_unit(self) -> DMatrix<S> {
        self.data
    }

    /// Unit-major copy of the values.
    pub fn to_rows(&self) -> Vec<Vec<S>> {
        (0..self.n()).map(|i| self.unit(i).to_vec()).collect()
    }

    /// Multiplies every value of unit `i` by `factors[i]`.
    pub fn scale_units(&self, factors: &[S]) -> Result<Self> {
        if factors.len() != self.n() {
            return Err(Error::Dimension("one factor per unit required".into()));
        }
        let mut data = self.data.clone();
        for (mut col, &f) in data.column_iter_mut().zip(factors) {
            col *= f;
        }
        Self::from_time_by_unit(data)
    }
}

/// Residuals divided by their per-unit root mean square.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledResiduals<S: Real> {
    pub tilde_e: PanelMatrix<S>,
    pub sigma_hat: DVector<S>,
}

impl<S: Real> ScaledResiduals<S> {
    pub fn n(&self) -> usize {
        self.tilde_e.n()
    }

    pub fn t(&self) -> usize {
        self.tilde_e.t()
    }
}

/// Upper-triangle pairwise correlations `rho[i, j]`, `i < j`, stored row by row:
/// `(0,1), (0,2), …, (0,n-1), (1,2), …`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSet<S: Real> {
    n: usize,
    values: Vec<S>,
}

impl<S: Real> CorrelationSet<S> {
    /// Wraps precomputed upper-triangle values in row order.
    pub fn from_upper(n: usize, values: Vec<S>) -> Result<Self> {
        if n < 2 || values.len() != n * (n - 1) / 2 {
            return Err(Error::Dimension(format!(
                "{} correlations do not form the upper triangle of {n} units",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    fn index(&self, i: usize, j: usize) -> usize {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        a * (2 * self.n - a - 1) / 2 + (b - a - 1)
    }

    /// Correlation of units `i` and `j` (`i != j`, order irrelevant).
    pub fn get(&self, i: usize, j: usize) -> S {
        assert!(i != j && i < self.n && j < self.n, "invalid pair ({i}, {j})");
        self.values[self.index(i, j)]
    }

    /// Iterates `(i, j, rho)` with `i < j`.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, S)> + '_ {
        let n = self.n;
        (0..n)
            .flat_map(move |i| (i + 1..n).map(move |j| (i, j)))
            .zip(self.values.iter().copied())
            .map(|((i, j), r)| (i, j, r))
    }
}

/// Subtracts each unit's arithmetic time mean.
pub fn demean_units<S: Real>(panel: &PanelMatrix<S>) -> PanelMatrix<S> {
    let t = S::of_usize(panel.t());
    let mut data = panel.time_by_unit().clone();
    for mut col in data.column_iter_mut() {
        let mean = col.sum() / t;
        col.add_scalar_mut(-mean);
    }
    PanelMatrix::from_time_by_unit_unchecked(data)
}

/// Divides each unit's residuals by `sigma_hat_i = sqrt(T⁻¹ Σ_t e_it²)`.
pub fn scale_residuals<S: Real>(residuals: &PanelMatrix<S>) -> Result<ScaledResiduals<S>> {
    let t = S::of_usize(residuals.t());
    let floor = S::of(SCALE_FLOOR);
    let mut data = residuals.time_by_unit().clone();
    let mut sigma = DVector::zeros(residuals.n());
    for (i, mut col) in data.column_iter_mut().enumerate() {
        let mean_square = col.norm_squared() / t;
        if mean_square <= floor {
            return Err(Error::DegenerateUnitScale {
                unit: i,
                mean_square: mean_square.as_f64(),
            });
        }
        let s = mean_square.sqrt();
        col /= s;
        sigma[i] = s;
    }
    Ok(ScaledResiduals {
        tilde_e: PanelMatrix::from_time_by_unit_unchecked(data),
        sigma_hat: sigma,
    })
}

/// `T⁻¹ Ẽᵀ Ẽ`, the full `n × n` correlation matrix of scaled residuals.
pub(crate) fn correlation_matrix<S: Real>(scaled: &ScaledResiduals<S>) -> DMatrix<S> {
    let e = scaled.tilde_e.time_by_unit();
    e.tr_mul(e) / S::of_usize(scaled.t())
}

/// `rho_ij = T⁻¹ Σ_t ẽ_it ẽ_jt` for all `i < j`.
pub fn pairwise_correlations<S: Real>(scaled: &ScaledResiduals<S>) -> CorrelationSet<S> {
    let n = scaled.n();
    let full = correlation_matrix(scaled);
    let mut values = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            values.push(full[(i, j)]);
        }
    }
    CorrelationSet { n, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn panel(rows: &[&[f64]]) -> PanelMatrix<f64> {
        PanelMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn rejects_small_or_non_finite() {
        assert!(PanelMatrix::<f64>::from_rows(&[vec![1.0, 2.0]]).is_err());
        assert!(PanelMatrix::<f64>::from_rows(&[vec![1.0], vec![2.0]]).is_err());
        let err = PanelMatrix::from_rows(&[vec![1.0, f64::NAN], vec![2.0, 3.0]]).unwrap_err();
        assert!(matches!(err, Error::InvalidPanel(_)));
    }

    #[test]
    fn layout_accessors() {
        let p = panel(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        assert_eq!(p.n(), 2);
        assert_eq!(p.t(), 3);
        assert_eq!(p.get(1, 0), 4.0);
        assert_eq!(p.unit(0), &[1.0, 2.0, 3.0]);
        assert_eq!(p.to_rows()[1], vec![4.0, 5.0, 6.0]);
    }

    #[test]
    fn demean_examples() {
        let p = panel(&[&[5.0, 5.0, 5.0, 5.0], &[1.0, -1.0, 1.0, -1.0]]);
        let d = demean_units(&p);
        assert_eq!(d.unit(0), &[0.0; 4]);
        assert_eq!(d.unit(1), &[1.0, -1.0, 1.0, -1.0]);

        let d = demean_units(&panel(&[&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]]));
        assert_eq!(d.unit(0), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn scale_examples() {
        let p = panel(&[&[1.0, -1.0, 1.0, -1.0], &[2.0, -2.0, 2.0, -2.0]]);
        let s = scale_residuals(&p).unwrap();
        assert_abs_diff_eq!(s.sigma_hat[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.sigma_hat[1], 2.0, epsilon = 1e-15);
        assert_eq!(s.tilde_e.unit(1), &[1.0, -1.0, 1.0, -1.0]);

        let p = panel(&[&[1.0, -1.0, 1.0, -1.0], &[0.0, 0.0, 0.0, 0.0]]);
        assert!(matches!(
            scale_residuals(&p),
            Err(Error::DegenerateUnitScale { unit: 1, .. })
        ));
    }

    #[test]
    fn correlation_examples() {
        let p = panel(&[&[1.0, -1.0, 1.0, -1.0], &[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0]]);
        let rho = pairwise_correlations(&scale_residuals(&p).unwrap());
        assert_eq!(rho.len(), 3);
        assert_abs_diff_eq!(rho.get(0, 1), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rho.get(2, 0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(rho.get(1, 2), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn correlations_match_double_loop() {
        let rows = [
            [0.3, -1.2, 2.5, 0.7, -0.4, 1.1],
            [1.9, 0.2, -0.8, -1.5, 0.6, 0.05],
            [-0.7, 0.9, 0.4, -2.2, 1.3, -0.6],
        ];
        let p = panel(&rows.iter().map(|r| &r[..]).collect::<Vec<_>>());
        let rho = pairwise_correlations(&scale_residuals(&p).unwrap());
        let t = 6.0;
        let rms: Vec<f64> = rows
            .iter()
            .map(|r| (r.iter().map(|v| v * v).sum::<f64>() / t).sqrt())
            .collect();
        for i in 0..3 {
            for j in i + 1..3 {
                let mut acc = 0.0;
                for s in 0..6 {
                    acc += (rows[i][s] / rms[i]) * (rows[j][s] / rms[j]);
                }
                assert_abs_diff_eq!(rho.get(i, j), acc / t, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn upper_index_round_trip() {
        let n = 7;
        let set = CorrelationSet::from_upper(n, (0..21).map(f64::from).collect()).unwrap();
        let mut k = 0.0;
        for (i, j, v) in set.iter() {
            assert_eq!(v, k);
            assert_eq!(set.get(i, j), k);
            assert_eq!(set.get(j, i), k);
            k += 1.0;
        }
        assert!(CorrelationSet::<f64>::from_upper(4, vec![0.0; 5]).is_err());
    }

    #[test]
    fn works_in_f32() {
        let p = PanelMatrix::<f32>::from_rows(&[vec![2.0, -2.0, 2.0, -2.0], vec![1.0, 1.0, -1.0, -1.0]])
            .unwrap();
        let s = scale_residuals(&p).unwrap();
        assert!((s.sigma_hat[0] - 2.0).abs() < 1e-6);
        let rho = pairwise_correlations(&s);
        assert!(rho.get(0, 1).abs() < 1e-6);
    }
}
