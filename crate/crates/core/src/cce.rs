//! Common Correlated Effects filtering of observed covariates, and a plain
//! least-squares filter for observed regressors.
//!
//! For unit `i` with `T × k_x` regressors `X_i` and common observed factors `D`
//! (`T × k_d`, intercept included as a constant column), the cross-section
//! averages `Z̄ = (ȳ, x̄)` augment `D` to `H̄ = (D, Z̄)` and
//! `M̄ = I − H̄ (H̄ᵀH̄)⁺ H̄ᵀ`. Then
//!
//! - `β̂_i = (X_iᵀ M̄ X_i)⁻¹ X_iᵀ M̄ y_i`
//! - `α̂_i = (DᵀD)⁻¹ Dᵀ (y_i − X_i β̂_i)`
//! - `v̂_it = y_it − α̂_iᵀ d_t − β̂_iᵀ x_it`

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::panel::PanelMatrix;
use crate::scalar::Real;

/// Singular-value ratio below which a cross-product matrix counts as singular.
pub const CONDITION_FLOOR: f64 = 1e-10;

/// `y_it = α_iᵀ d_t + β_iᵀ x_it + v_it` for `n` units over `T` periods.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionDesign<S: Real> {
    /// `T × n`, column `i` is `y_i`.
    y: DMatrix<S>,
    /// One `T × k_x` matrix per unit.
    x: Vec<DMatrix<S>>,
    /// `T × k_d`, may have zero columns.
    d: DMatrix<S>,
}

impl<S: Real> RegressionDesign<S> {
    pub fn new(y: DMatrix<S>, x: Vec<DMatrix<S>>, d: DMatrix<S>) -> Result<Self> {
        let (t, n) = y.shape();
        if n == 0 || t < 2 {
            return Err(Error::Dimension(format!("need n >= 1 and T >= 2, got n={n}, T={t}")));
        }
        if x.len() != n {
            return Err(Error::Dimension(format!("{} regressor blocks for {n} units", x.len())));
        }
        let kx = x.first().map_or(0, DMatrix::ncols);
        if let Some(i) = x.iter().position(|xi| xi.nrows() != t || xi.ncols() != kx) {
            return Err(Error::Dimension(format!(
                "regressor block of unit {i} is {:?}, expected ({t}, {kx})",
                x[i].shape()
            )));
        }
        if d.nrows() != t {
            return Err(Error::Dimension(format!("D has {} rows, expected {t}", d.nrows())));
        }
        let finite = y.iter().chain(x.iter().flat_map(|m| m.iter())).chain(d.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidPanel("design contains non-finite values".into()));
        }
        Ok(Self { y, x, d })
    }

    /// Design whose dependent variable is a [`PanelMatrix`].
    pub fn from_panel(y: &PanelMatrix<S>, x: Vec<DMatrix<S>>, d: DMatrix<S>) -> Result<Self> {
        Self::new(y.time_by_unit().clone(), x, d)
    }

    pub fn n(&self) -> usize {
        self.y.ncols()
    }

    pub fn t(&self) -> usize {
        self.y.nrows()
    }

    pub fn kx(&self) -> usize {
        self.x.first().map_or(0, DMatrix::ncols)
    }

    pub fn kd(&self) -> usize {
        self.d.ncols()
    }

    pub fn y(&self) -> &DMatrix<S> {
        &self.y
    }

    pub fn x(&self, unit: usize) -> &DMatrix<S> {
        &self.x[unit]
    }

    pub fn d(&self) -> &DMatrix<S> {
        &self.d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CceFit<S: Real> {
    /// `n × k_x`
    pub beta: DMatrix<S>,
    /// `n × k_d`
    pub alpha: DMatrix<S>,
    pub vhat: PanelMatrix<S>,
}

/// `[D | ȳ | x̄_1 … x̄_kx]`, the `T × (k_d + 1 + k_x)` projection basis.
pub fn build_augmented_averages<S: Real>(design: &RegressionDesign<S>) -> DMatrix<S> {
    let (t, n, kx, kd) = (design.t(), design.n(), design.kx(), design.kd());
    let nf = S::of_usize(n);
    let mut h = DMatrix::zeros(t, kd + 1 + kx);
    h.columns_mut(0, kd).copy_from(&design.d);
    for s in 0..t {
        h[(s, kd)] = design.y.row(s).sum() / nf;
    }
    for xi in &design.x {
        for k in 0..kx {
            for s in 0..t {
                h[(s, kd + 1 + k)] += xi[(s, k)];
            }
        }
    }
    for k in 0..kx {
        let mut col = h.column_mut(kd + 1 + k);
        col /= nf;
    }
    h
}

/// Orthogonal projection away from the column space of a basis matrix.
#[derive(Debug, Clone)]
pub struct ResidualMaker<S: Real> {
    /// Orthonormal basis of the column space (`T × rank`).
    basis: DMatrix<S>,
}

impl<S: Real> ResidualMaker<S> {
    /// Builds `I − H H⁺` from `H`, dropping directions with negligible singular values.
    pub fn new(h: &DMatrix<S>) -> Self {
        let t = h.nrows();
        if h.ncols() == 0 {
            return Self { basis: DMatrix::zeros(t, 0) };
        }
        let svd = h.clone().svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        let tol = S::of_usize(t.max(h.ncols())) * S::default_epsilon() * smax;
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&k| svd.singular_values[k] > tol)
            .collect();
        let basis = DMatrix::from_fn(t, keep.len(), |r, c| u[(r, keep[c])]);
        Self { basis }
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    /// `M v` for every column of `v`.
    pub fn apply(&self, v: &DMatrix<S>) -> DMatrix<S> {
        v - &self.basis * self.basis.tr_mul(v)
    }

    /// Dense `T × T` matrix `M`.
    pub fn matrix(&self) -> DMatrix<S> {
        let t = self.basis.nrows();
        DMatrix::identity(t, t) - &self.basis * self.basis.transpose()
    }
}

fn well_conditioned<S: Real>(a: &DMatrix<S>) -> bool {
    if a.is_empty() {
        return true;
    }
    let sv = a.clone().singular_values();
    let max = sv.max();
    max > S::zero() && sv.min() / max >= S::of(CONDITION_FLOOR)
}

/// Also rejects `XᵀM̄X` that is tiny relative to `XᵀX`, i.e. `M̄` has
/// annihilated (nearly) all of `X`.
fn survives_projection<S: Real>(xmx: &DMatrix<S>, xx: &DMatrix<S>) -> bool {
    if xmx.is_empty() {
        return true;
    }
    let scale = xx.clone().singular_values().max();
    well_conditioned(xmx) && xmx.clone().singular_values().min() >= S::of(CONDITION_FLOOR) * scale
}

/// CCE estimates of `β_i`, `α_i` and the filtered residuals `v̂_it`.
pub fn cce_fit<S: Real>(design: &RegressionDesign<S>) -> Result<CceFit<S>> {
    let (n, kx, kd) = (design.n(), design.kx(), design.kd());
    let h = build_augmented_averages(design);
    let maker = ResidualMaker::new(&h);

    let dtd = design.d.tr_mul(&design.d);
    let dtd_inv = if kd > 0 {
        if !well_conditioned(&dtd) {
            return Err(Error::SingularCommonDesign);
        }
        Some(dtd.try_inverse().ok_or(Error::SingularCommonDesign)?)
    } else {
        None
    };

    let mut beta = DMatrix::zeros(n, kx);
    let mut alpha = DMatrix::zeros(n, kd);
    let mut vhat = design.y.clone();
    for i in 0..n {
        let xi = &design.x[i];
        let yi = design.y.column(i).into_owned();
        let mut fitted_x = DVector::zeros(design.t());
        if kx > 0 {
            let mx = maker.apply(xi);
            let a = xi.tr_mul(&mx);
            if !survives_projection(&a, &xi.tr_mul(xi)) {
                return Err(Error::SingularUnitDesign(i));
            }
            let my = maker.apply(&DMatrix::from_column_slice(yi.len(), 1, yi.as_slice()));
            let rhs = xi.tr_mul(&my);
            let b = a.lu().solve(&rhs).ok_or(Error::SingularUnitDesign(i))?;
            fitted_x = xi * b.column(0);
            beta.row_mut(i).copy_from(&b.transpose());
        }
        let partial = &yi - &fitted_x;
        let mut resid = partial.clone();
        if let Some(inv) = &dtd_inv {
            let a = inv * design.d.tr_mul(&partial);
            resid -= &design.d * &a;
            alpha.row_mut(i).copy_from(&a.transpose());
        }
        vhat.column_mut(i).copy_from(&resid);
    }

    Ok(CceFit { beta, alpha, vhat: PanelMatrix::from_time_by_unit(vhat)? })
}

/// Least squares of one series on `T × k` regressors; returns coefficients and residuals.
pub fn ols_filter<S: Real>(
    y_unit: &DVector<S>,
    regressors: &DMatrix<S>,
) -> Result<(DVector<S>, DVector<S>)> {
    let (t, k) = regressors.shape();
    if y_unit.len() != t {
        return Err(Error::Dimension(format!("series has {} periods, regressors {t}", y_unit.len())));
    }
    if k == 0 {
        return Ok((DVector::zeros(0), y_unit.clone()));
    }
    if k > t || !well_conditioned(&regressors.tr_mul(regressors)) {
        return Err(Error::SingularDesign);
    }
    let qr = regressors.clone().qr();
    let qty = qr.q().tr_mul(y_unit);
    let coef = qr.r().solve_upper_triangular(&qty).ok_or(Error::SingularDesign)?;
    let resid = y_unit - regressors * &coef;
    Ok((coef, resid))
}

/// Applies [`ols_filter`] unit by unit. `regressors(i)` returns the design of unit `i`.
pub fn ols_filter_panel<S: Real, F>(panel: &PanelMatrix<S>, regressors: F) -> Result<PanelMatrix<S>>
where
    F: Fn(usize) -> DMatrix<S>,
{
    let mut out = panel.time_by_unit().clone();
    for i in 0..panel.n() {
        let y = DVector::from_column_slice(panel.unit(i));
        let (_, resid) = ols_filter(&y, &regressors(i)).map_err(|e| match e {
            Error::SingularDesign => Error::SingularUnitDesign(i),
            other => other,
        })?;
        out.column_mut(i).copy_from(&resid);
    }
    PanelMatrix::from_time_by_unit(out)
}
