//! Principal-components estimation of latent factors and loadings.
//!
//! With `Y` the `T × n` data matrix and `Q` the `n × m` orthonormal
//! eigenvectors of `YᵀY` for its `m` largest eigenvalues, loadings are
//! `Γ = √n Q` and factors `F = Y Q / √n`, so that `ΓᵀΓ / n = I_m` and
//! `FᵀF / T` is diagonal. Residuals are `e_it = y_it − γ_iᵀ f_t`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::PanelMatrix;
use crate::scalar::Real;

/// Relative eigenvalue level below which a component counts as absent.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Which symmetric eigenproblem to solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PcaSolver {
    /// Pick the smaller of the two problems.
    #[default]
    Auto,
    /// The `n × n` Gram matrix of units, `YᵀY`.
    UnitGram,
    /// The `T × T` matrix `YYᵀ`, with eigenvectors mapped back to units.
    TimeGram,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorModelFit<S: Real> {
    /// `T × m`, row `t` is `f̂_t`.
    pub factors: DMatrix<S>,
    /// `n × m`, row `i` is `γ̂_i`.
    pub loadings: DMatrix<S>,
    pub residuals: PanelMatrix<S>,
    /// Leading `min(n, T)` eigenvalues of `YᵀY`, descending.
    pub eigenvalues: Vec<S>,
}

impl<S: Real> FactorModelFit<S> {
    /// Number of extracted components.
    pub fn m(&self) -> usize {
        self.loadings.ncols()
    }

    pub fn residuals(&self) -> &PanelMatrix<S> {
        &self.residuals
    }
}

/// Principal-components fit with `m` factors. The panel is used as given;
/// de-mean it beforehand if intercepts should be removed.
pub fn fit_pca<S: Real>(panel: &PanelMatrix<S>, m: usize) -> Result<FactorModelFit<S>> {
    fit_pca_with(panel, m, PcaSolver::Auto)
}

pub fn fit_pca_with<S: Real>(
    panel: &PanelMatrix<S>,
    m: usize,
    solver: PcaSolver,
) -> Result<FactorModelFit<S>> {
    let (n, t) = (panel.n(), panel.t());
    let max_m = n.min(t) - 1;
    if m == 0 || m > max_m {
        return Err(Error::Dimension(format!(
            "number of factors must lie in 1..={max_m} for a {n}x{t} panel, got {m}"
        )));
    }
    let y = panel.time_by_unit();
    let use_time = match solver {
        PcaSolver::Auto => t < n,
        PcaSolver::UnitGram => false,
        PcaSolver::TimeGram => true,
    };

    let (mut q, eigenvalues) = if use_time {
        let (vecs, vals) = leading_eigen(y * y.transpose(), m);
        // q_k = Yᵀ v_k / sqrt(λ_k) has unit norm and is an eigenvector of YᵀY.
        let mut q = y.tr_mul(&vecs);
        check_rank(&vals, m)?;
        for (k, mut col) in q.column_iter_mut().enumerate() {
            col /= vals[k].sqrt();
        }
        (q, vals)
    } else {
        let (vecs, vals) = leading_eigen(y.tr_mul(y), m);
        check_rank(&vals, m)?;
        (vecs, vals)
    };
    fix_signs(&mut q);

    let sqrt_n = S::of_usize(n).sqrt();
    let loadings = &q * sqrt_n;
    let factors = (y * &q) / sqrt_n;
    let residuals = y - &factors * loadings.transpose();

    Ok(FactorModelFit {
        factors,
        loadings,
        residuals: PanelMatrix::from_time_by_unit_unchecked(residuals),
        eigenvalues: eigenvalues.into_iter().take(n.min(t)).collect(),
    })
}

/// Residuals `e_it = y_it − γ̂_iᵀ f̂_t` of a fit.
pub fn residuals_from_fit<S: Real>(fit: &FactorModelFit<S>) -> PanelMatrix<S> {
    fit.residuals.clone()
}

fn check_rank<S: Real>(vals: &[S], m: usize) -> Result<()> {
    let largest = vals[0];
    let tol = S::of(RANK_TOLERANCE.max(100.0 * S::default_epsilon().as_f64()));
    let mth = vals[m - 1];
    if largest <= S::zero() || mth <= tol * largest {
        let ratio = if largest > S::zero() { (mth / largest).as_f64() } else { 0.0 };
        return Err(Error::RankDeficient { m, ratio });
    }
    Ok(())
}

/// Eigenvectors for the `m` largest eigenvalues, plus the full spectrum, both
/// sorted by descending eigenvalue with index tie-break.
fn leading_eigen<S: Real>(sym: DMatrix<S>, m: usize) -> (DMatrix<S>, Vec<S>) {
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let vals: Vec<S> = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let dim = eig.eigenvectors.nrows();
    let vecs = DMatrix::from_fn(dim, m, |r, c| eig.eigenvectors[(r, order[c])]);
    (vecs, vals)
}

/// Makes the largest-magnitude entry of each column positive (first index wins ties).
pub(crate) fn fix_signs<S: Real>(q: &mut DMatrix<S>) {
    for mut col in q.column_iter_mut() {
        let mut best = 0;
        for (r, v) in col.iter().enumerate() {
            if v.abs() > col[best].abs() {
                best = r;
            }
        }
        if col[best] < S::zero() {
            col.neg_mut();
        }
    }
}
