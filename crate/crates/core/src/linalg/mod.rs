//! Sparse and structured linear algebra used by the interior-point solver and
//! the sensitivity computations.

mod band;
mod kkt;
mod sparse;

pub use band::{BandLu, SingularPivot};
pub use kkt::{FactorError, KktFactor, KktStructure};
pub use sparse::Triplets;

use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution of `A x = b` with singular values below
/// `rcond * σ_max` discarded.
pub fn pinv_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, rcond: f64) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let mut x = DMatrix::zeros(a.ncols(), b.ncols());
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > rcond * smax && s > 0.0 {
            let coef = u.column(k).transpose() * b / s;
            x += vt.row(k).transpose() * coef;
        }
    }
    x
}

pub fn pinv_solve_vec(a: &DMatrix<f64>, b: &DVector<f64>, rcond: f64) -> DVector<f64> {
    let x = pinv_solve(a, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()), rcond);
    x.column(0).into_owned()
}

/// Ratio of extreme singular values; infinite when the smallest vanishes.
pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let (lo, hi) = (sv.min(), sv.max());
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}
