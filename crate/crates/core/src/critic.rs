//! Batch LSTD value estimation with quadratic state features.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::pinv_solve_vec;

/// Singular values below this fraction of the largest are discarded.
pub const LSTD_CUTOFF: f64 = 1e-10;

/// One observed step of the closed loop.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionRecord {
    pub s: DVector<f64>,
    pub d: DVector<f64>,
    pub a: DVector<f64>,
    pub s_next: DVector<f64>,
    pub cost: f64,
    /// `∇θ log π(a | s)`
    pub score: Option<DVector<f64>>,
    pub episode: usize,
    pub step: usize,
    /// Newton iterations of the forward solve.
    pub solver_iterations: usize,
}

/// `1 + n + n(n+1)/2`
pub fn feature_count(n: usize) -> usize {
    1 + n + n * (n + 1) / 2
}

/// `[1, s₁…sₙ, sᵢsⱼ for i ≤ j]` with the quadratic terms in row-major order
/// of the upper triangle of `ssᵀ`.
pub fn features(s: &DVector<f64>) -> DVector<f64> {
    let n = s.len();
    let mut phi = DVector::zeros(feature_count(n));
    phi[0] = 1.0;
    phi.rows_mut(1, n).copy_from(s);
    let mut k = 1 + n;
    for i in 0..n {
        for j in i..n {
            phi[k] = s[i] * s[j];
            k += 1;
        }
    }
    phi
}

#[derive(Clone, Debug, PartialEq)]
pub struct ValueWeights {
    pub v: DVector<f64>,
}

impl ValueWeights {
    pub fn zeros(n: usize) -> Self {
        Self { v: DVector::zeros(feature_count(n)) }
    }

    pub fn value(&self, s: &DVector<f64>) -> f64 {
        features(s).dot(&self.v)
    }
}

/// Solves `Σ φ (L + γφ₊ᵀv − φᵀv) = 0` for arbitrary feature vectors.
pub fn lstd_solve<'a>(
    samples: impl IntoIterator<Item = (&'a DVector<f64>, &'a DVector<f64>, f64)>,
    gamma: f64,
) -> Result<DVector<f64>> {
    let mut a: Option<DMatrix<f64>> = None;
    let mut b: Option<DVector<f64>> = None;
    for (phi, phi_next, cost) in samples {
        let am = a.get_or_insert_with(|| DMatrix::zeros(phi.len(), phi.len()));
        let bm = b.get_or_insert_with(|| DVector::zeros(phi.len()));
        am.ger(1.0, phi, &(phi - gamma * phi_next), 1.0);
        bm.axpy(cost, phi, 1.0);
    }
    let (Some(a), Some(b)) = (a, b) else {
        return Err(Error::Degenerate("empty LSTD batch".into()));
    };
    if a.amax() == 0.0 {
        return Err(Error::Degenerate("all LSTD features vanish".into()));
    }
    Ok(pinv_solve_vec(&a, &b, LSTD_CUTOFF))
}

/// LSTD fit of quadratic value features on a batch of transitions.
pub fn lstd_fit(batch: &[TransitionRecord], gamma: f64) -> Result<ValueWeights> {
    let feats: Vec<(DVector<f64>, DVector<f64>, f64)> =
        batch.iter().map(|r| (features(&r.s), features(&r.s_next), r.cost)).collect();
    let v = lstd_solve(feats.iter().map(|(p, q, c)| (p, q, *c)), gamma)?;
    Ok(ValueWeights { v })
}

/// `δ = L + γV̂(s₊) − V̂(s)`
pub fn td_error(record: &TransitionRecord, weights: &ValueWeights, gamma: f64) -> f64 {
    record.cost + gamma * weights.value(&record.s_next) - weights.value(&record.s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(s: &[f64], s_next: &[f64], cost: f64) -> TransitionRecord {
        TransitionRecord {
            s: DVector::from_column_slice(s),
            d: DVector::zeros(0),
            a: DVector::zeros(0),
            s_next: DVector::from_column_slice(s_next),
            cost,
            score: None,
            episode: 0,
            step: 0,
            solver_iterations: 0,
        }
    }

    #[test]
    fn feature_layout() {
        assert_eq!(feature_count(2), 6);
        assert_eq!(features(&DVector::zeros(2)).as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(features(&DVector::from_column_slice(&[1.0, 2.0])).as_slice(), &[1.0, 1.0, 2.0, 1.0, 2.0, 4.0]);
    }

    #[test]
    fn constant_feature_single_transition() {
        let one = DVector::from_element(1, 1.0);
        let v = lstd_solve([(&one, &one, 1.0)], 0.0).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn two_state_cycle() {
        let e1 = DVector::from_column_slice(&[1.0, 0.0]);
        let e2 = DVector::from_column_slice(&[0.0, 1.0]);
        let v = lstd_solve([(&e1, &e2, 1.0), (&e2, &e1, 0.0)], 0.5).unwrap();
        assert!((v[0] - 4.0 / 3.0).abs() < 1e-12 && (v[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn zero_weights_give_cost() {
        let r = rec(&[0.3, 0.1], &[0.2, 0.0], 0.7);
        assert_eq!(td_error(&r, &ValueWeights::zeros(2), 0.9), 0.7);
    }

    #[test]
    fn empty_batch_is_degenerate() {
        assert!(matches!(lstd_fit(&[], 0.9), Err(Error::Degenerate(_))));
    }
}
