//! Small static problems with closed-form or cheaply checkable answers.
//!
//! They carry no state (`n_s = 0`) and are used by the test-suite and by the
//! density and conditioning studies.

use nalgebra::DVector;

use crate::ip_solver::{NlpDims, ParametricNlp};
use crate::linalg::Triplets;

/// `min ½‖u − c‖²` over `u ∈ ℝⁿ`, with `θ = c`.
#[derive(Clone, Debug)]
pub struct UnconstrainedQuadratic {
    pub n: usize,
}

impl ParametricNlp for UnconstrainedQuadratic {
    fn dims(&self) -> NlpDims {
        NlpDims { n_w: self.n, n_f: 0, n_h: 0, n_a: self.n, n_s: 0, n_theta: self.n }
    }
    fn cost(&self, w: &[f64], _s: &[f64], theta: &[f64]) -> f64 {
        0.5 * w.iter().zip(theta).map(|(u, c)| (u - c).powi(2)).sum::<f64>()
    }
    fn cost_grad(&self, w: &[f64], _s: &[f64], theta: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.n, w.iter().zip(theta).map(|(u, c)| u - c))
    }
    fn eq(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn eq_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        Triplets::new(0, self.n)
    }
    fn ineq(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn ineq_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        Triplets::new(0, self.n)
    }
    fn lagrangian_hessian(&self, _w: &[f64], _lam: &[f64], _mu: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(self.n, self.n);
        (0..self.n).for_each(|i| t.push(i, i, 1.0));
        t
    }
    fn lagrangian_theta_jac(&self, _w: &[f64], _lam: &[f64], _mu: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(self.n, self.n);
        (0..self.n).for_each(|i| t.push(i, i, -1.0));
        t
    }
    fn eq_theta_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        Triplets::new(0, self.n)
    }
    fn ineq_theta_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        Triplets::new(0, self.n)
    }
}

/// Scalar `min ½(u − c)²` subject to bounds `σᵢ u − bᵢ ≤ 0`, σᵢ = ±1.
///
/// `θ = (c, b₁, …, b_m)`, so the bounds themselves are parameters.
#[derive(Clone, Debug)]
pub struct ScalarQp {
    pub signs: Vec<f64>,
}

impl ScalarQp {
    /// `u ≤ b`
    pub fn upper() -> Self {
        Self { signs: vec![1.0] }
    }

    /// `u ≥ −b`
    pub fn lower() -> Self {
        Self { signs: vec![-1.0] }
    }

    fn n_h(&self) -> usize {
        self.signs.len()
    }
}

impl ParametricNlp for ScalarQp {
    fn dims(&self) -> NlpDims {
        NlpDims { n_w: 1, n_f: 0, n_h: self.n_h(), n_a: 1, n_s: 0, n_theta: 1 + self.n_h() }
    }
    fn cost(&self, w: &[f64], _s: &[f64], theta: &[f64]) -> f64 {
        0.5 * (w[0] - theta[0]).powi(2)
    }
    fn cost_grad(&self, w: &[f64], _s: &[f64], theta: &[f64]) -> DVector<f64> {
        DVector::from_element(1, w[0] - theta[0])
    }
    fn eq(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn eq_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        Triplets::new(0, 1)
    }
    fn ineq(&self, w: &[f64], _s: &[f64], theta: &[f64]) -> DVector<f64> {
        DVector::from_iterator(self.n_h(), self.signs.iter().enumerate().map(|(i, sg)| sg * w[0] - theta[1 + i]))
    }
    fn ineq_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(self.n_h(), 1);
        self.signs.iter().enumerate().for_each(|(i, &sg)| t.push(i, 0, sg));
        t
    }
    fn lagrangian_hessian(&self, _w: &[f64], _lam: &[f64], _mu: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(1, 1);
        t.push(0, 0, 1.0);
        t
    }
    fn lagrangian_theta_jac(&self, _w: &[f64], _lam: &[f64], _mu: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(1, 1 + self.n_h());
        t.push(0, 0, -1.0);
        t
    }
    fn eq_theta_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        Triplets::new(0, 1 + self.n_h())
    }
    fn ineq_theta_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(self.n_h(), 1 + self.n_h());
        (0..self.n_h()).for_each(|i| t.push(i, 1 + i, -1.0));
        t
    }
    fn initial_primal(&self, _s: &[f64], theta: &[f64]) -> DVector<f64> {
        let mut lo = f64::NEG_INFINITY;
        let mut hi = f64::INFINITY;
        for (i, &sg) in self.signs.iter().enumerate() {
            if sg > 0.0 {
                hi = hi.min(theta[1 + i] / sg);
            } else {
                lo = lo.max(theta[1 + i] / sg);
            }
        }
        let u = match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.5 * (lo + hi),
            (true, false) => lo + 1.0,
            (false, true) => hi - 1.0,
            (false, false) => 0.0,
        };
        DVector::from_element(1, u)
    }
}

/// Planar `min ½‖u − c‖²` subject to `‖u‖² − r² ≤ 0`, with `θ = (c₁, c₂, r)`.
///
/// `c` enters the cost only, `r` the constraint only.
#[derive(Clone, Copy, Debug, Default)]
pub struct DiskQp;

impl ParametricNlp for DiskQp {
    fn dims(&self) -> NlpDims {
        NlpDims { n_w: 2, n_f: 0, n_h: 1, n_a: 2, n_s: 0, n_theta: 3 }
    }
    fn cost(&self, w: &[f64], _s: &[f64], theta: &[f64]) -> f64 {
        0.5 * ((w[0] - theta[0]).powi(2) + (w[1] - theta[1]).powi(2))
    }
    fn cost_grad(&self, w: &[f64], _s: &[f64], theta: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(&[w[0] - theta[0], w[1] - theta[1]])
    }
    fn eq(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> DVector<f64> {
        DVector::zeros(0)
    }
    fn eq_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        Triplets::new(0, 2)
    }
    fn ineq(&self, w: &[f64], _s: &[f64], theta: &[f64]) -> DVector<f64> {
        DVector::from_element(1, w[0] * w[0] + w[1] * w[1] - theta[2] * theta[2])
    }
    fn ineq_jac(&self, w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(1, 2);
        t.push(0, 0, 2.0 * w[0]);
        t.push(0, 1, 2.0 * w[1]);
        t
    }
    fn lagrangian_hessian(&self, _w: &[f64], _lam: &[f64], mu: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(2, 2);
        t.push(0, 0, 1.0 + 2.0 * mu[0]);
        t.push(1, 1, 1.0 + 2.0 * mu[0]);
        t
    }
    fn lagrangian_theta_jac(&self, _w: &[f64], _lam: &[f64], _mu: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(2, 3);
        t.push(0, 0, -1.0);
        t.push(1, 1, -1.0);
        t
    }
    fn eq_theta_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        Triplets::new(0, 3)
    }
    fn ineq_theta_jac(&self, _w: &[f64], _s: &[f64], theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(1, 3);
        t.push(0, 2, -2.0 * theta[2]);
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ip_solver::{derivative_check, PrimalDualPoint};

    #[test]
    fn toy_derivatives_are_consistent() {
        let z = PrimalDualPoint::new(DVector::from_column_slice(&[0.3, -0.2]), DVector::zeros(0), DVector::from_element(1, 0.7));
        let rep = derivative_check(&DiskQp, &z, &[], &[0.5, 0.1, 1.2], 1e-6);
        assert!(rep.max() < 1e-8, "{rep:?}");

        let q = ScalarQp { signs: vec![1.0, -1.0] };
        let z = PrimalDualPoint::new(DVector::from_element(1, 0.2), DVector::zeros(0), DVector::from_column_slice(&[0.1, 0.3]));
        let rep = derivative_check(&q, &z, &[], &[2.0, 1.0, 1.0], 1e-6);
        assert!(rep.max() < 1e-8, "{rep:?}");
    }

    #[test]
    fn scalar_start_is_interior() {
        let q = ScalarQp { signs: vec![1.0, -1.0] };
        let w = q.initial_primal(&[], &[0.0, 1.0, 0.5]);
        assert!(q.ineq(w.as_slice(), &[], &[0.0, 1.0, 0.5]).iter().all(|&h| h < 0.0));
    }
}
