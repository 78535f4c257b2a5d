//! Parametric NLPs and their relaxed primal-dual interior-point solution.
//!
//! A problem
//!
//! ```text
//! min_w  Φ(w, s, θ) + dᵀu₀   s.t.  f(w, s, θ) = 0,  h(w, s, θ) ≤ 0
//! ```
//!
//! is solved through its relaxed first-order conditions
//!
//! ```text
//!          ⎡ ∇wΦ + d̂ + ∇wf λ + ∇wh μ ⎤
//! r_τ(z) = ⎢ f                        ⎥ = 0,   h < 0,  μ > 0
//!          ⎣ diag(μ) h + τ            ⎦
//! ```
//!
//! where `u₀ = w[..n_a]` and `d̂ = (d, 0, …, 0)`.

mod fonc;
mod regularity;
mod solver;

pub use fonc::{assemble_residual, fonc_jacobian, fonc_theta_jacobian, ColumnMode};
pub use regularity::{check_regularity, derivative_check, DerivativeReport, RegularityReport};
pub use solver::{solve_nlp, SolverOptions, SolverReport};
pub(crate) use solver::factor_jacobian;

use nalgebra::DVector;

use crate::linalg::{KktStructure, Triplets};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NlpDims {
    /// primal unknowns
    pub n_w: usize,
    /// equality constraints
    pub n_f: usize,
    /// inequality constraints
    pub n_h: usize,
    /// action block, the leading entries of `w`
    pub n_a: usize,
    /// state (problem data)
    pub n_s: usize,
    /// parameters
    pub n_theta: usize,
}

impl NlpDims {
    pub fn n_z(&self) -> usize {
        self.n_w + self.n_f + self.n_h
    }
}

/// A smooth NLP parameterized by a state `s` and parameters `θ`.
///
/// Derivative callbacks must agree with the value callbacks; see
/// [`derivative_check`]. The Lagrangian is `Φ + λᵀf + μᵀh` (the disturbance
/// term is linear in `w` and handled by the solver).
pub trait ParametricNlp {
    fn dims(&self) -> NlpDims;

    fn cost(&self, w: &[f64], s: &[f64], theta: &[f64]) -> f64;
    fn cost_grad(&self, w: &[f64], s: &[f64], theta: &[f64]) -> DVector<f64>;

    fn eq(&self, w: &[f64], s: &[f64], theta: &[f64]) -> DVector<f64>;
    /// `∂f/∂w`, n_f × n_w
    fn eq_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets;

    fn ineq(&self, w: &[f64], s: &[f64], theta: &[f64]) -> DVector<f64>;
    /// `∂h/∂w`, n_h × n_w
    fn ineq_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets;

    /// `∇²w L`, n_w × n_w
    fn lagrangian_hessian(&self, w: &[f64], lam: &[f64], mu: &[f64], s: &[f64], theta: &[f64]) -> Triplets;
    /// `∂(∇w L)/∂θ`, n_w × n_θ
    fn lagrangian_theta_jac(&self, w: &[f64], lam: &[f64], mu: &[f64], s: &[f64], theta: &[f64]) -> Triplets;
    /// `∂f/∂θ`, n_f × n_θ
    fn eq_theta_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets;
    /// `∂h/∂θ`, n_h × n_θ
    fn ineq_theta_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets;

    /// Cold-start primal guess; must satisfy `h < 0`.
    fn initial_primal(&self, s: &[f64], theta: &[f64]) -> DVector<f64> {
        let _ = (s, theta);
        DVector::zeros(self.dims().n_w)
    }

    /// Sparsity strategy for the condensed Newton system.
    fn kkt_structure(&self) -> KktStructure {
        KktStructure::Dense
    }

    /// Maps the solution at one time step to a warm start for the next.
    fn shift_primal(&self, w: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(w)
    }
}

impl<T: ParametricNlp + ?Sized> ParametricNlp for &T {
    fn dims(&self) -> NlpDims {
        (**self).dims()
    }
    fn cost(&self, w: &[f64], s: &[f64], theta: &[f64]) -> f64 {
        (**self).cost(w, s, theta)
    }
    fn cost_grad(&self, w: &[f64], s: &[f64], theta: &[f64]) -> DVector<f64> {
        (**self).cost_grad(w, s, theta)
    }
    fn eq(&self, w: &[f64], s: &[f64], theta: &[f64]) -> DVector<f64> {
        (**self).eq(w, s, theta)
    }
    fn eq_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        (**self).eq_jac(w, s, theta)
    }
    fn ineq(&self, w: &[f64], s: &[f64], theta: &[f64]) -> DVector<f64> {
        (**self).ineq(w, s, theta)
    }
    fn ineq_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        (**self).ineq_jac(w, s, theta)
    }
    fn lagrangian_hessian(&self, w: &[f64], lam: &[f64], mu: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        (**self).lagrangian_hessian(w, lam, mu, s, theta)
    }
    fn lagrangian_theta_jac(&self, w: &[f64], lam: &[f64], mu: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        (**self).lagrangian_theta_jac(w, lam, mu, s, theta)
    }
    fn eq_theta_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        (**self).eq_theta_jac(w, s, theta)
    }
    fn ineq_theta_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        (**self).ineq_theta_jac(w, s, theta)
    }
    fn initial_primal(&self, s: &[f64], theta: &[f64]) -> DVector<f64> {
        (**self).initial_primal(s, theta)
    }
    fn kkt_structure(&self) -> KktStructure {
        (**self).kkt_structure()
    }
    fn shift_primal(&self, w: &[f64]) -> DVector<f64> {
        (**self).shift_primal(w)
    }
}

/// Primal-dual point `z = (w, λ, μ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrimalDualPoint {
    pub w: DVector<f64>,
    pub lam: DVector<f64>,
    pub mu: DVector<f64>,
}

impl PrimalDualPoint {
    pub fn new(w: DVector<f64>, lam: DVector<f64>, mu: DVector<f64>) -> Self {
        Self { w, lam, mu }
    }

    pub fn from_z(dims: &NlpDims, z: &[f64]) -> Self {
        let (w, rest) = z.split_at(dims.n_w);
        let (lam, mu) = rest.split_at(dims.n_f);
        Self {
            w: DVector::from_column_slice(w),
            lam: DVector::from_column_slice(lam),
            mu: DVector::from_column_slice(mu),
        }
    }

    pub fn to_z(&self) -> DVector<f64> {
        let mut z = DVector::zeros(self.w.len() + self.lam.len() + self.mu.len());
        z.rows_mut(0, self.w.len()).copy_from(&self.w);
        z.rows_mut(self.w.len(), self.lam.len()).copy_from(&self.lam);
        z.rows_mut(self.w.len() + self.lam.len(), self.mu.len()).copy_from(&self.mu);
        z
    }

    /// Leading `n_a` primal entries.
    pub fn action(&self, n_a: usize) -> DVector<f64> {
        self.w.rows(0, n_a).into_owned()
    }
}
