//! Parametric sensitivities of relaxed solutions and the score function of the
//! disturbed-NLP policy.
//!
//! The relaxed solution defines `a = g(s, θ, d)` through `r_τ(z, θ, d) = 0`.
//! Forward sensitivities differentiate `z(d, θ)`. Reverse sensitivities treat
//! `z̃ = (d, u₁…, λ, μ)` as implicit in `(a, θ)`, giving `g⁻¹` and its
//! derivatives, including the mixed second derivatives needed by
//!
//! ```text
//! ∇θ log π = m − (∇d log ϱ · (∂g/∂d)⁻¹ ∂g/∂θ)ᵀ,   mᵢ = Tr(∂g/∂d · ∂²g⁻¹/∂θᵢ∂a)
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ip_solver::{fonc_jacobian, fonc_theta_jacobian, ColumnMode, ParametricNlp, PrimalDualPoint};
use crate::ip_solver::factor_jacobian;
use crate::linalg::{condition_number, pinv_solve, KktFactor, Triplets};
use crate::policy::DisturbanceDensity;

/// Step of the central difference used for the directional derivative of
/// the FONC Jacobian.
const JACOBIAN_FD_STEP: f64 = 1e-6;
/// Relative singular-value cutoff of the least-squares fallback.
const PINV_CUTOFF: f64 = 1e-10;

#[derive(Clone, Debug)]
pub struct ForwardSensitivities {
    /// `∂z/∂d`, `n_z × n_a`
    pub dz_dd: DMatrix<f64>,
    /// `∂z/∂θ`, `n_z × n_θ`
    pub dz_dtheta: DMatrix<f64>,
    pub dg_dd: DMatrix<f64>,
    pub dg_dtheta: DMatrix<f64>,
}

#[derive(Clone, Debug)]
pub struct ReverseSensitivities {
    /// `∂z̃/∂a`, `n_z × n_a`
    pub dzt_da: DMatrix<f64>,
    /// `∂z̃/∂θ`, `n_z × n_θ`
    pub dzt_dtheta: DMatrix<f64>,
    pub dginv_da: DMatrix<f64>,
    pub dginv_dtheta: DMatrix<f64>,
    /// `∂²z̃/∂θᵢ∂a` for every `i`, each `n_z × n_a`.
    pub second: Vec<DMatrix<f64>>,
}

impl ReverseSensitivities {
    /// `∂²g⁻¹/∂θᵢ∂a`, the leading `n_a` rows of `second[i]`.
    pub fn dginv_da_dtheta(&self, i: usize) -> DMatrix<f64> {
        let n_a = self.dginv_da.nrows();
        self.second[i].rows(0, n_a).into_owned()
    }
}

#[derive(Clone, Debug)]
pub struct ScoreGradient {
    /// `∇θ log π`
    pub score: DVector<f64>,
    /// Trace term `m`.
    pub trace_term: DVector<f64>,
    /// `(∇d log ϱ · (∂g/∂d)⁻¹ ∂g/∂θ)ᵀ`, subtracted from `m`.
    pub density_term: DVector<f64>,
    /// Smallest singular value of `∂g/∂d`.
    pub min_sv_dgdd: f64,
    pub condition_dgdd: f64,
    /// `(∂g/∂d)⁻¹ ∂g/∂θ` came from the least-squares fallback.
    pub used_pseudo_inverse: bool,
}

fn factor<N: ParametricNlp + ?Sized>(nlp: &N, jac: &Triplets) -> Result<KktFactor> {
    let dims = nlp.dims();
    let (f, _) = factor_jacobian(&dims, jac, &nlp.kkt_structure(), 0.0)?;
    Ok(f)
}

/// Solves `∂r/∂z · Z = −[∂r/∂d | ∂r/∂θ]` at a relaxed solution.
///
/// The FONC Jacobian does not depend on `d` or `τ`, so only `z`, `s`, `θ` are
/// needed. A singular Jacobian is reported as [`Error::Regularity`].
pub fn forward_sensitivities<N: ParametricNlp + ?Sized>(
    nlp: &N,
    z: &PrimalDualPoint,
    s: &[f64],
    theta: &[f64],
) -> Result<ForwardSensitivities> {
    let dims = nlp.dims();
    let fac = factor(nlp, &fonc_jacobian(nlp, z, s, theta, ColumnMode::Forward))?;
    let n_z = dims.n_z();
    let mut rhs = DMatrix::zeros(n_z, dims.n_a + dims.n_theta);
    for i in 0..dims.n_a {
        rhs[(i, i)] = -1.0;
    }
    for (r, c, v) in fonc_theta_jacobian(nlp, z, s, theta).iter() {
        rhs[(r, dims.n_a + c)] -= v;
    }
    let sol = fac.solve_matrix(&rhs);
    let dz_dd = sol.columns(0, dims.n_a).into_owned();
    let dz_dtheta = sol.columns(dims.n_a, dims.n_theta).into_owned();
    Ok(ForwardSensitivities {
        dg_dd: dz_dd.rows(0, dims.n_a).into_owned(),
        dg_dtheta: dz_dtheta.rows(0, dims.n_a).into_owned(),
        dz_dd,
        dz_dtheta,
    })
}

/// First-order reverse system, factored once.
struct ReverseSystem {
    fac: KktFactor,
    dzt_da: DMatrix<f64>,
    dzt_dtheta: DMatrix<f64>,
}

fn reverse_first_order<N: ParametricNlp + ?Sized>(
    nlp: &N,
    z: &PrimalDualPoint,
    s: &[f64],
    theta: &[f64],
) -> Result<ReverseSystem> {
    let dims = nlp.dims();
    let fwd = fonc_jacobian(nlp, z, s, theta, ColumnMode::Forward);
    let mut rev = fwd.clone();
    rev.retain(|_, c| c >= dims.n_a);
    for i in 0..dims.n_a {
        rev.push(i, i, 1.0);
    }
    let fac = match factor(nlp, &rev) {
        Ok(f) => f,
        Err(Error::Regularity) => {
            let dg_dd = forward_sensitivities(nlp, z, s, theta)?.dg_dd;
            return Err(Error::RankDeficient { condition: condition_number(&dg_dd) });
        }
        Err(e) => return Err(e),
    };
    let n_z = dims.n_z();
    let mut rhs = DMatrix::zeros(n_z, dims.n_a + dims.n_theta);
    for (r, c, v) in fwd.iter() {
        if c < dims.n_a {
            rhs[(r, c)] -= v;
        }
    }
    for (r, c, v) in fonc_theta_jacobian(nlp, z, s, theta).iter() {
        rhs[(r, dims.n_a + c)] -= v;
    }
    let sol = fac.solve_matrix(&rhs);
    Ok(ReverseSystem {
        dzt_da: sol.columns(0, dims.n_a).into_owned(),
        dzt_dtheta: sol.columns(dims.n_a, dims.n_theta).into_owned(),
        fac,
    })
}

/// Reverse sensitivities at a relaxed solution `z` with `a = u₀`.
///
/// The second-order blocks solve `J̃ · ∂²z̃/∂θᵢ∂a = −(DᵢJ) Ŷ`, where `Ŷ` is
/// `∂z̃/∂a` with its leading rows replaced by the identity (the action is the
/// independent variable) and `DᵢJ` is the derivative of the FONC Jacobian
/// along `(∂z̃/∂θᵢ, eᵢ)` taken by central differences. Fails with
/// [`Error::RankDeficient`] when `∂g/∂d` is singular.
pub fn reverse_sensitivities<N: ParametricNlp + ?Sized>(
    nlp: &N,
    z: &PrimalDualPoint,
    s: &[f64],
    theta: &[f64],
) -> Result<ReverseSensitivities> {
    let dims = nlp.dims();
    let sys = reverse_first_order(nlp, z, s, theta)?;
    let n_a = dims.n_a;

    let mut y_hat = sys.dzt_da.clone();
    y_hat.rows_mut(0, n_a).fill_with_identity();

    let zt = z.to_z();
    let eps = JACOBIAN_FD_STEP;
    let mut second = Vec::with_capacity(dims.n_theta);
    for i in 0..dims.n_theta {
        let mut dir = sys.dzt_dtheta.column(i).into_owned();
        dir.rows_mut(0, n_a).fill(0.0);
        let zp = PrimalDualPoint::from_z(&dims, (&zt + eps * &dir).as_slice());
        let zm = PrimalDualPoint::from_z(&dims, (&zt - eps * &dir).as_slice());
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[i] += eps;
        tm[i] -= eps;
        let jp = fonc_jacobian(nlp, &zp, s, &tp, ColumnMode::Forward);
        let jm = fonc_jacobian(nlp, &zm, s, &tm, ColumnMode::Forward);
        let mut rhs = jm.mul_dense(&y_hat);
        rhs -= jp.mul_dense(&y_hat);
        rhs /= 2.0 * eps;
        second.push(sys.fac.solve_matrix(&rhs));
    }
    Ok(ReverseSensitivities {
        dginv_da: sys.dzt_da.rows(0, n_a).into_owned(),
        dginv_dtheta: sys.dzt_dtheta.rows(0, n_a).into_owned(),
        dzt_da: sys.dzt_da,
        dzt_dtheta: sys.dzt_dtheta,
        second,
    })
}

/// `X` with `∂g/∂d · X = ∂g/∂θ`, by LU or, when that fails, least squares.
fn solve_dgdd(dg_dd: &DMatrix<f64>, dg_dtheta: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    if let Some(x) = dg_dd.clone().lu().solve(dg_dtheta) {
        if x.iter().all(|v| v.is_finite()) {
            return (x, false);
        }
    }
    (pinv_solve(dg_dd, dg_dtheta, PINV_CUTOFF), true)
}

/// `(∂g/∂d)⁻¹ ∂g/∂θ` from forward sensitivities, with the least-squares
/// fallback on a singular `∂g/∂d`.
pub fn inverse_map_product<N: ParametricNlp + ?Sized>(
    nlp: &N,
    z: &PrimalDualPoint,
    s: &[f64],
    theta: &[f64],
) -> Result<(DMatrix<f64>, bool)> {
    let fwd = forward_sensitivities(nlp, z, s, theta)?;
    Ok(solve_dgdd(&fwd.dg_dd, &fwd.dg_dtheta))
}

/// Score gradient at a sample `a = g(s, θ, d)` whose relaxed solution is `z`.
pub fn score_gradient<N: ParametricNlp + ?Sized>(
    nlp: &N,
    z: &PrimalDualPoint,
    s: &[f64],
    theta: &[f64],
    d: &[f64],
    density: &DisturbanceDensity,
) -> Result<ScoreGradient> {
    let dims = nlp.dims();
    if d.len() != dims.n_a || density.dim() != dims.n_a {
        return Err(Error::Dimension(format!(
            "disturbance {} / density {} / action {}",
            d.len(),
            density.dim(),
            dims.n_a
        )));
    }
    let fwd = forward_sensitivities(nlp, z, s, theta)?;
    let sv = fwd.dg_dd.singular_values();
    let (min_sv, max_sv) = (sv.min(), sv.max());
    let rev = reverse_sensitivities(nlp, z, s, theta)?;

    let trace_term = DVector::from_iterator(
        dims.n_theta,
        (0..dims.n_theta).map(|i| (&fwd.dg_dd * rev.dginv_da_dtheta(i)).trace()),
    );
    let (x, used_pseudo_inverse) = solve_dgdd(&fwd.dg_dd, &fwd.dg_dtheta);
    let grad_log = density.grad_log_pdf(&DVector::from_column_slice(d));
    let density_term = x.tr_mul(&grad_log);
    Ok(ScoreGradient {
        score: &trace_term - &density_term,
        trace_term,
        density_term,
        min_sv_dgdd: min_sv,
        condition_dgdd: if min_sv == 0.0 { f64::INFINITY } else { max_sv / min_sv },
        used_pseudo_inverse,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ip_solver::{solve_nlp, SolverOptions};
    use crate::toy::{DiskQp, ScalarQp, UnconstrainedQuadratic};

    #[test]
    fn unconstrained_blocks_are_signed_identities() {
        let nlp = UnconstrainedQuadratic { n: 2 };
        let theta = [0.3, -0.7];
        let (z, _) = solve_nlp(&nlp, &[], &theta, &[0.1, 0.2], 1e-2, None, &SolverOptions::default()).unwrap();
        let fwd = forward_sensitivities(&nlp, &z, &[], &theta).unwrap();
        let id = DMatrix::<f64>::identity(2, 2);
        assert!((&fwd.dg_dd + &id).amax() < 1e-14);
        assert!((&fwd.dg_dtheta - &id).amax() < 1e-14);
        let rev = reverse_sensitivities(&nlp, &z, &[], &theta).unwrap();
        assert!((&rev.dginv_da + &id).amax() < 1e-14);
        assert!((&rev.dginv_dtheta - &id).amax() < 1e-14);
        assert!(rev.second.iter().all(|m| m.amax() < 1e-9));
    }

    #[test]
    fn lemma_identities_on_disk() {
        let theta = [0.9, 0.4, 1.0];
        let (z, _) = solve_nlp(&DiskQp, &[], &theta, &[0.05, -0.1], 1e-2, None, &SolverOptions::default()).unwrap();
        let fwd = forward_sensitivities(&DiskQp, &z, &[], &theta).unwrap();
        let rev = reverse_sensitivities(&DiskQp, &z, &[], &theta).unwrap();
        let prod = &rev.dginv_da * &fwd.dg_dd;
        assert!((prod - DMatrix::<f64>::identity(2, 2)).amax() < 1e-10);
        let lhs = -fwd.dg_dd.clone().lu().solve(&fwd.dg_dtheta).unwrap();
        assert!((lhs - &rev.dginv_dtheta).amax() < 1e-10);
    }

    #[test]
    fn scalar_forward_matches_closed_form() {
        // ½(u−2)² + du s.t. u ≤ 1: (u − 2 + d)(u − 1) = τ, so
        // ∂u/∂d = −(u − 1)/(2u − 3 + d).
        let (tau, d) = (1e-2, 0.3);
        let (z, _) = solve_nlp(&ScalarQp::upper(), &[], &[2.0, 1.0], &[d], tau, None, &SolverOptions::default()).unwrap();
        let u = z.w[0];
        let fwd = forward_sensitivities(&ScalarQp::upper(), &z, &[], &[2.0, 1.0]).unwrap();
        let exact = -(u - 1.0) / (2.0 * u - 3.0 + d);
        assert!((fwd.dg_dd[(0, 0)] - exact).abs() < 1e-12 * exact.abs().max(1.0));
    }
}
