use nalgebra::DVector;

use super::{NlpDims, ParametricNlp, PrimalDualPoint};
use crate::error::{Error, Result};
use crate::linalg::Triplets;

/// Which unknowns the Jacobian columns refer to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ColumnMode {
    /// `z = (w, λ, μ)`
    Forward,
    /// `z̃`: the `u₀` columns are replaced by the disturbance `d`, all other
    /// unknowns unchanged.
    Reverse,
}

pub(crate) struct Evaluation {
    pub residual: DVector<f64>,
    pub h: DVector<f64>,
    pub jf: Triplets,
    pub jh: Triplets,
}

pub(crate) fn check_interior(h: &DVector<f64>, mu: &DVector<f64>) -> Result<()> {
    if let Some(i) = h.iter().position(|&v| !(v < 0.0)) {
        return Err(Error::NotInterior(format!("h[{i}] = {:.3e}", h[i])));
    }
    if let Some(i) = mu.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NotInterior(format!("mu[{i}] = {:.3e}", mu[i])));
    }
    Ok(())
}

pub(crate) fn check_dims(dims: &NlpDims, z: &PrimalDualPoint, s: &[f64], theta: &[f64], d: &[f64]) -> Result<()> {
    if z.w.len() != dims.n_w || z.lam.len() != dims.n_f || z.mu.len() != dims.n_h {
        return Err(Error::Dimension(format!(
            "point has ({}, {}, {}), problem expects ({}, {}, {})",
            z.w.len(),
            z.lam.len(),
            z.mu.len(),
            dims.n_w,
            dims.n_f,
            dims.n_h
        )));
    }
    if s.len() != dims.n_s || theta.len() != dims.n_theta {
        return Err(Error::Dimension(format!(
            "state/parameter lengths ({}, {}), expected ({}, {})",
            s.len(),
            theta.len(),
            dims.n_s,
            dims.n_theta
        )));
    }
    if !d.is_empty() && d.len() != dims.n_a {
        return Err(Error::Dimension(format!("disturbance has {} entries, expected {}", d.len(), dims.n_a)));
    }
    Ok(())
}

/// Evaluates `r_τ` without the interiority check.
pub(crate) fn evaluate<N: ParametricNlp + ?Sized>(
    nlp: &N,
    z: &PrimalDualPoint,
    s: &[f64],
    theta: &[f64],
    d: &[f64],
    tau: f64,
) -> Evaluation {
    let dims = nlp.dims();
    let w = z.w.as_slice();
    let jf = nlp.eq_jac(w, s, theta);
    let jh = nlp.ineq_jac(w, s, theta);
    let h = nlp.ineq(w, s, theta);
    let mut residual = DVector::zeros(dims.n_z());
    {
        let r = residual.as_mut_slice();
        let (stat, rest) = r.split_at_mut(dims.n_w);
        let (prim, comp) = rest.split_at_mut(dims.n_f);
        stat.copy_from_slice(nlp.cost_grad(w, s, theta).as_slice());
        for (i, di) in d.iter().enumerate() {
            stat[i] += di;
        }
        jf.tr_mul_add(z.lam.as_slice(), stat);
        jh.tr_mul_add(z.mu.as_slice(), stat);
        prim.copy_from_slice(nlp.eq(w, s, theta).as_slice());
        for i in 0..dims.n_h {
            comp[i] = z.mu[i] * h[i] + tau;
        }
    }
    Evaluation { residual, h, jf, jh }
}

/// Stacked relaxed first-order residual `r_τ(z, θ, d)`.
///
/// Rejects points that are not strictly interior (`h < 0`, `μ > 0`). An empty
/// `d` means no disturbance.
pub fn assemble_residual<N: ParametricNlp + ?Sized>(
    nlp: &N,
    z: &PrimalDualPoint,
    s: &[f64],
    theta: &[f64],
    d: &[f64],
    tau: f64,
) -> Result<DVector<f64>> {
    let dims = nlp.dims();
    check_dims(&dims, z, s, theta, d)?;
    let e = evaluate(nlp, z, s, theta, d, tau);
    check_interior(&e.h, &z.mu)?;
    Ok(e.residual)
}

pub(crate) fn jacobian_from_parts(
    dims: &NlpDims,
    z: &PrimalDualPoint,
    hess: &Triplets,
    jf: &Triplets,
    jh: &Triplets,
    h: &DVector<f64>,
    mode: ColumnMode,
) -> Triplets {
    let n = dims.n_z();
    let (ow, ol, om) = (0, dims.n_w, dims.n_w + dims.n_f);
    let mut j = Triplets::with_capacity(n, n, hess.nnz() + 2 * jf.nnz() + 2 * jh.nnz() + dims.n_h + dims.n_a);
    j.extend_shifted(hess, ow, ow, 1.0);
    j.extend_transposed(jf, ow, ol, 1.0);
    j.extend_shifted(jf, ol, ow, 1.0);
    j.extend_transposed(jh, ow, om, 1.0);
    for (r, c, v) in jh.iter() {
        j.push(om + r, c, z.mu[r] * v);
    }
    for i in 0..dims.n_h {
        j.push(om + i, om + i, h[i]);
    }
    if mode == ColumnMode::Reverse {
        let n_a = dims.n_a;
        j.retain(|_, c| c >= n_a);
        for i in 0..n_a {
            j.push(i, i, 1.0);
        }
    }
    j
}

/// `∂r_τ/∂z` (or `∂r_τ/∂z̃` in reverse mode), n_z × n_z.
pub fn fonc_jacobian<N: ParametricNlp + ?Sized>(
    nlp: &N,
    z: &PrimalDualPoint,
    s: &[f64],
    theta: &[f64],
    mode: ColumnMode,
) -> Triplets {
    let dims = nlp.dims();
    let w = z.w.as_slice();
    let hess = nlp.lagrangian_hessian(w, z.lam.as_slice(), z.mu.as_slice(), s, theta);
    let jf = nlp.eq_jac(w, s, theta);
    let jh = nlp.ineq_jac(w, s, theta);
    let h = nlp.ineq(w, s, theta);
    jacobian_from_parts(&dims, z, &hess, &jf, &jh, &h, mode)
}

/// `∂r_τ/∂θ`, n_z × n_θ.
pub fn fonc_theta_jacobian<N: ParametricNlp + ?Sized>(
    nlp: &N,
    z: &PrimalDualPoint,
    s: &[f64],
    theta: &[f64],
) -> Triplets {
    let dims = nlp.dims();
    let w = z.w.as_slice();
    let mut j = Triplets::new(dims.n_z(), dims.n_theta);
    j.extend_shifted(&nlp.lagrangian_theta_jac(w, z.lam.as_slice(), z.mu.as_slice(), s, theta), 0, 0, 1.0);
    j.extend_shifted(&nlp.eq_theta_jac(w, s, theta), dims.n_w, 0, 1.0);
    let om = dims.n_w + dims.n_f;
    for (r, c, v) in nlp.ineq_theta_jac(w, s, theta).iter() {
        j.push(om + r, c, z.mu[r] * v);
    }
    j
}
