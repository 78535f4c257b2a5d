use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{ParametricNlp, PrimalDualPoint};

#[derive(Clone, Debug)]
pub struct RegularityReport {
    /// Inequalities treated as active (`μᵢ ≥ -hᵢ`).
    pub active: Vec<usize>,
    /// Smallest singular value of the stacked equality/active-inequality
    /// Jacobian; `None` when there are no such constraints.
    pub licq_min_sv: Option<f64>,
    /// Smallest eigenvalue of the Lagrangian Hessian reduced to the null space
    /// of the constraint Jacobian; `None` when the null space is trivial.
    pub sosc_min_eig: Option<f64>,
    /// (positive, negative, zero) eigenvalue counts of the reduced Hessian.
    pub inertia: (usize, usize, usize),
}

/// LICQ / SOSC diagnostics at a relaxed solution.
pub fn check_regularity<N: ParametricNlp + ?Sized>(
    nlp: &N,
    z: &PrimalDualPoint,
    s: &[f64],
    theta: &[f64],
) -> RegularityReport {
    let dims = nlp.dims();
    let w = z.w.as_slice();
    let h = nlp.ineq(w, s, theta);
    let active: Vec<usize> = (0..dims.n_h).filter(|&i| z.mu[i] >= -h[i]).collect();
    let jf = nlp.eq_jac(w, s, theta).to_dense();
    let jh = nlp.ineq_jac(w, s, theta).to_dense();
    let m = dims.n_f + active.len();
    let mut a = DMatrix::zeros(m, dims.n_w);
    a.rows_mut(0, dims.n_f).copy_from(&jf);
    for (k, &i) in active.iter().enumerate() {
        a.row_mut(dims.n_f + k).copy_from(&jh.row(i));
    }

    let licq_min_sv = if m == 0 {
        None
    } else if m > dims.n_w {
        Some(0.0)
    } else {
        let gram = &a * a.transpose();
        let eig = SymmetricEigen::new(gram);
        Some(eig.eigenvalues.min().max(0.0).sqrt())
    };

    // null space of A from the eigenvectors of AᵀA
    let basis = if m == 0 {
        DMatrix::identity(dims.n_w, dims.n_w)
    } else {
        let eig = SymmetricEigen::new(a.transpose() * &a);
        let scale = eig.eigenvalues.amax().max(1.0);
        let cols: Vec<DVector<f64>> = (0..dims.n_w)
            .filter(|&k| eig.eigenvalues[k].abs() <= 1e-10 * scale)
            .map(|k| eig.eigenvectors.column(k).into_owned())
            .collect();
        if cols.is_empty() {
            DMatrix::zeros(dims.n_w, 0)
        } else {
            DMatrix::from_columns(&cols)
        }
    };
    let (sosc_min_eig, inertia) = if basis.ncols() == 0 {
        (None, (0, 0, 0))
    } else {
        let hess = nlp.lagrangian_hessian(w, z.lam.as_slice(), z.mu.as_slice(), s, theta).to_dense();
        let reduced = basis.transpose() * hess * &basis;
        let reduced = (&reduced + reduced.transpose()) * 0.5;
        let ev = SymmetricEigen::new(reduced).eigenvalues;
        let scale = ev.amax().max(1.0);
        let pos = ev.iter().filter(|&&v| v > 1e-10 * scale).count();
        let neg = ev.iter().filter(|&&v| v < -1e-10 * scale).count();
        (Some(ev.min()), (pos, neg, ev.len() - pos - neg))
    };
    RegularityReport { active, licq_min_sv, sosc_min_eig, inertia }
}

/// Largest scaled discrepancy `|analytic - fd| / (1 + |fd|)` per callback.
#[derive(Clone, Debug, Default)]
pub struct DerivativeReport {
    pub cost_grad: f64,
    pub eq_jac: f64,
    pub ineq_jac: f64,
    pub lagrangian_hessian: f64,
    pub lagrangian_theta_jac: f64,
    pub eq_theta_jac: f64,
    pub ineq_theta_jac: f64,
}

impl DerivativeReport {
    pub fn max(&self) -> f64 {
        [
            self.cost_grad,
            self.eq_jac,
            self.ineq_jac,
            self.lagrangian_hessian,
            self.lagrangian_theta_jac,
            self.eq_theta_jac,
            self.ineq_theta_jac,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

fn discrepancy(analytic: &DMatrix<f64>, fd: &DMatrix<f64>) -> f64 {
    analytic.zip_fold(fd, 0.0f64, |m, a, f| m.max((a - f).abs() / (1.0 + f.abs())))
}

/// Compares every derivative callback against central finite differences.
pub fn derivative_check<N: ParametricNlp + ?Sized>(
    nlp: &N,
    z: &PrimalDualPoint,
    s: &[f64],
    theta: &[f64],
    step: f64,
) -> DerivativeReport {
    let dims = nlp.dims();
    let (lam, mu) = (z.lam.as_slice(), z.mu.as_slice());
    let grad_l = |w: &[f64], th: &[f64]| -> DVector<f64> {
        let mut g = nlp.cost_grad(w, s, th);
        nlp.eq_jac(w, s, th).tr_mul_add(lam, g.as_mut_slice());
        nlp.ineq_jac(w, s, th).tr_mul_add(mu, g.as_mut_slice());
        g
    };
    let w0 = z.w.as_slice();

    let mut fd_grad = DMatrix::zeros(1, dims.n_w);
    let mut fd_jf = DMatrix::zeros(dims.n_f, dims.n_w);
    let mut fd_jh = DMatrix::zeros(dims.n_h, dims.n_w);
    let mut fd_hess = DMatrix::zeros(dims.n_w, dims.n_w);
    for j in 0..dims.n_w {
        let mut wp = w0.to_vec();
        let mut wm = w0.to_vec();
        wp[j] += step;
        wm[j] -= step;
        fd_grad[(0, j)] = (nlp.cost(&wp, s, theta) - nlp.cost(&wm, s, theta)) / (2.0 * step);
        fd_jf.set_column(j, &((nlp.eq(&wp, s, theta) - nlp.eq(&wm, s, theta)) / (2.0 * step)));
        fd_jh.set_column(j, &((nlp.ineq(&wp, s, theta) - nlp.ineq(&wm, s, theta)) / (2.0 * step)));
        fd_hess.set_column(j, &((grad_l(&wp, theta) - grad_l(&wm, theta)) / (2.0 * step)));
    }
    let mut fd_lt = DMatrix::zeros(dims.n_w, dims.n_theta);
    let mut fd_ft = DMatrix::zeros(dims.n_f, dims.n_theta);
    let mut fd_ht = DMatrix::zeros(dims.n_h, dims.n_theta);
    for j in 0..dims.n_theta {
        let mut tp = theta.to_vec();
        let mut tm = theta.to_vec();
        tp[j] += step;
        tm[j] -= step;
        fd_lt.set_column(j, &((grad_l(w0, &tp) - grad_l(w0, &tm)) / (2.0 * step)));
        fd_ft.set_column(j, &((nlp.eq(w0, s, &tp) - nlp.eq(w0, s, &tm)) / (2.0 * step)));
        fd_ht.set_column(j, &((nlp.ineq(w0, s, &tp) - nlp.ineq(w0, s, &tm)) / (2.0 * step)));
    }
    let grad = nlp.cost_grad(w0, s, theta).transpose();
    DerivativeReport {
        cost_grad: discrepancy(&DMatrix::from_row_slice(1, dims.n_w, grad.as_slice()), &fd_grad),
        eq_jac: discrepancy(&nlp.eq_jac(w0, s, theta).to_dense(), &fd_jf),
        ineq_jac: discrepancy(&nlp.ineq_jac(w0, s, theta).to_dense(), &fd_jh),
        lagrangian_hessian: discrepancy(&nlp.lagrangian_hessian(w0, lam, mu, s, theta).to_dense(), &fd_hess),
        lagrangian_theta_jac: discrepancy(&nlp.lagrangian_theta_jac(w0, lam, mu, s, theta).to_dense(), &fd_lt),
        eq_theta_jac: discrepancy(&nlp.eq_theta_jac(w0, s, theta).to_dense(), &fd_ft),
        ineq_theta_jac: discrepancy(&nlp.ineq_theta_jac(w0, s, theta).to_dense(), &fd_ht),
    }
}
