use log::{debug, trace};
use nalgebra::DVector;

use super::fonc::{check_dims, check_interior, evaluate, jacobian_from_parts, ColumnMode, Evaluation};
use super::{NlpDims, ParametricNlp, PrimalDualPoint};
use crate::error::{Error, Result};
use crate::linalg::{FactorError, KktFactor, KktStructure, Triplets};

#[derive(Clone, Debug)]
pub struct SolverOptions {
    /// Convergence threshold on `‖r_τ‖∞`.
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation values visited before the target `τ` on a cold start.
    pub continuation: Vec<f64>,
    /// Tolerance used at the intermediate continuation stages.
    pub continuation_tol: f64,
    /// Extra full Newton steps taken after convergence while they keep
    /// reducing the residual.
    pub polish_steps: usize,
    pub fraction_to_boundary: f64,
    /// Sufficient-decrease constant of the residual line search.
    pub armijo: f64,
    /// Diagonal shift applied only when a factorization breaks down.
    pub regularization: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            continuation: vec![1.0, 1e-1, 1e-2],
            continuation_tol: 1e-4,
            polish_steps: 2,
            fraction_to_boundary: 0.995,
            armijo: 1e-4,
            regularization: 1e-10,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolverReport {
    pub converged: bool,
    pub iterations: usize,
    /// `‖r_τ‖∞` at the returned point.
    pub residual_norm: f64,
    pub tau: f64,
    /// A factorization needed the diagonal shift.
    pub regularized: bool,
    /// `‖r_τ‖₂` at every accepted iterate of the final stage.
    pub residual_history: Vec<f64>,
    /// Smallest singular value of `∂g/∂d`, filled in by callers that compute
    /// sensitivities.
    pub min_sv_dgdd: Option<f64>,
}

pub(crate) fn factor_jacobian(
    dims: &NlpDims,
    jac: &Triplets,
    structure: &KktStructure,
    reg: f64,
) -> Result<(KktFactor, bool)> {
    let n_r = dims.n_w + dims.n_f;
    match KktFactor::factor(n_r, dims.n_h, jac.iter(), structure, dims.n_w, 0.0) {
        Ok(f) => Ok((f, false)),
        Err(FactorError::Structure(m)) => Err(Error::Structure(m)),
        Err(FactorError::Singular) => {
            debug!("Newton matrix singular, retrying with diagonal shift {reg:e}");
            match KktFactor::factor(n_r, dims.n_h, jac.iter(), structure, dims.n_w, reg) {
                Ok(f) => Ok((f, true)),
                Err(FactorError::Structure(m)) => Err(Error::Structure(m)),
                Err(FactorError::Singular) => Err(Error::Regularity),
            }
        }
    }
}

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

struct Stage<'a, N: ?Sized> {
    nlp: &'a N,
    dims: NlpDims,
    structure: KktStructure,
    s: &'a [f64],
    theta: &'a [f64],
    d: &'a [f64],
    opts: &'a SolverOptions,
}

struct StageResult {
    z: PrimalDualPoint,
    iterations: usize,
    residual: f64,
    converged: bool,
    regularized: bool,
    history: Vec<f64>,
}

impl<N: ParametricNlp + ?Sized> Stage<'_, N> {
    fn newton_direction(&self, z: &PrimalDualPoint, ev: &Evaluation) -> Result<(DVector<f64>, bool)> {
        let hess = self.nlp.lagrangian_hessian(z.w.as_slice(), z.lam.as_slice(), z.mu.as_slice(), self.s, self.theta);
        let jac = jacobian_from_parts(&self.dims, z, &hess, &ev.jf, &ev.jh, &ev.h, ColumnMode::Forward);
        let (fac, reg) = factor_jacobian(&self.dims, &jac, &self.structure, self.opts.regularization)?;
        let mut dz = -&ev.residual;
        fac.solve_in_place(dz.as_mut_slice());
        Ok((dz, reg))
    }

    fn step(&self, z: &PrimalDualPoint, dz: &DVector<f64>, alpha: f64) -> PrimalDualPoint {
        let n = &self.dims;
        PrimalDualPoint {
            w: &z.w + alpha * dz.rows(0, n.n_w),
            lam: &z.lam + alpha * dz.rows(n.n_w, n.n_f),
            mu: &z.mu + alpha * dz.rows(n.n_w + n.n_f, n.n_h),
        }
    }

    fn max_step(&self, z: &PrimalDualPoint, dz: &DVector<f64>) -> f64 {
        let off = self.dims.n_w + self.dims.n_f;
        let ftb = self.opts.fraction_to_boundary;
        let mut alpha = 1.0f64;
        for (i, &m) in z.mu.iter().enumerate() {
            let dm = dz[off + i];
            if dm < 0.0 {
                alpha = alpha.min(-ftb * m / dm);
            }
        }
        alpha
    }

    /// Slack must keep at least `1 - ftb` of its current value.
    fn keeps_interior(&self, h_old: &DVector<f64>, h_new: &DVector<f64>) -> bool {
        let keep = 1.0 - self.opts.fraction_to_boundary;
        h_new.iter().zip(h_old.iter()).all(|(&hn, &ho)| hn < 0.0 && hn <= keep * ho)
    }

    fn run(&self, mut z: PrimalDualPoint, tau: f64, tol: f64) -> Result<StageResult> {
        let mut ev = evaluate(self.nlp, &z, self.s, self.theta, self.d, tau);
        check_interior(&ev.h, &z.mu)?;
        let mut history = vec![ev.residual.norm()];
        let mut regularized = false;
        let mut it = 0;
        loop {
            let rinf = inf_norm(&ev.residual);
            if rinf <= tol {
                let (z, ev_res, reg) = self.polish(z, ev, tau)?;
                return Ok(StageResult {
                    residual: inf_norm(&ev_res.residual),
                    z,
                    iterations: it,
                    converged: true,
                    regularized: regularized || reg,
                    history,
                });
            }
            if it >= self.opts.max_iter {
                return Ok(StageResult { z, iterations: it, residual: rinf, converged: false, regularized, history });
            }
            it += 1;
            let (dz, reg) = self.newton_direction(&z, &ev)?;
            regularized |= reg;
            let phi = ev.residual.norm();
            let mut alpha = self.max_step(&z, &dz);
            let accepted = loop {
                let trial = self.step(&z, &dz, alpha);
                let h_trial = self.nlp.ineq(trial.w.as_slice(), self.s, self.theta);
                if self.keeps_interior(&ev.h, &h_trial) {
                    let ev_trial = evaluate(self.nlp, &trial, self.s, self.theta, self.d, tau);
                    let phi_trial = ev_trial.residual.norm();
                    if phi_trial <= (1.0 - self.opts.armijo * alpha) * phi {
                        break Some((trial, ev_trial));
                    }
                }
                alpha *= 0.5;
                if alpha < 1e-14 {
                    break None;
                }
            };
            let Some((zn, evn)) = accepted else {
                return Err(Error::LineSearch { residual: rinf });
            };
            trace!("iter {it}: alpha {alpha:.3e}, |r| {:.3e}", inf_norm(&evn.residual));
            z = zn;
            ev = evn;
            history.push(ev.residual.norm());
        }
    }

    fn polish(&self, mut z: PrimalDualPoint, mut ev: Evaluation, tau: f64) -> Result<(PrimalDualPoint, Evaluation, bool)> {
        let mut regularized = false;
        for _ in 0..self.opts.polish_steps {
            let rinf = inf_norm(&ev.residual);
            if rinf == 0.0 {
                break;
            }
            let Ok((dz, reg)) = self.newton_direction(&z, &ev) else { break };
            let alpha = self.max_step(&z, &dz);
            if alpha < 1.0 {
                break;
            }
            let trial = self.step(&z, &dz, 1.0);
            let ev_trial = evaluate(self.nlp, &trial, self.s, self.theta, self.d, tau);
            if !self.keeps_interior(&ev.h, &ev_trial.h) || inf_norm(&ev_trial.residual) >= rinf {
                break;
            }
            regularized |= reg;
            z = trial;
            ev = ev_trial;
        }
        Ok((z, ev, regularized))
    }
}

/// Solves `r_τ(z) = 0` at fixed `τ` by damped Newton with interior iterates.
///
/// Without a warm start the problem's `initial_primal` is used with
/// `λ = 0`, `μ = τ₀/(-h)` and the relaxation is driven down through
/// `opts.continuation` before the target `τ`. A warm start is solved at `τ`
/// directly. Non-convergence returns [`Error::NotConverged`] carrying the last
/// iterate.
pub fn solve_nlp<N: ParametricNlp + ?Sized>(
    nlp: &N,
    s: &[f64],
    theta: &[f64],
    d: &[f64],
    tau: f64,
    warm_start: Option<&PrimalDualPoint>,
    opts: &SolverOptions,
) -> Result<(PrimalDualPoint, SolverReport)> {
    if !(tau > 0.0) {
        return Err(Error::Config(format!("relaxation must be positive, got {tau}")));
    }
    let dims = nlp.dims();
    let stage = Stage { nlp, dims, structure: nlp.kkt_structure(), s, theta, d, opts };

    let (z0, taus) = match warm_start {
        Some(z) => {
            check_dims(&dims, z, s, theta, d)?;
            let h = nlp.ineq(z.w.as_slice(), s, theta);
            check_interior(&h, &z.mu)?;
            (z.clone(), vec![tau])
        }
        None => {
            let w = nlp.initial_primal(s, theta);
            let mut taus: Vec<f64> = opts.continuation.iter().copied().filter(|&t| t > tau).collect();
            taus.push(tau);
            let h = nlp.ineq(w.as_slice(), s, theta);
            if let Some(i) = h.iter().position(|&v| !(v < 0.0)) {
                return Err(Error::NotInterior(format!("initial primal violates h[{i}] = {:.3e}", h[i])));
            }
            let mu = h.map(|v| taus[0] / -v);
            let z = PrimalDualPoint { w, lam: DVector::zeros(dims.n_f), mu };
            check_dims(&dims, &z, s, theta, d)?;
            (z, taus)
        }
    };

    let mut z = z0;
    let mut report = SolverReport { tau, ..Default::default() };
    let last = taus.len() - 1;
    for (k, &t) in taus.iter().enumerate() {
        if k > 0 {
            // re-center the multipliers on the new relaxation
            let h = nlp.ineq(z.w.as_slice(), s, theta);
            z.mu = z.mu.zip_map(&h, |m, hv| (m * t / taus[k - 1]).max(0.1 * t / -hv));
        }
        let tol = if k == last { opts.tol } else { opts.continuation_tol.max(opts.tol) };
        let res = stage.run(z, t, tol)?;
        report.iterations += res.iterations;
        report.regularized |= res.regularized;
        if !res.converged {
            return Err(Error::NotConverged {
                iterations: report.iterations,
                residual: res.residual,
                last: Box::new(res.z),
            });
        }
        z = res.z;
        if k == last {
            report.converged = true;
            report.residual_norm = res.residual;
            report.residual_history = res.history;
        }
    }
    Ok((z, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{ScalarQp, UnconstrainedQuadratic};

    #[test]
    fn lower_bound_root() {
        // ½u² s.t. u ≥ −1: stationarity u = μ, complementarity μ(u + 1) = τ
        for tau in [1e-1, 1e-2, 1e-3] {
            let (z, rep) = solve_nlp(&ScalarQp::lower(), &[], &[0.0, 1.0], &[], tau, None, &SolverOptions::default()).unwrap();
            let exact = (-1.0 + (1.0f64 + 4.0 * tau).sqrt()) / 2.0;
            assert!((z.w[0] - exact).abs() < 1e-10, "tau {tau}: {} vs {exact}", z.w[0]);
            assert!(rep.converged && rep.residual_norm <= 1e-8);
        }
    }

    #[test]
    fn upper_bound_root_approaches_bound() {
        // ½(u−2)² s.t. u ≤ 1: (u − 2)(u − 1) = τ
        let mut prev = f64::NEG_INFINITY;
        for tau in [1e-1, 1e-2, 1e-3] {
            let (z, _) = solve_nlp(&ScalarQp::upper(), &[], &[2.0, 1.0], &[], tau, None, &SolverOptions::default()).unwrap();
            let exact = (3.0 - (1.0f64 + 4.0 * tau).sqrt()) / 2.0;
            assert!((z.w[0] - exact).abs() < 1e-10);
            assert!(z.w[0] > prev && z.w[0] < 1.0);
            prev = z.w[0];
        }
    }

    #[test]
    fn residual_history_is_monotone() {
        let (_, rep) = solve_nlp(&ScalarQp::upper(), &[], &[2.0, 1.0], &[], 1e-2, None, &SolverOptions::default()).unwrap();
        assert!(rep.residual_history.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn unconstrained_one_step() {
        let (z, rep) =
            solve_nlp(&UnconstrainedQuadratic { n: 2 }, &[], &[1.0, 2.0], &[], 1e-2, None, &SolverOptions::default()).unwrap();
        assert_eq!(z.w.as_slice(), &[1.0, 2.0]);
        assert!(z.lam.is_empty() && z.mu.is_empty());
        assert!(rep.iterations <= 1);
    }

    #[test]
    fn disturbance_shifts_unconstrained_minimizer() {
        let (z, _) =
            solve_nlp(&UnconstrainedQuadratic { n: 2 }, &[], &[1.0, 2.0], &[0.25, -0.5], 1e-2, None, &SolverOptions::default())
                .unwrap();
        assert!((z.w[0] - 0.75).abs() < 1e-14 && (z.w[1] - 2.5).abs() < 1e-14);
    }

    #[test]
    fn rejects_non_positive_tau() {
        assert!(matches!(
            solve_nlp(&ScalarQp::upper(), &[], &[2.0, 1.0], &[], 0.0, None, &SolverOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn warm_start_must_be_interior() {
        let bad = PrimalDualPoint::new(DVector::from_element(1, 1.5), DVector::zeros(0), DVector::from_element(1, 1.0));
        assert!(matches!(
            solve_nlp(&ScalarQp::upper(), &[], &[2.0, 1.0], &[], 1e-2, Some(&bad), &SolverOptions::default()),
            Err(Error::NotInterior(_))
        ));
    }

    #[test]
    fn iteration_cap_reports_last_iterate() {
        let opts = SolverOptions { max_iter: 1, continuation: vec![], ..Default::default() };
        match solve_nlp(&ScalarQp::upper(), &[], &[2.0, 1.0], &[], 1e-3, None, &opts) {
            Err(Error::NotConverged { last, .. }) => assert!(last.w[0] < 1.0),
            other => panic!("expected NotConverged, got {other:?}"),
        }
    }
}
