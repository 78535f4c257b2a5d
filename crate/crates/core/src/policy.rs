//! The safe stochastic policy `a = g(s, θ, d)`, `d ~ ϱ`, its density by
//! change of variables, and the resampling oracle used to validate it.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::ip_solver::{solve_nlp, NlpDims, ParametricNlp, PrimalDualPoint, SolverOptions, SolverReport};
use crate::linalg::{KktStructure, Triplets};
use crate::sensitivities::{reverse_sensitivities, ReverseSensitivities};

/// Zero-mean Gaussian density with covariance `σΣ`.
#[derive(Clone, Debug)]
pub struct DisturbanceDensity {
    shape: DMatrix<f64>,
    sigma: f64,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
}

impl DisturbanceDensity {
    pub fn new(shape: DMatrix<f64>, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) || !shape.is_square() {
            return Err(Error::Config(format!("invalid exploration density: σ = {sigma}, shape {:?}", shape.shape())));
        }
        let cov = &shape * sigma;
        let chol = cov
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Config("exploration shape is not positive definite".into()))?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let n = shape.nrows() as f64;
        Ok(Self {
            precision: chol.inverse(),
            chol: l,
            log_norm: -0.5 * n * (2.0 * std::f64::consts::PI).ln() - 0.5 * log_det,
            shape,
            sigma,
        })
    }

    /// `σI` in `n` dimensions.
    pub fn isotropic(n: usize, sigma: f64) -> Result<Self> {
        Self::new(DMatrix::identity(n, n), sigma)
    }

    pub fn dim(&self) -> usize {
        self.shape.nrows()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn shape(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn log_pdf(&self, d: &DVector<f64>) -> f64 {
        self.log_norm - 0.5 * d.dot(&(&self.precision * d))
    }

    pub fn pdf(&self, d: &DVector<f64>) -> f64 {
        self.log_pdf(d).exp()
    }

    pub fn grad_log_pdf(&self, d: &DVector<f64>) -> DVector<f64> {
        -(&self.precision * d)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let xi = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.chol * xi
    }
}

/// One draw of the policy.
#[derive(Clone, Debug)]
pub struct ActionSample {
    pub a: DVector<f64>,
    pub d: DVector<f64>,
    pub z: PrimalDualPoint,
    pub report: SolverReport,
}

/// `log π(a | s)` together with the reverse solve that produced it.
#[derive(Clone, Debug)]
pub struct LogDensity {
    pub log_pi: f64,
    /// `g⁻¹(a)`
    pub d: DVector<f64>,
    /// Relaxed solution of the disturbed problem at `d`.
    pub z: PrimalDualPoint,
    pub reverse: ReverseSensitivities,
}

#[derive(Clone, Debug)]
pub struct StochasticPolicy<N> {
    pub nlp: N,
    pub density: DisturbanceDensity,
    pub tau: f64,
    pub options: SolverOptions,
}

impl<N: ParametricNlp> StochasticPolicy<N> {
    pub fn new(nlp: N, density: DisturbanceDensity, tau: f64) -> Result<Self> {
        if density.dim() != nlp.dims().n_a {
            return Err(Error::Dimension(format!(
                "density has dimension {}, policy acts in {}",
                density.dim(),
                nlp.dims().n_a
            )));
        }
        Ok(Self { nlp, density, tau, options: SolverOptions::default() })
    }

    /// `g(s, θ, d)` for a given disturbance.
    pub fn act(
        &self,
        s: &[f64],
        theta: &[f64],
        d: DVector<f64>,
        warm_start: Option<&PrimalDualPoint>,
    ) -> Result<ActionSample> {
        let (z, report) = solve_nlp(&self.nlp, s, theta, d.as_slice(), self.tau, warm_start, &self.options)?;
        Ok(ActionSample { a: z.action(self.nlp.dims().n_a), d, z, report })
    }

    /// Draws `d ~ ϱ` and solves the disturbed problem.
    pub fn sample_action<R: Rng + ?Sized>(
        &self,
        s: &[f64],
        theta: &[f64],
        rng: &mut R,
        warm_start: Option<&PrimalDualPoint>,
    ) -> Result<ActionSample> {
        let d = self.density.sample(rng);
        self.act(s, theta, d, warm_start)
    }

    /// `log π(a | s) = log ϱ(g⁻¹(a)) + log|det ∂g⁻¹/∂a|`.
    ///
    /// `g⁻¹(a)` is recovered by solving the problem with `u₀ = a` imposed;
    /// the multipliers of that constraint are the disturbance. A warm start
    /// must be a point of the unpinned problem (for instance the forward
    /// solution that produced `a`).
    pub fn log_density(
        &self,
        a: &DVector<f64>,
        s: &[f64],
        theta: &[f64],
        warm_start: Option<&PrimalDualPoint>,
    ) -> Result<LogDensity> {
        let dims = self.nlp.dims();
        let pinned = PinnedAction::new(&self.nlp, a.clone())?;
        let warm = warm_start.map(|z| pinned.extend_point(z, &DVector::zeros(dims.n_a)));
        let (zp, _) = solve_nlp(&pinned, s, theta, &[], self.tau, warm.as_ref(), &self.options)?;
        let (z, d) = pinned.split_point(&zp);
        let reverse = reverse_sensitivities(&self.nlp, &z, s, theta)?;
        let det = reverse.dginv_da.determinant();
        if !(det.abs() > 0.0) || !det.is_finite() {
            return Err(Error::RankDeficient { condition: f64::INFINITY });
        }
        Ok(LogDensity { log_pi: self.density.log_pdf(&d) + det.abs().ln(), d, z, reverse })
    }
}

/// The wrapped problem with the extra equality `u₀ − a = 0`, appended after
/// the original equalities.
#[derive(Clone, Debug)]
pub struct PinnedAction<N> {
    inner: N,
    a: DVector<f64>,
    dims: NlpDims,
}

impl<N: ParametricNlp> PinnedAction<N> {
    pub fn new(inner: N, a: DVector<f64>) -> Result<Self> {
        let d = inner.dims();
        if a.len() != d.n_a {
            return Err(Error::Dimension(format!("action has {} entries, expected {}", a.len(), d.n_a)));
        }
        Ok(Self { dims: NlpDims { n_f: d.n_f + d.n_a, ..d }, inner, a })
    }

    fn n_f0(&self) -> usize {
        self.dims.n_f - self.dims.n_a
    }

    /// Point of the pinned problem from a point of the original one and
    /// multipliers `ν` of the pin.
    pub fn extend_point(&self, z: &PrimalDualPoint, nu: &DVector<f64>) -> PrimalDualPoint {
        let mut w = z.w.clone();
        w.rows_mut(0, self.dims.n_a).copy_from(&self.a);
        let mut lam = DVector::zeros(self.dims.n_f);
        lam.rows_mut(0, self.n_f0()).copy_from(&z.lam);
        lam.rows_mut(self.n_f0(), self.dims.n_a).copy_from(nu);
        PrimalDualPoint { w, lam, mu: z.mu.clone() }
    }

    /// Splits a pinned point into the original point and the disturbance.
    pub fn split_point(&self, zp: &PrimalDualPoint) -> (PrimalDualPoint, DVector<f64>) {
        let n_f0 = self.n_f0();
        let z = PrimalDualPoint { w: zp.w.clone(), lam: zp.lam.rows(0, n_f0).into_owned(), mu: zp.mu.clone() };
        (z, zp.lam.rows(n_f0, self.dims.n_a).into_owned())
    }
}

impl<N: ParametricNlp> ParametricNlp for PinnedAction<N> {
    fn dims(&self) -> NlpDims {
        self.dims
    }
    fn cost(&self, w: &[f64], s: &[f64], theta: &[f64]) -> f64 {
        self.inner.cost(w, s, theta)
    }
    fn cost_grad(&self, w: &[f64], s: &[f64], theta: &[f64]) -> DVector<f64> {
        self.inner.cost_grad(w, s, theta)
    }
    fn eq(&self, w: &[f64], s: &[f64], theta: &[f64]) -> DVector<f64> {
        let f0 = self.inner.eq(w, s, theta);
        let mut f = DVector::zeros(self.dims.n_f);
        f.rows_mut(0, self.n_f0()).copy_from(&f0);
        for i in 0..self.dims.n_a {
            f[self.n_f0() + i] = w[i] - self.a[i];
        }
        f
    }
    fn eq_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(self.dims.n_f, self.dims.n_w);
        t.extend_shifted(&self.inner.eq_jac(w, s, theta), 0, 0, 1.0);
        for i in 0..self.dims.n_a {
            t.push(self.n_f0() + i, i, 1.0);
        }
        t
    }
    fn ineq(&self, w: &[f64], s: &[f64], theta: &[f64]) -> DVector<f64> {
        self.inner.ineq(w, s, theta)
    }
    fn ineq_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        self.inner.ineq_jac(w, s, theta)
    }
    fn lagrangian_hessian(&self, w: &[f64], lam: &[f64], mu: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        self.inner.lagrangian_hessian(w, &lam[..self.n_f0()], mu, s, theta)
    }
    fn lagrangian_theta_jac(&self, w: &[f64], lam: &[f64], mu: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        self.inner.lagrangian_theta_jac(w, &lam[..self.n_f0()], mu, s, theta)
    }
    fn eq_theta_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        let mut t = Triplets::new(self.dims.n_f, self.dims.n_theta);
        t.extend_shifted(&self.inner.eq_theta_jac(w, s, theta), 0, 0, 1.0);
        t
    }
    fn ineq_theta_jac(&self, w: &[f64], s: &[f64], theta: &[f64]) -> Triplets {
        self.inner.ineq_theta_jac(w, s, theta)
    }
    fn initial_primal(&self, s: &[f64], theta: &[f64]) -> DVector<f64> {
        let mut w = self.inner.initial_primal(s, theta);
        w.rows_mut(0, self.dims.n_a).copy_from(&self.a);
        w
    }
    fn kkt_structure(&self) -> KktStructure {
        match self.inner.kkt_structure() {
            KktStructure::Banded { order } => {
                // the pin rows couple only to u₀, so they go right before it
                let pins = (0..self.dims.n_a).map(|i| self.dims.n_w + self.n_f0() + i);
                let at = order.iter().position(|&i| i == 0).unwrap_or(0);
                let mut out = Vec::with_capacity(order.len() + self.dims.n_a);
                out.extend_from_slice(&order[..at]);
                out.extend(pins);
                out.extend_from_slice(&order[at..]);
                KktStructure::Banded { order: out }
            }
            _ => KktStructure::Dense,
        }
    }
    fn shift_primal(&self, w: &[f64]) -> DVector<f64> {
        self.inner.shift_primal(w)
    }
}

/// Accepted draws of the resampling policy and the empirical acceptance rate.
#[derive(Clone, Debug)]
pub struct ResamplingSample {
    pub samples: Vec<DVector<f64>>,
    pub draws: usize,
    pub acceptance_rate: f64,
}

/// Draws `a ~ ϱ(· − center)` until `n` draws satisfy `h(s, a, θ) ≤ 0`.
///
/// Only static problems (the decision vector is the action) qualify. Gives up
/// with [`Error::Config`] once the acceptance rate is provably below `1e-3`.
pub fn resampling_oracle<N: ParametricNlp + ?Sized, R: Rng + ?Sized>(
    nlp: &N,
    s: &[f64],
    theta: &[f64],
    center: &DVector<f64>,
    proposal: &DisturbanceDensity,
    n: usize,
    rng: &mut R,
) -> Result<ResamplingSample> {
    let dims = nlp.dims();
    if dims.n_w != dims.n_a || center.len() != dims.n_a || proposal.dim() != dims.n_a {
        return Err(Error::Dimension("resampling needs a static problem with matching proposal".into()));
    }
    let budget = n.saturating_mul(1000).max(1000);
    let mut samples = Vec::with_capacity(n);
    let mut draws = 0;
    while samples.len() < n {
        if draws >= budget {
            return Err(Error::Config(format!(
                "resampling acceptance below 1e-3 ({} of {draws} draws accepted)",
                samples.len()
            )));
        }
        draws += 1;
        let a = center + proposal.sample(rng);
        if nlp.ineq(a.as_slice(), s, theta).iter().all(|&h| h <= 0.0) {
            samples.push(a);
        }
    }
    Ok(ResamplingSample { acceptance_rate: n as f64 / draws as f64, samples, draws })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::{ScalarQp, UnconstrainedQuadratic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gaussian_peak_value() {
        let rho = DisturbanceDensity::isotropic(1, 1e-3).unwrap();
        let peak = rho.pdf(&DVector::zeros(1));
        assert!((peak - 1.0 / (2.0 * std::f64::consts::PI * 1e-3).sqrt()).abs() < 1e-12);
        assert!((peak - 12.6157).abs() < 1e-4);
    }

    #[test]
    fn unconstrained_action_is_shifted_center() {
        let pol =
            StochasticPolicy::new(UnconstrainedQuadratic { n: 2 }, DisturbanceDensity::isotropic(2, 1e-3).unwrap(), 1e-2)
                .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = [0.4, -0.1];
        let smp = pol.sample_action(&[], &c, &mut rng, None).unwrap();
        for i in 0..2 {
            assert!((smp.a[i] - (c[i] - smp.d[i])).abs() < 1e-14);
        }
    }

    #[test]
    fn round_trip_recovers_disturbance() {
        let pol = StochasticPolicy::new(ScalarQp::upper(), DisturbanceDensity::isotropic(1, 1e-3).unwrap(), 1e-2).unwrap();
        let theta = [0.0, 0.05];
        let d = DVector::from_element(1, -0.04);
        let smp = pol.act(&[], &theta, d.clone(), None).unwrap();
        let cold = pol.log_density(&smp.a, &[], &theta, None).unwrap();
        let warm = pol.log_density(&smp.a, &[], &theta, Some(&smp.z)).unwrap();
        assert!((cold.d[0] - d[0]).abs() < 1e-9);
        assert!((warm.d[0] - d[0]).abs() < 1e-9);
        assert!((cold.log_pi - warm.log_pi).abs() < 1e-8);
    }

    #[test]
    fn everything_accepted_without_constraints() {
        let prop = DisturbanceDensity::isotropic(2, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out =
            resampling_oracle(&UnconstrainedQuadratic { n: 2 }, &[], &[0.0, 0.0], &DVector::zeros(2), &prop, 100, &mut rng)
                .unwrap();
        assert_eq!(out.draws, 100);
        assert_eq!(out.acceptance_rate, 1.0);
    }
}
