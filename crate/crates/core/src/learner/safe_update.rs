use std::collections::VecDeque;

use log::{debug, warn};
use nalgebra::DVector;

use super::membership::{membership_check, MEMBERSHIP_TOL};
use crate::critic::TransitionRecord;
use crate::error::{Error, Result};
use crate::ip_solver::{solve_nlp, NlpDims, ParametricNlp, PrimalDualPoint, SolverOptions, SolverReport};
use crate::linalg::{KktStructure, Triplets};
use crate::robust_mpc::{PolicyParams, ThetaLayout};

/// An observed `(s, a, s₊)` triple.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub s: DVector<f64>,
    pub a: DVector<f64>,
    pub s_next: DVector<f64>,
}

impl From<&TransitionRecord> for Transition {
    fn from(r: &TransitionRecord) -> Self {
        Self { s: r.s.clone(), a: r.a.clone(), s_next: r.s_next.clone() }
    }
}

/// Transitions that every update must keep explainable by the model.
/// Oldest entries are evicted once `cap` is reached.
#[derive(Clone, Debug)]
pub struct ConstraintDataset {
    cap: usize,
    items: VecDeque<Transition>,
}

impl ConstraintDataset {
    pub fn new(cap: usize) -> Self {
        Self { cap, items: VecDeque::new() }
    }

    pub fn cap(&self) -> usize {
        self.cap
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.cap == 0 {
            return;
        }
        if self.items.len() == self.cap {
            self.items.pop_front();
        }
        self.items.push_back(t);
    }

    pub fn extend<I: IntoIterator<Item = Transition>>(&mut self, it: I) {
        for t in it {
            self.push(t);
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }
}

/// Residual `s₊ − A₀s − B₀a − b₀` of every transition under `params`.
pub fn dataset_residuals<'a>(
    data: impl IntoIterator<Item = &'a Transition>,
    params: &PolicyParams,
) -> Vec<DVector<f64>> {
    data.into_iter()
        .map(|t| &t.s_next - &params.a0 * &t.s - &params.b0 * &t.a - &params.bias)
        .collect()
}

/// Number of residuals of `data` outside `conv(W(θ))`.
pub fn count_outside(data: &[Transition], layout: ThetaLayout, theta: &[f64]) -> Result<usize> {
    Ok(outside_indices(data, layout, theta)?.len())
}

/// Indices of the transitions whose residual lies outside `conv(W)`.
pub fn outside_indices(data: &[Transition], layout: ThetaLayout, theta: &[f64]) -> Result<Vec<usize>> {
    let params = PolicyParams::unflatten(layout, theta)?;
    Ok(dataset_residuals(data, &params)
        .iter()
        .enumerate()
        .filter(|(_, r)| !membership_check(r, &params.vertices).inside)
        .map(|(k, _)| k)
        .collect())
}

/// The constrained step as a smooth NLP in `w = (θ, ϑ₀, ϑ₁, …)`.
///
/// Transition `k` contributes the equalities
/// `s₊ − A₀s − B₀a − b₀ − Σ_{i∈F_k} ϑᵢWⁱ = 0`, `Σ ϑᵢ − 1 = 0` and, when
/// `bounds` is set, `−ϑᵢ ≤ 0`. `F_k` lists the vertices allowed to carry
/// weight. All data lives in the struct; `s` and `θ` of the trait are empty.
#[derive(Clone, Debug)]
pub struct SafeUpdateNlp {
    layout: ThetaLayout,
    theta_prev: DVector<f64>,
    /// `α ∇̂J`
    step_grad: DVector<f64>,
    data: Vec<Transition>,
    supports: Vec<Vec<usize>>,
    /// Offset of `ϑ_k` inside `w`.
    offsets: Vec<usize>,
    bounds: bool,
    /// `1 / ‖α ∇̂J‖²`: the solver sees the objective in units of the plain
    /// step length, so a fixed relaxation is small relative to it whatever
    /// the gradient magnitude.
    scale: f64,
}

impl SafeUpdateNlp {
    pub fn new(layout: ThetaLayout, theta_prev: &[f64], grad: &[f64], alpha: f64, data: Vec<Transition>) -> Self {
        let supports = vec![(0..layout.n_models).collect(); data.len()];
        Self::with_supports(layout, theta_prev, grad, alpha, data, supports, true)
    }

    pub fn with_supports(
        layout: ThetaLayout,
        theta_prev: &[f64],
        grad: &[f64],
        alpha: f64,
        data: Vec<Transition>,
        supports: Vec<Vec<usize>>,
        bounds: bool,
    ) -> Self {
        let n_theta = layout.len();
        let mut offsets = Vec::with_capacity(supports.len());
        let mut off = n_theta;
        for f in &supports {
            offsets.push(off);
            off += f.len();
        }
        let step_grad = DVector::from_column_slice(grad) * alpha;
        let len2 = step_grad.norm_squared();
        let scale = if len2 > 0.0 && len2.is_finite() { len2.recip() } else { 1.0 };
        Self { layout, theta_prev: DVector::from_column_slice(theta_prev), step_grad, data, supports, offsets, bounds, scale }
    }

    fn n(&self) -> usize {
        self.layout.n
    }

    fn n_theta(&self) -> usize {
        self.layout.len()
    }

    fn n_vars(&self) -> usize {
        self.n_theta() + self.supports.iter().map(Vec::len).sum::<usize>()
    }

    /// Equality row block of transition `k`.
    fn row(&self, k: usize) -> usize {
        k * (self.n() + 1)
    }

    /// `½‖θ − θ₋‖² + α∇̂Jᵀ(θ − θ₋)`
    pub fn objective(&self, theta: &[f64]) -> f64 {
        let dt = DVector::from_column_slice(theta) - &self.theta_prev;
        0.5 * dt.norm_squared() + self.step_grad.dot(&dt)
    }

    /// Primal point from `θ` and per-transition weights over the supports.
    pub fn primal(&self, theta: &[f64], weights: &[DVector<f64>]) -> DVector<f64> {
        let mut w = DVector::zeros(self.n_vars());
        w.rows_mut(0, self.n_theta()).copy_from_slice(theta);
        for (k, f) in self.supports.iter().enumerate() {
            for (l, &i) in f.iter().enumerate() {
                w[self.offsets[k] + l] = weights[k][i];
            }
        }
        w
    }

    /// Full `V`-vectors of weights from a primal point.
    pub fn weights(&self, w: &[f64]) -> Vec<DVector<f64>> {
        self.supports
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let mut v = DVector::zeros(self.layout.n_models);
                for (l, &i) in f.iter().enumerate() {
                    v[i] = w[self.offsets[k] + l];
                }
                v
            })
            .collect()
    }
}

impl ParametricNlp for SafeUpdateNlp {
    fn dims(&self) -> NlpDims {
        let n_h = if self.bounds { self.n_vars() - self.n_theta() } else { 0 };
        NlpDims { n_w: self.n_vars(), n_f: self.data.len() * (self.n() + 1), n_h, n_a: 0, n_s: 0, n_theta: 0 }
    }

    fn cost(&self, w: &[f64], _s: &[f64], _theta: &[f64]) -> f64 {
        self.scale * self.objective(&w[..self.n_theta()])
    }

    fn cost_grad(&self, w: &[f64], _s: &[f64], _theta: &[f64]) -> DVector<f64> {
        let nt = self.n_theta();
        let mut g = DVector::zeros(self.n_vars());
        for i in 0..nt {
            g[i] = self.scale * (w[i] - self.theta_prev[i] + self.step_grad[i]);
        }
        g
    }

    fn eq(&self, w: &[f64], _s: &[f64], _theta: &[f64]) -> DVector<f64> {
        let n = self.n();
        let params = PolicyParams::unflatten(self.layout, &w[..self.n_theta()]).expect("layout matches");
        let res = dataset_residuals(&self.data, &params);
        let mut f = DVector::zeros(self.data.len() * (n + 1));
        for (k, r) in res.iter().enumerate() {
            let row = self.row(k);
            let mut e = r.clone();
            let mut sum = -1.0;
            for (l, &i) in self.supports[k].iter().enumerate() {
                let t = w[self.offsets[k] + l];
                e.axpy(-t, &params.vertices[i], 1.0);
                sum += t;
            }
            f.rows_mut(row, n).copy_from(&e);
            f[row + n] = sum;
        }
        f
    }

    fn eq_jac(&self, w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let l = self.layout;
        let n = self.n();
        let mut t = Triplets::new(self.dims().n_f, self.n_vars());
        for (k, tr) in self.data.iter().enumerate() {
            let row = self.row(k);
            for p in 0..n {
                for q in 0..n {
                    t.push(row + p, l.a0(p, q), -tr.s[q]);
                }
                for q in 0..l.n_a {
                    t.push(row + p, l.b0(p, q), -tr.a[q]);
                }
                t.push(row + p, l.bias(p), -1.0);
            }
            for (m, &i) in self.supports[k].iter().enumerate() {
                let col = self.offsets[k] + m;
                let theta_ik = w[col];
                for p in 0..n {
                    t.push(row + p, l.w(i + 1, p), -theta_ik);
                    t.push(row + p, col, -w[l.w(i + 1, p)]);
                }
                t.push(row + n, col, 1.0);
            }
        }
        t
    }

    fn ineq(&self, w: &[f64], _s: &[f64], _theta: &[f64]) -> DVector<f64> {
        if !self.bounds {
            return DVector::zeros(0);
        }
        -DVector::from_column_slice(&w[self.n_theta()..])
    }

    fn ineq_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let n_h = self.dims().n_h;
        let mut t = Triplets::new(n_h, self.n_vars());
        for i in 0..n_h {
            t.push(i, self.n_theta() + i, -1.0);
        }
        t
    }

    fn lagrangian_hessian(&self, _w: &[f64], lam: &[f64], _mu: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let l = self.layout;
        let n = self.n();
        let mut t = Triplets::new(self.n_vars(), self.n_vars());
        for i in 0..self.n_theta() {
            t.push(i, i, self.scale);
        }
        for (k, f) in self.supports.iter().enumerate() {
            let row = self.row(k);
            for (m, &i) in f.iter().enumerate() {
                let col = self.offsets[k] + m;
                for p in 0..n {
                    t.push(l.w(i + 1, p), col, -lam[row + p]);
                    t.push(col, l.w(i + 1, p), -lam[row + p]);
                }
            }
        }
        t
    }

    fn lagrangian_theta_jac(&self, _w: &[f64], _lam: &[f64], _mu: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        Triplets::new(self.n_vars(), 0)
    }

    fn eq_theta_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        Triplets::new(self.dims().n_f, 0)
    }

    fn ineq_theta_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        Triplets::new(self.dims().n_h, 0)
    }

    /// `θ₋` with uniform weights.
    fn initial_primal(&self, _s: &[f64], _theta: &[f64]) -> DVector<f64> {
        let mut w = DVector::zeros(self.n_vars());
        w.rows_mut(0, self.n_theta()).copy_from(&self.theta_prev);
        for (k, f) in self.supports.iter().enumerate() {
            for m in 0..f.len() {
                w[self.offsets[k] + m] = 1.0 / f.len() as f64;
            }
        }
        w
    }

    /// Arrowhead form: `θ` is the border, each transition's weights and
    /// multipliers form a block. The blocks are invertible only with bounds
    /// and at least `n + 1` vertices per transition.
    fn kkt_structure(&self) -> KktStructure {
        let n = self.n();
        if !self.bounds || self.supports.iter().any(|f| f.len() < n + 1) {
            return KktStructure::Dense;
        }
        let n_w = self.n_vars();
        let blocks = self
            .supports
            .iter()
            .enumerate()
            .map(|(k, f)| {
                (self.offsets[k]..self.offsets[k] + f.len())
                    .chain(n_w + self.row(k)..n_w + self.row(k) + n + 1)
                    .collect()
            })
            .collect();
        KktStructure::Bordered { blocks, border: (0..self.n_theta()).collect() }
    }
}

#[derive(Clone, Debug)]
pub struct SafeUpdateOptions {
    /// Final relaxation of the interior-point solve.
    pub tau: f64,
    pub solver: SolverOptions,
    /// Largest number of boundary transitions handed to the exact
    /// active-set refinement.
    pub polish_limit: usize,
    /// Rounds of growing the constrained set before giving up.
    pub max_rounds: usize,
}

impl Default for SafeUpdateOptions {
    fn default() -> Self {
        Self {
            tau: 1e-6,
            solver: SolverOptions {
                continuation: vec![1e-1, 1e-2, 1e-3, 1e-4, 1e-5],
                max_iter: 300,
                regularization: 1e-6,
                ..SolverOptions::default()
            },
            polish_limit: 150,
            max_rounds: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateMethod {
    /// All residuals already inside at the plain gradient step.
    Plain,
    InteriorPoint,
    /// Interior-point solution refined on its active set.
    ActiveSet,
    Rejected,
}

#[derive(Clone, Debug)]
pub struct SafeUpdateOutcome {
    pub theta: Vec<f64>,
    pub accepted: bool,
    pub method: UpdateMethod,
    pub objective: f64,
    pub iterations: usize,
    /// Why the update was rejected.
    pub reason: Option<String>,
}

/// Constrained parameter step keeping every residual of `data` inside the
/// (moving) vertex polytope.
///
/// The plain step is returned as is when it keeps every residual inside.
/// Otherwise only the offending transitions are constrained at first; the
/// set grows with whatever the full-dataset audit finds outside.
///
/// Returns `θ₋` with `accepted = false` when no solution is found, the
/// solution fails the membership audit, or a feasible `θ₋` would score
/// better.
pub fn safe_update(
    layout: ThetaLayout,
    theta_prev: &[f64],
    grad: &[f64],
    alpha: f64,
    data: &[Transition],
    opts: &SafeUpdateOptions,
) -> Result<SafeUpdateOutcome> {
    let nt = layout.len();
    if theta_prev.len() != nt || grad.len() != nt {
        return Err(Error::Dimension(format!(
            "θ₋ has {}, gradient {} entries, layout expects {nt}",
            theta_prev.len(),
            grad.len()
        )));
    }
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("step size must be non-negative, got {alpha}")));
    }
    if layout.n_models == 0 && !data.is_empty() {
        return Err(Error::Config("membership needs at least one vertex".into()));
    }
    let plain: Vec<f64> = theta_prev.iter().zip(grad).map(|(t, g)| t - alpha * g).collect();
    let mut working = outside_indices(data, layout, &plain)?;
    if working.is_empty() {
        let nlp = SafeUpdateNlp::new(layout, theta_prev, grad, alpha, Vec::new());
        return Ok(SafeUpdateOutcome {
            objective: nlp.objective(&plain),
            theta: plain,
            accepted: true,
            method: UpdateMethod::Plain,
            iterations: 0,
            reason: None,
        });
    }

    let reject = |reason: String| {
        warn!("safe update rejected: {reason}");
        SafeUpdateOutcome {
            theta: theta_prev.to_vec(),
            accepted: false,
            method: UpdateMethod::Rejected,
            objective: 0.0,
            iterations: 0,
            reason: Some(reason),
        }
    };
    // Only transitions that leave the polytope somewhere along the way are
    // constrained; each round audits the whole dataset and grows the set.
    let mut iterations = 0;
    for _ in 0..opts.max_rounds {
        let sub: Vec<Transition> = working.iter().map(|&k| data[k].clone()).collect();
        let nlp = SafeUpdateNlp::new(layout, theta_prev, grad, alpha, sub.clone());
        let (z, report) = match solve_relaxed(&nlp, opts) {
            Ok(r) => r,
            Err(e) => return Ok(reject(format!("interior-point solve failed: {e}"))),
        };
        iterations += report.iterations;
        let (theta, method) = match active_set_refine(&nlp, &z, layout, theta_prev, grad, alpha, &sub, opts) {
            Some((theta, its)) => {
                iterations += its;
                (theta, UpdateMethod::ActiveSet)
            }
            None => (z.w.as_slice()[..nt].to_vec(), UpdateMethod::InteriorPoint),
        };
        let missed = outside_indices(data, layout, &theta)?;
        if missed.is_empty() {
            let objective = nlp.objective(&theta);
            // θ₋ itself scores 0, so when it is feasible a positive value is no solution
            if objective > 0.0 && count_outside(data, layout, theta_prev)? == 0 {
                return Ok(reject(format!("constrained step is worse than staying (objective {objective:.3e})")));
            }
            return Ok(SafeUpdateOutcome { theta, accepted: true, method, objective, iterations, reason: None });
        }
        let before = working.len();
        working.extend(missed);
        working.sort_unstable();
        working.dedup();
        if working.len() == before {
            return Ok(reject(format!("residuals of constrained transitions outside the polytope after the solve ({method:?})")));
        }
        debug!("safe update: working set grows from {before} to {} transitions", working.len());
    }
    Ok(reject(format!("working set still growing after {} rounds", opts.max_rounds)))
}

/// Solves at the target relaxation, retrying at looser ones when the solve
/// stalls. A looser point is still strictly feasible, so the membership audit
/// downstream stays meaningful; it is only further from the exact step.
fn solve_relaxed(nlp: &SafeUpdateNlp, opts: &SafeUpdateOptions) -> Result<(PrimalDualPoint, SolverReport)> {
    let mut last = None;
    for tau in std::iter::once(opts.tau).chain([1e-5, 1e-4, 1e-3].into_iter().filter(|&t| t > opts.tau)) {
        let mut solver = opts.solver.clone();
        solver.continuation.retain(|&c| c > tau);
        match solve_nlp(nlp, &[], &[], &[], tau, None, &solver) {
            Ok(r) => return Ok(r),
            Err(e) => {
                debug!("safe update solve at τ = {tau:e} failed: {e}");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one relaxation is tried"))
}

/// Re-solves the step on the active set read off the interior-point
/// solution: weights with `ϑᵢ < μᵢ` fixed at zero and interior transitions
/// dropped. Supports are corrected a few times (negative weights leave,
/// wrong-signed bound multipliers enter) before giving up. `None` when no
/// support certifies.
#[allow(clippy::too_many_arguments)]
fn active_set_refine(
    nlp: &SafeUpdateNlp,
    z: &PrimalDualPoint,
    layout: ThetaLayout,
    theta_prev: &[f64],
    grad: &[f64],
    alpha: f64,
    data: &[Transition],
    opts: &SafeUpdateOptions,
) -> Option<(Vec<f64>, usize)> {
    let nt = layout.len();
    let v = layout.n_models;
    let n = layout.n;
    let weights = nlp.weights(z.w.as_slice());
    let mut boundary = Vec::new();
    let mut supports = Vec::new();
    for (k, wk) in weights.iter().enumerate() {
        let free: Vec<usize> = (0..v).filter(|&i| wk[i] >= z.mu[k * v + i]).collect();
        if free.len() < v {
            boundary.push(k);
            supports.push(free);
        }
    }
    if boundary.is_empty() || boundary.len() > opts.polish_limit {
        debug!("active-set refinement skipped: {} boundary transitions", boundary.len());
        return None;
    }
    let sub: Vec<Transition> = boundary.iter().map(|&k| data[k].clone()).collect();
    let mut theta = z.w.as_slice()[..nt].to_vec();
    let mut init: Vec<DVector<f64>> = boundary.iter().map(|&k| weights[k].clone()).collect();
    let mut lam: Vec<DVector<f64>> = boundary.iter().map(|&k| z.lam.rows(k * (n + 1), n + 1).into_owned()).collect();
    let mut iterations = 0;
    for _ in 0..4 {
        if supports.iter().any(Vec::is_empty) {
            return None;
        }
        let eq_nlp = SafeUpdateNlp::with_supports(layout, theta_prev, grad, alpha, sub.clone(), supports.clone(), false);
        let start = PrimalDualPoint {
            w: eq_nlp.primal(&theta, &init),
            lam: DVector::from_iterator(lam.len() * (n + 1), lam.iter().flat_map(|l| l.iter().copied())),
            mu: DVector::zeros(0),
        };
        let eq_opts = SolverOptions { max_iter: 30, ..opts.solver.clone() };
        let (zp, rep) = match solve_nlp(&eq_nlp, &[], &[], &[], 1.0, Some(&start), &eq_opts) {
            Ok(r) => r,
            Err(e) => {
                debug!("active-set refinement failed: {e}");
                return None;
            }
        };
        iterations += rep.iterations;
        theta = zp.w.as_slice()[..nt].to_vec();
        init = eq_nlp.weights(zp.w.as_slice());
        lam = (0..boundary.len()).map(|b| zp.lam.rows(b * (n + 1), n + 1).into_owned()).collect();
        let params = PolicyParams::unflatten(layout, &theta).ok()?;
        let mut changed = false;
        for (b, f) in supports.iter_mut().enumerate() {
            let before = f.len();
            f.retain(|&i| init[b][i] >= -MEMBERSHIP_TOL);
            if f.len() < before {
                changed = true;
                continue;
            }
            let (lx, ls) = (lam[b].rows(0, n), lam[b][n]);
            let worst = (0..v)
                .filter(|i| !f.contains(i))
                .map(|i| (i, ls - params.vertices[i].dot(&lx)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((i, m)) = worst {
                if m < -MEMBERSHIP_TOL {
                    f.push(i);
                    f.sort_unstable();
                    changed = true;
                }
            }
        }
        for w in init.iter_mut() {
            w.iter_mut().for_each(|x| *x = x.max(0.0));
        }
        if changed {
            debug!("active-set refinement: support corrected");
            continue;
        }
        return (count_outside(data, layout, &theta).ok()? == 0).then_some((theta, iterations));
    }
    None
}

/// Step size with halving on rejection and reset after an accepted update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepSize {
    pub base: f64,
    pub current: f64,
}

impl StepSize {
    pub fn new(base: f64) -> Self {
        Self { base, current: base }
    }

    pub fn record(&mut self, accepted: bool) {
        self.current = if accepted { self.base } else { 0.5 * self.current };
    }
}

#[cfg(test)]
mod tests {
    use nalgebra::DMatrix;

    use super::*;
    use crate::ip_solver::derivative_check;

    fn params() -> PolicyParams {
        let (sb, cb) = 20f64.to_radians().sin_cos();
        PolicyParams {
            x_bar: DVector::zeros(2),
            u_bar: DVector::zeros(2),
            a0: DMatrix::from_row_slice(2, 2, &[cb, sb, sb, cb]),
            b0: DMatrix::identity(2, 2),
            bias: DVector::zeros(2),
            k: DMatrix::zeros(2, 2),
            vertices: [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
                .iter()
                .map(|&(a, b)| DVector::from_column_slice(&[0.1 * a, 0.1 * b]))
                .collect(),
        }
    }

    fn transition(p: &PolicyParams, s: [f64; 2], a: [f64; 2], offset: [f64; 2]) -> Transition {
        let s = DVector::from_column_slice(&s);
        let a = DVector::from_column_slice(&a);
        let s_next = &p.a0 * &s + &p.b0 * &a + &p.bias + DVector::from_column_slice(&offset);
        Transition { s, a, s_next }
    }

    #[test]
    fn callbacks_match_finite_differences() {
        let p = params();
        let theta = p.flatten();
        let data = vec![transition(&p, [0.3, -0.2], [0.1, 0.4], [0.05, 0.0]), transition(&p, [0.5, 0.5], [0.0, -0.1], [0.0, 0.09])];
        let grad: Vec<f64> = (0..theta.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let nlp = SafeUpdateNlp::new(p.layout(), &theta, &grad, 0.3, data);
        let mut w = nlp.initial_primal(&[], &[]);
        for (i, x) in w.iter_mut().enumerate() {
            *x += 0.01 * (i as f64 * 1.3).cos();
        }
        let dims = nlp.dims();
        let lam = DVector::from_fn(dims.n_f, |i, _| 0.2 * (i as f64).sin());
        let mu = DVector::from_element(dims.n_h, 0.5);
        let rep = derivative_check(&nlp, &PrimalDualPoint::new(w, lam, mu), &[], &[], 1e-6);
        assert!(rep.max() < 1e-7, "{rep:?}");
    }

    #[test]
    fn bordered_structure_matches_dense_solve() {
        let p = params();
        let theta = p.flatten();
        let data = vec![transition(&p, [0.3, -0.2], [0.1, 0.4], [0.15, 0.0])];
        let grad = vec![0.0; theta.len()];
        let nlp = SafeUpdateNlp::new(p.layout(), &theta, &grad, 1.0, data);
        assert!(matches!(nlp.kkt_structure(), KktStructure::Bordered { .. }));
        let opts = SafeUpdateOptions::default();
        let (z, _) = solve_nlp(&nlp, &[], &[], &[], 1e-4, None, &opts.solver).unwrap();
        let (zd, _) = solve_nlp(&DenseView(&nlp), &[], &[], &[], 1e-4, None, &opts.solver).unwrap();
        assert!((z.w - zd.w).amax() < 1e-9);
    }

    struct DenseView<'a>(&'a SafeUpdateNlp);

    impl ParametricNlp for DenseView<'_> {
        fn dims(&self) -> NlpDims {
            self.0.dims()
        }
        fn cost(&self, w: &[f64], s: &[f64], t: &[f64]) -> f64 {
            self.0.cost(w, s, t)
        }
        fn cost_grad(&self, w: &[f64], s: &[f64], t: &[f64]) -> DVector<f64> {
            self.0.cost_grad(w, s, t)
        }
        fn eq(&self, w: &[f64], s: &[f64], t: &[f64]) -> DVector<f64> {
            self.0.eq(w, s, t)
        }
        fn eq_jac(&self, w: &[f64], s: &[f64], t: &[f64]) -> Triplets {
            self.0.eq_jac(w, s, t)
        }
        fn ineq(&self, w: &[f64], s: &[f64], t: &[f64]) -> DVector<f64> {
            self.0.ineq(w, s, t)
        }
        fn ineq_jac(&self, w: &[f64], s: &[f64], t: &[f64]) -> Triplets {
            self.0.ineq_jac(w, s, t)
        }
        fn lagrangian_hessian(&self, w: &[f64], l: &[f64], m: &[f64], s: &[f64], t: &[f64]) -> Triplets {
            self.0.lagrangian_hessian(w, l, m, s, t)
        }
        fn lagrangian_theta_jac(&self, w: &[f64], l: &[f64], m: &[f64], s: &[f64], t: &[f64]) -> Triplets {
            self.0.lagrangian_theta_jac(w, l, m, s, t)
        }
        fn eq_theta_jac(&self, w: &[f64], s: &[f64], t: &[f64]) -> Triplets {
            self.0.eq_theta_jac(w, s, t)
        }
        fn ineq_theta_jac(&self, w: &[f64], s: &[f64], t: &[f64]) -> Triplets {
            self.0.ineq_theta_jac(w, s, t)
        }
        fn initial_primal(&self, s: &[f64], t: &[f64]) -> DVector<f64> {
            self.0.initial_primal(s, t)
        }
    }

    #[test]
    fn empty_dataset_is_plain_step() {
        let p = params();
        let theta = p.flatten();
        let grad: Vec<f64> = (0..theta.len()).map(|i| i as f64 * 0.01).collect();
        let out = safe_update(p.layout(), &theta, &grad, 0.05, &[], &SafeUpdateOptions::default()).unwrap();
        assert_eq!(out.method, UpdateMethod::Plain);
        for i in 0..theta.len() {
            assert_eq!(out.theta[i], theta[i] - 0.05 * grad[i]);
        }
    }

    #[test]
    fn zero_step_keeps_parameters() {
        let p = params();
        let theta = p.flatten();
        let data = vec![transition(&p, [0.3, -0.2], [0.1, 0.4], [0.1, 0.1])];
        let grad = vec![1.0; theta.len()];
        let out = safe_update(p.layout(), &theta, &grad, 0.0, &data, &SafeUpdateOptions::default()).unwrap();
        assert!(out.accepted);
        assert_eq!(out.theta, theta);
    }

    #[test]
    fn constrained_step_restores_membership() {
        let p = params();
        let l = p.layout();
        let theta = p.flatten();
        let data = vec![
            transition(&p, [0.3, -0.2], [0.1, 0.4], [0.08, 0.02]),
            transition(&p, [-0.4, 0.1], [0.2, 0.0], [-0.05, 0.07]),
        ];
        // pushes b₀ so that the first residual leaves the square
        let mut grad = vec![0.0; theta.len()];
        grad[l.bias(0)] = -1.0;
        grad[l.w(1, 0)] = 0.5;
        let out = safe_update(l, &theta, &grad, 0.1, &data, &SafeUpdateOptions::default()).unwrap();
        assert!(out.accepted, "{:?}", out.reason);
        assert_ne!(out.method, UpdateMethod::Plain);
        assert_eq!(count_outside(&data, l, &out.theta).unwrap(), 0);
        assert!(out.objective <= 0.0);
    }

    #[test]
    fn dataset_evicts_oldest() {
        let p = params();
        let mut ds = ConstraintDataset::new(2);
        for i in 0..3 {
            ds.push(transition(&p, [i as f64, 0.0], [0.0, 0.0], [0.0, 0.0]));
        }
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.iter().next().unwrap().s[0], 1.0);
    }

    #[test]
    fn step_size_halves_and_resets() {
        let mut a = StepSize::new(0.05);
        a.record(false);
        a.record(false);
        assert_eq!(a.current, 0.0125);
        a.record(true);
        assert_eq!(a.current, 0.05);
    }
}
