//! Multi-model robust linear MPC with an ancillary feedback law.
//!
//! Branch `j = 0` is the nominal model `x₊ = A₀x + B₀u + b₀`; branches
//! `j = 1..N_M` add the dispersion vertex `Wʲ`. Branch inputs follow
//! `u_{j,k} = u_{0,k} − K(x_{j,k} − x_{0,k})` and are substituted out, so the
//! decision vector is
//!
//! ```text
//! w = [u_{0,0}, …, u_{0,N−1}, x_{0,0}, …, x_{0,N}, x_{1,0}, …, x_{N_M,N}]
//! ```
//!
//! and non-anticipativity holds by construction.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ip_solver::{NlpDims, ParametricNlp};
use crate::linalg::{KktStructure, Triplets};

/// Offsets of the parameter blocks inside the flat `θ` vector.
///
/// Order: `x̄`, `ū`, `A₀` (row-major), `B₀` (row-major), `b₀`, `K`
/// (row-major, `n_a × n`), `W¹ … W^{N_M}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThetaLayout {
    pub n: usize,
    pub n_a: usize,
    pub n_models: usize,
}

impl ThetaLayout {
    pub fn x_bar(&self, p: usize) -> usize {
        p
    }
    pub fn u_bar(&self, p: usize) -> usize {
        self.n + p
    }
    pub fn a0(&self, p: usize, q: usize) -> usize {
        self.n + self.n_a + p * self.n + q
    }
    pub fn b0(&self, p: usize, q: usize) -> usize {
        self.n + self.n_a + self.n * self.n + p * self.n_a + q
    }
    pub fn bias(&self, p: usize) -> usize {
        self.n + self.n_a + self.n * self.n + self.n * self.n_a + p
    }
    pub fn k(&self, p: usize, q: usize) -> usize {
        2 * self.n + self.n_a + self.n * self.n + self.n * self.n_a + p * self.n + q
    }
    /// Entry `p` of vertex `Wʲ`, `j ≥ 1`.
    pub fn w(&self, j: usize, p: usize) -> usize {
        debug_assert!(j >= 1 && j <= self.n_models);
        2 * self.n + self.n_a + self.n * self.n + 2 * self.n * self.n_a + (j - 1) * self.n + p
    }
    pub fn len(&self) -> usize {
        2 * self.n + self.n_a + self.n * self.n + 2 * self.n * self.n_a + self.n_models * self.n
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Structured view of the learnable MPC parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams {
    pub x_bar: DVector<f64>,
    pub u_bar: DVector<f64>,
    pub a0: DMatrix<f64>,
    pub b0: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub k: DMatrix<f64>,
    /// `W¹ … W^{N_M}`; `W⁰ = 0` is implicit.
    pub vertices: Vec<DVector<f64>>,
}

impl PolicyParams {
    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout { n: self.x_bar.len(), n_a: self.u_bar.len(), n_models: self.vertices.len() }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let l = self.layout();
        let mut t = vec![0.0; l.len()];
        for p in 0..l.n {
            t[l.x_bar(p)] = self.x_bar[p];
            t[l.bias(p)] = self.bias[p];
            for q in 0..l.n {
                t[l.a0(p, q)] = self.a0[(p, q)];
            }
            for q in 0..l.n_a {
                t[l.b0(p, q)] = self.b0[(p, q)];
            }
            for (j, v) in self.vertices.iter().enumerate() {
                t[l.w(j + 1, p)] = v[p];
            }
        }
        for p in 0..l.n_a {
            t[l.u_bar(p)] = self.u_bar[p];
            for q in 0..l.n {
                t[l.k(p, q)] = self.k[(p, q)];
            }
        }
        t
    }

    pub fn unflatten(layout: ThetaLayout, theta: &[f64]) -> Result<Self> {
        if theta.len() != layout.len() {
            return Err(Error::Dimension(format!("θ has {} entries, layout expects {}", theta.len(), layout.len())));
        }
        let ThetaLayout { n, n_a, n_models } = layout;
        Ok(Self {
            x_bar: DVector::from_fn(n, |p, _| theta[layout.x_bar(p)]),
            u_bar: DVector::from_fn(n_a, |p, _| theta[layout.u_bar(p)]),
            a0: DMatrix::from_fn(n, n, |p, q| theta[layout.a0(p, q)]),
            b0: DMatrix::from_fn(n, n_a, |p, q| theta[layout.b0(p, q)]),
            bias: DVector::from_fn(n, |p, _| theta[layout.bias(p)]),
            k: DMatrix::from_fn(n_a, n, |p, q| theta[layout.k(p, q)]),
            vertices: (1..=n_models).map(|j| DVector::from_fn(n, |p, _| theta[layout.w(j, p)])).collect(),
        })
    }

    /// Vertex `Wʲ` with `W⁰ = 0`.
    pub fn vertex(&self, j: usize) -> DVector<f64> {
        if j == 0 {
            DVector::zeros(self.x_bar.len())
        } else {
            self.vertices[j - 1].clone()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MpcConfig {
    /// Prediction horizon `N`.
    pub horizon: usize,
    /// Number of dispersion vertices `N_M`.
    pub n_models: usize,
    pub n: usize,
    pub n_a: usize,
}

impl MpcConfig {
    pub fn layout(&self) -> ThetaLayout {
        ThetaLayout { n: self.n, n_a: self.n_a, n_models: self.n_models }
    }
}

/// The scenario-tree MPC as a [`ParametricNlp`] in `(s, θ)`, with the unit
/// ball state constraint `‖x_{j,k}‖² ≤ 1` for `k = 1..N`.
#[derive(Clone, Debug)]
pub struct ScenarioMpc {
    cfg: MpcConfig,
    layout: ThetaLayout,
    order: Vec<usize>,
}

/// θ unpacked once per callback.
struct Model {
    x_bar: DVector<f64>,
    u_bar: DVector<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    bias: DVector<f64>,
    k: DMatrix<f64>,
    w: Vec<DVector<f64>>,
}

pub fn build_scenario_nlp(cfg: MpcConfig) -> Result<ScenarioMpc> {
    ScenarioMpc::new(cfg)
}

impl ScenarioMpc {
    pub fn new(cfg: MpcConfig) -> Result<Self> {
        if cfg.horizon == 0 || cfg.n == 0 || cfg.n_a == 0 {
            return Err(Error::Config(format!("degenerate MPC dimensions {cfg:?}")));
        }
        let mut mpc = Self { cfg, layout: cfg.layout(), order: Vec::new() };
        mpc.order = mpc.stage_order();
        Ok(mpc)
    }

    pub fn config(&self) -> &MpcConfig {
        &self.cfg
    }

    pub fn layout(&self) -> ThetaLayout {
        self.layout
    }

    /// Offset of `u_{0,k}` in `w`.
    pub fn iu(&self, k: usize) -> usize {
        k * self.cfg.n_a
    }

    /// Offset of `x_{j,k}` in `w`.
    pub fn ix(&self, j: usize, k: usize) -> usize {
        self.cfg.horizon * self.cfg.n_a + (j * (self.cfg.horizon + 1) + k) * self.cfg.n
    }

    /// Offset of the equality block defining `x_{j,k}`.
    pub fn row_f(&self, j: usize, k: usize) -> usize {
        (j * (self.cfg.horizon + 1) + k) * self.cfg.n
    }

    /// Index of `‖x_{j,k}‖² ≤ 1`, `k ≥ 1`.
    pub fn row_h(&self, j: usize, k: usize) -> usize {
        j * self.cfg.horizon + k - 1
    }

    fn models(&self) -> usize {
        self.cfg.n_models + 1
    }

    fn stage_order(&self) -> Vec<usize> {
        let MpcConfig { horizon, n, n_a, .. } = self.cfg;
        let n_w = self.dims().n_w;
        let mut order = Vec::with_capacity(n_w + self.dims().n_f);
        for k in 0..=horizon {
            for j in 0..self.models() {
                order.extend((0..n).map(|p| n_w + self.row_f(j, k) + p));
            }
            for j in 0..self.models() {
                order.extend((0..n).map(|p| self.ix(j, k) + p));
            }
            if k < horizon {
                order.extend((0..n_a).map(|p| self.iu(k) + p));
            }
        }
        order
    }

    fn model(&self, theta: &[f64]) -> Model {
        let l = self.layout;
        let (n, n_a) = (l.n, l.n_a);
        Model {
            x_bar: DVector::from_fn(n, |p, _| theta[l.x_bar(p)]),
            u_bar: DVector::from_fn(n_a, |p, _| theta[l.u_bar(p)]),
            a: DMatrix::from_fn(n, n, |p, q| theta[l.a0(p, q)]),
            b: DMatrix::from_fn(n, n_a, |p, q| theta[l.b0(p, q)]),
            bias: DVector::from_fn(n, |p, _| theta[l.bias(p)]),
            k: DMatrix::from_fn(n_a, n, |p, q| theta[l.k(p, q)]),
            w: (0..self.models())
                .map(|j| if j == 0 { DVector::zeros(n) } else { DVector::from_fn(n, |p, _| theta[l.w(j, p)]) })
                .collect(),
        }
    }

    fn x(&self, w: &[f64], j: usize, k: usize) -> DVector<f64> {
        DVector::from_column_slice(&w[self.ix(j, k)..self.ix(j, k) + self.cfg.n])
    }

    fn u0(&self, w: &[f64], k: usize) -> DVector<f64> {
        DVector::from_column_slice(&w[self.iu(k)..self.iu(k) + self.cfg.n_a])
    }

    /// `x_{j,k} − x_{0,k}`
    fn dx(&self, w: &[f64], j: usize, k: usize) -> DVector<f64> {
        self.x(w, j, k) - self.x(w, 0, k)
    }

    /// Branch input `u_{j,k}`.
    fn u(&self, w: &[f64], m: &Model, j: usize, k: usize) -> DVector<f64> {
        let u = self.u0(w, k);
        if j == 0 {
            u
        } else {
            u - &m.k * self.dx(w, j, k)
        }
    }

    /// Branch input trajectories `u_{j,k}` of a solution, indexed `[j][k]`.
    pub fn branch_inputs(&self, w: &[f64], theta: &[f64]) -> Vec<Vec<DVector<f64>>> {
        let m = self.model(theta);
        (0..self.models()).map(|j| (0..self.cfg.horizon).map(|k| self.u(w, &m, j, k)).collect()).collect()
    }

    /// Predicted states `x_{j,k}` of a solution, indexed `[j][k]`.
    pub fn branch_states(&self, w: &[f64]) -> Vec<Vec<DVector<f64>>> {
        (0..self.models()).map(|j| (0..=self.cfg.horizon).map(|k| self.x(w, j, k)).collect()).collect()
    }
}

fn push_vec(t: &mut Triplets, r0: usize, c: usize, v: &DVector<f64>, scale: f64) {
    for (p, &x) in v.iter().enumerate() {
        t.push(r0 + p, c, scale * x);
    }
}

impl ParametricNlp for ScenarioMpc {
    fn dims(&self) -> NlpDims {
        let MpcConfig { horizon, n_models, n, n_a } = self.cfg;
        let nodes = (n_models + 1) * (horizon + 1);
        NlpDims {
            n_w: horizon * n_a + nodes * n,
            n_f: nodes * n,
            n_h: (n_models + 1) * horizon,
            n_a,
            n_s: n,
            n_theta: self.layout.len(),
        }
    }

    fn cost(&self, w: &[f64], _s: &[f64], theta: &[f64]) -> f64 {
        let m = self.model(theta);
        let mut c = 0.0;
        for j in 0..self.models() {
            for k in 0..=self.cfg.horizon {
                c += (self.x(w, j, k) - &m.x_bar).norm_squared();
                if k < self.cfg.horizon {
                    c += (self.u(w, &m, j, k) - &m.u_bar).norm_squared();
                }
            }
        }
        c
    }

    fn cost_grad(&self, w: &[f64], _s: &[f64], theta: &[f64]) -> DVector<f64> {
        let m = self.model(theta);
        let mut g = DVector::zeros(self.dims().n_w);
        let (n, n_a) = (self.cfg.n, self.cfg.n_a);
        for j in 0..self.models() {
            for k in 0..=self.cfg.horizon {
                let gx = 2.0 * (self.x(w, j, k) - &m.x_bar);
                let mut v = g.rows_mut(self.ix(j, k), n);
                v += &gx;
                if k < self.cfg.horizon {
                    let e = self.u(w, &m, j, k) - &m.u_bar;
                    let mut v = g.rows_mut(self.iu(k), n_a);
                    v += 2.0 * &e;
                    if j > 0 {
                        let kte = 2.0 * m.k.tr_mul(&e);
                        let mut v = g.rows_mut(self.ix(j, k), n);
                        v -= &kte;
                        let mut v = g.rows_mut(self.ix(0, k), n);
                        v += &kte;
                    }
                }
            }
        }
        g
    }

    fn eq(&self, w: &[f64], s: &[f64], theta: &[f64]) -> DVector<f64> {
        let m = self.model(theta);
        let n = self.cfg.n;
        let mut f = DVector::zeros(self.dims().n_f);
        let s = DVector::from_column_slice(s);
        for j in 0..self.models() {
            f.rows_mut(self.row_f(j, 0), n).copy_from(&(self.x(w, j, 0) - &s));
            for k in 1..=self.cfg.horizon {
                let r = self.x(w, j, k)
                    - &m.a * self.x(w, j, k - 1)
                    - &m.b * self.u(w, &m, j, k - 1)
                    - &m.bias
                    - &m.w[j];
                f.rows_mut(self.row_f(j, k), n).copy_from(&r);
            }
        }
        f
    }

    fn eq_jac(&self, _w: &[f64], _s: &[f64], theta: &[f64]) -> Triplets {
        let m = self.model(theta);
        let d = self.dims();
        let n = self.cfg.n;
        let bk = &m.b * &m.k;
        let a_cl = &m.a - &bk;
        let mut t = Triplets::with_capacity(d.n_f, d.n_w, d.n_f * (1 + 3 * n));
        for j in 0..self.models() {
            for k in 0..=self.cfg.horizon {
                let r = self.row_f(j, k);
                (0..n).for_each(|p| t.push(r + p, self.ix(j, k) + p, 1.0));
                if k == 0 {
                    continue;
                }
                t.push_block(r, self.iu(k - 1), &m.b, -1.0);
                if j == 0 {
                    t.push_block(r, self.ix(0, k - 1), &m.a, -1.0);
                } else {
                    t.push_block(r, self.ix(j, k - 1), &a_cl, -1.0);
                    t.push_block(r, self.ix(0, k - 1), &bk, -1.0);
                }
            }
        }
        t
    }

    fn ineq(&self, w: &[f64], _s: &[f64], _theta: &[f64]) -> DVector<f64> {
        let mut h = DVector::zeros(self.dims().n_h);
        for j in 0..self.models() {
            for k in 1..=self.cfg.horizon {
                h[self.row_h(j, k)] = self.x(w, j, k).norm_squared() - 1.0;
            }
        }
        h
    }

    fn ineq_jac(&self, w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let d = self.dims();
        let mut t = Triplets::with_capacity(d.n_h, d.n_w, d.n_h * self.cfg.n);
        for j in 0..self.models() {
            for k in 1..=self.cfg.horizon {
                let c = self.ix(j, k);
                for p in 0..self.cfg.n {
                    t.push(self.row_h(j, k), c + p, 2.0 * w[c + p]);
                }
            }
        }
        t
    }

    fn lagrangian_hessian(&self, _w: &[f64], _lam: &[f64], mu: &[f64], _s: &[f64], theta: &[f64]) -> Triplets {
        let m = self.model(theta);
        let d = self.dims();
        let (n, n_a) = (self.cfg.n, self.cfg.n_a);
        let g = m.k.tr_mul(&m.k);
        let kt = m.k.transpose();
        let mut t = Triplets::with_capacity(d.n_w, d.n_w, d.n_w * 8);
        for j in 0..self.models() {
            for k in 0..=self.cfg.horizon {
                let xj = self.ix(j, k);
                let mult = if k > 0 { 2.0 + 2.0 * mu[self.row_h(j, k)] } else { 2.0 };
                (0..n).for_each(|p| t.push(xj + p, xj + p, mult));
                if k == self.cfg.horizon {
                    continue;
                }
                let uk = self.iu(k);
                (0..n_a).for_each(|p| t.push(uk + p, uk + p, 2.0));
                if j > 0 {
                    let x0 = self.ix(0, k);
                    t.push_block(uk, xj, &m.k, -2.0);
                    t.push_block(xj, uk, &kt, -2.0);
                    t.push_block(uk, x0, &m.k, 2.0);
                    t.push_block(x0, uk, &kt, 2.0);
                    t.push_block(xj, xj, &g, 2.0);
                    t.push_block(xj, x0, &g, -2.0);
                    t.push_block(x0, xj, &g, -2.0);
                    t.push_block(x0, x0, &g, 2.0);
                }
            }
        }
        t
    }

    fn lagrangian_theta_jac(&self, w: &[f64], lam: &[f64], _mu: &[f64], _s: &[f64], theta: &[f64]) -> Triplets {
        let m = self.model(theta);
        let l = self.layout;
        let d = self.dims();
        let (n, n_a, big_n, n_m) = (self.cfg.n, self.cfg.n_a, self.cfg.horizon, self.cfg.n_models);
        let mut t = Triplets::new(d.n_w, d.n_theta);
        for j in 0..self.models() {
            for k in 0..=big_n {
                let xj = self.ix(j, k);
                (0..n).for_each(|p| t.push(xj + p, l.x_bar(p), -2.0));
                if k == big_n {
                    continue;
                }
                let uk = self.iu(k);
                if j == 0 {
                    (0..n_a).for_each(|p| t.push(uk + p, l.u_bar(p), -2.0 * (n_m as f64 + 1.0)));
                    continue;
                }
                let x0 = self.ix(0, k);
                let e = self.u(w, &m, j, k) - &m.u_bar;
                let dx = self.dx(w, j, k);
                for p in 0..n_a {
                    for mm in 0..n {
                        t.push(xj + mm, l.u_bar(p), 2.0 * m.k[(p, mm)]);
                        t.push(x0 + mm, l.u_bar(p), -2.0 * m.k[(p, mm)]);
                    }
                    for q in 0..n {
                        let c = l.k(p, q);
                        t.push(uk + p, c, -2.0 * dx[q]);
                        for mm in 0..n {
                            let v = -2.0 * if mm == q { e[p] } else { 0.0 } + 2.0 * m.k[(p, mm)] * dx[q];
                            t.push(xj + mm, c, v);
                            t.push(x0 + mm, c, -v);
                        }
                    }
                }
            }
            for k in 1..=big_n {
                let lj = &lam[self.row_f(j, k)..self.row_f(j, k) + n];
                let xp = self.ix(j, k - 1);
                let up = self.iu(k - 1);
                for p in 0..n {
                    for q in 0..n {
                        t.push(xp + q, l.a0(p, q), -lj[p]);
                    }
                    for q in 0..n_a {
                        t.push(up + q, l.b0(p, q), -lj[p]);
                    }
                }
                if j == 0 {
                    continue;
                }
                let x0p = self.ix(0, k - 1);
                let btl = m.b.tr_mul(&DVector::from_column_slice(lj));
                for p in 0..n {
                    for q in 0..n_a {
                        for mm in 0..n {
                            t.push(xp + mm, l.b0(p, q), m.k[(q, mm)] * lj[p]);
                            t.push(x0p + mm, l.b0(p, q), -m.k[(q, mm)] * lj[p]);
                        }
                    }
                }
                for p in 0..n_a {
                    for q in 0..n {
                        t.push(xp + q, l.k(p, q), btl[p]);
                        t.push(x0p + q, l.k(p, q), -btl[p]);
                    }
                }
            }
        }
        t
    }

    fn eq_theta_jac(&self, w: &[f64], _s: &[f64], theta: &[f64]) -> Triplets {
        let m = self.model(theta);
        let l = self.layout;
        let d = self.dims();
        let (n, n_a) = (self.cfg.n, self.cfg.n_a);
        let mut t = Triplets::new(d.n_f, d.n_theta);
        for j in 0..self.models() {
            for k in 1..=self.cfg.horizon {
                let r = self.row_f(j, k);
                let xp = self.x(w, j, k - 1);
                let up = self.u(w, &m, j, k - 1);
                for p in 0..n {
                    for q in 0..n {
                        t.push(r + p, l.a0(p, q), -xp[q]);
                    }
                    for q in 0..n_a {
                        t.push(r + p, l.b0(p, q), -up[q]);
                    }
                    t.push(r + p, l.bias(p), -1.0);
                    if j > 0 {
                        t.push(r + p, l.w(j, p), -1.0);
                    }
                }
                if j > 0 {
                    let dx = self.dx(w, j, k - 1);
                    for p in 0..n_a {
                        for q in 0..n {
                            push_vec(&mut t, r, l.k(p, q), &m.b.column(p).into_owned(), dx[q]);
                        }
                    }
                }
            }
        }
        t
    }

    fn ineq_theta_jac(&self, _w: &[f64], _s: &[f64], _theta: &[f64]) -> Triplets {
        let d = self.dims();
        Triplets::new(d.n_h, d.n_theta)
    }

    fn initial_primal(&self, s: &[f64], _theta: &[f64]) -> DVector<f64> {
        let mut w = DVector::zeros(self.dims().n_w);
        for j in 0..self.models() {
            w.rows_mut(self.ix(j, 0), self.cfg.n).copy_from_slice(s);
        }
        w
    }

    fn kkt_structure(&self) -> KktStructure {
        KktStructure::Banded { order: self.order.clone() }
    }

    fn shift_primal(&self, w: &[f64]) -> DVector<f64> {
        let (n, n_a, big_n) = (self.cfg.n, self.cfg.n_a, self.cfg.horizon);
        let mut out = DVector::from_column_slice(w);
        for k in 0..big_n {
            let src = self.iu((k + 1).min(big_n - 1));
            out.rows_mut(self.iu(k), n_a).copy_from_slice(&w[src..src + n_a]);
        }
        for j in 0..self.models() {
            for k in 0..=big_n {
                let src = self.ix(j, (k + 1).min(big_n));
                out.rows_mut(self.ix(j, k), n).copy_from_slice(&w[src..src + n]);
            }
        }
        out
    }
}

/// Infinite-horizon discrete LQR gain `K` (for `u = −Kx`) by Riccati
/// iteration to a fixed point.
pub fn lqr_gain(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut p = q.clone();
    for _ in 0..100_000 {
        let btp = b.tr_mul(&p);
        let s = r + &btp * b;
        let gain = s
            .clone()
            .lu()
            .solve(&(&btp * a))
            .ok_or_else(|| Error::Config("singular Riccati input weight".into()))?;
        let next = q + a.tr_mul(&p) * a - a.tr_mul(&p) * b * &gain;
        let next = (&next + next.transpose()) * 0.5;
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        let delta = (&next - &p).amax();
        p = next;
        if delta <= 1e-10 * p.amax().max(1.0) {
            let btp = b.tr_mul(&p);
            return (r + &btp * b)
                .lu()
                .solve(&(&btp * a))
                .ok_or_else(|| Error::Config("singular Riccati input weight".into()));
        }
    }
    Err(Error::Config("Riccati iteration diverged; (A, B) may not be stabilizable".into()))
}

/// `s₊ − A₀s − B₀a − b₀`
pub fn nominal_residual(s_next: &DVector<f64>, s: &DVector<f64>, a: &DVector<f64>, params: &PolicyParams) -> DVector<f64> {
    s_next - &params.a0 * s - &params.b0 * a - &params.bias
}

/// Input `ū` making `x̄` a steady state of the nominal model, and whether the
/// steady-state equation was solved exactly (otherwise least squares).
pub fn steady_state_input(
    a0: &DMatrix<f64>,
    b0: &DMatrix<f64>,
    bias: &DVector<f64>,
    x_bar: &DVector<f64>,
) -> (DVector<f64>, bool) {
    let rhs = x_bar - a0 * x_bar - bias;
    let u = crate::linalg::pinv_solve_vec(b0, &rhs, 1e-12);
    let exact = (b0 * &u - &rhs).amax() <= 1e-12 * rhs.amax().max(1.0);
    (u, exact)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ip_solver::{derivative_check, PrimalDualPoint};

    fn small() -> (ScenarioMpc, Vec<f64>) {
        let cfg = MpcConfig { horizon: 3, n_models: 2, n: 2, n_a: 2 };
        let mpc = ScenarioMpc::new(cfg).unwrap();
        let theta: Vec<f64> = (0..cfg.layout().len()).map(|i| 0.1 + 0.37 * ((i * 7 % 11) as f64 / 11.0 - 0.5)).collect();
        (mpc, theta)
    }

    #[test]
    fn flatten_roundtrip() {
        let l = ThetaLayout { n: 2, n_a: 2, n_models: 4 };
        assert_eq!(l.len(), 26);
        let theta: Vec<f64> = (0..26).map(|i| i as f64).collect();
        let p = PolicyParams::unflatten(l, &theta).unwrap();
        assert_eq!(p.flatten(), theta);
        assert_eq!(p.a0[(0, 1)], 5.0);
        assert_eq!(p.k[(1, 0)], 16.0);
        assert_eq!(p.vertices[3][1], 25.0);
    }

    #[test]
    fn callbacks_match_finite_differences() {
        let (mpc, theta) = small();
        let d = mpc.dims();
        let z = PrimalDualPoint::new(
            DVector::from_fn(d.n_w, |i, _| 0.3 * ((i * 13 % 17) as f64 / 17.0 - 0.5)),
            DVector::from_fn(d.n_f, |i, _| (i * 5 % 7) as f64 / 7.0 - 0.4),
            DVector::from_fn(d.n_h, |i, _| 0.1 + (i % 3) as f64),
        );
        let rep = derivative_check(&mpc, &z, &[0.2, -0.4], &theta, 1e-6);
        assert!(rep.max() < 1e-7, "{rep:?}");
    }

    #[test]
    fn band_order_is_a_permutation() {
        let (mpc, _) = small();
        let KktStructure::Banded { mut order } = mpc.kkt_structure() else { panic!() };
        order.sort_unstable();
        let d = mpc.dims();
        assert_eq!(order, (0..d.n_w + d.n_f).collect::<Vec<_>>());
    }

    #[test]
    fn lqr_zero_dynamics() {
        let k = lqr_gain(&DMatrix::zeros(2, 2), &DMatrix::identity(2, 2), &DMatrix::identity(2, 2), &DMatrix::identity(2, 2))
            .unwrap();
        assert!(k.amax() < 1e-14);
    }

    #[test]
    fn steady_state_of_identity_input() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.0, 0.7]);
        let x = DVector::from_column_slice(&[1.0, -1.0]);
        let (u, exact) = steady_state_input(&a, &DMatrix::identity(2, 2), &DVector::zeros(2), &x);
        assert!(exact);
        assert!((&a * &x + &u - &x).amax() < 1e-14);
    }
}
