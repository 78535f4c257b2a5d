//! Independent reference computations shared by the integration tests and
//! the acceptance runner.
#![allow(dead_code)]

use mpcrl::learner::{membership_check, Transition};
use mpcrl::robust_mpc::{PolicyParams, ThetaLayout};
use nalgebra::{DMatrix, DVector};

pub fn square_vertices(r: f64) -> Vec<DVector<f64>> {
    [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .map(|&(a, b)| DVector::from_column_slice(&[r * a, r * b]))
        .collect()
}

pub fn rotation(beta_deg: f64) -> DMatrix<f64> {
    let (sb, cb) = beta_deg.to_radians().sin_cos();
    DMatrix::from_row_slice(2, 2, &[cb, sb, sb, cb])
}

pub fn toy_params() -> PolicyParams {
    PolicyParams {
        x_bar: DVector::zeros(2),
        u_bar: DVector::zeros(2),
        a0: rotation(20.0),
        b0: DMatrix::identity(2, 2),
        bias: DVector::zeros(2),
        k: DMatrix::zeros(2, 2),
        vertices: square_vertices(0.1),
    }
}

/// Transition whose residual under `p` equals `offset`.
pub fn transition(p: &PolicyParams, s: [f64; 2], a: [f64; 2], offset: [f64; 2]) -> Transition {
    let s = DVector::from_column_slice(&s);
    let a = DVector::from_column_slice(&a);
    let s_next = &p.a0 * &s + &p.b0 * &a + &p.bias + DVector::from_column_slice(&offset);
    Transition { s, a, s_next }
}

/// `s₊ − A₀s − B₀a − b₀ − Σ ϑᵢWⁱ` evaluated directly from the flat vector.
fn constraint(layout: ThetaLayout, theta: &[f64], t: &Transition, weights: &[f64]) -> DVector<f64> {
    let p = PolicyParams::unflatten(layout, theta).unwrap();
    let mut c = &t.s_next - &p.a0 * &t.s - &p.b0 * &t.a - &p.bias;
    for (i, &w) in weights.iter().enumerate() {
        c -= &p.vertices[i] * w;
    }
    c
}

/// Closest point to `θ_p` with the constraint met at fixed weights. The
/// constraint is affine in `θ`, so unit differences recover its matrix.
fn project(layout: ThetaLayout, theta_p: &[f64], t: &Transition, weights: &[f64]) -> Vec<f64> {
    let c0 = constraint(layout, theta_p, t, weights);
    let nt = theta_p.len();
    let m = DMatrix::from_fn(c0.len(), nt, |r, j| {
        let mut th = theta_p.to_vec();
        th[j] += 1.0;
        constraint(layout, &th, t, weights)[r] - c0[r]
    });
    let y = (&m * m.transpose()).lu().solve(&c0).unwrap();
    let step = m.transpose() * y;
    theta_p.iter().zip(step.iter()).map(|(a, b)| a - b).collect()
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn inside(layout: ThetaLayout, theta: &[f64], t: &Transition) -> bool {
    let p = PolicyParams::unflatten(layout, theta).unwrap();
    let r = &t.s_next - &p.a0 * &t.s - &p.b0 * &t.a - &p.bias;
    membership_check(&r, &p.vertices).inside
}

/// Single-transition safe step by enumeration of active patterns: the plain
/// step, each vertex, and each vertex pair with the pair weight optimized by
/// a grid scan refined by golden-section search.
pub fn enumeration_oracle(layout: ThetaLayout, theta_prev: &[f64], grad: &[f64], alpha: f64, t: &Transition) -> Vec<f64> {
    let v = layout.n_models;
    let plain: Vec<f64> = theta_prev.iter().zip(grad).map(|(a, g)| a - alpha * g).collect();
    if inside(layout, &plain, t) {
        return plain;
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |cand: Vec<f64>| {
        if inside(layout, &cand, t) {
            let d = dist2(&cand, &plain);
            if best.as_ref().is_none_or(|(b, _)| d < *b) {
                best = Some((d, cand));
            }
        }
    };
    let unit = |i: usize| {
        let mut w = vec![0.0; v];
        w[i] = 1.0;
        w
    };
    for i in 0..v {
        consider(project(layout, &plain, t, &unit(i)));
    }
    for i in 0..v {
        for j in i + 1..v {
            let at = |s: f64| {
                let mut w = vec![0.0; v];
                w[i] = s;
                w[j] = 1.0 - s;
                project(layout, &plain, t, &w)
            };
            let f = |s: f64| dist2(&at(s), &plain);
            let grid = 400;
            let k = (0..=grid).min_by(|&a, &b| f(a as f64 / grid as f64).total_cmp(&f(b as f64 / grid as f64))).unwrap();
            let (mut lo, mut hi) = (((k as f64) - 1.0).max(0.0) / grid as f64, ((k as f64) + 1.0).min(grid as f64) / grid as f64);
            let g = (5f64.sqrt() - 1.0) / 2.0;
            while hi - lo > 1e-14 {
                let (x1, x2) = (hi - g * (hi - lo), lo + g * (hi - lo));
                if f(x1) < f(x2) {
                    hi = x2;
                } else {
                    lo = x1;
                }
            }
            consider(at(0.5 * (lo + hi)));
        }
    }
    best.expect("some pattern is feasible").1
}
