mod common;

use common::{enumeration_oracle, toy_params, transition};
use mpcrl::learner::{count_outside, dataset_residuals, membership_check, safe_update, SafeUpdateOptions, UpdateMethod};
use mpcrl::robust_mpc::PolicyParams;
use proptest::prelude::*;

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn vertex_forcing_matches_enumeration() {
    let p = toy_params();
    let l = p.layout();
    let theta = p.flatten();
    let data = vec![transition(&p, [0.4, -0.3], [0.2, 0.1], [0.07, 0.08])];
    let mut grad = vec![0.0; theta.len()];
    grad[l.bias(0)] = 1.0;
    grad[l.bias(1)] = 1.0;
    let out = safe_update(l, &theta, &grad, 0.1, &data, &SafeUpdateOptions::default()).unwrap();
    let oracle = enumeration_oracle(l, &theta, &grad, 0.1, &data[0]);
    assert!(out.accepted);
    assert_eq!(out.method, UpdateMethod::ActiveSet);
    assert!(max_diff(&out.theta, &oracle) < 1e-8, "{}", max_diff(&out.theta, &oracle));
    let q = PolicyParams::unflatten(l, &out.theta).unwrap();
    let r = &dataset_residuals(&data, &q)[0];
    assert!((r - &q.vertices[2]).amax() < 1e-9);
}

#[test]
fn edge_forcing_matches_enumeration() {
    let p = toy_params();
    let l = p.layout();
    let theta = p.flatten();
    let data = vec![transition(&p, [0.8, 0.5], [0.5, -0.3], [0.09, 0.0])];
    let mut grad = vec![0.0; theta.len()];
    grad[l.bias(0)] = 1.0;
    let out = safe_update(l, &theta, &grad, 0.2, &data, &SafeUpdateOptions::default()).unwrap();
    let oracle = enumeration_oracle(l, &theta, &grad, 0.2, &data[0]);
    assert!(out.accepted);
    assert!(max_diff(&out.theta, &oracle) < 1e-8, "{}", max_diff(&out.theta, &oracle));
    // the residual ends strictly inside the edge W²W³
    let q = PolicyParams::unflatten(l, &out.theta).unwrap();
    let r = &dataset_residuals(&data, &q)[0];
    let w = membership_check(r, &q.vertices).weights.unwrap();
    assert!(w[1] > 1e-3 && w[2] > 1e-3 && w[0] + w[3] < 1e-9, "{}", w.transpose());
}

#[test]
fn slack_transitions_do_not_move_the_vertex_solution() {
    let p = toy_params();
    let l = p.layout();
    let theta = p.flatten();
    let forcing = transition(&p, [0.4, -0.3], [0.2, 0.1], [0.07, 0.08]);
    let mut data: Vec<_> = (0..40)
        .map(|k| {
            let t = k as f64 * 0.37;
            transition(&p, [0.5 * t.cos(), 0.3 * t.sin()], [0.1, -0.2 * t.cos()], [0.02 * t.sin(), -0.03 * t.cos()])
        })
        .collect();
    data.insert(17, forcing.clone());
    let mut grad = vec![0.0; theta.len()];
    grad[l.bias(0)] = 1.0;
    grad[l.bias(1)] = 1.0;
    let out = safe_update(l, &theta, &grad, 0.1, &data, &SafeUpdateOptions::default()).unwrap();
    let oracle = enumeration_oracle(l, &theta, &grad, 0.1, &forcing);
    assert!(out.accepted);
    assert_eq!(count_outside(&data, l, &out.theta).unwrap(), 0);
    assert!(max_diff(&out.theta, &oracle) < 1e-8, "{}", max_diff(&out.theta, &oracle));
}

#[test]
fn inactive_constraint_gives_plain_step() {
    let p = toy_params();
    let l = p.layout();
    let theta = p.flatten();
    let data = vec![transition(&p, [0.4, -0.3], [0.2, 0.1], [0.01, -0.02])];
    let grad: Vec<f64> = (0..theta.len()).map(|i| 0.01 * (i as f64).cos()).collect();
    let out = safe_update(l, &theta, &grad, 0.05, &data, &SafeUpdateOptions::default()).unwrap();
    assert_eq!(out.method, UpdateMethod::Plain);
    for i in 0..theta.len() {
        assert_eq!(out.theta[i], theta[i] - 0.05 * grad[i]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn accepted_updates_keep_every_residual_inside(
        offsets in prop::collection::vec((-0.09f64..0.09, -0.09f64..0.09), 1..6),
        g in prop::collection::vec(-1.0f64..1.0, 26),
        alpha in 0.01f64..0.2,
    ) {
        let p = toy_params();
        let l = p.layout();
        let theta = p.flatten();
        let data: Vec<_> = offsets
            .iter()
            .enumerate()
            .map(|(k, &(a, b))| transition(&p, [0.1 * k as f64, -0.2], [0.3, 0.05 * k as f64], [a, b]))
            .collect();
        let out = safe_update(l, &theta, &g, alpha, &data, &SafeUpdateOptions::default()).unwrap();
        if out.accepted {
            prop_assert_eq!(count_outside(&data, l, &out.theta).unwrap(), 0);
            // θ₋ is feasible, so the local model cannot get worse
            prop_assert!(out.objective <= 1e-12);
        } else {
            prop_assert_eq!(out.theta, theta);
        }
    }
}
