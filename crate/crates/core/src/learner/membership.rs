use nalgebra::{DMatrix, DVector};

use crate::linalg::pinv_solve_vec;

/// Equality and sign tolerance of the membership test.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct Membership {
    pub inside: bool,
    /// Convex weights reproducing the point; the one closest to uniform.
    pub weights: Option<DVector<f64>>,
}

/// Tests whether `point ∈ conv(vertices)`.
///
/// Feasible weights exist iff the projection of the uniform weights onto
/// `{ϑ ≥ 0, Σϑ = 1, Σϑᵢ Wⁱ = point}` exists. That projection is found by
/// enumerating supports: on the right support it is the plain affine
/// projection. Cost is `2^V` tiny solves, so this is meant for a handful of
/// vertices.
pub fn membership_check(point: &DVector<f64>, vertices: &[DVector<f64>]) -> Membership {
    let v = vertices.len();
    let n = point.len();
    if v == 0 {
        return Membership { inside: false, weights: None };
    }
    let target = 1.0 / v as f64;
    let mut rhs = DVector::zeros(n + 1);
    rhs.rows_mut(0, n).copy_from(point);
    rhs[n] = 1.0;
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 1u32..(1u32 << v) {
        let support: Vec<usize> = (0..v).filter(|&i| mask & (1 << i) != 0).collect();
        let m = DMatrix::from_fn(n + 1, support.len(), |r, c| if r < n { vertices[support[c]][r] } else { 1.0 });
        let c = DVector::from_element(support.len(), target);
        let x = &c + pinv_solve_vec(&m, &(&rhs - &m * &c), 1e-12);
        if (&m * &x - &rhs).amax() > MEMBERSHIP_TOL || x.min() < -MEMBERSHIP_TOL {
            continue;
        }
        let mut full = DVector::zeros(v);
        for (&i, &xi) in support.iter().zip(x.iter()) {
            full[i] = xi.max(0.0);
        }
        let obj = full.iter().map(|w| (w - target).powi(2)).sum::<f64>();
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, full));
        }
    }
    match best {
        Some((_, w)) => Membership { inside: true, weights: Some(w) },
        None => Membership { inside: false, weights: None },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<DVector<f64>> {
        [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .iter()
            .map(|&(a, b)| DVector::from_column_slice(&[0.1 * a, 0.1 * b]))
            .collect()
    }

    #[test]
    fn centroid_gets_uniform_weights() {
        let m = membership_check(&DVector::zeros(2), &square());
        assert!(m.inside);
        assert!((m.weights.unwrap() - DVector::from_element(4, 0.25)).amax() < 1e-12);
    }

    #[test]
    fn outside_point() {
        let m = membership_check(&DVector::from_column_slice(&[0.2, 0.0]), &square());
        assert!(!m.inside && m.weights.is_none());
    }

    #[test]
    fn vertex_gets_unit_weight() {
        let m = membership_check(&DVector::from_column_slice(&[0.1, 0.1]), &square());
        let w = m.weights.unwrap();
        assert!((w - DVector::from_column_slice(&[0.0, 0.0, 1.0, 0.0])).amax() < 1e-12);
    }
}
