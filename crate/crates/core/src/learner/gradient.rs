use nalgebra::DVector;

use crate::critic::{td_error, ValueWeights};
use crate::env_sim::Batch;
use crate::error::{Error, Result};

/// Scaling applied to `Σ ∇θ log π · δ` over a batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientScaling {
    /// Plain sum over all transitions.
    Sum,
    /// Divided by the number of episodes `S`: an unbiased estimate of the
    /// gradient of the per-episode cost.
    PerEpisode,
    /// Divided by the number of transitions.
    PerSample,
}

#[derive(Clone, Debug)]
pub struct GradientEstimate {
    pub gradient: DVector<f64>,
    /// Mean per-episode discounted cost.
    pub j_hat: f64,
    pub j_std: f64,
    pub episodes: usize,
    pub samples: usize,
}

/// Actor-critic gradient `Σ ∇θ log π(a|s) δ` over the complete episodes of a
/// batch, scaled per `scaling`.
pub fn estimate_policy_gradient(
    batch: &Batch,
    weights: &ValueWeights,
    gamma: f64,
    scaling: GradientScaling,
) -> Result<GradientEstimate> {
    let mut gradient: Option<DVector<f64>> = None;
    let mut samples = 0;
    for r in batch.records() {
        let score = r
            .score
            .as_ref()
            .ok_or_else(|| Error::Degenerate(format!("episode {} step {} has no score", r.episode, r.step)))?;
        let g = gradient.get_or_insert_with(|| DVector::zeros(score.len()));
        g.axpy(td_error(r, weights, gamma), score, 1.0);
        samples += 1;
    }
    let episodes = batch.episodes.iter().filter(|e| e.is_complete()).count();
    let mut gradient = gradient.ok_or_else(|| Error::Degenerate("batch has no complete transitions".into()))?;
    match scaling {
        GradientScaling::Sum => {}
        GradientScaling::PerEpisode => gradient /= episodes as f64,
        GradientScaling::PerSample => gradient /= samples as f64,
    }
    Ok(GradientEstimate { gradient, j_hat: batch.j_mean, j_std: batch.j_std, episodes, samples })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::critic::TransitionRecord;
    use crate::env_sim::EpisodeTrace;

    fn batch(costs: &[f64], scores: &[Option<f64>]) -> Batch {
        let records = costs
            .iter()
            .zip(scores)
            .enumerate()
            .map(|(k, (&c, sc))| TransitionRecord {
                s: DVector::from_element(1, k as f64),
                d: DVector::zeros(1),
                a: DVector::zeros(1),
                s_next: DVector::from_element(1, k as f64 + 1.0),
                cost: c,
                score: sc.map(|v| DVector::from_column_slice(&[v, -2.0 * v])),
                episode: 0,
                step: k,
                solver_iterations: 1,
            })
            .collect();
        Batch::new(vec![EpisodeTrace {
            episode: 0,
            s0: DVector::zeros(1),
            records,
            discounted_cost: costs.iter().sum(),
            failure: None,
            violations: 0,
            noise_draws: 0,
        }])
    }

    #[test]
    fn zero_td_errors_give_zero_gradient() {
        let b = batch(&[0.0, 0.0], &[Some(1.0), Some(-3.0)]);
        let g = estimate_policy_gradient(&b, &ValueWeights::zeros(1), 0.9, GradientScaling::Sum).unwrap();
        assert_eq!(g.gradient, DVector::zeros(2));
    }

    #[test]
    fn doubling_td_errors_doubles_gradient() {
        let w = ValueWeights::zeros(1);
        let g1 = estimate_policy_gradient(&batch(&[0.3, 1.1], &[Some(1.0), Some(-3.0)]), &w, 0.9, GradientScaling::Sum).unwrap();
        let g2 = estimate_policy_gradient(&batch(&[0.6, 2.2], &[Some(1.0), Some(-3.0)]), &w, 0.9, GradientScaling::Sum).unwrap();
        assert_eq!(g2.gradient, &g1.gradient * 2.0);
        assert!((g1.gradient[0] + 3.0).abs() < 1e-15);
    }

    #[test]
    fn per_sample_scaling() {
        let w = ValueWeights::zeros(1);
        let b = batch(&[0.3, 1.1], &[Some(1.0), Some(-3.0)]);
        let sum = estimate_policy_gradient(&b, &w, 0.9, GradientScaling::Sum).unwrap();
        let avg = estimate_policy_gradient(&b, &w, 0.9, GradientScaling::PerSample).unwrap();
        assert_eq!(avg.gradient, &sum.gradient / 2.0);
        assert_eq!((avg.episodes, avg.samples), (1, 2));
    }

    #[test]
    fn missing_score_rejects_batch() {
        let b = batch(&[0.3, 1.1], &[Some(1.0), None]);
        assert!(matches!(
            estimate_policy_gradient(&b, &ValueWeights::zeros(1), 0.9, GradientScaling::Sum),
            Err(Error::Degenerate(_))
        ));
    }
}
