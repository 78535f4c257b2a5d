//! The true plant and closed-loop episodes under the stochastic policy.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::critic::TransitionRecord;
use crate::ip_solver::{ParametricNlp, PrimalDualPoint};
use crate::policy::{ActionSample, StochasticPolicy};
use crate::sensitivities::score_gradient;

/// States with `‖x‖² > 1 + SAFETY_SLACK` count as constraint violations.
pub const SAFETY_SLACK: f64 = 1e-9;

/// `x₊ = A_real x + B_real u + n`, with `n` a centred Gaussian restricted to a
/// ball by rejection.
#[derive(Clone, Debug)]
pub struct PlantModel {
    pub a_real: DMatrix<f64>,
    pub b_real: DMatrix<f64>,
    /// Per-coordinate variance of the untruncated noise.
    pub noise_variance: f64,
    pub clip_radius: f64,
}

impl PlantModel {
    /// `A_real = κ [[cos β, sin β], [sin β, cos β]]`, `B_real = diag(1.1, 0.9)`,
    /// noise variance `(1/3)·10⁻²`, radius `(1/2)·10⁻²`.
    pub fn rotation(kappa: f64, beta: f64) -> Self {
        let (sb, cb) = beta.sin_cos();
        Self {
            a_real: DMatrix::from_row_slice(2, 2, &[cb, sb, sb, cb]) * kappa,
            b_real: DMatrix::from_row_slice(2, 2, &[1.1, 0.0, 0.0, 0.9]),
            noise_variance: 1e-2 / 3.0,
            clip_radius: 0.5e-2,
        }
    }

    pub fn n(&self) -> usize {
        self.a_real.nrows()
    }

    /// A noise draw and the number of Gaussian draws it took.
    pub fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, usize) {
        let std = self.noise_variance.sqrt();
        let mut draws = 0;
        loop {
            draws += 1;
            let n = DVector::from_fn(self.n(), |_, _| std * rng.sample::<f64, _>(StandardNormal));
            if n.norm() <= self.clip_radius {
                return (n, draws);
            }
        }
    }

    pub fn step_with_noise(&self, s: &DVector<f64>, a: &DVector<f64>, noise: &DVector<f64>) -> DVector<f64> {
        &self.a_real * s + &self.b_real * a + noise
    }

    pub fn plant_step<R: Rng + ?Sized>(&self, s: &DVector<f64>, a: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        let (noise, _) = self.sample_noise(rng);
        self.step_with_noise(s, a, &noise)
    }
}

/// `L = w_x‖x − x_ref‖² + w_u‖u − u_ref‖²`
#[derive(Clone, Debug)]
pub struct StageCost {
    pub x_ref: DVector<f64>,
    pub u_ref: DVector<f64>,
    pub state_weight: f64,
    pub input_weight: f64,
}

impl StageCost {
    /// Weights `1/20` and `1/2`.
    pub fn new(x_ref: DVector<f64>, u_ref: DVector<f64>) -> Self {
        Self { x_ref, u_ref, state_weight: 0.05, input_weight: 0.5 }
    }

    pub fn eval(&self, s: &DVector<f64>, a: &DVector<f64>) -> f64 {
        self.state_weight * (s - &self.x_ref).norm_squared() + self.input_weight * (a - &self.u_ref).norm_squared()
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeTrace {
    pub episode: usize,
    pub s0: DVector<f64>,
    pub records: Vec<TransitionRecord>,
    /// `Σ γᵏ L_k` over the recorded steps.
    pub discounted_cost: f64,
    /// Set when a solve or score evaluation failed and the trace was cut.
    pub failure: Option<String>,
    /// Visited states (including `s₀`) outside the unit ball.
    pub violations: usize,
    /// Gaussian draws spent on the truncated plant noise.
    pub noise_draws: usize,
}

impl EpisodeTrace {
    pub fn is_complete(&self) -> bool {
        self.failure.is_none()
    }
}

/// Everything a rollout needs besides `θ` and the random stream.
#[derive(Clone, Debug)]
pub struct ClosedLoop<N> {
    pub policy: StochasticPolicy<N>,
    pub plant: PlantModel,
    pub cost: StageCost,
    pub s0: DVector<f64>,
    pub n_steps: usize,
    pub gamma: f64,
}

/// Independent stream of one episode of one batch.
pub fn episode_rng(seed: u64, batch: usize, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((batch as u64) << 32) | episode as u64);
    rng
}

fn outside(s: &DVector<f64>) -> bool {
    s.norm_squared() > 1.0 + SAFETY_SLACK
}

impl<N: ParametricNlp> ClosedLoop<N> {
    fn warm_start(&self, prev: &PrimalDualPoint, s: &[f64], theta: &[f64]) -> Option<PrimalDualPoint> {
        let nlp = &self.policy.nlp;
        let w = nlp.shift_primal(prev.w.as_slice());
        let h = nlp.ineq(w.as_slice(), s, theta);
        if h.iter().any(|&v| !(v < 0.0)) {
            return None;
        }
        let mu = h.map(|v| self.policy.tau / -v);
        Some(PrimalDualPoint { w, lam: prev.lam.clone(), mu })
    }

    fn act<R: Rng + ?Sized>(
        &self,
        s: &[f64],
        theta: &[f64],
        prev: Option<&PrimalDualPoint>,
        rng: &mut R,
    ) -> crate::Result<ActionSample> {
        let d = self.policy.density.sample(rng);
        if let Some(warm) = prev.and_then(|p| self.warm_start(p, s, theta)) {
            if let Ok(smp) = self.policy.act(s, theta, d.clone(), Some(&warm)) {
                return Ok(smp);
            }
        }
        self.policy.act(s, theta, d, None)
    }

    /// One episode of `n_steps` from `s₀`, recording score gradients.
    pub fn rollout<R: Rng + ?Sized>(&self, theta: &[f64], episode: usize, rng: &mut R) -> EpisodeTrace {
        let mut trace = EpisodeTrace {
            episode,
            s0: self.s0.clone(),
            records: Vec::with_capacity(self.n_steps),
            discounted_cost: 0.0,
            failure: None,
            violations: usize::from(outside(&self.s0)),
            noise_draws: 0,
        };
        let mut s = self.s0.clone();
        let mut prev: Option<PrimalDualPoint> = None;
        let mut discount = 1.0;
        for step in 0..self.n_steps {
            let smp = match self.act(s.as_slice(), theta, prev.as_ref(), rng) {
                Ok(smp) => smp,
                Err(e) => {
                    warn!("episode {episode}, step {step}: policy failed: {e}");
                    trace.failure = Some(format!("step {step}: {e}"));
                    break;
                }
            };
            let score = match score_gradient(&self.policy.nlp, &smp.z, s.as_slice(), theta, smp.d.as_slice(), &self.policy.density)
            {
                Ok(g) => g.score,
                Err(e) => {
                    warn!("episode {episode}, step {step}: score failed: {e}");
                    trace.failure = Some(format!("step {step}: score: {e}"));
                    break;
                }
            };
            let (noise, draws) = self.plant.sample_noise(rng);
            trace.noise_draws += draws;
            let s_next = self.plant.step_with_noise(&s, &smp.a, &noise);
            let cost = self.cost.eval(&s, &smp.a);
            trace.discounted_cost += discount * cost;
            discount *= self.gamma;
            trace.violations += usize::from(outside(&s_next));
            trace.records.push(TransitionRecord {
                s: s.clone(),
                d: smp.d.clone(),
                a: smp.a.clone(),
                s_next: s_next.clone(),
                cost,
                score: Some(score),
                episode,
                step,
                solver_iterations: smp.report.iterations,
            });
            prev = Some(smp.z);
            s = s_next;
        }
        trace
    }

    /// `S` episodes on streams derived from `(seed, batch, episode)`.
    pub fn run_batch(&self, theta: &[f64], episodes: usize, seed: u64, batch: usize) -> Batch {
        let traces = (0..episodes)
            .map(|e| self.rollout(theta, e, &mut episode_rng(seed, batch, e)))
            .collect();
        Batch::new(traces)
    }
}

#[derive(Clone, Debug)]
pub struct Batch {
    pub episodes: Vec<EpisodeTrace>,
    /// Mean discounted cost over complete episodes.
    pub j_mean: f64,
    pub j_std: f64,
}

impl Batch {
    pub fn new(episodes: Vec<EpisodeTrace>) -> Self {
        let costs: Vec<f64> = episodes.iter().filter(|e| e.is_complete()).map(|e| e.discounted_cost).collect();
        let n = costs.len() as f64;
        let (j_mean, j_std) = if costs.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let m = costs.iter().sum::<f64>() / n;
            (m, (costs.iter().map(|c| (c - m).powi(2)).sum::<f64>() / n).sqrt())
        };
        Self { episodes, j_mean, j_std }
    }

    /// Records of the complete episodes.
    pub fn records(&self) -> impl Iterator<Item = &TransitionRecord> {
        self.episodes.iter().filter(|e| e.is_complete()).flat_map(|e| e.records.iter())
    }

    pub fn violations(&self) -> usize {
        self.episodes.iter().map(|e| e.violations).sum()
    }

    pub fn failures(&self) -> usize {
        self.episodes.iter().filter(|e| !e.is_complete()).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_rotation_step() {
        let plant = PlantModel::rotation(0.95, 22f64.to_radians());
        let s = DVector::from_column_slice(&[1.0, 0.0]);
        let next = plant.step_with_noise(&s, &DVector::zeros(2), &DVector::zeros(2));
        let (sb, cb) = 22f64.to_radians().sin_cos();
        assert!((next[0] - 0.95 * cb).abs() < 1e-15 && (next[1] - 0.95 * sb).abs() < 1e-15);
        assert!((next[0] - 0.88082).abs() < 1e-5 && (next[1] - 0.35588).abs() < 1e-5);
    }

    #[test]
    fn noise_stays_in_ball() {
        let plant = PlantModel::rotation(0.95, 22f64.to_radians());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..200 {
            assert!(plant.sample_noise(&mut rng).0.norm() <= plant.clip_radius);
        }
    }

    #[test]
    fn streams_differ_per_episode() {
        let a: u64 = episode_rng(7, 0, 0).random();
        let b: u64 = episode_rng(7, 0, 1).random();
        let c: u64 = episode_rng(7, 1, 0).random();
        assert!(a != b && a != c && b != c);
        assert_eq!(a, episode_rng(7, 0, 0).random::<u64>());
    }
}
