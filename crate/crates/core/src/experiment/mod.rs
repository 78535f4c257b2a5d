//! The learning loop of the two plant scenarios and its data products.

mod artifacts;
mod config;

pub use artifacts::{emit_plot_data, render_plot_data, write_artifacts, PlotData};
pub use config::{Case, ExperimentConfig};

use log::{debug, info, warn};
use nalgebra::{DMatrix, DVector};

use crate::critic::{lstd_fit, TransitionRecord};
use crate::env_sim::{Batch, ClosedLoop, PlantModel, StageCost};
use crate::error::{Error, Result};
use crate::learner::{
    estimate_policy_gradient, safe_update, ConstraintDataset, SafeUpdateOptions, StepSize, Transition, UpdateMethod,
};
use crate::policy::{DisturbanceDensity, StochasticPolicy};
use crate::robust_mpc::{
    lqr_gain, nominal_residual, steady_state_input, MpcConfig, PolicyParams, ScenarioMpc, ThetaLayout,
};

fn rotation(deg: f64) -> DMatrix<f64> {
    let (s, c) = deg.to_radians().sin_cos();
    DMatrix::from_row_slice(2, 2, &[c, s, s, c])
}

/// Starting parameters: nominal model rotated by `β̂`, `B₀ = I`, `b₀ = 0`,
/// `x̄ = x_ref` with the matching steady-state `ū`, LQR feedback and a square
/// of vertices.
pub fn initial_params(cfg: &ExperimentConfig) -> Result<PolicyParams> {
    let a0 = rotation(cfg.beta_hat_deg);
    let b0 = DMatrix::identity(2, 2);
    let bias = DVector::zeros(2);
    let x_bar = DVector::from_column_slice(&cfg.x_ref);
    let (u_bar, exact) = steady_state_input(&a0, &b0, &bias, &x_bar);
    if !exact {
        warn!("x̄ is not a steady state of the nominal model; using the least-squares input");
    }
    let k = lqr_gain(&a0, &b0, &DMatrix::identity(2, 2), &DMatrix::identity(2, 2))?;
    let r = cfg.vertex_radius;
    let vertices = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
        .iter()
        .map(|&(a, b)| DVector::from_column_slice(&[r * a, r * b]))
        .collect();
    Ok(PolicyParams { x_bar, u_bar, a0, b0, bias, k, vertices })
}

/// The plant of the configured case.
pub fn plant(cfg: &ExperimentConfig) -> PlantModel {
    PlantModel::rotation(cfg.kappa, cfg.beta_deg.to_radians())
}

/// Input reference of the stage cost: the configured one, or the input
/// holding the real plant at `x_ref`.
pub fn input_reference(cfg: &ExperimentConfig) -> Result<DVector<f64>> {
    if let Some(u) = &cfg.u_ref {
        return Ok(DVector::from_column_slice(u));
    }
    let p = plant(cfg);
    let x = DVector::from_column_slice(&cfg.x_ref);
    let rhs = &x - &p.a_real * &x;
    p.b_real
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Config("plant input matrix is singular; set u_ref explicitly".into()))
}

pub fn closed_loop(cfg: &ExperimentConfig) -> Result<ClosedLoop<ScenarioMpc>> {
    cfg.validate()?;
    let mpc = ScenarioMpc::new(MpcConfig { horizon: cfg.horizon, n_models: 4, n: 2, n_a: 2 })?;
    let density = DisturbanceDensity::new(cfg.exploration_shape.clone(), cfg.sigma)?;
    Ok(ClosedLoop {
        policy: StochasticPolicy::new(mpc, density, cfg.tau)?,
        plant: plant(cfg),
        cost: StageCost::new(DVector::from_column_slice(&cfg.x_ref), input_reference(cfg)?),
        s0: DVector::from_column_slice(&cfg.s0),
        n_steps: cfg.n_t,
        gamma: cfg.gamma,
    })
}

/// One row per evaluated batch.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRow {
    pub step: usize,
    pub j_mean: f64,
    pub j_std: f64,
    pub violations: usize,
    pub failed_episodes: usize,
    /// Outcome of the update computed from this batch; `None` for the last.
    pub update: Option<UpdateMethod>,
    pub alpha: f64,
    pub dataset_size: usize,
    pub gradient_norm: f64,
    pub noise_draws: usize,
}

/// States and actions of one batch.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryDump {
    pub step: usize,
    /// `(episode, k, x, u)`; the final state of each episode has no input.
    pub points: Vec<(usize, usize, DVector<f64>, Option<DVector<f64>>)>,
}

impl TrajectoryDump {
    fn from_batch(step: usize, batch: &Batch) -> Self {
        let mut points = Vec::new();
        for e in &batch.episodes {
            for r in &e.records {
                points.push((e.episode, r.step, r.s.clone(), Some(r.a.clone())));
            }
            if let Some(last) = e.records.last() {
                points.push((e.episode, last.step + 1, last.s_next.clone(), None));
            }
        }
        Self { step, points }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SafetyAudit {
    pub closed_loop_steps: usize,
    pub violations: usize,
    pub failed_episodes: usize,
    pub rejected_updates: usize,
    /// Dataset residuals outside `conv(W)` right after accepted updates.
    pub membership_failures: usize,
    /// Gaussian draws per accepted plant noise sample.
    pub noise_draws_per_sample: f64,
}

#[derive(Clone, Debug)]
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub layout: ThetaLayout,
    pub rows: Vec<StepRow>,
    /// `θ` used for each row.
    pub thetas: Vec<Vec<f64>>,
    pub first: Option<TrajectoryDump>,
    pub last: Option<TrajectoryDump>,
    /// Residuals of the first batch under the initial model.
    pub first_residuals: Vec<DVector<f64>>,
    pub a_real: DMatrix<f64>,
    pub b_real: DMatrix<f64>,
    pub audit: SafetyAudit,
}

impl RunArtifacts {
    /// Mean of `Ĵ` over the first or last `window` rows.
    pub fn j_window(&self, window: usize, last: bool) -> f64 {
        let w = window.min(self.rows.len()).max(1);
        let rows = if last { &self.rows[self.rows.len() - w..] } else { &self.rows[..w] };
        rows.iter().map(|r| r.j_mean).sum::<f64>() / w as f64
    }

    pub fn params(&self, step: usize) -> PolicyParams {
        PolicyParams::unflatten(self.layout, &self.thetas[step]).expect("stored θ matches the layout")
    }
}

/// Runs batches and safe updates for `rl_steps` steps, evaluating one batch
/// more than there are updates.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    let lp = closed_loop(cfg)?;
    let params0 = initial_params(cfg)?;
    let layout = params0.layout();
    let mut theta = params0.flatten();
    let mut dataset = ConstraintDataset::new(cfg.dataset_cap_factor * cfg.batch_size * cfg.n_t);
    let mut alpha = StepSize::new(cfg.alpha);
    let opts = SafeUpdateOptions::default();
    let mut art = RunArtifacts {
        config: cfg.clone(),
        layout,
        rows: Vec::with_capacity(cfg.rl_steps + 1),
        thetas: Vec::with_capacity(cfg.rl_steps + 1),
        first: None,
        last: None,
        first_residuals: Vec::new(),
        a_real: lp.plant.a_real.clone(),
        b_real: lp.plant.b_real.clone(),
        audit: SafetyAudit::default(),
    };
    let mut draws = 0usize;
    for step in 0..=cfg.rl_steps {
        let batch = lp.run_batch(&theta, cfg.batch_size, cfg.seed, step);
        let records: Vec<TransitionRecord> = batch.episodes.iter().flat_map(|e| e.records.iter().cloned()).collect();
        art.audit.closed_loop_steps += records.len();
        art.audit.violations += batch.violations();
        art.audit.failed_episodes += batch.failures();
        draws += batch.episodes.iter().map(|e| e.noise_draws).sum::<usize>();
        if step == 0 {
            let p = PolicyParams::unflatten(layout, &theta)?;
            art.first_residuals = records.iter().map(|r| nominal_residual(&r.s_next, &r.s, &r.a, &p)).collect();
            art.first = Some(TrajectoryDump::from_batch(step, &batch));
        }
        if step == cfg.rl_steps {
            art.last = Some(TrajectoryDump::from_batch(step, &batch));
        }
        if art.audit.failed_episodes > cfg.failure_budget {
            return Err(Error::Aborted(format!(
                "{} failed episodes exceed the budget of {} (step {step})",
                art.audit.failed_episodes, cfg.failure_budget
            )));
        }
        if batch.failures() == batch.episodes.len() {
            return Err(Error::Aborted(format!("every episode of batch {step} failed")));
        }
        let mut row = StepRow {
            step,
            j_mean: batch.j_mean,
            j_std: batch.j_std,
            violations: batch.violations(),
            failed_episodes: batch.failures(),
            update: None,
            alpha: alpha.current,
            dataset_size: dataset.len(),
            gradient_norm: 0.0,
            noise_draws: batch.episodes.iter().map(|e| e.noise_draws).sum(),
        };
        art.thetas.push(theta.clone());
        if step < cfg.rl_steps {
            let complete: Vec<TransitionRecord> = batch.records().cloned().collect();
            let v = lstd_fit(&complete, cfg.gamma)?;
            let est = estimate_policy_gradient(&batch, &v, cfg.gamma, cfg.gradient_scaling)?;
            dataset.extend(records.iter().map(Transition::from));
            let data: Vec<Transition> = dataset.iter().cloned().collect();
            let out = safe_update(layout, &theta, est.gradient.as_slice(), alpha.current, &data, &opts)?;
            if out.accepted {
                art.audit.membership_failures += crate::learner::count_outside(&data, layout, &out.theta)?;
            } else {
                art.audit.rejected_updates += 1;
            }
            row.update = Some(out.method);
            row.gradient_norm = est.gradient.norm();
            row.dataset_size = dataset.len();
            alpha.record(out.accepted);
            theta = out.theta;
        }
        info!(
            "step {step:3}: J {:.6} ± {:.6}, violations {}, failures {}, update {:?}, alpha {}, |g| {:.3e}",
            row.j_mean, row.j_std, row.violations, row.failed_episodes, row.update, row.alpha, row.gradient_norm
        );
        if log::log_enabled!(log::Level::Debug) {
            let p = PolicyParams::unflatten(layout, &theta)?;
            debug!(
                "step {step:3}: x̄ {:.4?}, ū {:.4?}, b₀ {:.4?}, A₀ {:.4?}, B₀ {:.4?}, K {:.4?}, W {:.4?}",
                p.x_bar.as_slice(),
                p.u_bar.as_slice(),
                p.bias.as_slice(),
                p.a0.as_slice(),
                p.b0.as_slice(),
                p.k.as_slice(),
                p.vertices.iter().map(|v| (v[0], v[1])).collect::<Vec<_>>()
            );
        }
        art.rows.push(row);
    }
    art.audit.noise_draws_per_sample = draws as f64 / art.audit.closed_loop_steps.max(1) as f64;
    Ok(art)
}
