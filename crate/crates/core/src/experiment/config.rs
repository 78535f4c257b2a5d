use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::learner::GradientScaling;

/// The two plant scenarios: a stable and an unstable real system.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Case {
    Stable,
    Unstable,
}

impl Case {
    pub fn kappa(self) -> f64 {
        match self {
            Case::Stable => 0.95,
            Case::Unstable => 1.05,
        }
    }

    pub fn alpha(self) -> f64 {
        match self {
            Case::Stable => 0.05,
            Case::Unstable => 0.01,
        }
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" | "stable" => Ok(Case::Stable),
            "2" | "unstable" => Ok(Case::Unstable),
            other => Err(Error::Config(format!("unknown case '{other}', expected 1 or 2"))),
        }
    }
}

impl FromStr for GradientScaling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sum" => Ok(GradientScaling::Sum),
            "per_episode" => Ok(GradientScaling::PerEpisode),
            "per_sample" => Ok(GradientScaling::PerSample),
            other => Err(Error::Config(format!("unknown gradient_scaling '{other}'"))),
        }
    }
}

/// All knobs of a learning run.
///
/// The text format is one `key = value` per line, `#` starts a comment and
/// vectors are comma separated. Keys:
///
/// | key | default | meaning |
/// |---|---|---|
/// | `case` | `1` | `1` (κ = 0.95, α = 0.05) or `2` (κ = 1.05, α = 0.01) |
/// | `kappa`, `alpha` | from `case` | plant gain and step size |
/// | `gamma` | `0.99` | discount factor |
/// | `sigma` | `1e-3` | exploration covariance scale |
/// | `exploration_shape` | `1, 0, 0, 1` | row-major `Σ` |
/// | `tau` | `1e-2` | relaxation |
/// | `beta`, `beta_hat` | `22`, `20` | plant and model rotation, degrees |
/// | `n_t`, `batch_size`, `horizon` | `20`, `30`, `10` | episode length, episodes per batch, MPC horizon |
/// | `rl_steps` | `100` | parameter updates |
/// | `seed` | `1` | master seed |
/// | `x_ref` | `-0.5, 0.7` | stage-cost state reference |
/// | `u_ref` | plant steady state at `x_ref` | stage-cost input reference |
/// | `s0` | `(cos 60°, sin 60°)` | initial state |
/// | `vertex_radius` | `0.1` | initial `W` square half-width |
/// | `dataset_cap_factor` | `5` | dataset holds `factor · S · N_t` transitions |
/// | `gradient_scaling` | `per_sample` | `sum`, `per_episode` or `per_sample` |
/// | `failure_budget` | `30` | failed episodes tolerated over the run |
/// | `output_dir` | `out` | artifact directory |
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub case: Case,
    pub kappa: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub exploration_shape: DMatrix<f64>,
    pub tau: f64,
    pub beta_deg: f64,
    pub beta_hat_deg: f64,
    pub n_t: usize,
    pub batch_size: usize,
    pub horizon: usize,
    pub rl_steps: usize,
    pub seed: u64,
    pub x_ref: Vec<f64>,
    pub u_ref: Option<Vec<f64>>,
    pub s0: Vec<f64>,
    pub vertex_radius: f64,
    pub dataset_cap_factor: usize,
    pub gradient_scaling: GradientScaling,
    pub failure_budget: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn for_case(case: Case) -> Self {
        let (s, c) = 60f64.to_radians().sin_cos();
        Self {
            case,
            kappa: case.kappa(),
            alpha: case.alpha(),
            gamma: 0.99,
            sigma: 1e-3,
            exploration_shape: DMatrix::identity(2, 2),
            tau: 1e-2,
            beta_deg: 22.0,
            beta_hat_deg: 20.0,
            n_t: 20,
            batch_size: 30,
            horizon: 10,
            rl_steps: 100,
            seed: 1,
            x_ref: vec![-0.5, 0.7],
            u_ref: None,
            s0: vec![c, s],
            vertex_radius: 0.1,
            dataset_cap_factor: 5,
            gradient_scaling: GradientScaling::PerSample,
            failure_budget: 30,
            output_dir: PathBuf::from("out"),
        }
    }

    /// Applies `key = value` text on top of the defaults of its `case`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected 'key = value'", no + 1)))?;
            if entries.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{}'", no + 1, k.trim())));
            }
        }
        let case = entries.remove("case").map(|v| v.parse()).transpose()?.unwrap_or(Case::Stable);
        let mut cfg = Self::for_case(case);
        for (k, v) in &entries {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Sets one key. `case` resets `kappa` and `alpha` to the case values.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "case" => {
                self.case = value.parse()?;
                self.kappa = self.case.kappa();
                self.alpha = self.case.alpha();
            }
            "kappa" => self.kappa = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "gamma" => self.gamma = num(key, value)?,
            "sigma" => self.sigma = num(key, value)?,
            "exploration_shape" => {
                let v = list(key, value)?;
                let n = (v.len() as f64).sqrt().round() as usize;
                if n * n != v.len() {
                    return Err(Error::Config(format!("exploration_shape needs a square number of entries, got {}", v.len())));
                }
                self.exploration_shape = DMatrix::from_row_slice(n, n, &v);
            }
            "tau" => self.tau = num(key, value)?,
            "beta" => self.beta_deg = num(key, value)?,
            "beta_hat" => self.beta_hat_deg = num(key, value)?,
            "n_t" => self.n_t = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "horizon" => self.horizon = num(key, value)?,
            "rl_steps" => self.rl_steps = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "x_ref" => self.x_ref = list(key, value)?,
            "u_ref" => self.u_ref = Some(list(key, value)?),
            "s0" => self.s0 = list(key, value)?,
            "vertex_radius" => self.vertex_radius = num(key, value)?,
            "dataset_cap_factor" => self.dataset_cap_factor = num(key, value)?,
            "gradient_scaling" => self.gradient_scaling = value.parse()?,
            "failure_budget" => self.failure_budget = num(key, value)?,
            "output_dir" => self.output_dir = PathBuf::from(value),
            _ => return Err(Error::Config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma = {} is outside [0, 1]", self.gamma));
        }
        if !(self.tau > 0.0) || !(self.sigma > 0.0) {
            return bad("tau and sigma must be positive".into());
        }
        if !(self.alpha >= 0.0) || !(self.kappa > 0.0) || !(self.vertex_radius > 0.0) {
            return bad("alpha must be non-negative, kappa and vertex_radius positive".into());
        }
        if self.n_t == 0 || self.batch_size == 0 || self.horizon == 0 {
            return bad("n_t, batch_size and horizon must be positive".into());
        }
        if self.x_ref.len() != 2 || self.s0.len() != 2 || self.u_ref.as_ref().is_some_and(|u| u.len() != 2) {
            return bad("x_ref, u_ref and s0 must have two entries".into());
        }
        if self.exploration_shape.nrows() != 2 {
            return bad("exploration_shape must be 2 × 2".into());
        }
        Ok(())
    }

    /// `key = value` text that parses back to this configuration.
    pub fn to_text(&self) -> String {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let shape: Vec<f64> = self.exploration_shape.transpose().iter().copied().collect();
        let mut out = format!(
            "case = {}\nkappa = {}\nalpha = {}\ngamma = {}\nsigma = {}\nexploration_shape = {}\ntau = {}\nbeta = {}\nbeta_hat = {}\n\
             n_t = {}\nbatch_size = {}\nhorizon = {}\nrl_steps = {}\nseed = {}\nx_ref = {}\ns0 = {}\nvertex_radius = {}\n\
             dataset_cap_factor = {}\ngradient_scaling = {}\nfailure_budget = {}\noutput_dir = {}\n",
            match self.case {
                Case::Stable => 1,
                Case::Unstable => 2,
            },
            self.kappa,
            self.alpha,
            self.gamma,
            self.sigma,
            join(&shape),
            self.tau,
            self.beta_deg,
            self.beta_hat_deg,
            self.n_t,
            self.batch_size,
            self.horizon,
            self.rl_steps,
            self.seed,
            join(&self.x_ref),
            join(&self.s0),
            self.vertex_radius,
            self.dataset_cap_factor,
            match self.gradient_scaling {
                GradientScaling::Sum => "sum",
                GradientScaling::PerEpisode => "per_episode",
                GradientScaling::PerSample => "per_sample",
            },
            self.failure_budget,
            self.output_dir.display(),
        );
        if let Some(u) = &self.u_ref {
            out.push_str(&format!("u_ref = {}\n", join(u)));
        }
        out
    }
}

fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn list(key: &str, value: &str) -> Result<Vec<f64>> {
    value.split(',').map(|t| num(key, t.trim())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_defaults_and_overrides() {
        let c = ExperimentConfig::parse("case = 2\n# comment\nalpha = 0.02  # inline\nx_ref = 0.1, -0.2\n").unwrap();
        assert_eq!((c.kappa, c.alpha), (1.05, 0.02));
        assert_eq!(c.x_ref, vec![0.1, -0.2]);
        assert_eq!(c.n_t, 20);
    }

    #[test]
    fn text_roundtrip() {
        let mut c = ExperimentConfig::for_case(Case::Unstable);
        c.u_ref = Some(vec![0.25, -1.0 / 3.0]);
        c.gradient_scaling = GradientScaling::Sum;
        assert_eq!(ExperimentConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_input() {
        for text in ["gamma = 1.5", "bogus = 1", "tau = -1", "n_t = x", "seed", "seed = 1\nseed = 2", "x_ref = 1"] {
            assert!(matches!(ExperimentConfig::parse(text), Err(Error::Config(_))), "{text}");
        }
    }
}
