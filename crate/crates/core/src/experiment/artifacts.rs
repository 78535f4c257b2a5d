use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::RunArtifacts;
use crate::error::{Error, Result};
use crate::learner::UpdateMethod;

/// Plot-data files derived from a run.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotData {
    JTrend,
    Trajectories,
    ModelDiff,
    Vertices,
    Feedback,
}

impl PlotData {
    pub const ALL: [PlotData; 5] =
        [PlotData::JTrend, PlotData::Trajectories, PlotData::ModelDiff, PlotData::Vertices, PlotData::Feedback];

    pub fn file_name(self) -> &'static str {
        match self {
            PlotData::JTrend => "j_trend.csv",
            PlotData::Trajectories => "trajectories.csv",
            PlotData::ModelDiff => "model_diff.csv",
            PlotData::Vertices => "vertices.csv",
            PlotData::Feedback => "feedback.csv",
        }
    }
}

impl FromStr for PlotData {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "j-trend" | "j_trend" => Ok(PlotData::JTrend),
            "trajectories" => Ok(PlotData::Trajectories),
            "model-diff" | "model_diff" => Ok(PlotData::ModelDiff),
            "vertices" => Ok(PlotData::Vertices),
            "feedback" => Ok(PlotData::Feedback),
            other => Err(Error::Config(format!("unknown plot data selector '{other}'"))),
        }
    }
}

fn method_name(m: Option<UpdateMethod>) -> &'static str {
    match m {
        None => "none",
        Some(UpdateMethod::Plain) => "plain",
        Some(UpdateMethod::InteriorPoint) => "interior_point",
        Some(UpdateMethod::ActiveSet) => "active_set",
        Some(UpdateMethod::Rejected) => "rejected",
    }
}

/// CSV text of one plot-data selector. Floats use shortest round-trip
/// formatting, so equal runs give equal bytes.
pub fn render_plot_data(art: &RunArtifacts, which: PlotData) -> String {
    let mut out = String::new();
    match which {
        PlotData::JTrend => {
            out.push_str(
                "step[-],j_mean[cost],j_std[cost],violations[count],failed_episodes[count],update[-],alpha[-],\
                 dataset_size[count],gradient_norm[-],noise_draws[count]\n",
            );
            for r in &art.rows {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.step,
                    r.j_mean,
                    r.j_std,
                    r.violations,
                    r.failed_episodes,
                    method_name(r.update),
                    r.alpha,
                    r.dataset_size,
                    r.gradient_norm,
                    r.noise_draws
                );
            }
        }
        PlotData::Trajectories => {
            out.push_str("rl_step[-],episode[-],k[-],x1[state],x2[state],u1[input],u2[input]\n");
            for dump in art.first.iter().chain(art.last.iter().filter(|l| Some(l.step) != art.first.as_ref().map(|f| f.step))) {
                for (e, k, x, u) in &dump.points {
                    let (u1, u2) = u.as_ref().map_or((String::new(), String::new()), |u| (u[0].to_string(), u[1].to_string()));
                    let _ = writeln!(out, "{},{e},{k},{},{},{u1},{u2}", dump.step, x[0], x[1]);
                }
            }
        }
        PlotData::ModelDiff => {
            out.push_str("step[-],a0_error_fro[-],b0_error_fro[-],b0_norm[state]\n");
            for (step, _) in art.thetas.iter().enumerate() {
                let p = art.params(step);
                let _ = writeln!(
                    out,
                    "{step},{},{},{}",
                    (&p.a0 - &art.a_real).norm(),
                    (&p.b0 - &art.b_real).norm(),
                    p.bias.norm()
                );
            }
        }
        PlotData::Vertices => {
            out.push_str("kind[-],step[-],index[-],w1[state],w2[state]\n");
            for (k, r) in art.first_residuals.iter().enumerate() {
                let _ = writeln!(out, "residual,0,{k},{},{}", r[0], r[1]);
            }
            for (step, _) in art.thetas.iter().enumerate() {
                for (j, w) in art.params(step).vertices.iter().enumerate() {
                    let _ = writeln!(out, "vertex,{step},{},{},{}", j + 1, w[0], w[1]);
                }
            }
        }
        PlotData::Feedback => {
            out.push_str("step[-],k11[-],k12[-],k21[-],k22[-]\n");
            for (step, _) in art.thetas.iter().enumerate() {
                let k = art.params(step).k;
                let _ = writeln!(out, "{step},{},{},{},{}", k[(0, 0)], k[(0, 1)], k[(1, 0)], k[(1, 1)]);
            }
        }
    }
    out
}

/// Writes one plot-data file into `dir` and returns its path.
pub fn emit_plot_data(art: &RunArtifacts, which: PlotData, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(which.file_name());
    std::fs::write(&path, render_plot_data(art, which))?;
    Ok(path)
}

fn render_theta(art: &RunArtifacts) -> String {
    let mut out = String::from("step[-]");
    for i in 0..art.layout.len() {
        let _ = write!(out, ",theta_{i}[-]");
    }
    out.push('\n');
    for (step, t) in art.thetas.iter().enumerate() {
        out.push_str(&step.to_string());
        for v in t {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn render_summary(art: &RunArtifacts) -> String {
    let a = &art.audit;
    let window = 10.min(art.rows.len());
    let rows = [
        ("rl_steps", art.config.rl_steps.to_string()),
        ("closed_loop_steps", a.closed_loop_steps.to_string()),
        ("violations", a.violations.to_string()),
        ("failed_episodes", a.failed_episodes.to_string()),
        ("rejected_updates", a.rejected_updates.to_string()),
        ("membership_failures", a.membership_failures.to_string()),
        ("noise_draws_per_sample", a.noise_draws_per_sample.to_string()),
        ("j_first", art.rows.first().map_or(f64::NAN, |r| r.j_mean).to_string()),
        ("j_last", art.rows.last().map_or(f64::NAN, |r| r.j_mean).to_string()),
        ("j_initial_window_mean", art.j_window(window, false).to_string()),
        ("j_final_window_mean", art.j_window(window, true).to_string()),
    ];
    let mut out = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(out, "{k},{v}");
    }
    out
}

/// Writes every plot-data file plus `theta.csv`, `summary.csv` and the
/// effective `config.txt`. Returns the written paths.
pub fn write_artifacts(art: &RunArtifacts, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for which in PlotData::ALL {
        paths.push(emit_plot_data(art, which, dir)?);
    }
    for (name, text) in
        [("theta.csv", render_theta(art)), ("summary.csv", render_summary(art)), ("config.txt", art.config.to_text())]
    {
        let p = dir.join(name);
        std::fs::write(&p, text)?;
        paths.push(p);
    }
    Ok(paths)
}
