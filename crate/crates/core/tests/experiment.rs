use mpcrl::experiment::{render_plot_data, run_experiment, write_artifacts, Case, ExperimentConfig, PlotData};
use mpcrl::learner::GradientScaling;
use proptest::prelude::*;

fn small(rl_steps: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::for_case(Case::Stable);
    cfg.rl_steps = rl_steps;
    cfg.batch_size = 3;
    cfg.n_t = 6;
    cfg.seed = 7;
    cfg
}

#[test]
fn zero_updates_evaluate_one_batch() {
    let art = run_experiment(&small(0)).unwrap();
    assert_eq!(art.rows.len(), 1);
    assert_eq!(art.rows[0].update, None);
    assert_eq!(art.thetas.len(), 1);
    assert_eq!(art.audit.closed_loop_steps, 18);
    let trend = render_plot_data(&art, PlotData::JTrend);
    assert_eq!(trend.lines().count(), 2);
}

#[test]
fn artifact_files_have_one_row_per_step() {
    let art = run_experiment(&small(2)).unwrap();
    assert_eq!(art.rows.len(), 3);
    assert_eq!(art.audit.violations, 0);
    assert_eq!(art.audit.membership_failures, 0);
    assert!(art.rows[..2].iter().all(|r| r.update.is_some()));

    let dir = std::path::PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("experiment_rows");
    let files = write_artifacts(&art, &dir).unwrap();
    assert_eq!(files.len(), 8);
    for which in [PlotData::JTrend, PlotData::ModelDiff, PlotData::Feedback] {
        let text = std::fs::read_to_string(dir.join(which.file_name())).unwrap();
        assert_eq!(text.lines().count(), 4, "{which:?}");
        assert!(text.lines().next().unwrap().contains("[-]"));
    }
    let vertices = std::fs::read_to_string(dir.join(PlotData::Vertices.file_name())).unwrap();
    assert_eq!(vertices.lines().filter(|l| l.starts_with("vertex,")).count(), 12);
    assert_eq!(vertices.lines().filter(|l| l.starts_with("residual,")).count(), 18);

    let cfg = ExperimentConfig::from_file(&dir.join("config.txt")).unwrap();
    assert_eq!(cfg, art.config);
}

#[test]
fn plot_selectors_parse() {
    for (s, p) in [("j-trend", PlotData::JTrend), ("model_diff", PlotData::ModelDiff), ("feedback", PlotData::Feedback)] {
        assert_eq!(s.parse::<PlotData>().unwrap(), p);
    }
    assert!("histogram".parse::<PlotData>().is_err());
}

proptest! {
    #[test]
    fn config_text_round_trips(
        case in prop_oneof![Just(Case::Stable), Just(Case::Unstable)],
        alpha in 0.0..1.0f64,
        gamma in 0.0..1.0f64,
        seed in any::<u64>(),
        rl_steps in 0usize..500,
        x in prop::collection::vec(-2.0..2.0f64, 2),
        scaling in prop_oneof![Just(GradientScaling::Sum), Just(GradientScaling::PerEpisode), Just(GradientScaling::PerSample)],
    ) {
        let mut cfg = ExperimentConfig::for_case(case);
        cfg.alpha = alpha;
        cfg.gamma = gamma;
        cfg.seed = seed;
        cfg.rl_steps = rl_steps;
        cfg.x_ref = x.clone();
        cfg.u_ref = Some(x);
        cfg.gradient_scaling = scaling;
        prop_assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }
}
