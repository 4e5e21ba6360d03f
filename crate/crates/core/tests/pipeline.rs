use std::fs;

use qpwave::kam::NormalForm;
use qpwave::pipeline::{report, run_pipeline, sweep_tau, RunConfig, RunStatus, RunSummary, TauSweep};
use qpwave::resonance::resonant_tau;

fn small() -> RunConfig {
    serde_json::from_str(
        r#"{"j_max": 12, "k_theta": 6, "steps": 3, "resonance_grid": 2000,
            "potential": {"preset": "finite_smooth", "smoothness": 8, "amplitude": 0.02, "theta_octaves": 2, "x_octaves": 2},
            "verify": {"horizon": 10, "lyapunov_horizon": 100}}"#,
    )
    .unwrap()
}

#[test]
fn small_run_writes_every_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c.out = Some(dir.path().to_path_buf());
    let s = run_pipeline(&c);
    assert_eq!(s.status, RunStatus::Converged, "{:?}", s.error);
    assert_eq!(s.steps.len(), 3);
    for f in ["summary.json", "config.json", "resonance.csv", "steps/step_0.json", "steps/step_2.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    for f in ["full.csv", "reduced.csv", "deviation.csv"] {
        assert!(dir.path().join("trajectories").join(f).exists(), "{f}");
    }
    let back: RunSummary = serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(back.without_timings(), s.without_timings());
    let v = s.verification.unwrap();
    assert!(v.max_rel_deviation < 1e-10, "{}", v.max_rel_deviation);
}

#[test]
fn zero_coupling_leaves_the_spectrum() {
    let mut c = small();
    c.eps = 0.0;
    let s = run_pipeline(&c);
    assert_eq!(s.status, RunStatus::Converged, "{:?}", s.error);
    for (j, l) in s.lambda.iter().enumerate() {
        assert_eq!(*l, (j + 1) as f64);
    }
    assert_eq!(s.final_remainder_norm, Some(0.0));
}

#[test]
fn resonant_tau_stops_before_any_step() {
    let mut c = small();
    let freq = c.freq().unwrap();
    c.tau = resonant_tau(&NormalForm::initial(c.j_max), &freq, &[2, -1], 2, 1).unwrap();
    let s = run_pipeline(&c);
    assert_eq!(s.status, RunStatus::Resonant, "{:?}", s.error);
    assert_eq!(s.status.exit_code(), 2);
    assert!(s.steps.is_empty());
    assert!(!s.screen.unwrap().pass);
}

#[test]
fn step_size_guard_aborts() {
    let mut c = small();
    c.potential = serde_json::from_str(
        r#"{"preset": "finite_smooth", "smoothness": 8, "amplitude": 1.0, "theta_octaves": 2, "x_octaves": 2}"#,
    )
    .unwrap();
    let s = run_pipeline(&c);
    assert_eq!(s.status, RunStatus::StepSizeAbort, "{:?}", s.error);
    assert_eq!(s.status.exit_code(), 3);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut c = small();
    c.eps = 1.5;
    assert_eq!(run_pipeline(&c).status, RunStatus::ConfigError);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, r#"{"j_max": 12, "no_such_field": 1}"#).unwrap();
    assert!(RunConfig::from_file(&p).is_err());
    assert!(TauSweep::parse("1.2:1.4").is_err());
    let mut c = small();
    c.tau_sweep = Some(TauSweep::parse("1.2:1.1:3").unwrap());
    assert!(c.check().is_err());
}

#[test]
fn sweep_runs_each_tau_independently() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c.verify.enabled = false;
    c.tau_sweep = Some(TauSweep::parse("1.3:1.4:3").unwrap());
    c.out = Some(dir.path().to_path_buf());
    let (sweep, runs) = sweep_tau(&c).unwrap();
    assert_eq!(sweep.entries.len(), 3);
    assert_eq!(runs.len(), 3);
    for (i, e) in sweep.entries.iter().enumerate() {
        assert_eq!(e.tau, runs[i].config.tau);
        assert!(dir.path().join(format!("tau_{i}/summary.json")).exists());
    }
    assert!(dir.path().join("sweep.json").exists());
    let conv = sweep.entries.iter().filter(|e| e.status == RunStatus::Converged).count();
    assert_eq!(sweep.converged_fraction, conv as f64 / 3.0);
}

#[test]
fn report_rebuilds_step_files_from_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small();
    c.verify.enabled = false;
    c.out = Some(dir.path().to_path_buf());
    let s = run_pipeline(&c);
    let step0 = fs::read(dir.path().join("steps/step_0.json")).unwrap();
    fs::remove_dir_all(dir.path().join("steps")).unwrap();
    let recs = report(dir.path()).unwrap();
    assert_eq!(recs.len(), s.steps.len());
    assert_eq!(fs::read(dir.path().join("steps/step_0.json")).unwrap(), step0);
    assert!(dir.path().join("steps.csv").exists());
}
