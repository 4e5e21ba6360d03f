//! Run orchestration: config, the validate → analyze → smooth → screen →
//! iterate → verify pipeline, checkpoints and result files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{assemble_initial_forms, coupling_tensor, WeightedSpace};
use crate::kam::engine::{finish_run, load_state, save_state};
use crate::kam::{build_schedule, EngineOptions, IterationState, KamEngine, Schedule, StepRecord, TransformChain};
use crate::potential::{
    fourier_analyze, validate_assumptions, AnalysisOptions, FrequencySpec, PotentialFourier, PotentialPreset,
    PotentialSpec, ValidationReport,
};
use crate::resonance::{measure_scan, screen_tau, ParameterMask, ResonanceReport, ScreenResult};
use crate::smoothing::{decompose, DecomposeOptions, JacksonKernel, PieceStats};
use crate::verify::{
    compare_through_chain, integrate_full, integrate_reduced, lyapunov_exponent, multiplier_decay, MultiplierEstimate,
    TruncatedWaveSystem,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const REFERENCE_EPS: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSweep {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl TauSweep {
    /// Parses `LO:HI:COUNT`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::Config(format!("tau sweep '{s}' is not LO:HI:COUNT"));
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(TauSweep {
            lo: parts[0].trim().parse().map_err(|_| bad())?,
            hi: parts[1].trim().parse().map_err(|_| bad())?,
            count: parts[2].trim().parse().map_err(|_| bad())?,
        })
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        (0..self.count).map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.count - 1) as f64).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub enabled: bool,
    /// Comparison horizon `T`.
    pub horizon: f64,
    /// Integrator step; `None` selects `0.1/J`.
    pub dt: Option<f64>,
    pub sample_dt: f64,
    /// Lyapunov estimates are taken at `T` and `4T`.
    pub lyapunov_horizon: f64,
    pub renorm_dt: f64,
    pub theta0: Vec<f64>,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            enabled: true,
            horizon: 100.0,
            dt: None,
            sample_dt: 1.0,
            lyapunov_horizon: 100.0,
            renorm_dt: 1.0,
            theta0: vec![0.0, 0.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub potential: PotentialPreset,
    pub n: usize,
    pub omega0: Vec<f64>,
    pub smoothness: u32,
    pub gamma: f64,
    pub eps: f64,
    pub tau: f64,
    pub tau_sweep: Option<TauSweep>,
    pub j_max: usize,
    pub k_theta: usize,
    pub steps: usize,
    pub k_check: usize,
    pub validation_grid: usize,
    pub tail_tol: f64,
    pub resonance_grid: usize,
    pub engine: EngineOptions,
    pub verify: VerifyConfig,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            potential: PotentialPreset::FiniteSmooth { smoothness: 8, amplitude: 0.02, theta_octaves: 4, x_octaves: 4 },
            n: 2,
            omega0: vec![1.0, 2f64.sqrt()],
            smoothness: 8,
            gamma: 0.05,
            eps: 1e-3,
            tau: 1.37,
            tau_sweep: None,
            j_max: 32,
            k_theta: 16,
            steps: 4,
            k_check: 20,
            validation_grid: 64,
            tail_tol: 1e-6,
            resonance_grid: 10_000,
            engine: EngineOptions::default(),
            verify: VerifyConfig::default(),
            seed: 0,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// `ε` used for the schedule; an unperturbed run borrows
    /// [`REFERENCE_EPS`] so that strips and cutoffs stay finite.
    pub fn schedule_eps(&self) -> f64 {
        if self.eps > 0.0 {
            self.eps
        } else {
            REFERENCE_EPS
        }
    }

    pub fn freq(&self) -> Result<FrequencySpec> {
        FrequencySpec::new(self.omega0.clone(), self.tau, self.gamma).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn check(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.omega0.len() != self.n {
            return fail(format!("n = {} but {} base frequencies given", self.n, self.omega0.len()));
        }
        if !(self.eps >= 0.0 && self.eps < 1.0) {
            return fail(format!("eps = {} outside [0, 1)", self.eps));
        }
        if !(1.0..=2.0).contains(&self.tau) {
            return fail(format!("tau = {} outside [1, 2]", self.tau));
        }
        if let Some(s) = &self.tau_sweep {
            if s.count < 2 || !(1.0..=2.0).contains(&s.lo) || !(1.0..=2.0).contains(&s.hi) || s.lo > s.hi {
                return fail(format!("tau sweep {s:?} must have at least 2 points inside [1, 2]"));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma = {} outside (0, 1)", self.gamma));
        }
        if self.j_max < 1 || self.k_theta < 1 || self.steps < 1 || self.k_check < 1 {
            return fail("truncations, steps and K_check must be at least 1".into());
        }
        if self.smoothness < 2 {
            return fail(format!("smoothness N = {} must be at least 2", self.smoothness));
        }
        if self.resonance_grid < 100 {
            return fail(format!("resonance grid {} below 100", self.resonance_grid));
        }
        let e = &self.engine;
        let v = &self.verify;
        let tols = [
            e.picard_tol,
            e.residual_tol,
            e.series_rel_tol,
            e.consistency_tol,
            e.symplectic_tol,
            self.tail_tol,
            v.horizon,
            v.sample_dt,
            v.lyapunov_horizon,
            v.renorm_dt,
        ];
        if tols.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return fail("tolerances and horizons must be positive".into());
        }
        if v.dt.is_some_and(|d| !(d > 0.0)) {
            return fail("verify.dt must be positive".into());
        }
        if v.theta0.len() != self.n {
            return fail(format!("verify.theta0 has {} entries for n = {}", v.theta0.len(), self.n));
        }
        if e.grid_factor < 2 || e.norm_grid < 1 || e.check_grid < 1 {
            return fail("grid_factor must be at least 2 and sample grids at least 1".into());
        }
        self.potential.hull(self.n).map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    Resonant,
    StepSizeAbort,
    ConfigError,
    Failed,
}

impl RunStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            RunStatus::Converged => 0,
            RunStatus::Resonant => 2,
            RunStatus::StepSizeAbort => 3,
            RunStatus::ConfigError => 4,
            RunStatus::Failed => 1,
        }
    }

    pub fn of_error(e: &Error) -> Self {
        match e {
            Error::Resonance { .. } => RunStatus::Resonant,
            Error::StepSize { .. } => RunStatus::StepSizeAbort,
            Error::Config(_) | Error::InvalidPotential(_) | Error::Json(_) => RunStatus::ConfigError,
            _ => RunStatus::Failed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub module: String,
    pub step: Option<usize>,
    pub message: String,
}

impl ErrorReport {
    pub fn new(e: &Error) -> Self {
        let step = match e {
            Error::Resonance { step, .. } | Error::StepSize { step, .. } => Some(*step),
            _ => None,
        };
        ErrorReport { module: e.module().to_string(), step, message: e.to_string() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSummary {
    pub step: usize,
    pub k_cut: usize,
    pub gamma: f64,
    pub excluded_fraction: f64,
    pub empirical_constant: f64,
    /// Fraction of the τ grid left in `Π_{m+1}`.
    pub remaining_fraction: f64,
    /// Whether the run's τ is still in `Π_{m+1}`.
    pub tau_kept: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSummary {
    pub horizon: f64,
    pub top_exponent: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verification {
    pub horizon: f64,
    pub dt: f64,
    pub max_rel_deviation: f64,
    pub worst_time: f64,
    pub action_drift: f64,
    /// `max_rel_deviation / final_remainder_norm`.
    pub deviation_over_remainder: f64,
    /// `sup_t ‖x(t)‖_N / ‖x(0)‖_N` of the full trajectory.
    pub norm_growth: f64,
    pub lyapunov: Vec<LyapunovSummary>,
    /// Exponent at `T` over exponent at `4T`, in absolute value.
    pub lyapunov_shrink: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub analyze: f64,
    pub decompose: f64,
    pub screen: f64,
    pub kam: f64,
    pub verify: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub schema_version: u32,
    pub status: RunStatus,
    pub error: Option<ErrorReport>,
    pub config: RunConfig,
    pub validation: Option<ValidationReport>,
    pub potential_tail_norm: Option<f64>,
    pub potential_tail_flagged: Option<bool>,
    pub decomposition: Vec<PieceStats>,
    pub decomposition_residual: Option<f64>,
    pub schedule: Option<Schedule>,
    pub screen: Option<ScreenResult>,
    pub steps: Vec<StepRecord>,
    pub resonance: Vec<ResonanceSummary>,
    pub lambda: Vec<f64>,
    pub mu_decay: Vec<f64>,
    pub multipliers: Option<MultiplierEstimate>,
    pub final_remainder_norm: Option<f64>,
    pub composed_norm: Option<f64>,
    pub verification: Option<Verification>,
    pub timings: Timings,
}

impl RunSummary {
    fn empty(config: &RunConfig) -> Self {
        RunSummary {
            schema_version: SCHEMA_VERSION,
            status: RunStatus::Failed,
            error: None,
            config: config.clone(),
            validation: None,
            potential_tail_norm: None,
            potential_tail_flagged: None,
            decomposition: Vec::new(),
            decomposition_residual: None,
            schedule: None,
            screen: None,
            steps: Vec::new(),
            resonance: Vec::new(),
            lambda: Vec::new(),
            mu_decay: Vec::new(),
            multipliers: None,
            final_remainder_norm: None,
            composed_norm: None,
            verification: None,
            timings: Timings::default(),
        }
    }

    /// The summary as JSON with timings removed, for reproducibility checks.
    pub fn without_timings(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("summary serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("timings");
        }
        v
    }
}

/// Output layout under `--out`.
#[derive(Clone, Debug)]
pub struct OutDir {
    pub root: PathBuf,
}

impl OutDir {
    pub fn new(root: &Path) -> Result<Self> {
        for sub in ["steps", "trajectories", "checkpoint"] {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(OutDir { root: root.to_path_buf() })
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint")
    }

    fn write_json<T: Serialize>(&self, rel: &str, value: &T) -> Result<()> {
        let path = self.root.join(rel);
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, serde_json::to_vec_pretty(value)?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    fn create(&self, rel: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.root.join(rel))?))
    }
}

#[derive(Serialize)]
struct StepFile<'a> {
    record: &'a StepRecord,
    resonance: Option<&'a ResonanceSummary>,
    lambda: &'a [f64],
}

/// Everything derived from the config before the iteration starts.
struct Prepared {
    spec: PotentialSpec,
    pf: PotentialFourier,
    ws: WeightedSpace,
    schedule: Schedule,
}

fn analyze(config: &RunConfig, summary: &mut RunSummary) -> Result<Prepared> {
    let freq = config.freq()?;
    let hull = config.potential.hull(config.n).map_err(|e| Error::Config(e.to_string()))?;
    let spec = PotentialSpec::new(hull, config.smoothness, freq, config.eps);
    let report = validate_assumptions(&spec, config.k_check, config.validation_grid)?;
    summary.validation = Some(report.clone());
    if !report.passed() {
        return Err(Error::InvalidPotential(format!(
            "assumption check failed: even={}, zero average={}, diophantine={} (margin {:.3e} at k={:?})",
            report.even, report.zero_average, report.diophantine, report.diophantine_margin, report.worst_k
        )));
    }
    let opts = AnalysisOptions { tail_tol: config.tail_tol, ..Default::default() };
    let pf = fourier_analyze(&spec, config.k_theta, config.j_max, &opts)?;
    summary.potential_tail_norm = Some(pf.tail_norm);
    summary.potential_tail_flagged = Some(pf.tail_flagged);
    if pf.tail_flagged {
        log::warn!("potential tail norm {:.3e} exceeds {:.1e}", pf.tail_norm, config.tail_tol);
    }
    let ws = WeightedSpace::new(config.smoothness, config.j_max);
    let schedule = build_schedule(config.schedule_eps(), config.smoothness, config.gamma, config.n, config.steps)?;
    summary.schedule = Some(schedule.clone());
    Ok(Prepared { spec, pf, ws, schedule })
}

fn resonance_summary(rep: &ResonanceReport, mask: &ParameterMask, tau: f64) -> ResonanceSummary {
    let p = ((tau - crate::resonance::TAU_LO) / (crate::resonance::TAU_HI - crate::resonance::TAU_LO)
        * (mask.grid_points - 1) as f64)
        .round() as usize;
    ResonanceSummary {
        step: rep.step,
        k_cut: rep.k_cut,
        gamma: rep.gamma,
        excluded_fraction: rep.excluded_fraction,
        empirical_constant: rep.empirical_constant,
        remaining_fraction: mask.fraction(),
        tau_kept: mask.keep[p.min(mask.grid_points - 1)],
    }
}

/// Writes the per-step scans as one CSV with a leading step column.
fn write_resonance_csv(out: &OutDir, reports: &[ResonanceReport]) -> Result<()> {
    let mut w = out.create("resonance.csv")?;
    for (i, rep) in reports.iter().enumerate() {
        let mut buf = Vec::new();
        rep.write_csv(&mut buf)?;
        let text = String::from_utf8(buf).expect("csv is utf-8");
        for (l, line) in text.lines().enumerate() {
            if l == 0 {
                if i == 0 {
                    writeln!(w, "step,{line}")?;
                }
                continue;
            }
            writeln!(w, "{},{line}", rep.step)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn initial_state_vector(config: &RunConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let j = config.j_max;
    let n = config.smoothness as i32;
    (0..2 * j).map(|i| rng.gen_range(-1.0..1.0) * (((i % j) + 1) as f64).powi(-n - 1)).collect()
}

/// The iteration itself, continuing from `state`. Scans the τ grid at every
/// step, writes a checkpoint and a step file after each step.
fn iterate(
    config: &RunConfig,
    prep: &Prepared,
    out: Option<&OutDir>,
    state: &mut IterationState,
    chain: &mut TransformChain,
    summary: &mut RunSummary,
    reports: &mut Vec<ResonanceReport>,
    stop_after: Option<usize>,
) -> Result<bool> {
    let engine = KamEngine::new(prep.pf.modes.clone(), prep.ws.clone(), config.engine.clone())?;
    let mut mask = ParameterMask::full(config.resonance_grid);
    for r in reports.iter() {
        mask.refine(r)?;
    }
    let box_l1 = config.n * config.k_theta;
    while !state.done() {
        if stop_after.is_some_and(|s| state.m >= s) {
            return Ok(false);
        }
        let m = state.m;
        let (k_cut, _) = state.schedule.effective_cutoff(m, box_l1);
        let rep = measure_scan(
            &state.normal_form,
            &state.freq,
            k_cut,
            state.schedule.gamma[m],
            config.j_max,
            config.resonance_grid,
            m,
        )?;
        mask.refine(&rep)?;
        let rs = resonance_summary(&rep, &mask, config.tau);
        summary.resonance.push(rs.clone());
        reports.push(rep);
        let rec = engine.step(state, chain)?;
        if let Some(o) = out {
            save_state(&o.checkpoint(), state, chain)?;
            let file = StepFile { record: &rec, resonance: Some(&rs), lambda: &state.normal_form.lambda };
            o.write_json(&format!("steps/step_{m}.json"), &file)?;
        }
        summary.steps.push(rec);
    }
    let dim = 2 * config.j_max;
    chain.measure_composed_norm(&engine.check_thetas(), dim, prep.ws.n_weight)?;
    Ok(true)
}

fn run_verification(
    config: &RunConfig,
    prep: &Prepared,
    chain: &TransformChain,
    nf: &crate::kam::NormalForm,
    final_remainder: f64,
    out: Option<&OutDir>,
) -> Result<Verification> {
    let v = &config.verify;
    let omega = prep.spec.freq.omega();
    let sys = TruncatedWaveSystem::new(&prep.pf, &coupling_tensor(config.j_max), config.eps, omega)?;
    let dt = v.dt.unwrap_or(0.1 / config.j_max as f64);
    let dim = 2 * config.j_max;
    let y0 = initial_state_vector(config);
    let psi0 = chain.compose(&v.theta0, dim)?;
    let x0 = &psi0 * DVector::from_column_slice(&y0);
    let full = integrate_full(&sys, &v.theta0, &x0, v.horizon, dt, v.sample_dt)?;
    let reduced = integrate_reduced(nf, &y0, &full.t)?;
    let cmp = compare_through_chain(chain, &full, &reduced, &v.theta0, &prep.ws)?;
    let along = sys.along(&v.theta0);
    let mut lyapunov = Vec::new();
    let mut series = Vec::new();
    for h in [v.lyapunov_horizon, 4.0 * v.lyapunov_horizon] {
        let est = lyapunov_exponent(&along, h, v.renorm_dt, dt, config.seed)?;
        lyapunov.push(LyapunovSummary { horizon: h, top_exponent: est.top_exponent });
        series.push(est);
    }
    if let Some(o) = out {
        full.write_csv(&mut o.create("trajectories/full.csv")?)?;
        reduced.write_csv(&mut o.create("trajectories/reduced.csv")?)?;
        let mut w = o.create("trajectories/deviation.csv")?;
        writeln!(w, "t,rel_deviation")?;
        for (t, d) in &cmp.profile {
            writeln!(w, "{t},{d:e}")?;
        }
        w.flush()?;
        for (i, est) in series.iter().enumerate() {
            let mut w = o.create(&format!("trajectories/lyapunov_{i}.csv"))?;
            writeln!(w, "t,log_growth")?;
            for (t, g) in &est.growth_series {
                writeln!(w, "{t},{g:e}")?;
            }
            w.flush()?;
        }
    }
    Ok(Verification {
        horizon: v.horizon,
        dt,
        max_rel_deviation: cmp.max_rel_deviation,
        worst_time: cmp.worst_time,
        action_drift: cmp.action_drift,
        deviation_over_remainder: if final_remainder > 0.0 { cmp.max_rel_deviation / final_remainder } else { 0.0 },
        norm_growth: full.norm_growth(&prep.ws),
        lyapunov_shrink: lyapunov[0].top_exponent.abs() / lyapunov[1].top_exponent.abs().max(f64::MIN_POSITIVE),
        lyapunov,
    })
}

#[derive(Clone, Debug, Default)]
pub struct RunControl {
    /// Stop (with a checkpoint) once this many steps are done.
    pub stop_after: Option<usize>,
    /// Continue from the checkpoint under the output directory.
    pub resume: bool,
}

/// Runs the pipeline, writing results under `config.out` when set. Module
/// errors are recorded in the summary; the status says how the run ended.
pub fn run_pipeline(config: &RunConfig) -> RunSummary {
    run_pipeline_with(config, &RunControl::default())
}

pub fn run_pipeline_with(config: &RunConfig, control: &RunControl) -> RunSummary {
    let start = Instant::now();
    let mut summary = RunSummary::empty(config);
    let out = match config.out.as_deref().map(OutDir::new).transpose() {
        Ok(o) => o,
        Err(e) => {
            summary.status = RunStatus::of_error(&e);
            summary.error = Some(ErrorReport::new(&e));
            return summary;
        }
    };
    let result = pipeline_body(config, control, out.as_ref(), &mut summary, start);
    match result {
        Ok(true) => summary.status = RunStatus::Converged,
        Ok(false) => {
            summary.status = RunStatus::Failed;
            summary.error =
                Some(ErrorReport { module: "cli".into(), step: None, message: "stopped before the last step".into() });
        }
        Err(e) => {
            log::error!("[{}] {e}", e.module());
            summary.status = RunStatus::of_error(&e);
            summary.error = Some(ErrorReport::new(&e));
        }
    }
    summary.timings.total = start.elapsed().as_secs_f64();
    if let Some(o) = &out {
        if let Err(e) = o.write_json("summary.json", &summary) {
            log::error!("could not write the summary: {e}");
        }
    }
    summary
}

fn pipeline_body(
    config: &RunConfig,
    control: &RunControl,
    out: Option<&OutDir>,
    summary: &mut RunSummary,
    start: Instant,
) -> Result<bool> {
    config.check()?;
    if let Some(o) = out {
        o.write_json("config.json", config)?;
    }
    let t = Instant::now();
    let prep = analyze(config, summary)?;
    summary.timings.analyze = t.elapsed().as_secs_f64();

    let (mut state, mut chain, mut reports) = if control.resume {
        let o = out.ok_or_else(|| Error::Config("resume needs an output directory".into()))?;
        let (state, chain) = load_state(&o.checkpoint())?;
        if state.freq != prep.spec.freq || state.schedule != prep.schedule {
            return Err(Error::Config("checkpoint does not match the config".into()));
        }
        let prior: RunSummary = serde_json::from_slice(&fs::read(o.root.join("summary.json"))?)?;
        summary.decomposition = prior.decomposition;
        summary.decomposition_residual = prior.decomposition_residual;
        summary.screen = prior.screen;
        summary.steps = state.diagnostics.clone();
        summary.resonance = prior.resonance.into_iter().take(state.m).collect();
        // the scans are cheap and deterministic; rebuild them for the mask
        let mut reports = Vec::new();
        let box_l1 = config.n * config.k_theta;
        for m in 0..state.m {
            let (k_cut, _) = state.schedule.effective_cutoff(m, box_l1);
            let nf = state.normal_form.truncated(m);
            reports.push(measure_scan(
                &nf,
                &state.freq,
                k_cut,
                state.schedule.gamma[m],
                config.j_max,
                config.resonance_grid,
                m,
            )?);
        }
        (state, chain, reports)
    } else {
        let t = Instant::now();
        let qf = assemble_initial_forms(&prep.pf, &coupling_tensor(config.j_max), &prep.ws)?;
        let dec = decompose(
            &qf,
            &prep.schedule.strip,
            &JacksonKernel,
            &prep.ws,
            &DecomposeOptions { norm_grid: config.engine.norm_grid, scales: None },
        )?;
        summary.decomposition = dec.stats.clone();
        summary.decomposition_residual = Some(dec.residual_norm);
        summary.timings.decompose = t.elapsed().as_secs_f64();

        let t = Instant::now();
        let nf0 = crate::kam::NormalForm::initial(config.j_max);
        let (k0, _) = prep.schedule.effective_cutoff(0, config.n * config.k_theta);
        let screen = screen_tau(config.tau, &nf0, &prep.spec.freq, k0, prep.schedule.gamma[0], config.j_max)?;
        summary.screen = Some(screen.clone());
        summary.timings.screen = t.elapsed().as_secs_f64();
        if !screen.pass {
            let w = screen.worst.expect("a failing screen has a worst query");
            return Err(Error::Resonance {
                step: 0,
                k: w.k,
                i: w.i,
                j: w.j,
                kind: w.kind.name().into(),
                divisor: w.divisor,
                threshold: w.threshold,
            });
        }
        let state = IterationState::initial(&dec, config.eps, &prep.schedule, &prep.spec.freq)?;
        let chain = TransformChain::new(prep.spec.freq.omega(), config.engine.picard_tol, config.engine.flow_mode);
        (state, chain, Vec::new())
    };

    let t = Instant::now();
    let finished = iterate(config, &prep, out, &mut state, &mut chain, summary, &mut reports, control.stop_after);
    summary.timings.kam += t.elapsed().as_secs_f64();
    if let Some(o) = out {
        write_resonance_csv(o, &reports)?;
    }
    if !finished? {
        return Ok(false);
    }
    let run = finish_run(state, chain, &prep.ws, config.engine.norm_grid);
    summary.lambda = run.normal_form.lambda.clone();
    summary.mu_decay = run.normal_form.decay_constants();
    summary.multipliers = Some(multiplier_decay(&run.normal_form));
    summary.final_remainder_norm = Some(run.final_remainder_norm);
    summary.composed_norm = run.chain.composed_norm;

    if config.verify.enabled {
        let t = Instant::now();
        summary.verification =
            Some(run_verification(config, &prep, &run.chain, &run.normal_form, run.final_remainder_norm, out)?);
        summary.timings.verify = t.elapsed().as_secs_f64();
    }
    log::info!("pipeline finished in {:.1}s", start.elapsed().as_secs_f64());
    Ok(true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub tau: f64,
    pub status: RunStatus,
    pub error: Option<ErrorReport>,
    pub final_remainder_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub schema_version: u32,
    pub entries: Vec<SweepEntry>,
    pub converged_fraction: f64,
    /// `(1 - converged_fraction) / γ^{1/3}`.
    pub empirical_constant: f64,
    pub resonance: ResonanceReport,
}

/// Independent runs, one per τ; each one writes under `out/tau_<i>` when an
/// output directory is set.
pub fn sweep_tau(config: &RunConfig) -> Result<(SweepSummary, Vec<RunSummary>)> {
    config.check()?;
    let sweep = config.tau_sweep.clone().ok_or_else(|| Error::Config("no tau sweep given".into()))?;
    let mut entries = Vec::new();
    let mut runs = Vec::new();
    for (i, tau) in sweep.values().into_iter().enumerate() {
        let mut c = config.clone();
        c.tau = tau;
        c.tau_sweep = None;
        c.out = config.out.as_ref().map(|o| o.join(format!("tau_{i}")));
        let s = run_pipeline(&c);
        entries.push(SweepEntry {
            tau,
            status: s.status,
            error: s.error.clone(),
            final_remainder_norm: s.final_remainder_norm,
        });
        runs.push(s);
    }
    let converged = entries.iter().filter(|e| e.status == RunStatus::Converged).count();
    let converged_fraction = converged as f64 / entries.len() as f64;
    let freq = config.freq()?;
    let sch = build_schedule(config.schedule_eps(), config.smoothness, config.gamma, config.n, config.steps)?;
    let (k0, _) = sch.effective_cutoff(0, config.n * config.k_theta);
    let resonance = measure_scan(
        &crate::kam::NormalForm::initial(config.j_max),
        &freq,
        k0,
        sch.gamma[0],
        config.j_max,
        config.resonance_grid,
        0,
    )?;
    let summary = SweepSummary {
        schema_version: SCHEMA_VERSION,
        entries,
        converged_fraction,
        empirical_constant: (1.0 - converged_fraction) / config.gamma.cbrt(),
        resonance,
    };
    if let Some(o) = &config.out {
        let od = OutDir::new(o)?;
        od.write_json("sweep.json", &summary)?;
        write_resonance_csv(&od, std::slice::from_ref(&summary.resonance))?;
    }
    Ok((summary, runs))
}

/// Re-renders step files and a per-step CSV from a checkpoint, without
/// recomputation.
pub fn report(out_root: &Path) -> Result<Vec<StepRecord>> {
    let out = OutDir { root: out_root.to_path_buf() };
    let (state, _) = load_state(&out.checkpoint())?;
    let prior: Option<RunSummary> =
        fs::read(out.root.join("summary.json")).ok().and_then(|b| serde_json::from_slice(&b).ok());
    fs::create_dir_all(out.root.join("steps"))?;
    let mut w = out.create("steps.csv")?;
    writeln!(
        w,
        "m,eps,strip,cutoff,active_norm,next_active_norm,contraction_exponent,p_norm,p_bound,symplectic_defect,homological_residual,mu_decay,h_rel"
    )?;
    for rec in &state.diagnostics {
        let rs = prior.as_ref().and_then(|p| p.resonance.iter().find(|r| r.step == rec.m));
        let lambda = &state.normal_form.truncated(rec.m + 1).lambda;
        let file = StepFile { record: rec, resonance: rs, lambda };
        out.write_json(&format!("steps/step_{}.json", rec.m), &file)?;
        writeln!(
            w,
            "{},{:e},{},{},{:e},{:e},{},{:e},{:e},{:e},{:e},{:e},{:e}",
            rec.m,
            rec.eps,
            rec.strip,
            rec.cutoff,
            rec.active_norm,
            rec.next_active_norm,
            rec.contraction_exponent.map_or(String::new(), |c| c.to_string()),
            rec.map.p_norm,
            rec.map.p_bound,
            rec.map.symplectic_defect,
            rec.homological_residual,
            rec.mu_decay,
            rec.consistency.h_rel
        )?;
    }
    w.flush()?;
    Ok(state.diagnostics)
}
