//! One KAM step and the full iteration, with per-step checkpoints.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chain::{StepMapStats, TransformChain, TransformStep};
use super::flow::{flow_transform, map_and_derivative, symplectic_defect, weighted_deviation, FlowMode, PicardStats};
use super::homological::{generator_identity_residual, solve_homological, truncate, DivisorHit};
use super::normal_form::{update_normal_form, NormalForm};
use super::remainder::{push_remainder, PushReport};
use super::schedule::Schedule;
use super::GeneratorSeries;
use crate::error::{Error, Result};
use crate::galerkin::{weighted_sup_norm, QuadraticForm, WeightedSpace};
use crate::generator::{normal_form_generator, symplectic_unit};
use crate::potential::FrequencySpec;
use crate::smoothing::DyadicDecomposition;
use crate::torus::{ModeBox, Torus};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineOptions {
    /// Convergence threshold of the Picard iteration (max-entry difference of
    /// successive stage iterates).
    pub picard_tol: f64,
    /// Bound on the relative plug-back residual of the homological equations.
    pub residual_tol: f64,
    /// Lie series stop once terms fall below `series_rel_tol · ε_M`.
    pub series_rel_tol: f64,
    /// Collocation grid per θ axis is `grid_factor · K_theta`.
    pub grid_factor: usize,
    /// θ points per axis for weighted sup norms.
    pub norm_grid: usize,
    /// θ points per axis for symplecticity and `‖P_m‖` checks.
    pub check_grid: usize,
    /// Random `(x, θ)` samples of the Hamiltonian consistency check.
    pub consistency_points: usize,
    pub consistency_tol: f64,
    pub symplectic_tol: f64,
    pub flow_mode: FlowMode,
    pub seed: u64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        EngineOptions {
            picard_tol: 1e-14,
            residual_tol: 1e-10,
            series_rel_tol: 1e-3,
            grid_factor: 4,
            norm_grid: 16,
            check_grid: 6,
            consistency_points: 4,
            consistency_tol: 1e-8,
            symplectic_tol: 1e-8,
            flow_mode: FlowMode::Frozen,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// `max |H_direct - H_tracked| / |H_tracked|` over random `(x, θ)`.
    pub h_rel: f64,
    /// Same error relative to the remainder part of `H_tracked`.
    pub h_rel_remainder: f64,
    /// `max |L_direct - L_tracked|` relative to `max |L_tracked - L_N|`.
    pub matrix_rel_remainder: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub m: usize,
    pub eps: f64,
    pub strip: f64,
    pub gamma: f64,
    pub cutoff_nominal: f64,
    pub cutoff: usize,
    pub cutoff_capped: bool,
    /// Weighted norm of the active piece, `ε_m ‖R_m‖`.
    pub active_norm: f64,
    /// Weighted norm of `(1 - Γ_K)` of the active piece.
    pub high_norm: f64,
    pub divisor_min: Option<DivisorHit>,
    pub margin_min: f64,
    pub homological_residual: f64,
    pub generator_identity_residual: f64,
    /// `max_j |μ_j|` and `max_j j|μ_j|`.
    pub mu_max: f64,
    pub mu_decay: f64,
    /// Weighted norm of the normalized `F`.
    pub f_norm: f64,
    pub picard: PicardStats,
    pub map: StepMapStats,
    pub push: PushReport,
    /// Weighted norm of the next active piece, `ε_{m+1} ‖R_{m+1}‖`.
    pub next_active_norm: f64,
    /// `log(ε_{m+1}‖R_{m+1}‖) / log(ε_m‖R_m‖)`.
    pub contraction_exponent: Option<f64>,
    pub consistency: ConsistencyReport,
}

/// Everything needed to continue the iteration from step `m`.
#[derive(Clone, Debug)]
pub struct IterationState {
    pub m: usize,
    pub normal_form: NormalForm,
    /// Remainder pieces at actual size; `pieces[i]` carries index `m + i` and
    /// strip `s_{m+i}` (the last one is the unsmoothed tail).
    pub pieces: Vec<QuadraticForm>,
    pub schedule: Schedule,
    pub eps: f64,
    pub freq: FrequencySpec,
    pub diagnostics: Vec<StepRecord>,
}

impl IterationState {
    /// Pieces `ε·piece_l` for `l = 0..=M` followed by the tail as index `M + 1`.
    pub fn initial(
        decomposition: &DyadicDecomposition,
        eps: f64,
        schedule: &Schedule,
        freq: &FrequencySpec,
    ) -> Result<Self> {
        let mcap = schedule.step_cap;
        if decomposition.pieces.len() != mcap + 1 {
            return Err(Error::Dimension(format!(
                "{} smoothing pieces for a schedule with {} strips",
                decomposition.pieces.len(),
                mcap + 1
            )));
        }
        let mut pieces: Vec<QuadraticForm> = decomposition.pieces.iter().map(|p| p.form.scaled(eps)).collect();
        pieces.push(decomposition.tail.scaled(eps));
        let jm = pieces[0].j_max;
        Ok(IterationState {
            m: 0,
            normal_form: NormalForm::initial(jm),
            pieces,
            schedule: schedule.clone(),
            eps,
            freq: freq.clone(),
            diagnostics: Vec::new(),
        })
    }

    pub fn done(&self) -> bool {
        self.m >= self.schedule.step_cap
    }

    pub fn remainder_sum(&self) -> QuadraticForm {
        let mut acc = self.pieces[0].clone();
        for p in &self.pieces[1..] {
            acc.axpy(1.0, p);
        }
        acc
    }
}

fn tensor_grid(n: usize, g: usize) -> Vec<Vec<f64>> {
    let total = g.pow(n as u32);
    (0..total)
        .map(|mut idx| {
            let mut th = vec![0.0; n];
            for d in (0..n).rev() {
                // offset keeps the points off the FFT grid
                th[d] = 2.0 * std::f64::consts::PI * ((idx % g) as f64 + 0.37) / g as f64;
                idx /= g;
            }
            th
        })
        .collect()
}

fn random_thetas(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..n).map(|_| rng.gen_range(0.0..2.0 * std::f64::consts::PI)).collect()).collect()
}

fn hamiltonian(l: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let j = symplectic_unit(l.nrows() / 2);
    let s = -(&j * l);
    0.5 * x.dot(&(&s * x))
}

pub struct KamEngine {
    pub modes: ModeBox,
    pub ws: WeightedSpace,
    pub opts: EngineOptions,
    torus: Torus,
}

impl KamEngine {
    pub fn new(modes: ModeBox, ws: WeightedSpace, opts: EngineOptions) -> Result<Self> {
        let grid = (opts.grid_factor * modes.k_max).max(modes.side());
        let torus = Torus::new(modes.clone(), grid)?;
        Ok(KamEngine { modes, ws, opts, torus })
    }

    pub fn new_chain(&self, freq: &FrequencySpec) -> TransformChain {
        TransformChain::new(freq.omega(), self.opts.picard_tol, self.opts.flow_mode)
    }

    pub fn check_thetas(&self) -> Vec<Vec<f64>> {
        tensor_grid(self.modes.n, self.opts.check_grid)
    }

    fn series_tolerance(&self, schedule: &Schedule) -> f64 {
        self.opts.series_rel_tol * schedule.eps[schedule.step_cap]
    }

    /// Runs step `state.m`, advancing `state` and appending to `chain`.
    pub fn step(&self, state: &mut IterationState, chain: &mut TransformChain) -> Result<StepRecord> {
        let m = state.m;
        let sch = state.schedule.clone();
        if m >= sch.step_cap {
            return Err(Error::InvalidParameter(format!("step {m} is beyond the cap {}", sch.step_cap)));
        }
        let eps_m = sch.eps[m];
        let omega = state.freq.omega();
        let n = self.modes.n;
        let ng = self.opts.norm_grid;
        let mut rng = ChaCha8Rng::seed_from_u64(self.opts.seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(m as u64 + 1)));

        let active = state.pieces[0].clone();
        let active_norm = weighted_sup_norm(&active, &self.ws, ng);
        let (cutoff, capped) = sch.effective_cutoff(m, n * self.modes.k_max);
        if capped {
            log::info!("step {m}: cutoff K = {:.1} capped at |k|₁ = {cutoff}", sch.cutoff[m]);
        }
        let (low, high) = truncate(&active, cutoff);
        let high_norm = if high.is_zero() { 0.0 } else { weighted_sup_norm(&high, &self.ws, ng) };

        let r_norm = low.scaled(1.0 / eps_m);
        let sol = solve_homological(&r_norm, &state.normal_form, &omega, cutoff, sch.gamma[m], &self.ws, m)?;
        if sol.residual > self.opts.residual_tol {
            return Err(Error::InternalConsistency(format!(
                "step {m}: homological residual {:.3e} exceeds {:.1e}",
                sol.residual, self.opts.residual_tol
            )));
        }
        let id_thetas = random_thetas(&mut rng, n, 3);
        let gi = if sol.f.is_zero() {
            0.0
        } else {
            generator_identity_residual(&r_norm, &sol, &state.normal_form, &omega, &id_thetas)
        };
        let nf_next = update_normal_form(&state.normal_form, &sol.diag_avg, eps_m, m)?;
        let mu = &nf_next.mu_history.last().expect("just pushed").mu;
        let mu_max = mu.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let mu_decay = nf_next.decay_constants().last().copied().unwrap_or(0.0);
        let diag: Vec<f64> = mu.iter().map(|v| eps_m * v).collect();

        let x_form = sol.f.scaled(eps_m);
        let x = GeneratorSeries::from_form(&x_form, 1.0);
        let thetas = self.check_thetas();
        let (maps, picard) = flow_transform(&x, &omega, &thetas, self.opts.picard_tol, self.opts.flow_mode, m)?;
        let mut p_norm = 0.0f64;
        let mut sdef = 0.0f64;
        for mm in &maps {
            p_norm = p_norm.max(weighted_deviation(mm, self.ws.n_weight));
            sdef = sdef.max(symplectic_defect(mm));
        }
        let p_bound = eps_m.sqrt();
        if sdef > self.opts.symplectic_tol {
            return Err(Error::InternalConsistency(format!("step {m}: symplectic defect {sdef:.3e}")));
        }
        if p_norm > p_bound {
            return Err(Error::StepSize {
                step: m,
                reason: format!("transform size {p_norm:.3e} exceeds ε_m^(1/2) = {p_bound:.3e}"),
            });
        }

        let tol = self.series_tolerance(&sch);
        let (next, push) =
            push_remainder(&self.torus, &self.ws, &x_form, &diag, &low, &high, &state.pieces[1..], tol, m)?;
        let next_active_norm = weighted_sup_norm(&next[0], &self.ws, ng);

        let consistency = self.consistency(state, &nf_next, &next, &x, &omega, &mut rng, m)?;
        if consistency.h_rel > self.opts.consistency_tol {
            log::warn!(
                "step {m}: Hamiltonian consistency {:.3e} above {:.1e}",
                consistency.h_rel,
                self.opts.consistency_tol
            );
        }

        let contraction_exponent = (active_norm > 0.0 && next_active_norm > 0.0 && active_norm < 1.0)
            .then(|| next_active_norm.ln() / active_norm.ln());
        let map = StepMapStats { m, eps: eps_m, p_norm, p_bound, symplectic_defect: sdef };
        let record = StepRecord {
            m,
            eps: eps_m,
            strip: sch.strip[m],
            gamma: sch.gamma[m],
            cutoff_nominal: sch.cutoff[m],
            cutoff,
            cutoff_capped: capped,
            active_norm,
            high_norm,
            divisor_min: sol.divisor_min.clone(),
            margin_min: sol.margin_min,
            homological_residual: sol.residual,
            generator_identity_residual: gi,
            mu_max,
            mu_decay,
            f_norm: sol.norm_report.weighted_op_norm,
            picard,
            map: map.clone(),
            push,
            next_active_norm,
            contraction_exponent,
            consistency,
        };
        log::info!(
            "step {m}: ‖R‖ {active_norm:.3e} -> {next_active_norm:.3e}, ‖P‖ {p_norm:.3e}, min divisor {:.3e}",
            sol.divisor_min.as_ref().map_or(f64::NAN, |d| d.divisor.abs())
        );
        chain.steps.push(TransformStep::new(map, sol.f));
        state.pieces = next;
        state.normal_form = nf_next;
        state.m += 1;
        state.diagnostics.push(record.clone());
        Ok(record)
    }

    #[allow(clippy::too_many_arguments)]
    fn consistency(
        &self,
        state: &IterationState,
        nf_next: &NormalForm,
        next: &[QuadraticForm],
        x: &GeneratorSeries,
        omega: &[f64],
        rng: &mut ChaCha8Rng,
        m: usize,
    ) -> Result<ConsistencyReport> {
        let dim = 2 * state.normal_form.j_max();
        let old = GeneratorSeries::from_form(&state.remainder_sum(), 1.0);
        let mut new_sum = next[0].clone();
        for p in &next[1..] {
            new_sum.axpy(1.0, p);
        }
        let new = GeneratorSeries::from_form(&new_sum, 1.0);
        let ln = normal_form_generator(&state.normal_form.lambda);
        let ln1 = normal_form_generator(&nf_next.lambda);
        let dx = x.derivative(omega);
        let mut rep = ConsistencyReport { h_rel: 0.0, h_rel_remainder: 0.0, matrix_rel_remainder: 0.0 };
        for th in random_thetas(rng, self.modes.n, self.opts.consistency_points) {
            let (mm, dm) = map_and_derivative(x, &dx, &th, self.opts.picard_tol, m)?;
            let l = &ln + old.eval(&th);
            let inv = -(symplectic_unit(dim / 2) * mm.transpose() * symplectic_unit(dim / 2));
            let direct = inv * (&l * &mm - dm);
            let rem = new.eval(&th);
            let tracked = &ln1 + &rem;
            let diff = &direct - &tracked;
            let rem_max = rem.amax();
            if rem_max > 0.0 {
                rep.matrix_rel_remainder = rep.matrix_rel_remainder.max(diff.amax() / rem_max);
            } else if diff.amax() > 0.0 {
                rep.matrix_rel_remainder = f64::INFINITY;
            }
            let xv = DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
            let hd = hamiltonian(&direct, &xv);
            let ht = hamiltonian(&tracked, &xv);
            let hr = hamiltonian(&rem, &xv);
            rep.h_rel = rep.h_rel.max((hd - ht).abs() / ht.abs());
            if hr != 0.0 {
                rep.h_rel_remainder = rep.h_rel_remainder.max((hd - ht).abs() / hr.abs());
            }
        }
        Ok(rep)
    }

    /// Steps until the cap, calling `on_step` after each one. On error the
    /// state and chain hold everything up to the failing step.
    pub fn run(
        &self,
        state: &mut IterationState,
        chain: &mut TransformChain,
        on_step: &mut dyn FnMut(&IterationState, &TransformChain, &StepRecord) -> Result<()>,
    ) -> Result<()> {
        while !state.done() {
            let rec = self.step(state, chain)?;
            on_step(state, chain, &rec)?;
        }
        let dim = 2 * state.normal_form.j_max();
        chain.measure_composed_norm(&self.check_thetas(), dim, self.ws.n_weight)?;
        Ok(())
    }
}

/// Outcome of a complete iteration.
#[derive(Clone, Debug)]
pub struct KamRun {
    pub normal_form: NormalForm,
    pub chain: TransformChain,
    pub history: Vec<StepRecord>,
    pub state: IterationState,
    /// Weighted norm of the remainder left after the last step.
    pub final_remainder_norm: f64,
    /// `ξ_j = (λ_j^{(M)})² - j²`.
    pub multipliers: Vec<f64>,
}

pub fn finish_run(state: IterationState, chain: TransformChain, ws: &WeightedSpace, norm_grid: usize) -> KamRun {
    let final_remainder_norm = weighted_sup_norm(&state.remainder_sum(), ws, norm_grid);
    KamRun {
        normal_form: state.normal_form.clone(),
        multipliers: state.normal_form.multipliers(),
        history: state.diagnostics.clone(),
        chain,
        state,
        final_remainder_norm,
    }
}

/// `truncate → solve → update → flow → push` for `m = 0..M-1` on the
/// decomposition of `ε V`.
pub fn kam_run(
    decomposition: &DyadicDecomposition,
    freq: &FrequencySpec,
    schedule: &Schedule,
    eps: f64,
    ws: &WeightedSpace,
    opts: &EngineOptions,
) -> Result<KamRun> {
    let modes = decomposition.tail.modes.clone();
    let engine = KamEngine::new(modes, ws.clone(), opts.clone())?;
    let mut state = IterationState::initial(decomposition, eps, schedule, freq)?;
    let mut chain = engine.new_chain(freq);
    engine.run(&mut state, &mut chain, &mut |_, _, _| Ok(()))?;
    Ok(finish_run(state, chain, ws, opts.norm_grid))
}

#[derive(Serialize, Deserialize)]
struct StateManifest {
    format_version: u32,
    m: usize,
    eps: f64,
    freq: FrequencySpec,
    schedule: Schedule,
    normal_form: NormalForm,
    pieces: usize,
    diagnostics: Vec<StepRecord>,
    chain_omega: Vec<f64>,
    chain_picard_tol: f64,
    chain_mode: FlowMode,
    chain_steps: Vec<StepMapStats>,
}

/// Writes `state.json` plus binary forms for every piece and stored transform.
pub fn save_state(dir: &Path, state: &IterationState, chain: &TransformChain) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, p) in state.pieces.iter().enumerate() {
        p.save(&dir.join(format!("piece_{i}")), None, Some(state.m + i))?;
    }
    for (i, s) in chain.steps.iter().enumerate() {
        let stem = dir.join(format!("transform_{i}"));
        if !stem.with_extension("bin").exists() {
            s.f.save(&stem, None, Some(s.stats.m))?;
        }
    }
    let manifest = StateManifest {
        format_version: 1,
        m: state.m,
        eps: state.eps,
        freq: state.freq.clone(),
        schedule: state.schedule.clone(),
        normal_form: state.normal_form.clone(),
        pieces: state.pieces.len(),
        diagnostics: state.diagnostics.clone(),
        chain_omega: chain.omega.clone(),
        chain_picard_tol: chain.picard_tol,
        chain_mode: chain.mode,
        chain_steps: chain.steps.iter().map(|s| s.stats.clone()).collect(),
    };
    let tmp = dir.join("state.json.tmp");
    fs::write(&tmp, serde_json::to_vec_pretty(&manifest)?)?;
    fs::rename(tmp, dir.join("state.json"))?;
    Ok(())
}

pub fn load_state(dir: &Path) -> Result<(IterationState, TransformChain)> {
    let manifest: StateManifest = serde_json::from_slice(&fs::read(dir.join("state.json"))?)?;
    let mut pieces = Vec::with_capacity(manifest.pieces);
    for i in 0..manifest.pieces {
        pieces.push(QuadraticForm::load(&dir.join(format!("piece_{i}")))?.0);
    }
    let mut chain = TransformChain::new(manifest.chain_omega, manifest.chain_picard_tol, manifest.chain_mode);
    for (i, stats) in manifest.chain_steps.into_iter().enumerate() {
        let (f, _) = QuadraticForm::load(&dir.join(format!("transform_{i}")))?;
        chain.steps.push(TransformStep::new(stats, f));
    }
    let state = IterationState {
        m: manifest.m,
        normal_form: manifest.normal_form,
        pieces,
        schedule: manifest.schedule,
        eps: manifest.eps,
        freq: manifest.freq,
        diagnostics: manifest.diagnostics,
    };
    Ok((state, chain))
}
