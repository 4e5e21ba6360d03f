//! Independent checks of a run: direct integration of the truncated wave
//! system, the exactly rotating reduced system, their comparison through the
//! transform chain, Lyapunov exponents and multiplier decay.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{CouplingTensor, WeightedSpace};
use crate::gauss::GaussRule;
use crate::kam::{NormalForm, TransformChain};
use crate::potential::PotentialFourier;
use crate::torus;

/// `ẋ = A(t) x` on `ℝ^d`.
pub trait LinearSystem {
    fn dim(&self) -> usize;
    fn matrix(&self, t: f64) -> DMatrix<f64>;
}

/// Galerkin truncation of the wave equation in `x = (q, p)` with
/// `H = Σ k(p_k² + q_k²)/2 + ε Σ_{k,l} S_kl(θ) q_k q_l`,
/// `S_kl = Σ_j c_jlk v_j(θ)/√(kl)`.
#[derive(Clone, Debug)]
pub struct TruncatedWaveSystem {
    pub j_max: usize,
    pub eps: f64,
    pub omega: Vec<f64>,
    /// Nonzero θ-modes of `v_j`, with `v̂(k, j)` for `j = 1..=J`.
    terms: Vec<(Vec<i32>, Vec<Complex64>)>,
    /// `(j, l, k, c_jlk/√(kl))`, 1-based, nonzero only.
    triples: Vec<(usize, usize, usize, f64)>,
}

impl TruncatedWaveSystem {
    pub fn new(pf: &PotentialFourier, ct: &CouplingTensor, eps: f64, omega: Vec<f64>) -> Result<Self> {
        let jm = pf.j_max;
        if ct.bound < jm {
            return Err(Error::Dimension(format!("coupling tensor bound {} below J = {jm}", ct.bound)));
        }
        if omega.len() != pf.modes.n {
            return Err(Error::Dimension(format!("{} frequencies for a {}-torus", omega.len(), pf.modes.n)));
        }
        let terms = (0..pf.modes.len())
            .filter_map(|m| {
                let row = pf.v_hat[m * jm..(m + 1) * jm].to_vec();
                row.iter().any(|v| *v != Complex64::new(0.0, 0.0)).then(|| (pf.modes.mode(m), row))
            })
            .collect();
        let triples = ct
            .entries
            .iter()
            .filter(|((j, l, k), _)| *j <= jm && *l <= jm && *k <= jm)
            .map(|(&(j, l, k), &c)| (j, l, k, c / ((k * l) as f64).sqrt()))
            .collect();
        Ok(TruncatedWaveSystem { j_max: jm, eps, omega, terms, triples })
    }

    pub fn dim(&self) -> usize {
        2 * self.j_max
    }

    pub fn profile(&self, theta: &[f64]) -> Vec<f64> {
        let mut v = vec![0.0; self.j_max];
        for (k, row) in &self.terms {
            let e = Complex64::from_polar(1.0, torus::dot(k, theta));
            for (o, c) in v.iter_mut().zip(row) {
                *o += (c * e).re;
            }
        }
        v
    }

    pub fn coupling(&self, theta: &[f64]) -> DMatrix<f64> {
        let v = self.profile(theta);
        let mut s = DMatrix::zeros(self.j_max, self.j_max);
        for &(j, l, k, c) in &self.triples {
            s[(k - 1, l - 1)] += c * v[j - 1];
        }
        s
    }

    /// `[[0, Λ], [-Λ - 2εS(θ), 0]]`.
    pub fn generator(&self, theta: &[f64]) -> DMatrix<f64> {
        let j = self.j_max;
        let mut a = DMatrix::zeros(2 * j, 2 * j);
        for k in 0..j {
            a[(k, j + k)] = (k + 1) as f64;
            a[(j + k, k)] = -((k + 1) as f64);
        }
        if self.eps != 0.0 {
            let s = self.coupling(theta);
            for k in 0..j {
                for l in 0..j {
                    a[(j + k, l)] -= 2.0 * self.eps * s[(k, l)];
                }
            }
        }
        a
    }

    pub fn hamiltonian(&self, theta: &[f64], x: &DVector<f64>) -> f64 {
        let j = self.j_max;
        let (q, p) = (x.rows(0, j), x.rows(j, j));
        let free: f64 = (0..j).map(|k| 0.5 * (k + 1) as f64 * (q[k] * q[k] + p[k] * p[k])).sum();
        let s = self.coupling(theta);
        free + self.eps * q.dot(&(&s * q))
    }

    /// The unperturbed energy `Σ k(p_k² + q_k²)/2`.
    pub fn free_energy(&self, x: &DVector<f64>) -> f64 {
        let j = self.j_max;
        (0..j).map(|k| 0.5 * (k + 1) as f64 * (x[k] * x[k] + x[j + k] * x[j + k])).sum()
    }

    pub fn along(&self, theta0: &[f64]) -> WaveAlong<'_> {
        WaveAlong { sys: self, theta0: theta0.to_vec() }
    }
}

/// The wave system on the orbit `θ = θ₀ + ωt`.
pub struct WaveAlong<'a> {
    pub sys: &'a TruncatedWaveSystem,
    pub theta0: Vec<f64>,
}

impl WaveAlong<'_> {
    pub fn theta(&self, t: f64) -> Vec<f64> {
        self.theta0.iter().zip(&self.sys.omega).map(|(a, w)| a + w * t).collect()
    }
}

impl LinearSystem for WaveAlong<'_> {
    fn dim(&self) -> usize {
        self.sys.dim()
    }

    fn matrix(&self, t: f64) -> DMatrix<f64> {
        self.sys.generator(&self.theta(t))
    }
}

/// `sys` with an extra coordinate `u̇ = a u`.
pub struct Augmented<'a> {
    pub inner: &'a dyn LinearSystem,
    pub rate: f64,
}

impl LinearSystem for Augmented<'_> {
    fn dim(&self) -> usize {
        self.inner.dim() + 1
    }

    fn matrix(&self, t: f64) -> DMatrix<f64> {
        let d = self.inner.dim();
        let mut m = DMatrix::zeros(d + 1, d + 1);
        m.view_mut((0, 0), (d, d)).copy_from(&self.inner.matrix(t));
        m[(d, d)] = self.rate;
        m
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub x: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        let d = self.x.first().map_or(0, |x| x.len());
        let j = d / 2;
        let mut head = vec!["t".to_string()];
        head.extend((1..=j).map(|k| format!("q{k}")));
        head.extend((1..=j).map(|k| format!("p{k}")));
        writeln!(w, "{}", head.join(","))?;
        for (t, x) in self.t.iter().zip(&self.x) {
            let row: Vec<String> = x.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{t},{}", row.join(","))?;
        }
        Ok(())
    }

    /// `sup_t ‖x(t)‖_N / ‖x(0)‖_N`.
    pub fn norm_growth(&self, ws: &WeightedSpace) -> f64 {
        let n0 = ws.norm_qp(&self.x[0]);
        self.x.iter().map(|x| ws.norm_qp(x) / n0).fold(0.0, f64::max)
    }
}

/// Fixed-step Gauss collocation for linear systems, stages solved by
/// fixed-point iteration.
#[derive(Clone, Debug)]
pub struct GaussIntegrator {
    rule: GaussRule,
}

impl Default for GaussIntegrator {
    fn default() -> Self {
        GaussIntegrator::new(4)
    }
}

const MAX_STAGE_ITERATIONS: usize = 60;

impl GaussIntegrator {
    pub fn new(stages: usize) -> Self {
        GaussIntegrator { rule: GaussRule::new(stages) }
    }

    pub fn step(&self, sys: &dyn LinearSystem, t: f64, h: f64, x: &DVector<f64>) -> Result<DVector<f64>> {
        let s = self.rule.stages();
        let mats: Vec<DMatrix<f64>> = self.rule.nodes.iter().map(|c| sys.matrix(t + c * h)).collect();
        let mut k: Vec<DVector<f64>> = mats.iter().map(|a| a * x).collect();
        // Each component converges relative to its own mode, (q_j, p_j) paired when the
        // dimension is even. A global scale would stop small high modes early, and the
        // weighted norms see that as a coherent phase error.
        let d = x.len();
        let floor = x.amax().max(f64::MIN_POSITIVE) * 1e-200;
        let scale: Vec<f64> = (0..d)
            .map(|c| {
                let pair = if d.is_multiple_of(2) { x[(c + d / 2) % d].abs() } else { 0.0 };
                x[c].abs().max(pair).max(floor)
            })
            .collect();
        let amax = x.amax().max(f64::MIN_POSITIVE);
        let (mut last, mut last_abs) = (f64::INFINITY, f64::INFINITY);
        for it in 0..MAX_STAGE_ITERATIONS {
            let mut change = 0.0f64;
            let mut abs_change = 0.0f64;
            let next: Vec<DVector<f64>> = (0..s)
                .map(|i| {
                    let mut y = x.clone();
                    for (j, kj) in k.iter().enumerate() {
                        y.axpy(h * self.rule.a[i][j], kj, 1.0);
                    }
                    &mats[i] * y
                })
                .collect();
            for (a, b) in next.iter().zip(&k) {
                for c in 0..d {
                    let dc = h * (a[c] - b[c]).abs();
                    change = change.max(dc / scale[c]);
                    abs_change = abs_change.max(dc);
                }
            }
            k = next;
            // stop at roundoff: either tiny or no longer decreasing
            let stalled = it > 3 && change >= last && abs_change >= last_abs;
            if stalled && abs_change > 1e-12 * amax {
                break;
            }
            let capped = it + 1 == MAX_STAGE_ITERATIONS && abs_change <= 1e-12 * amax;
            if change <= 1e-16 || stalled || capped {
                let mut out = x.clone();
                for (w, kj) in self.rule.weights.iter().zip(&k) {
                    out.axpy(h * w, kj, 1.0);
                }
                if !out.iter().all(|v| v.is_finite()) {
                    break;
                }
                return Ok(out);
            }
            last = change;
            last_abs = abs_change;
        }
        Err(Error::StepSize { step: 0, reason: format!("stage iteration did not converge at t = {t}, h = {h}") })
    }

    /// Integrates from `t = 0` to `t_end`, sampling every `sample_dt` (a
    /// multiple of the step).
    pub fn integrate(
        &self,
        sys: &dyn LinearSystem,
        x0: &DVector<f64>,
        t_end: f64,
        dt: f64,
        sample_dt: f64,
    ) -> Result<Trajectory> {
        if !(dt > 0.0 && sample_dt >= dt && t_end >= 0.0) {
            return Err(Error::InvalidParameter(format!("dt = {dt}, sample_dt = {sample_dt}, T = {t_end}")));
        }
        let per_sample = (sample_dt / dt).round().max(1.0) as usize;
        let samples = (t_end / sample_dt).round() as usize;
        let h = sample_dt / per_sample as f64;
        let mut x = x0.clone();
        let mut traj = Trajectory { t: vec![0.0], x: vec![x.as_slice().to_vec()] };
        for s in 0..samples {
            let t_s = s as f64 * sample_dt;
            for i in 0..per_sample {
                x = self.step(sys, t_s + i as f64 * h, h, &x)?;
            }
            traj.t.push((s + 1) as f64 * sample_dt);
            traj.x.push(x.as_slice().to_vec());
        }
        Ok(traj)
    }
}

/// Direct integration of the truncated wave system along `θ₀ + ωt`. The step
/// must satisfy `dt ≤ 0.1/J`.
pub fn integrate_full(
    sys: &TruncatedWaveSystem,
    theta0: &[f64],
    x0: &DVector<f64>,
    t_end: f64,
    dt: f64,
    sample_dt: f64,
) -> Result<Trajectory> {
    let limit = 0.1 / sys.j_max as f64;
    if dt > limit * (1.0 + 1e-12) {
        return Err(Error::StepSize { step: 0, reason: format!("dt = {dt} exceeds 0.1/J = {limit}") });
    }
    GaussIntegrator::default().integrate(&sys.along(theta0), x0, t_end, dt, sample_dt)
}

/// Exact rotation `q_j + i p_j ↦ e^{-iλ_j t}(q_j + i p_j)` under the normal form.
pub fn rotate(lambda: &[f64], x: &[f64], t: f64) -> Vec<f64> {
    let j = lambda.len();
    let mut out = vec![0.0; 2 * j];
    for (k, l) in lambda.iter().enumerate() {
        let (s, c) = (l * t).sin_cos();
        out[k] = c * x[k] + s * x[j + k];
        out[j + k] = -s * x[k] + c * x[j + k];
    }
    out
}

pub fn integrate_reduced(nf: &NormalForm, y0: &[f64], times: &[f64]) -> Result<Trajectory> {
    if y0.len() != 2 * nf.j_max() {
        return Err(Error::Dimension(format!("state of length {} for J = {}", y0.len(), nf.j_max())));
    }
    Ok(Trajectory { t: times.to_vec(), x: times.iter().map(|&t| rotate(&nf.lambda, y0, t)).collect() })
}

/// `|Z_j|² = (q_j² + p_j²)/2`.
pub fn actions(x: &[f64]) -> Vec<f64> {
    let j = x.len() / 2;
    (0..j).map(|k| 0.5 * (x[k] * x[k] + x[j + k] * x[j + k])).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainComparison {
    /// `sup_t ‖x(t) - Ψ(θ(t)) y(t)‖_N / ‖x(t)‖_N`.
    pub max_rel_deviation: f64,
    pub worst_time: f64,
    /// `sup_{t,j} | |Z_j(Ψ⁻¹x)| - |Z_j(y)| | / ‖y‖`, the pulled-back actions.
    pub action_drift: f64,
    pub profile: Vec<(f64, f64)>,
}

pub fn compare_through_chain(
    chain: &TransformChain,
    full: &Trajectory,
    reduced: &Trajectory,
    theta0: &[f64],
    ws: &WeightedSpace,
) -> Result<ChainComparison> {
    if full.t.len() != reduced.t.len() || full.t.iter().zip(&reduced.t).any(|(a, b)| (a - b).abs() > 1e-12) {
        return Err(Error::Input("full and reduced trajectories do not share a time grid".into()));
    }
    let d = full.x.first().map_or(0, |x| x.len());
    if reduced.x.first().map_or(0, |x| x.len()) != d {
        return Err(Error::Input("full and reduced trajectories have different dimensions".into()));
    }
    let mut out = ChainComparison { max_rel_deviation: 0.0, worst_time: 0.0, action_drift: 0.0, profile: Vec::new() };
    for ((t, x), y) in full.t.iter().zip(&full.x).zip(&reduced.x) {
        let th: Vec<f64> = theta0.iter().zip(&chain.omega).map(|(a, w)| a + w * t).collect();
        let psi = chain.compose(&th, d)?;
        let yv = DVector::from_column_slice(y);
        let xv = DVector::from_column_slice(x);
        let mapped = &psi * &yv;
        let dev = ws.norm_qp((&xv - &mapped).as_slice()) / ws.norm_qp(x);
        out.profile.push((*t, dev));
        if dev > out.max_rel_deviation {
            out.max_rel_deviation = dev;
            out.worst_time = *t;
        }
        let jm = crate::generator::symplectic_unit(d / 2);
        let back = -(&jm * psi.transpose() * &jm) * &xv;
        let ynorm = yv.norm();
        for (a, b) in actions(back.as_slice()).iter().zip(actions(y)) {
            out.action_drift = out.action_drift.max((a.sqrt() - b.sqrt()).abs() / ynorm);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyapunovEstimate {
    pub top_exponent: f64,
    /// `(t, log ‖v(t)‖)` at every renormalization.
    pub growth_series: Vec<(f64, f64)>,
    pub horizon: f64,
    pub renorm_interval: f64,
}

/// Least-squares slope of `y` against `x`.
pub fn ls_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Top Lyapunov exponent from one tangent vector, renormalized every
/// `renorm_dt`; the exponent is the slope of the last half of the growth
/// series.
pub fn lyapunov_exponent(
    sys: &dyn LinearSystem,
    horizon: f64,
    renorm_dt: f64,
    dt: f64,
    seed: u64,
) -> Result<LyapunovEstimate> {
    if !(renorm_dt > 0.0) || horizon < 100.0 * renorm_dt {
        return Err(Error::InvalidParameter(format!(
            "horizon {horizon} must be at least 100 renormalization intervals of {renorm_dt}"
        )));
    }
    let integ = GaussIntegrator::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = DVector::from_fn(sys.dim(), |_, _| rng.gen_range(-1.0..1.0));
    v /= v.norm();
    let per = (renorm_dt / dt).round().max(1.0) as usize;
    let h = renorm_dt / per as f64;
    let intervals = (horizon / renorm_dt).round() as usize;
    let mut log_total = 0.0;
    let mut series = vec![(0.0, 0.0)];
    for r in 0..intervals {
        let t0 = r as f64 * renorm_dt;
        for i in 0..per {
            v = integ.step(sys, t0 + i as f64 * h, h, &v)?;
        }
        let nv = v.norm();
        if !nv.is_finite() || nv > 1e150 {
            return Err(Error::StepSize {
                step: 0,
                reason: format!(
                    "tangent vector overflowed before renormalization at t = {t0}; shorten the interval {renorm_dt}"
                ),
            });
        }
        log_total += nv.ln();
        v /= nv;
        series.push(((r + 1) as f64 * renorm_dt, log_total));
    }
    let half = series.len() / 2;
    Ok(LyapunovEstimate {
        top_exponent: ls_slope(&series[half..]),
        growth_series: series,
        horizon,
        renorm_interval: renorm_dt,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiplierEstimate {
    /// `ξ_j = λ_j² - j²`.
    pub xi: Vec<f64>,
    pub xi_times_j: Vec<f64>,
    pub max_abs: f64,
    /// `max_j j|ξ_j|`.
    pub decay_constant: f64,
}

pub fn multiplier_decay(nf: &NormalForm) -> MultiplierEstimate {
    let xi = nf.multipliers();
    let xi_times_j: Vec<f64> = xi.iter().enumerate().map(|(j, x)| (j + 1) as f64 * x.abs()).collect();
    MultiplierEstimate {
        max_abs: xi.iter().fold(0.0, |a, x| a.max(x.abs())),
        decay_constant: xi_times_j.iter().copied().fold(0.0, f64::max),
        xi,
        xi_times_j,
    }
}
