//! Quasi-periodic potentials `V(θ, x)`, their structural checks and their
//! double Fourier data in the basis `e^{i⟨k,θ⟩} cos(jx)`.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::torus::{self, ModeBox, Torus};

pub type Hull = Arc<dyn Fn(&[f64], f64) -> f64 + Send + Sync>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrequencySpec {
    pub omega0: Vec<f64>,
    pub tau: f64,
    pub gamma: f64,
}

impl FrequencySpec {
    pub fn new(omega0: Vec<f64>, tau: f64, gamma: f64) -> Result<Self> {
        let f = FrequencySpec { omega0, tau, gamma };
        f.check()?;
        Ok(f)
    }

    pub fn check(&self) -> Result<()> {
        if self.omega0.is_empty() {
            return Err(Error::InvalidParameter("at least one frequency is required".into()));
        }
        if !(1.0..=2.0).contains(&self.tau) {
            return Err(Error::InvalidParameter(format!("tau = {} outside [1, 2]", self.tau)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::InvalidParameter(format!("gamma = {} outside (0, 1)", self.gamma)));
        }
        if self.omega0.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("non-finite base frequency".into()));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.omega0.len()
    }

    pub fn omega(&self) -> Vec<f64> {
        self.omega0.iter().map(|w| w * self.tau).collect()
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        FrequencySpec { tau, ..self.clone() }
    }

    /// `min |⟨k,ω₀⟩|·|k|₁^{n+1}/γ` over `0 < |k|₁ ≤ k_check`.
    pub fn diophantine_margin(&self, k_check: usize) -> (f64, Vec<i32>) {
        let n = self.n();
        let mb = ModeBox::new(n, k_check);
        let mut best = (f64::INFINITY, vec![0; n]);
        for k in mb.modes() {
            let norm = torus::l1(&k);
            if norm == 0 || norm > k_check {
                continue;
            }
            let m = torus::dot(&k, &self.omega0).abs() * (norm as f64).powi(n as i32 + 1) / self.gamma;
            if m < best.0 {
                best = (m, k);
            }
        }
        best
    }
}

#[derive(Clone)]
pub struct PotentialSpec {
    pub hull: Hull,
    pub smoothness_n: u32,
    pub freq: FrequencySpec,
    pub amplitude_eps: f64,
}

impl fmt::Debug for PotentialSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PotentialSpec")
            .field("smoothness_n", &self.smoothness_n)
            .field("freq", &self.freq)
            .field("amplitude_eps", &self.amplitude_eps)
            .finish_non_exhaustive()
    }
}

impl PotentialSpec {
    pub fn new(hull: Hull, smoothness_n: u32, freq: FrequencySpec, amplitude_eps: f64) -> Self {
        if smoothness_n as usize <= 200 * freq.n() {
            log::warn!(
                "smoothness N = {smoothness_n} is below the asymptotic requirement N > {}; running anyway",
                200 * freq.n()
            );
        }
        PotentialSpec { hull, smoothness_n, freq, amplitude_eps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CustomTerm {
    pub k: Vec<i32>,
    pub j: usize,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Named potential families selectable from a run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum PotentialPreset {
    /// `a·cos⟨k,θ⟩·cos(jx)`.
    SingleMode { k: Vec<i32>, j: usize, amplitude: f64 },
    /// `a·Π_d cos θ_d · cos(jx)`.
    ProductMode { j: usize, amplitude: f64 },
    /// Lacunary series with coefficients `f^{-(N+1)}` at frequencies `f = 2^p`:
    /// `a·Σ_d Σ_p 2^{-p(N+1)} cos(2^p θ_d) · Σ_q 2^{-q(N+1)} cos(2^q x)`.
    FiniteSmooth {
        smoothness: u32,
        amplitude: f64,
        #[serde(default = "default_octaves")]
        theta_octaves: u32,
        #[serde(default = "default_octaves")]
        x_octaves: u32,
    },
    /// `Σ (c·cos⟨k,θ⟩ + s·sin⟨k,θ⟩)·cos(jx)`.
    CustomCoefficients { terms: Vec<CustomTerm> },
}

fn default_octaves() -> u32 {
    4
}

impl PotentialPreset {
    pub fn hull(&self, n: usize) -> Result<Hull> {
        match self.clone() {
            PotentialPreset::SingleMode { k, j, amplitude } => {
                if k.len() != n {
                    return Err(Error::InvalidPotential(format!("mode {k:?} does not live on a {n}-torus")));
                }
                Ok(Arc::new(move |th: &[f64], x: f64| amplitude * torus::dot(&k, th).cos() * (j as f64 * x).cos()))
            }
            PotentialPreset::ProductMode { j, amplitude } => Ok(Arc::new(move |th: &[f64], x: f64| {
                amplitude * th.iter().map(|t| t.cos()).product::<f64>() * (j as f64 * x).cos()
            })),
            PotentialPreset::FiniteSmooth { smoothness, amplitude, theta_octaves, x_octaves } => {
                let decay = move |p: u32| 2f64.powi(-((p * (smoothness + 1)) as i32));
                Ok(Arc::new(move |th: &[f64], x: f64| {
                    let t: f64 = th
                        .iter()
                        .map(|&t| (0..=theta_octaves).map(|p| decay(p) * ((1u64 << p) as f64 * t).cos()).sum::<f64>())
                        .sum();
                    let s: f64 = (0..=x_octaves).map(|q| decay(q) * ((1u64 << q) as f64 * x).cos()).sum();
                    amplitude * t * s
                }))
            }
            PotentialPreset::CustomCoefficients { terms } => {
                if let Some(t) = terms.iter().find(|t| t.k.len() != n || t.j == 0) {
                    return Err(Error::InvalidPotential(format!("custom term k={:?}, j={} is malformed", t.k, t.j)));
                }
                Ok(Arc::new(move |th: &[f64], x: f64| {
                    terms
                        .iter()
                        .map(|t| {
                            let a = torus::dot(&t.k, th);
                            (t.cos * a.cos() + t.sin * a.sin()) * (t.j as f64 * x).cos()
                        })
                        .sum()
                }))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub evenness_residual: f64,
    pub average_residual: f64,
    pub diophantine_margin: f64,
    pub worst_k: Vec<i32>,
    pub even: bool,
    pub zero_average: bool,
    pub diophantine: bool,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.even && self.zero_average && self.diophantine
    }
}

pub const STRUCTURE_TOL: f64 = 1e-10;

pub fn validate_assumptions(p: &PotentialSpec, k_check: usize, grid: usize) -> Result<ValidationReport> {
    if grid < 4 || k_check < 1 {
        return Err(Error::InvalidParameter("validation needs grid >= 4 and K_check >= 1".into()));
    }
    let n = p.freq.n();
    let points = grid.pow(n as u32);
    let mut even_res = 0.0f64;
    let mut avg_res = 0.0f64;
    let mut theta = vec![0.0; n];
    for pt in 0..points {
        let mut r = pt;
        for d in (0..n).rev() {
            theta[d] = 2.0 * PI * (r % grid) as f64 / grid as f64;
            r /= grid;
        }
        let mut integral = 0.0;
        for m in 0..grid {
            let x = -PI + 2.0 * PI * m as f64 / grid as f64;
            let a = (p.hull)(&theta, x);
            let b = (p.hull)(&theta, -x);
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::InvalidPotential(format!("hull is not finite at θ={theta:?}, x={x}")));
            }
            even_res = even_res.max((a - b).abs());
            integral += a;
        }
        avg_res = avg_res.max((integral * 2.0 * PI / grid as f64).abs());
    }
    let (margin, worst_k) = p.freq.diophantine_margin(k_check);
    Ok(ValidationReport {
        evenness_residual: even_res,
        average_residual: avg_res,
        diophantine_margin: margin,
        worst_k,
        even: even_res <= STRUCTURE_TOL,
        zero_average: avg_res <= STRUCTURE_TOL,
        diophantine: margin >= 1.0,
    })
}

/// `v̂(k, j)` stored `[mode][j-1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialFourier {
    pub modes: ModeBox,
    pub j_max: usize,
    pub v_hat: Vec<Complex64>,
    /// `Σ_{j > J/2} j^{2N} Σ_k |v̂(k,j)|²`.
    pub tail_norm: f64,
    pub tail_flagged: bool,
}

#[derive(Clone, Debug)]
pub struct AnalysisOptions {
    /// Samples per θ axis; `None` selects `4·K_theta`.
    pub theta_grid: Option<usize>,
    /// Samples in x; `None` selects `4·J_max`.
    pub x_grid: Option<usize>,
    pub tail_tol: f64,
    /// Upper bound on the number of hull evaluations.
    pub max_samples: usize,
    /// Coefficients below `chop · max|v̂|` are quadrature roundoff and are zeroed. The
    /// weighted norms amplify off-diagonal entries by up to `J^{N+1}`, so leaving the noise in
    /// puts a floor under every later remainder.
    pub chop: f64,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions { theta_grid: None, x_grid: None, tail_tol: 1e-6, max_samples: 1 << 28, chop: 1e-14 }
    }
}

impl PotentialFourier {
    pub fn zeros(n: usize, k_theta: usize, j_max: usize) -> Self {
        let modes = ModeBox::new(n, k_theta);
        PotentialFourier {
            v_hat: vec![Complex64::new(0.0, 0.0); modes.len() * j_max],
            modes,
            j_max,
            tail_norm: 0.0,
            tail_flagged: false,
        }
    }

    pub fn coeff(&self, k: &[i32], j: usize) -> Complex64 {
        match self.modes.index(k) {
            Some(m) if (1..=self.j_max).contains(&j) => self.v_hat[m * self.j_max + j - 1],
            _ => Complex64::new(0.0, 0.0),
        }
    }

    /// `v_j(θ)` for `j = 1..=J_max`.
    pub fn profile(&self, theta: &[f64]) -> Vec<Complex64> {
        let ph = torus::phases(&self.modes, theta);
        let mut out = vec![Complex64::new(0.0, 0.0); self.j_max];
        for (m, e) in ph.iter().enumerate() {
            for (o, v) in out.iter_mut().zip(&self.v_hat[m * self.j_max..(m + 1) * self.j_max]) {
                *o += v * e;
            }
        }
        out
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.v_hat.iter_mut().for_each(|v| *v *= factor);
        out
    }

    fn compute_tail(&mut self, n_smooth: u32, tail_tol: f64) {
        let mut tail = 0.0;
        for m in 0..self.modes.len() {
            for j in (self.j_max / 2 + 1)..=self.j_max {
                tail += (j as f64).powi(2 * n_smooth as i32) * self.v_hat[m * self.j_max + j - 1].norm_sqr();
            }
        }
        self.tail_norm = tail;
        self.tail_flagged = tail > tail_tol;
    }
}

pub fn fourier_analyze(
    p: &PotentialSpec,
    k_theta: usize,
    j_max: usize,
    opts: &AnalysisOptions,
) -> Result<PotentialFourier> {
    if k_theta < 1 || j_max < 1 {
        return Err(Error::InvalidParameter("truncations must be at least 1".into()));
    }
    let n = p.freq.n();
    let modes = ModeBox::new(n, k_theta);
    let g = opts.theta_grid.unwrap_or(4 * k_theta).max(modes.side());
    let gx = opts.x_grid.unwrap_or(4 * j_max).max(2 * j_max + 2);
    let samples = (g as u128).pow(n as u32) * gx as u128;
    if samples > opts.max_samples as u128 {
        return Err(Error::Resource(format!("{samples} hull samples exceed the budget of {}", opts.max_samples)));
    }
    let torus = Torus::new(modes.clone(), g)?;
    let xs: Vec<f64> = (0..gx).map(|m| -PI + 2.0 * PI * m as f64 / gx as f64).collect();
    let cos_table: Vec<f64> = (1..=j_max).flat_map(|j| xs.iter().map(move |&x| (j as f64 * x).cos())).collect();
    let mut values = vec![Complex64::new(0.0, 0.0); torus.points() * j_max];
    let mut h = vec![0.0; gx];
    for pt in 0..torus.points() {
        let theta = torus.point(pt);
        for (hm, &x) in h.iter_mut().zip(&xs) {
            *hm = (p.hull)(&theta, x);
            if !hm.is_finite() {
                return Err(Error::InvalidPotential(format!("hull is not finite at θ={theta:?}, x={x}")));
            }
        }
        for j in 0..j_max {
            let c: f64 = h.iter().zip(&cos_table[j * gx..(j + 1) * gx]).map(|(a, b)| a * b).sum();
            values[pt * j_max + j] = Complex64::new(2.0 * c / gx as f64, 0.0);
        }
    }
    let (mut v_hat, _) = torus.analyze(&values, j_max);
    // enforce v̂(-k) = conj v̂(k)
    for m in 0..modes.len() {
        let mn = modes.negated(m);
        if mn < m {
            continue;
        }
        for j in 0..j_max {
            let a = v_hat[m * j_max + j];
            let b = v_hat[mn * j_max + j];
            let avg = 0.5 * (a + b.conj());
            v_hat[m * j_max + j] = avg;
            v_hat[mn * j_max + j] = avg.conj();
        }
    }
    let floor = opts.chop * v_hat.iter().map(|c| c.norm()).fold(0.0, f64::max);
    for c in v_hat.iter_mut() {
        if c.norm() <= floor {
            *c = Complex64::new(0.0, 0.0);
        }
    }
    let mut pf = PotentialFourier { modes, j_max, v_hat, tail_norm: 0.0, tail_flagged: false };
    pf.compute_tail(p.smoothness_n, opts.tail_tol);
    if pf.tail_flagged {
        log::warn!("potential tail norm {:.3e} exceeds tolerance {:.1e}", pf.tail_norm, opts.tail_tol);
    }
    Ok(pf)
}

pub const REALITY_TOL: f64 = 1e-10;

pub fn evaluate_potential(pf: &PotentialFourier, theta: &[f64], x: f64) -> Result<f64> {
    let v = pf.profile(theta);
    let s: Complex64 = v.iter().enumerate().map(|(j, c)| c * ((j + 1) as f64 * x).cos()).sum();
    if s.im.abs() > REALITY_TOL {
        return Err(Error::InternalConsistency(format!(
            "potential has imaginary part {:.3e} at θ={theta:?}, x={x}",
            s.im
        )));
    }
    Ok(s.re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn freq() -> FrequencySpec {
        FrequencySpec::new(vec![1.0, 2f64.sqrt()], 1.0, 0.01).unwrap()
    }

    fn spec(h: Hull) -> PotentialSpec {
        PotentialSpec { hull: h, smoothness_n: 8, freq: freq(), amplitude_eps: 1e-3 }
    }

    #[test]
    fn valid_potential_passes() {
        let p = spec(Arc::new(|th: &[f64], x: f64| th[0].cos() * x.cos()));
        let r = validate_assumptions(&p, 20, 16).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.average_residual < 1e-14);
    }

    #[test]
    fn odd_hull_fails_evenness() {
        let p = spec(Arc::new(|_: &[f64], x: f64| x.sin()));
        let r = validate_assumptions(&p, 5, 16).unwrap();
        assert!(!r.even);
    }

    #[test]
    fn shifted_profile_fails_average_with_residual_pi() {
        let p = spec(Arc::new(|th: &[f64], x: f64| th[0].cos() * (x.cos() + 0.5)));
        let r = validate_assumptions(&p, 5, 16).unwrap();
        assert!(!r.zero_average);
        assert!((r.average_residual - PI).abs() < 1e-12);
    }

    #[test]
    fn non_finite_hull_is_rejected() {
        let p = spec(Arc::new(|_: &[f64], _: f64| f64::NAN));
        assert!(matches!(validate_assumptions(&p, 2, 4), Err(Error::InvalidPotential(_))));
    }

    #[test]
    fn single_harmonic_coefficients() {
        let p = spec(Arc::new(|th: &[f64], x: f64| th[0].cos() * (2.0 * x).cos()));
        let pf = fourier_analyze(&p, 3, 4, &AnalysisOptions::default()).unwrap();
        for m in 0..pf.modes.len() {
            let k = pf.modes.mode(m);
            for j in 1..=4 {
                let want = if j == 2 && k[1] == 0 && k[0].abs() == 1 { 0.5 } else { 0.0 };
                assert!((pf.coeff(&k, j) - Complex64::new(want, 0.0)).norm() < 1e-14);
            }
        }
        assert!((evaluate_potential(&pf, &[0.0, 0.0], 0.0).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn zero_hull_gives_zero() {
        let p = spec(Arc::new(|_: &[f64], _: f64| 0.0));
        let pf = fourier_analyze(&p, 2, 3, &AnalysisOptions::default()).unwrap();
        assert!(pf.v_hat.iter().all(|v| v.norm() == 0.0));
        assert_eq!(evaluate_potential(&pf, &[0.3, 0.1], 0.2).unwrap(), 0.0);
    }

    #[test]
    fn random_trigonometric_polynomial_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let terms: Vec<CustomTerm> = (0..12)
            .map(|_| CustomTerm {
                k: vec![rng.gen_range(-4..=4), rng.gen_range(-4..=4)],
                j: rng.gen_range(1..=6),
                cos: rng.gen_range(-1.0..1.0),
                sin: rng.gen_range(-1.0..1.0),
            })
            .collect();
        // the oracle: expected v̂ accumulated straight from the generating terms
        let modes = ModeBox::new(2, 4);
        let mut want = vec![Complex64::new(0.0, 0.0); modes.len() * 6];
        for t in &terms {
            let m = modes.index(&t.k).unwrap();
            let mn = modes.negated(m);
            let c = Complex64::new(t.cos / 2.0, -t.sin / 2.0);
            want[m * 6 + t.j - 1] += c;
            want[mn * 6 + t.j - 1] += c.conj();
        }
        let preset = PotentialPreset::CustomCoefficients { terms };
        let p = spec(preset.hull(2).unwrap());
        let pf = fourier_analyze(&p, 4, 6, &AnalysisOptions::default()).unwrap();
        for (a, b) in pf.v_hat.iter().zip(&want) {
            assert!((a - b).norm() < 1e-12);
        }
        for _ in 0..20 {
            let th = [rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3)];
            let x = rng.gen_range(-PI..PI);
            let v = evaluate_potential(&pf, &th, x).unwrap();
            assert!((v - (p.hull)(&th, x)).abs() < 1e-10);
        }
    }

    #[test]
    fn finite_smooth_preset_is_admissible() {
        let preset = PotentialPreset::FiniteSmooth { smoothness: 4, amplitude: 1.0, theta_octaves: 2, x_octaves: 2 };
        let p = spec(preset.hull(2).unwrap());
        assert!(validate_assumptions(&p, 10, 16).unwrap().passed());
        let pf = fourier_analyze(&p, 4, 8, &AnalysisOptions::default()).unwrap();
        assert!((pf.coeff(&[2, 0], 4).re - 0.5 * 2f64.powi(-5) * 2f64.powi(-10)).abs() < 1e-15);
        assert!(pf.coeff(&[1, 1], 1).norm() < 1e-15);
    }

    #[test]
    fn quadrature_noise_is_chopped() {
        let preset = PotentialPreset::FiniteSmooth { smoothness: 4, amplitude: 1.0, theta_octaves: 2, x_octaves: 2 };
        let p = spec(preset.hull(2).unwrap());
        let pf = fourier_analyze(&p, 4, 8, &AnalysisOptions::default()).unwrap();
        // only j ∈ {1, 2, 4} and axis modes carry content
        assert_eq!(pf.coeff(&[1, 1], 1), Complex64::new(0.0, 0.0));
        assert_eq!(pf.coeff(&[0, 1], 3), Complex64::new(0.0, 0.0));
        let raw = fourier_analyze(&p, 4, 8, &AnalysisOptions { chop: 0.0, ..Default::default() }).unwrap();
        assert!(raw.coeff(&[2, 0], 4) == pf.coeff(&[2, 0], 4));
    }

    #[test]
    fn resource_budget_is_enforced() {
        let p = spec(Arc::new(|_: &[f64], _: f64| 0.0));
        let opts = AnalysisOptions { max_samples: 1000, ..Default::default() };
        assert!(matches!(fourier_analyze(&p, 8, 8, &opts), Err(Error::Resource(_))));
    }

    #[test]
    fn diophantine_margin_is_attained_at_the_first_axis() {
        // |k|^{n+1} favours short vectors: k = ±(1, 0) gives 1/γ
        let (m, k) = freq().diophantine_margin(12);
        assert_eq!(k.iter().map(|v| v.abs()).collect::<Vec<_>>(), vec![1, 0]);
        assert!((m - 100.0).abs() < 1e-9);
    }
}
