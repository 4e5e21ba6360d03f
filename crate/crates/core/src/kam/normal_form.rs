use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Imaginary parts of diagonal averages above this are a self-adjointness
/// failure.
pub const REALITY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuRecord {
    pub step: usize,
    pub eps: f64,
    pub mu: Vec<f64>,
}

/// Frequencies `λ_j` of `Σ λ_j z_j z̄_j` and the corrections that produced
/// them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalForm {
    pub lambda: Vec<f64>,
    pub mu_history: Vec<MuRecord>,
}

impl NormalForm {
    /// `λ_j = j`.
    pub fn initial(j_max: usize) -> Self {
        NormalForm { lambda: (1..=j_max).map(|j| j as f64).collect(), mu_history: Vec::new() }
    }

    pub fn j_max(&self) -> usize {
        self.lambda.len()
    }

    /// `j + Σ_i ε_i μ_j^{(i)}` summed in history order.
    pub fn recompute(&self) -> Vec<f64> {
        let mut lam: Vec<f64> = (1..=self.j_max()).map(|j| j as f64).collect();
        for rec in &self.mu_history {
            for (l, m) in lam.iter_mut().zip(&rec.mu) {
                *l += rec.eps * m;
            }
        }
        lam
    }

    /// The normal form after the first `steps` updates.
    pub fn truncated(&self, steps: usize) -> NormalForm {
        let mut out =
            NormalForm { lambda: Vec::new(), mu_history: self.mu_history[..steps.min(self.mu_history.len())].to_vec() };
        out.lambda = NormalForm { lambda: self.lambda.clone(), mu_history: out.mu_history.clone() }.recompute();
        out
    }

    /// `max_j j·|μ_j^{(i)}|` for every recorded step.
    pub fn decay_constants(&self) -> Vec<f64> {
        self.mu_history
            .iter()
            .map(|r| r.mu.iter().enumerate().map(|(j, m)| (j + 1) as f64 * m.abs()).fold(0.0, f64::max))
            .collect()
    }

    /// `ξ_j = λ_j² - j²`.
    pub fn multipliers(&self) -> Vec<f64> {
        self.lambda.iter().enumerate().map(|(j, l)| l * l - ((j + 1) * (j + 1)) as f64).collect()
    }
}

/// `λ_j ← λ_j + ε_m·avg_j`, rejecting averages with imaginary parts above
/// [`REALITY_TOL`].
pub fn update_normal_form(nf: &NormalForm, diag_avg: &[Complex64], eps_m: f64, step: usize) -> Result<NormalForm> {
    if diag_avg.len() != nf.j_max() {
        return Err(Error::Dimension(format!("{} diagonal averages for {} frequencies", diag_avg.len(), nf.j_max())));
    }
    if let Some((j, v)) = diag_avg.iter().enumerate().find(|(_, v)| v.im.abs() > REALITY_TOL) {
        return Err(Error::SelfAdjointness(format!(
            "step {step}: diagonal average for j = {} has imaginary part {:.3e}",
            j + 1,
            v.im
        )));
    }
    let mu: Vec<f64> = diag_avg.iter().map(|v| v.re).collect();
    let mut out = nf.clone();
    for (l, m) in out.lambda.iter_mut().zip(&mu) {
        *l += eps_m * m;
    }
    out.mu_history.push(MuRecord { step, eps: eps_m, mu });
    Ok(out)
}
