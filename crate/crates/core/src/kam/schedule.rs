//! Iteration parameters `ε_ν`, `s_ν`, `K_ν`, `γ_ν`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub eps: Vec<f64>,
    pub log_eps: Vec<f64>,
    pub strip: Vec<f64>,
    pub cutoff: Vec<f64>,
    pub gamma: Vec<f64>,
    pub step_cap: usize,
    pub smoothness: u32,
    /// Factor applied to every strip when the raw `s₀` exceeded ½.
    pub strip_rescale: Option<f64>,
}

/// Lists of length `M + 1`, computed from `ln ε_ν = (4/3)^ν ln ε`.
pub fn build_schedule(eps0: f64, n_smooth: u32, gamma: f64, _n: usize, m: usize) -> Result<Schedule> {
    if !(eps0 > 0.0 && eps0 < 1.0) {
        return Err(Error::InvalidParameter(format!("epsilon = {eps0} must lie in (0, 1)")));
    }
    if n_smooth < 2 {
        return Err(Error::InvalidParameter(format!("smoothness N = {n_smooth} must be at least 2")));
    }
    if m < 1 {
        return Err(Error::InvalidParameter("at least one step is required".into()));
    }
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("gamma = {gamma} outside (0, 1)")));
    }
    let l0 = eps0.ln();
    let log_at = |nu: usize| l0 * (4.0f64 / 3.0).powi(nu as i32);
    let log_eps: Vec<f64> = (0..=m).map(log_at).collect();
    let eps = log_eps.iter().enumerate().map(|(nu, l)| if nu == 0 { eps0 } else { l.exp() }).collect();
    let raw: Vec<f64> = (0..=m).map(|nu| (log_at(nu + 1) / n_smooth as f64).exp()).collect();
    let strip_rescale = (raw[0] > 0.5).then(|| 0.5 / raw[0]);
    let strip: Vec<f64> = raw.iter().map(|s| s * strip_rescale.unwrap_or(1.0)).collect();
    if let Some(f) = strip_rescale {
        log::info!("strip s0 = {:.4} exceeds 1/2; all strips rescaled by {f:.4}", raw[0]);
    }
    let cutoff = strip.iter().enumerate().map(|(nu, s)| 100.0 / s * 2f64.powi(nu as i32) * l0.abs()).collect();
    let gamma = (0..=m).map(|nu| gamma / 2f64.powi(nu as i32)).collect();
    Ok(Schedule { eps, log_eps, strip, cutoff, gamma, step_cap: m, smoothness: n_smooth, strip_rescale })
}

impl Schedule {
    /// Integer cutoff in `|k|₁` actually used at step `m`, capped by the
    /// largest `|k|₁` the mode box holds.
    pub fn effective_cutoff(&self, m: usize, box_l1_max: usize) -> (usize, bool) {
        let k = self.cutoff[m];
        if k >= box_l1_max as f64 {
            (box_l1_max, true)
        } else {
            (k.floor() as usize, false)
        }
    }
}
