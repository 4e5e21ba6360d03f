//! Near-resonant parameter sets: screening single τ values and measuring the
//! excluded part of `[1, 2]` on a grid.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kam::homological::{threshold, DivisorHit, DivisorKind};
use crate::kam::NormalForm;
use crate::potential::FrequencySpec;
use crate::torus;

pub use crate::kam::homological::DivisorHit as DivisorQuery;

pub const TAU_LO: f64 = 1.0;
pub const TAU_HI: f64 = 2.0;

/// Integer vectors with `|k|₁ ≤ k_max`, in lexicographic order.
pub fn l1_ball(n: usize, k_max: usize) -> Vec<Vec<i32>> {
    let mut out = Vec::new();
    let mut cur = vec![0i32; n];
    fn rec(d: usize, left: i32, cur: &mut Vec<i32>, out: &mut Vec<Vec<i32>>) {
        if d == cur.len() {
            out.push(cur.clone());
            return;
        }
        for v in -left..=left {
            cur[d] = v;
            rec(d + 1, left - v.abs(), cur, out);
        }
    }
    rec(0, k_max as i32, &mut cur, &mut out);
    out
}

/// Which index pairs are enumerated for a given `k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pruning {
    /// `|i - j| ≤ ⌈4|⟨k,ω⟩|⌉` for zz̄ and `λ_i + λ_j ≤ |⟨k,ω⟩| + 1` otherwise.
    Pruned,
    /// Every pair with `i, j ≤ J_max`.
    BruteForce,
}

fn considered(kind: DivisorKind, kw_abs: f64, i: usize, j: usize, li: f64, lj: f64, pruning: Pruning) -> bool {
    if pruning == Pruning::BruteForce {
        return true;
    }
    match kind {
        DivisorKind::ZzBar => i.abs_diff(j) as f64 <= (4.0 * kw_abs).ceil(),
        _ => li + lj <= kw_abs + 1.0,
    }
}

/// Outcome of screening one τ.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScreenResult {
    pub tau: f64,
    pub pass: bool,
    /// Query with the smallest `|divisor| / threshold`.
    pub worst: Option<DivisorQuery>,
    pub queries: usize,
}

/// Index pairs `(i, j)` (1-based) examined for `k`; zz and z̄z̄ are symmetric in
/// `(i, j)`, so only `i ≤ j` is listed for them.
fn pairs(kind: DivisorKind, j_max: usize) -> impl Iterator<Item = (usize, usize)> {
    (1..=j_max).flat_map(move |i| {
        let lo = if kind == DivisorKind::ZzBar { 1 } else { i };
        (lo..=j_max).map(move |j| (i, j))
    })
}

fn check_inputs(nf: &NormalForm, j_max: usize, gamma_m: f64) -> Result<()> {
    if j_max > nf.j_max() {
        return Err(Error::Dimension(format!("J_max = {j_max} exceeds the normal form size {}", nf.j_max())));
    }
    if !(gamma_m > 0.0) {
        return Err(Error::InvalidParameter(format!("gamma_m = {gamma_m} must be positive")));
    }
    Ok(())
}

pub fn screen_tau_with(
    tau: f64,
    nf: &NormalForm,
    freq: &FrequencySpec,
    k_m: usize,
    gamma_m: f64,
    j_max: usize,
    pruning: Pruning,
) -> Result<ScreenResult> {
    check_inputs(nf, j_max, gamma_m)?;
    let omega: Vec<f64> = freq.omega0.iter().map(|w| w * tau).collect();
    let lam = &nf.lambda;
    let mut worst: Option<(f64, DivisorQuery)> = None;
    let mut queries = 0;
    for k in l1_ball(freq.n(), k_m) {
        let kw = torus::dot(&k, &omega);
        let zero = k.iter().all(|&v| v == 0);
        for kind in DivisorKind::ALL {
            for (i, j) in pairs(kind, j_max) {
                if kind == DivisorKind::ZzBar && zero && i == j {
                    continue;
                }
                let (li, lj) = (lam[i - 1], lam[j - 1]);
                if !considered(kind, kw.abs(), i, j, li, lj, pruning) {
                    continue;
                }
                queries += 1;
                let d = kind.divisor(kw, li, lj);
                let t = threshold(&k, i, j, gamma_m);
                let ratio = d.abs() / t;
                if worst.as_ref().is_none_or(|(r, _)| ratio < *r) {
                    worst = Some((ratio, DivisorHit { k: k.clone(), i, j, kind, divisor: d, threshold: t }));
                }
            }
        }
    }
    let pass = worst.as_ref().is_none_or(|(r, _)| *r >= 1.0);
    Ok(ScreenResult { tau, pass, worst: worst.map(|(_, q)| q), queries })
}

/// Fails iff some enumerated divisor is below its threshold. `k = 0, i = j` is
/// never a zz̄ query.
pub fn screen_tau(
    tau: f64,
    nf: &NormalForm,
    freq: &FrequencySpec,
    k_m: usize,
    gamma_m: f64,
    j_max: usize,
) -> Result<ScreenResult> {
    screen_tau_with(tau, nf, freq, k_m, gamma_m, j_max, Pruning::Pruned)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KStat {
    pub k: Vec<i32>,
    /// `i₀ = |k|^{n+1} γ_m^{-1/3}`.
    pub index_cap: f64,
    pub queries: usize,
    /// Grid points excluded by queries of this `k`.
    pub excluded_points: usize,
    /// Of those, points excluded only through pairs with `max(i, j) > i₀`.
    pub excluded_beyond_cap: usize,
    pub worst: Option<DivisorQuery>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResonanceReport {
    pub step: usize,
    pub tau_lo: f64,
    pub tau_hi: f64,
    pub grid_points: usize,
    pub k_cut: usize,
    pub gamma: f64,
    pub j_max: usize,
    pub pruning: Pruning,
    pub excluded_points: usize,
    pub excluded_fraction: f64,
    /// `excluded_fraction / γ_m^{1/3}`.
    pub empirical_constant: f64,
    /// Only the `k` that exclude at least one point.
    pub per_k_stats: Vec<KStat>,
    /// Largest `|i - j|` enumerated for zz̄ and largest `λ_i + λ_j` for
    /// zz / z̄z̄ over the scanned range.
    pub zzbar_gap_cap: usize,
    pub sum_cap: f64,
    #[serde(skip)]
    pub excluded: Vec<bool>,
    #[serde(skip)]
    pub worst_at: Vec<Option<DivisorQuery>>,
}

pub fn tau_grid(points: usize) -> Vec<f64> {
    (0..points).map(|p| TAU_LO + (TAU_HI - TAU_LO) * p as f64 / (points - 1) as f64).collect()
}

/// Marks every grid τ excluded by some query. Each query excludes an interval
/// in τ; only grid points near that interval are tested, with exactly the
/// predicate of [`screen_tau_with`].
#[allow(clippy::too_many_arguments)]
pub fn measure_scan_with(
    nf: &NormalForm,
    freq: &FrequencySpec,
    k_m: usize,
    gamma_m: f64,
    j_max: usize,
    grid_points: usize,
    step: usize,
    pruning: Pruning,
) -> Result<ResonanceReport> {
    check_inputs(nf, j_max, gamma_m)?;
    if grid_points < 100 {
        return Err(Error::InvalidParameter(format!("{grid_points} grid points; at least 100 are required")));
    }
    let taus = tau_grid(grid_points);
    let h = (TAU_HI - TAU_LO) / (grid_points - 1) as f64;
    let lam = &nf.lambda;
    let n = freq.n();
    let ks = l1_ball(n, k_m);
    let cube_root = gamma_m.cbrt();

    struct Hits {
        stat: KStat,
        marks: Vec<(usize, f64, DivisorQuery)>,
    }
    let per_k: Vec<Hits> = ks
        .par_iter()
        .map(|k| {
            let a = torus::dot(k, &freq.omega0);
            let zero = k.iter().all(|&v| v == 0);
            let index_cap = (torus::l1(k) as f64).powi(n as i32 + 1) / cube_root;
            let mut stat =
                KStat { k: k.clone(), index_cap, queries: 0, excluded_points: 0, excluded_beyond_cap: 0, worst: None };
            let mut marks: Vec<(usize, f64, DivisorQuery)> = Vec::new();
            let mut beyond: Vec<usize> = Vec::new();
            let mut inside: Vec<usize> = Vec::new();
            for kind in DivisorKind::ALL {
                for (i, j) in pairs(kind, j_max) {
                    if kind == DivisorKind::ZzBar && zero && i == j {
                        continue;
                    }
                    let (li, lj) = (lam[i - 1], lam[j - 1]);
                    if !considered(kind, a.abs() * TAU_HI, i, j, li, lj, pruning) {
                        continue;
                    }
                    stat.queries += 1;
                    let t = threshold(k, i, j, gamma_m);
                    // divisor = c + s·aτ
                    let (c, s) = match kind {
                        DivisorKind::ZzBar => (li - lj, -1.0),
                        DivisorKind::Zz => (li + lj, 1.0),
                        DivisorKind::ZbZb => (li + lj, -1.0),
                    };
                    let range = if a == 0.0 {
                        if c.abs() < t {
                            Some((0, grid_points - 1))
                        } else {
                            None
                        }
                    } else {
                        let (x0, x1) = ((-t - c) / (s * a), (t - c) / (s * a));
                        let (lo, hi) = (x0.min(x1), x0.max(x1));
                        if hi < TAU_LO - h || lo > TAU_HI + h {
                            None
                        } else {
                            let p0 = (((lo - TAU_LO) / h).floor() - 1.0).max(0.0) as usize;
                            let p1 = ((((hi - TAU_LO) / h).ceil() + 1.0).max(0.0) as usize).min(grid_points - 1);
                            (p0 <= p1).then_some((p0, p1))
                        }
                    };
                    let Some((p0, p1)) = range else { continue };
                    for p in p0..=p1 {
                        let tau = taus[p];
                        if !considered(kind, a.abs() * tau, i, j, li, lj, pruning) {
                            continue;
                        }
                        let kw = a * tau;
                        let d = kind.divisor(kw, li, lj);
                        if d.abs() < t {
                            let q = DivisorHit { k: k.clone(), i, j, kind, divisor: d, threshold: t };
                            let ratio = d.abs() / t;
                            if stat.worst.as_ref().is_none_or(|w| ratio < w.divisor.abs() / w.threshold) {
                                stat.worst = Some(q.clone());
                            }
                            marks.push((p, ratio, q));
                            if (i.max(j) as f64) > index_cap {
                                beyond.push(p);
                            } else {
                                inside.push(p);
                            }
                        }
                    }
                }
            }
            let mut pts: Vec<usize> = marks.iter().map(|m| m.0).collect();
            pts.sort_unstable();
            pts.dedup();
            stat.excluded_points = pts.len();
            inside.sort_unstable();
            inside.dedup();
            beyond.sort_unstable();
            beyond.dedup();
            stat.excluded_beyond_cap = beyond.iter().filter(|p| inside.binary_search(p).is_err()).count();
            Hits { stat, marks }
        })
        .collect();

    let mut excluded = vec![false; grid_points];
    let mut worst_at: Vec<Option<(f64, DivisorQuery)>> = vec![None; grid_points];
    let mut per_k_stats = Vec::new();
    for hits in per_k {
        for (p, ratio, q) in hits.marks {
            excluded[p] = true;
            if worst_at[p].as_ref().is_none_or(|(r, _)| ratio < *r) {
                worst_at[p] = Some((ratio, q));
            }
        }
        if hits.stat.excluded_points > 0 {
            per_k_stats.push(hits.stat);
        }
    }
    let excluded_points = excluded.iter().filter(|&&e| e).count();
    let excluded_fraction = excluded_points as f64 / grid_points as f64;
    let omega_inf = freq.omega0.iter().fold(0.0f64, |a, w| a.max(w.abs())) * TAU_HI;
    Ok(ResonanceReport {
        step,
        tau_lo: TAU_LO,
        tau_hi: TAU_HI,
        grid_points,
        k_cut: k_m,
        gamma: gamma_m,
        j_max,
        pruning,
        excluded_points,
        excluded_fraction,
        empirical_constant: excluded_fraction / cube_root,
        per_k_stats,
        zzbar_gap_cap: match pruning {
            Pruning::Pruned => ((4.0 * k_m as f64 * omega_inf).ceil() as usize).min(j_max.saturating_sub(1)),
            Pruning::BruteForce => j_max.saturating_sub(1),
        },
        sum_cap: k_m as f64 * omega_inf + 1.0,
        excluded,
        worst_at: worst_at.into_iter().map(|w| w.map(|(_, q)| q)).collect(),
    })
}

pub fn measure_scan(
    nf: &NormalForm,
    freq: &FrequencySpec,
    k_m: usize,
    gamma_m: f64,
    j_max: usize,
    grid_points: usize,
    step: usize,
) -> Result<ResonanceReport> {
    measure_scan_with(nf, freq, k_m, gamma_m, j_max, grid_points, step, Pruning::Pruned)
}

impl ResonanceReport {
    /// Rows `tau,excluded,worst_divisor,worst_threshold,k,i,j,kind`.
    pub fn write_csv(&self, w: &mut dyn Write) -> Result<()> {
        writeln!(w, "tau,excluded,worst_divisor,worst_threshold,k,i,j,kind")?;
        for (p, tau) in tau_grid(self.grid_points).into_iter().enumerate() {
            let flag = self.excluded.get(p).copied().unwrap_or(false) as u8;
            match self.worst_at.get(p).and_then(|q| q.as_ref()) {
                Some(q) => {
                    let k: Vec<String> = q.k.iter().map(|v| v.to_string()).collect();
                    writeln!(
                        w,
                        "{tau:.10},{flag},{:e},{:e},{},{},{},{}",
                        q.divisor,
                        q.threshold,
                        k.join(" "),
                        q.i,
                        q.j,
                        q.kind.name()
                    )?;
                }
                None => writeln!(w, "{tau:.10},{flag},,,,,,")?,
            }
        }
        Ok(())
    }
}

/// The nested parameter sets `Π₀ ⊃ Π₁ ⊃ …` as a mask over the τ grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterMask {
    pub grid_points: usize,
    pub keep: Vec<bool>,
}

impl ParameterMask {
    pub fn full(grid_points: usize) -> Self {
        ParameterMask { grid_points, keep: vec![true; grid_points] }
    }

    pub fn refine(&mut self, report: &ResonanceReport) -> Result<()> {
        if report.grid_points != self.grid_points {
            return Err(Error::Dimension(format!(
                "report on {} points cannot refine a mask of {}",
                report.grid_points, self.grid_points
            )));
        }
        for (k, e) in self.keep.iter_mut().zip(&report.excluded) {
            *k &= !e;
        }
        Ok(())
    }

    pub fn fraction(&self) -> f64 {
        self.keep.iter().filter(|&&k| k).count() as f64 / self.grid_points as f64
    }
}

/// `τ = (λ_i - λ_j)/⟨k,ω₀⟩`, the parameter at which the zz̄ divisor vanishes.
pub fn resonant_tau(nf: &NormalForm, freq: &FrequencySpec, k: &[i32], i: usize, j: usize) -> Option<f64> {
    let a = torus::dot(k, &freq.omega0);
    if a == 0.0 || i == 0 || j == 0 || i > nf.j_max() || j > nf.j_max() {
        return None;
    }
    Some((nf.lambda[i - 1] - nf.lambda[j - 1]) / a)
}
