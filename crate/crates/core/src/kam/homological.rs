//! Truncation `Γ_K` and the homological equations of one KAM step.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::flow::GeneratorSeries;
use super::normal_form::NormalForm;
use crate::error::{Error, Result};
use crate::galerkin::{weighted_norm, Block, NormReport, QuadraticForm, WeightedSpace};
use crate::generator::normal_form_generator;
use crate::torus;

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `(Γ_K qf, (1 - Γ_K) qf)` with `|k|` measured in ℓ¹.
pub fn truncate(qf: &QuadraticForm, k: usize) -> (QuadraticForm, QuadraticForm) {
    qf.split_l1(k)
}

/// `A_k = |k|^{2n+3} + 8`.
pub fn a_k(k: &[i32]) -> f64 {
    (torus::l1(k) as f64).powi(2 * k.len() as i32 + 3) + 8.0
}

/// `(|i - j| + 1) γ / A_k` with 1-based mode numbers.
pub fn threshold(k: &[i32], i: usize, j: usize, gamma: f64) -> f64 {
    (i.abs_diff(j) + 1) as f64 * gamma / a_k(k)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivisorKind {
    ZzBar,
    Zz,
    ZbZb,
}

impl DivisorKind {
    pub fn name(self) -> &'static str {
        match self {
            DivisorKind::ZzBar => "zzbar",
            DivisorKind::Zz => "zz",
            DivisorKind::ZbZb => "zbzb",
        }
    }

    pub fn block(self) -> Block {
        match self {
            DivisorKind::ZzBar => Block::ZzBar,
            DivisorKind::Zz => Block::Zz,
            DivisorKind::ZbZb => Block::ZbZb,
        }
    }

    /// `-⟨k,ω⟩ + λ_i - λ_j`, `λ_i + λ_j + ⟨k,ω⟩` and `λ_i + λ_j - ⟨k,ω⟩`.
    pub fn divisor(self, kw: f64, li: f64, lj: f64) -> f64 {
        match self {
            DivisorKind::ZzBar => -kw + li - lj,
            DivisorKind::Zz => li + lj + kw,
            DivisorKind::ZbZb => li + lj - kw,
        }
    }

    /// Factor `c` in `F̂ = c R̂ / divisor`.
    fn numerator(self) -> Complex64 {
        match self {
            DivisorKind::Zz => Complex64::new(0.0, -1.0),
            _ => Complex64::new(0.0, 1.0),
        }
    }

    pub const ALL: [DivisorKind; 3] = [DivisorKind::ZzBar, DivisorKind::Zz, DivisorKind::ZbZb];
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivisorHit {
    pub k: Vec<i32>,
    /// 1-based mode numbers.
    pub i: usize,
    pub j: usize,
    pub kind: DivisorKind,
    pub divisor: f64,
    pub threshold: f64,
}

#[derive(Clone, Debug)]
pub struct HomologicalSolution {
    /// `F` for the normalized remainder (multiply by `ε_m` for the actual
    /// generator).
    pub f: QuadraticForm,
    /// `R̂_jj^{zz̄}(0)`, returned for the normal-form update.
    pub diag_avg: Vec<Complex64>,
    pub cutoff: usize,
    pub divisor_min: Option<DivisorHit>,
    /// Smallest `|divisor| / threshold` met.
    pub margin_min: f64,
    pub residual: f64,
    pub norm_report: NormReport,
}

/// Solves the three homological equations for `Γ_K r` against the normal form
/// `nf` at frequency `omega`. Every divisor met by a nonzero coefficient is
/// checked against its threshold.
pub fn solve_homological(
    r: &QuadraticForm,
    nf: &NormalForm,
    omega: &[f64],
    k_cut: usize,
    gamma_m: f64,
    ws: &WeightedSpace,
    step: usize,
) -> Result<HomologicalSolution> {
    let jm = r.j_max;
    if nf.j_max() != jm || omega.len() != r.modes.n {
        return Err(Error::Dimension(format!(
            "remainder J = {jm}, normal form J = {}, ω of length {} on a {}-torus",
            nf.j_max(),
            omega.len(),
            r.modes.n
        )));
    }
    let lam = &nf.lambda;
    let zero = r.modes.zero_index();
    let mut f = QuadraticForm::zeros(r.modes.clone(), jm);
    f.strip = r.strip;
    let mut diag_avg = vec![ZERO; jm];
    let mut worst: Option<DivisorHit> = None;
    let mut margin_min = f64::INFINITY;
    for m in 0..r.modes.len() {
        let k = r.modes.mode(m);
        if torus::l1(&k) > k_cut {
            continue;
        }
        let kw = torus::dot(&k, omega);
        for kind in DivisorKind::ALL {
            let b = kind.block();
            for i in 0..jm {
                for j in 0..jm {
                    let rv = r.coeff(b, m, i, j);
                    if kind == DivisorKind::ZzBar && m == zero && i == j {
                        diag_avg[i] = rv;
                        continue;
                    }
                    if rv == ZERO {
                        continue;
                    }
                    let d = kind.divisor(kw, lam[i], lam[j]);
                    let thr = threshold(&k, i + 1, j + 1, gamma_m);
                    let hit = || DivisorHit { k: k.clone(), i: i + 1, j: j + 1, kind, divisor: d, threshold: thr };
                    if d.abs() < thr {
                        let h = hit();
                        return Err(Error::Resonance {
                            step,
                            k: h.k,
                            i: h.i,
                            j: h.j,
                            kind: kind.name().into(),
                            divisor: d,
                            threshold: thr,
                        });
                    }
                    if worst.as_ref().is_none_or(|w| d.abs() < w.divisor.abs()) {
                        worst = Some(hit());
                    }
                    margin_min = margin_min.min(d.abs() / thr);
                    *f.coeff_mut(b, m, i, j) = kind.numerator() * rv / d;
                }
            }
        }
    }
    let residual = plug_back_residual(r, &f, nf, omega, k_cut);
    let norm_report = weighted_norm(&f, ws, 8, None);
    Ok(HomologicalSolution { f, diag_avg, cutoff: k_cut, divisor_min: worst, margin_min, residual, norm_report })
}

/// `max |divisor·F̂ - c·R̂| / max |R̂|` over the truncated index set, with the
/// removed diagonal averages required to carry `F̂ = 0`.
pub fn plug_back_residual(r: &QuadraticForm, f: &QuadraticForm, nf: &NormalForm, omega: &[f64], k_cut: usize) -> f64 {
    let jm = r.j_max;
    let zero = r.modes.zero_index();
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for m in 0..r.modes.len() {
        let k = r.modes.mode(m);
        if torus::l1(&k) > k_cut {
            continue;
        }
        let kw = torus::dot(&k, omega);
        for kind in DivisorKind::ALL {
            let b = kind.block();
            for i in 0..jm {
                for j in 0..jm {
                    let rv = r.coeff(b, m, i, j);
                    let fv = f.coeff(b, m, i, j);
                    den = den.max(rv.norm());
                    if kind == DivisorKind::ZzBar && m == zero && i == j {
                        num = num.max(fv.norm());
                        continue;
                    }
                    let lhs = kind.divisor(kw, nf.lambda[i], nf.lambda[j]) * fv;
                    num = num.max((lhs - kind.numerator() * rv).norm());
                }
            }
        }
    }
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// `max |[L_N, X] - ω·∂X + Γ L_R - L_[R]|` over `thetas`, relative to
/// `max |Γ L_R|`: the homological equation restated for generators.
pub fn generator_identity_residual(
    r_low: &QuadraticForm,
    sol: &HomologicalSolution,
    nf: &NormalForm,
    omega: &[f64],
    thetas: &[Vec<f64>],
) -> f64 {
    let x = GeneratorSeries::from_form(&sol.f, 1.0);
    let dx = x.derivative(omega);
    let rl = GeneratorSeries::from_form(r_low, 1.0);
    let ln = normal_form_generator(&nf.lambda);
    let lr = normal_form_generator(&sol.diag_avg.iter().map(|v| v.re).collect::<Vec<_>>());
    let mut num = 0.0f64;
    let mut den = 0.0f64;
    for th in thetas {
        let xm = x.eval(th);
        let a = rl.eval(th);
        let res: DMatrix<f64> = &ln * &xm - &xm * &ln - dx.eval(th) + &a - &lr;
        num = num.max(res.amax());
        den = den.max(a.amax());
    }
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
