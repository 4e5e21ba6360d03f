//! Transport of the remainder through one step's change of variables.
//!
//! With `X` the generator of `ε_m F`, `A = Γ A + (1 - Γ) A` the active piece,
//! `L_[R]` the removed diagonal average and `W_l` the higher pieces, the new
//! generator is exactly
//!
//! ```text
//! L_N + L_[R] + (1-Γ)A
//!   + Σ_{j≥1} (-1)^j [ ad_X^j L_[R] / (j+1)! + j·ad_X^j ΓA / (j+1)! + ad_X^j (1-Γ)A / j! ]
//!   + Σ_l e^{-ad_X} W_l
//! ```
//!
//! (the `L_N` contributions cancel through the homological equation). Only the
//! `j ≥ 1` corrections are evaluated on the grid; the `j = 0` parts are carried
//! over exactly in coefficient space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{QuadraticForm, WeightedSpace};
use crate::generator::{
    analyze_real, form_to_generator_coeffs, generator_coeffs_to_form, normal_form_generator, synthesize_real,
    GridFamily,
};
use crate::torus::Torus;

const MAX_ORDER: usize = 40;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesReport {
    pub label: String,
    pub terms: usize,
    pub last_term: f64,
    /// Geometric tail bound from the ratio of the last two term norms.
    pub tail_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PushReport {
    pub tolerance: f64,
    pub series: Vec<SeriesReport>,
    /// ℓ² mass of resolved θ-frequencies outside the mode box, dropped on
    /// projection.
    pub dropped_mass: f64,
    /// Largest imaginary part discarded when sampling real generators.
    pub max_imag: f64,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// `Σ_{j≥1} c(j) ad_X^j Y`, stopped once the weighted term bound and its
/// geometric tail estimate both fall below `tol`.
fn lie_series(
    x: &GridFamily,
    y: GridFamily,
    coef: &dyn Fn(usize) -> f64,
    ws: &WeightedSpace,
    tol: f64,
    label: &str,
    step: usize,
    acc: &mut GridFamily,
) -> Result<SeriesReport> {
    let mut cur = y;
    let mut prev_norm = f64::INFINITY;
    for j in 1..=MAX_ORDER {
        cur = GridFamily::commutator(x, &cur);
        let c = coef(j);
        let raw = cur.weighted_bound(ws);
        let t = c.abs() * raw;
        acc.axpy(c, &cur);
        let ratio = if prev_norm.is_finite() && prev_norm > 0.0 { t / prev_norm } else { 0.0 };
        let tail = if ratio < 1.0 { t * ratio / (1.0 - ratio) } else { f64::INFINITY };
        if raw == 0.0 || (t < tol && tail < tol) {
            return Ok(SeriesReport { label: label.into(), terms: j, last_term: t, tail_bound: tail.min(t) });
        }
        if j >= 4 && ratio >= 1.0 {
            return Err(Error::StepSize {
                step,
                reason: format!("Lie series for {label} does not decay (term {j}: {t:.3e}, ratio {ratio:.2})"),
            });
        }
        prev_norm = t;
    }
    Err(Error::StepSize { step, reason: format!("Lie series for {label} needs more than {MAX_ORDER} terms") })
}

fn to_grid(torus: &Torus, qf: &QuadraticForm, report: &mut PushReport) -> GridFamily {
    let (g, imag) = synthesize_real(torus, &form_to_generator_coeffs(qf), 2 * qf.j_max);
    report.max_imag = report.max_imag.max(imag);
    g
}

fn to_form(torus: &Torus, g: &GridFamily, jm: usize, report: &mut PushReport) -> QuadraticForm {
    let (coeffs, dropped) = analyze_real(torus, g);
    report.dropped_mass = (report.dropped_mass.powi(2) + dropped).sqrt();
    generator_coeffs_to_form(&coeffs, &torus.modes, jm)
}

/// Next remainder pieces `[R_{m+1}, R_{m+2}, …]` (actual size) from the
/// step's actual-size generator `x_form`, removed average `diag` (actual
/// size), the split active piece and the higher pieces.
#[allow(clippy::too_many_arguments)]
pub fn push_remainder(
    torus: &Torus,
    ws: &WeightedSpace,
    x_form: &QuadraticForm,
    diag: &[f64],
    low: &QuadraticForm,
    high: &QuadraticForm,
    higher: &[QuadraticForm],
    tol: f64,
    step: usize,
) -> Result<(Vec<QuadraticForm>, PushReport)> {
    if higher.is_empty() {
        return Err(Error::InternalConsistency(format!("step {step}: no piece left to receive the remainder")));
    }
    let jm = x_form.j_max;
    let mut report = PushReport { tolerance: tol, series: Vec::new(), dropped_mass: 0.0, max_imag: 0.0 };
    let mut out: Vec<QuadraticForm> = higher.to_vec();
    let strip0 = out[0].strip;
    out[0].axpy(1.0, high);
    out[0].strip = strip0;
    if x_form.is_zero() {
        return Ok((out, report));
    }
    let x = to_grid(torus, x_form, &mut report);
    let dim = 2 * jm;

    let mut acc = GridFamily::zeros(dim, torus.points());
    if diag.iter().any(|d| *d != 0.0) {
        let lr = GridFamily::constant(&normal_form_generator(diag), torus.points());
        let coef = |j: usize| if j.is_multiple_of(2) { 1.0 } else { -1.0 } / factorial(j + 1);
        report.series.push(lie_series(&x, lr, &coef, ws, tol, "average", step, &mut acc)?);
    }
    if !low.is_zero() {
        let g = to_grid(torus, low, &mut report);
        let coef = |j: usize| if j.is_multiple_of(2) { 1.0 } else { -1.0 } * j as f64 / factorial(j + 1);
        report.series.push(lie_series(&x, g, &coef, ws, tol, "active", step, &mut acc)?);
    }
    let exp_coef = |j: usize| if j.is_multiple_of(2) { 1.0 } else { -1.0 } / factorial(j);
    if !high.is_zero() {
        let g = to_grid(torus, high, &mut report);
        report.series.push(lie_series(&x, g, &exp_coef, ws, tol, "tail", step, &mut acc)?);
    }
    for (idx, w) in higher.iter().enumerate() {
        if w.is_zero() {
            continue;
        }
        let g = to_grid(torus, w, &mut report);
        let label = format!("piece+{}", idx + 1);
        if idx == 0 {
            report.series.push(lie_series(&x, g, &exp_coef, ws, tol, &label, step, &mut acc)?);
        } else {
            let mut own = GridFamily::zeros(dim, torus.points());
            report.series.push(lie_series(&x, g, &exp_coef, ws, tol, &label, step, &mut own)?);
            let corr = to_form(torus, &own, jm, &mut report);
            let s = out[idx].strip;
            out[idx].axpy(1.0, &corr);
            out[idx].strip = s;
        }
    }
    let corr = to_form(torus, &acc, jm, &mut report);
    out[0].axpy(1.0, &corr);
    out[0].strip = strip0;
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::galerkin::Block;
    use crate::torus::ModeBox;

    fn form_with(modes: &ModeBox, jm: usize, k: &[i32], i: usize, j: usize, v: f64) -> QuadraticForm {
        // real Hamiltonian: cos⟨k,θ⟩ · (z_i z̄_j + z_j z̄_i) style entry
        let mut qf = QuadraticForm::zeros(modes.clone(), jm);
        let m = modes.index(k).unwrap();
        let mn = modes.negated(m);
        for (mm, c) in [(m, 0.5 * v), (mn, 0.5 * v)] {
            for (a, b) in [(i, j), (j, i)] {
                *qf.coeff_mut(Block::ZzBar, mm, a, b) += c;
                *qf.coeff_mut(Block::Zz, mm, a, b) += 0.5 * c;
                *qf.coeff_mut(Block::ZbZb, mm, a, b) += 0.5 * c;
            }
        }
        qf
    }

    #[test]
    fn zero_generator_shifts_pieces() {
        let modes = ModeBox::new(2, 3);
        let torus = Torus::new(modes.clone(), 8).unwrap();
        let ws = WeightedSpace::new(2, 3);
        let zero = QuadraticForm::zeros(modes.clone(), 3);
        let w1 = form_with(&modes, 3, &[1, 2], 0, 1, 1e-4);
        let w2 = form_with(&modes, 3, &[0, 3], 2, 2, 1e-6);
        let (out, rep) =
            push_remainder(&torus, &ws, &zero, &[0.0; 3], &zero, &zero, &[w1.clone(), w2.clone()], 1e-12, 0).unwrap();
        assert_eq!(out, vec![w1, w2]);
        assert!(rep.series.is_empty());
    }

    #[test]
    fn tail_only_is_moved_into_the_next_piece() {
        let modes = ModeBox::new(2, 3);
        let torus = Torus::new(modes.clone(), 8).unwrap();
        let ws = WeightedSpace::new(2, 3);
        let zero = QuadraticForm::zeros(modes.clone(), 3);
        let tail = form_with(&modes, 3, &[3, 3], 0, 2, 1e-3);
        let (out, _) = push_remainder(&torus, &ws, &zero, &[0.0; 3], &zero, &tail, std::slice::from_ref(&zero), 1e-12, 0).unwrap();
        assert_eq!(out[0], tail);
    }

    #[test]
    fn transported_generator_matches_direct_conjugation() {
        use crate::generator::normal_form_generator;
        use crate::kam::flow::{map_and_derivative, GeneratorSeries};
        use crate::kam::homological::{solve_homological, truncate};
        use crate::kam::normal_form::NormalForm;
        let jm = 3;
        let modes = ModeBox::new(2, 9);
        let torus = Torus::new(modes.clone(), 28).unwrap();
        let ws = WeightedSpace::new(1, jm);
        let omega = [1.1, 1.1 * 2f64.sqrt()];
        let eps = 1e-2;
        let mut active = form_with(&modes, jm, &[1, 0], 0, 1, 1.0);
        active.axpy(1.0, &form_with(&modes, jm, &[0, 1], 1, 2, 0.7));
        active.axpy(1.0, &form_with(&modes, jm, &[0, 0], 2, 2, 0.4));
        active.axpy(1.0, &form_with(&modes, jm, &[1, -1], 0, 0, 0.3));
        let active = active.scaled(eps);
        let w1 = form_with(&modes, jm, &[1, 1], 0, 2, 3e-4);
        let nf = NormalForm::initial(jm);
        let (low, high) = truncate(&active, 1);
        let sol = solve_homological(&low.scaled(1.0 / eps), &nf, &omega, 1, 1e-3, &ws, 0).unwrap();
        let x_form = sol.f.scaled(eps);
        let diag: Vec<f64> = sol.diag_avg.iter().map(|v| v.re * eps).collect();
        let (out, rep) = push_remainder(&torus, &ws, &x_form, &diag, &low, &high, std::slice::from_ref(&w1), 1e-16, 0).unwrap();
        assert!(rep.dropped_mass < 1e-14, "{}", rep.dropped_mass);
        let x = GeneratorSeries::from_form(&x_form, 1.0);
        let dx = x.derivative(&omega);
        let old = GeneratorSeries::from_form(
            &{
                let mut t = active.clone();
                t.axpy(1.0, &w1);
                t
            },
            1.0,
        );
        let new = GeneratorSeries::from_form(&out[0], 1.0);
        let carry = GeneratorSeries::from_form(
            &{
                let mut t = high.clone();
                t.axpy(1.0, &w1);
                t
            },
            1.0,
        );
        let ln = normal_form_generator(&nf.lambda);
        let lam1: Vec<f64> = nf.lambda.iter().zip(&diag).map(|(l, d)| l + d).collect();
        let ln1 = normal_form_generator(&lam1);
        for th in [[0.3, 0.8], [2.0, -1.0], [4.4, 0.1]] {
            let (m, dm) = map_and_derivative(&x, &dx, &th, 1e-15, 0).unwrap();
            let l = &ln + old.eval(&th);
            let direct = m.clone().try_inverse().unwrap() * (&l * &m - dm);
            let tracked = &ln1 + new.eval(&th);
            let err = (&direct - &tracked).amax();
            assert!(err < 1e-13, "{err}");
            // beyond the carried-over tail and next piece, the remainder is second order
            let carried = carry.eval(&th);
            let quad = (&tracked - &ln1 - carried).amax();
            assert!(quad < 20.0 * eps * eps && quad > 0.0, "{quad}"); // smallest divisor is 0.1
        }
    }
}
