//! Time-1 maps of the linear flows generated by homological solutions.
//!
//! The map is the solution of `u' = B(s) u`, `u(0) = I` on `[0, 1]`, obtained
//! by Picard iteration of the Gauss collocation equations on each substep.
//! In [`FlowMode::Frozen`] the angle is held at `θ₀` (the flow of a
//! Hamiltonian that does not depend on the conjugate action); in
//! [`FlowMode::Transported`] the generator is sampled at `θ₀ + ωs`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::QuadraticForm;
use crate::gauss::GaussRule;
use crate::generator::{form_to_generator_coeffs, symplectic_unit};
use crate::torus::{self, ModeBox};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowMode {
    #[default]
    Frozen,
    Transported,
}

/// Real generator family `X(θ) = Σ_k X̂(k) e^{i⟨k,θ⟩}` with only the modes
/// that carry data retained.
#[derive(Clone, Debug)]
pub struct GeneratorSeries {
    pub modes: ModeBox,
    pub dim: usize,
    /// Retained mode indices with `idx ≥ zero_index` (the other half follows by
    /// conjugation).
    pub support: Vec<usize>,
    pub coeffs: Vec<Complex64>,
}

impl GeneratorSeries {
    /// Generator of `scale · qf`.
    pub fn from_form(qf: &QuadraticForm, scale: f64) -> Self {
        let dim = 2 * qf.j_max;
        let mut coeffs = form_to_generator_coeffs(qf);
        if scale != 1.0 {
            coeffs.iter_mut().for_each(|c| *c *= scale);
        }
        Self::from_coeffs(qf.modes.clone(), dim, coeffs)
    }

    pub fn from_coeffs(modes: ModeBox, dim: usize, coeffs: Vec<Complex64>) -> Self {
        let s = dim * dim;
        let zero = modes.zero_index();
        let support = (zero..modes.len())
            .filter(|&m| coeffs[m * s..(m + 1) * s].iter().any(|c| c.re != 0.0 || c.im != 0.0))
            .collect();
        GeneratorSeries { modes, dim, support, coeffs }
    }

    pub fn is_zero(&self) -> bool {
        self.support.is_empty()
    }

    /// `ω·∂_θ X`.
    pub fn derivative(&self, omega: &[f64]) -> Self {
        let s = self.dim * self.dim;
        let mut coeffs = self.coeffs.clone();
        for m in 0..self.modes.len() {
            let kw = torus::dot(&self.modes.mode(m), omega);
            coeffs[m * s..(m + 1) * s].iter_mut().for_each(|c| *c *= Complex64::new(0.0, kw));
        }
        Self::from_coeffs(self.modes.clone(), self.dim, coeffs)
    }

    /// `X(θ)`, assuming `X̂(-k) = conj X̂(k)`.
    pub fn eval(&self, theta: &[f64]) -> DMatrix<f64> {
        let s = self.dim * self.dim;
        let ph = torus::phases(&self.modes, theta);
        let zero = self.modes.zero_index();
        let mut acc = vec![0.0; s];
        for &m in &self.support {
            let src = &self.coeffs[m * s..(m + 1) * s];
            if m == zero {
                acc.iter_mut().zip(src).for_each(|(a, c)| *a += c.re);
            } else {
                let w = 2.0 * ph[m];
                acc.iter_mut().zip(src).for_each(|(a, c)| *a += w.re * c.re - w.im * c.im);
            }
        }
        DMatrix::from_column_slice(self.dim, self.dim, &acc)
    }

    /// Upper bound for `sup_θ` of the max-row-sum norm.
    pub fn sup_bound(&self) -> f64 {
        let s = self.dim * self.dim;
        let zero = self.modes.zero_index();
        let mut acc = vec![0.0; s];
        for &m in &self.support {
            let w = if m == zero { 1.0 } else { 2.0 };
            acc.iter_mut().zip(&self.coeffs[m * s..(m + 1) * s]).for_each(|(a, c)| *a += w * c.norm());
        }
        let m = DMatrix::from_column_slice(self.dim, self.dim, &acc);
        m.row_iter().map(|r| r.sum()).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PicardStats {
    pub stages: usize,
    pub substeps: usize,
    pub max_iterations: usize,
}

/// `(s!)² / ((2s)! (2s+1)!)`, the leading error constant of the `s`-stage
/// Gauss method on linear constant problems.
fn gauss_error_constant(s: usize) -> f64 {
    let f = |n: usize| (1..=n).map(|v| v as f64).product::<f64>();
    f(s).powi(2) / (f(2 * s) * f(2 * s + 1))
}

/// Chooses `(stages, substeps)` so that `‖hB‖ ≤ ¼` (Picard contraction
/// below ½) and the collocation error stays below `tol / 10`.
pub fn plan_quadrature(bound: f64, tol: f64, step: usize) -> Result<(usize, usize)> {
    if !(tol > 0.0) || !bound.is_finite() {
        return Err(Error::InvalidParameter(format!("picard tolerance {tol} / generator bound {bound}")));
    }
    let substeps = ((bound / 0.25).ceil() as usize).max(1);
    if substeps > 4096 {
        return Err(Error::StepSize {
            step,
            reason: format!("generator bound {bound:.3e} needs {substeps} Picard substeps"),
        });
    }
    let h = bound / substeps as f64;
    let stages = (1..=10)
        .find(|&s| gauss_error_constant(s) * h.powi(2 * s as i32 + 1) * substeps as f64 <= tol / 10.0)
        .unwrap_or(10);
    Ok((stages, substeps))
}

const MAX_PICARD_ITER: usize = 200;

/// Time-1 map of `u' = b(s) u` by Picard-iterated Gauss collocation.
pub fn picard_flow(
    b: &dyn Fn(f64) -> DMatrix<f64>,
    dim: usize,
    stages: usize,
    substeps: usize,
    tol: f64,
    step: usize,
) -> Result<(DMatrix<f64>, usize)> {
    let rule = GaussRule::new(stages);
    let h = 1.0 / substeps as f64;
    let id = DMatrix::<f64>::identity(dim, dim);
    let mut total = id.clone();
    let mut worst_iter = 0;
    for sub in 0..substeps {
        let t0 = sub as f64 * h;
        let bs: Vec<DMatrix<f64>> = rule.nodes.iter().map(|&c| b(t0 + c * h) * h).collect();
        let mut u: Vec<DMatrix<f64>> = vec![id.clone(); stages];
        let mut prods: Vec<DMatrix<f64>> = bs.to_vec();
        let mut last_diff = f64::INFINITY;
        let mut converged = false;
        for it in 1..=MAX_PICARD_ITER {
            let mut diff = 0.0f64;
            for i in 0..stages {
                let mut next = id.clone();
                for (j, p) in prods.iter().enumerate() {
                    next += p * rule.a[i][j];
                }
                diff = diff.max((&next - &u[i]).amax());
                u[i] = next;
            }
            for i in 0..stages {
                prods[i] = &bs[i] * &u[i];
            }
            worst_iter = worst_iter.max(it);
            if diff < tol {
                converged = true;
                break;
            }
            if it > 3 && diff > 0.5 * last_diff && diff > 1e3 * tol {
                break;
            }
            last_diff = diff;
        }
        if !converged {
            return Err(Error::StepSize {
                step,
                reason: format!("Picard iteration did not contract on substep {sub} of {substeps}"),
            });
        }
        let mut map = id.clone();
        for (j, p) in prods.iter().enumerate() {
            map += p * rule.weights[j];
        }
        total = map * total;
    }
    Ok((total, worst_iter))
}

/// `id + P_m(θ₀)` for every `θ₀` in `thetas`; `x` is the actual-size
/// generator of the step.
pub fn flow_transform(
    x: &GeneratorSeries,
    omega: &[f64],
    thetas: &[Vec<f64>],
    picard_tol: f64,
    mode: FlowMode,
    step: usize,
) -> Result<(Vec<DMatrix<f64>>, PicardStats)> {
    let dim = x.dim;
    if x.is_zero() {
        let id = DMatrix::identity(dim, dim);
        return Ok((vec![id; thetas.len()], PicardStats { stages: 0, substeps: 0, max_iterations: 0 }));
    }
    let (stages, substeps) = plan_quadrature(x.sup_bound(), picard_tol, step)?;
    let mut out = Vec::with_capacity(thetas.len());
    let mut iters = 0;
    for th in thetas {
        let (m, it) = match mode {
            FlowMode::Frozen => {
                let b = x.eval(th);
                picard_flow(&|_| b.clone(), dim, stages, substeps, picard_tol, step)?
            }
            FlowMode::Transported => {
                let f = |s: f64| {
                    let shifted: Vec<f64> = th.iter().zip(omega).map(|(t, w)| t + w * s).collect();
                    x.eval(&shifted)
                };
                picard_flow(&f, dim, stages, substeps, picard_tol, step)?
            }
        };
        iters = iters.max(it);
        out.push(m);
    }
    Ok((out, PicardStats { stages, substeps, max_iterations: iters }))
}

/// Frozen map `M` at `θ` and its derivative along `θ̇ = ω`, read off the
/// block flow of `[[X, ω·∂X], [0, X]]`.
pub fn map_and_derivative(
    x: &GeneratorSeries,
    dx: &GeneratorSeries,
    theta: &[f64],
    picard_tol: f64,
    step: usize,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let d = x.dim;
    let xm = x.eval(theta);
    let dxm = dx.eval(theta);
    let mut big = DMatrix::zeros(2 * d, 2 * d);
    big.view_mut((0, 0), (d, d)).copy_from(&xm);
    big.view_mut((d, d), (d, d)).copy_from(&xm);
    big.view_mut((0, d), (d, d)).copy_from(&dxm);
    let bound = x.sup_bound() + dx.sup_bound();
    let (stages, substeps) = plan_quadrature(bound, picard_tol, step)?;
    let (m, _) = picard_flow(&|_| big.clone(), 2 * d, stages, substeps, picard_tol, step)?;
    Ok((m.view((0, 0), (d, d)).into_owned(), m.view((0, d), (d, d)).into_owned()))
}

/// `max |MᵀJM - J|` in real coordinates (equivalent to preservation of
/// `i dz∧dz̄` since the change to `(z, z̄)` is a fixed linear map).
pub fn symplectic_defect(m: &DMatrix<f64>) -> f64 {
    let j = symplectic_unit(m.nrows() / 2);
    (m.transpose() * &j * m - j).amax()
}

/// Spectral norm of `D(M - I)D⁻¹` with `D = diag(k^N)` on both halves.
pub fn weighted_deviation(m: &DMatrix<f64>, n_weight: u32) -> f64 {
    let d = m.nrows();
    let half = d / 2;
    let w = |a: usize| ((a % half + 1) as f64).powi(n_weight as i32);
    let p = DMatrix::from_fn(d, d, |a, b| {
        let v = m[(a, b)] - if a == b { 1.0 } else { 0.0 };
        v * w(a) / w(b)
    });
    if p.iter().all(|v| *v == 0.0) {
        return 0.0;
    }
    p.svd(false, false).singular_values.max()
}
