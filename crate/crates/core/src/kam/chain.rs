use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::flow::{flow_transform, symplectic_defect, weighted_deviation, FlowMode, GeneratorSeries};
use crate::error::{Error, Result};
use crate::galerkin::QuadraticForm;

/// Summary of one stored change of variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMapStats {
    pub m: usize,
    pub eps: f64,
    /// `max_θ ‖D(M - I)D⁻¹‖` over the check grid.
    pub p_norm: f64,
    /// `ε_m^{1/2}`.
    pub p_bound: f64,
    pub symplectic_defect: f64,
}

#[derive(Clone, Debug)]
pub struct TransformStep {
    pub stats: StepMapStats,
    /// Normalized homological solution; the generator is `ε_m F`.
    pub f: QuadraticForm,
    generator: GeneratorSeries,
}

impl TransformStep {
    pub fn new(stats: StepMapStats, f: QuadraticForm) -> Self {
        let generator = GeneratorSeries::from_form(&f, stats.eps);
        TransformStep { stats, f, generator }
    }

    pub fn generator(&self) -> &GeneratorSeries {
        &self.generator
    }
}

/// The maps `x = M_0(θ) M_1(θ) ⋯ y` produced by a run.
#[derive(Clone, Debug)]
pub struct TransformChain {
    pub steps: Vec<TransformStep>,
    pub omega: Vec<f64>,
    pub picard_tol: f64,
    pub mode: FlowMode,
    /// Measured `max_θ ‖D(Ψ - I)D⁻¹‖` of the composition.
    pub composed_norm: Option<f64>,
}

impl TransformChain {
    pub fn new(omega: Vec<f64>, picard_tol: f64, mode: FlowMode) -> Self {
        TransformChain { steps: Vec::new(), omega, picard_tol, mode, composed_norm: None }
    }

    pub fn dim(&self) -> Option<usize> {
        self.steps.first().map(|s| s.generator.dim)
    }

    pub fn step_matrix(&self, i: usize, theta: &[f64]) -> Result<DMatrix<f64>> {
        let s = self.steps.get(i).ok_or_else(|| Error::Input(format!("chain has no step {i}")))?;
        let (mut maps, _) =
            flow_transform(&s.generator, &self.omega, &[theta.to_vec()], self.picard_tol, self.mode, s.stats.m)?;
        Ok(maps.remove(0))
    }

    /// `Ψ(θ) = M_0(θ) M_1(θ) ⋯ M_{last}(θ)`; `None` dimension means identity of
    /// size `dim`.
    pub fn compose(&self, theta: &[f64], dim: usize) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::identity(dim, dim);
        for i in 0..self.steps.len() {
            out *= self.step_matrix(i, theta)?;
        }
        Ok(out)
    }

    /// Inverse composition, using `M⁻¹ = -J Mᵀ J`.
    pub fn compose_inverse(&self, theta: &[f64], dim: usize) -> Result<DMatrix<f64>> {
        let j = crate::generator::symplectic_unit(dim / 2);
        let m = self.compose(theta, dim)?;
        Ok(-(&j * m.transpose() * &j))
    }

    pub fn measure_composed_norm(&mut self, thetas: &[Vec<f64>], dim: usize, n_weight: u32) -> Result<f64> {
        let mut worst = 0.0f64;
        for th in thetas {
            worst = worst.max(weighted_deviation(&self.compose(th, dim)?, n_weight));
        }
        self.composed_norm = Some(worst);
        Ok(worst)
    }

    pub fn max_symplectic_defect(&self, thetas: &[Vec<f64>], dim: usize) -> Result<f64> {
        let mut worst = 0.0f64;
        for th in thetas {
            worst = worst.max(symplectic_defect(&self.compose(th, dim)?));
        }
        Ok(worst)
    }
}
