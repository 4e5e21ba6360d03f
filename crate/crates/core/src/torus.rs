//! Index bookkeeping and FFT plumbing for functions on the n-torus.
//!
//! A family `f(θ) = Σ_k f̂(k) e^{i⟨k,θ⟩}` is stored by its coefficients on the
//! cube `|k|∞ ≤ K` ([`ModeBox`]). Every stored coefficient carries `E` scalar
//! entries (matrix families are flattened row-major), laid out `[mode][entry]`.
//! Grid samples use the same `[point][entry]` layout on the uniform grid
//! `θ_g = 2π g / G` ([`Torus`]).

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeBox {
    pub n: usize,
    pub k_max: usize,
}

impl ModeBox {
    pub fn new(n: usize, k_max: usize) -> Self {
        assert!(n >= 1, "torus dimension must be positive");
        ModeBox { n, k_max }
    }

    pub fn side(&self) -> usize {
        2 * self.k_max + 1
    }

    pub fn len(&self) -> usize {
        self.side().pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn index(&self, k: &[i32]) -> Option<usize> {
        debug_assert_eq!(k.len(), self.n);
        let kk = self.k_max as i32;
        let mut idx = 0usize;
        for &kd in k {
            if kd.abs() > kk {
                return None;
            }
            idx = idx * self.side() + (kd + kk) as usize;
        }
        Some(idx)
    }

    pub fn mode(&self, mut idx: usize) -> Vec<i32> {
        let side = self.side();
        let mut k = vec![0i32; self.n];
        for d in (0..self.n).rev() {
            k[d] = (idx % side) as i32 - self.k_max as i32;
            idx /= side;
        }
        k
    }

    /// Index of `-k`.
    pub fn negated(&self, idx: usize) -> usize {
        self.len() - 1 - idx
    }

    pub fn zero_index(&self) -> usize {
        self.len() / 2
    }

    pub fn modes(&self) -> impl Iterator<Item = Vec<i32>> + '_ {
        (0..self.len()).map(move |i| self.mode(i))
    }
}

pub fn l1(k: &[i32]) -> usize {
    k.iter().map(|v| v.unsigned_abs() as usize).sum()
}

pub fn l2(k: &[i32]) -> f64 {
    k.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

pub fn dot(k: &[i32], w: &[f64]) -> f64 {
    k.iter().zip(w).map(|(&a, &b)| a as f64 * b).sum()
}

/// Uniform grid on the torus together with the FFT plans that connect it to a
/// [`ModeBox`].
#[derive(Clone)]
pub struct Torus {
    pub modes: ModeBox,
    pub grid: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Torus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Torus").field("modes", &self.modes).field("grid", &self.grid).finish()
    }
}

impl Torus {
    pub fn new(modes: ModeBox, grid: usize) -> Result<Self> {
        if grid < modes.side() {
            return Err(Error::InvalidParameter(format!(
                "grid of {grid} points per axis cannot resolve |k| <= {}",
                modes.k_max
            )));
        }
        let mut planner = FftPlanner::new();
        Ok(Torus { forward: planner.plan_fft_forward(grid), inverse: planner.plan_fft_inverse(grid), modes, grid })
    }

    pub fn n(&self) -> usize {
        self.modes.n
    }

    pub fn points(&self) -> usize {
        self.grid.pow(self.n() as u32)
    }

    pub fn point(&self, mut idx: usize) -> Vec<f64> {
        let mut theta = vec![0.0; self.n()];
        for d in (0..self.n()).rev() {
            theta[d] = 2.0 * PI * (idx % self.grid) as f64 / self.grid as f64;
            idx /= self.grid;
        }
        theta
    }

    fn grid_slot(&self, k: &[i32]) -> usize {
        let g = self.grid as i32;
        k.iter().fold(0usize, |acc, &kd| acc * self.grid + kd.rem_euclid(g) as usize)
    }

    fn grid_frequency(&self, mut slot: usize) -> Vec<i32> {
        let g = self.grid;
        let mut k = vec![0i32; self.n()];
        for d in (0..self.n()).rev() {
            let s = (slot % g) as i32;
            k[d] = if s as usize > g / 2 { s - g as i32 } else { s };
            slot /= g;
        }
        k
    }

    fn transform(&self, data: &mut [Complex64], entries: usize, inverse: bool) {
        let g = self.grid;
        let n = self.n();
        let plan = if inverse { &self.inverse } else { &self.forward };
        let mut scratch = vec![Complex64::new(0.0, 0.0); g * entries];
        let total = self.points();
        for axis in 0..n {
            let stride = g.pow((n - 1 - axis) as u32);
            for base in 0..total {
                if !(base / stride).is_multiple_of(g) {
                    continue;
                }
                for s in 0..g {
                    let p = base + s * stride;
                    let row = &data[p * entries..(p + 1) * entries];
                    for (e, v) in row.iter().enumerate() {
                        scratch[e * g + s] = *v;
                    }
                }
                plan.process(&mut scratch);
                for s in 0..g {
                    let p = base + s * stride;
                    let row = &mut data[p * entries..(p + 1) * entries];
                    for (e, v) in row.iter_mut().enumerate() {
                        *v = scratch[e * g + s];
                    }
                }
            }
        }
    }

    /// Samples `Σ_k f̂(k) e^{i⟨k,θ⟩}` on the grid.
    pub fn synthesize(&self, coeffs: &[Complex64], entries: usize) -> Vec<Complex64> {
        assert_eq!(coeffs.len(), self.modes.len() * entries);
        let mut data = vec![Complex64::new(0.0, 0.0); self.points() * entries];
        for m in 0..self.modes.len() {
            let slot = self.grid_slot(&self.modes.mode(m));
            data[slot * entries..(slot + 1) * entries].copy_from_slice(&coeffs[m * entries..(m + 1) * entries]);
        }
        self.transform(&mut data, entries, true);
        data
    }

    /// Projects grid samples onto the mode box. Also returns the squared
    /// ℓ² mass of the resolved frequencies that fall outside the box.
    pub fn analyze(&self, values: &[Complex64], entries: usize) -> (Vec<Complex64>, f64) {
        assert_eq!(values.len(), self.points() * entries);
        let mut data = values.to_vec();
        self.transform(&mut data, entries, false);
        let scale = 1.0 / self.points() as f64;
        let mut out = vec![Complex64::new(0.0, 0.0); self.modes.len() * entries];
        let mut dropped = 0.0;
        for slot in 0..self.points() {
            let k = self.grid_frequency(slot);
            let row = &data[slot * entries..(slot + 1) * entries];
            match self.modes.index(&k) {
                Some(m) => {
                    for (o, v) in out[m * entries..(m + 1) * entries].iter_mut().zip(row) {
                        *o = v * scale;
                    }
                }
                None => dropped += row.iter().map(|v| (v * scale).norm_sqr()).sum::<f64>(),
            }
        }
        (out, dropped)
    }
}

/// Evaluates a family on the tensor grid with `g` points per axis by direct
/// axis-by-axis summation. Works for any `g ≥ 1`; output is `[point][entry]`
/// with the same point ordering as [`Torus::point`].
pub fn dft_grid(modes: &ModeBox, coeffs: &[Complex64], entries: usize, g: usize) -> Vec<Complex64> {
    assert_eq!(coeffs.len(), modes.len() * entries);
    let side = modes.side();
    let kk = modes.k_max as i32;
    let table: Vec<Complex64> = (0..g)
        .flat_map(|t| {
            let th = 2.0 * PI * t as f64 / g as f64;
            (-kk..=kk).map(move |k| Complex64::from_polar(1.0, k as f64 * th))
        })
        .collect();
    let mut dims = vec![side; modes.n];
    let mut data = coeffs.to_vec();
    for d in 0..modes.n {
        let outer: usize = dims[..d].iter().product();
        let inner: usize = dims[d + 1..].iter().product::<usize>() * entries;
        let mut next = vec![Complex64::new(0.0, 0.0); outer * g * inner];
        for o in 0..outer {
            for t in 0..g {
                let dst = &mut next[(o * g + t) * inner..(o * g + t + 1) * inner];
                for s in 0..side {
                    let w = table[t * side + s];
                    let src = &data[(o * side + s) * inner..(o * side + s + 1) * inner];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += w * b;
                    }
                }
            }
        }
        dims[d] = g;
        data = next;
    }
    data
}

/// `e^{i⟨k,θ⟩}` for every mode of the box, built from per-axis powers.
pub fn phases(modes: &ModeBox, theta: &[f64]) -> Vec<Complex64> {
    let kk = modes.k_max as i32;
    let axis: Vec<Vec<Complex64>> =
        theta.iter().map(|&t| (-kk..=kk).map(|k| Complex64::from_polar(1.0, k as f64 * t)).collect()).collect();
    (0..modes.len())
        .map(|m| {
            let k = modes.mode(m);
            k.iter().enumerate().fold(Complex64::new(1.0, 0.0), |acc, (d, &kd)| acc * axis[d][(kd + kk) as usize])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip_and_negation() {
        let mb = ModeBox::new(2, 3);
        for m in 0..mb.len() {
            let k = mb.mode(m);
            assert_eq!(mb.index(&k), Some(m));
            let neg: Vec<i32> = k.iter().map(|v| -v).collect();
            assert_eq!(mb.index(&neg), Some(mb.negated(m)));
        }
        assert_eq!(mb.mode(mb.zero_index()), vec![0, 0]);
        assert_eq!(mb.index(&[4, 0]), None);
    }

    #[test]
    fn synthesize_then_analyze_is_identity() {
        let torus = Torus::new(ModeBox::new(2, 2), 8).unwrap();
        let coeffs: Vec<Complex64> =
            (0..torus.modes.len() * 2).map(|i| Complex64::new((i as f64).sin(), (i as f64 * 0.7).cos())).collect();
        let grid = torus.synthesize(&coeffs, 2);
        let (back, dropped) = torus.analyze(&grid, 2);
        assert!(dropped < 1e-24);
        for (a, b) in coeffs.iter().zip(&back) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn synthesize_matches_direct_sum() {
        let torus = Torus::new(ModeBox::new(2, 2), 7).unwrap();
        let coeffs: Vec<Complex64> =
            (0..torus.modes.len()).map(|i| Complex64::new(1.0 / (1.0 + i as f64), 0.3 * i as f64)).collect();
        let grid = torus.synthesize(&coeffs, 1);
        for p in [0usize, 5, 17, 48] {
            let theta = torus.point(p);
            let ph = phases(&torus.modes, &theta);
            let direct: Complex64 = coeffs.iter().zip(&ph).map(|(c, e)| c * e).sum();
            assert!((direct - grid[p]).norm() < 1e-12);
        }
    }

    #[test]
    fn dft_grid_agrees_with_fft_and_handles_coarse_grids() {
        let torus = Torus::new(ModeBox::new(2, 2), 6).unwrap();
        let coeffs: Vec<Complex64> = (0..torus.modes.len() * 3)
            .map(|i| Complex64::new((0.3 * i as f64).cos(), (0.1 * i as f64).sin()))
            .collect();
        let fft = torus.synthesize(&coeffs, 3);
        let dft = dft_grid(&torus.modes, &coeffs, 3, 6);
        for (a, b) in fft.iter().zip(&dft) {
            assert!((a - b).norm() < 1e-12);
        }
        let coarse = dft_grid(&torus.modes, &coeffs, 3, 3);
        let th = [2.0 * PI / 3.0, 4.0 * PI / 3.0];
        let ph = phases(&torus.modes, &th);
        let direct: Complex64 = (0..torus.modes.len()).map(|m| coeffs[m * 3 + 1] * ph[m]).sum();
        assert!((coarse[(3 + 2) * 3 + 1] - direct).norm() < 1e-12);
    }
}
