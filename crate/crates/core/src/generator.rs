//! Linear Hamiltonian vector fields in real coordinates `x = (q, p)`.
//!
//! A form `H = zᵀPz + z̄ᵀQz + z̄ᵀRz̄` with `z = (q - ip)/√2` and dynamics
//! `ż = i∂H/∂z̄` generates `ẋ = L x` with
//!
//! ```text
//! L = ½ [ i(Q-Qᵀ) + 2i(R-P)    (Q+Qᵀ) - 2(R+P)  ]
//!       [ -(Q+Qᵀ) - 2(R+P)     i(Q-Qᵀ) + 2i(P-R) ]
//! ```
//!
//! Families of such matrices are stored column-major per mode / per grid
//! point so that grid slices are directly usable as `nalgebra` views.

use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use num_complex::Complex64;

use crate::galerkin::{Block, QuadraticForm, WeightedSpace};
use crate::torus::{ModeBox, Torus};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

pub fn generator_matrix(p: &DMatrix<Complex64>, q: &DMatrix<Complex64>, r: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let j = q.nrows();
    let i = Complex64::i();
    let qt = q.transpose();
    let mut l = DMatrix::from_element(2 * j, 2 * j, ZERO);
    for a in 0..j {
        for b in 0..j {
            let qa = q[(a, b)] - qt[(a, b)];
            let qs = q[(a, b)] + qt[(a, b)];
            let rp = r[(a, b)] + p[(a, b)];
            let rm = r[(a, b)] - p[(a, b)];
            l[(a, b)] = 0.5 * (i * qa + 2.0 * i * rm);
            l[(a, j + b)] = 0.5 * (qs - 2.0 * rp);
            l[(j + a, b)] = 0.5 * (-qs - 2.0 * rp);
            l[(j + a, j + b)] = 0.5 * (i * qa - 2.0 * i * rm);
        }
    }
    l
}

/// Inverse of [`generator_matrix`]; `P` and `R` are symmetrised.
pub fn form_blocks(l: &DMatrix<Complex64>) -> [DMatrix<Complex64>; 3] {
    let j = l.nrows() / 2;
    let i = Complex64::i();
    let a = l.view((0, 0), (j, j));
    let b = l.view((0, j), (j, j));
    let c = l.view((j, 0), (j, j));
    let d = l.view((j, j), (j, j));
    let q = DMatrix::from_fn(j, j, |x, y| 0.5 * ((b[(x, y)] - c[(x, y)]) - i * (a[(x, y)] + d[(x, y)])));
    let r0 = DMatrix::from_fn(j, j, |x, y| -0.25 * ((b[(x, y)] + c[(x, y)]) + i * (a[(x, y)] - d[(x, y)])));
    let p0 = DMatrix::from_fn(j, j, |x, y| -0.25 * ((b[(x, y)] + c[(x, y)]) - i * (a[(x, y)] - d[(x, y)])));
    let p = (&p0 + p0.transpose()) * Complex64::new(0.5, 0.0);
    let r = (&r0 + r0.transpose()) * Complex64::new(0.5, 0.0);
    [p, q, r]
}

/// `[[0, Λ], [-Λ, 0]]`.
pub fn normal_form_generator(lambda: &[f64]) -> DMatrix<f64> {
    let j = lambda.len();
    let mut l = DMatrix::zeros(2 * j, 2 * j);
    for (a, &v) in lambda.iter().enumerate() {
        l[(a, j + a)] = v;
        l[(j + a, a)] = -v;
    }
    l
}

/// The standard matrix `𝕁 = [[0, I], [-I, 0]]`.
pub fn symplectic_unit(j: usize) -> DMatrix<f64> {
    normal_form_generator(&vec![1.0; j])
}

/// Generator coefficients of a form, `[mode][column-major 2J×2J]`.
pub fn form_to_generator_coeffs(qf: &QuadraticForm) -> Vec<Complex64> {
    let jm = qf.j_max;
    let e = qf.entries();
    let dim = 2 * jm;
    let mut out = vec![ZERO; qf.modes.len() * dim * dim];
    for m in 0..qf.modes.len() {
        let blocks = [Block::Zz, Block::ZzBar, Block::ZbZb]
            .map(|b| DMatrix::from_row_slice(jm, jm, &qf.block(b)[m * e..(m + 1) * e]));
        if blocks.iter().all(|b| b.iter().all(|v| *v == ZERO)) {
            continue;
        }
        let l = generator_matrix(&blocks[0], &blocks[1], &blocks[2]);
        out[m * dim * dim..(m + 1) * dim * dim].copy_from_slice(l.as_slice());
    }
    out
}

pub fn generator_coeffs_to_form(coeffs: &[Complex64], modes: &ModeBox, jm: usize) -> QuadraticForm {
    let dim = 2 * jm;
    let mut qf = QuadraticForm::zeros(modes.clone(), jm);
    let e = jm * jm;
    for m in 0..modes.len() {
        let slice = &coeffs[m * dim * dim..(m + 1) * dim * dim];
        if slice.iter().all(|v| *v == ZERO) {
            continue;
        }
        let l = DMatrix::from_column_slice(dim, dim, slice);
        let blocks = form_blocks(&l);
        for (b, mat) in [Block::Zz, Block::ZzBar, Block::ZbZb].into_iter().zip(blocks.iter()) {
            let dst = &mut qf.block_mut(b)[m * e..(m + 1) * e];
            for x in 0..jm {
                for y in 0..jm {
                    dst[x * jm + y] = mat[(x, y)];
                }
            }
        }
    }
    qf
}

/// Real `dim × dim` matrices sampled on a torus grid, `[point][column-major]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFamily {
    pub dim: usize,
    pub points: usize,
    pub data: Vec<f64>,
}

impl GridFamily {
    pub fn zeros(dim: usize, points: usize) -> Self {
        GridFamily { dim, points, data: vec![0.0; dim * dim * points] }
    }

    pub fn constant(m: &DMatrix<f64>, points: usize) -> Self {
        let mut data = Vec::with_capacity(m.len() * points);
        for _ in 0..points {
            data.extend_from_slice(m.as_slice());
        }
        GridFamily { dim: m.nrows(), points, data }
    }

    fn stride(&self) -> usize {
        self.dim * self.dim
    }

    pub fn view(&self, p: usize) -> DMatrixView<'_, f64> {
        let s = self.stride();
        DMatrixView::from_slice(&self.data[p * s..(p + 1) * s], self.dim, self.dim)
    }

    pub fn view_mut(&mut self, p: usize) -> DMatrixViewMut<'_, f64> {
        let s = self.stride();
        let d = self.dim;
        DMatrixViewMut::from_slice(&mut self.data[p * s..(p + 1) * s], d, d)
    }

    pub fn matrix(&self, p: usize) -> DMatrix<f64> {
        self.view(p).into_owned()
    }

    pub fn axpy(&mut self, a: f64, other: &GridFamily) {
        assert_eq!(self.data.len(), other.data.len());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scaled(&self, a: f64) -> GridFamily {
        GridFamily { data: self.data.iter().map(|v| a * v).collect(), ..self.clone() }
    }

    /// Pointwise `[X, Y] = XY - YX`.
    pub fn commutator(x: &GridFamily, y: &GridFamily) -> GridFamily {
        assert_eq!((x.dim, x.points), (y.dim, y.points));
        let mut out = GridFamily::zeros(x.dim, x.points);
        for p in 0..x.points {
            let (a, b) = (x.view(p), y.view(p));
            let mut c = out.view_mut(p);
            c.gemm(1.0, &a, &b, 0.0);
            c.gemm(-1.0, &b, &a, 1.0);
        }
        out
    }

    /// `max_θ ½‖W ∘ s‖_F` where `s_ab` sums the four real block entries at
    /// `(a, b)` and `W` carries the `D_N J · J D_N^{-1}` weights: an upper
    /// bound for the weighted norm of each represented form block.
    pub fn weighted_bound(&self, ws: &WeightedSpace) -> f64 {
        let j = self.dim / 2;
        let w: Vec<f64> = (0..j * j).map(|x| ws.entry_weight(x % j + 1, x / j + 1)).collect();
        let mut worst = 0.0f64;
        for p in 0..self.points {
            let v = self.view(p);
            let mut acc = 0.0;
            for c in 0..j {
                for r in 0..j {
                    let s = v[(r, c)].abs() + v[(r, j + c)].abs() + v[(j + r, c)].abs() + v[(j + r, j + c)].abs();
                    let t = w[c * j + r] * s;
                    acc += t * t;
                }
            }
            worst = worst.max(0.5 * acc.sqrt());
        }
        worst
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Samples a real generator family on the torus grid; returns the largest
/// discarded imaginary part alongside.
pub fn synthesize_real(torus: &Torus, coeffs: &[Complex64], dim: usize) -> (GridFamily, f64) {
    let vals = torus.synthesize(coeffs, dim * dim);
    let imag = vals.iter().fold(0.0f64, |m, v| m.max(v.im.abs()));
    (GridFamily { dim, points: torus.points(), data: vals.iter().map(|v| v.re).collect() }, imag)
}

/// Projects a grid family onto the mode box; returns the ℓ² mass of resolved
/// modes outside the box.
pub fn analyze_real(torus: &Torus, g: &GridFamily) -> (Vec<Complex64>, f64) {
    let vals: Vec<Complex64> = g.data.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    torus.analyze(&vals, g.dim * g.dim)
}

/// `ω·∂_θ` applied to generator coefficients.
pub fn directional_derivative(coeffs: &[Complex64], modes: &ModeBox, omega: &[f64], stride: usize) -> Vec<Complex64> {
    let mut out = coeffs.to_vec();
    for m in 0..modes.len() {
        let kw = crate::torus::dot(&modes.mode(m), omega);
        out[m * stride..(m + 1) * stride].iter_mut().for_each(|v| *v *= Complex64::new(0.0, kw));
    }
    out
}

/// Value of a generator family at one θ.
pub fn eval_coeffs(coeffs: &[Complex64], phases: &[Complex64], dim: usize) -> DMatrix<Complex64> {
    let s = dim * dim;
    let mut acc = vec![ZERO; s];
    for (m, w) in phases.iter().enumerate() {
        let src = &coeffs[m * s..(m + 1) * s];
        if *w == ZERO {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(src) {
            *a += w * v;
        }
    }
    DMatrix::from_column_slice(dim, dim, &acc)
}

pub fn real_part(m: &DMatrix<Complex64>) -> (DMatrix<f64>, f64) {
    let imag = m.iter().fold(0.0f64, |a, v| a.max(v.im.abs()));
    (m.map(|v| v.re), imag)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_c(rng: &mut ChaCha8Rng, j: usize) -> DMatrix<Complex64> {
        DMatrix::from_fn(j, j, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
    }

    fn sym(m: DMatrix<Complex64>) -> DMatrix<Complex64> {
        (&m + m.transpose()) * Complex64::new(0.5, 0.0)
    }

    /// `T = (1/√2)[[I, -iI], [I, iI]]`, `u = (z, z̄) = T x`.
    fn change_of_basis(j: usize) -> DMatrix<Complex64> {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut t = DMatrix::from_element(2 * j, 2 * j, ZERO);
        for a in 0..j {
            t[(a, a)] = Complex64::new(s, 0.0);
            t[(a, j + a)] = Complex64::new(0.0, -s);
            t[(j + a, a)] = Complex64::new(s, 0.0);
            t[(j + a, j + a)] = Complex64::new(0.0, s);
        }
        t
    }

    #[test]
    fn real_generator_is_the_complex_one_in_other_coordinates() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let j = 4;
        let p = sym(rand_c(&mut rng, j));
        let q = rand_c(&mut rng, j);
        let r = sym(rand_c(&mut rng, j));
        let i = Complex64::i();
        let mut lc = DMatrix::from_element(2 * j, 2 * j, ZERO);
        lc.view_mut((0, 0), (j, j)).copy_from(&(&q * i));
        lc.view_mut((0, j), (j, j)).copy_from(&(&r * (2.0 * i)));
        lc.view_mut((j, 0), (j, j)).copy_from(&(&p * (-2.0 * i)));
        lc.view_mut((j, j), (j, j)).copy_from(&(q.transpose() * (-i)));
        let t = change_of_basis(j);
        let want = t.clone().try_inverse().unwrap() * lc * t;
        let got = generator_matrix(&p, &q, &r);
        assert!((got - &want).camax() < 1e-14);
        let [p2, q2, r2] = form_blocks(&want);
        assert!((p2 - p).camax() < 1e-14 && (q2 - q).camax() < 1e-14 && (r2 - r).camax() < 1e-14);
    }

    #[test]
    fn generator_matches_finite_difference_of_the_hamiltonian() {
        // ẋ = 𝕁∇H in (q, p) ordering with q̇ = ∂H/∂p, ṗ = -∂H/∂q
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let j = 3;
        let p = sym(rand_c(&mut rng, j));
        let r = p.map(|v| v.conj());
        let q0 = rand_c(&mut rng, j);
        let q = (&q0 + q0.adjoint()) * Complex64::new(0.5, 0.0);
        let (l, imag) = real_part(&generator_matrix(&p, &q, &r));
        assert!(imag < 1e-14);
        let ham = |x: &[f64]| -> f64 {
            let z: Vec<Complex64> = (0..j).map(|a| Complex64::new(x[a], -x[j + a]) / 2f64.sqrt()).collect();
            let zb: Vec<Complex64> = z.iter().map(|v| v.conj()).collect();
            let mut h = ZERO;
            for a in 0..j {
                for b in 0..j {
                    h += z[a] * p[(a, b)] * z[b] + zb[a] * q[(a, b)] * z[b] + zb[a] * r[(a, b)] * zb[b];
                }
            }
            assert!(h.im.abs() < 1e-12);
            h.re
        };
        let x: Vec<f64> = (0..2 * j).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let lx = &l * nalgebra::DVector::from_vec(x.clone());
        let hstep = 1e-6;
        for a in 0..2 * j {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[a] += hstep;
            xm[a] -= hstep;
            let g = (ham(&xp) - ham(&xm)) / (2.0 * hstep);
            // component a of ∇H feeds q̇ (if a is a p-index) or -ṗ
            let (idx, sign) = if a < j { (j + a, -1.0) } else { (a - j, 1.0) };
            assert!((lx[idx] - sign * g).abs() < 1e-6, "a={a}");
        }
    }

    #[test]
    fn harmonic_oscillator_convention() {
        let l = normal_form_generator(&[2.0]);
        let lam = DMatrix::from_element(1, 1, Complex64::new(2.0, 0.0));
        let z = DMatrix::from_element(1, 1, ZERO);
        let (g, _) = real_part(&generator_matrix(&z, &lam, &z));
        assert_eq!(g, l);
        // q̇ = λp
        assert_eq!(l[(0, 1)], 2.0);
    }

    #[test]
    fn hamiltonian_generators_are_infinitesimally_symplectic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let j = 3;
        let p = sym(rand_c(&mut rng, j));
        let q0 = rand_c(&mut rng, j);
        let q = (&q0 + q0.adjoint()) * Complex64::new(0.5, 0.0);
        let (l, _) = real_part(&generator_matrix(&p, &q, &p.map(|v| v.conj())));
        let jj = symplectic_unit(j);
        assert!((l.transpose() * &jj + &jj * &l).amax() < 1e-14);
    }

    #[test]
    fn coefficient_roundtrip_through_the_grid() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let modes = ModeBox::new(1, 2);
        let mut qf = QuadraticForm::zeros(modes.clone(), 2);
        for m in 0..modes.len() {
            let mn = modes.negated(m);
            if mn < m {
                continue;
            }
            for x in 0..2 {
                for y in x..2 {
                    let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let v = if m == mn { Complex64::new(v.re, 0.0) } else { v };
                    for (a, b) in [(x, y), (y, x)] {
                        *qf.coeff_mut(Block::Zz, m, a, b) = v;
                        *qf.coeff_mut(Block::Zz, mn, a, b) = v.conj();
                        *qf.coeff_mut(Block::ZbZb, mn, a, b) = v.conj();
                        *qf.coeff_mut(Block::ZbZb, m, a, b) = v;
                    }
                }
            }
        }
        // zz̄ Hermitian pointwise: Q̂(-k) = Q̂(k)ᴴ
        for m in 0..modes.len() {
            let mn = modes.negated(m);
            for x in 0..2 {
                for y in 0..2 {
                    if (m, x) > (mn, y) {
                        continue;
                    }
                    let v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    let v = if m == mn && x == y { Complex64::new(v.re, 0.0) } else { v };
                    *qf.coeff_mut(Block::ZzBar, m, x, y) = v;
                    *qf.coeff_mut(Block::ZzBar, mn, y, x) = v.conj();
                }
            }
        }
        // the z̄z̄ block must be conj of zz at -k: fix it up explicitly
        for m in 0..modes.len() {
            let mn = modes.negated(m);
            for x in 0..2 {
                for y in 0..2 {
                    *qf.coeff_mut(Block::ZbZb, m, x, y) = qf.coeff(Block::Zz, mn, x, y).conj();
                }
            }
        }
        assert!(qf.hamiltonian_reality_defect() < 1e-15);
        let torus = Torus::new(modes.clone(), 8).unwrap();
        let c = form_to_generator_coeffs(&qf);
        let (grid, imag) = synthesize_real(&torus, &c, 4);
        assert!(imag < 1e-14);
        let (back, dropped) = analyze_real(&torus, &grid);
        assert!(dropped < 1e-28);
        let qf2 = generator_coeffs_to_form(&back, &modes, 2);
        for b in Block::ALL {
            for (u, v) in qf.block(b).iter().zip(qf2.block(b)) {
                assert!((u - v).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn grid_commutator_matches_dense_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut a = GridFamily::zeros(4, 3);
        let mut b = GridFamily::zeros(4, 3);
        a.data.iter_mut().chain(b.data.iter_mut()).for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let c = GridFamily::commutator(&a, &b);
        for p in 0..3 {
            let want = a.matrix(p) * b.matrix(p) - b.matrix(p) * a.matrix(p);
            assert!((c.matrix(p) - want).amax() < 1e-14);
        }
    }
}
