//! Sine-basis Galerkin data: the coupling tensor, the weighted space `h_N`
//! and the θ-dependent quadratic forms `(R^{zz}, R^{zz̄}, R^{z̄z̄})`.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::potential::PotentialFourier;
use crate::torus::{self, ModeBox};

const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };

/// `c_jlk = ∫_{-π}^{π} cos(jx) sin(lx) sin(kx) dx`, stored sparsely.
#[derive(Clone, Debug, PartialEq)]
pub struct CouplingTensor {
    pub bound: usize,
    pub entries: BTreeMap<(usize, usize, usize), f64>,
}

pub fn coupling_value(j: usize, l: usize, k: usize) -> f64 {
    let (j, l, k) = (j as i64, l as i64, k as i64);
    if k == l + j || k == l - j {
        FRAC_PI_2
    } else if k == j - l || k == -l - j {
        -FRAC_PI_2
    } else {
        0.0
    }
}

pub fn coupling_tensor(j_max: usize) -> CouplingTensor {
    let mut entries = BTreeMap::new();
    for j in 1..=j_max {
        for l in 1..=j_max {
            for k in 1..=j_max {
                let c = coupling_value(j, l, k);
                if c != 0.0 {
                    entries.insert((j, l, k), c);
                }
            }
        }
    }
    CouplingTensor { bound: j_max, entries }
}

impl CouplingTensor {
    pub fn get(&self, j: usize, l: usize, k: usize) -> f64 {
        self.entries.get(&(j, l, k)).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightedSpace {
    pub n_weight: u32,
    pub j_max: usize,
}

impl WeightedSpace {
    pub fn new(n_weight: u32, j_max: usize) -> Self {
        WeightedSpace { n_weight, j_max }
    }

    /// `J_jj = √j`.
    pub fn j_weight(&self, j: usize) -> f64 {
        (j as f64).sqrt()
    }

    /// Entry factor of `D_N J B J D_N^{-1}` at `(i, j)`, 1-based.
    pub fn entry_weight(&self, i: usize, j: usize) -> f64 {
        ((i * j) as f64).sqrt() * (i as f64 / j as f64).powi(self.n_weight as i32)
    }

    /// `‖z‖_N = (Σ k^{2N} |z_k|²)^{1/2}`.
    pub fn norm(&self, z: &[Complex64]) -> f64 {
        z.iter()
            .enumerate()
            .map(|(k, v)| ((k + 1) as f64).powi(2 * self.n_weight as i32) * v.norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// h_N norm of a real coordinate vector `(q, p)` through `z = (q - ip)/√2`.
    pub fn norm_qp(&self, x: &[f64]) -> f64 {
        let j = x.len() / 2;
        (0..j)
            .map(|k| ((k + 1) as f64).powi(2 * self.n_weight as i32) * 0.5 * (x[k] * x[k] + x[j + k] * x[j + k]))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Zz,
    ZzBar,
    ZbZb,
}

impl Block {
    pub const ALL: [Block; 3] = [Block::Zz, Block::ZzBar, Block::ZbZb];

    pub fn name(self) -> &'static str {
        match self {
            Block::Zz => "zz",
            Block::ZzBar => "zzbar",
            Block::ZbZb => "zbzb",
        }
    }
}

/// `⟨R^{zz}z,z⟩ + ⟨R^{zz̄}z,z̄⟩ + ⟨R^{z̄z̄}z̄,z̄⟩` with θ-Fourier coefficients of each
/// block stored `[mode][i][j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticForm {
    pub j_max: usize,
    pub modes: ModeBox,
    pub zz: Vec<Complex64>,
    pub zzbar: Vec<Complex64>,
    pub zbzb: Vec<Complex64>,
    pub strip: f64,
}

impl QuadraticForm {
    pub fn zeros(modes: ModeBox, j_max: usize) -> Self {
        let len = modes.len() * j_max * j_max;
        QuadraticForm { j_max, modes, zz: vec![ZERO; len], zzbar: vec![ZERO; len], zbzb: vec![ZERO; len], strip: 0.0 }
    }

    pub fn entries(&self) -> usize {
        self.j_max * self.j_max
    }

    pub fn block(&self, b: Block) -> &[Complex64] {
        match b {
            Block::Zz => &self.zz,
            Block::ZzBar => &self.zzbar,
            Block::ZbZb => &self.zbzb,
        }
    }

    pub fn block_mut(&mut self, b: Block) -> &mut Vec<Complex64> {
        match b {
            Block::Zz => &mut self.zz,
            Block::ZzBar => &mut self.zzbar,
            Block::ZbZb => &mut self.zbzb,
        }
    }

    pub fn coeff(&self, b: Block, mode: usize, i: usize, j: usize) -> Complex64 {
        self.block(b)[(mode * self.j_max + i) * self.j_max + j]
    }

    pub fn coeff_mut(&mut self, b: Block, mode: usize, i: usize, j: usize) -> &mut Complex64 {
        let jm = self.j_max;
        &mut self.block_mut(b)[(mode * jm + i) * jm + j]
    }

    fn check_compatible(&self, other: &QuadraticForm) {
        assert_eq!(self.j_max, other.j_max, "forms of different size");
        assert_eq!(self.modes, other.modes, "forms on different mode boxes");
    }

    pub fn axpy(&mut self, a: f64, other: &QuadraticForm) {
        self.check_compatible(other);
        for b in Block::ALL {
            for (x, y) in self.block_mut(b).iter_mut().zip(other.block(b)) {
                *x += a * y;
            }
        }
    }

    pub fn scaled(&self, a: f64) -> QuadraticForm {
        let mut out = self.clone();
        for b in Block::ALL {
            out.block_mut(b).iter_mut().for_each(|x| *x *= a);
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        Block::ALL.iter().flat_map(|&b| self.block(b).iter()).fold(0.0, |m, v| m.max(v.norm()))
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs() == 0.0
    }

    /// Block matrices at a point θ (complex θ allowed through `phases`).
    pub fn eval_with_phases(&self, phases: &[Complex64]) -> [DMatrix<Complex64>; 3] {
        let jm = self.j_max;
        let e = self.entries();
        Block::ALL.map(|b| {
            let data = self.block(b);
            let mut acc = vec![ZERO; e];
            for (m, w) in phases.iter().enumerate() {
                for (a, v) in acc.iter_mut().zip(&data[m * e..(m + 1) * e]) {
                    *a += w * v;
                }
            }
            DMatrix::from_row_slice(jm, jm, &acc)
        })
    }

    pub fn eval(&self, theta: &[f64]) -> [DMatrix<Complex64>; 3] {
        self.eval_with_phases(&torus::phases(&self.modes, theta))
    }

    /// Largest `|B̂(k) - B̂(k)ᵀ|` over the listed blocks.
    pub fn symmetry_defect(&self, blocks: &[Block]) -> f64 {
        let jm = self.j_max;
        let mut worst = 0.0f64;
        for &b in blocks {
            for m in 0..self.modes.len() {
                for i in 0..jm {
                    for j in (i + 1)..jm {
                        worst = worst.max((self.coeff(b, m, i, j) - self.coeff(b, m, j, i)).norm());
                    }
                }
            }
        }
        worst
    }

    /// Largest `|B̂(-k) - conj B̂(k)|` over all blocks (each block a real
    /// θ-function).
    pub fn block_reality_defect(&self) -> f64 {
        let e = self.entries();
        let mut worst = 0.0f64;
        for b in Block::ALL {
            let d = self.block(b);
            for m in 0..self.modes.len() {
                let mn = self.modes.negated(m);
                for x in 0..e {
                    worst = worst.max((d[mn * e + x] - d[m * e + x].conj()).norm());
                }
            }
        }
        worst
    }

    /// Defect of the reality of the Hamiltonian itself:
    /// `R^{z̄z̄}(θ) = conj R^{zz}(θ)` and `R^{zz̄}(θ)` Hermitian.
    pub fn hamiltonian_reality_defect(&self) -> f64 {
        let jm = self.j_max;
        let mut worst = 0.0f64;
        for m in 0..self.modes.len() {
            let mn = self.modes.negated(m);
            for i in 0..jm {
                for j in 0..jm {
                    let a = self.coeff(Block::ZbZb, m, i, j) - self.coeff(Block::Zz, mn, i, j).conj();
                    let h = self.coeff(Block::ZzBar, mn, j, i) - self.coeff(Block::ZzBar, m, i, j).conj();
                    worst = worst.max(a.norm()).max(h.norm());
                }
            }
        }
        worst
    }

    /// Keeps `|k|₁ ≤ k_cut` in `low`, the rest in `high`.
    pub fn split_l1(&self, k_cut: usize) -> (QuadraticForm, QuadraticForm) {
        let mut low = self.clone();
        let mut high = self.clone();
        let e = self.entries();
        for m in 0..self.modes.len() {
            let keep_low = torus::l1(&self.modes.mode(m)) <= k_cut;
            let zero_in = if keep_low { &mut high } else { &mut low };
            for b in Block::ALL {
                zero_in.block_mut(b)[m * e..(m + 1) * e].iter_mut().for_each(|x| *x = ZERO);
            }
        }
        (low, high)
    }
}

/// Initial forms: `R^{zz} = R^{z̄z̄} = ½S`, `R^{zz̄} = S` with
/// `S_kl(θ) = Σ_j c_jlk v_j(θ)/√(kl)`.
pub fn assemble_initial_forms(pf: &PotentialFourier, ct: &CouplingTensor, ws: &WeightedSpace) -> Result<QuadraticForm> {
    let jm = ws.j_max;
    if pf.j_max != jm || ct.bound < jm {
        return Err(Error::Dimension(format!(
            "potential has J = {}, coupling tensor bound {}, weighted space J = {jm}",
            pf.j_max, ct.bound
        )));
    }
    let mut qf = QuadraticForm::zeros(pf.modes.clone(), jm);
    for m in 0..pf.modes.len() {
        let v = &pf.v_hat[m * jm..(m + 1) * jm];
        for k in 1..=jm {
            for l in 1..=jm {
                let mut s = ZERO;
                for (j, vj) in v.iter().enumerate() {
                    let c = ct.get(j + 1, l, k);
                    if c != 0.0 {
                        s += c * vj;
                    }
                }
                let s = s / ((k * l) as f64).sqrt();
                *qf.coeff_mut(Block::Zz, m, k - 1, l - 1) = 0.5 * s;
                *qf.coeff_mut(Block::ZzBar, m, k - 1, l - 1) = s;
                *qf.coeff_mut(Block::ZbZb, m, k - 1, l - 1) = 0.5 * s;
            }
        }
    }
    Ok(qf)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub weighted_op_norm: f64,
    pub lipschitz_norm: Option<f64>,
}

/// Spectral norm of `D_N J B J D_N^{-1}`.
pub fn weighted_matrix_norm(ws: &WeightedSpace, b: &DMatrix<Complex64>) -> f64 {
    let n = b.nrows();
    let w = DMatrix::from_fn(n, n, |i, j| b[(i, j)] * ws.entry_weight(i + 1, j + 1));
    spectral_norm(&w)
}

pub fn spectral_norm(m: &DMatrix<Complex64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// `max_blocks sup_{θ ∈ grid} ‖D_N J B(θ) J D_N^{-1}‖`.
pub fn weighted_sup_norm(qf: &QuadraticForm, ws: &WeightedSpace, theta_grid: usize) -> f64 {
    assert!(theta_grid >= 1);
    let jm = qf.j_max;
    let e = qf.entries();
    let mut worst = 0.0f64;
    for b in Block::ALL {
        let data = qf.block(b);
        if data.iter().all(|v| *v == ZERO) {
            continue;
        }
        let vals = torus::dft_grid(&qf.modes, data, e, theta_grid);
        for p in 0..vals.len() / e {
            let mat = DMatrix::from_row_slice(jm, jm, &vals[p * e..(p + 1) * e]);
            worst = worst.max(weighted_matrix_norm(ws, &mat));
        }
    }
    worst
}

/// Probe forms at `τ ± dτ` for the Lipschitz entry.
pub struct TauProbe<'a> {
    pub minus: &'a QuadraticForm,
    pub plus: &'a QuadraticForm,
    pub d_tau: f64,
}

pub fn weighted_norm(
    qf: &QuadraticForm,
    ws: &WeightedSpace,
    theta_grid: usize,
    tau_probe: Option<TauProbe<'_>>,
) -> NormReport {
    let weighted_op_norm = weighted_sup_norm(qf, ws, theta_grid);
    let lipschitz_norm = tau_probe.map(|p| {
        let mut diff = p.plus.clone();
        diff.axpy(-1.0, p.minus);
        weighted_sup_norm(&diff, ws, theta_grid) / (2.0 * p.d_tau)
    });
    NormReport { weighted_op_norm, lipschitz_norm }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormManifest {
    pub format_version: u32,
    pub n: usize,
    pub k_theta: usize,
    pub j_max: usize,
    pub strip_width: f64,
    pub weight_n: Option<u32>,
    pub piece_index: Option<usize>,
    pub blocks: Vec<String>,
    pub layout: String,
    pub data_file: String,
}

impl QuadraticForm {
    /// Writes `<stem>.json` and `<stem>.bin`; the binary holds the three blocks
    /// in manifest order, each as little-endian `f64` pairs `(re, im)` in
    /// row-major `(k, i, j)` order.
    pub fn save(&self, stem: &Path, weight_n: Option<u32>, piece_index: Option<usize>) -> Result<()> {
        let bin: PathBuf = stem.with_extension("bin");
        let manifest = FormManifest {
            format_version: 1,
            n: self.modes.n,
            k_theta: self.modes.k_max,
            j_max: self.j_max,
            strip_width: self.strip,
            weight_n,
            piece_index,
            blocks: Block::ALL.iter().map(|b| b.name().to_string()).collect(),
            layout: "row-major (k, i, j); k in mixed radix over [-K, K]^n; interleaved re, im; f64 little-endian"
                .into(),
            data_file: bin.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
        };
        fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&manifest)?)?;
        let mut bytes = Vec::with_capacity(3 * self.zz.len() * 16);
        for b in Block::ALL {
            for v in self.block(b) {
                bytes.extend_from_slice(&v.re.to_le_bytes());
                bytes.extend_from_slice(&v.im.to_le_bytes());
            }
        }
        fs::File::create(&bin)?.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(stem: &Path) -> Result<(QuadraticForm, FormManifest)> {
        let manifest: FormManifest = serde_json::from_slice(&fs::read(stem.with_extension("json"))?)?;
        let mut bytes = Vec::new();
        fs::File::open(stem.with_extension("bin"))?.read_to_end(&mut bytes)?;
        let mut qf = QuadraticForm::zeros(ModeBox::new(manifest.n, manifest.k_theta), manifest.j_max);
        qf.strip = manifest.strip_width;
        let len = qf.zz.len();
        if bytes.len() != 3 * len * 16 {
            return Err(Error::Input(format!("form data has {} bytes, expected {}", bytes.len(), 3 * len * 16)));
        }
        let mut it = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        for b in Block::ALL {
            for v in qf.block_mut(b).iter_mut() {
                let re = it.next().unwrap_or_default();
                let im = it.next().unwrap_or_default();
                *v = Complex64::new(re, im);
            }
        }
        Ok((qf, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::PotentialFourier;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn quadrature(j: usize, l: usize, k: usize) -> f64 {
        let m = 256;
        (0..m)
            .map(|s| {
                let x = -PI + 2.0 * PI * s as f64 / m as f64;
                (j as f64 * x).cos() * (l as f64 * x).sin() * (k as f64 * x).sin()
            })
            .sum::<f64>()
            * 2.0
            * PI
            / m as f64
    }

    #[test]
    fn coupling_cases() {
        assert_eq!(coupling_value(1, 1, 2), FRAC_PI_2);
        assert_eq!(coupling_value(2, 1, 1), -FRAC_PI_2);
        assert_eq!(coupling_value(1, 3, 5), 0.0);
    }

    #[test]
    fn coupling_tensor_matches_quadrature() {
        let ct = coupling_tensor(8);
        for j in 1..=8 {
            for l in 1..=8 {
                for k in 1..=8 {
                    assert!((ct.get(j, l, k) - quadrature(j, l, k)).abs() < 1e-10);
                    assert_eq!(ct.get(j, l, k), ct.get(j, k, l));
                }
            }
        }
    }

    #[test]
    fn zero_potential_gives_zero_forms() {
        let pf = PotentialFourier::zeros(2, 2, 4);
        let qf = assemble_initial_forms(&pf, &coupling_tensor(4), &WeightedSpace::new(2, 4)).unwrap();
        assert!(qf.is_zero());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let pf = PotentialFourier::zeros(2, 2, 4);
        let r = assemble_initial_forms(&pf, &coupling_tensor(3), &WeightedSpace::new(2, 4));
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn single_mode_entry_matches_term_by_term_sum() {
        let mut pf = PotentialFourier::zeros(2, 1, 3);
        let m = pf.modes.index(&[1, 0]).unwrap();
        let mn = pf.modes.index(&[-1, 0]).unwrap();
        pf.v_hat[m * 3] = Complex64::new(0.5, 0.0);
        pf.v_hat[mn * 3] = Complex64::new(0.5, 0.0);
        let ct = coupling_tensor(3);
        let qf = assemble_initial_forms(&pf, &ct, &WeightedSpace::new(2, 3)).unwrap();
        // row k = 1, column l = 2 receives only j = 1, where 1 = 2 - 1
        let want = FRAC_PI_2 / 2f64.sqrt() * 0.5;
        assert!((qf.coeff(Block::ZzBar, m, 0, 1).re - want).abs() < 1e-15);
        assert!((qf.coeff(Block::Zz, m, 0, 1).re - 0.5 * want).abs() < 1e-15);
        assert!(qf.symmetry_defect(&Block::ALL) == 0.0);
        assert!(qf.block_reality_defect() == 0.0);
    }

    #[test]
    fn initial_forms_reproduce_the_complexified_hamiltonian() {
        // direct evaluation of Σ c v/√(kl) (z_l+z̄_l)(z_k+z̄_k)/2 against the block form
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut pf = PotentialFourier::zeros(1, 2, 5);
        for m in 0..pf.modes.len() {
            let mn = pf.modes.negated(m);
            if mn < m {
                continue;
            }
            for j in 0..5 {
                let v = Complex64::new(rng.gen_range(-1.0..1.0), if m == mn { 0.0 } else { rng.gen_range(-1.0..1.0) });
                pf.v_hat[m * 5 + j] = v;
                pf.v_hat[mn * 5 + j] = v.conj();
            }
        }
        let ct = coupling_tensor(5);
        let qf = assemble_initial_forms(&pf, &ct, &WeightedSpace::new(1, 5)).unwrap();
        let theta = [0.77];
        let v = pf.profile(&theta);
        let z: Vec<Complex64> =
            (0..5).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        let zb: Vec<Complex64> = z.iter().map(|c| c.conj()).collect();
        let mut direct = ZERO;
        for k in 1..=5 {
            for l in 1..=5 {
                for j in 1..=5 {
                    direct += ct.get(j, l, k) * v[j - 1] / ((k * l) as f64).sqrt()
                        * (z[l - 1] + zb[l - 1])
                        * (z[k - 1] + zb[k - 1])
                        / 2.0;
                }
            }
        }
        let [p, q, r] = qf.eval(&theta);
        let zv = nalgebra::DVector::from_vec(z.clone());
        let zbv = nalgebra::DVector::from_vec(zb.clone());
        let form = (zv.transpose() * &p * &zv)[0] + (zbv.transpose() * &q * &zv)[0] + (zbv.transpose() * &r * &zbv)[0];
        assert!((form - direct).norm() < 1e-12);
    }

    #[test]
    fn single_entry_norm() {
        let mut qf = QuadraticForm::zeros(ModeBox::new(2, 1), 3);
        let m0 = qf.modes.zero_index();
        *qf.coeff_mut(Block::ZzBar, m0, 0, 0) = Complex64::new(-0.7, 0.0);
        let r = weighted_norm(&qf, &WeightedSpace::new(4, 3), 5, None);
        assert!((r.weighted_op_norm - 0.7).abs() < 1e-14);
        assert_eq!(
            weighted_norm(&QuadraticForm::zeros(ModeBox::new(2, 1), 3), &WeightedSpace::new(4, 3), 5, None)
                .weighted_op_norm,
            0.0
        );
    }

    fn random_form(rng: &mut ChaCha8Rng, modes: ModeBox, jm: usize) -> QuadraticForm {
        let mut qf = QuadraticForm::zeros(modes, jm);
        for b in Block::ALL {
            for v in qf.block_mut(b).iter_mut() {
                *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        qf
    }

    #[test]
    fn weighted_norm_matches_dense_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let ws = WeightedSpace::new(2, 16);
        let qf = random_form(&mut rng, ModeBox::new(2, 1), 16);
        let got = weighted_sup_norm(&qf, &ws, 3);
        // oracle: largest eigenvalue of WᴴW at each grid point, W built from a
        // direct phase sum
        let mut want = 0.0f64;
        for p in 0..9 {
            let th = [2.0 * PI * (p / 3) as f64 / 3.0, 2.0 * PI * (p % 3) as f64 / 3.0];
            for b in qf.eval(&th) {
                let d = DMatrix::from_fn(16, 16, |i, j| {
                    b[(i, j)] * ((i + 1) as f64).powf(2.5) / ((j + 1) as f64).powf(1.5)
                });
                let h = d.adjoint() * &d;
                let eig = h.symmetric_eigenvalues();
                want = want.max(eig.max().sqrt());
            }
        }
        assert!((got - want).abs() < 1e-10 * want);
    }

    #[test]
    fn lipschitz_entry_is_a_centered_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ws = WeightedSpace::new(1, 3);
        let a = random_form(&mut rng, ModeBox::new(1, 1), 3);
        let mut b = a.clone();
        let d = random_form(&mut rng, ModeBox::new(1, 1), 3);
        b.axpy(0.02, &d);
        let r = weighted_norm(&a, &ws, 4, Some(TauProbe { minus: &a, plus: &b, d_tau: 0.01 }));
        let want = weighted_sup_norm(&d, &ws, 4);
        assert!((r.lipschitz_norm.unwrap() - want).abs() < 1e-12 * want);
    }

    #[test]
    fn save_load_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut qf = random_form(&mut rng, ModeBox::new(2, 1), 4);
        qf.strip = 0.25;
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("piece_3");
        qf.save(&stem, Some(6), Some(3)).unwrap();
        let (back, man) = QuadraticForm::load(&stem).unwrap();
        assert_eq!(back, qf);
        assert_eq!(man.piece_index, Some(3));
        assert_eq!(man.weight_n, Some(6));
    }

    #[test]
    fn split_reassembles_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let qf = random_form(&mut rng, ModeBox::new(2, 2), 3);
        let (low, high) = qf.split_l1(2);
        let mut sum = low.clone();
        sum.axpy(1.0, &high);
        assert_eq!(sum, qf);
        let (all, none) = qf.split_l1(4);
        assert_eq!(all, qf);
        assert!(none.is_zero());
    }

    proptest! {
        #[test]
        fn h_n_norm_is_isometric(coeffs in proptest::collection::vec(-1.0f64..1.0, 1..8), n_weight in 0u32..4) {
            // (1/π)∫|∂^N u|² for u = Σ u_k sin kx against Σ k^{2N}|u_k|²
            let ws = WeightedSpace::new(n_weight, coeffs.len());
            let z: Vec<Complex64> = coeffs.iter().map(|&c| Complex64::new(c, 0.0)).collect();
            let m = 64;
            let mut quad = 0.0;
            for s in 0..m {
                let x = -PI + 2.0 * PI * s as f64 / m as f64;
                let d: f64 = coeffs.iter().enumerate().map(|(k, c)| {
                    let kf = (k + 1) as f64;
                    let phase = kf * x + n_weight as f64 * PI / 2.0;
                    c * kf.powi(n_weight as i32) * phase.sin()
                }).sum();
                quad += d * d;
            }
            quad *= 2.0 / m as f64;
            let h = ws.norm(&z).powi(2);
            prop_assert!((quad - h).abs() <= 1e-8 * h.max(1e-300));
        }
    }
}
