//! Analytic approximation of finitely smooth θ-families by Fourier-side
//! mollification, and the telescoping split into pieces on shrinking strips.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::galerkin::{weighted_sup_norm, Block, QuadraticForm, WeightedSpace};
use crate::torus::{self, ModeBox};

/// Radial flat-top bump `φ`: 1 on `r ≤ ½`, 0 on `r ≥ 1`, smooth in between.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JacksonKernel;

fn h(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / t).exp()
    } else {
        0.0
    }
}

impl JacksonKernel {
    pub fn phi(&self, r: f64) -> f64 {
        let a = h(1.0 - r);
        let b = h(r - 0.5);
        if a + b == 0.0 {
            0.0
        } else {
            a / (a + b)
        }
    }

    /// Multiplier `φ(σ|k|₂)` sampled on every mode of the box.
    pub fn envelope(&self, modes: &ModeBox, sigma: f64) -> Vec<f64> {
        (0..modes.len()).map(|m| self.phi(sigma * torus::l2(&modes.mode(m)))).collect()
    }
}

pub fn smooth_coefficients(
    modes: &ModeBox,
    f_hat: &[Complex64],
    entries: usize,
    kernel: &JacksonKernel,
    sigma: f64,
) -> Vec<Complex64> {
    assert!(sigma > 0.0, "smoothing scale must be positive");
    let env = kernel.envelope(modes, sigma);
    let mut out = f_hat.to_vec();
    for (m, w) in env.iter().enumerate() {
        out[m * entries..(m + 1) * entries].iter_mut().for_each(|v| *v *= *w);
    }
    out
}

pub fn smooth_at_scale(qf: &QuadraticForm, kernel: &JacksonKernel, sigma: f64) -> QuadraticForm {
    let mut out = qf.clone();
    let e = qf.entries();
    for b in Block::ALL {
        *out.block_mut(b) = smooth_coefficients(&qf.modes, qf.block(b), e, kernel, sigma);
    }
    out.strip = sigma;
    out
}

/// `Σ_k |k|₂^ℓ |f̂(k)|`, the computable stand-in for a `C^ℓ` norm.
pub fn c_ell_proxy(modes: &ModeBox, f_hat: &[Complex64], entries: usize, ell: f64) -> f64 {
    (0..modes.len())
        .map(|m| {
            let w = torus::l2(&modes.mode(m)).powf(ell);
            w * f_hat[m * entries..(m + 1) * entries].iter().map(|v| v.norm()).sum::<f64>()
        })
        .sum()
}

/// `Σ_k e^{s|k|₁} ‖D_N J B̂(k) J D_N^{-1}‖_F` maximised over blocks; bounds the
/// weighted operator norm anywhere on the strip `|Im θ| ≤ s`.
pub fn analyticity_certificate(qf: &QuadraticForm, ws: &WeightedSpace, s: f64) -> f64 {
    let jm = qf.j_max;
    let e = qf.entries();
    Block::ALL
        .iter()
        .map(|&b| {
            let d = qf.block(b);
            (0..qf.modes.len())
                .map(|m| {
                    let fro: f64 = (0..e)
                        .map(|x| (d[m * e + x] * ws.entry_weight(x / jm + 1, x % jm + 1)).norm_sqr())
                        .sum::<f64>()
                        .sqrt();
                    fro * (s * torus::l1(&qf.modes.mode(m)) as f64).exp()
                })
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Piece {
    pub index: usize,
    pub strip: f64,
    pub scale: Option<f64>,
    pub form: QuadraticForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PieceStats {
    pub index: usize,
    pub strip: f64,
    pub weighted_norm: f64,
    /// `‖piece_l‖ / s_{l-1}^N` for `l ≥ 1`.
    pub bound_constant: Option<f64>,
    pub certificate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DyadicDecomposition {
    pub pieces: Vec<Piece>,
    /// `qf - Σ pieces`, supported on the modes the last scale has not reached.
    pub tail: QuadraticForm,
    pub residual_norm: f64,
    pub stats: Vec<PieceStats>,
}

#[derive(Clone, Debug)]
pub struct DecomposeOptions {
    pub norm_grid: usize,
    /// Scale labels attached to the pieces, if known.
    pub scales: Option<Vec<f64>>,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions { norm_grid: 8, scales: None }
    }
}

pub fn check_strips(strips: &[f64]) -> Result<()> {
    if strips.is_empty() {
        return Err(Error::Schedule("empty strip schedule".into()));
    }
    if strips[0] > 0.5 {
        return Err(Error::Schedule(format!("first strip {} exceeds 1/2", strips[0])));
    }
    if strips.iter().any(|s| !(*s > 0.0)) || strips.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Schedule(format!("strips must be positive and strictly decreasing: {strips:?}")));
    }
    Ok(())
}

pub fn decompose(
    qf: &QuadraticForm,
    strips: &[f64],
    kernel: &JacksonKernel,
    ws: &WeightedSpace,
    opts: &DecomposeOptions,
) -> Result<DyadicDecomposition> {
    check_strips(strips)?;
    let mut pieces = Vec::with_capacity(strips.len());
    let mut stats = Vec::with_capacity(strips.len());
    let mut previous: Option<QuadraticForm> = None;
    for (l, &s) in strips.iter().enumerate() {
        let smooth = smooth_at_scale(qf, kernel, s);
        let mut form = smooth.clone();
        if let Some(p) = &previous {
            form.axpy(-1.0, p);
        }
        form.strip = s;
        let norm = weighted_sup_norm(&form, ws, opts.norm_grid);
        stats.push(PieceStats {
            index: l,
            strip: s,
            weighted_norm: norm,
            bound_constant: (l > 0).then(|| norm / strips[l - 1].powi(ws.n_weight as i32)),
            certificate: analyticity_certificate(&form, ws, s),
        });
        pieces.push(Piece { index: l, strip: s, scale: opts.scales.as_ref().and_then(|v| v.get(l).copied()), form });
        previous = Some(smooth);
    }
    let mut tail = qf.clone();
    if let Some(p) = &previous {
        tail.axpy(-1.0, p);
    }
    tail.strip = 0.0;
    let residual_norm = weighted_sup_norm(&tail, ws, opts.norm_grid);
    Ok(DyadicDecomposition { pieces, tail, residual_norm, stats })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::torus::Torus;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bump_profile() {
        let k = JacksonKernel;
        assert_eq!(k.phi(0.0), 1.0);
        assert_eq!(k.phi(0.5), 1.0);
        assert_eq!(k.phi(1.0), 0.0);
        assert_eq!(k.phi(3.0), 0.0);
        let mut last = 1.0;
        for i in 0..=100 {
            let v = k.phi(0.5 + 0.005 * i as f64);
            assert!(v <= last && (0.0..=1.0).contains(&v));
            last = v;
        }
    }

    #[test]
    fn constants_are_preserved_and_small_sigma_is_identity() {
        let modes = ModeBox::new(2, 3);
        let mut f = vec![Complex64::new(0.0, 0.0); modes.len()];
        f[modes.zero_index()] = Complex64::new(2.5, 0.0);
        let g = smooth_coefficients(&modes, &f, 1, &JacksonKernel, 0.7);
        assert_eq!(g, f);
        let m = modes.index(&[2, -1]).unwrap();
        f[m] = Complex64::new(1.0, 1.0);
        let g = smooth_coefficients(&modes, &f, 1, &JacksonKernel, 1e-6);
        assert_eq!(g[m], f[m]);
        let g = smooth_coefficients(&modes, &f, 1, &JacksonKernel, 0.3);
        assert!((g[m] - f[m] * JacksonKernel.phi(0.3 * 5f64.sqrt())).norm() < 1e-15);
    }

    fn random_form(seed: u64, k: usize) -> QuadraticForm {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut qf = QuadraticForm::zeros(ModeBox::new(2, k), 3);
        for b in Block::ALL {
            for v in qf.block_mut(b).iter_mut() {
                *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            }
        }
        qf
    }

    #[test]
    fn telescoping_is_exact_and_support_is_preserved() {
        let qf = random_form(4, 6);
        let ws = WeightedSpace::new(2, 3);
        let strips = [0.5, 0.3, 0.2, 0.1];
        let d = decompose(&qf, &strips, &JacksonKernel, &ws, &DecomposeOptions::default()).unwrap();
        let mut sum = d.pieces[0].form.clone();
        for p in &d.pieces[1..] {
            sum.axpy(1.0, &p.form);
        }
        let last = smooth_at_scale(&qf, &JacksonKernel, 0.1);
        for b in Block::ALL {
            for (a, c) in sum.block(b).iter().zip(last.block(b)) {
                assert!((a - c).norm() < 1e-14);
            }
        }
        sum.axpy(1.0, &d.tail);
        for b in Block::ALL {
            for (a, c) in sum.block(b).iter().zip(qf.block(b)) {
                assert!((a - c).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn low_mode_forms_have_vanishing_late_pieces() {
        let mut qf = QuadraticForm::zeros(ModeBox::new(2, 6), 3);
        let src = random_form(8, 1);
        for m in 0..src.modes.len() {
            let k = src.modes.mode(m);
            let mm = qf.modes.index(&k).unwrap();
            for b in Block::ALL {
                for x in 0..9 {
                    qf.block_mut(b)[mm * 9 + x] = src.block(b)[m * 9 + x];
                }
            }
        }
        let ws = WeightedSpace::new(1, 3);
        let d = decompose(&qf, &[0.3, 0.2, 0.1], &JacksonKernel, &ws, &DecomposeOptions::default()).unwrap();
        // |k|₂ ≤ √2 and σ|k| ≤ ½ for σ ≤ 0.3
        assert!(d.pieces[1].form.is_zero() && d.pieces[2].form.is_zero());
        assert!(d.residual_norm < 1e-10);
    }

    #[test]
    fn bad_schedules_are_rejected() {
        let qf = QuadraticForm::zeros(ModeBox::new(1, 1), 2);
        let ws = WeightedSpace::new(1, 2);
        let opts = DecomposeOptions::default();
        for s in [vec![0.3, 0.4], vec![0.8, 0.1], vec![], vec![0.3, 0.0]] {
            assert!(matches!(decompose(&qf, &s, &JacksonKernel, &ws, &opts), Err(Error::Schedule(_))));
        }
    }

    #[test]
    fn certificate_bounds_complex_strip_values() {
        let qf = random_form(2, 3);
        let ws = WeightedSpace::new(1, 3);
        let s = 0.2;
        let cert = analyticity_certificate(&qf, &ws, s);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let th: Vec<Complex64> =
                (0..2).map(|_| Complex64::new(rng.gen_range(0.0..6.3), rng.gen_range(-s..s))).collect();
            let ph: Vec<Complex64> = (0..qf.modes.len())
                .map(|m| {
                    let k = qf.modes.mode(m);
                    (Complex64::i() * (th[0] * k[0] as f64 + th[1] * k[1] as f64)).exp()
                })
                .collect();
            for b in qf.eval_with_phases(&ph) {
                assert!(crate::galerkin::weighted_matrix_norm(&ws, &b) <= cert);
            }
        }
    }

    #[test]
    fn smoothing_error_rate_on_a_small_box() {
        // radial coefficients |k|^{-(ℓ+2)}: sup error ∝ σ^ℓ
        let ell = 3.0;
        let modes = ModeBox::new(2, 128);
        let f: Vec<Complex64> = modes
            .modes()
            .map(|k| {
                let r = torus::l2(&k);
                Complex64::new(if r == 0.0 { 0.0 } else { r.powf(-(ell + 2.0)) }, 0.0)
            })
            .collect();
        let torus = Torus::new(modes.clone(), modes.side()).unwrap();
        let sigmas: Vec<f64> = (3..=6).map(|p| 2f64.powi(-p)).collect();
        let errs: Vec<f64> = sigmas
            .iter()
            .map(|&s| {
                let g = smooth_coefficients(&modes, &f, 1, &JacksonKernel, s);
                let d: Vec<Complex64> = f.iter().zip(&g).map(|(a, b)| a - b).collect();
                torus.synthesize(&d, 1).iter().map(|v| v.norm()).fold(0.0, f64::max)
            })
            .collect();
        let slope = fit_slope(&sigmas, &errs);
        assert!((slope - ell).abs() < 0.15 * ell, "slope {slope}");
    }

    fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
        let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
        let mx = lx.iter().sum::<f64>() / lx.len() as f64;
        let my = ly.iter().sum::<f64>() / ly.len() as f64;
        let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
        let den: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
        num / den
    }
}
