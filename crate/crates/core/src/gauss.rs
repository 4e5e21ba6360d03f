//! Gauss–Legendre rules on the unit interval and the associated collocation
//! (implicit Runge–Kutta) coefficients.

use std::f64::consts::PI;

#[derive(Clone, Debug)]
pub struct GaussRule {
    /// Nodes in (0, 1), increasing.
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// `a[i][j] = ∫_0^{c_i} ℓ_j(s) ds` with `ℓ_j` the Lagrange basis on the nodes.
    pub a: Vec<Vec<f64>>,
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn nodes_weights(s: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(s);
    let mut weights = Vec::with_capacity(s);
    for i in 0..s {
        let mut x = (PI * (i as f64 + 0.75) / (s as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(s, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(s, x);
        nodes.push(0.5 * (1.0 - x));
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

fn lagrange(nodes: &[f64], j: usize, t: f64) -> f64 {
    nodes.iter().enumerate().filter(|&(m, _)| m != j).map(|(_, &c)| (t - c) / (nodes[j] - c)).product()
}

impl GaussRule {
    pub fn new(s: usize) -> Self {
        assert!(s >= 1);
        let (nodes, weights) = nodes_weights(s);
        let a = nodes
            .iter()
            .map(|&ci| {
                (0..s)
                    .map(|j| nodes.iter().zip(&weights).map(|(&x, &w)| ci * w * lagrange(&nodes, j, ci * x)).sum())
                    .collect()
            })
            .collect();
        GaussRule { nodes, weights, a }
    }

    pub fn stages(&self) -> usize {
        self.nodes.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomials_exactly() {
        for s in 1..=8 {
            let g = GaussRule::new(s);
            assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            for p in 0..2 * s {
                let q: f64 = g.nodes.iter().zip(&g.weights).map(|(x, w)| w * x.powi(p as i32)).sum();
                assert!((q - 1.0 / (p as f64 + 1.0)).abs() < 1e-13, "s={s} p={p}");
            }
        }
    }

    #[test]
    fn collocation_rows_integrate_to_nodes() {
        let g = GaussRule::new(4);
        for (i, row) in g.a.iter().enumerate() {
            let c = g.nodes[i];
            assert!((row.iter().sum::<f64>() - c).abs() < 1e-14);
            let m1: f64 = row.iter().zip(&g.nodes).map(|(a, x)| a * x).sum();
            assert!((m1 - c * c / 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn two_stage_matches_closed_form() {
        let g = GaussRule::new(2);
        let r = 3f64.sqrt() / 6.0;
        assert!((g.nodes[0] - (0.5 - r)).abs() < 1e-15);
        assert!((g.a[0][1] - (0.25 - r)).abs() < 1e-15);
        assert!((g.a[1][0] - (0.25 + r)).abs() < 1e-15);
    }
}
