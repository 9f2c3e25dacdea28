//! Scalar helpers: the logistic function and Gauss–Hermite quadrature.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};

/// Number of Gauss–Hermite nodes used for predictive probabilities.
pub const HERMITE_NODES: usize = 32;

/// Above this latent variance the Hermite rule loses accuracy (the poles of
/// σ at ±iπ come too close relative to the Gaussian width) and a composite
/// Gauss–Legendre rule is used instead.
const HERMITE_MAX_VARIANCE: f64 = 4.0;
const LEGENDRE_NODES: usize = 8;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + eˣ)` without overflow.
#[inline]
pub fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Nodes and weights for `∫ e^{-x²} f(x) dx`, from the eigenproblem of the
/// Hermite Jacobi matrix.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64 / 2.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    // nodes are symmetric about zero
    for k in 0..n / 2 {
        let (x, w) = (pairs[n - 1 - k].0 - pairs[k].0, pairs[n - 1 - k].1 + pairs[k].1);
        pairs[k] = (-x / 2.0, w / 2.0);
        pairs[n - 1 - k] = (x / 2.0, w / 2.0);
    }
    if n % 2 == 1 {
        pairs[n / 2].0 = 0.0;
    }
    pairs.into_iter().unzip()
}

/// Nodes and weights for `∫₋₁¹ f(x) dx`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            let v0 = eig.eigenvectors[(0, k)];
            (eig.eigenvalues[k], 2.0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

fn hermite_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_hermite(HERMITE_NODES))
}

fn legendre_rule() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(LEGENDRE_NODES))
}

/// Splits `[a, b]` into equal panels no wider than `width`.
fn push_panels(edges: &mut Vec<f64>, a: f64, b: f64, width: f64) {
    if b <= a {
        return;
    }
    let count = ((b - a) / width).ceil().max(1.0) as usize;
    for i in 1..=count {
        edges.push(if i == count { b } else { a + (b - a) * i as f64 / count as f64 });
    }
}

/// `∫ φ(z) σ(mean + sd·z) dz` over `|z| ≤ 12` on panels that are refined to
/// width `1/sd` where σ changes.
fn expected_sigmoid_panels(mean: f64, sd: f64) -> f64 {
    const Z_MAX: f64 = 12.0;
    const COARSE: f64 = 0.25;
    let center = -mean / sd;
    let fine_lo = (center - 40.0 / sd).clamp(-Z_MAX, Z_MAX);
    let fine_hi = (center + 40.0 / sd).clamp(-Z_MAX, Z_MAX);
    let mut edges = vec![-Z_MAX];
    push_panels(&mut edges, -Z_MAX, fine_lo, COARSE);
    push_panels(&mut edges, fine_lo, fine_hi, COARSE.min(1.0 / sd));
    push_panels(&mut edges, fine_hi, Z_MAX, COARSE);

    let (nodes, weights) = legendre_rule();
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    edges
        .windows(2)
        .map(|panel| {
            let (mid, half) = (0.5 * (panel[0] + panel[1]), 0.5 * (panel[1] - panel[0]));
            half * nodes
                .iter()
                .zip(weights)
                .map(|(x, w)| {
                    let z = mid + half * x;
                    w * (-0.5 * z * z).exp() * sigmoid(mean + sd * z)
                })
                .sum::<f64>()
        })
        .sum::<f64>()
        * norm
}

/// `E[σ(f)]` for `f ~ N(mean, variance)`.
pub fn expected_sigmoid(mean: f64, variance: f64) -> f64 {
    if variance <= 0.0 {
        return sigmoid(mean);
    }
    if variance > HERMITE_MAX_VARIANCE {
        return expected_sigmoid_panels(mean, variance.sqrt());
    }
    let (nodes, weights) = hermite_rule();
    let scale = (2.0 * variance).sqrt();
    let sum: f64 = nodes
        .iter()
        .zip(weights)
        .map(|(x, w)| w * sigmoid(mean + scale * x))
        .sum();
    sum / std::f64::consts::PI.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sigmoid_is_stable_and_symmetric() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert_relative_eq!(sigmoid(1.3) + sigmoid(-1.3), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn log1p_exp_large_arguments() {
        assert_eq!(log1p_exp(1000.0), 1000.0);
        assert_relative_eq!(log1p_exp(0.0), std::f64::consts::LN_2, epsilon = 1e-15);
        assert_relative_eq!(log1p_exp(-40.0), (-40.0f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn hermite_rule_integrates_polynomials() {
        let (x, w) = gauss_hermite(HERMITE_NODES);
        let pi_sqrt = std::f64::consts::PI.sqrt();
        let total: f64 = w.iter().sum();
        assert_relative_eq!(total, pi_sqrt, max_relative = 1e-13);
        // ∫ x² e^{-x²} = √π / 2, ∫ x⁴ e^{-x²} = 3√π / 4
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        let m4: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(4)).sum();
        assert_relative_eq!(m2, pi_sqrt / 2.0, max_relative = 1e-12);
        assert_relative_eq!(m4, 3.0 * pi_sqrt / 4.0, max_relative = 1e-12);
    }

    #[test]
    fn legendre_rule_integrates_polynomials() {
        let (x, w) = gauss_legendre(LEGENDRE_NODES);
        assert_relative_eq!(w.iter().sum::<f64>(), 2.0, max_relative = 1e-14);
        let m14: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert_relative_eq!(m14, 2.0 / 15.0, max_relative = 1e-12);
    }

    #[test]
    fn expected_sigmoid_against_adaptive_integration() {
        // reference values from adaptive quadrature of σ(f) N(f; m, v)
        let cases = [
            (1.0, 4.0, 0.6477264385258689),
            (0.2, 9.0, 0.5229546994957821),
            (5.0, 25.0, 0.8267296280237273),
            (1.0, 100.0, 0.5391962666558192),
            (3.0, 400.0, 0.5593764168762704),
            (-2.0, 1e4, 0.49202299803513927),
            (0.0, 1e6, 0.5),
        ];
        for (m, v, expected) in cases {
            let got = expected_sigmoid(m, v);
            assert!((got - expected).abs() < 1e-6, "m={m} v={v}: {got} vs {expected}");
        }
    }

    #[test]
    fn expected_sigmoid_continuous_across_rule_switch() {
        for m in [-2.0, 0.3, 4.0] {
            let below = expected_sigmoid(m, HERMITE_MAX_VARIANCE);
            let above = expected_sigmoid(m, HERMITE_MAX_VARIANCE * (1.0 + 1e-12));
            assert!((below - above).abs() < 1e-6);
        }
    }

    #[test]
    fn expected_sigmoid_symmetry_and_degenerate_limit() {
        assert_relative_eq!(expected_sigmoid(0.0, 3.0), 0.5, epsilon = 1e-15);
        assert!((expected_sigmoid(0.8, 1e-14) - sigmoid(0.8)).abs() < 1e-8);
        assert_eq!(expected_sigmoid(0.8, 0.0), sigmoid(0.8));
    }
}
