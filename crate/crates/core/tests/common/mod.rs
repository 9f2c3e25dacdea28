//! Independent reference computations shared by the integration tests.
//!
//! Everything here goes through explicit inverses, hand-written loops or plain
//! quadrature so that it shares no code path with the library internals.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Squared-exponential kernel written out by hand.
pub fn k_ref(a: &[f64], b: &[f64], sv: f64, l: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sv * (-d2 / (2.0 * l)).exp()
}

pub fn row(m: &DMatrix<f64>, i: usize) -> Vec<f64> {
    m.row(i).iter().copied().collect()
}

pub fn cross_ref(a: &DMatrix<f64>, b: &DMatrix<f64>, sv: f64, l: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), b.nrows(), |i, j| k_ref(&row(a, i), &row(b, j), sv, l))
}

pub fn inv(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("invertible")
}

/// Frobenius-norm relative error of `a` against `b`, absolute when `b` is tiny.
pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

pub fn rel_err_v(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let diff = (a - b).norm();
    let scale = b.norm();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Points uniform in `[lo, hi]^d`.
pub fn random_points(r: &mut ChaCha8Rng, n: usize, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| r.random_range(lo..hi))
}

/// `n` 1-d points with minimum spacing, keeping Gram matrices well conditioned.
pub fn spread_points(r: &mut ChaCha8Rng, n: usize, spacing: f64) -> DMatrix<f64> {
    let mut x = 0.0;
    let v: Vec<f64> = (0..n)
        .map(|_| {
            x += spacing + r.random_range(0.0..spacing);
            x
        })
        .collect();
    DMatrix::from_column_slice(n, 1, &v)
}

pub fn random_vector(r: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| r.random_range(lo..hi))
}

pub fn log_uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    r.random_range(lo.ln()..hi.ln()).exp()
}

pub fn sigmoid_ref(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Adaptive Simpson quadrature of `f` over `[a, b]`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol.max(1e-15 * whole.abs()) {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }
    // split first so narrow peaks are not missed by the initial five samples
    let pieces = 64;
    let h = (b - a) / pieces as f64;
    (0..pieces)
        .map(|i| {
            let (lo, hi) = (a + i as f64 * h, a + (i + 1) as f64 * h);
            let (flo, fhi) = (f(lo), f(hi));
            let (m, fm, whole) = simpson(f, lo, flo, hi, fhi);
            recurse(f, lo, flo, hi, fhi, m, fm, whole, tol / pieces as f64, 14)
        })
        .sum()
}

/// `log σ(x)` without `ln 0` in the tails.
pub fn log_sigmoid_ref(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// `log C(σ(a)) = log(a coth(a/2))` straight from the hyperbolic form.
pub fn log_c_ref(a: f64) -> f64 {
    if a == 0.0 {
        std::f64::consts::LN_2
    } else {
        (a / (a / 2.0).tanh()).ln()
    }
}

/// Bernoulli or continuous Bernoulli log-likelihood of a single latent value.
pub fn loglik_ref(f: f64, y: f64, cb: bool) -> f64 {
    let base = y * log_sigmoid_ref(f) + (1.0 - y) * log_sigmoid_ref(-f);
    if cb {
        base + log_c_ref(f)
    } else {
        base
    }
}

/// Plain Newton for the Laplace mode using explicit inverses.
///
/// Returns `(f̂, W)` for the Bernoulli likelihood under prior `N(m, K)`.
pub fn newton_bernoulli_ref(k: &DMatrix<f64>, m: &DVector<f64>, y: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = y.len();
    let kinv = inv(k);
    let mut f = m.clone();
    for _ in 0..200 {
        let p = f.map(sigmoid_ref);
        let w = p.map(|p| p * (1.0 - p));
        let grad = y - &p - &kinv * (&f - m);
        let h = &kinv + DMatrix::from_diagonal(&w);
        let step = inv(&h) * grad;
        f += &step;
        if step.amax() < 1e-14 {
            break;
        }
    }
    let p = f.map(sigmoid_ref);
    let w = DVector::from_fn(n, |i, _| p[i] * (1.0 - p[i]));
    (f, w)
}

/// Bernoulli Newton iterations `f ← K (I + W K)⁻¹ (W f + y - σ(f))` under a
/// zero prior mean. Never forms `K⁻¹`, so it copes with nearly singular `K`.
pub fn newton_bernoulli_no_inverse_ref(k: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    let n = y.len();
    let mut f = DVector::zeros(n);
    for _ in 0..200 {
        let p = f.map(sigmoid_ref);
        let w = p.map(|p| p * (1.0 - p));
        let b = w.component_mul(&f) + y - &p;
        let m = DMatrix::identity(n, n) + DMatrix::from_diagonal(&w) * k;
        let next = k * m.lu().solve(&b).expect("I + WK is invertible");
        let step = (&next - &f).amax();
        f = next;
        if step < 1e-14 {
            break;
        }
    }
    f
}
