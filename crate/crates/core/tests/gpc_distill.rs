mod common;

use common::*;
use gpdistill::gpc_distill::{
    approximation_error, cb_marginal_loglik, data_centric_gpc, distilled_targets, distribution_centric_gpc_iterated,
    distribution_centric_gpc_scaled, log_loss, GpcDistillConfig, TargetKind,
};
use gpdistill::gpc_laplace::{laplace_marginal_loglik, laplace_mode};
use gpdistill::{BinaryDataset, Error, GpcModel, KernelParams, Likelihood, NewtonOptions, PriorMean, ProbabilityMethod};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn random_binary(r: &mut ChaCha8Rng, n: usize) -> BinaryDataset {
    let xs = random_points(r, n, 1, 0.0, 5.0);
    let ys = DVector::from_fn(n, |_, _| if r.random_bool(0.5) { 1.0 } else { 0.0 });
    BinaryDataset::new(xs, ys).unwrap()
}

/// Labels drawn with probability σ(2 sin(πx/2)) at uniform inputs on [0, 5].
fn toy(seed: u64, n: usize) -> BinaryDataset {
    let mut r = rng(seed);
    let xs: Vec<f64> = (0..n).map(|_| r.random_range(0.0..5.0)).collect();
    let ys: Vec<f64> = xs
        .iter()
        .map(|x| {
            let p = sigmoid_ref(2.0 * (x * std::f64::consts::PI / 2.0).sin());
            if r.random::<f64>() < p {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    BinaryDataset::new(DMatrix::from_column_slice(n, 1, &xs), DVector::from_vec(ys)).unwrap()
}

fn tight() -> NewtonOptions {
    NewtonOptions::default()
}

#[test]
fn scaled_prior_equals_replicated_data() {
    let mut r = rng(21);
    for _ in 0..15 {
        let n = r.random_range(1..=10);
        let data = random_binary(&mut r, n);
        let params = KernelParams::rbf(r.random_range(0.3..3.0), r.random_range(0.1..1.5)).unwrap();
        for t in 1..=5 {
            let scaled = distribution_centric_gpc_scaled(&data, &params, t, &tight()).unwrap();
            let rep = GpcModel::fit(&data.replicate(t).unwrap(), &params, Likelihood::Bernoulli, 0.0, PriorMean::zero(), &tight())
                .unwrap();
            for block in 0..t {
                let part = rep.fit.f_hat.rows(block * n, n);
                assert!((part - &scaled.fit.f_hat).amax() < 1e-8, "t={t}");
            }
        }
    }
}

#[test]
fn scaled_matches_replicated_with_literal_three_copies() {
    let data = toy(4, 8);
    let params = KernelParams::rbf(1.5, 0.4).unwrap();
    let scaled = distribution_centric_gpc_scaled(&data, &params, 3, &tight()).unwrap();
    // build the 3N system by hand so no library replication code is involved
    let n = data.len();
    let xs3 = DMatrix::from_fn(3 * n, 1, |i, _| data.xs[(i % n, 0)]);
    let k3 = cross_ref(&xs3, &xs3, 1.5, 0.4) + DMatrix::identity(3 * n, 3 * n) * params.jitter;
    let y3 = DVector::from_fn(3 * n, |i, _| data.ys[i % n]);
    let f3 = newton_bernoulli_no_inverse_ref(&k3, &y3);
    for b in 0..3 {
        assert!((f3.rows(b * n, n) - &scaled.fit.f_hat).amax() < 1e-8);
    }
}

#[test]
fn iterated_two_steps_match_dense_grid_reference() {
    let mut r = rng(31);
    for _ in 0..5 {
        let n = 5;
        let xs = spread_points(&mut r, n, 0.4);
        let ys = DVector::from_fn(n, |_, _| if r.random_bool(0.5) { 1.0 } else { 0.0 });
        let data = BinaryDataset::new(xs.clone(), ys.clone()).unwrap();
        let (sv, l) = (r.random_range(0.5..3.0), r.random_range(0.1..1.0));
        let params = KernelParams::new(sv, l, 0.0).unwrap();
        let it = distribution_centric_gpc_iterated(&data, &params, 2, &tight()).unwrap();

        // dense grid holding the training inputs followed by 60 extra points
        let extra: Vec<f64> = (0..60).map(|i| -1.0 + 9.0 * i as f64 / 59.0).collect();
        let grid = DMatrix::from_fn(n + 60, 1, |i, _| if i < n { xs[(i, 0)] } else { extra[i - n] });
        let k0 = cross_ref(&grid, &grid, sv, l);

        // pass 1: ordinary Laplace posterior materialized on the grid
        let kx = k0.view((0, 0), (n, n)).into_owned();
        let (f1, w1) = newton_bernoulli_ref(&kx, &DVector::zeros(n), &ys);
        let kgx = k0.columns(0, n).into_owned();
        let m1 = &kgx * inv(&kx) * &f1;
        let k1 = &k0 - &kgx * inv(&(&kx + DMatrix::from_diagonal(&w1.map(|w| 1.0 / w)))) * kgx.transpose();

        // pass 2: prior GP(m1, k1) read off the grid tables
        let k1x = k1.view((0, 0), (n, n)).into_owned();
        let m1x = m1.rows(0, n).into_owned();
        let (f2, w2) = newton_bernoulli_ref(&k1x, &m1x, &ys);
        let k1gx = k1.columns(0, n).into_owned();
        let m2 = &m1 + &k1gx * inv(&k1x) * (&f2 - &m1x);
        let k2 = &k1 - &k1gx * inv(&(&k1x + DMatrix::from_diagonal(&w2.map(|w| 1.0 / w)))) * k1gx.transpose();

        let test = DMatrix::from_column_slice(60, 1, &extra);
        let (mean, cov) = it.predict_latent(&test, 2).unwrap();
        let m2_test = m2.rows(n, 60).into_owned();
        let k2_test = k2.view((n, n), (60, 60)).into_owned();
        assert!((&mean - &m2_test).amax() < 1e-6, "{}", (&mean - &m2_test).amax());
        assert!((&cov - &k2_test).amax() < 1e-6, "{}", (&cov - &k2_test).amax());
        assert!((&it.fit(2).unwrap().f_hat - &f2).amax() < 1e-6);
    }
}

#[test]
fn iterated_training_log_loss_is_non_increasing() {
    let data = toy(7, 30);
    let params = KernelParams::rbf(2.0, 0.3).unwrap();
    let it = distribution_centric_gpc_iterated(&data, &params, 10, &tight()).unwrap();
    for method in [ProbabilityMethod::LatentMean, ProbabilityMethod::Quadrature] {
        let losses: Vec<f64> = (1..=10)
            .map(|t| log_loss(&it.predict_proba(&data.xs, t, method).unwrap(), &data.ys))
            .collect();
        for w in losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "{method:?}: {losses:?}");
        }
    }
}

#[test]
fn approximation_error_is_zero_for_identical_posteriors() {
    let data = toy(8, 12);
    let params = KernelParams::rbf(1.0, 0.5).unwrap();
    let it = distribution_centric_gpc_iterated(&data, &params, 3, &tight()).unwrap();
    let scaled: Vec<GpcModel> = (1..=3)
        .map(|t| distribution_centric_gpc_scaled(&data, &params, t, &tight()).unwrap())
        .collect();
    let test = DMatrix::from_fn(90, 1, |i, _| -2.0 + 9.0 * i as f64 / 89.0);
    let err = approximation_error(&it, &scaled, &test, ProbabilityMethod::LatentMean).unwrap();
    assert!(err[0] < 1e-12);
    assert!(err.iter().all(|e| e.is_finite() && *e >= 0.0));
}

#[test]
fn half_targets_give_zero_mode_at_step_two() {
    let data = toy(9, 6);
    let params = KernelParams::rbf(1.0, 0.5).unwrap();
    let half = data.with_targets(DVector::from_element(6, 0.5)).unwrap();
    let fit = GpcModel::fit(&half, &params, Likelihood::ContinuousBernoulli, 0.0, PriorMean::zero(), &tight()).unwrap();
    assert!(fit.fit.f_hat.amax() < 1e-12);
}

#[test]
fn step_two_uses_soft_targets_of_step_one() {
    let data = toy(10, 15);
    let params = KernelParams::rbf(1.5, 0.4).unwrap();
    let models = data_centric_gpc(&data, &params, &GpcDistillConfig::with_steps(2)).unwrap();
    let targets = distilled_targets(&models[0], TargetKind::SoftMean).unwrap();
    let manual = GpcModel::fit(
        &data.with_targets(targets.clone()).unwrap(),
        &params,
        Likelihood::ContinuousBernoulli,
        0.0,
        PriorMean::zero(),
        &tight(),
    )
    .unwrap();
    assert_eq!(models[1].fit, manual.fit);
    // the soft targets are the quadrature probabilities at the training inputs
    let probs = models[0].predict_proba(&data.xs, ProbabilityMethod::Quadrature).unwrap();
    assert!((targets - probs).amax() < 1e-15);
}

#[test]
fn bernoulli_on_continuous_targets_is_the_cb_reduction() {
    // dropping the normalizer gives the Bernoulli fit; check it against the reference Newton
    let data = toy(11, 12);
    let params = KernelParams::rbf(1.5, 0.4).unwrap();
    let models = data_centric_gpc(&data, &params, &GpcDistillConfig::with_steps(1)).unwrap();
    let targets = distilled_targets(&models[0], TargetKind::SoftMean).unwrap();
    let k = models[0].gram().clone();
    let plain = laplace_mode(&targets, &k, &DVector::zeros(12), Likelihood::Bernoulli, &tight()).unwrap();
    let (f_ref, _) = newton_bernoulli_ref(&k, &DVector::zeros(12), &targets);
    assert!((&plain.f_hat - f_ref).amax() < 1e-9);
    let cb = laplace_mode(&targets, &k, &DVector::zeros(12), Likelihood::ContinuousBernoulli, &tight()).unwrap();
    // the normalizer pushes the mode outward
    assert!(cb.f_hat.norm() > plain.f_hat.norm());
    assert!(cb_marginal_loglik(&plain, &k, &targets).is_err());
    let a = cb_marginal_loglik(&cb, &k, &targets).unwrap();
    assert_eq!(a, laplace_marginal_loglik(&cb, &k, &targets).unwrap());
}

#[test]
fn distilled_models_share_decision_boundary_across_probability_methods() {
    let data = toy(12, 20);
    let params = KernelParams::rbf(2.0, 0.3).unwrap();
    let test = DMatrix::from_fn(200, 1, |i, _| -2.0 + 9.0 * i as f64 / 199.0);
    let models = data_centric_gpc(&data, &params, &GpcDistillConfig::with_steps(4)).unwrap();
    for m in &models {
        let a = m.predict_proba(&test, ProbabilityMethod::LatentMean).unwrap();
        let b = m.predict_proba(&test, ProbabilityMethod::Quadrature).unwrap();
        for i in 0..200 {
            assert_eq!(a[i] >= 0.5, b[i] >= 0.5);
        }
    }
}

#[test]
fn regularization_enters_every_step() {
    let data = toy(13, 10);
    let params = KernelParams::rbf(1.0, 0.5).unwrap();
    let mut config = GpcDistillConfig::with_steps(3);
    config.reg_gammas = Some(vec![0.0, 0.1, 0.5]);
    let models = data_centric_gpc(&data, &params, &config).unwrap();
    for (m, g) in models.iter().zip([0.0, 0.1, 0.5]) {
        assert_eq!(m.reg_gamma, g);
    }
}

#[test]
fn non_convergence_names_the_failing_step() {
    let data = toy(14, 10);
    let params = KernelParams::rbf(50.0, 0.5).unwrap();
    let opts = NewtonOptions {
        max_iters: 3,
        ..NewtonOptions::default()
    };
    match distribution_centric_gpc_iterated(&data, &params, 3, &opts) {
        Err(Error::Step { step, source }) => {
            assert_eq!(step, 1);
            assert!(matches!(*source, Error::NonConvergence { .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
}
