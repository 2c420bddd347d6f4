//! Finite-difference oracles for the derivative engine.

use hcebnn::surrogate::{
    evaluate_batch, forward, init_parameters, loss_parameter_gradient, Activation, Architecture,
    EvalSensitivity, NetworkEval, PointSet, SpaceTimePoint,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

fn shifted(p: &SpaceTimePoint, axis: usize, h: f64) -> SpaceTimePoint {
    let mut q = p.clone();
    if axis < q.coords.len() {
        q.coords[axis] += h;
    } else {
        *q.time.as_mut().unwrap() += h;
    }
    q
}

fn random_params(arch: &Architecture, seed: u64) -> Vec<f64> {
    let mut p = init_parameters(arch, seed).into_inner();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    // nonzero biases so the oracle sees a generic network
    for v in p.iter_mut() {
        if *v == 0.0 {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    p
}

/// Per-point finite-difference comparison; returns (max grad err, max hess err).
fn compare_with_fd(arch: &Architecture, params: &[f64], points: &[SpaceTimePoint]) -> (f64, f64) {
    let h = 1e-4;
    let set = PointSet::new(points).unwrap();
    let evals = evaluate_batch(params, arch, &set).unwrap();
    let mut worst = (0.0f64, 0.0f64);
    for (p, e) in points.iter().zip(&evals) {
        let f0 = forward(params, arch, p).unwrap();
        let ds = p.coords.len();
        let mut fd_grad = Vec::new();
        let mut fd_hess = Vec::new();
        for axis in 0..p.input_dim() {
            let up = forward(params, arch, &shifted(p, axis, h)).unwrap();
            let dn = forward(params, arch, &shifted(p, axis, -h)).unwrap();
            fd_grad.push((up - dn) / (2.0 * h));
            if axis < ds {
                fd_hess.push((up - 2.0 * f0 + dn) / (h * h));
            }
        }
        let mut grad = e.grad_space.clone();
        if let Some(gt) = e.grad_time {
            grad.push(gt);
        }
        worst.0 = worst.0.max(rel_err(&grad, &fd_grad));
        worst.1 = worst.1.max(rel_err(&e.hess_diag, &fd_hess));
    }
    worst
}

#[test]
fn input_derivatives_match_finite_differences_on_default_architecture() {
    let arch = Architecture::new(vec![3, 20, 20, 20, 1], Activation::Sigmoid).unwrap();
    let params = random_params(&arch, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let points: Vec<_> = (0..100)
        .map(|_| SpaceTimePoint::spatial(vec![rng.random(), rng.random(), rng.random()]))
        .collect();
    let (g, h) = compare_with_fd(&arch, &params, &points);
    assert!(g < 1e-5, "gradient relative error {g}");
    assert!(h < 1e-4, "hessian relative error {h}");
}

#[test]
fn time_dependent_tanh_network_derivatives() {
    let arch = Architecture::new(vec![3, 12, 12, 1], Activation::Tanh).unwrap();
    let params = random_params(&arch, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let points: Vec<_> = (0..40)
        .map(|_| SpaceTimePoint::with_time(vec![rng.random(), rng.random()], rng.random()))
        .collect();
    let (g, h) = compare_with_fd(&arch, &params, &points);
    assert!(g < 1e-6, "gradient relative error {g}");
    assert!(h < 1e-4, "hessian relative error {h}");
}

/// Loss touching every eval field: (T - c)^2 + (Σ hess - 0.3 dT/dt)^2 + 0.1 Σ grad^2.
fn composite_loss(e: &NetworkEval) -> (f64, EvalSensitivity) {
    let ds = e.grad_space.len();
    let gt = e.grad_time.unwrap_or(0.0);
    let r = e.hess_diag.iter().sum::<f64>() - 0.3 * gt;
    let dv = e.value - 0.25;
    let mut loss = dv * dv + r * r;
    let mut s = EvalSensitivity::zeros(ds);
    s.value = 2.0 * dv;
    for k in 0..ds {
        loss += 0.1 * e.grad_space[k].powi(2);
        s.grad_space[k] = 0.2 * e.grad_space[k];
        s.hess_diag[k] = 2.0 * r;
    }
    if e.grad_time.is_some() {
        s.grad_time = -0.6 * r;
    }
    (loss, s)
}

fn check_param_gradient(arch: &Architecture, params: &[f64], points: &[SpaceTimePoint]) -> f64 {
    let set = PointSet::new(points).unwrap();
    let analytic = loss_parameter_gradient(params, arch, &set, |_, e| composite_loss(e)).unwrap();
    let total = |p: &[f64]| -> f64 {
        evaluate_batch(p, arch, &set)
            .unwrap()
            .iter()
            .map(|e| composite_loss(e).0)
            .sum()
    };
    assert!((analytic.loss - total(params)).abs() < 1e-10 * analytic.loss.abs().max(1.0));
    let h = 1e-5;
    let mut fd = vec![0.0; params.len()];
    let mut p = params.to_vec();
    for i in 0..params.len() {
        p[i] = params[i] + h;
        let up = total(&p);
        p[i] = params[i] - h;
        let dn = total(&p);
        p[i] = params[i];
        fd[i] = (up - dn) / (2.0 * h);
    }
    rel_err(&analytic.gradient, &fd)
}

#[test]
fn parameter_gradient_of_residual_loss_matches_finite_differences() {
    let arch = Architecture::new(vec![2, 5, 1], Activation::Sigmoid).unwrap();
    let params = random_params(&arch, 21);
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let points: Vec<_> = (0..10)
        .map(|_| SpaceTimePoint::spatial(vec![rng.random(), rng.random()]))
        .collect();
    let err = check_param_gradient(&arch, &params, &points);
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn parameter_gradient_deep_time_dependent() {
    let arch = Architecture::new(vec![3, 6, 5, 1], Activation::Tanh).unwrap();
    let params = random_params(&arch, 31);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let points: Vec<_> = (0..10)
        .map(|_| SpaceTimePoint::with_time(vec![rng.random(), rng.random()], rng.random()))
        .collect();
    let err = check_param_gradient(&arch, &params, &points);
    assert!(err < 1e-4, "relative error {err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn derivative_consistency_random_small_nets(
        seed in 0u64..10_000,
        width in 2usize..8,
        x in 0.0f64..1.0,
        y in 0.0f64..1.0,
        t in 0.0f64..1.0,
    ) {
        let arch = Architecture::new(vec![3, width, width, 1], Activation::Sigmoid).unwrap();
        let params = random_params(&arch, seed);
        let (g, h) = compare_with_fd(&arch, &params, &[SpaceTimePoint::with_time(vec![x, y], t)]);
        prop_assert!(g < 1e-4, "gradient relative error {}", g);
        prop_assert!(h < 1e-3, "hessian relative error {}", h);
    }

    #[test]
    fn gradient_consistency_random_small_nets(seed in 0u64..10_000) {
        let arch = Architecture::new(vec![2, 4, 1], Activation::Sigmoid).unwrap();
        let params = random_params(&arch, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        let points: Vec<_> = (0..5)
            .map(|_| SpaceTimePoint::spatial(vec![rng.random(), rng.random()]))
            .collect();
        let err = check_param_gradient(&arch, &params, &points);
        prop_assert!(err < 1e-4, "relative error {}", err);
    }

    #[test]
    fn evaluation_is_deterministic(seed in 0u64..1000, x in 0.0f64..1.0) {
        let arch = Architecture::new(vec![1, 6, 1], Activation::Tanh).unwrap();
        let params = random_params(&arch, seed);
        let p = SpaceTimePoint::spatial(vec![x]);
        prop_assert_eq!(
            forward(&params, &arch, &p).unwrap().to_bits(),
            forward(&params, &arch, &p).unwrap().to_bits()
        );
    }
}
