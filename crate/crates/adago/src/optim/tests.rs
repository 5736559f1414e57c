use super::*;
use crate::models::Param;
use crate::rng::{stream_rng, Stream};
use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};

fn rand_matrix(rng: &mut impl rand::Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn scalar(x: f64) -> Matrix {
    Matrix::from_rows(&[vec![x]])
}

fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    a.sub(b).max_abs()
}

#[test]
fn momentum_with_mu_zero_is_the_gradient() {
    let mut rng = stream_rng(7, Stream::Probe, 0);
    let g = rand_matrix(&mut rng, 3, 4);
    let m = momentum_update(&Matrix::zeros(3, 4), &g, 0.0).unwrap();
    assert_eq!(m.data(), g.data());
}

#[test]
fn momentum_first_step_scales_by_one_minus_mu() {
    let g = scalar(2.0);
    let m = momentum_update(&Matrix::zeros(1, 1), &g, 0.95).unwrap();
    assert!((m[(0, 0)] - 0.1).abs() < 1e-15);
}

#[test]
fn momentum_approaches_a_constant_gradient_geometrically() {
    // With M_0 = 0 and a constant gradient G, M_k = (1 - mu^k) G, so the gap
    // to G shrinks by exactly mu per step.
    let mut rng = stream_rng(8, Stream::Probe, 0);
    let g = rand_matrix(&mut rng, 2, 3);
    let mu = 0.9;
    let mut m = Matrix::zeros(2, 3);
    for k in 1..=20 {
        m = momentum_update(&m, &g, mu).unwrap();
        let gap = frobenius_norm(&m.sub(&g)).unwrap();
        let expected = mu.powi(k) * frobenius_norm(&g).unwrap();
        assert!((gap - expected).abs() < 1e-12 * expected.max(1.0), "step {k}");
    }
}

#[test]
fn momentum_rejects_shape_mismatch() {
    let err = momentum_update(&Matrix::zeros(2, 2), &Matrix::zeros(2, 3), 0.5);
    assert!(err.is_err());
}

#[test]
fn stepsize_unclamped_hand_value() {
    // eta = 0.5, eps = 5e-3, gamma = 100, v_prev^2 = 1, ||G|| = 3:
    // v_new^2 = 1 + 9 = 10 and alpha = 0.5 * 3 / sqrt(10).
    let cfg = OptimizerConfig {
        eta: 0.5,
        epsilon: 5e-3,
        gamma: 100.0,
        ..OptimizerConfig::default()
    };
    let out = adago_stepsize(3.0, 1.0, &cfg).unwrap();
    assert_eq!(out.v_new_sq, 10.0);
    assert_eq!(out.alpha, 0.4743416490252569);
    assert!(!out.clamped);
    assert!(!out.floored);
}

#[test]
fn stepsize_clamp_engages_above_gamma() {
    // gamma = 1 caps ||G|| = 5, so v_new^2 = 1 + 1 = 2 and
    // alpha = 0.1 * 1 / sqrt(2).
    let cfg = OptimizerConfig {
        eta: 0.1,
        epsilon: 1e-6,
        gamma: 1.0,
        ..OptimizerConfig::default()
    };
    let out = adago_stepsize(5.0, 1.0, &cfg).unwrap();
    assert_eq!(out.v_new_sq, 2.0);
    assert_eq!(out.alpha, 0.07071067811865475);
    assert!(out.clamped);
    assert!(!out.floored);
}

#[test]
fn stepsize_zero_gradient_falls_to_the_floor() {
    let cfg = OptimizerConfig::default();
    let out = adago_stepsize(0.0, 4.0, &cfg).unwrap();
    assert_eq!(out.v_new_sq, 4.0, "zero gradient must not grow the accumulator");
    assert_eq!(out.alpha, cfg.epsilon);
    assert!(out.floored);
    assert!(!out.clamped);
}

#[test]
fn stepsize_floor_wins_when_adaptive_part_is_small() {
    let cfg = OptimizerConfig {
        eta: 0.01,
        epsilon: 0.5,
        gamma: 1e3,
        ..OptimizerConfig::default()
    };
    let out = adago_stepsize(1.0, 1.0, &cfg).unwrap();
    assert_eq!(out.alpha, 0.5);
    assert!(out.floored);
}

#[test]
fn stepsize_rejects_bad_inputs() {
    let cfg = OptimizerConfig::default();
    assert!(adago_stepsize(-1.0, 1.0, &cfg).is_err());
    assert!(adago_stepsize(f64::NAN, 1.0, &cfg).is_err());
    assert!(adago_stepsize(1.0, 0.0, &cfg).is_err());
    let bad = OptimizerConfig { eta: 0.0, ..OptimizerConfig::default() };
    assert!(adago_stepsize(1.0, 1.0, &bad).is_err());
}

#[test]
fn config_validation_rejects_out_of_range_fields() {
    let ok = OptimizerConfig::default();
    assert!(ok.validate().is_ok());
    for bad in [
        OptimizerConfig { eta: -1.0, ..ok },
        OptimizerConfig { mu: 1.0, ..ok },
        OptimizerConfig { beta2: 1.0, ..ok },
        OptimizerConfig { epsilon: 0.0, ..ok },
        OptimizerConfig { gamma: f64::INFINITY, ..ok },
        OptimizerConfig { v0: 0.0, ..ok },
    ] {
        assert!(bad.validate().is_err(), "{bad:?} should be rejected");
    }
}

#[test]
fn adago_single_scalar_step_matches_hand_algebra() {
    // mu = 0 on a 1x1 parameter: the step moves by exactly alpha * sign(g).
    let cfg = OptimizerConfig {
        eta: 0.5,
        mu: 0.0,
        epsilon: 5e-3,
        gamma: 100.0,
        ..OptimizerConfig::default()
    };
    let mut state = AdaGOState::new(1, 1, &cfg);
    let (next, report) = adago_step(&scalar(2.0), &scalar(3.0), &mut state, &cfg).unwrap();
    assert_eq!(report.stepsize, 0.4743416490252569);
    assert_eq!(next[(0, 0)], 2.0 - 0.4743416490252569);
    assert_eq!(report.v_after, Some(10f64.sqrt()));
    assert_eq!(report.grad_norm_f, 3.0);
    assert_eq!(state.step_count, 1);
}

#[test]
fn adago_update_norm_is_alpha_times_sqrt_rank() {
    // A full-rank square momentum orthogonalizes to an orthogonal matrix with
    // Frobenius norm sqrt(n).
    let mut rng = stream_rng(11, Stream::Probe, 0);
    let cfg = OptimizerConfig::default();
    let mut state = AdaGOState::new(3, 3, &cfg);
    let grad = rand_matrix(&mut rng, 3, 3);
    let param = rand_matrix(&mut rng, 3, 3);
    let (_, report) = adago_step(&param, &grad, &mut state, &cfg).unwrap();
    let expected = report.stepsize * 3f64.sqrt();
    assert!((report.update_norm_f - expected).abs() < 1e-9);
}

#[test]
fn adago_skips_when_momentum_cancels_to_zero() {
    // Choose G so that mu * M_prev + (1 - mu) * G = 0. The parameter must not
    // move, but the accumulator still advances.
    let cfg = OptimizerConfig { mu: 0.5, ..OptimizerConfig::default() };
    let mut state = AdaGOState::new(1, 1, &cfg);
    state.momentum = scalar(4.0);
    let grad = scalar(-4.0); // 0.5 * 4 + 0.5 * (-4) = 0
    let param = scalar(1.0);
    let v_before = state.v_sq;
    let (next, report) = adago_step(&param, &grad, &mut state, &cfg).unwrap();
    assert_eq!(next[(0, 0)], 1.0);
    assert_eq!(report.update_norm_f, 0.0);
    assert_eq!(report.stepsize, cfg.epsilon);
    assert!(report.floored);
    assert_eq!(state.v_sq, v_before + 16.0);
}

#[test]
fn adago_floor_keeps_moving_along_stale_momentum() {
    // A zero gradient gives alpha = eps, but a nonzero momentum buffer still
    // defines a direction, so the step has norm eps * sqrt(rank).
    let cfg = OptimizerConfig { mu: 0.9, epsilon: 1e-3, ..OptimizerConfig::default() };
    let mut state = AdaGOState::new(2, 2, &cfg);
    state.momentum = Matrix::identity(2);
    let v_before = state.v_sq;
    let (next, report) =
        adago_step(&scalar_like_identity(2, 5.0), &Matrix::zeros(2, 2), &mut state, &cfg)
            .unwrap();
    assert_eq!(report.stepsize, 1e-3);
    assert!(report.floored);
    assert!((report.update_norm_f - 1e-3 * 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(state.v_sq, v_before, "zero gradient must leave the accumulator alone");
    assert!((next[(0, 0)] - (5.0 - 1e-3)).abs() < 1e-12);
}

fn scalar_like_identity(n: usize, x: f64) -> Matrix {
    Matrix::identity(n).scale(x)
}

#[test]
fn muon_gives_identical_updates_for_identical_gradients() {
    // With a constant gradient the momentum stays parallel to it, and Muon's
    // orthogonalized direction is scale invariant, so consecutive updates are
    // the same matrix.
    let mut rng = stream_rng(13, Stream::Probe, 0);
    let cfg = OptimizerConfig { eta: 0.1, mu: 0.9, ..OptimizerConfig::default() };
    let grad = rand_matrix(&mut rng, 4, 3);
    let mut state = MuonState::new(4, 3);
    let p0 = rand_matrix(&mut rng, 4, 3);
    let (p1, _) = muon_step(&p0, &grad, &mut state, &cfg).unwrap();
    let (p2, _) = muon_step(&p1, &grad, &mut state, &cfg).unwrap();
    let delta1 = p1.sub(&p0);
    let delta2 = p2.sub(&p1);
    assert!(max_abs_diff(&delta1, &delta2) < 1e-10);
}

#[test]
fn muon_without_momentum_matches_orthogonalized_gd() {
    let mut rng = stream_rng(14, Stream::Probe, 0);
    let cfg = OptimizerConfig { eta: 0.05, mu: 0.0, ..OptimizerConfig::default() };
    let grad = rand_matrix(&mut rng, 3, 5);
    let param = rand_matrix(&mut rng, 3, 5);
    let mut state = MuonState::new(3, 5);
    let (via_muon, _) = muon_step(&param, &grad, &mut state, &cfg).unwrap();
    let via_ogd = ogd_step(&param, &grad, 0.05).unwrap();
    assert!(max_abs_diff(&via_muon, &via_ogd) < 1e-12);
}

#[test]
fn gd_contracts_a_scalar_quadratic() {
    // For L(w) = w^2 / 2 the gradient is w, so eta = 0.5 halves the iterate.
    let mut w = scalar(1.0);
    for _ in 0..10 {
        w = gd_step(&w, &w.clone(), 0.5).unwrap();
    }
    assert!((w[(0, 0)] - 2f64.powi(-10)).abs() < 1e-18);
}

#[test]
fn ogd_skips_zero_gradients_and_ignores_gradient_scale() {
    let mut rng = stream_rng(15, Stream::Probe, 0);
    let param = rand_matrix(&mut rng, 2, 2);
    let same = ogd_step(&param, &Matrix::zeros(2, 2), 0.1).unwrap();
    assert_eq!(same.data(), param.data());

    let grad = rand_matrix(&mut rng, 2, 2);
    let a = ogd_step(&param, &grad, 0.1).unwrap();
    let b = ogd_step(&param, &grad.scale(10.0), 0.1).unwrap();
    assert!(max_abs_diff(&a, &b) < 1e-10);
    // Full-rank 2x2: the update direction is orthogonal, norm sqrt(2).
    let moved = frobenius_norm(&a.sub(&param)).unwrap();
    assert!((moved - 0.1 * 2f64.sqrt()).abs() < 1e-10);
}

#[test]
fn adam_first_step_is_roughly_eta_times_sign() {
    // Bias correction makes mhat = g and vhat = g^2 on step one, so the move
    // is eta * g / (|g| + adam_eps) per coordinate.
    let cfg = OptimizerConfig { eta: 1e-3, ..OptimizerConfig::default() };
    let mut state = AdamState::new(1, 3);
    let param = Matrix::zeros(1, 3);
    let grad = Matrix::from_rows(&[vec![0.5, -2.0, 1e-12]]);
    let (next, _) = adam_step(&param, &grad, &mut state, &cfg).unwrap();
    assert!((next[(0, 0)] + 1e-3).abs() < 1e-9);
    assert!((next[(0, 1)] - 1e-3).abs() < 1e-9);
    // A gradient far below adam_eps barely moves.
    assert!(next[(0, 2)].abs() < 1e-6);
}

#[test]
fn adam_stays_put_on_zero_gradients() {
    let cfg = OptimizerConfig::default();
    let mut state = AdamState::new(2, 2);
    let param = Matrix::identity(2);
    let (next, report) = adam_step(&param, &Matrix::zeros(2, 2), &mut state, &cfg).unwrap();
    assert_eq!(next.data(), param.data());
    assert_eq!(report.update_norm_f, 0.0);
}

#[test]
fn adagrad_norm_first_step_divides_by_sqrt_two() {
    // v0 = 1 and ||G|| = 1 give v^2 = 2, so the effective stepsize is
    // eta / sqrt(2).
    let cfg = OptimizerConfig { eta: 1.0, v0: 1.0, ..OptimizerConfig::default() };
    let mut state = AdaGradNormState::new(&cfg);
    let (next, report) = adagrad_norm_step(&scalar(0.0), &scalar(1.0), &mut state, &cfg).unwrap();
    assert_eq!(report.stepsize, 1.0 / 2f64.sqrt());
    assert!((report.stepsize - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    assert_eq!(next[(0, 0)], -report.stepsize);
    assert_eq!(report.v_after, Some(2f64.sqrt()));
}

#[test]
fn tuned_defaults_match_the_benchmark_table() {
    use OptimizerKind::*;
    let a = OptimizerConfig::tuned(Adam, TaskKind::Regression);
    assert_eq!((a.eta, a.beta1, a.beta2, a.adam_eps), (0.01, 0.9, 0.95, 1e-8));
    assert_eq!(OptimizerConfig::tuned(Adam, TaskKind::Classification).eta, 3e-4);
    assert_eq!(OptimizerConfig::tuned(Muon, TaskKind::Regression).eta, 5e-3);
    assert_eq!(OptimizerConfig::tuned(HybridMuon, TaskKind::Classification).eta, 2e-3);
    let g = OptimizerConfig::tuned(HybridAdago, TaskKind::Regression);
    assert_eq!((g.eta, g.epsilon, g.mu, g.gamma, g.v0), (0.5, 5e-3, 0.95, 1e3, 1.0));
    let c = OptimizerConfig::tuned(Adago, TaskKind::Classification);
    assert_eq!((c.eta, c.epsilon), (5e-2, 5e-4));
}

#[test]
fn stochastic_schedule_hits_frozen_values_at_ten_thousand_steps() {
    // T = 1e4: eps = T^(-3/4) = 1e-3, mu = 1 - T^(-1/2) = 0.99,
    // eta = T^(-0.425) = 10^(-1.7).
    let cfg = OptimizerConfig::schedule_stochastic_b1(10_000, 0.05).unwrap();
    assert!((cfg.epsilon - 1e-3).abs() < 1e-18);
    assert!((cfg.mu - 0.99).abs() < 1e-15);
    assert!((cfg.eta - 10f64.powf(-1.7)).abs() < 1e-15);
}

#[test]
fn deterministic_schedule_drops_momentum() {
    let cfg = OptimizerConfig::schedule_deterministic(10_000, 0.05).unwrap();
    assert_eq!(cfg.mu, 0.0);
    assert!((cfg.epsilon - 1e-2).abs() < 1e-17);
    assert!((cfg.eta - 10f64.powf(-0.2)).abs() < 1e-15);
    assert!(OptimizerConfig::schedule_deterministic(0, 0.05).is_err());
    assert!(OptimizerConfig::schedule_stochastic_b1(100, 0.0).is_err());
}

#[test]
fn optimizer_names_round_trip() {
    for kind in OptimizerKind::ALL {
        assert_eq!(OptimizerKind::parse(kind.name()).unwrap(), kind);
        assert_eq!(format!("{kind}"), kind.name());
    }
    assert!(OptimizerKind::parse("sgd-with-typo").is_err());
    assert!(OptimizerKind::HybridAdago.is_hybrid());
    assert_eq!(OptimizerKind::HybridAdago.matrix_rule(), Some(MatrixRule::Adago));
    assert_eq!(OptimizerKind::Adam.matrix_rule(), None);
}

fn two_param_set(rng: &mut impl rand::Rng) -> ParamSet {
    let w = Param {
        name: "w".into(),
        kind: ParamKind::MatrixParam,
        value: rand_matrix(rng, 3, 2),
        grad: rand_matrix(rng, 3, 2),
    };
    let b = Param {
        name: "b".into(),
        kind: ParamKind::VectorParam,
        value: rand_matrix(rng, 1, 3),
        grad: rand_matrix(rng, 1, 3),
    };
    ParamSet::from_params(vec![w, b])
}

#[test]
fn hybrid_engine_routes_matrices_and_vectors_differently() {
    let mut rng = stream_rng(21, Stream::Probe, 0);
    let cfg = OptimizerConfig::tuned(OptimizerKind::HybridAdago, TaskKind::Regression);
    let params = two_param_set(&mut rng);

    let mut via_engine = params.clone();
    let mut engine = Engine::new(OptimizerKind::HybridAdago, &via_engine, cfg).unwrap();
    let reports = engine.step(&mut via_engine).unwrap();
    assert_eq!(reports.len(), 2);

    // Reproduce both updates by hand with the standalone step functions.
    let mut adago_state = AdaGOState::new(3, 2, &cfg);
    let (w_expected, w_report) =
        adago_step(&params.params()[0].value, &params.params()[0].grad, &mut adago_state, &cfg)
            .unwrap();
    // Inside a hybrid the Adam-managed slots run at `adam_eta`, not the
    // matrix rule's stepsize.
    let bias_cfg = OptimizerConfig { eta: cfg.adam_eta.unwrap(), ..cfg };
    let mut adam_state = AdamState::new(1, 3);
    let (b_expected, b_report) =
        adam_step(&params.params()[1].value, &params.params()[1].grad, &mut adam_state, &bias_cfg)
            .unwrap();

    assert_eq!(via_engine.params()[0].value.data(), w_expected.data());
    assert_eq!(via_engine.params()[1].value.data(), b_expected.data());
    assert_eq!(reports[0].v_after, w_report.v_after);
    assert_eq!(reports[1].v_after, None, "the Adam-managed bias has no accumulator");
    assert_eq!(reports[1].stepsize, b_report.stepsize);
    assert_eq!(reports[1].stepsize, 0.01, "bias slots take the task's tuned Adam rate");
}

#[test]
fn hybrid_engine_on_matrices_only_equals_the_pure_rule() {
    let mut rng = stream_rng(22, Stream::Probe, 0);
    let make = |rng: &mut rand_chacha::ChaCha8Rng| {
        ParamSet::from_params(vec![Param {
            name: "w".into(),
            kind: ParamKind::MatrixParam,
            value: rand_matrix(rng, 4, 4),
            grad: rand_matrix(rng, 4, 4),
        }])
    };
    let seed_params = make(&mut rng);
    let cfg = OptimizerConfig::default();

    let mut via_hybrid = seed_params.clone();
    let mut via_pure = seed_params;
    let mut hybrid = Engine::new(OptimizerKind::HybridAdago, &via_hybrid, cfg).unwrap();
    let mut pure = Engine::new(OptimizerKind::Adago, &via_pure, cfg).unwrap();
    for _ in 0..3 {
        hybrid.step(&mut via_hybrid).unwrap();
        pure.step(&mut via_pure).unwrap();
    }
    assert_eq!(via_hybrid.params()[0].value.data(), via_pure.params()[0].value.data());
}

#[test]
fn hybrid_engine_on_vectors_only_equals_adam() {
    let mut rng = stream_rng(23, Stream::Probe, 0);
    let make_params = |value: Matrix, grad: Matrix| {
        ParamSet::from_params(vec![Param {
            name: "b".into(),
            kind: ParamKind::VectorParam,
            value,
            grad,
        }])
    };
    let value = rand_matrix(&mut rng, 1, 5);
    let grad = rand_matrix(&mut rng, 1, 5);
    let cfg = OptimizerConfig::default();

    let mut via_hybrid = make_params(value.clone(), grad.clone());
    let mut via_adam = make_params(value, grad);
    let mut hybrid = Engine::new(OptimizerKind::HybridMuon, &via_hybrid, cfg).unwrap();
    let mut adam = Engine::new(OptimizerKind::Adam, &via_adam, cfg).unwrap();
    hybrid.step(&mut via_hybrid).unwrap();
    adam.step(&mut via_adam).unwrap();
    assert_eq!(via_hybrid.params()[0].value.data(), via_adam.params()[0].value.data());
}

#[test]
fn engine_rejects_a_parameter_count_change() {
    let mut rng = stream_rng(24, Stream::Probe, 0);
    let params = two_param_set(&mut rng);
    let mut engine = Engine::new(OptimizerKind::Gd, &params, OptimizerConfig::default()).unwrap();
    let mut fewer = ParamSet::from_params(vec![params.params()[0].clone()]);
    assert!(engine.step(&mut fewer).is_err());
}

proptest! {
    #[test]
    fn stepsize_stays_between_floor_and_trust_bound(
        grad_norm in 0.0..1e6f64,
        v_prev in 1e-3..1e3f64,
        eta in 1e-4..10.0f64,
        epsilon in 1e-9..1e-1f64,
        gamma in 1e-2..1e4f64,
    ) {
        let cfg = OptimizerConfig { eta, epsilon, gamma, ..OptimizerConfig::default() };
        let v_prev_sq = v_prev * v_prev;
        let out = adago_stepsize(grad_norm, v_prev_sq, &cfg).unwrap();
        // Floor from below; from above the accumulator only grows, so the
        // adaptive part never beats eta * min(g, gamma) / v_prev.
        prop_assert!(out.alpha >= epsilon);
        let cap = epsilon.max(eta * grad_norm.min(gamma) / v_prev);
        prop_assert!(out.alpha <= cap * (1.0 + 1e-12));
        prop_assert!(out.v_new_sq >= v_prev_sq);
        prop_assert!(out.v_new_sq - v_prev_sq <= gamma * gamma * (1.0 + 1e-12));
        prop_assert_eq!(out.clamped, grad_norm > gamma);
    }

    #[test]
    fn momentum_fixed_point_is_the_gradient(
        x in -1e3..1e3f64,
        mu in 0.0..0.999f64,
    ) {
        // If M_prev already equals G, the update must stay there.
        let g = scalar(x);
        let m = momentum_update(&g, &g, mu).unwrap();
        prop_assert!((m[(0, 0)] - x).abs() <= 1e-12 * x.abs().max(1.0));
    }

    #[test]
    fn accumulator_is_monotone_under_random_gradients(
        grads in proptest::collection::vec(-50.0..50.0f64, 1..40),
        gamma in 0.5..30.0f64,
    ) {
        let cfg = OptimizerConfig { gamma, ..OptimizerConfig::default() };
        let mut state = AdaGOState::new(1, 1, &cfg);
        let mut param = scalar(0.0);
        let mut last_v = cfg.v0;
        for g in grads {
            let (next, report) = adago_step(&param, &scalar(g), &mut state, &cfg).unwrap();
            param = next;
            let v = report.v_after.unwrap();
            prop_assert!(v >= last_v - 1e-12);
            prop_assert!(v * v - last_v * last_v <= gamma * gamma + 1e-9);
            prop_assert!(report.stepsize >= cfg.epsilon);
            last_v = v;
        }
    }
}
