use proptest::prelude::*;

use dynreg_core::meta::{run_stream, InnerAdaptConfig, RoundLoss};
use dynreg_core::numerics::{l2_norm_sq, spawn_rng_stream};
use dynreg_core::optimizer::{
    dts_ag_step, make_config_adagrad, smoothed_stochastic_gradient, weight_sum, OptimizerConfig,
    OptimizerState, SmoothingWindow, StepSchedule,
};
use dynreg_core::regret::{
    bound_expectation, bound_highprob, dlr_cumulative, effective_constants,
    exact_smoothed_gradient, slr_cumulative, variance_proxy, BoundInputs, OptimizerFamily,
};
use dynreg_core::tasks::{
    loss_constants, make_drifting_sine_stream, Loss, LossConstants, NoiseModel, SineLoss,
};
use dynreg_core::RealVector;

fn vec_strategy(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, dim)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn norm_is_zero_exactly_for_the_zero_vector(v in prop::collection::vec(prop_oneof![Just(0.0), -5.0f64..5.0], 1..8)) {
        let n = l2_norm_sq(&RealVector::new(v.clone()).unwrap()).unwrap();
        prop_assert!(n >= 0.0);
        prop_assert_eq!(n == 0.0, v.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn weight_sum_matches_direct_sum(alpha in 0.01f64..=1.0, w in 1usize..300) {
        let direct: f64 = (0..w).map(|r| alpha.powi(r as i32)).sum();
        let closed = weight_sum(alpha, w).unwrap();
        prop_assert!((closed - direct).abs() <= 1e-12 * direct.max(1.0), "{closed} vs {direct}");
    }

    #[test]
    fn second_moment_never_decreases_without_forgetting(
        grads in prop::collection::vec(vec_strategy(3), 1..30),
        eta in 0.001f64..1.0,
    ) {
        let cfg = make_config_adagrad(eta, 1e-8, 1.0, 1).unwrap();
        let mut state = OptimizerState::new(3);
        let mut x = RealVector::zeros(3);
        let mut prev = vec![0.0; 3];
        for g in grads {
            x = dts_ag_step(&mut state, &cfg, &x, &RealVector::new(g).unwrap()).unwrap().x;
            for (now, before) in state.v().iter().zip(&prev) {
                prop_assert!(now >= before);
            }
            prev = state.v().to_vec();
        }
    }

    #[test]
    fn first_step_length_is_scale_free(g in vec_strategy(4), c in 0.01f64..100.0) {
        prop_assume!(g.iter().all(|x| x.abs() > 1e-3));
        let cfg = OptimizerConfig {
            beta1: 0.0,
            beta2: 1.0,
            epsilon: 1e-300,
            eta: 0.5,
            schedule: StepSchedule::Constant,
            alpha: 1.0,
            window: 1,
        };
        let x = RealVector::zeros(4);
        let a = dts_ag_step(&mut OptimizerState::new(4), &cfg, &x, &RealVector::new(g.clone()).unwrap()).unwrap();
        let scaled: Vec<f64> = g.iter().map(|v| c * v).collect();
        let b = dts_ag_step(&mut OptimizerState::new(4), &cfg, &x, &RealVector::new(scaled).unwrap()).unwrap();
        for k in 0..4 {
            prop_assert!((a.x[k].abs() - b.x[k].abs()).abs() <= 1e-12);
            prop_assert!((a.x[k].abs() - 0.5).abs() <= 1e-12);
        }
    }

    #[test]
    fn rng_streams_replay_bit_for_bit(seed in any::<u64>(), id in any::<u64>()) {
        let mut a = spawn_rng_stream(seed, id);
        let mut b = spawn_rng_stream(seed, id);
        for _ in 0..20 {
            prop_assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn smoothed_gradient_is_a_function_of_window_and_seed(
        seed in any::<u64>(),
        alpha in 0.1f64..=1.0,
        w in 1usize..6,
    ) {
        let stream = make_drifting_sine_stream(3, 1.0, 1.0, 0.1, NoiseModel::gaussian(0.5).unwrap(), 5).unwrap();
        let mut window: SmoothingWindow<SineLoss> = SmoothingWindow::new(alpha, w).unwrap();
        for t in 1..=w as u64 {
            window.push(RealVector::new(vec![0.1 * t as f64; 3]).unwrap(), stream.round(t).unwrap().train);
        }
        let rng = spawn_rng_stream(seed, 0);
        let a = smoothed_stochastic_gradient(&window, stream.noise(), &rng).unwrap();
        let b = smoothed_stochastic_gradient(&window, stream.noise(), &rng).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn sine_losses_respect_their_constants(
        dim in 1usize..6,
        amp in 0.1f64..3.0,
        scale in 0.1f64..3.0,
        seed in 0u64..1000,
        u in vec_strategy(6),
        v in vec_strategy(6),
        t in 1u64..200,
    ) {
        let stream = make_drifting_sine_stream(dim, amp, scale, 0.05, NoiseModel::exact(), seed).unwrap();
        let c = loss_constants(&stream);
        let loss = stream.round(t).unwrap().train;
        let (u, v) = (RealVector::new(u[..dim].to_vec()).unwrap(), RealVector::new(v[..dim].to_vec()).unwrap());
        let dist = u.distance(&v).unwrap();
        prop_assume!(dist > 1e-9);
        let (lu, lv) = (loss.value(&u).unwrap(), loss.value(&v).unwrap());
        prop_assert!(lu.abs() <= c.bound * (1.0 + 1e-12));
        prop_assert!((lu - lv).abs() <= c.lipschitz * dist * (1.0 + 1e-12));
        let dg = loss.gradient(&u).unwrap().distance(&loss.gradient(&v).unwrap()).unwrap();
        prop_assert!(dg <= c.smoothness * dist * (1.0 + 1e-12));
    }

    #[test]
    fn composite_loss_respects_effective_constants(
        theta in 0.0f64..0.5,
        seed in 0u64..1000,
        u in vec_strategy(3),
        v in vec_strategy(3),
    ) {
        let stream = make_drifting_sine_stream(3, 1.0, 1.5, 0.05, NoiseModel::exact(), seed).unwrap();
        let eff = effective_constants(&loss_constants(&stream), theta);
        let loss = RoundLoss::new(stream.round(3).unwrap(), theta);
        let (u, v) = (RealVector::new(u).unwrap(), RealVector::new(v).unwrap());
        let dist = u.distance(&v).unwrap();
        prop_assume!(dist > 1e-9);
        let dl = (loss.value(&u).unwrap() - loss.value(&v).unwrap()).abs();
        prop_assert!(dl <= eff.lipschitz * dist * (1.0 + 1e-12));
        let dg = loss.gradient(&u).unwrap().distance(&loss.gradient(&v).unwrap()).unwrap();
        prop_assert!(dg <= eff.smoothness * dist * (1.0 + 1e-12));
    }

    #[test]
    fn variance_proxies_are_well_signed(
        sigma in 0.0f64..3.0,
        alpha in 0.05f64..=1.0,
        w in 1usize..50,
        delta in 0.001f64..0.999,
    ) {
        let noise = if sigma == 0.0 { NoiseModel::exact() } else { NoiseModel::gaussian(sigma).unwrap() };
        let p = variance_proxy(&noise, alpha, w, Some(delta), Some(1.0)).unwrap();
        prop_assert!(p.mu >= 0.0);
        prop_assert_eq!(p.mu == 0.0, sigma == 0.0);
        prop_assert!(p.mu_bar.unwrap() > 0.0);
        prop_assert!(p.zeta_high_prob.unwrap() > 0.0);
    }

    #[test]
    fn bounds_do_not_grow_with_delta(
        d1 in 0.01f64..0.98,
        gap in 0.001f64..0.5,
        horizon in 1u64..5000,
        w in 1usize..500,
        alpha in 0.5f64..=1.0,
        sigma in 0.0f64..2.0,
        kappa in 0.1f64..3.0,
    ) {
        let d2 = (d1 + gap).min(0.999);
        let mut inputs = BoundInputs {
            horizon,
            dim: 5,
            delta: d1,
            eta: 0.1,
            beta1: 0.0,
            beta2: 1.0,
            epsilon: 1e-8,
            alpha,
            w,
            sigma,
            kappa: Some(kappa),
            theta: 0.1,
            varsigma: None,
            constants: LossConstants::new(1.0, 1.0, 1.0, 1.0).unwrap(),
        };
        let family_pairs = [(OptimizerFamily::Adagrad, 0.0, 1.0), (OptimizerFamily::Adam, 0.9, 0.999)];
        for (family, b1, b2) in family_pairs {
            inputs.beta1 = b1;
            inputs.beta2 = b2;
            let at = |delta: f64| {
                let mut i = inputs;
                i.delta = delta;
                (
                    bound_expectation(family, &i).unwrap().rhs,
                    bound_highprob(family, &i).unwrap().rhs,
                )
            };
            let (e1, h1) = at(d1);
            let (e2, h2) = at(d2);
            prop_assert!(e2 <= e1, "{family:?} expectation {e2} > {e1}");
            if h1.is_finite() {
                prop_assert!(h2 <= h1, "{family:?} high-prob {h2} > {h1}");
            }
        }
    }

    #[test]
    fn regret_ledgers_on_short_runs(seed in 0u64..500, w in 1usize..6, horizon in 1u64..25) {
        let noise = NoiseModel::gaussian(0.3).unwrap();
        let stream = make_drifting_sine_stream(3, 1.0, 1.0, 0.1, noise, seed).unwrap();
        let opt = make_config_adagrad(0.1, 1e-8, 1.0, w).unwrap();
        let trace = run_stream(&stream, horizon, &InnerAdaptConfig::new(0.1), &opt, seed).unwrap();
        let dlr = dlr_cumulative(&trace, w, 1.0).unwrap();
        let slr = slr_cumulative(&trace, w).unwrap();
        for ledger in [&dlr, &slr] {
            prop_assert!(ledger.per_round.iter().all(|v| v.is_finite() && *v >= 0.0));
            prop_assert!(ledger.cumulative.windows(2).all(|p| p[1] >= p[0]));
        }
        // α = 1: the unweighted mean of the stored gradients over a full-width window.
        for t in 1..=trace.len() {
            let s = exact_smoothed_gradient(&trace, t, w, 1.0).unwrap();
            let mut mean = [0.0; 3];
            for r in 0..w.min(t) {
                for (k, m) in mean.iter_mut().enumerate() {
                    *m += trace.records[t - 1 - r].exact_gradient[k] / w as f64;
                }
            }
            for (k, m) in mean.iter().enumerate() {
                prop_assert!((s[k] - m).abs() <= 1e-14);
            }
        }
        if w == 1 {
            let dlr1 = dlr_cumulative(&trace, 1, 0.7).unwrap();
            prop_assert_eq!(&dlr1.per_round, &slr.per_round);
        }
    }
}
