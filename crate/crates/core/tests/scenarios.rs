use std::time::Instant;

use dynreg_core::meta::{inner_adapt, run_stream, InnerAdaptConfig, RoundLoss, RunTrace};
use dynreg_core::numerics::{finite_difference_gradient, spawn_rng_stream, DEFAULT_FD_STEP};
use dynreg_core::optimizer::{make_config_adagrad, smoothed_stochastic_gradient, SmoothingWindow};
use dynreg_core::regret::{dlr_cumulative, slr_cumulative};
use dynreg_core::tasks::{
    loss_constants, make_drifting_sine_stream, make_piecewise_drift_stream, Loss, NoiseModel,
    SineLoss, TaskStream,
};
use dynreg_core::RealVector;

fn rel_err(a: &RealVector, b: &RealVector) -> f64 {
    a.distance(b).unwrap() / b.distance(&RealVector::zeros(b.dim())).unwrap().max(1e-3)
}

#[test]
fn finite_differences_agree_on_both_families() {
    let families: Vec<TaskStream> = vec![
        make_drifting_sine_stream(4, 1.3, 0.8, 0.05, NoiseModel::exact(), 1).unwrap(),
        make_piecewise_drift_stream(4, 10, 0.7, NoiseModel::exact(), 2).unwrap(),
    ];
    let mut rng = spawn_rng_stream(9, 0);
    for stream in &families {
        for i in 0..100u64 {
            let x = RealVector::new(rng.normal_vec(4, 1.0)).unwrap();
            let round = stream.round(1 + i).unwrap();
            let fd =
                finite_difference_gradient(|p| round.train.value(p).unwrap(), &x, DEFAULT_FD_STEP)
                    .unwrap();
            assert!(rel_err(&fd, &round.train.gradient(&x).unwrap()) <= 1e-5);
            let composite = RoundLoss::new(round, 0.1);
            let fd =
                finite_difference_gradient(|p| composite.value(p).unwrap(), &x, DEFAULT_FD_STEP)
                    .unwrap();
            assert!(rel_err(&fd, &composite.gradient(&x).unwrap()) <= 1e-5);
        }
    }
}

#[test]
fn losses_stay_within_amplitude_and_recorded_lipschitz() {
    let stream = make_drifting_sine_stream(3, 2.0, 1.5, 0.05, NoiseModel::exact(), 3).unwrap();
    let c = loss_constants(&stream);
    let mut rng = spawn_rng_stream(3, 1);
    let mut worst_ratio: f64 = 0.0;
    for i in 0..100_000u64 {
        let loss = stream.round(1 + i % 97).unwrap().train;
        let u = RealVector::new(rng.normal_vec(3, 3.0)).unwrap();
        let lu = loss.value(&u).unwrap();
        assert!(lu.abs() <= c.bound);
        if i % 10 == 0 {
            let v = RealVector::new(rng.normal_vec(3, 3.0)).unwrap();
            let ratio = (lu - loss.value(&v).unwrap()).abs() / u.distance(&v).unwrap();
            worst_ratio = worst_ratio.max(ratio);
        }
    }
    assert!(
        worst_ratio <= c.lipschitz,
        "{worst_ratio} > {}",
        c.lipschitz
    );
}

#[test]
fn gaussian_gradient_noise_moments() {
    let stream =
        make_drifting_sine_stream(4, 1.0, 1.0, 0.0, NoiseModel::gaussian(2.0).unwrap(), 4).unwrap();
    let round = stream.round(1).unwrap();
    let x = RealVector::new(vec![0.3, -0.2, 0.1, 0.5]).unwrap();
    let exact = round.train.gradient(&x).unwrap();
    let mut rng = spawn_rng_stream(4, 2);
    let n = 100_000;
    let mut mean = [0.0; 4];
    let mut sq = 0.0;
    for _ in 0..n {
        let g = round.sample_stochastic_gradient(&x, &mut rng).unwrap();
        let mut e2 = 0.0;
        for k in 0..4 {
            let e = g[k] - exact[k];
            mean[k] += e / n as f64;
            e2 += e * e;
        }
        sq += e2 / n as f64;
    }
    assert!((sq - 4.0).abs() / 4.0 <= 0.03, "E|n|^2 = {sq}");
    // Each coordinate has variance σ²/d = 1, so its mean has SE 1/√n.
    for m in mean {
        assert!(m.abs() <= 5.0 / (n as f64).sqrt(), "{m}");
    }
}

#[test]
fn window_slot_noise_is_uncorrelated() {
    // Two slots with zero loss: the smoothed gradient is (n₀ + n₁)/2, so
    // E‖·‖² = σ²/2 only if the slots draw independent noise.
    let stream = make_drifting_sine_stream(2, 1.0, 1.0, 0.0, NoiseModel::exact(), 5).unwrap();
    let mut window: SmoothingWindow<SineLoss> = SmoothingWindow::new(1.0, 2).unwrap();
    let x = RealVector::zeros(2);
    window.push(x.clone(), stream.round(1).unwrap().train);
    window.push(x, stream.round(1).unwrap().train);
    let exact = window.exact_gradient().unwrap();
    let noise = NoiseModel::gaussian(1.0).unwrap();
    let n = 50_000;
    let mut cross = 0.0;
    let mut sq = 0.0;
    for i in 0..n {
        let g = smoothed_stochastic_gradient(&window, &noise, &spawn_rng_stream(5, i)).unwrap();
        let e: Vec<f64> = (0..2).map(|k| g[k] - exact[k]).collect();
        cross += e[0] * e[1] / n as f64;
        sq += (e[0] * e[0] + e[1] * e[1]) / n as f64;
    }
    assert!((sq - 0.5).abs() <= 0.03 * 0.5, "{sq}");
    // Coordinates are independent too: the cross moment has SE ≈ 0.25/√n.
    assert!(cross.abs() <= 5.0 * 0.25 / (n as f64).sqrt(), "{cross}");
}

#[test]
fn sub_gaussian_scale_bounds_the_exponential_moment() {
    for (sigma, dim) in [(0.5, 5), (1.0, 3), (2.0, 10)] {
        let noise = NoiseModel::sub_gaussian(sigma, dim).unwrap();
        // Use a 10% larger κ: at the floor the moment equals e exactly and
        // the estimator has infinite variance.
        let kappa = 1.1 * noise.kappa.unwrap();
        let mut rng = spawn_rng_stream(6, dim as u64);
        let n = 200_000;
        let mut m = 0.0;
        for _ in 0..n {
            let mut v = vec![0.0; dim];
            noise.perturb(&mut v, &mut rng);
            m += (v.iter().map(|x| x * x).sum::<f64>() / (kappa * kappa)).exp() / n as f64;
        }
        assert!(m <= std::f64::consts::E, "sigma {sigma} dim {dim}: {m}");
    }
}

#[test]
fn adaptation_variance_shrinks_with_batch() {
    let stream =
        make_drifting_sine_stream(2, 1.0, 1.0, 0.0, NoiseModel::gaussian(1.0).unwrap(), 7).unwrap();
    let task = stream.round(1).unwrap();
    let x = RealVector::new(vec![0.2, 0.4]).unwrap();
    let spread = |batch: usize| {
        let cfg = InnerAdaptConfig {
            theta: 1.0,
            train_batch: batch,
            test_batch: 1,
        };
        let reps = 4000;
        let samples: Vec<f64> = (0..reps)
            .map(|i| inner_adapt(&x, &task, &cfg, &mut spawn_rng_stream(7, i)).unwrap()[0])
            .collect();
        let mean = samples.iter().sum::<f64>() / reps as f64;
        samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
    };
    let ratio = spread(1) / spread(100);
    assert!((70.0..=140.0).contains(&ratio), "variance ratio {ratio}");
}

#[test]
fn noiseless_zero_theta_run_is_online_adagrad() {
    let stream = make_drifting_sine_stream(3, 1.0, 1.0, 0.05, NoiseModel::exact(), 8).unwrap();
    let (eta, eps) = (0.2, 1e-8);
    let opt = make_config_adagrad(eta, eps, 1.0, 1).unwrap();
    let trace = run_stream(&stream, 50, &InnerAdaptConfig::new(0.0), &opt, 8).unwrap();
    let mut x = [0.0; 3];
    let mut v = [0.0; 3];
    for (t, rec) in (1..).zip(&trace.records) {
        let l = stream.round(t).unwrap().test;
        let z: f64 = (0..3).map(|k| l.freq()[k] * x[k]).sum::<f64>() + l.phase();
        for k in 0..3 {
            assert!((rec.iterate[k] - x[k]).abs() <= 1e-12);
            let g = l.amplitude() * z.cos() * l.freq()[k];
            v[k] += g * g;
            x[k] -= eta * g / (eps + v[k]).sqrt();
        }
    }
}

#[test]
fn stationary_stream_tail_regret_shrinks() {
    let stream = make_drifting_sine_stream(3, 1.0, 1.0, 0.0, NoiseModel::exact(), 10).unwrap();
    let opt = make_config_adagrad(0.05, 1e-8, 1.0, 4).unwrap();
    let trace = run_stream(&stream, 2000, &InnerAdaptConfig::new(0.1), &opt, 10).unwrap();
    let dlr = dlr_cumulative(&trace, 4, 1.0).unwrap();
    let block = |k: usize| dlr.per_round[k * 500..(k + 1) * 500].iter().sum::<f64>() / 500.0;
    let blocks: Vec<f64> = (0..4).map(block).collect();
    assert!(blocks.windows(2).all(|p| p[1] <= p[0]), "{blocks:?}");
}

#[test]
fn two_thousand_rounds_in_ten_dimensions_is_quick() {
    let stream =
        make_drifting_sine_stream(10, 1.0, 1.0, 0.05, NoiseModel::gaussian(0.5).unwrap(), 11)
            .unwrap();
    let opt = make_config_adagrad(0.1, 1e-8, 1.0, 16).unwrap();
    let start = Instant::now();
    let trace = run_stream(&stream, 2000, &InnerAdaptConfig::new(0.1), &opt, 11).unwrap();
    assert_eq!(trace.len(), 2000);
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

fn frozen_copy(trace: &RunTrace, stream: &TaskStream, theta: f64) -> RunTrace {
    let x1 = trace.records[0].iterate.clone();
    let mut frozen = trace.clone();
    for rec in &mut frozen.records {
        let loss = RoundLoss::new(stream.round(rec.t).unwrap(), theta);
        rec.iterate = x1.clone();
        rec.loss = loss.value(&x1).unwrap();
        rec.exact_gradient = loss.gradient(&x1).unwrap();
    }
    frozen
}

#[test]
fn adaptive_learner_beats_a_static_one_across_an_orthogonal_turn() {
    let (horizon, w, theta) = (200u64, 8usize, 0.1);
    let opt = make_config_adagrad(0.1, 1e-8, 1.0, w).unwrap();
    let inner = InnerAdaptConfig::new(theta);
    let mut wins = 0;
    for seed in 0..20 {
        let noise = NoiseModel::gaussian(0.2).unwrap();
        let stream =
            make_piecewise_drift_stream(4, horizon / 2, std::f64::consts::FRAC_PI_2, noise, seed)
                .unwrap();
        let a = stream.round(1).unwrap().train.freq().clone();
        let b = stream.round(horizon).unwrap().train.freq().clone();
        let cos: f64 = (0..4).map(|k| a[k] * b[k]).sum();
        assert!(cos.abs() < 1e-12, "segments must be orthogonal");
        let trace = run_stream(&stream, horizon, &inner, &opt, seed).unwrap();
        let adaptive = dlr_cumulative(&trace, w, 1.0).unwrap().total();
        let fixed = dlr_cumulative(&frozen_copy(&trace, &stream, theta), w, 1.0)
            .unwrap()
            .total();
        if fixed > adaptive {
            wins += 1;
        }
    }
    assert_eq!(wins, 20);
}

#[test]
fn drifting_stream_separates_local_and_static_regret() {
    let w = 8;
    let opt = make_config_adagrad(0.1, 1e-8, 1.0, w).unwrap();
    let mut gaps = Vec::new();
    for seed in 0..20 {
        let noise = NoiseModel::gaussian(0.5).unwrap();
        let stream = make_drifting_sine_stream(5, 1.0, 1.0, 0.05, noise, seed).unwrap();
        let trace = run_stream(&stream, 300, &InnerAdaptConfig::new(0.1), &opt, seed).unwrap();
        let dlr = dlr_cumulative(&trace, w, 1.0).unwrap().total();
        let slr = slr_cumulative(&trace, w).unwrap().total();
        gaps.push((slr - dlr).abs() / dlr.max(slr));
    }
    assert!(gaps.iter().all(|g| *g > 1e-6), "{gaps:?}");
}
