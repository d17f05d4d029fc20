use proptest::prelude::*;
use ssi_core::dynamics::LangevinConfig;
use ssi_core::interpolant::{
    estimate_score_at, estimate_velocity, importance_sampling_init, linear_score_from_velocity, DenoisingProblem,
    InterpolantSchedule, VelocityEstimatorConfig, VelocityForm,
};
use ssi_core::rng::{substream, Purpose};
use ssi_core::targets::{finite_difference_score, make_gaussian, make_gmm, GaussianMixtureSpec, LogDensity};

fn sigma2(t: f64) -> f64 {
    t * t + (1.0 - t) * (1.0 - t)
}

/// Velocity of the interpolant towards `N(0, I)`.
fn exact_gaussian_velocity(t: f64, x: &[f64]) -> Vec<f64> {
    x.iter().map(|x| (2.0 * t - 1.0) / sigma2(t) * x).collect()
}

fn estimator(chains: usize, form: VelocityForm) -> VelocityEstimatorConfig {
    VelocityEstimatorConfig {
        inner: LangevinConfig { step_size: 0.1, num_steps: 100, ..Default::default() },
        chains,
        retained: 1,
        form,
        ..Default::default()
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

#[test]
fn importance_weights_healthy_for_gaussian_midpoint() {
    let target = make_gaussian(2, 1.0).unwrap();
    let prob = DenoisingProblem::new(0.5, &[0.0, 0.0], &target).unwrap();
    let is = importance_sampling_init(&prob, 800, &mut substream(1, Purpose::Test, 0, 0)).unwrap();
    assert_eq!(is.cloud.len(), 800);
    assert!(is.effective_sample_size / 800.0 > 0.5, "n_eff {}", is.effective_sample_size);
}

#[test]
fn velocity_vanishes_at_midpoint_for_gaussian() {
    let target = make_gaussian(2, 1.0).unwrap();
    for x in [[1.3, -0.7], [4.0, 2.5]] {
        let prob = DenoisingProblem::new(0.5, &x, &target).unwrap();
        let est =
            estimate_velocity(&prob, &estimator(800, VelocityForm::Direct), &mut substream(2, Purpose::Test, 0, 0))
                .unwrap();
        for (u, se) in est.velocity.iter().zip(&est.diagnostics.standard_error) {
            assert!(u.abs() < 3.0 * se, "u {u} se {se}");
        }
    }
}

#[test]
fn velocity_matches_closed_form_off_midpoint() {
    let target = make_gaussian(2, 1.0).unwrap();
    let x = [1.5, -2.0];
    for t in [0.2, 0.7, 0.9] {
        let prob = DenoisingProblem::new(t, &x, &target).unwrap();
        let est =
            estimate_velocity(&prob, &estimator(800, VelocityForm::Direct), &mut substream(3, Purpose::Test, 0, 0))
                .unwrap();
        let exact = exact_gaussian_velocity(t, &x);
        for ((u, e), se) in est.velocity.iter().zip(&exact).zip(&est.diagnostics.standard_error) {
            assert!((u - e).abs() < 4.0 * se, "t={t}: {u} vs {e} (se {se})");
        }
    }
}

#[test]
fn score_estimate_matches_gaussian_marginal() {
    let target = make_gaussian(2, 1.0).unwrap();
    let t = 0.2;
    let x = [0.8, -1.1];
    let prob = DenoisingProblem::new(t, &x, &target).unwrap();
    let cfg = estimator(800, VelocityForm::Direct);
    let reps: Vec<Vec<f64>> =
        (0..20).map(|k| estimate_score_at(&prob, &cfg, &mut substream(k, Purpose::Test, 4, 0)).unwrap()).collect();
    for j in 0..2 {
        let col: Vec<f64> = reps.iter().map(|s| s[j]).collect();
        let (m, sd) = mean_sd(&col);
        let exact = -x[j] / sigma2(t);
        assert!((m - exact).abs() < 4.0 * sd / 20f64.sqrt(), "{m} vs {exact}");
    }
}

#[test]
fn direct_and_rescaled_forms_agree() {
    let target = make_gaussian(1, 1.0).unwrap();
    let t = 0.7;
    let prob = DenoisingProblem::new(t, &[1.2], &target).unwrap();
    let run = |form, stream| -> Vec<f64> {
        (0..50)
            .map(|k| {
                estimate_velocity(&prob, &estimator(100, form), &mut substream(k, Purpose::Test, stream, 0))
                    .unwrap()
                    .velocity[0]
            })
            .collect()
    };
    let (md, sd) = mean_sd(&run(VelocityForm::Direct, 5));
    let (mr, sr) = mean_sd(&run(VelocityForm::Rescaled, 6));
    let combined = (sd * sd / 50.0 + sr * sr / 50.0).sqrt();
    assert!((md - mr).abs() < 3.0 * combined, "{md} vs {mr} ({combined})");
}

#[test]
fn symmetric_pair_gives_zero_velocity_at_origin() {
    let spec = GaussianMixtureSpec::isotropic(vec![vec![-2.0], vec![2.0]], 1.0);
    let target = make_gmm(&spec).unwrap();
    let prob = DenoisingProblem::new(0.5, &[0.0], &target).unwrap();
    let est = estimate_velocity(&prob, &estimator(800, VelocityForm::Direct), &mut substream(7, Purpose::Test, 0, 0))
        .unwrap();
    assert!(est.velocity[0].abs() < 3.0 * est.diagnostics.standard_error[0]);
}

#[test]
fn velocity_is_odd_in_distribution_for_symmetric_target() {
    let spec = GaussianMixtureSpec::isotropic(vec![vec![-2.0], vec![2.0]], 0.5);
    let target = make_gmm(&spec).unwrap();
    let t = 0.6;
    let mean_at = |x: f64, stream| {
        let prob = DenoisingProblem::new(t, &[x], &target).unwrap();
        let v: Vec<f64> = (0..30)
            .map(|k| {
                estimate_velocity(
                    &prob,
                    &estimator(200, VelocityForm::Direct),
                    &mut substream(k, Purpose::Test, stream, 0),
                )
                .unwrap()
                .velocity[0]
            })
            .collect();
        mean_sd(&v)
    };
    for x in [0.4, 1.5] {
        let (plus, sp) = mean_at(x, 8);
        let (minus, sm) = mean_at(-x, 9);
        let combined = (sp * sp / 30.0 + sm * sm / 30.0).sqrt();
        assert!((plus + minus).abs() < 3.0 * combined, "x={x}: {plus} vs {minus}");
    }
}

#[test]
fn error_shrinks_at_monte_carlo_rate() {
    let target = make_gaussian(1, 1.0).unwrap();
    let t = 0.4;
    let x = [1.0];
    let prob = DenoisingProblem::new(t, &x, &target).unwrap();
    let exact = exact_gaussian_velocity(t, &x)[0];
    let rmse = |chains, stream| {
        let sq: f64 = (0..60)
            .map(|k| {
                let u = estimate_velocity(
                    &prob,
                    &estimator(chains, VelocityForm::Direct),
                    &mut substream(k, Purpose::Test, stream, 0),
                )
                .unwrap()
                .velocity[0];
                (u - exact).powi(2)
            })
            .sum();
        (sq / 60.0).sqrt()
    };
    let ratio = rmse(100, 10) / rmse(400, 11);
    assert!((1.5..2.7).contains(&ratio), "ratio {ratio}");
}

#[test]
fn velocity_grows_at_most_linearly() {
    let spec = GaussianMixtureSpec::isotropic(vec![vec![-2.0], vec![2.0]], 0.5);
    let target = make_gmm(&spec).unwrap();
    let cfg = estimator(200, VelocityForm::Direct);
    for t in [0.3, 0.6, 0.9] {
        let ratios: Vec<f64> = (-20..=20)
            .map(|i| {
                let x = i as f64;
                let prob = DenoisingProblem::new(t, &[x], &target).unwrap();
                let u = estimate_velocity(&prob, &cfg, &mut substream((i + 100) as u64, Purpose::Test, 12, 0))
                    .unwrap()
                    .velocity[0];
                u.abs() / (1.0 + x.abs())
            })
            .collect();
        let b = ratios.iter().copied().fold(0.0, f64::max);
        assert!(b < 10.0, "t={t}: B={b}");
    }
}

#[test]
fn exact_gaussian_velocity_has_bounded_jacobian() {
    let mut worst = 0.0f64;
    for i in 1..100 {
        let t = i as f64 / 100.0;
        let h = 1e-5;
        let j = (exact_gaussian_velocity(t, &[1.0 + h])[0] - exact_gaussian_velocity(t, &[1.0 - h])[0]) / (2.0 * h);
        worst = worst.max(j.abs());
    }
    assert!(worst <= 2.0 + 1e-6, "{worst}");
}

#[test]
fn denoising_hessian_inside_log_concavity_window() {
    // Y = +-r, sigma^2 noise: the posterior Hessian lies in
    // [-t^2/(1-t)^2 - 1/sigma^2, -t^2/(1-t)^2 - 1/sigma^2 + r^2/sigma^4].
    let (r, s2) = (1.0, 0.8);
    let spec = GaussianMixtureSpec::isotropic(vec![vec![-r], vec![r]], s2);
    let target = make_gmm(&spec).unwrap();
    for t in [0.2, 0.5, 0.8] {
        let prob = DenoisingProblem::new(t, &[0.3], &target).unwrap();
        let like = t * t / ((1.0 - t) * (1.0 - t));
        let (lo, hi) = (-like - 1.0 / s2, -like - 1.0 / s2 + r * r / (s2 * s2));
        for i in -40..=40 {
            let x = i as f64 * 0.1;
            let h = 1e-4;
            let second = (prob.score(&[x + h])[0] - prob.score(&[x - h])[0]) / (2.0 * h);
            assert!(second >= lo - 1e-6 && second <= hi + 1e-6, "t={t} x={x}: {second} not in [{lo}, {hi}]");
        }
    }
}

#[test]
fn custom_schedule_reduces_to_linear() {
    let custom = InterpolantSchedule::custom("lin", |t| 1.0 - t, |t| t, |_| -1.0, |_| 1.0);
    let x = [0.4, -1.0];
    let u = [0.3, 2.0];
    let a = custom.score_from_velocity(0.3, &x, &u);
    let b = linear_score_from_velocity(0.3, &x, &u);
    for (p, q) in a.iter().zip(&b) {
        assert!((p - q).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn denoising_score_is_gradient(t in 0.05f64..0.95, xt in -5.0f64..5.0, x1 in -5.0f64..5.0) {
        let spec = GaussianMixtureSpec::isotropic(vec![vec![-2.0], vec![2.0]], 1.0);
        let target = make_gmm(&spec).unwrap();
        let prob = DenoisingProblem::new(t, &[xt], &target).unwrap();
        let s = prob.score(&[x1])[0];
        let fd = finite_difference_score(&prob, &[x1])[0];
        prop_assert!((s - fd).abs() < 1e-5 * (1.0 + s.abs()));
    }

    #[test]
    fn gaussian_denoising_score_zero_at_posterior_mean(t in 0.05f64..0.95, xt in -5.0f64..5.0) {
        let target = make_gaussian(1, 1.0).unwrap();
        let prob = DenoisingProblem::new(t, &[xt], &target).unwrap();
        let mean = t * xt / sigma2(t);
        prop_assert!(prob.score(&[mean])[0].abs() < 1e-9 * (1.0 + xt.abs() / (1.0 - t).powi(2)));
    }

    #[test]
    fn score_and_velocity_identity(t in 0.01f64..0.99, x in -10.0f64..10.0, m in -10.0f64..10.0) {
        // u from a posterior mean m, then the score recovered from u, equals (t m - x) / (1 - t)^2.
        let s = InterpolantSchedule::linear();
        let u = s.velocity_from_mean(t, &[x], &[m]);
        let score = s.score_from_velocity(t, &[x], &u)[0];
        let direct = (t * m - x) / ((1.0 - t) * (1.0 - t));
        prop_assert!((score - direct).abs() < 1e-8 * (1.0 + direct.abs()));
    }
}
