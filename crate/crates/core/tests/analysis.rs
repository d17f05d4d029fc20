use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use ssi_core::analysis::{
    beta_t, bisect, critical_time_t_star, gmm_bifurcation_time, lsi_bound, min_cost_assignment, mmd, mmd_biased,
    mmd_with_bandwidth, mode_coverage, nll, w2, w2_exact, ConvolutionSpec, W2Config,
};
use ssi_core::interpolant::symmetric_pair_interpolant_density;
use ssi_core::rng::{substream, Purpose};
use ssi_core::targets::{make_gaussian, TargetDensity};
use ssi_core::ParticleCloud;

fn normal_cloud(n: usize, d: usize, shift: f64, seed: u64) -> ParticleCloud {
    let mut rng = substream(seed, Purpose::Test, 0, 0);
    let data = (0..n * d).map(|_| shift + Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
    ParticleCloud::from_flat(n, d, data).unwrap()
}

fn cloud_from(points: &[f64], d: usize) -> ParticleCloud {
    ParticleCloud::from_flat(points.len() / d, d, points.to_vec()).unwrap()
}

#[test]
fn mmd_of_cloud_with_itself() {
    let x = normal_cloud(300, 3, 0.0, 1);
    assert_eq!(mmd_biased(&x, &x, 0.7).unwrap().abs(), 0.0);
    let unbiased = mmd(&x, &x).unwrap();
    assert!(unbiased.mmd2 <= 1e-12);
    assert_eq!(unbiased.mmd2_clamped, unbiased.mmd2.max(0.0));
}

#[test]
fn mmd_matches_gaussian_closed_form() {
    // X ~ N(0, 1), Y ~ N(delta, 1), kernel exp(-r^2 / (2 l^2)):
    // MMD^2 = 2 c (1 - exp(-delta^2 / (2 (l^2 + 2)))), c = sqrt(l^2 / (l^2 + 2)).
    let (delta, l) = (1.0f64, 1.3f64);
    let c = (l * l / (l * l + 2.0)).sqrt();
    let exact = 2.0 * c * (1.0 - (-delta * delta / (2.0 * (l * l + 2.0))).exp());
    let reps: Vec<f64> = (0..8)
        .map(|k| {
            let x = normal_cloud(2_000, 1, 0.0, 100 + k);
            let y = normal_cloud(2_000, 1, delta, 200 + k);
            mmd_with_bandwidth(&x, &y, l).unwrap().mmd2
        })
        .collect();
    let mean = reps.iter().sum::<f64>() / 8.0;
    let sd = (reps.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 7.0).sqrt();
    assert!((mean - exact).abs() < 3.0 * sd / 8f64.sqrt(), "mean {mean} exact {exact} sd {sd}");

    let x = normal_cloud(5_000, 1, 0.0, 1);
    let y = normal_cloud(5_000, 1, delta, 2);
    let r = mmd(&x, &y).unwrap();
    let l = r.bandwidth;
    let c = (l * l / (l * l + 2.0)).sqrt();
    let exact = 2.0 * c * (1.0 - (-delta * delta / (2.0 * (l * l + 2.0))).exp());
    assert!((r.mmd2 - exact).abs() < 3.0 * sd * (2_000f64 / 5_000.0), "{} vs {exact}", r.mmd2);
}

#[test]
fn w2_one_dimensional_sorted_coupling() {
    let mut rng = substream(3, Purpose::Test, 0, 0);
    for n in [1usize, 2, 7, 40, 64] {
        let mut a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut b: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..8.0)).collect();
        let got = w2_exact(&cloud_from(&a, 1), &cloud_from(&b, 1)).unwrap();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let quantile = (a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>() / n as f64).sqrt();
        assert!((got - quantile).abs() < 1e-9, "n={n}: {got} vs {quantile}");
    }
}

#[test]
fn w2_point_masses() {
    let a = cloud_from(&[1.0, 2.0], 2);
    let b = cloud_from(&[4.0, 6.0], 2);
    assert!((w2_exact(&a, &b).unwrap() - 5.0).abs() < 1e-12);
}

#[test]
fn w2_subsampling_bounds_and_repeats() {
    let x = normal_cloud(200, 2, 0.0, 4);
    let y = normal_cloud(300, 2, 1.0, 5);
    let r = w2(&x, &y, &W2Config { subsample: 64, repeats: 3 }, 0).unwrap();
    assert_eq!((r.subsample, r.repeats, r.values.len()), (64, 3, 3));
    assert!(r.w2 > 0.5 && r.w2 < 3.0);
}

#[test]
fn assignment_agrees_with_brute_force_on_small_instances() {
    fn permutations(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(n - 1) {
            for i in 0..n {
                let mut q = p.clone();
                q.insert(i, n - 1);
                out.push(q);
            }
        }
        out
    }
    let mut rng = substream(6, Purpose::Test, 0, 0);
    for n in 1..=6 {
        let cost: Vec<f64> = (0..n * n).map(|_| rng.random_range(0.0..10.0)).collect();
        let (_, total) = min_cost_assignment(&cost, n);
        let best = permutations(n)
            .iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        assert!((total - best).abs() < 1e-9);
    }
}

#[test]
fn nll_of_exact_gaussian_draw_is_entropy() {
    let g = make_gaussian(2, 1.0).unwrap();
    let mut rng = substream(7, Purpose::Test, 0, 0);
    let x = g.sample(&mut rng, 50_000).unwrap();
    let r = nll(&x, &g).unwrap();
    let entropy = (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    assert!(r.normalized);
    assert!((r.nll - entropy).abs() < 0.02, "{} vs {entropy}", r.nll);
}

#[test]
fn mode_weights_sum_to_one() {
    let x = cloud_from(&[0.0, 0.1, 5.0, 5.1, 5.2, 100.0], 1);
    let cov = mode_coverage(&x, &[vec![0.0], vec![5.0]], 1.0).unwrap();
    assert_eq!(cov.counts, vec![2, 3]);
    assert_eq!(cov.unassigned, 1);
    assert!((cov.mode_weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn critical_time_matches_bisection_on_random_specs() {
    let mut rng = substream(8, Purpose::Test, 0, 0);
    for _ in 0..200 {
        let sigma2 = rng.random_range(0.05..3.0);
        let r = rng.random_range(0.0..4.0);
        let spec = ConvolutionSpec::new(r, sigma2).unwrap();
        let t_star = critical_time_t_star(&spec);
        let eps = 1e-4;
        assert!(beta_t(&spec, t_star + eps).unwrap() > 0.0);
        if t_star > 0.0 {
            assert!(beta_t(&spec, t_star - eps).unwrap() < 0.0);
            let root = bisect(|t| beta_t(&spec, t).unwrap(), 1e-12, 1.0 - 1e-12, 1e-13).unwrap();
            assert!((root - t_star).abs() < 1e-9, "R={r} s2={sigma2}: {root} vs {t_star}");
            let half = spec.sigma2 + spec.sigma2 * spec.sigma2;
            assert_eq!(t_star < 0.5, r * r < half);
        } else {
            assert!(r * r <= sigma2);
        }
    }
}

#[test]
fn critical_time_branches() {
    assert_eq!(critical_time_t_star(&ConvolutionSpec::new(0.5, 1.0).unwrap()), 0.0);
    assert_eq!(critical_time_t_star(&ConvolutionSpec::new(0.375, 0.125).unwrap()), 0.5);
    let spec = ConvolutionSpec::new(2.0, 1.0).unwrap();
    let root = bisect(|t| beta_t(&spec, t).unwrap(), 0.01, 0.99, 1e-14).unwrap();
    assert!((critical_time_t_star(&spec) - root).abs() < 1e-10);
}

#[test]
fn bifurcation_time_is_curvature_sign_flip() {
    let t_star = gmm_bifurcation_time(2.0).unwrap();
    assert!((t_star - 0.3660).abs() < 1e-4);
    assert!((t_star - (3f64.sqrt() - 1.0) / 2.0).abs() < 1e-15);
    let curvature = |t: f64| {
        let h = 1e-3;
        let p = |x| symmetric_pair_interpolant_density(2.0, t, x);
        (p(h) - 2.0 * p(0.0) + p(-h)) / (h * h)
    };
    let root = bisect(curvature, 0.1, 0.9, 1e-12).unwrap();
    assert!((root - t_star).abs() < 1e-6, "{root} vs {t_star}");
}

#[test]
fn bifurcation_limit_near_sqrt_two() {
    // (sqrt(m^2 - 1) - 1) / (m^2 - 2) -> 1/2 as m -> sqrt(2).
    let m = std::f64::consts::SQRT_2 + 1e-9;
    assert!((gmm_bifurcation_time(m).unwrap() - 0.5).abs() < 1e-8);
    assert!(gmm_bifurcation_time(std::f64::consts::SQRT_2).is_err());
    assert!(gmm_bifurcation_time(1.0).is_err());
}

#[test]
fn lsi_bound_values() {
    assert!((lsi_bound(0.0, 0.5).unwrap().tight - 3.0).abs() < 1e-12);
    assert!(lsi_bound(1.0, 1.0).is_err());
    for r in [0.0, 0.1, 0.5, 1.0] {
        for s2 in [0.1, 0.5, 0.9] {
            let b = lsi_bound(r, s2).unwrap();
            assert!(b.tight <= b.crude * (1.0 + 1e-12), "R={r} s2={s2}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn w2_triangle_inequality_and_symmetry(n in 1usize..=64, seed in 0u64..1000) {
        let x = normal_cloud(n, 2, 0.0, seed);
        let y = normal_cloud(n, 2, 1.0, seed + 10_000);
        let z = normal_cloud(n, 2, -0.5, seed + 20_000);
        let xy = w2_exact(&x, &y).unwrap();
        let yz = w2_exact(&y, &z).unwrap();
        let xz = w2_exact(&x, &z).unwrap();
        prop_assert!(xz <= xy + yz + 1e-9);
        prop_assert!((xy - w2_exact(&y, &x).unwrap()).abs() < 1e-9);
        prop_assert!(xy >= 0.0);
    }

    #[test]
    fn mmd_is_symmetric_and_biased_form_nonnegative(seed in 0u64..1000, shift in -2.0f64..2.0) {
        let x = normal_cloud(40, 2, 0.0, seed);
        let y = normal_cloud(30, 2, shift, seed + 1);
        let a = mmd(&x, &y).unwrap().mmd2;
        let b = mmd(&y, &x).unwrap().mmd2;
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(mmd_biased(&x, &y, 1.0).unwrap() >= -1e-15);
    }

    #[test]
    fn beta_t_increasing(r in 0.0f64..4.0, s2 in 0.05f64..3.0, t in 0.01f64..0.98) {
        let spec = ConvolutionSpec::new(r, s2).unwrap();
        prop_assert!(beta_t(&spec, t + 0.01).unwrap() > beta_t(&spec, t).unwrap());
    }
}
