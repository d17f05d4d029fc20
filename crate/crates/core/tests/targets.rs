use proptest::prelude::*;
use rand::Rng;
use ssi_core::config::TargetConfig;
use ssi_core::rng::{substream, Purpose};
use ssi_core::targets::{
    finite_difference_score, make_bayes_gmm_posterior, make_gaussian, make_gmm, make_many_well, make_mog40,
    make_mog_grid, make_rings, BayesPosteriorSpec, Covariance, GaussianMixtureSpec, LogDensity, ManyWellSpec,
    RingsSpec, TargetDensity,
};

const FD_TOL: f64 = 1e-5;

fn all_targets() -> Vec<(Box<dyn TargetDensity>, f64)> {
    let full = GaussianMixtureSpec {
        means: vec![vec![-1.0, 0.5, 0.0], vec![2.0, -1.0, 1.0]],
        covariance: Covariance::Full(vec![
            vec![vec![1.0, 0.3, 0.0], vec![0.3, 0.8, 0.1], vec![0.0, 0.1, 0.5]],
            vec![vec![0.6, -0.2, 0.0], vec![-0.2, 1.2, 0.0], vec![0.0, 0.0, 0.9]],
        ]),
        weights: vec![0.3, 0.7],
    };
    vec![
        (Box::new(make_gaussian(3, 2.0).unwrap()), 3.0),
        (Box::new(make_mog_grid(7, 10.0, 1.0).unwrap()), 35.0),
        (Box::new(make_mog40(0).unwrap()), 45.0),
        (Box::new(make_gmm(&full).unwrap()), 3.0),
        (Box::new(make_rings(&RingsSpec::default()).unwrap()), 9.0),
        (Box::new(make_many_well(&ManyWellSpec::default()).unwrap()), 2.5),
        (Box::new(BayesPosteriorSpec::default().build().unwrap()), 9.5),
    ]
}

/// Largest deviation between the analytic score and central differences,
/// scaled by the magnitude of the score.
fn fd_error(t: &dyn TargetDensity, x: &[f64]) -> f64 {
    let s = t.score(x);
    let fd = finite_difference_score(t, x);
    let scale = s.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    s.iter().zip(&fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
}

#[test]
fn scores_match_finite_differences_on_every_target() {
    for (target, half_width) in all_targets() {
        let mut rng = substream(11, Purpose::Test, 0, 0);
        // Mixtures with widely spaced modes are checked at typical points: midway between
        // far-apart modes the step grows with |x| and central differences lose accuracy.
        let points: Vec<Vec<f64>> = match target.sample(&mut rng, 100) {
            Some(cloud) => cloud.rows().map(|r| r.to_vec()).collect(),
            None => (0..100)
                .map(|_| (0..target.dim()).map(|_| rng.random_range(-half_width..half_width)).collect())
                .collect(),
        };
        let worst = points.iter().map(|x| fd_error(target.as_ref(), x)).fold(0.0f64, f64::max);
        assert!(worst < FD_TOL, "{}: worst relative fd error {worst:e}", target.name());
    }
}

#[test]
fn exact_samplers_match_first_two_moments() {
    let g = make_gaussian(2, 2.0).unwrap();
    let mut rng = substream(1, Purpose::Test, 0, 0);
    let cloud = g.sample(&mut rng, 40_000).unwrap();
    let n = cloud.len() as f64;
    for (m, v) in cloud.mean().iter().zip(cloud.variance()) {
        assert!(m.abs() < 4.0 * (2.0 / n).sqrt(), "mean {m}");
        assert!((v - 2.0).abs() < 4.0 * 2.0 * (2.0 / n).sqrt(), "variance {v}");
    }
}

#[test]
fn mog_grid_exact_draw_covers_modes_evenly() {
    let grid = make_mog_grid(7, 10.0, 1.0).unwrap();
    let mut rng = substream(2, Purpose::Test, 0, 0);
    let cloud = grid.sample(&mut rng, 10_000).unwrap();
    let cov = ssi_core::analysis::mode_coverage(&cloud, &grid.mode_centers().unwrap(), 3.0).unwrap();
    assert_eq!(cov.modes_found, 49);
    for w in &cov.mode_weights {
        assert!((w * 49.0 - 1.0).abs() < 0.3, "weight {w}");
    }
}

#[test]
fn config_names_build_expected_dimensions() {
    let cases = [
        (
            r#"name = "gaussian"
dim = 4"#,
            4,
        ),
        (r#"name = "mog_grid""#, 2),
        (
            r#"name = "mog40"
means_seed = 3"#,
            2,
        ),
        (r#"name = "rings""#, 2),
        (r#"name = "many_well""#, 8),
        (r#"name = "bayes_posterior""#, 4),
    ];
    for (text, dim) in cases {
        let cfg: TargetConfig = toml::from_str(text).unwrap();
        assert_eq!(cfg.build().unwrap().dim(), dim, "{text}");
    }
}

#[test]
fn rings_reject_points_away_from_any_ring_by_density_ordering() {
    let rings = make_rings(&RingsSpec::default()).unwrap();
    let on = rings.log_density(&[1.0, 0.0]);
    let between = rings.log_density(&[1.5, 0.0]);
    assert!(on > between + 5.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn many_well_is_even_in_each_double_well_coordinate(
        x in prop::collection::vec(-2.5f64..2.5, 8),
        block in 0usize..4,
    ) {
        let mw = make_many_well(&ManyWellSpec::default()).unwrap();
        let mut y = x.clone();
        y[2 * block] = -y[2 * block];
        prop_assert!((mw.log_density(&x) - mw.log_density(&y)).abs() < 1e-9);
    }

    #[test]
    fn bayes_posterior_is_permutation_invariant(
        theta in prop::collection::vec(-9.0f64..9.0, 4),
        perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
    ) {
        let obs: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin() * 5.0).collect();
        let post = make_bayes_gmm_posterior(&obs, 4, 0.3, (-10.0, 10.0)).unwrap();
        let permuted: Vec<f64> = perm.iter().map(|&i| theta[i]).collect();
        let (a, b) = (post.log_density(&theta), post.log_density(&permuted));
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
    }

    #[test]
    fn mixture_log_density_never_nan_far_out(x in -1e4f64..1e4, y in -1e4f64..1e4) {
        let grid = make_mog_grid(7, 10.0, 1.0).unwrap();
        let lp = grid.log_density(&[x, y]);
        prop_assert!(lp.is_finite());
        prop_assert!(grid.score(&[x, y]).iter().all(|s| s.is_finite()));
    }

    #[test]
    fn mixture_weights_accept_only_normalized(w in 0.05f64..0.95) {
        let spec = GaussianMixtureSpec {
            means: vec![vec![0.0], vec![1.0]],
            covariance: Covariance::Isotropic(1.0),
            weights: vec![w, 1.0 - w],
        };
        prop_assert!(make_gmm(&spec).is_ok());
        let bad = GaussianMixtureSpec { weights: vec![w, 1.0 - w + 1e-6], ..spec };
        prop_assert!(make_gmm(&bad).is_err());
    }
}
