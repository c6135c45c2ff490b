use rgmorph::gmm::{
    em_fit, gaussian_logpdf, gmm_sample, log_sum_exp, match_components, CovRef, CovType,
    Covariances, EmOptions, GmmModel,
};
use rgmorph::neural::Matrix;
use rgmorph::RngStream;

fn mixture_1d() -> GmmModel {
    GmmModel {
        weights: vec![0.25, 0.45, 0.3],
        means: Matrix::from_shape_vec((3, 1), vec![-2.0, 1.0, 5.0]).unwrap(),
        covariances: Covariances::Diag(
            Matrix::from_shape_vec((3, 1), vec![0.5, 1.0, 4.0]).unwrap(),
        ),
        ridge: 0.0,
    }
}

#[test]
fn one_dimensional_density_integrates_to_one() {
    let g = mixture_1d();
    let (lo, hi) = (-2.0 - 10.0 * 0.5f64.sqrt(), 5.0 + 10.0 * 2.0);
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let grid = Matrix::from_shape_fn((n + 1, 1), |(i, _)| lo + i as f64 * h);
    let d: Vec<f64> = g
        .log_density(&grid)
        .unwrap()
        .into_iter()
        .map(f64::exp)
        .collect();
    let integral = h * (d.iter().sum::<f64>() - 0.5 * (d[0] + d[n]));
    assert!((integral - 1.0).abs() < 1e-3, "{integral}");
}

#[test]
fn standard_normal_log_density_closed_form() {
    let v = gaussian_logpdf(
        &[0.0, 0.0],
        &[0.0, 0.0],
        CovRef::Diag(ndarray::arr1(&[1.0, 1.0]).view()),
    )
    .unwrap();
    assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
}

#[test]
fn log_sum_exp_handles_extremes() {
    assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
    assert!((log_sum_exp(&[-1000.0, -1000.0]) - (-1000.0 + 2f64.ln())).abs() < 1e-9);
    assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
}

#[test]
fn sampling_frequencies_and_means() {
    let g = mixture_1d();
    let n = 200_000;
    let x = gmm_sample(&g, n, &mut RngStream::new(17, 0)).unwrap();
    let mean: f64 = x.iter().sum::<f64>() / n as f64;
    let expect: f64 = g
        .weights
        .iter()
        .zip(g.means.iter())
        .map(|(w, m)| w * m)
        .sum();
    // standard error is about 0.006 here
    assert!((mean - expect).abs() < 0.03, "{mean} vs {expect}");
    // component frequencies via the most likely component for well-separated tails
    let below = x.iter().filter(|&&v| v < -0.5).count() as f64 / n as f64;
    let p: f64 = {
        let cdf = |m: f64, s: f64| 0.5 * (1.0 + erf((-0.5 - m) / (s * 2f64.sqrt())));
        0.25 * cdf(-2.0, 0.5f64.sqrt()) + 0.45 * cdf(1.0, 1.0) + 0.3 * cdf(5.0, 2.0)
    };
    assert!((below - p).abs() < 0.005, "{below} vs {p}");
}

/// Abramowitz-Stegun 7.1.26, absolute error below 1.5e-7.
fn erf(x: f64) -> f64 {
    let t = 1.0 / (1.0 + 0.3275911 * x.abs());
    let y = 1.0
        - t * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))))
            * (-x * x).exp();
    y.copysign(x)
}

#[test]
fn full_covariance_sampling_moments() {
    let cov = Matrix::from_shape_vec((2, 2), vec![2.0, 0.8, 0.8, 1.0]).unwrap();
    let g = GmmModel {
        weights: vec![1.0],
        means: Matrix::from_shape_vec((1, 2), vec![3.0, -1.0]).unwrap(),
        covariances: Covariances::Full(vec![cov.clone()]),
        ridge: 0.0,
    };
    let n = 100_000;
    let x = gmm_sample(&g, n, &mut RngStream::new(5, 0)).unwrap();
    let mu = x.mean_axis(ndarray::Axis(0)).unwrap();
    let c = x.t().dot(&x) / n as f64
        - mu.view()
            .insert_axis(ndarray::Axis(1))
            .dot(&mu.view().insert_axis(ndarray::Axis(0)));
    assert!((mu[0] - 3.0).abs() < 0.02 && (mu[1] + 1.0).abs() < 0.02);
    for (a, b) in c.iter().zip(cov.iter()) {
        assert!((a - b).abs() < 0.04, "{c:?}");
    }
}

#[test]
fn em_recovers_separated_clusters_from_samples() {
    let truth = GmmModel {
        weights: vec![0.2, 0.3, 0.5],
        means: Matrix::from_shape_vec((3, 2), vec![0.0, 0.0, 10.0, 0.0, 0.0, 10.0]).unwrap(),
        covariances: Covariances::Diag(Matrix::ones((3, 2))),
        ridge: 0.0,
    };
    let x = gmm_sample(&truth, 4000, &mut RngStream::new(3, 0)).unwrap();
    for cov_type in [CovType::Diag, CovType::Full] {
        let fit = em_fit(
            &x,
            3,
            &EmOptions {
                seed: 11,
                cov_type,
                ..EmOptions::default()
            },
        )
        .unwrap();
        let idx = match_components(&truth.means, &fit.model.means);
        for (t, &f) in idx.iter().enumerate() {
            for j in 0..2 {
                assert!((truth.means[[t, j]] - fit.model.means[[f, j]]).abs() < 0.1);
            }
            assert!((truth.weights[t] - fit.model.weights[f]).abs() < 0.03);
        }
        assert!(fit.converged);
    }
}

#[test]
fn em_log_likelihood_never_decreases_on_overlapping_data() {
    for seed in 0..20 {
        let mut rng = RngStream::new(seed, 1);
        let x = Matrix::from_shape_simple_fn((150, 3), || {
            rng.normal() + if rng.bernoulli(0.5) { 1.5 } else { 0.0 }
        });
        for cov_type in [CovType::Diag, CovType::Full] {
            let fit = em_fit(
                &x,
                3,
                &EmOptions {
                    seed,
                    cov_type,
                    ..EmOptions::default()
                },
            )
            .unwrap();
            for w in fit.log_lik_trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }
}

#[test]
fn fitted_models_validate_and_are_deterministic() {
    let mut rng = RngStream::new(4, 0);
    let x = Matrix::from_shape_simple_fn((200, 4), || rng.normal());
    let opts = EmOptions {
        seed: 9,
        ..EmOptions::default()
    };
    let a = em_fit(&x, 3, &opts).unwrap();
    let b = em_fit(&x, 3, &opts).unwrap();
    assert_eq!(a.model, b.model);
    a.model.validate().unwrap();
    assert!((a.model.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
}
