use oodcert::{Covariance, Error, GaussianLatentModel, LatentVector, SampleStream};
use proptest::prelude::*;

fn full_model() -> GaussianLatentModel {
    GaussianLatentModel::new(
        vec![1.0, -2.0, 0.5],
        Covariance::Full(vec![
            vec![2.0, 0.6, -0.3],
            vec![0.6, 1.0, 0.2],
            vec![-0.3, 0.2, 0.5],
        ]),
        "full",
    )
    .unwrap()
}

#[test]
fn sample_moments_follow_the_affine_transform() {
    let model = full_model();
    let n = 40_000;
    let xs = model.sample(n, SampleStream::new(1, 0)).unwrap();
    let k = 3;
    let mean: Vec<f64> = (0..k)
        .map(|j| xs.iter().map(|x| x.coords()[j]).sum::<f64>() / n as f64)
        .collect();
    let Covariance::Full(sigma) = model.covariance().clone() else { unreachable!() };
    for j in 0..k {
        let tol = 5.0 * (sigma[j][j] / n as f64).sqrt();
        assert!((mean[j] - model.mean()[j]).abs() < tol, "mean[{j}] = {}", mean[j]);
    }
    for a in 0..k {
        for b in 0..k {
            let c = xs
                .iter()
                .map(|x| (x.coords()[a] - mean[a]) * (x.coords()[b] - mean[b]))
                .sum::<f64>()
                / (n - 1) as f64;
            // sd of a sample covariance entry is √((σaa σbb + σab²) / n)
            let tol = 5.0 * ((sigma[a][a] * sigma[b][b] + sigma[a][b].powi(2)) / n as f64).sqrt();
            assert!((c - sigma[a][b]).abs() < tol, "cov[{a}][{b}] = {c}, want {}", sigma[a][b]);
        }
    }
}

#[test]
fn cholesky_factor_reproduces_covariance() {
    let model = full_model();
    let l = model.cholesky_factor();
    let s = &l * l.transpose();
    let Covariance::Full(sigma) = model.covariance().clone() else { unreachable!() };
    for i in 0..3 {
        for j in 0..3 {
            assert!((s[(i, j)] - sigma[i][j]).abs() < 1e-14);
        }
    }
}

#[test]
fn samples_do_not_depend_on_thread_count() {
    let model = full_model();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| model.sample(5000, SampleStream::new(3, 2)).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn streams_are_distinct() {
    let model = GaussianLatentModel::standard_normal(2).unwrap();
    let a = model.sample(10, SampleStream::new(0, 0)).unwrap();
    let b = model.sample(10, SampleStream::new(0, 1)).unwrap();
    let c = model.sample(10, SampleStream::new(1, 0)).unwrap();
    assert_ne!(a, b);
    assert_ne!(a, c);
}

#[test]
fn file_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.json");
    let model = full_model();
    model.save(&path).unwrap();
    let back = GaussianLatentModel::load(&path).unwrap();
    assert_eq!(back.mean(), model.mean());
    assert_eq!(back.covariance(), model.covariance());
    assert_eq!(back.label(), "full");
    let x = LatentVector::new(vec![0.3, -1.0, 2.0]).unwrap();
    assert_eq!(back.log_density(&x).unwrap(), model.log_density(&x).unwrap());
}

#[test]
fn exporter_style_files_load() {
    // prior and diagonal aggregate-posterior files as a Python json.dump writes them
    let prior = r#"{"dim": 4, "mean": [0.0, 0.0, 0.0, 0.0], "cov_type": "diag", "cov": [1.0, 1.0, 1.0, 1.0], "label": "prior"}"#;
    let aggregate = r#"{"dim": 4, "mean": [0.012, -0.3, 1e-05, 0], "cov_type": "diag",
                        "cov": [0.81, 1.2, 0.05, 2], "label": "aggregate_posterior"}"#;
    let p = GaussianLatentModel::from_json_str(prior).unwrap();
    let a = GaussianLatentModel::from_json_str(aggregate).unwrap();
    assert_eq!((p.dim(), a.dim()), (4, 4));
    assert_eq!(a.mean()[3], 0.0);
    assert!(GaussianLatentModel::from_json_str(r#"{"dim": 4, "mean": [0, 0, 0], "cov_type": "diag", "cov": [1, 1, 1, 1]}"#).is_err());
    let err = GaussianLatentModel::from_json_str(r#"{"dim": 2, "mean": [0, 0], "cov_type": "diag", "cov": [1, -1]}"#).unwrap_err();
    assert!(matches!(err, Error::Validation(_)), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn diagonal_log_density_is_a_sum_of_univariate_terms(
        mean in prop::collection::vec(-5.0f64..5.0, 1..6),
        seed in any::<u64>(),
    ) {
        let k = mean.len();
        let var: Vec<f64> = (0..k).map(|i| 0.1 + ((seed >> (i * 8)) & 0xff) as f64 / 64.0).collect();
        let model = GaussianLatentModel::new(mean.clone(), Covariance::Diagonal(var.clone()), "").unwrap();
        let x: Vec<f64> = mean.iter().enumerate().map(|(i, m)| m + (i as f64 - 1.5)).collect();
        let expected: f64 = (0..k)
            .map(|i| -0.5 * ((2.0 * std::f64::consts::PI * var[i]).ln() + (x[i] - mean[i]).powi(2) / var[i]))
            .sum();
        let got = model.log_density(&LatentVector::new(x).unwrap()).unwrap();
        prop_assert!((got - expected).abs() < 1e-11 * expected.abs().max(1.0), "{got} vs {expected}");
    }

    #[test]
    fn prefix_of_a_stream_is_stable(n in 1usize..200, extra in 1usize..50, seed in any::<u64>()) {
        let model = GaussianLatentModel::standard_normal(3).unwrap();
        let short = model.sample(n, SampleStream::new(seed, 5)).unwrap();
        let long = model.sample(n + extra, SampleStream::new(seed, 5)).unwrap();
        prop_assert_eq!(&short[..], &long[..n]);
    }
}
