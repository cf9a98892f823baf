use qsl_core::loss::empirical_risk;
use qsl_core::predictor::{ConstantPredictor, FnPredictor};
use qsl_core::sim::*;
use qsl_core::{Predictor, QuantileLevel};

fn sample_moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

fn lag1_autocorrelation(xs: &[f64]) -> f64 {
    let (mean, var) = sample_moments(xs);
    let n = xs.len() as f64;
    let cov = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / n;
    cov / var
}

#[test]
fn ar1_marginal_variance_and_autocorrelation() {
    let t_len = 100_000;
    for rho in [0.0, 0.5, 0.8] {
        let s = gen_ar1(&Ar1DgpConfig { t_len, rho, seed: 11, ..Default::default() }).unwrap();
        let eps = &s.noise[0];
        let sigma2: f64 = 0.1;
        let target = sigma2 / (1.0 - rho * rho);
        let (_, var) = sample_moments(eps);
        // Var of the sample variance of a Gaussian AR(1): 2 v^2 (1 + rho^2) / (1 - rho^2) / T
        let se = (2.0 * target * target * (1.0 + rho * rho) / (1.0 - rho * rho) / t_len as f64).sqrt();
        assert!((var - target).abs() < 3.0 * se, "rho={rho}: var {var} vs {target} (se {se})");
        let r1 = lag1_autocorrelation(eps);
        assert!((r1 - rho).abs() < 0.01, "rho={rho}: lag-1 {r1}");
    }
}

#[test]
fn independent_ar1_matches_iid_draws() {
    let sigma = 0.3;
    let ar = gen_ar1(&Ar1DgpConfig { t_len: 300, rho: 0.0, sigma, seed: 5, locations: 1 }).unwrap();
    let iid = gen_iid(&IidDgpConfig { n_train: 300, n_test: 1, noise_sd: sigma, seed: 5 }).unwrap();
    for (b, o) in ar.stream.batches().iter().zip(iid.train.iter()) {
        let a = &b.items["loc1"];
        assert_eq!(a.x, o.x);
        assert_eq!(a.y, o.y);
    }
}

#[test]
fn generation_is_deterministic_per_seed() {
    let c = IidDgpConfig { n_train: 100, n_test: 100, seed: 77, ..Default::default() };
    let a = gen_iid(&c).unwrap();
    let b = gen_iid(&c).unwrap();
    assert_eq!(a.train, b.train);
    assert_eq!(a.test, b.test);
    let other = gen_iid(&IidDgpConfig { seed: 78, ..c }).unwrap();
    assert_ne!(a.train, other.train);
}

#[test]
fn true_quantile_is_not_beaten() {
    let s = gen_iid(&IidDgpConfig { n_train: 1, n_test: 20_000, seed: 3, ..Default::default() }).unwrap();
    for a in [0.025, 0.1, 0.5, 0.9, 0.975] {
        let alpha = QuantileLevel::new(a).unwrap();
        let sd = s.noise_sd;
        let truth = FnPredictor::new("truth", move |x| mean_function(x) + sd * normal_quantile(alpha));
        let per_obs: Vec<f64> = s
            .test
            .iter()
            .map(|o| qsl_core::loss::pinball(a, o.y, truth.predict(&o.x)))
            .collect();
        let (_, var) = sample_moments(&per_obs);
        let se = (var / per_obs.len() as f64).sqrt();
        let oracle = empirical_risk(alpha, &truth, &s.test).unwrap();
        let rivals: Vec<Box<dyn Predictor>> = vec![
            Box::new(ConstantPredictor(1.0)),
            Box::new(FnPredictor::new("mean", mean_function)),
            Box::new(FnPredictor::new("shifted", move |x| mean_function(x) + sd * normal_quantile(alpha) + 0.05)),
            Box::new(FnPredictor::new("linear", |x| 0.4 + 1.2 * x[0] + 0.8 * x[1] - 0.3 * x[2])),
        ];
        for r in rivals {
            let risk = empirical_risk(alpha, r.as_ref(), &s.test).unwrap();
            assert!(risk >= oracle - 2.0 * se, "alpha={a}: {risk} < {oracle}");
        }
    }
}

#[test]
fn ar1_true_quantile_uses_previous_error() {
    let s = gen_ar1(&Ar1DgpConfig { t_len: 5, rho: 0.5, seed: 2, ..Default::default() }).unwrap();
    let half = QuantileLevel::new(0.5).unwrap();
    let x3 = &s.stream.batches()[2].items["loc1"].x;
    assert!((s.true_quantile(3, 0, half) - (mean_function(x3) + 0.5 * s.noise[0][1])).abs() < 1e-14);
}
