use std::sync::Arc;

use qsl_core::cv::*;
use qsl_core::learners::{
    ConstantLearner, FixedLearner, KnnConfig, KnnLearner, Learner, LearnerLibrary, LinearConfig, LinearLearner,
};
use qsl_core::loss::empirical_risk;
use qsl_core::sim::{gen_iid, IidDgpConfig};
use qsl_core::simplex::minimize_on_grid;
use qsl_core::{Dataset, Observation, QuantileLevel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn q(a: f64) -> QuantileLevel {
    QuantileLevel::new(a).unwrap()
}

fn random_problem(rng: &mut ChaCha8Rng) -> (LearnerLibrary, Dataset, FoldAssignment, QuantileLevel) {
    let n = rng.random_range(12..60);
    let obs = (0..n)
        .map(|_| {
            let x: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
            let y = 3.0 * x[0] - x[1] * x[1] + rng.random::<f64>() - 0.5;
            Observation::new(x, y)
        })
        .collect();
    let mut learners: Vec<(String, Arc<dyn Learner>)> = vec![
        ("constant".into(), Arc::new(ConstantLearner)),
        ("linear".into(), Arc::new(LinearLearner::new(LinearConfig { max_iters: 400, ..Default::default() }))),
        ("knn".into(), Arc::new(KnnLearner::new(KnnConfig { k: rng.random_range(1..8), shrink_to_fit: true }))),
    ];
    if rng.random_bool(0.5) {
        learners.push(("fixed".into(), Arc::new(FixedLearner(rng.random_range(-1.0..2.0)))));
    }
    let v = rng.random_range(2..6);
    (
        LearnerLibrary::from_learners(learners).unwrap(),
        Dataset::new(obs).unwrap(),
        make_folds(n, v, rng.random()).unwrap(),
        q(rng.random_range(0.05..0.95)),
    )
}

#[test]
fn continuous_never_worse_than_discrete() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..15 {
        let (lib, data, folds, alpha) = random_problem(&mut rng);
        let table = cv_risk(&lib, &data, alpha, &folds).unwrap();
        let disc = discrete_from_table(&lib, &data, table.clone()).unwrap();
        let cont = continuous_from_table(&lib, &data, table.clone(), &WeightSearch::default()).unwrap();
        let replayed = table.blend_problem().unwrap().objective(cont.weights.as_slice());
        assert!(cont.cv_risk <= disc.cv_risk);
        assert!(replayed <= disc.cv_risk + 1e-12, "{replayed} vs {}", disc.cv_risk);
        let grid = minimize_on_grid(&table.blend_problem().unwrap(), 10).unwrap();
        assert!(cont.cv_risk <= grid.objective + 1e-9);
    }
}

#[test]
fn cv_risk_matches_manual_fold_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (lib, data, folds, alpha) = random_problem(&mut rng);
    let table = cv_risk(&lib, &data, alpha, &folds).unwrap();
    for (c, named) in lib.iter().enumerate() {
        let mut total = 0.0;
        for f in 0..folds.v() {
            let train = data.subset(&folds.train_indices(f)).unwrap();
            let test = data.subset(&folds.test_indices(f)).unwrap();
            let fit = named.learner.fit(&train, alpha).unwrap();
            let r = empirical_risk(alpha, fit.as_ref(), &test).unwrap();
            assert!((r - table.per_fold[c][f]).abs() < 1e-12);
            total += r * test.len() as f64 / data.len() as f64;
        }
        assert!((total - table.risks[c]).abs() < 1e-12);
    }
}

#[test]
fn fits_are_reproducible() {
    let s = gen_iid(&IidDgpConfig { n_train: 200, n_test: 50, seed: 8, ..Default::default() }).unwrap();
    let lib = LearnerLibrary::standard();
    let run = || {
        let folds = make_folds(200, 10, 8).unwrap();
        let fit = fit_continuous_sl(&lib, &s.train, q(0.9), &folds, &WeightSearch::default()).unwrap();
        let preds: Vec<u64> = s.test.iter().map(|o| fit.ensemble.predict(&o.x).to_bits()).collect();
        (fit.weights, fit.cv_risk.to_bits(), preds)
    };
    assert_eq!(run(), run());
}

#[test]
fn discrete_selection_is_cv_argmin() {
    let s = gen_iid(&IidDgpConfig { n_train: 150, n_test: 10, seed: 1, ..Default::default() }).unwrap();
    let lib = LearnerLibrary::standard();
    let folds = make_folds(150, 5, 1).unwrap();
    let fit = fit_discrete_sl(&lib, &s.train, q(0.5), &folds).unwrap();
    let k = fit.selected.unwrap();
    assert!(fit.table.risks.iter().all(|&r| fit.table.risks[k] <= r));
    assert_eq!(fit.weights.as_slice()[k], 1.0);
    // ensemble is the refit of the chosen candidate
    let x = &s.test.get(0).x;
    assert_eq!(fit.ensemble.predict(x), fit.candidates[k].predict(x));
}
