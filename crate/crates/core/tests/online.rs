use std::collections::BTreeMap;
use std::sync::Arc;

use qsl_core::learners::{ConstantLearner, FixedLearner, Learner, LearnerLibrary, LinearConfig, LinearLearner};
use qsl_core::online::*;
use qsl_core::predictor::ConstantPredictor;
use qsl_core::sim::{gen_ar1, Ar1DgpConfig};
use qsl_core::{Dataset, Observation, QslError, QuantileLevel, Result, SharedPredictor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn q(a: f64) -> QuantileLevel {
    QuantileLevel::new(a).unwrap()
}

fn library(items: Vec<(&str, Arc<dyn Learner>)>) -> LearnerLibrary {
    LearnerLibrary::from_learners(items).unwrap()
}

fn scalar_stream(ys: &[f64]) -> Stream {
    let batches = ys
        .iter()
        .enumerate()
        .map(|(i, &y)| Batch::single(i + 1, "a", Observation::new(vec![0.0], y)).unwrap())
        .collect();
    Stream::new(["a".to_string()], batches).unwrap()
}

/// Reads the batch it is not allowed to see.
#[derive(Debug)]
struct Peeker;

impl Learner for Peeker {
    fn fit(&self, data: &Dataset, alpha: QuantileLevel) -> Result<SharedPredictor> {
        ConstantLearner.fit(data, alpha)
    }

    fn fit_history(&self, history: &HistoryView<'_>, _alpha: QuantileLevel) -> Result<SharedPredictor> {
        let y = history
            .batch(history.boundary())
            .map(|b| b.items.values().next().unwrap().y)
            .unwrap_or(0.0);
        Ok(Arc::new(ConstantPredictor(y)))
    }
}

#[test]
fn peeking_candidate_is_rejected() {
    let lib = library(vec![("constant", Arc::new(ConstantLearner)), ("peek", Arc::new(Peeker))]);
    for seed in 0..5 {
        let s = gen_ar1(&Ar1DgpConfig { t_len: 30, seed, ..Default::default() }).unwrap();
        for refit in [RefitPolicy::EveryStep, RefitPolicy::Every(7), RefitPolicy::FrozenHalf] {
            let cfg = OnlineConfig { refit, ..Default::default() };
            match run_stream(&s.stream, &lib, q(0.5), &cfg) {
                Err(QslError::PrequentialViolation { candidate, boundary, read_t }) => {
                    assert_eq!(candidate, "peek");
                    assert_eq!(boundary, read_t);
                }
                other => panic!("leak not caught: {other:?}"),
            }
        }
    }
}

#[test]
fn step_api_catches_leaks_too() {
    // Through the step API the future is not even available: the read
    // returns nothing but is still flagged.
    let lib = library(vec![("peek", Arc::new(Peeker))]);
    let mut state = OnlineState::new(&lib, q(0.5), OnlineConfig::default(), None).unwrap();
    let b = Batch::single(1, "a", Observation::new(vec![0.0], 1.0)).unwrap();
    assert!(matches!(step(&mut state, &b, &lib), Err(QslError::PrequentialViolation { .. })));
}

#[test]
fn zero_predictor_at_first_step() {
    let lib = library(vec![("constant", Arc::new(ConstantLearner))]);
    let mut state = OnlineState::new(&lib, q(0.5), OnlineConfig::default(), None).unwrap();
    let rec = state
        .step(&Batch::single(1, "a", Observation::new(vec![0.0], 1.0)).unwrap(), &lib)
        .unwrap();
    assert_eq!(rec.candidate_losses, vec![0.5]);
    assert_eq!(online_risk(&state, 0).unwrap(), 0.5);
}

#[test]
fn online_risk_is_running_mean() {
    // fixed predictions 0.6: losses 0.2 (y = 1) then 0.4 (y = 1.4) at alpha 0.5,
    // after the zero-predictor step with y = 0.
    let lib = library(vec![("fixed", Arc::new(FixedLearner(0.6)))]);
    let mut state = OnlineState::new(&lib, q(0.5), OnlineConfig::default(), None).unwrap();
    for (t, y) in [(1, 0.0), (2, 1.0), (3, 1.4)] {
        state
            .step(&Batch::single(t, "a", Observation::new(vec![0.0], y)).unwrap(), &lib)
            .unwrap();
    }
    let log = state.candidate_loss_log(0);
    assert_eq!(log[0], 0.0);
    assert!((log[1] - 0.2).abs() < 1e-15 && (log[2] - 0.4).abs() < 1e-15);
    assert!((online_risk(&state, 0).unwrap() - 0.2).abs() < 1e-15);
}

#[test]
fn batch_loss_averages_present_locations() {
    let items = BTreeMap::from([
        ("a".to_string(), Observation::new(vec![0.0], 0.4)),
        ("b".to_string(), Observation::new(vec![0.0], 0.8)),
    ]);
    let b = Batch::new(1, items).unwrap();
    let l = batch_loss(q(0.5), &ConstantPredictor(0.0), &b).unwrap();
    assert!((l - 0.3).abs() < 1e-15);
    assert_eq!(batch_loss(q(0.3), &ConstantPredictor(0.4), &Batch::single(1, "a", Observation::new(vec![0.0], 0.4)).unwrap()).unwrap(), 0.0);
}

#[test]
fn out_of_order_batches_are_rejected() {
    let lib = library(vec![("constant", Arc::new(ConstantLearner))]);
    let mut state = OnlineState::new(&lib, q(0.5), OnlineConfig::default(), None).unwrap();
    let b2 = Batch::single(2, "a", Observation::new(vec![0.0], 1.0)).unwrap();
    assert!(matches!(state.step(&b2, &lib), Err(QslError::InvalidArgument(_))));
    assert_eq!(state.t(), 0);
}

#[test]
fn frozen_half_needs_horizon() {
    let lib = library(vec![("constant", Arc::new(ConstantLearner))]);
    let cfg = OnlineConfig { refit: RefitPolicy::FrozenHalf, ..Default::default() };
    assert!(OnlineState::new(&lib, q(0.5), cfg, None).is_err());
}

#[test]
fn equal_losses_keep_ewa_uniform_and_discrete_on_first() {
    let lib = library(vec![("a", Arc::new(FixedLearner(0.5))), ("b", Arc::new(FixedLearner(0.5)))]);
    let s = scalar_stream(&[0.1, 0.9, 0.3, 2.0, -1.0]);
    let r = run_stream(&s, &lib, q(0.5), &OnlineConfig::default()).unwrap();
    let ewa = r.aggregator_names.iter().position(|n| n == "ewa").unwrap();
    let disc = r.aggregator_names.iter().position(|n| n == "qsl_discrete").unwrap();
    for st in &r.steps {
        assert_eq!(st.aggregator_weights[ewa], vec![0.5, 0.5]);
        assert_eq!(st.aggregator_weights[disc], vec![1.0, 0.0]);
    }
}

#[test]
fn discrete_follows_the_leader() {
    // y = 0 always; candidate 0 predicts 0, candidate 1 predicts 1.
    let lib = library(vec![("zero", Arc::new(FixedLearner(0.0))), ("one", Arc::new(FixedLearner(1.0)))]);
    let mut state = OnlineState::new(&lib, q(0.5), OnlineConfig::default(), None).unwrap();
    for t in 1..=6 {
        state
            .step(&Batch::single(t, "a", Observation::new(vec![0.0], 0.0)).unwrap(), &lib)
            .unwrap();
        assert_eq!(state.selected(), 0);
    }
}

#[test]
fn short_window_equals_step_loss() {
    let lib = library(vec![("constant", Arc::new(ConstantLearner))]);
    let s = scalar_stream(&[1.0, 3.0]);
    let cfg = OnlineConfig {
        aggregators: vec![AggregatorKind::QslDiscrete],
        window: EvalWindow::Range { start: 2, end: 2 },
        ..Default::default()
    };
    let r = run_stream(&s, &lib, q(0.5), &cfg).unwrap();
    // second step uses the median of {1}: loss |3 - 1| / 2
    assert_eq!(r.final_risk_of("qsl_discrete"), Some(1.0));
    let empty = OnlineConfig { window: EvalWindow::Range { start: 3, end: 5 }, ..cfg };
    assert!(run_stream(&s, &lib, q(0.5), &empty).is_err());
}

fn random_stream(rng: &mut ChaCha8Rng) -> Stream {
    let t_len = rng.random_range(4..40);
    let locs = ["n", "s", "w"];
    let batches = (1..=t_len)
        .map(|t| {
            let mut items = BTreeMap::new();
            for l in locs {
                if items.is_empty() || rng.random_bool(0.8) {
                    let x: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
                    let y = x[0] * 2.0 - x[1] + rng.random::<f64>();
                    items.insert(l.to_string(), Observation::new(x, y));
                }
            }
            Batch::new(t, items).unwrap()
        })
        .collect();
    Stream::new(locs.map(String::from), batches).unwrap()
}

fn neumaier_mean(xs: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for &x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() { (s - t) + x } else { (x - t) + s };
        s = t;
    }
    (s + c) / xs.len() as f64
}

fn pinball_oracle(a: f64, y: f64, p: f64) -> f64 {
    let u = y - p;
    if u > 0.0 {
        a * u
    } else {
        (a - 1.0) * u
    }
}

#[test]
fn final_risk_replays_from_logs() {
    let lib = library(vec![
        ("constant", Arc::new(ConstantLearner)),
        ("linear", Arc::new(LinearLearner::new(LinearConfig { max_iters: 300, ..Default::default() }))),
    ]);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..5 {
        let s = random_stream(&mut rng);
        let r = run_stream(&s, &lib, q(0.3), &OnlineConfig::default()).unwrap();
        let (w0, w1) = r.window;
        for (e, name) in r.entity_names().iter().enumerate() {
            let losses = r.losses(e);
            assert_eq!(r.final_risk[e], neumaier_mean(&losses[w0 - 1..w1]), "{name}");
        }
        // per-location records agree with the batch losses
        for st in &r.steps {
            for (c, &l) in st.candidate_losses.iter().enumerate() {
                let per: Vec<f64> =
                    st.locations.iter().map(|x| pinball_oracle(0.3, x.y, x.candidate_predictions[c])).collect();
                assert!((neumaier_mean(&per) - l).abs() <= 1e-15);
            }
            for w in &st.aggregator_weights {
                assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12 && w.iter().all(|&v| v >= 0.0));
            }
        }
        assert!(r.missing_locations || r.steps.iter().all(|s| s.locations.len() == 3));
    }
}

#[test]
fn step_api_matches_run_stream() {
    let lib = LearnerLibrary::standard();
    let s = gen_ar1(&Ar1DgpConfig { t_len: 25, rho: 0.5, seed: 3, ..Default::default() }).unwrap();
    let cfg = OnlineConfig { refit: RefitPolicy::Every(5), ..Default::default() };
    let r = run_stream(&s.stream, &lib, q(0.7), &cfg).unwrap();
    let mut state = OnlineState::new(&lib, q(0.7), cfg, Some(25)).unwrap();
    for (b, expected) in s.stream.batches().iter().zip(&r.steps) {
        assert_eq!(&state.step(b, &lib).unwrap(), expected);
    }
    for k in 0..lib.len() {
        assert_eq!(online_risk(&state, k).unwrap(), r.running_risk(k, 25));
    }
}

#[test]
fn frozen_candidates_keep_their_fingerprints() {
    let lib = LearnerLibrary::standard();
    let s = gen_ar1(&Ar1DgpConfig { t_len: 40, seed: 1, ..Default::default() }).unwrap();
    let cfg = OnlineConfig { refit: RefitPolicy::FrozenHalf, ..Default::default() };
    let r = run_stream(&s.stream, &lib, q(0.5), &cfg).unwrap();
    let after: Vec<_> = r.steps[20..].iter().map(|s| s.candidate_fingerprints.clone()).collect();
    assert!(after.windows(2).all(|w| w[0] == w[1]));
    assert_ne!(r.steps[19].candidate_fingerprints, r.steps[20].candidate_fingerprints);
    assert_eq!(r.steps.iter().filter(|s| s.refit).count(), 1);
}

#[test]
fn perfect_oracle_has_zero_risk_on_noise_free_data() {
    let lib = library(vec![("truth", Arc::new(FixedLearner(2.5)))]);
    let s = scalar_stream(&[2.5; 6]);
    let cfg = OnlineConfig { window: EvalWindow::Range { start: 2, end: 6 }, ..Default::default() };
    let r = run_stream(&s, &lib, q(0.9), &cfg).unwrap();
    assert!(r.final_risk.iter().all(|&v| v == 0.0));
}

#[test]
fn interval_coverage_counts_inclusive_hits() {
    let lib = library(vec![("constant", Arc::new(ConstantLearner))]);
    let s = scalar_stream(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    let cfg = OnlineConfig { aggregators: vec![AggregatorKind::QslDiscrete], ..Default::default() };
    let lo = run_stream(&s, &lib, q(0.05), &cfg).unwrap();
    let hi = run_stream(&s, &lib, q(0.95), &cfg).unwrap();
    // window t = 4..6: lower = 1, upper = max seen so far, y always a new max
    assert_eq!(online_coverage(&lo, &hi, "constant").unwrap(), 0.0);
    assert_eq!(online_coverage(&lo, &lo, "constant").unwrap(), 0.0);
    assert!(online_coverage(&lo, &hi, "nope").is_err());
}
