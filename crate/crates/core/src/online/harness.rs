//! Prequential driver: predict every batch with models fit strictly on the
//! past, score, then update selectors, aggregators and candidate fits.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::aggregators::{AggregatorKind, BoaState, EtaPolicy, EwaState};
use super::{Batch, HistoryView, Stream};
use crate::cv::argmin_lowest;
use crate::data::QuantileLevel;
use crate::error::{invalid, Result};
use crate::learners::LearnerLibrary;
use crate::loss::pinball;
use crate::numeric::stable_mean;
use crate::predictor::{ConstantPredictor, SharedPredictor};
use crate::simplex::{minimize_blend_risk_from, BlendProblem, OptimizerConfig, SimplexWeights};

/// When candidates are refit on all data seen so far.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RefitPolicy {
    /// After every step.
    #[default]
    EveryStep,
    /// After steps `m, 2m, ...`.
    Every(usize),
    /// Once, after step `t`; frozen afterwards.
    FrozenAt(usize),
    /// Once, after step `T / 2` of a stream of known length `T`.
    FrozenHalf,
}

impl RefitPolicy {
    fn resolve(self, horizon: Option<usize>) -> Result<RefitPolicy> {
        match self {
            RefitPolicy::Every(0) => invalid("refit period must be >= 1"),
            RefitPolicy::FrozenHalf => match horizon {
                Some(h) => Ok(RefitPolicy::FrozenAt((h / 2).max(1))),
                None => invalid("frozen_half needs a known stream length"),
            },
            other => Ok(other),
        }
    }

    fn refit_after(self, t: usize) -> bool {
        match self {
            RefitPolicy::EveryStep => true,
            RefitPolicy::Every(m) => t.is_multiple_of(m),
            RefitPolicy::FrozenAt(at) => t == at,
            RefitPolicy::FrozenHalf => unreachable!("resolved before use"),
        }
    }
}

/// Time steps scored by the final empirical risk.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalWindow {
    /// `t = floor(T/2) + 1 ..= T`.
    #[default]
    SecondHalf,
    /// Inclusive range.
    Range { start: usize, end: usize },
}

impl EvalWindow {
    pub fn resolve(self, horizon: usize) -> Result<(usize, usize)> {
        let (start, end) = match self {
            EvalWindow::SecondHalf => (horizon / 2 + 1, horizon),
            EvalWindow::Range { start, end } => (start.max(1), end.min(horizon)),
        };
        if start > end {
            return invalid(format!("evaluation window is empty for a stream of length {horizon}"));
        }
        Ok((start, end))
    }
}

fn default_online_optimizer() -> OptimizerConfig {
    OptimizerConfig {
        max_iters: 100,
        ..OptimizerConfig::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineConfig {
    pub aggregators: Vec<AggregatorKind>,
    /// Learning-rate policy shared by EWA and BOA.
    pub eta: EtaPolicy,
    pub refit: RefitPolicy,
    pub window: EvalWindow,
    /// Hindsight re-solve of the continuous weights each step.
    pub optimizer: OptimizerConfig,
}

impl Default for OnlineConfig {
    fn default() -> Self {
        OnlineConfig {
            aggregators: AggregatorKind::all().to_vec(),
            eta: EtaPolicy::Adaptive,
            refit: RefitPolicy::EveryStep,
            window: EvalWindow::SecondHalf,
            optimizer: default_online_optimizer(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocationRecord {
    pub location: String,
    pub y: f64,
    pub candidate_predictions: Vec<f64>,
    pub candidate_losses: Vec<f64>,
    pub aggregator_predictions: Vec<f64>,
    pub aggregator_losses: Vec<f64>,
}

/// Everything that happened at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub t: usize,
    pub locations: Vec<LocationRecord>,
    /// Batch losses (mean over present locations).
    pub candidate_losses: Vec<f64>,
    pub aggregator_losses: Vec<f64>,
    /// Fingerprints of the candidate fits that made this step's predictions.
    pub candidate_fingerprints: Vec<u64>,
    /// Aggregator weights after this step's update.
    pub aggregator_weights: Vec<Vec<f64>>,
    /// Whether candidates were refit after this step.
    pub refit: bool,
}

enum Aggregator {
    Discrete,
    Continuous,
    Ewa(EwaState),
    Boa(BoaState),
}

pub struct OnlineState {
    alpha: QuantileLevel,
    names: Vec<String>,
    kinds: Vec<AggregatorKind>,
    aggregators: Vec<Aggregator>,
    config: OnlineConfig,
    refit: RefitPolicy,
    t: usize,
    candidates: Vec<SharedPredictor>,
    candidate_losses: Vec<Vec<f64>>,
    aggregator_losses: Vec<Vec<f64>>,
    selected: usize,
    continuous: SimplexWeights,
    // hindsight problem rows: candidate predictions, outcome, row weight
    rows_z: Vec<f64>,
    rows_y: Vec<f64>,
    rows_w: Vec<f64>,
    history: Vec<Batch>,
}

impl std::fmt::Debug for OnlineState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OnlineState")
            .field("t", &self.t)
            .field("alpha", &self.alpha)
            .field("candidates", &self.names)
            .field("aggregators", &self.kinds)
            .finish()
    }
}

impl OnlineState {
    /// Fresh state at `t = 0`. `horizon` is the stream length if known
    /// (required by [`RefitPolicy::FrozenHalf`]).
    pub fn new(
        library: &LearnerLibrary,
        alpha: QuantileLevel,
        config: OnlineConfig,
        horizon: Option<usize>,
    ) -> Result<Self> {
        let k = library.len();
        let refit = config.refit.resolve(horizon)?;
        config.eta.validate()?;
        let mut kinds = Vec::new();
        for kind in &config.aggregators {
            if kinds.contains(kind) {
                return invalid(format!("aggregator `{}` listed twice", kind.name()));
            }
            kinds.push(*kind);
        }
        let aggregators = kinds
            .iter()
            .map(|kind| {
                Ok(match kind {
                    AggregatorKind::QslDiscrete => Aggregator::Discrete,
                    AggregatorKind::QslContinuous => Aggregator::Continuous,
                    AggregatorKind::Ewa => Aggregator::Ewa(EwaState::new(k, config.eta)?),
                    AggregatorKind::Boa => Aggregator::Boa(BoaState::new(k, config.eta)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let zero: SharedPredictor = Arc::new(ConstantPredictor(0.0));
        Ok(OnlineState {
            alpha,
            names: library.names(),
            aggregator_losses: vec![Vec::new(); kinds.len()],
            kinds,
            aggregators,
            config,
            refit,
            t: 0,
            candidates: vec![zero; k],
            candidate_losses: vec![Vec::new(); k],
            selected: 0,
            continuous: SimplexWeights::uniform(k),
            rows_z: Vec::new(),
            rows_y: Vec::new(),
            rows_w: Vec::new(),
            history: Vec::new(),
        })
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn candidate_names(&self) -> &[String] {
        &self.names
    }

    pub fn aggregator_kinds(&self) -> &[AggregatorKind] {
        &self.kinds
    }

    /// Current discrete selection (lowest cumulative risk, lowest index on ties).
    pub fn selected(&self) -> usize {
        self.selected
    }

    pub fn continuous_weights(&self) -> &SimplexWeights {
        &self.continuous
    }

    /// Per-step batch losses of candidate `k`.
    pub fn candidate_loss_log(&self, k: usize) -> &[f64] {
        &self.candidate_losses[k]
    }

    pub fn aggregator_loss_log(&self, a: usize) -> &[f64] {
        &self.aggregator_losses[a]
    }

    pub fn aggregator_weights(&self, a: usize) -> Vec<f64> {
        let k = self.names.len();
        match &self.aggregators[a] {
            Aggregator::Discrete => SimplexWeights::vertex(k, self.selected).into_vec(),
            Aggregator::Continuous => self.continuous.as_slice().to_vec(),
            Aggregator::Ewa(s) => s.weights().as_slice().to_vec(),
            Aggregator::Boa(s) => s.weights().as_slice().to_vec(),
        }
    }

    /// Step API: `batch.t` must be `t + 1`. The state keeps its own history
    /// for refits.
    pub fn step(&mut self, batch: &Batch, library: &LearnerLibrary) -> Result<StepRecord> {
        let mut history = std::mem::take(&mut self.history);
        history.push(batch.clone());
        let out = self.advance(batch, &history, library);
        if out.is_err() {
            history.pop();
        }
        self.history = history;
        out
    }

    fn advance(&mut self, batch: &Batch, known: &[Batch], library: &LearnerLibrary) -> Result<StepRecord> {
        let k = self.names.len();
        if library.len() != k {
            return invalid(format!("library has {} learners, state was built for {k}", library.len()));
        }
        if batch.t != self.t + 1 {
            return invalid(format!("expected batch t={}, got t={}", self.t + 1, batch.t));
        }
        if batch.is_empty() {
            return invalid(format!("batch {} is empty", batch.t));
        }
        let t = batch.t;
        let a = self.alpha.value();

        // 1. predictions from fits on data before t, 2. losses
        let weights: Vec<Vec<f64>> = (0..self.kinds.len()).map(|i| self.aggregator_weights(i)).collect();
        let mut locations = Vec::with_capacity(batch.len());
        for (loc, obs) in &batch.items {
            let cand: Vec<f64> = self.candidates.iter().map(|p| p.predict(&obs.x)).collect();
            if let Some(i) = cand.iter().position(|p| !p.is_finite()) {
                return invalid(format!("candidate `{}` predicted a non-finite value at t={t}", self.names[i]));
            }
            let agg: Vec<f64> = weights
                .iter()
                .map(|w| w.iter().zip(&cand).filter(|(wk, _)| **wk != 0.0).map(|(wk, z)| wk * z).sum())
                .collect();
            locations.push(LocationRecord {
                location: loc.clone(),
                y: obs.y,
                candidate_losses: cand.iter().map(|p| pinball(a, obs.y, *p)).collect(),
                aggregator_losses: agg.iter().map(|p| pinball(a, obs.y, *p)).collect(),
                candidate_predictions: cand,
                aggregator_predictions: agg,
            });
        }
        let mean_over = |f: &dyn Fn(&LocationRecord) -> f64| stable_mean(locations.iter().map(f)).unwrap();
        let candidate_losses: Vec<f64> = (0..k).map(|c| mean_over(&|r| r.candidate_losses[c])).collect();
        let aggregator_losses: Vec<f64> = (0..self.kinds.len()).map(|i| mean_over(&|r| r.aggregator_losses[i])).collect();
        let candidate_fingerprints = self.candidates.iter().map(|p| p.fingerprint()).collect();

        for (log, l) in self.candidate_losses.iter_mut().zip(&candidate_losses) {
            log.push(*l);
        }
        for (log, l) in self.aggregator_losses.iter_mut().zip(&aggregator_losses) {
            log.push(*l);
        }
        self.t = t;

        // 3. follow-the-leader selection and hindsight weights
        let risks: Vec<f64> = self.candidate_losses.iter().map(|log| stable_mean(log.iter().copied()).unwrap()).collect();
        self.selected = argmin_lowest(&risks);
        if self.kinds.contains(&AggregatorKind::QslContinuous) {
            let row_weight = 1.0 / batch.len() as f64;
            for r in &locations {
                self.rows_z.extend_from_slice(&r.candidate_predictions);
                self.rows_y.push(r.y);
                self.rows_w.push(row_weight);
            }
            let problem = BlendProblem::with_row_weights(
                self.rows_z.clone(),
                self.rows_y.clone(),
                k,
                self.alpha,
                self.rows_w.clone(),
            )?;
            self.continuous = minimize_blend_risk_from(&problem, &self.config.optimizer, Some(&self.continuous)).weights;
        }

        // 4. expert-aggregation updates
        for agg in &mut self.aggregators {
            match agg {
                Aggregator::Ewa(s) => s.update(&candidate_losses)?,
                Aggregator::Boa(s) => s.update(&candidate_losses)?,
                Aggregator::Discrete | Aggregator::Continuous => {}
            }
        }

        // 5. refit on everything up to and including t
        let refit = self.refit.refit_after(t);
        if refit {
            let alpha = self.alpha;
            self.candidates = (0..k)
                .into_par_iter()
                .map(|c| {
                    let view = HistoryView::new(known, t + 1);
                    let named = library.get(c);
                    let fitted = named.learner.fit_history(&view, alpha)?;
                    view.check(&named.name)?;
                    Ok(fitted)
                })
                .collect::<Result<Vec<_>>>()?;
        }

        Ok(StepRecord {
            t,
            locations,
            candidate_losses,
            aggregator_losses,
            candidate_fingerprints,
            aggregator_weights: (0..self.kinds.len()).map(|i| self.aggregator_weights(i)).collect(),
            refit,
        })
    }
}

/// Free-function form of [`OnlineState::step`].
pub fn step(state: &mut OnlineState, batch: &Batch, library: &LearnerLibrary) -> Result<StepRecord> {
    state.step(batch, library)
}

/// Online empirical risk of candidate `k`: the running mean of its batch
/// losses, each incurred by a fit on strictly earlier data (the zero
/// constant at `t = 1`).
pub fn online_risk(state: &OnlineState, k: usize) -> Result<f64> {
    if state.t == 0 {
        return invalid("online risk is undefined before the first step");
    }
    if k >= state.candidate_losses.len() {
        return invalid(format!("no candidate with index {k}"));
    }
    Ok(stable_mean(state.candidate_losses[k].iter().copied()).unwrap())
}

/// Outcome of a full prequential run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineReport {
    pub alpha: f64,
    pub candidate_names: Vec<String>,
    pub aggregator_names: Vec<String>,
    pub steps: Vec<StepRecord>,
    /// Inclusive evaluation window.
    pub window: (usize, usize),
    /// Final empirical risk over the window, candidates then aggregators.
    pub final_risk: Vec<f64>,
    /// Some batch lacked a declared location.
    pub missing_locations: bool,
}

impl OnlineReport {
    /// Candidates followed by aggregators.
    pub fn entity_names(&self) -> Vec<String> {
        self.candidate_names.iter().chain(&self.aggregator_names).cloned().collect()
    }

    pub fn entity_index(&self, name: &str) -> Option<usize> {
        self.entity_names().iter().position(|n| n == name)
    }

    /// Batch-loss trajectory of entity `e` (candidate or aggregator index).
    pub fn losses(&self, e: usize) -> Vec<f64> {
        let k = self.candidate_names.len();
        self.steps
            .iter()
            .map(|s| if e < k { s.candidate_losses[e] } else { s.aggregator_losses[e - k] })
            .collect()
    }

    /// Online empirical risk of entity `e` over steps `1..=t`.
    pub fn running_risk(&self, e: usize, t: usize) -> f64 {
        stable_mean(self.losses(e).into_iter().take(t)).unwrap_or(0.0)
    }

    pub fn final_risk_of(&self, name: &str) -> Option<f64> {
        self.entity_index(name).map(|e| self.final_risk[e])
    }
}

/// Runs every configured aggregator over `stream`, sharing candidate fits.
pub fn run_stream(
    stream: &Stream,
    library: &LearnerLibrary,
    alpha: QuantileLevel,
    config: &OnlineConfig,
) -> Result<OnlineReport> {
    let horizon = stream.len();
    let window = config.window.resolve(horizon)?;
    let mut state = OnlineState::new(library, alpha, config.clone(), Some(horizon))?;
    let mut steps = Vec::with_capacity(horizon);
    for batch in stream.batches() {
        steps.push(state.advance(batch, stream.batches(), library)?);
    }
    let n_entities = state.names.len() + state.kinds.len();
    let mut report = OnlineReport {
        alpha: alpha.value(),
        candidate_names: state.names.clone(),
        aggregator_names: state.kinds.iter().map(|k| k.name().to_string()).collect(),
        steps,
        window,
        final_risk: Vec::new(),
        missing_locations: stream.has_missing_locations(),
    };
    report.final_risk = (0..n_entities)
        .map(|e| {
            let losses = report.losses(e);
            stable_mean(losses[window.0 - 1..window.1].iter().copied()).unwrap()
        })
        .collect();
    Ok(report)
}

/// Coverage of the interval formed by entity `name` in two runs at a lower
/// and an upper level, over (time, location) pairs in the window.
pub fn online_coverage(lower: &OnlineReport, upper: &OnlineReport, name: &str) -> Result<f64> {
    if lower.window != upper.window || lower.steps.len() != upper.steps.len() {
        return invalid("coverage needs two runs over the same stream and window");
    }
    let (Some(e_lo), Some(e_hi)) = (lower.entity_index(name), upper.entity_index(name)) else {
        return invalid(format!("unknown entity `{name}`"));
    };
    let k_lo = lower.candidate_names.len();
    let k_hi = upper.candidate_names.len();
    let pick = |r: &LocationRecord, e: usize, k: usize| {
        if e < k {
            r.candidate_predictions[e]
        } else {
            r.aggregator_predictions[e - k]
        }
    };
    let (start, end) = lower.window;
    let mut covered = 0usize;
    let mut total = 0usize;
    for (s_lo, s_hi) in lower.steps[start - 1..end].iter().zip(&upper.steps[start - 1..end]) {
        for (r_lo, r_hi) in s_lo.locations.iter().zip(&s_hi.locations) {
            if r_lo.location != r_hi.location || r_lo.y != r_hi.y {
                return invalid(format!("runs disagree on data at t={}", s_lo.t));
            }
            total += 1;
            if pick(r_lo, e_lo, k_lo) <= r_lo.y && r_lo.y <= pick(r_hi, e_hi, k_hi) {
                covered += 1;
            }
        }
    }
    Ok(covered as f64 / total as f64)
}
