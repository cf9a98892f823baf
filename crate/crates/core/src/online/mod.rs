//! Sequential quantile super learning over location-indexed batches.

mod aggregators;
mod harness;

use std::cell::Cell;
use std::collections::{BTreeMap, BTreeSet};

use crate::data::{Dataset, Observation, QuantileLevel};
use crate::error::{invalid, QslError, Result};
use crate::loss::pinball;
use crate::numeric::stable_mean;
use crate::predictor::Predictor;

pub use aggregators::{boa_update, ewa_update, AggregatorKind, BoaState, EtaPolicy, EwaState};
pub use harness::{
    online_coverage, online_risk, run_stream, step, EvalWindow, LocationRecord, OnlineConfig, OnlineReport,
    OnlineState, RefitPolicy, StepRecord,
};

/// Observations of every reporting location at one time step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub t: usize,
    pub items: BTreeMap<String, Observation>,
}

impl Batch {
    pub fn new(t: usize, items: BTreeMap<String, Observation>) -> Result<Self> {
        if t == 0 {
            return invalid("batch times start at 1");
        }
        if items.is_empty() {
            return invalid(format!("batch {t} has no observations"));
        }
        Ok(Batch { t, items })
    }

    /// One-location batch.
    pub fn single(t: usize, location: impl Into<String>, obs: Observation) -> Result<Self> {
        Batch::new(t, BTreeMap::from([(location.into(), obs)]))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Time-ordered batches over a declared location set.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    locations: BTreeSet<String>,
    batches: Vec<Batch>,
    dim: usize,
}

impl Stream {
    /// Batches must be numbered `1, 2, ...` in order, cover only declared
    /// locations, and share one covariate dimension.
    pub fn new(locations: impl IntoIterator<Item = String>, batches: Vec<Batch>) -> Result<Self> {
        let locations: BTreeSet<String> = locations.into_iter().collect();
        if locations.is_empty() {
            return invalid("stream needs at least one location");
        }
        let Some(first) = batches.first() else {
            return invalid("stream needs at least one batch");
        };
        let dim = first.items.values().next().map(|o| o.x.len()).unwrap_or(0);
        if dim == 0 {
            return invalid("covariate dimension must be at least 1");
        }
        for (i, b) in batches.iter().enumerate() {
            if b.t != i + 1 {
                return invalid(format!("batch at position {} has t={}, expected {}", i, b.t, i + 1));
            }
            if b.items.is_empty() {
                return invalid(format!("batch {} is empty", b.t));
            }
            for (loc, obs) in &b.items {
                if !locations.contains(loc) {
                    return invalid(format!("batch {} has undeclared location `{loc}`", b.t));
                }
                if obs.x.len() != dim {
                    return invalid(format!("batch {} location `{loc}` has dimension {}, expected {dim}", b.t, obs.x.len()));
                }
                if !obs.y.is_finite() || obs.x.iter().any(|v| !v.is_finite()) {
                    return invalid(format!("batch {} location `{loc}` has non-finite values", b.t));
                }
            }
        }
        Ok(Stream {
            locations,
            batches,
            dim,
        })
    }

    pub fn locations(&self) -> &BTreeSet<String> {
        &self.locations
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// True if some batch lacks a declared location.
    pub fn has_missing_locations(&self) -> bool {
        self.batches.iter().any(|b| b.len() != self.locations.len())
    }
}

/// Mean pinball loss of `predictor` over the locations present in `batch`.
pub fn batch_loss(alpha: QuantileLevel, predictor: &dyn Predictor, batch: &Batch) -> Result<f64> {
    if batch.is_empty() {
        return invalid("loss of an empty batch");
    }
    let a = alpha.value();
    Ok(stable_mean(batch.items.values().map(|o| pinball(a, o.y, predictor.predict(&o.x)))).unwrap())
}

/// What a candidate may see when it is fit to predict time `boundary`:
/// every batch with `t < boundary`.
///
/// Reads of later batches through [`HistoryView::batch`] are served but
/// recorded, and the harness rejects any fit that made one.
#[derive(Debug)]
pub struct HistoryView<'a> {
    known: &'a [Batch],
    boundary: usize,
    first_violation: Cell<Option<usize>>,
}

impl<'a> HistoryView<'a> {
    /// `known` holds batches `1..` in order and may extend past the boundary.
    pub fn new(known: &'a [Batch], boundary: usize) -> Self {
        HistoryView {
            known,
            boundary,
            first_violation: Cell::new(None),
        }
    }

    /// First time step the fit must not depend on.
    pub fn boundary(&self) -> usize {
        self.boundary
    }

    /// Batches strictly before the boundary.
    pub fn batches(&self) -> &'a [Batch] {
        let end = self.boundary.saturating_sub(1).min(self.known.len());
        &self.known[..end]
    }

    /// Direct access to batch `t`.
    pub fn batch(&self, t: usize) -> Option<&'a Batch> {
        if t >= self.boundary && self.first_violation.get().is_none() {
            self.first_violation.set(Some(t));
        }
        t.checked_sub(1).and_then(|i| self.known.get(i))
    }

    /// All allowed observations pooled across locations, time-major and
    /// location-sorted.
    pub fn pooled(&self) -> Result<Dataset> {
        let obs: Vec<Observation> = self
            .batches()
            .iter()
            .flat_map(|b| b.items.values().cloned())
            .collect();
        if obs.is_empty() {
            return invalid(format!("no history before t={}", self.boundary));
        }
        Dataset::new(obs)
    }

    /// Errors if any read crossed the boundary.
    pub fn check(&self, candidate: &str) -> Result<()> {
        match self.first_violation.get() {
            Some(read_t) => Err(QslError::PrequentialViolation {
                candidate: candidate.to_string(),
                boundary: self.boundary,
                read_t,
            }),
            None => Ok(()),
        }
    }
}
