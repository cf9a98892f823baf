//! Candidate quantile learners.
//!
//! Every learner maps a training dataset and a quantile level to an immutable
//! [`Predictor`](crate::predictor::Predictor). Fits are deterministic.

mod constant;
mod gbt;
mod knn;
mod linear;
mod quantile;

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileLevel};
use crate::error::{invalid, Result};
use crate::online::HistoryView;
use crate::predictor::SharedPredictor;

pub use constant::{fit_constant, ConstantLearner, FixedLearner};
pub use gbt::{fit_gbt_quantile, GbtConfig, GbtLearner, GbtPredictor};
pub use knn::{fit_knn_quantile, KnnConfig, KnnLearner, KnnPredictor};
pub use linear::{fit_linear_quantile, LinearConfig, LinearLearner, LinearPredictor};
pub use quantile::{empirical_quantile, Standardizer};

pub trait Learner: Send + Sync + fmt::Debug {
    fn fit(&self, data: &Dataset, alpha: QuantileLevel) -> Result<SharedPredictor>;

    /// Fits on an online history. The default pools every observation the
    /// view exposes (all batches strictly before its boundary).
    fn fit_history(&self, history: &HistoryView<'_>, alpha: QuantileLevel) -> Result<SharedPredictor> {
        self.fit(&history.pooled()?, alpha)
    }
}

/// A learner together with its unique name inside a library.
#[derive(Debug, Clone)]
pub struct NamedLearner {
    pub name: String,
    pub learner: Arc<dyn Learner>,
}

/// Ordered list of `K >= 1` uniquely named learners. Position defines the
/// candidate index used by every selector and weight vector.
#[derive(Debug, Clone)]
pub struct LearnerLibrary {
    learners: Vec<NamedLearner>,
}

impl LearnerLibrary {
    pub fn new(learners: Vec<NamedLearner>) -> Result<Self> {
        if learners.is_empty() {
            return invalid("learner library needs at least one learner");
        }
        let mut seen = HashSet::new();
        for l in &learners {
            if !seen.insert(l.name.as_str()) {
                return invalid(format!("duplicate learner name `{}`", l.name));
            }
        }
        Ok(LearnerLibrary { learners })
    }

    pub fn from_learners<I, S>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Arc<dyn Learner>)>,
        S: Into<String>,
    {
        LearnerLibrary::new(
            items
                .into_iter()
                .map(|(name, learner)| NamedLearner {
                    name: name.into(),
                    learner,
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.learners.len()
    }

    pub fn is_empty(&self) -> bool {
        self.learners.is_empty()
    }

    pub fn get(&self, k: usize) -> &NamedLearner {
        &self.learners[k]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, NamedLearner> {
        self.learners.iter()
    }

    pub fn names(&self) -> Vec<String> {
        self.learners.iter().map(|l| l.name.clone()).collect()
    }

    /// constant, linear, k-NN (k = 20) and boosted trees with default settings.
    pub fn standard() -> Self {
        build_library(&LearnerSpec::standard_library()).expect("standard library names are distinct")
    }
}

/// Serializable description of a learner and its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerKind {
    Constant,
    Linear(#[serde(default)] LinearConfig),
    Knn(#[serde(default)] KnnConfig),
    Gbt(#[serde(default)] GbtConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: LearnerKind,
}

impl LearnerSpec {
    pub fn new(name: impl Into<String>, kind: LearnerKind) -> Self {
        LearnerSpec {
            name: name.into(),
            kind,
        }
    }

    pub fn build(&self) -> NamedLearner {
        let learner: Arc<dyn Learner> = match &self.kind {
            LearnerKind::Constant => Arc::new(ConstantLearner),
            LearnerKind::Linear(c) => Arc::new(LinearLearner::new(c.clone())),
            LearnerKind::Knn(c) => Arc::new(KnnLearner::new(c.clone())),
            LearnerKind::Gbt(c) => Arc::new(GbtLearner::new(c.clone())),
        };
        NamedLearner {
            name: self.name.clone(),
            learner,
        }
    }

    /// Checks hyperparameters without fitting anything.
    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return invalid("learner names must be nonempty");
        }
        match &self.kind {
            LearnerKind::Constant => Ok(()),
            LearnerKind::Linear(c) => linear::validate(c),
            LearnerKind::Knn(c) if c.k == 0 => invalid("k-NN needs k >= 1"),
            LearnerKind::Knn(_) => Ok(()),
            LearnerKind::Gbt(c) => gbt::validate(c),
        }
    }

    pub fn standard_library() -> Vec<LearnerSpec> {
        vec![
            LearnerSpec::new("constant", LearnerKind::Constant),
            LearnerSpec::new("linear", LearnerKind::Linear(LinearConfig::default())),
            LearnerSpec::new("knn", LearnerKind::Knn(KnnConfig::default())),
            LearnerSpec::new("gbt", LearnerKind::Gbt(GbtConfig::default())),
        ]
    }
}

pub fn build_library(specs: &[LearnerSpec]) -> Result<LearnerLibrary> {
    LearnerLibrary::new(specs.iter().map(LearnerSpec::build).collect())
}
