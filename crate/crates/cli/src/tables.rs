//! Row types of every emitted table.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvRiskRow {
    pub seed: u64,
    pub setting: String,
    pub alpha: f64,
    pub learner: String,
    pub cv_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFoldRow {
    pub seed: u64,
    pub setting: String,
    pub alpha: f64,
    pub learner: String,
    pub fold: usize,
    pub size: usize,
    pub risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub seed: u64,
    pub setting: String,
    pub alpha: f64,
    pub learner: String,
    pub discrete_weight: f64,
    pub continuous_weight: f64,
    pub optimizer_converged: bool,
}

/// Test-set empirical risk of one algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpRiskRow {
    pub seed: u64,
    pub setting: String,
    pub alpha: f64,
    pub algorithm: String,
    pub emp_risk: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpCovRow {
    pub seed: u64,
    pub setting: String,
    pub beta: f64,
    pub algorithm: String,
    pub lower_alpha: f64,
    pub upper_alpha: f64,
    pub coverage: f64,
    /// Share of test points where the lower bound exceeds the upper one.
    pub crossing_rate: f64,
}

/// One prediction at one (time, location).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub seed: u64,
    pub alpha: f64,
    pub t: usize,
    pub location: String,
    pub entity: String,
    pub y: f64,
    pub prediction: f64,
    pub loss: f64,
}

/// Batch loss of one entity at one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLossRow {
    pub seed: u64,
    pub setting: String,
    pub alpha: f64,
    pub t: usize,
    pub entity: String,
    pub loss: f64,
    /// Candidates only: digest of the fit that made the prediction.
    pub fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRow {
    pub seed: u64,
    pub alpha: f64,
    pub t: usize,
    pub aggregator: String,
    pub learner: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRiskRow {
    pub seed: u64,
    pub setting: String,
    pub alpha: f64,
    pub entity: String,
    pub window_start: usize,
    pub window_end: usize,
    pub emp_risk: f64,
    pub missing_locations: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalCovRow {
    pub seed: u64,
    pub setting: String,
    pub beta: f64,
    pub entity: String,
    pub lower_alpha: f64,
    pub upper_alpha: f64,
    pub coverage: f64,
}

/// Mean and standard error across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub setting: String,
    /// Quantile level for risks, interval level beta for coverage.
    pub level: f64,
    pub algorithm: String,
    pub replications: usize,
    pub mean: f64,
    pub std_error: f64,
}

/// Across-seed mean of the running online risk (plot data).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub setting: String,
    pub alpha: f64,
    pub entity: String,
    pub t: usize,
    pub mean_running_risk: f64,
}
