//! V-fold cross-validation and the discrete / continuous super learner.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileLevel};
use crate::error::{invalid, Result};
use crate::learners::LearnerLibrary;
use crate::loss::pinball;
use crate::numeric::{stable_mean, CompensatedSum};
use crate::predictor::{prediction_bound, BlendPredictor, SharedPredictor};
use crate::simplex::{
    default_mesh, minimize_blend_risk, minimize_on_grid, BlendProblem, OptimizerConfig, SimplexWeights,
};

/// Assignment of each of `n` observations to one of `v` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    v: usize,
    /// Zero-based fold label per observation.
    fold_of: Vec<usize>,
}

impl FoldAssignment {
    /// Builds an assignment from explicit zero-based labels. Every fold must
    /// be nonempty.
    pub fn from_labels(v: usize, fold_of: Vec<usize>) -> Result<Self> {
        if v < 2 {
            return invalid(format!("need at least 2 folds, got {v}"));
        }
        let mut sizes = vec![0usize; v];
        for &f in &fold_of {
            if f >= v {
                return invalid(format!("fold label {f} out of range for v={v}"));
            }
            sizes[f] += 1;
        }
        if sizes.contains(&0) {
            return invalid("every fold must hold at least one observation");
        }
        Ok(FoldAssignment { v, fold_of })
    }

    pub fn n(&self) -> usize {
        self.fold_of.len()
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn fold_of(&self, i: usize) -> usize {
        self.fold_of[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.fold_of
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.v];
        for &f in &self.fold_of {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.fold_of[i] != fold).collect()
    }
}

/// Uniformly random split of `0..n` into `v` folds whose sizes differ by at
/// most one.
pub fn make_folds(n: usize, v: usize, seed: u64) -> Result<FoldAssignment> {
    if v < 2 || v > n {
        return invalid(format!("fold count must satisfy 2 <= v <= n, got v={v}, n={n}"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of[i] = pos % v;
    }
    FoldAssignment::from_labels(v, fold_of)
}

/// Cross-validated risks of every candidate plus the out-of-fold
/// ("level-one") predictions they were computed from.
#[derive(Debug, Clone)]
pub struct CvRiskTable {
    pub alpha: QuantileLevel,
    pub names: Vec<String>,
    /// Cross-validated risk per candidate.
    pub risks: Vec<f64>,
    /// `per_fold[k][v]`: mean test loss of candidate `k` on fold `v`.
    pub per_fold: Vec<Vec<f64>>,
    pub folds: FoldAssignment,
    /// Row-major `n x K` out-of-fold predictions, rows in dataset order.
    pub level_one: Vec<f64>,
    pub outcomes: Vec<f64>,
}

impl CvRiskTable {
    pub fn k(&self) -> usize {
        self.names.len()
    }

    /// Total risk from a per-fold breakdown: folds weighted by test size / n.
    pub fn aggregate(per_fold: &[f64], fold_sizes: &[usize]) -> f64 {
        let n: usize = fold_sizes.iter().sum();
        let mut acc = CompensatedSum::new();
        for (r, s) in per_fold.iter().zip(fold_sizes) {
            acc.add(r * (*s as f64 / n as f64));
        }
        acc.value()
    }

    /// Lowest-index candidate attaining the minimum risk.
    pub fn argmin(&self) -> usize {
        argmin_lowest(&self.risks)
    }

    pub fn blend_problem(&self) -> Result<BlendProblem> {
        BlendProblem::new(self.level_one.clone(), self.outcomes.clone(), self.k(), self.alpha)
    }
}

pub(crate) fn argmin_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, v) in values.iter().enumerate() {
        if *v < values[best] {
            best = k;
        }
    }
    best
}

pub fn cv_risk(
    library: &LearnerLibrary,
    data: &Dataset,
    alpha: QuantileLevel,
    folds: &FoldAssignment,
) -> Result<CvRiskTable> {
    let n = data.len();
    if folds.n() != n {
        return invalid(format!("fold assignment covers {} observations, dataset has {n}", folds.n()));
    }
    let v = folds.v();
    let k = library.len();
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..v)
        .map(|f| (folds.train_indices(f), folds.test_indices(f)))
        .collect();
    if let Some(f) = splits.iter().position(|(train, _)| train.is_empty()) {
        return invalid(format!("fold {f} leaves an empty training set"));
    }
    let train_sets: Vec<Dataset> = splits
        .iter()
        .map(|(train, _)| data.subset(train))
        .collect::<Result<_>>()?;

    let jobs: Vec<(usize, usize)> = (0..v).flat_map(|f| (0..k).map(move |c| (f, c))).collect();
    let outputs: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(f, c)| {
            let predictor = library.get(c).learner.fit(&train_sets[f], alpha)?;
            let preds: Vec<f64> = splits[f].1.iter().map(|&i| predictor.predict(&data.get(i).x)).collect();
            if let Some(p) = preds.iter().find(|p| !p.is_finite()) {
                return invalid(format!("learner `{}` produced non-finite prediction {p}", library.get(c).name));
            }
            Ok(preds)
        })
        .collect::<Result<_>>()?;

    let a = alpha.value();
    let mut level_one = vec![0.0; n * k];
    let mut per_fold = vec![vec![0.0; v]; k];
    for ((f, c), preds) in jobs.iter().zip(&outputs) {
        let test = &splits[*f].1;
        for (&i, p) in test.iter().zip(preds) {
            level_one[i * k + c] = *p;
        }
        per_fold[*c][*f] = stable_mean(test.iter().zip(preds).map(|(&i, p)| pinball(a, data.get(i).y, *p)))
            .expect("folds are nonempty");
    }
    let sizes = folds.fold_sizes();
    let risks = per_fold.iter().map(|row| CvRiskTable::aggregate(row, &sizes)).collect();
    Ok(CvRiskTable {
        alpha,
        names: library.names(),
        risks,
        per_fold,
        folds: folds.clone(),
        level_one,
        outcomes: data.outcomes().collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuperLearnerKind {
    Discrete,
    Continuous,
}

/// How continuous weights are searched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum WeightSearch {
    /// Subgradient optimiser over the full simplex (vertices included).
    Optimizer(#[serde(default)] OptimizerConfig),
    /// Exhaustive search over the finite lattice with the given mesh
    /// (`None` picks [`default_mesh`]).
    Grid { mesh: Option<usize> },
}

impl Default for WeightSearch {
    fn default() -> Self {
        WeightSearch::Optimizer(OptimizerConfig::default())
    }
}

#[derive(Debug, Clone)]
pub struct SuperLearnerFit {
    pub kind: SuperLearnerKind,
    /// Selected candidate for the discrete learner.
    pub selected: Option<usize>,
    pub weights: SimplexWeights,
    /// Cross-validated risk of the returned selection / blend.
    pub cv_risk: f64,
    pub converged: bool,
    pub table: CvRiskTable,
    /// Every candidate refit on the full data, in library order.
    pub candidates: Vec<SharedPredictor>,
    /// Largest absolute prediction of each refit candidate on the training data.
    pub candidate_bounds: Vec<f64>,
    pub ensemble: SharedPredictor,
}

fn refit_all(library: &LearnerLibrary, data: &Dataset, alpha: QuantileLevel) -> Result<Vec<SharedPredictor>> {
    (0..library.len())
        .into_par_iter()
        .map(|c| library.get(c).learner.fit(data, alpha))
        .collect()
}

pub fn fit_discrete_sl(
    library: &LearnerLibrary,
    data: &Dataset,
    alpha: QuantileLevel,
    folds: &FoldAssignment,
) -> Result<SuperLearnerFit> {
    let table = cv_risk(library, data, alpha, folds)?;
    discrete_from_table(library, data, table)
}

/// Discrete selection given an existing risk table (shares the CV fits with
/// the continuous learner).
pub fn discrete_from_table(library: &LearnerLibrary, data: &Dataset, table: CvRiskTable) -> Result<SuperLearnerFit> {
    let chosen = table.argmin();
    let candidates = refit_all(library, data, table.alpha)?;
    let bounds = candidates.iter().map(|p| prediction_bound(p.as_ref(), data)).collect();
    Ok(SuperLearnerFit {
        kind: SuperLearnerKind::Discrete,
        selected: Some(chosen),
        weights: SimplexWeights::vertex(table.k(), chosen),
        cv_risk: table.risks[chosen],
        converged: true,
        ensemble: candidates[chosen].clone(),
        candidates,
        candidate_bounds: bounds,
        table,
    })
}

pub fn fit_continuous_sl(
    library: &LearnerLibrary,
    data: &Dataset,
    alpha: QuantileLevel,
    folds: &FoldAssignment,
    search: &WeightSearch,
) -> Result<SuperLearnerFit> {
    let table = cv_risk(library, data, alpha, folds)?;
    continuous_from_table(library, data, table, search)
}

pub fn continuous_from_table(
    library: &LearnerLibrary,
    data: &Dataset,
    table: CvRiskTable,
    search: &WeightSearch,
) -> Result<SuperLearnerFit> {
    let (weights, cv_risk, converged) = continuous_weights(&table, search)?;
    let candidates = refit_all(library, data, table.alpha)?;
    let bounds = candidates.iter().map(|p| prediction_bound(p.as_ref(), data)).collect();
    let ensemble: SharedPredictor = Arc::new(BlendPredictor::new(candidates.clone(), weights.as_slice().to_vec()));
    Ok(SuperLearnerFit {
        kind: SuperLearnerKind::Continuous,
        selected: None,
        weights,
        cv_risk,
        converged,
        table,
        candidates,
        candidate_bounds: bounds,
        ensemble,
    })
}

/// Weights minimising the cross-validated blend risk. The result never has
/// higher CV risk than the best single candidate.
pub fn continuous_weights(table: &CvRiskTable, search: &WeightSearch) -> Result<(SimplexWeights, f64, bool)> {
    let problem = table.blend_problem()?;
    let solution = match search {
        WeightSearch::Optimizer(cfg) => minimize_blend_risk(&problem, cfg),
        WeightSearch::Grid { mesh } => minimize_on_grid(&problem, mesh.unwrap_or_else(|| default_mesh(table.k())))?,
    };
    // the discrete choice is a vertex; keep it if the search did worse
    let chosen = table.argmin();
    if table.risks[chosen] < solution.objective {
        return Ok((SimplexWeights::vertex(table.k(), chosen), table.risks[chosen], solution.converged));
    }
    Ok((solution.weights, solution.objective, solution.converged))
}
