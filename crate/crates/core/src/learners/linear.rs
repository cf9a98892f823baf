//! Linear quantile regression by averaged subgradient descent.
//!
//! Covariates and outcomes are standardised, the pinball objective is
//! minimised with steps `c / sqrt(iter)` projected onto a coefficient box,
//! and the best of the plain and averaged iterates is kept. A short
//! basis-interpolation polish then moves to nearby vertices of the
//! piecewise-linear objective, where its minima live.

use std::sync::Arc;

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileLevel};
use crate::error::{invalid, Result};
use crate::loss::{pinball, pinball_subgradient};
use crate::numeric::Fnv1a;
use crate::predictor::{Predictor, SharedPredictor};

use super::quantile::{select_lower_quantile, Standardizer};

/// Bound on standardised coefficients.
const COEF_BOX: f64 = 1e3;
const STALL_WINDOW: usize = 200;
const POLISH_ROUNDS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearConfig {
    pub max_iters: usize,
    /// Stop when the best objective improves by less than this over a window.
    pub tol: f64,
    /// Step size numerator `c` in `c / sqrt(iter)`.
    pub step_scale: f64,
}

impl Default for LinearConfig {
    fn default() -> Self {
        LinearConfig {
            max_iters: 5000,
            tol: 1e-6,
            step_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearPredictor {
    standardizer: Standardizer,
    y_center: f64,
    y_scale: f64,
    /// Intercept followed by one slope per standardised covariate.
    coef: Vec<f64>,
    converged: bool,
    objective: f64,
}

impl LinearPredictor {
    pub fn converged(&self) -> bool {
        self.converged
    }

    /// Mean training pinball loss at the returned coefficients.
    pub fn training_objective(&self) -> f64 {
        self.objective
    }
}

impl Predictor for LinearPredictor {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut z = vec![0.0; x.len()];
        self.standardizer.transform_into(x, &mut z);
        let lin: f64 = self.coef[0] + self.coef[1..].iter().zip(&z).map(|(b, v)| b * v).sum::<f64>();
        self.y_center + self.y_scale * lin
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write_bytes(b"linear");
        self.standardizer.hash_into(&mut h);
        h.write_f64(self.y_center);
        h.write_f64(self.y_scale);
        for c in &self.coef {
            h.write_f64(*c);
        }
        h.finish()
    }
}

struct Problem {
    /// Row-major design with a leading column of ones, `n x p`.
    design: Vec<f64>,
    y: Vec<f64>,
    p: usize,
    alpha: f64,
}

impl Problem {
    fn row(&self, i: usize) -> &[f64] {
        &self.design[i * self.p..(i + 1) * self.p]
    }

    fn n(&self) -> usize {
        self.y.len()
    }

    fn fitted(&self, i: usize, theta: &[f64]) -> f64 {
        self.row(i).iter().zip(theta).map(|(a, b)| a * b).sum()
    }

    fn objective(&self, theta: &[f64]) -> f64 {
        let total: f64 = (0..self.n())
            .map(|i| pinball(self.alpha, self.y[i], self.fitted(i, theta)))
            .sum();
        total / self.n() as f64
    }

    /// Objective and a subgradient in one pass.
    fn objective_and_subgradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut total = 0.0;
        for i in 0..self.n() {
            let pred = self.fitted(i, theta);
            total += pinball(self.alpha, self.y[i], pred);
            let s = pinball_subgradient(self.alpha, self.y[i], pred);
            for (g, a) in grad.iter_mut().zip(self.row(i)) {
                *g += s * a;
            }
        }
        let n = self.n() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        total / n
    }
}

pub fn fit_linear_quantile(data: &Dataset, alpha: QuantileLevel, config: &LinearConfig) -> Result<LinearPredictor> {
    validate(config)?;
    let n = data.len();
    let d = data.dim();
    if n <= d {
        warn!("linear quantile fit with n={n} <= d={d}; the solution is not unique");
    }
    let standardizer = Standardizer::fit(data.iter().map(|o| o.x.as_slice()), d);

    let mut ys: Vec<f64> = data.outcomes().collect();
    let y_center = ys.iter().sum::<f64>() / n as f64;
    let var = ys.iter().map(|y| (y - y_center).powi(2)).sum::<f64>() / n as f64;
    let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
    ys.iter_mut().for_each(|y| *y = (*y - y_center) / y_scale);

    let p = d + 1;
    let mut design = Vec::with_capacity(n * p);
    let mut z = vec![0.0; d];
    for obs in data {
        standardizer.transform_into(&obs.x, &mut z);
        design.push(1.0);
        design.extend_from_slice(&z);
    }
    // columns the polish may use as basis directions
    let active: Vec<usize> = std::iter::once(0)
        .chain((0..d).filter(|&j| !standardizer.is_constant(j)).map(|j| j + 1))
        .collect();
    let problem = Problem {
        design,
        y: ys.clone(),
        p,
        alpha: alpha.value(),
    };

    let mut theta = vec![0.0; p];
    theta[0] = select_lower_quantile(&mut ys, alpha.value());
    let mut best = theta.clone();
    let mut best_obj = problem.objective(&theta);
    let mut average = theta.clone();
    let mut grad = vec![0.0; p];
    let mut window_start_obj = best_obj;
    let mut converged = false;

    for iter in 1..=config.max_iters {
        let obj = problem.objective_and_subgradient(&theta, &mut grad);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&theta);
        }
        let step = config.step_scale / (iter as f64).sqrt();
        for (t, g) in theta.iter_mut().zip(&grad) {
            *t = (*t - step * g).clamp(-COEF_BOX, COEF_BOX);
        }
        let w = 1.0 / (iter as f64 + 1.0);
        for (a, t) in average.iter_mut().zip(&theta) {
            *a += w * (t - *a);
        }
        if iter % 10 == 0 {
            let avg_obj = problem.objective(&average);
            if avg_obj < best_obj {
                best_obj = avg_obj;
                best.copy_from_slice(&average);
            }
        }
        if iter % STALL_WINDOW == 0 {
            if window_start_obj - best_obj < config.tol {
                converged = true;
                break;
            }
            window_start_obj = best_obj;
        }
    }

    let (theta, objective) = polish(&problem, &active, best, best_obj);
    if !converged {
        debug!("linear quantile fit stopped at max_iters={} before stalling", config.max_iters);
    }
    Ok(LinearPredictor {
        standardizer,
        y_center,
        y_scale,
        coef: theta,
        converged,
        objective: objective * y_scale,
    })
}

pub(crate) fn validate(config: &LinearConfig) -> Result<()> {
    if config.max_iters == 0 {
        return invalid("linear learner needs max_iters >= 1");
    }
    if !(config.tol.is_finite() && config.tol >= 0.0) {
        return invalid(format!("linear learner tol must be finite and >= 0, got {}", config.tol));
    }
    if !(config.step_scale.is_finite() && config.step_scale > 0.0) {
        return invalid(format!("linear learner step_scale must be > 0, got {}", config.step_scale));
    }
    Ok(())
}

/// Repeatedly interpolates the `|active|` points with the smallest absolute
/// residuals (skipping linearly dependent rows) and keeps the candidate if it
/// lowers the objective.
fn polish(problem: &Problem, active: &[usize], mut theta: Vec<f64>, mut obj: f64) -> (Vec<f64>, f64) {
    let m = active.len();
    for _ in 0..POLISH_ROUNDS {
        let mut order: Vec<(f64, usize)> = (0..problem.n())
            .map(|i| ((problem.y[i] - problem.fitted(i, &theta)).abs(), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        let mut basis = RowBasis::new(m);
        let mut rows = Vec::with_capacity(m);
        for &(_, i) in &order {
            let row: Vec<f64> = active.iter().map(|&j| problem.row(i)[j]).collect();
            if basis.try_add(&row) {
                rows.push((row, problem.y[i]));
                if rows.len() == m {
                    break;
                }
            }
        }
        if rows.len() < m {
            break;
        }
        let Some(sol) = solve(rows) else { break };
        let mut candidate = vec![0.0; problem.p];
        for (&j, v) in active.iter().zip(&sol) {
            candidate[j] = *v;
        }
        let cand_obj = problem.objective(&candidate);
        if cand_obj < obj {
            theta = candidate;
            obj = cand_obj;
        } else {
            break;
        }
    }
    (theta, obj)
}

/// Incremental Gram-Schmidt rank test.
struct RowBasis {
    vectors: Vec<Vec<f64>>,
}

impl RowBasis {
    fn new(cap: usize) -> Self {
        RowBasis {
            vectors: Vec::with_capacity(cap),
        }
    }

    fn try_add(&mut self, row: &[f64]) -> bool {
        let norm0 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return false;
        }
        let mut r = row.to_vec();
        for q in &self.vectors {
            let dot: f64 = r.iter().zip(q).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-9 * norm0 {
            return false;
        }
        r.iter_mut().for_each(|v| *v /= norm);
        self.vectors.push(r);
        true
    }
}

/// Gaussian elimination with partial pivoting on a square system given as
/// `(row, rhs)` pairs.
fn solve(rows: Vec<(Vec<f64>, f64)>) -> Option<Vec<f64>> {
    let m = rows.len();
    let mut a: Vec<Vec<f64>> = rows
        .into_iter()
        .map(|(mut r, b)| {
            r.push(b);
            r
        })
        .collect();
    for col in 0..m {
        let pivot = (col..m).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-300 {
            return None;
        }
        a.swap(col, pivot);
        for i in col + 1..m {
            let f = a[i][col] / a[col][col];
            if f != 0.0 {
                let (upper, lower) = a.split_at_mut(i);
                for (dst, src) in lower[0][col..=m].iter_mut().zip(&upper[col][col..=m]) {
                    *dst -= f * src;
                }
            }
        }
    }
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = (i + 1..m).map(|j| a[i][j] * x[j]).sum();
        x[i] = (a[i][m] - s) / a[i][i];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[derive(Debug, Clone, Default)]
pub struct LinearLearner {
    config: LinearConfig,
}

impl LinearLearner {
    pub fn new(config: LinearConfig) -> Self {
        LinearLearner { config }
    }
}

impl super::Learner for LinearLearner {
    fn fit(&self, data: &Dataset, alpha: QuantileLevel) -> Result<SharedPredictor> {
        Ok(Arc::new(fit_linear_quantile(data, alpha, &self.config)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::empirical_quantile;
    use crate::loss::empirical_risk;

    fn q(a: f64) -> QuantileLevel {
        QuantileLevel::new(a).unwrap()
    }

    #[test]
    fn recovers_noise_free_line() {
        let xs: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 / 7.0 - 2.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x[0]).collect();
        let data = Dataset::from_xy(xs, ys).unwrap();
        let cfg = LinearConfig::default();
        let fit = fit_linear_quantile(&data, q(0.5), &cfg).unwrap();
        assert!(empirical_risk(q(0.5), &fit, &data).unwrap() <= cfg.tol);
        assert!((fit.predict(&[10.0]) - 20.0).abs() < 1e-6);
    }

    #[test]
    fn identical_covariates_give_median() {
        let ys = vec![3.0, -1.0, 4.0, 1.5, 9.0, 2.6, 5.0];
        let data = Dataset::from_xy(vec![vec![0.5, 2.0]; ys.len()], ys.clone()).unwrap();
        let cfg = LinearConfig::default();
        let fit = fit_linear_quantile(&data, q(0.5), &cfg).unwrap();
        let median = empirical_quantile(&ys, q(0.5)).unwrap();
        assert!((fit.predict(&[0.5, 2.0]) - median).abs() <= cfg.tol);
    }

    #[test]
    fn tiny_instance_beats_brute_force_grid() {
        let xs = [-1.3, 0.2, 0.9, 1.7, 2.4];
        let ys = [0.4, -0.7, 2.1, 1.2, 3.9];
        let data = Dataset::from_xy(xs.iter().map(|x| vec![*x]).collect(), ys.to_vec()).unwrap();
        for a in [0.2, 0.5, 0.8] {
            let obj_at = |b0: f64, b1: f64| {
                xs.iter().zip(&ys).map(|(x, y)| pinball(a, *y, b0 + b1 * x)).sum::<f64>() / 5.0
            };
            let mut grid_best = f64::INFINITY;
            for i in 0..=1000 {
                for j in 0..=1000 {
                    let b0 = -5.0 + 0.01 * i as f64;
                    let b1 = -5.0 + 0.01 * j as f64;
                    grid_best = grid_best.min(obj_at(b0, b1));
                }
            }
            let fit = fit_linear_quantile(&data, q(a), &LinearConfig::default()).unwrap();
            let obj = empirical_risk(q(a), &fit, &data).unwrap();
            assert!(obj <= grid_best + 0.02, "alpha={a}: {obj} vs grid {grid_best}");
        }
    }

    #[test]
    fn non_finite_covariates_rejected() {
        assert!(Dataset::from_xy(vec![vec![f64::NAN]], vec![1.0]).is_err());
        let data = Dataset::from_xy(vec![vec![0.0]], vec![1.0]).unwrap();
        let bad = LinearConfig {
            max_iters: 0,
            ..LinearConfig::default()
        };
        assert!(fit_linear_quantile(&data, q(0.5), &bad).is_err());
    }
}
