//! Minimising blended pinball risk over the probability simplex.
//!
//! The objective `w -> mean_i r_i * L_alpha(y_i, z_i . w)` is convex and
//! piecewise linear. [`minimize_blend_risk`] runs averaged projected
//! subgradient descent from the best vertex and from the barycentre, then
//! polishes with exact line searches along pairwise mass transfers
//! `w + t (e_j - e_l)`, each of which is a one-dimensional weighted quantile
//! problem.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::data::QuantileLevel;
use crate::error::{invalid, Result};
use crate::loss::{pinball, pinball_subgradient};
use crate::numeric::CompensatedSum;

/// Tolerance on `sum(w) == 1`.
pub const SIMPLEX_TOL: f64 = 1e-12;

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimplexWeights(Vec<f64>);

impl SimplexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return invalid("simplex weights must have at least one entry");
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return invalid("simplex weights must be finite and non-negative");
        }
        let s: f64 = w.iter().sum();
        if (s - 1.0).abs() > SIMPLEX_TOL {
            return invalid(format!("simplex weights sum to {s}, not 1"));
        }
        Ok(SimplexWeights(w))
    }

    pub fn uniform(k: usize) -> Self {
        assert!(k > 0);
        SimplexWeights(vec![1.0 / k as f64; k])
    }

    pub fn vertex(k: usize, at: usize) -> Self {
        assert!(at < k);
        let mut w = vec![0.0; k];
        w[at] = 1.0;
        SimplexWeights(w)
    }

    /// Rescales nonnegative finite weights with positive sum onto the simplex.
    pub(crate) fn renormalized(mut w: Vec<f64>) -> Self {
        let s: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= s);
        SimplexWeights(w)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Euclidean projection onto the probability simplex by the sort-and-threshold
/// method.
pub fn project_to_simplex(v: &[f64]) -> Result<SimplexWeights> {
    if v.is_empty() {
        return invalid("cannot project an empty vector");
    }
    if v.iter().any(|x| !x.is_finite()) {
        return invalid("cannot project a non-finite vector");
    }
    Ok(project_unchecked(v))
}

fn project_unchecked(v: &[f64]) -> SimplexWeights {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    let w: Vec<f64> = v.iter().map(|x| (x - theta).max(0.0)).collect();
    if w.iter().all(|x| *x == 0.0) {
        // only reachable through rounding when all entries tie
        return SimplexWeights::uniform(v.len());
    }
    SimplexWeights::renormalized(w)
}

/// Level-one regression: blend the columns of `z` to predict `y`.
#[derive(Debug, Clone)]
pub struct BlendProblem {
    /// Row-major `n x k` matrix of candidate predictions.
    z: Vec<f64>,
    y: Vec<f64>,
    k: usize,
    alpha: f64,
    /// Per-row weights, normalised to sum to one.
    row_weights: Vec<f64>,
}

impl BlendProblem {
    pub fn new(z: Vec<f64>, y: Vec<f64>, k: usize, alpha: QuantileLevel) -> Result<Self> {
        let n = y.len();
        BlendProblem::with_row_weights(z, y, k, alpha, vec![1.0; n])
    }

    pub fn with_row_weights(
        z: Vec<f64>,
        y: Vec<f64>,
        k: usize,
        alpha: QuantileLevel,
        row_weights: Vec<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 || k == 0 {
            return invalid("blend problem needs at least one row and one column");
        }
        if z.len() != n * k {
            return invalid(format!("prediction matrix has {} entries, expected {n} x {k}", z.len()));
        }
        if row_weights.len() != n {
            return invalid("row weights must align with targets");
        }
        if z.iter().chain(&y).any(|v| !v.is_finite()) {
            return invalid("blend problem entries must be finite");
        }
        if row_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return invalid("row weights must be finite and non-negative");
        }
        let total: f64 = row_weights.iter().sum();
        if total <= 0.0 {
            return invalid("row weights must have a positive sum");
        }
        let row_weights = row_weights.into_iter().map(|w| w / total).collect();
        Ok(BlendProblem {
            z,
            y,
            k,
            alpha: alpha.value(),
            row_weights,
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.z[i * self.k..(i + 1) * self.k]
    }

    #[inline]
    fn blend(&self, i: usize, w: &[f64]) -> f64 {
        self.row(i).iter().zip(w).map(|(a, b)| a * b).sum()
    }

    /// Weighted mean pinball loss of the `w`-blend.
    pub fn objective(&self, w: &[f64]) -> f64 {
        let mut acc = CompensatedSum::new();
        for i in 0..self.n() {
            acc.add(self.row_weights[i] * pinball(self.alpha, self.y[i], self.blend(i, w)));
        }
        acc.value()
    }

    fn objective_and_subgradient(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut acc = CompensatedSum::new();
        for i in 0..self.n() {
            let pred = self.blend(i, w);
            let r = self.row_weights[i];
            acc.add(r * pinball(self.alpha, self.y[i], pred));
            let s = r * pinball_subgradient(self.alpha, self.y[i], pred);
            for (g, zij) in grad.iter_mut().zip(self.row(i)) {
                *g += s * zij;
            }
        }
        acc.value()
    }

    /// Exact minimiser of `t -> objective(w + t (e_j - e_l))` over the
    /// feasible segment `t in [-w_j, w_l]`.
    fn pair_line_search(&self, w: &[f64], j: usize, l: usize) -> f64 {
        let lo = -w[j];
        let hi = w[l];
        // each row contributes r * rho_alpha(a - t b); a kink sits at t = a / b
        let mut kinks: Vec<(f64, f64)> = Vec::new();
        let mut slope = 0.0;
        for i in 0..self.n() {
            let row = self.row(i);
            let b = row[j] - row[l];
            let r = self.row_weights[i];
            if b == 0.0 || r == 0.0 {
                continue;
            }
            let a = self.y[i] - self.blend(i, w);
            let kink = a / b;
            // the term's slope in t jumps by r * |b| when t crosses the kink
            let jump = r * b.abs();
            let left_slope = if b > 0.0 { -self.alpha * jump } else { -(1.0 - self.alpha) * jump };
            slope += left_slope;
            kinks.push((kink, jump));
        }
        if kinks.is_empty() {
            return 0.0;
        }
        kinks.sort_by(|p, q| p.0.total_cmp(&q.0));
        let mut t_star = hi;
        for (kink, jump) in kinks {
            slope += jump;
            if slope >= 0.0 {
                t_star = kink;
                break;
            }
        }
        t_star.clamp(lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub max_iters: usize,
    /// Stall tolerance on the best objective.
    pub tol: f64,
    /// Extra starts after the best vertex and the barycentre, drawn from a
    /// flat Dirichlet with `seed`.
    pub restarts: usize,
    /// Step numerator `c` in `c / sqrt(iter)`, in simplex units.
    pub step_scale: f64,
    pub seed: u64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            max_iters: 2000,
            tol: 1e-8,
            restarts: 0,
            step_scale: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlendSolution {
    pub weights: SimplexWeights,
    pub objective: f64,
    pub converged: bool,
}

const STALL_WINDOW: usize = 100;
const POLISH_SWEEPS: usize = 200;

/// Minimises the blended risk over the simplex. The returned objective is
/// never above the best vertex objective.
pub fn minimize_blend_risk(problem: &BlendProblem, config: &OptimizerConfig) -> BlendSolution {
    minimize_blend_risk_from(problem, config, None)
}

/// As [`minimize_blend_risk`], additionally starting from `warm`.
pub fn minimize_blend_risk_from(
    problem: &BlendProblem,
    config: &OptimizerConfig,
    warm: Option<&SimplexWeights>,
) -> BlendSolution {
    let k = problem.k();
    let mut best = SimplexWeights::vertex(k, 0);
    let mut best_obj = problem.objective(best.as_slice());
    for v in 1..k {
        let w = SimplexWeights::vertex(k, v);
        let obj = problem.objective(w.as_slice());
        if obj < best_obj {
            best_obj = obj;
            best = w;
        }
    }
    if k == 1 {
        return BlendSolution {
            weights: best,
            objective: best_obj,
            converged: true,
        };
    }

    let mut starts = vec![best.clone(), SimplexWeights::uniform(k)];
    if let Some(w) = warm.filter(|w| w.len() == k) {
        starts.push(w.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for _ in 0..config.restarts {
        let draw: Vec<f64> = (0..k).map(|_| Exp1.sample(&mut rng)).collect();
        starts.push(SimplexWeights::renormalized(draw));
    }

    let mut converged = true;
    for start in starts {
        let (w, obj, conv) = descend(problem, config, start);
        converged &= conv;
        if obj < best_obj {
            best_obj = obj;
            best = w;
        }
    }
    let (w, obj) = polish(problem, best, best_obj);
    BlendSolution {
        weights: w,
        objective: obj,
        converged,
    }
}

fn descend(problem: &BlendProblem, config: &OptimizerConfig, start: SimplexWeights) -> (SimplexWeights, f64, bool) {
    let k = problem.k();
    let mut w = start.into_vec();
    let mut avg = w.clone();
    let mut best = w.clone();
    let mut best_obj = f64::INFINITY;
    let mut grad = vec![0.0; k];
    let mut window_obj = f64::INFINITY;
    let mut step_vec = vec![0.0; k];
    for iter in 1..=config.max_iters {
        let obj = problem.objective_and_subgradient(&w, &mut grad);
        if obj < best_obj {
            best_obj = obj;
            best.copy_from_slice(&w);
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm == 0.0 {
            return (SimplexWeights::renormalized(best), best_obj, true);
        }
        let step = config.step_scale / (iter as f64).sqrt() / norm;
        for ((s, wi), g) in step_vec.iter_mut().zip(&w).zip(&grad) {
            *s = wi - step * g;
        }
        w = project_unchecked(&step_vec).into_vec();
        let mix = 1.0 / (iter as f64 + 1.0);
        for (a, wi) in avg.iter_mut().zip(&w) {
            *a += mix * (wi - *a);
        }
        if iter % 10 == 0 {
            let avg_obj = problem.objective(&avg);
            if avg_obj < best_obj {
                best_obj = avg_obj;
                best.copy_from_slice(&avg);
            }
        }
        if iter % STALL_WINDOW == 0 {
            if window_obj - best_obj < config.tol {
                return (SimplexWeights::renormalized(best), best_obj, true);
            }
            window_obj = best_obj;
        }
    }
    (SimplexWeights::renormalized(best), best_obj, false)
}

/// Coordinate-pair exact line searches until no pair improves.
fn polish(problem: &BlendProblem, start: SimplexWeights, start_obj: f64) -> (SimplexWeights, f64) {
    let k = problem.k();
    let mut w = start.into_vec();
    let mut obj = start_obj;
    for _ in 0..POLISH_SWEEPS {
        let mut improved = false;
        for j in 0..k {
            for l in 0..k {
                if j == l {
                    continue;
                }
                let t = problem.pair_line_search(&w, j, l);
                if t == 0.0 {
                    continue;
                }
                let mut cand = w.clone();
                cand[j] += t;
                cand[l] -= t;
                // exact endpoints keep vertices exact
                if t == -w[j] {
                    cand[j] = 0.0;
                }
                if t == w[l] {
                    cand[l] = 0.0;
                }
                cand.iter_mut().for_each(|v| *v = v.max(0.0));
                let cand = SimplexWeights::renormalized(cand).into_vec();
                let cand_obj = problem.objective(&cand);
                if cand_obj < obj {
                    obj = cand_obj;
                    w = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (SimplexWeights(w), obj)
}

/// Largest lattice the grid search will enumerate.
pub const MAX_GRID_POINTS: u128 = 10_000_000;

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
        if acc > u64::MAX as u128 {
            return u128::MAX;
        }
    }
    acc
}

/// Number of lattice points `C(mesh + k - 1, k - 1)`.
pub fn grid_size(k: usize, mesh: usize) -> u128 {
    binomial((mesh + k - 1) as u128, (k - 1) as u128)
}

/// All points `a / mesh` with nonnegative integer `a` summing to `mesh`, in
/// lexicographically decreasing order of `a` (so the first point is the
/// first vertex).
pub fn grid_simplex(k: usize, mesh: usize) -> Result<Vec<SimplexWeights>> {
    if k == 0 || mesh == 0 {
        return invalid("grid_simplex needs k >= 1 and mesh >= 1");
    }
    let count = grid_size(k, mesh);
    if count > MAX_GRID_POINTS {
        return invalid(format!(
            "simplex grid with k={k}, mesh={mesh} has {count} points (limit {MAX_GRID_POINTS}); use a smaller mesh"
        ));
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut counts = vec![0usize; k];
    fill_lattice(&mut counts, 0, mesh, mesh, &mut out);
    Ok(out)
}

fn fill_lattice(counts: &mut [usize], pos: usize, remaining: usize, mesh: usize, out: &mut Vec<SimplexWeights>) {
    if pos == counts.len() - 1 {
        counts[pos] = remaining;
        out.push(SimplexWeights(counts.iter().map(|&c| c as f64 / mesh as f64).collect()));
        return;
    }
    for c in (0..=remaining).rev() {
        counts[pos] = c;
        fill_lattice(counts, pos + 1, remaining - c, mesh, out);
    }
}

/// Exhaustive minimisation over [`grid_simplex`]; ties keep the earliest
/// lattice point.
pub fn minimize_on_grid(problem: &BlendProblem, mesh: usize) -> Result<BlendSolution> {
    let grid = grid_simplex(problem.k(), mesh)?;
    let mut best: Option<(SimplexWeights, f64)> = None;
    for w in grid {
        let obj = problem.objective(w.as_slice());
        if best.as_ref().is_none_or(|(_, b)| obj < *b) {
            best = Some((w, obj));
        }
    }
    let (weights, objective) = best.expect("grid is nonempty");
    Ok(BlendSolution {
        weights,
        objective,
        converged: true,
    })
}

/// Default lattice resolution for `k` candidates: 100 per coordinate,
/// reduced for larger `k` until the lattice has at most 10^5 points.
pub fn default_mesh(k: usize) -> usize {
    let mut mesh = 100;
    while mesh > 1 && grid_size(k, mesh) > 100_000 {
        mesh -= 1;
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn q(a: f64) -> QuantileLevel {
        QuantileLevel::new(a).unwrap()
    }

    #[test]
    fn projection_examples() {
        let w = project_to_simplex(&[0.5, 0.5, 0.5]).unwrap();
        for v in w.as_slice() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(project_to_simplex(&[1.0, 0.0, 0.0]).unwrap().as_slice(), &[1.0, 0.0, 0.0]);
        assert!(project_to_simplex(&[]).is_err());
        assert!(project_to_simplex(&[f64::NAN]).is_err());
    }

    #[test]
    fn projection_of_two_zero_matches_grid() {
        let w = project_to_simplex(&[2.0, 0.0]).unwrap();
        // grid oracle over the 1-simplex at resolution 1e-4
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=10_000 {
            let a = i as f64 * 1e-4;
            let d = (a - 2.0).powi(2) + (1.0 - a).powi(2);
            if d < best.0 {
                best = (d, a);
            }
        }
        assert!((w.as_slice()[0] - best.1).abs() <= 1e-4);
        assert_eq!(w.as_slice(), &[1.0, 0.0]);
    }

    #[test]
    fn single_candidate_is_trivial() {
        let p = BlendProblem::new(vec![1.0, 2.0], vec![1.5, 1.5], 1, q(0.5)).unwrap();
        let s = minimize_blend_risk(&p, &OptimizerConfig::default());
        assert_eq!(s.weights.as_slice(), &[1.0]);
        assert!((s.objective - 0.25).abs() < 1e-15);
    }

    #[test]
    fn identical_columns_give_column_risk() {
        let z = vec![1.0, 1.0, 3.0, 3.0, -2.0, -2.0];
        let y = vec![0.0, 4.0, -1.0];
        let p = BlendProblem::new(z, y, 2, q(0.3)).unwrap();
        let s = minimize_blend_risk(&p, &OptimizerConfig::default());
        assert_eq!(s.objective, p.objective(&[1.0, 0.0]));
    }

    #[test]
    fn single_row_interpolation() {
        let p = BlendProblem::new(vec![0.0, 1.0], vec![0.7], 2, q(0.5)).unwrap();
        let s = minimize_blend_risk(&p, &OptimizerConfig::default());
        assert!(s.objective <= 1e-6);
        assert!((s.weights.as_slice()[1] - 0.7).abs() <= 1e-6);
    }

    #[test]
    fn grid_examples() {
        let g = grid_simplex(2, 2).unwrap();
        let pts: Vec<&[f64]> = g.iter().map(|w| w.as_slice()).collect();
        assert_eq!(pts, vec![&[1.0, 0.0][..], &[0.5, 0.5][..], &[0.0, 1.0][..]]);
        assert_eq!(grid_simplex(1, 7).unwrap().len(), 1);
        assert_eq!(grid_simplex(3, 2).unwrap().len(), 6);
        assert_eq!(grid_simplex(4, 20).unwrap().len() as u128, grid_size(4, 20));
        assert!(grid_simplex(20, 100).is_err());
        assert!(grid_simplex(0, 3).is_err());
    }

    #[test]
    fn grid_contains_vertices() {
        let g = grid_simplex(3, 5).unwrap();
        for v in 0..3 {
            assert!(g.iter().any(|w| w == &SimplexWeights::vertex(3, v)));
        }
    }

    fn random_problem(k: usize, n: usize, seed: u64, alpha: f64) -> BlendProblem {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<f64> = (0..n * k).map(|_| rng.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        BlendProblem::new(z, y, k, q(alpha)).unwrap()
    }

    proptest! {
        #[test]
        fn projection_is_feasible_and_idempotent(v in prop::collection::vec(-10f64..10.0, 1..8)) {
            let w = project_to_simplex(&v).unwrap();
            prop_assert!(w.as_slice().iter().all(|x| *x >= 0.0));
            prop_assert!((w.as_slice().iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
            let again = project_to_simplex(w.as_slice()).unwrap();
            for (a, b) in w.as_slice().iter().zip(again.as_slice()) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn objective_is_convex(seed in any::<u64>(), k in 2usize..5, lam in 0f64..=1.0,
                               a in prop::collection::vec(0f64..1.0, 4), b in prop::collection::vec(0f64..1.0, 4)) {
            let p = random_problem(k, 12, seed, 0.3);
            let w1 = project_to_simplex(&a[..k]).unwrap().into_vec();
            let w2 = project_to_simplex(&b[..k]).unwrap().into_vec();
            let mid: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| lam * x + (1.0 - lam) * y).collect();
            prop_assert!(p.objective(&mid) <= lam * p.objective(&w1) + (1.0 - lam) * p.objective(&w2) + 1e-12);
        }

        #[test]
        fn optimizer_matches_coarse_grid(seed in any::<u64>(), k in 1usize..5, n in 1usize..30, alpha in 0.05f64..0.95) {
            let p = random_problem(k, n, seed, alpha);
            let s = minimize_blend_risk(&p, &OptimizerConfig::default());
            let g = minimize_on_grid(&p, 20).unwrap();
            prop_assert!(s.objective <= g.objective + 1e-9, "opt {} grid {}", s.objective, g.objective);
            prop_assert!((s.weights.as_slice().iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL);
            for v in 0..k {
                prop_assert!(s.objective <= p.objective(SimplexWeights::vertex(k, v).as_slice()));
            }
        }
    }
}
