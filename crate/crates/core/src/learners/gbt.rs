//! Gradient-boosted regression trees for the pinball loss.
//!
//! Each round fits a variance-reduction tree to the negative pinball
//! subgradients and then replaces every leaf value by the empirical
//! `alpha`-quantile of the current residuals in that leaf. With
//! `learning_rate <= 1` that leaf step cannot increase the training risk.

use std::sync::Arc;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileLevel};
use crate::error::{invalid, Result};
use crate::loss::pinball;
use crate::numeric::{stable_mean, Fnv1a};
use crate::predictor::{Predictor, SharedPredictor};

use super::quantile::select_lower_quantile;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbtConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_trees: 100,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_of(&self, x: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if x[feature] <= threshold { left } else { right },
                Node::Leaf(_) => return id,
            }
        }
    }

    fn predict(&self, x: &[f64]) -> f64 {
        match self.nodes[self.leaf_of(x)] {
            Node::Leaf(v) => v,
            Node::Split { .. } => unreachable!(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GbtPredictor {
    init: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
    training_risk: Vec<f64>,
}

impl GbtPredictor {
    /// Training risk before boosting and after each round.
    pub fn training_risk(&self) -> &[f64] {
        &self.training_risk
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

impl Predictor for GbtPredictor {
    fn predict(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.init, |acc, t| acc + self.learning_rate * t.predict(x))
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write_bytes(b"gbt");
        h.write_f64(self.init);
        h.write_f64(self.learning_rate);
        for t in &self.trees {
            for n in &t.nodes {
                match *n {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                    } => {
                        h.write_u64(feature as u64);
                        h.write_f64(threshold);
                        h.write_u64(left as u64);
                        h.write_u64(right as u64);
                    }
                    Node::Leaf(v) => h.write_f64(v),
                }
            }
        }
        h.finish()
    }
}

struct TreeBuilder<'a> {
    data: &'a Dataset,
    /// Sample indices sorted by each feature.
    order: &'a [Vec<usize>],
    targets: &'a [f64],
    in_node: Vec<bool>,
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
    /// Samples reaching each leaf, indexed by node id.
    leaf_members: Vec<(usize, Vec<usize>)>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, members: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        if depth < self.max_depth && members.len() >= 2 * self.min_leaf {
            if let Some((feature, threshold)) = self.best_split(&members) {
                let (left, right): (Vec<usize>, Vec<usize>) = members
                    .into_iter()
                    .partition(|&i| self.data.get(i).x[feature] <= threshold);
                let l = self.build(left, depth + 1);
                let r = self.build(right, depth + 1);
                self.nodes[id] = Node::Split {
                    feature,
                    threshold,
                    left: l,
                    right: r,
                };
                return id;
            }
        }
        self.leaf_members.push((id, members));
        id
    }

    fn best_split(&mut self, members: &[usize]) -> Option<(usize, f64)> {
        let n = members.len();
        let total: f64 = members.iter().map(|&i| self.targets[i]).sum();
        let sumsq: f64 = members.iter().map(|&i| self.targets[i] * self.targets[i]).sum();
        let parent = total * total / n as f64;
        let min_gain = 1e-12 * sumsq.max(f64::MIN_POSITIVE);

        for &i in members {
            self.in_node[i] = true;
        }
        let mut best: Option<(f64, usize, f64)> = None;
        let mut sorted = Vec::with_capacity(n);
        for (feature, order) in self.order.iter().enumerate() {
            sorted.clear();
            sorted.extend(order.iter().copied().filter(|&i| self.in_node[i]));
            let mut left_sum = 0.0;
            for pos in 0..n - 1 {
                left_sum += self.targets[sorted[pos]];
                let n_left = pos + 1;
                let n_right = n - n_left;
                if n_left < self.min_leaf || n_right < self.min_leaf {
                    continue;
                }
                let here = self.data.get(sorted[pos]).x[feature];
                let next = self.data.get(sorted[pos + 1]).x[feature];
                if here == next {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64;
                if score - parent > min_gain && best.is_none_or(|(s, _, _)| score > s) {
                    let mid = here + (next - here) / 2.0;
                    let threshold = if mid < next { mid } else { here };
                    best = Some((score, feature, threshold));
                }
            }
        }
        for &i in members {
            self.in_node[i] = false;
        }
        best.map(|(_, f, t)| (f, t))
    }
}

pub(crate) fn validate(config: &GbtConfig) -> Result<()> {
    if config.max_depth == 0 {
        return invalid("gbt max_depth must be >= 1");
    }
    if config.min_leaf == 0 {
        return invalid("gbt min_leaf must be >= 1");
    }
    if !(config.learning_rate.is_finite() && config.learning_rate >= 0.0) {
        return invalid(format!("gbt learning_rate must be finite and >= 0, got {}", config.learning_rate));
    }
    Ok(())
}

pub fn fit_gbt_quantile(data: &Dataset, alpha: QuantileLevel, config: &GbtConfig) -> Result<GbtPredictor> {
    validate(config)?;
    let a = alpha.value();
    let n = data.len();
    let ys: Vec<f64> = data.outcomes().collect();
    let init = select_lower_quantile(&mut ys.clone(), a);
    let mut fitted = vec![init; n];
    let risk = |fitted: &[f64]| stable_mean(ys.iter().zip(fitted).map(|(y, f)| pinball(a, *y, *f))).unwrap_or(0.0);
    let mut training_risk = vec![risk(&fitted)];
    let mut trees = Vec::new();

    let rounds = if config.learning_rate == 0.0 { 0 } else { config.n_trees };
    if rounds > 0 {
        let order: Vec<Vec<usize>> = (0..data.dim())
            .map(|j| {
                let mut idx: Vec<usize> = (0..n).collect();
                idx.sort_by(|&p, &q| data.get(p).x[j].total_cmp(&data.get(q).x[j]).then(p.cmp(&q)));
                idx
            })
            .collect();
        let mut residuals = vec![0.0; n];
        let mut targets = vec![0.0; n];
        for round in 0..rounds {
            for i in 0..n {
                residuals[i] = ys[i] - fitted[i];
                targets[i] = if residuals[i] > 0.0 { a } else { -(1.0 - a) };
            }
            let mut builder = TreeBuilder {
                data,
                order: &order,
                targets: &targets,
                in_node: vec![false; n],
                max_depth: config.max_depth,
                min_leaf: config.min_leaf,
                nodes: Vec::new(),
                leaf_members: Vec::new(),
            };
            builder.build((0..n).collect(), 0);
            let TreeBuilder {
                mut nodes,
                leaf_members,
                ..
            } = builder;
            for (id, members) in leaf_members {
                let mut leaf_res: Vec<f64> = members.iter().map(|&i| residuals[i]).collect();
                let value = select_lower_quantile(&mut leaf_res, a);
                nodes[id] = Node::Leaf(value);
                for i in members {
                    fitted[i] += config.learning_rate * value;
                }
            }
            trees.push(Tree { nodes });
            let r = risk(&fitted);
            let prev = *training_risk.last().unwrap();
            if r > prev * (1.0 + 1e-12) + 1e-15 {
                warn!("gbt round {round}: training risk rose from {prev} to {r}");
            }
            training_risk.push(r);
            if r == 0.0 {
                break;
            }
        }
    }
    Ok(GbtPredictor {
        init,
        learning_rate: config.learning_rate,
        trees,
        training_risk,
    })
}

#[derive(Debug, Clone, Default)]
pub struct GbtLearner {
    config: GbtConfig,
}

impl GbtLearner {
    pub fn new(config: GbtConfig) -> Self {
        GbtLearner { config }
    }
}

impl super::Learner for GbtLearner {
    fn fit(&self, data: &Dataset, alpha: QuantileLevel) -> Result<SharedPredictor> {
        Ok(Arc::new(fit_gbt_quantile(data, alpha, &self.config)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::fit_constant;

    fn q(a: f64) -> QuantileLevel {
        QuantileLevel::new(a).unwrap()
    }

    fn noisy(n: usize) -> Dataset {
        let xs: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.11).cos()])
            .collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| x[0] * 2.0 + x[1] + ((i * 7919) % 13) as f64 / 13.0)
            .collect();
        Dataset::from_xy(xs, ys).unwrap()
    }

    #[test]
    fn zero_trees_or_zero_rate_is_constant() {
        let data = noisy(60);
        for a in [0.1, 0.5, 0.9] {
            let c = fit_constant(&data, q(a)).unwrap();
            let no_trees = GbtConfig {
                n_trees: 0,
                ..GbtConfig::default()
            };
            let no_rate = GbtConfig {
                learning_rate: 0.0,
                ..GbtConfig::default()
            };
            for cfg in [no_trees, no_rate] {
                let g = fit_gbt_quantile(&data, q(a), &cfg).unwrap();
                for o in &data {
                    assert_eq!(g.predict(&o.x), c.predict(&o.x));
                }
            }
        }
    }

    #[test]
    fn step_function_is_learned() {
        let xs: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64 / 100.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| if x[0] > 0.5 { 1.0 } else { 0.0 }).collect();
        let data = Dataset::from_xy(xs, ys).unwrap();
        let cfg = GbtConfig {
            n_trees: 60,
            max_depth: 1,
            learning_rate: 0.1,
            min_leaf: 1,
        };
        let g = fit_gbt_quantile(&data, q(0.5), &cfg).unwrap();
        let traj = g.training_risk();
        assert!(traj[0] > 0.0);
        assert!(*traj.last().unwrap() <= 0.01 * traj[0]);
    }

    #[test]
    fn training_risk_never_increases() {
        let data = noisy(200);
        for a in [0.05, 0.5, 0.95] {
            let g = fit_gbt_quantile(&data, q(a), &GbtConfig::default()).unwrap();
            for w in g.training_risk().windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "{w:?}");
            }
            assert!(g.training_risk().last().unwrap() < &g.training_risk()[0]);
        }
    }

    #[test]
    fn invalid_config() {
        let data = noisy(10);
        let bad = [
            GbtConfig { max_depth: 0, ..GbtConfig::default() },
            GbtConfig { min_leaf: 0, ..GbtConfig::default() },
            GbtConfig { learning_rate: -0.1, ..GbtConfig::default() },
            GbtConfig { learning_rate: f64::NAN, ..GbtConfig::default() },
        ];
        for cfg in bad {
            assert!(fit_gbt_quantile(&data, q(0.5), &cfg).is_err());
        }
    }
}
