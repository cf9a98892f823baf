//! k-nearest-neighbour quantiles under standardised Euclidean distance.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, QuantileLevel};
use crate::error::{invalid, Result};
use crate::numeric::Fnv1a;
use crate::predictor::{Predictor, SharedPredictor};

use super::quantile::{select_lower_quantile, Standardizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KnnConfig {
    pub k: usize,
    /// Use `min(k, n)` neighbours instead of failing when the training set
    /// is smaller than `k` (early online steps, small folds).
    pub shrink_to_fit: bool,
}

impl Default for KnnConfig {
    fn default() -> Self {
        KnnConfig {
            k: 20,
            shrink_to_fit: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KnnPredictor {
    standardizer: Standardizer,
    /// Standardised training covariates, row-major.
    points: Vec<f64>,
    outcomes: Vec<f64>,
    dim: usize,
    k: usize,
    alpha: f64,
}

impl KnnPredictor {
    pub fn k(&self) -> usize {
        self.k
    }
}

impl Predictor for KnnPredictor {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut z = vec![0.0; self.dim];
        self.standardizer.transform_into(x, &mut z);
        let mut dist: Vec<(f64, usize)> = self
            .points
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, p)| (p.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
            .collect();
        // (distance, index) is a total order, so the k smallest are unique
        let by_dist = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < dist.len() {
            dist.select_nth_unstable_by(self.k - 1, by_dist);
        }
        let mut ys: Vec<f64> = dist[..self.k].iter().map(|&(_, i)| self.outcomes[i]).collect();
        select_lower_quantile(&mut ys, self.alpha)
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write_bytes(b"knn");
        self.standardizer.hash_into(&mut h);
        h.write_u64(self.k as u64);
        h.write_f64(self.alpha);
        for v in self.points.iter().chain(&self.outcomes) {
            h.write_f64(*v);
        }
        h.finish()
    }
}

pub fn fit_knn_quantile(data: &Dataset, alpha: QuantileLevel, config: &KnnConfig) -> Result<KnnPredictor> {
    let n = data.len();
    let k = match config.k {
        0 => return invalid("k-NN needs k >= 1"),
        k if k > n && config.shrink_to_fit => n,
        k if k > n => return invalid(format!("k-NN with k={k} exceeds training size n={n}")),
        k => k,
    };
    let dim = data.dim();
    let standardizer = Standardizer::fit(data.iter().map(|o| o.x.as_slice()), dim);
    let mut points = vec![0.0; n * dim];
    for (obs, row) in data.iter().zip(points.chunks_exact_mut(dim)) {
        standardizer.transform_into(&obs.x, row);
    }
    Ok(KnnPredictor {
        standardizer,
        points,
        outcomes: data.outcomes().collect(),
        dim,
        k,
        alpha: alpha.value(),
    })
}

#[derive(Debug, Clone, Default)]
pub struct KnnLearner {
    config: KnnConfig,
}

impl KnnLearner {
    pub fn new(config: KnnConfig) -> Self {
        KnnLearner { config }
    }
}

impl super::Learner for KnnLearner {
    fn fit(&self, data: &Dataset, alpha: QuantileLevel) -> Result<SharedPredictor> {
        Ok(Arc::new(fit_knn_quantile(data, alpha, &self.config)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{empirical_quantile, fit_constant};

    fn q(a: f64) -> QuantileLevel {
        QuantileLevel::new(a).unwrap()
    }

    fn strict(k: usize) -> KnnConfig {
        KnnConfig { k, shrink_to_fit: false }
    }

    #[test]
    fn k_equal_n_is_constant_fit() {
        let data = Dataset::from_xy(
            vec![vec![0.0], vec![1.0], vec![5.0], vec![2.0], vec![3.0]],
            vec![4.0, -1.0, 2.0, 8.0, 0.5],
        )
        .unwrap();
        for a in [0.1, 0.5, 0.9] {
            let knn = fit_knn_quantile(&data, q(a), &strict(5)).unwrap();
            let c = fit_constant(&data, q(a)).unwrap();
            for x in [-3.0, 0.0, 2.2, 100.0] {
                assert_eq!(knn.predict(&[x]), c.predict(&[x]));
            }
        }
    }

    #[test]
    fn one_neighbour_exact_match_uses_lowest_index() {
        let data = Dataset::from_xy(vec![vec![1.0], vec![2.0], vec![1.0]], vec![10.0, 20.0, 30.0]).unwrap();
        let knn = fit_knn_quantile(&data, q(0.5), &strict(1)).unwrap();
        assert_eq!(knn.predict(&[1.0]), 10.0);
        assert_eq!(knn.predict(&[2.0]), 20.0);
    }

    #[test]
    fn planted_two_neighbours_match_exhaustive_sort() {
        let xs = [vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 3.0], vec![4.0, 4.0]];
        let ys = [1.0, 5.0, -2.0, 7.0];
        let data = Dataset::from_xy(xs.to_vec(), ys.to_vec()).unwrap();
        let knn = fit_knn_quantile(&data, q(0.5), &strict(2)).unwrap();
        // oracle: standardise with population moments, sort all distances
        let mean = [1.25, 1.75];
        let sd: Vec<f64> = (0..2)
            .map(|j| (xs.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / 4.0).sqrt())
            .collect();
        for query in [[0.2, 0.1], [3.0, 3.0], [0.0, 2.0]] {
            let mut d: Vec<(f64, usize)> = xs
                .iter()
                .enumerate()
                .map(|(i, x)| {
                    let s: f64 = (0..2).map(|j| ((x[j] - query[j]) / sd[j]).powi(2)).sum();
                    (s, i)
                })
                .collect();
            d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let near: Vec<f64> = d[..2].iter().map(|(_, i)| ys[*i]).collect();
            let expected = empirical_quantile(&near, q(0.5)).unwrap();
            assert_eq!(knn.predict(&query), expected);
        }
    }

    #[test]
    fn k_out_of_range() {
        let data = Dataset::from_xy(vec![vec![0.0], vec![1.0]], vec![0.0, 1.0]).unwrap();
        assert!(fit_knn_quantile(&data, q(0.5), &strict(0)).is_err());
        assert!(fit_knn_quantile(&data, q(0.5), &strict(3)).is_err());
        let shrunk = fit_knn_quantile(&data, q(0.5), &KnnConfig { k: 3, shrink_to_fit: true }).unwrap();
        assert_eq!(shrunk.k(), 2);
    }
}
