//! Observations, datasets and quantile levels.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Target level of a conditional quantile, strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct QuantileLevel(f64);

impl QuantileLevel {
    pub fn new(alpha: f64) -> Result<Self> {
        if alpha.is_finite() && alpha > 0.0 && alpha < 1.0 {
            Ok(QuantileLevel(alpha))
        } else {
            invalid(format!("quantile level must lie in (0, 1), got {alpha}"))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// The reflected level 1 - alpha.
    pub fn complement(self) -> Self {
        QuantileLevel(1.0 - self.0)
    }
}

impl TryFrom<f64> for QuantileLevel {
    type Error = crate::QslError;

    fn try_from(v: f64) -> Result<Self> {
        QuantileLevel::new(v)
    }
}

impl From<QuantileLevel> for f64 {
    fn from(q: QuantileLevel) -> f64 {
        q.0
    }
}

impl std::fmt::Display for QuantileLevel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Observation { x, y }
    }
}

/// A nonempty collection of observations sharing one covariate dimension.
///
/// `c0` records the largest absolute outcome seen; it is only used for
/// diagnostics (Bernstein numbers, out-of-range prediction warnings).
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    observations: Vec<Observation>,
    dim: usize,
    c0: f64,
}

impl Dataset {
    pub fn new(observations: Vec<Observation>) -> Result<Self> {
        let Some(first) = observations.first() else {
            return invalid("dataset must contain at least one observation");
        };
        let dim = first.x.len();
        if dim == 0 {
            return invalid("covariate dimension must be at least 1");
        }
        let mut c0 = 0.0f64;
        for (i, obs) in observations.iter().enumerate() {
            if obs.x.len() != dim {
                return invalid(format!(
                    "observation {i} has {} covariates, expected {dim}",
                    obs.x.len()
                ));
            }
            if !obs.y.is_finite() {
                return invalid(format!("observation {i} has a non-finite outcome"));
            }
            if let Some(j) = obs.x.iter().position(|v| !v.is_finite()) {
                return invalid(format!("observation {i} has a non-finite covariate x{}", j + 1));
            }
            c0 = c0.max(obs.y.abs());
        }
        Ok(Dataset {
            observations,
            dim,
            c0,
        })
    }

    /// Builds a dataset from parallel covariate rows and outcomes.
    pub fn from_xy(xs: Vec<Vec<f64>>, ys: Vec<f64>) -> Result<Self> {
        if xs.len() != ys.len() {
            return invalid(format!("{} covariate rows but {} outcomes", xs.len(), ys.len()));
        }
        Dataset::new(xs.into_iter().zip(ys).map(|(x, y)| Observation { x, y }).collect())
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn c0(&self) -> f64 {
        self.c0
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn get(&self, i: usize) -> &Observation {
        &self.observations[i]
    }

    pub fn outcomes(&self) -> impl Iterator<Item = f64> + '_ {
        self.observations.iter().map(|o| o.y)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Observation> {
        self.observations.iter()
    }

    /// Dataset made of the observations at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(indices.iter().map(|&i| self.observations[i].clone()).collect())
    }

    pub fn into_observations(self) -> Vec<Observation> {
        self.observations
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a Observation;
    type IntoIter = std::slice::Iter<'a, Observation>;

    fn into_iter(self) -> Self::IntoIter {
        self.observations.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_level_bounds() {
        assert!(QuantileLevel::new(0.0).is_err());
        assert!(QuantileLevel::new(1.0).is_err());
        assert!(QuantileLevel::new(f64::NAN).is_err());
        assert_eq!(QuantileLevel::new(0.25).unwrap().complement().value(), 0.75);
    }

    #[test]
    fn dataset_records_outcome_bound() {
        let d = Dataset::from_xy(vec![vec![0.0], vec![1.0], vec![2.0]], vec![1.0, -3.5, 2.0]).unwrap();
        assert_eq!(d.c0(), 3.5);
        assert_eq!(d.dim(), 1);
    }

    #[test]
    fn dataset_rejects_bad_input() {
        assert!(Dataset::new(vec![]).is_err());
        assert!(Dataset::from_xy(vec![vec![0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).is_err());
        assert!(Dataset::from_xy(vec![vec![0.0]], vec![f64::INFINITY]).is_err());
        assert!(Dataset::from_xy(vec![vec![f64::NAN]], vec![0.0]).is_err());
        assert!(Dataset::from_xy(vec![vec![]], vec![0.0]).is_err());
    }
}
