//! Fitted quantile predictors.

use std::fmt;
use std::sync::Arc;

use crate::data::Dataset;
use crate::numeric::Fnv1a;

/// An immutable fitted function `x -> predicted quantile`.
pub trait Predictor: Send + Sync + fmt::Debug {
    fn predict(&self, x: &[f64]) -> f64;

    /// Stable hash of the fitted state. Two predictors with equal
    /// fingerprints make identical predictions.
    fn fingerprint(&self) -> u64;
}

pub type SharedPredictor = Arc<dyn Predictor>;

/// Largest absolute prediction over the covariates of `data`.
pub fn prediction_bound(predictor: &dyn Predictor, data: &Dataset) -> f64 {
    data.iter()
        .map(|o| predictor.predict(&o.x).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantPredictor(pub f64);

impl Predictor for ConstantPredictor {
    fn predict(&self, _x: &[f64]) -> f64 {
        self.0
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write_bytes(b"constant");
        h.write_f64(self.0);
        h.finish()
    }
}

/// Pointwise convex combination of component predictions.
#[derive(Debug, Clone)]
pub struct BlendPredictor {
    components: Vec<SharedPredictor>,
    weights: Vec<f64>,
}

impl BlendPredictor {
    /// `weights` must have one entry per component; they are not re-validated
    /// here since callers build them from a `SimplexWeights`.
    pub fn new(components: Vec<SharedPredictor>, weights: Vec<f64>) -> Self {
        assert_eq!(components.len(), weights.len());
        BlendPredictor {
            components,
            weights,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Predictor for BlendPredictor {
    fn predict(&self, x: &[f64]) -> f64 {
        self.components
            .iter()
            .zip(&self.weights)
            .filter(|(_, w)| **w != 0.0)
            .map(|(p, w)| w * p.predict(x))
            .sum()
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write_bytes(b"blend");
        for (p, w) in self.components.iter().zip(&self.weights) {
            h.write_f64(*w);
            h.write_u64(p.fingerprint());
        }
        h.finish()
    }
}

type PointFn = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// Wraps a closure, e.g. a known true quantile function in simulations.
#[derive(Clone)]
pub struct FnPredictor {
    name: String,
    f: Arc<PointFn>,
}

impl FnPredictor {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        FnPredictor {
            name: name.into(),
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for FnPredictor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnPredictor").field("name", &self.name).finish()
    }
}

impl Predictor for FnPredictor {
    fn predict(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write_bytes(b"fn:");
        h.write_bytes(self.name.as_bytes());
        h.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blend_is_pointwise_combination() {
        let a: SharedPredictor = Arc::new(ConstantPredictor(0.0));
        let b: SharedPredictor = Arc::new(ConstantPredictor(1.0));
        let blend = BlendPredictor::new(vec![a, b], vec![0.3, 0.7]);
        assert!((blend.predict(&[0.0]) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn fingerprints_track_parameters() {
        assert_eq!(ConstantPredictor(1.0).fingerprint(), ConstantPredictor(1.0).fingerprint());
        assert_ne!(ConstantPredictor(1.0).fingerprint(), ConstantPredictor(2.0).fingerprint());
    }
}
