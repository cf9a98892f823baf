//! Pinball loss, empirical risk and interval coverage.

use log::warn;

use crate::data::{Dataset, QuantileLevel};
use crate::error::{invalid, Result};
use crate::numeric::CompensatedSum;
use crate::predictor::Predictor;

/// Quantile (pinball) loss of predicting `pred` when `y` is observed.
///
/// `alpha * (y - pred)` above the prediction, `(1 - alpha) * (pred - y)` at or
/// below it.
pub fn pinball_loss(alpha: QuantileLevel, y: f64, pred: f64) -> Result<f64> {
    if !y.is_finite() || !pred.is_finite() {
        return invalid(format!("pinball loss needs finite inputs, got y={y}, pred={pred}"));
    }
    Ok(pinball(alpha.value(), y, pred))
}

/// Unchecked pinball loss for hot loops whose inputs are already validated.
#[inline]
pub fn pinball(alpha: f64, y: f64, pred: f64) -> f64 {
    if y > pred {
        alpha * (y - pred)
    } else {
        (1.0 - alpha) * (pred - y)
    }
}

/// Subgradient of the pinball loss with respect to the prediction. At a
/// kink the `y <= pred` branch is used.
#[inline]
pub fn pinball_subgradient(alpha: f64, y: f64, pred: f64) -> f64 {
    if y > pred {
        -alpha
    } else {
        1.0 - alpha
    }
}

/// Mean pinball loss of `predictor` over `data`.
pub fn empirical_risk(alpha: QuantileLevel, predictor: &dyn Predictor, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return invalid("empirical risk of an empty dataset");
    }
    let mut acc = CompensatedSum::new();
    let mut out_of_range = 0usize;
    let limit = 2.0 * data.c0();
    for obs in data {
        let pred = predictor.predict(&obs.x);
        if !pred.is_finite() {
            return invalid(format!("predictor returned non-finite value {pred}"));
        }
        if data.c0() > 0.0 && pred.abs() > limit {
            out_of_range += 1;
        }
        acc.add(pinball(alpha.value(), obs.y, pred));
    }
    if out_of_range > 0 {
        warn!(
            "{out_of_range} predictions exceed twice the outcome bound c0={}",
            data.c0()
        );
    }
    Ok(acc.value() / data.len() as f64)
}

/// Fraction of observations with `lower(x) <= y <= upper(x)`.
pub fn empirical_coverage(lower: &dyn Predictor, upper: &dyn Predictor, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return invalid("empirical coverage of an empty dataset");
    }
    let covered = data
        .iter()
        .filter(|o| lower.predict(&o.x) <= o.y && o.y <= upper.predict(&o.x))
        .count();
    Ok(covered as f64 / data.len() as f64)
}

/// Bernstein numbers of the pinball loss of a bounded predictor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernsteinPair {
    pub m: f64,
    pub v: f64,
    /// Set when `m == 0`, i.e. both the predictor and the outcomes vanish.
    pub degenerate: bool,
}

/// `m = max(alpha, 1 - alpha) * (psi_sup + c0)` and `v = 1.5 * m * risk`.
pub fn bernstein_pair(alpha: QuantileLevel, psi_sup: f64, c0: f64, risk: f64) -> Result<BernsteinPair> {
    for (name, value) in [("psi_sup", psi_sup), ("c0", c0), ("risk", risk)] {
        if !value.is_finite() || value < 0.0 {
            return invalid(format!("{name} must be finite and non-negative, got {value}"));
        }
    }
    let a = alpha.value();
    let m = a.max(1.0 - a) * (psi_sup + c0);
    let v = 1.5 * m * risk;
    Ok(BernsteinPair {
        m,
        v,
        degenerate: m == 0.0,
    })
}
