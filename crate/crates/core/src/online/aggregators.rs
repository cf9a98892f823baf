//! Exponentially weighted average (EWA) and Bernstein online aggregation
//! (BOA) of expert predictions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::simplex::SimplexWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    QslDiscrete,
    QslContinuous,
    Ewa,
    Boa,
}

impl AggregatorKind {
    pub fn name(self) -> &'static str {
        match self {
            AggregatorKind::QslDiscrete => "qsl_discrete",
            AggregatorKind::QslContinuous => "qsl_continuous",
            AggregatorKind::Ewa => "ewa",
            AggregatorKind::Boa => "boa",
        }
    }

    pub fn all() -> [AggregatorKind; 4] {
        [
            AggregatorKind::QslDiscrete,
            AggregatorKind::QslContinuous,
            AggregatorKind::Ewa,
            AggregatorKind::Boa,
        ]
    }
}

/// Learning rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EtaPolicy {
    /// Anytime rate `sqrt(c ln K / t) / E`, where `E` is the smallest power
    /// of two above every loss seen so far (doubled whenever exceeded).
    #[default]
    Adaptive,
    Fixed(f64),
}

impl EtaPolicy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            EtaPolicy::Fixed(eta) if !(eta.is_finite() && eta > 0.0) => {
                invalid(format!("learning rate must be finite and > 0, got {eta}"))
            }
            _ => Ok(()),
        }
    }
}

fn check_inputs(weights: &[f64], losses: &[f64], eta: f64) -> Result<()> {
    if !(eta.is_finite() && eta > 0.0) {
        return invalid(format!("learning rate must be finite and > 0, got {eta}"));
    }
    if weights.len() != losses.len() {
        return invalid(format!("{} weights but {} losses", weights.len(), losses.len()));
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return invalid("expert losses must be finite");
    }
    Ok(())
}

/// `w_k * exp(exponent_k)` renormalised, shifting exponents so the largest
/// live one is zero.
fn reweight(weights: &[f64], exponents: &[f64]) -> SimplexWeights {
    let shift = weights
        .iter()
        .zip(exponents)
        .filter(|(w, _)| **w > 0.0)
        .map(|(_, e)| *e)
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = weights
        .iter()
        .zip(exponents)
        .map(|(w, e)| if *w > 0.0 { w * (e - shift).exp() } else { 0.0 })
        .collect();
    SimplexWeights::renormalized(raw)
}

/// One multiplicative-weights step: `w_k <- w_k exp(-eta l_k)`, renormalised.
pub fn ewa_update(weights: &SimplexWeights, losses: &[f64], eta: f64) -> Result<SimplexWeights> {
    check_inputs(weights.as_slice(), losses, eta)?;
    let exponents: Vec<f64> = losses.iter().map(|l| -eta * l).collect();
    Ok(reweight(weights.as_slice(), &exponents))
}

/// One second-order step on centred losses `c_k = l_k - w . l`:
/// `w_k <- w_k exp(-eta c_k (1 + eta c_k))`, renormalised.
pub fn boa_update(weights: &SimplexWeights, losses: &[f64], eta: f64) -> Result<SimplexWeights> {
    check_inputs(weights.as_slice(), losses, eta)?;
    let mixed: f64 = weights.as_slice().iter().zip(losses).map(|(w, l)| w * l).sum();
    let exponents: Vec<f64> = losses
        .iter()
        .map(|l| {
            let c = l - mixed;
            -eta * c * (1.0 + eta * c)
        })
        .collect();
    Ok(reweight(weights.as_slice(), &exponents))
}

/// Loss scale after observing `x`: unchanged if `x` fits, otherwise doubled
/// until it does (starting from the power of two just above `x`).
fn doubling_bound(current: f64, x: f64) -> f64 {
    if x <= current {
        return current;
    }
    let mut e = if current > 0.0 { current } else { 2f64.powi(x.log2().ceil() as i32) };
    while e < x {
        e *= 2.0;
    }
    e
}

#[derive(Debug, Clone)]
pub struct EwaState {
    weights: SimplexWeights,
    cumulative: Vec<f64>,
    eta: EtaPolicy,
    scale: f64,
    steps: usize,
}

impl EwaState {
    pub fn new(k: usize, eta: EtaPolicy) -> Result<Self> {
        eta.validate()?;
        if k == 0 {
            return invalid("EWA needs at least one expert");
        }
        Ok(EwaState {
            weights: SimplexWeights::uniform(k),
            cumulative: vec![0.0; k],
            eta,
            scale: 0.0,
            steps: 0,
        })
    }

    pub fn weights(&self) -> &SimplexWeights {
        &self.weights
    }

    pub fn update(&mut self, losses: &[f64]) -> Result<()> {
        let k = self.cumulative.len();
        if losses.len() != k || losses.iter().any(|l| !l.is_finite()) {
            return invalid("EWA update needs one finite loss per expert");
        }
        self.steps += 1;
        for (c, l) in self.cumulative.iter_mut().zip(losses) {
            *c += l;
        }
        match self.eta {
            EtaPolicy::Fixed(eta) => self.weights = ewa_update(&self.weights, losses, eta)?,
            EtaPolicy::Adaptive => {
                let worst = losses.iter().fold(0.0f64, |m, l| m.max(l.abs()));
                if worst > 0.0 {
                    self.scale = doubling_bound(self.scale, worst);
                }
                if self.scale == 0.0 || k == 1 {
                    return Ok(());
                }
                let eta = (8.0 * (k as f64).ln() / self.steps as f64).sqrt() / self.scale;
                let exponents: Vec<f64> = self.cumulative.iter().map(|c| -eta * c).collect();
                self.weights = reweight(&vec![1.0 / k as f64; k], &exponents);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BoaState {
    weights: SimplexWeights,
    eta: EtaPolicy,
    scale: f64,
    steps: usize,
}

impl BoaState {
    pub fn new(k: usize, eta: EtaPolicy) -> Result<Self> {
        eta.validate()?;
        if k == 0 {
            return invalid("BOA needs at least one expert");
        }
        Ok(BoaState {
            weights: SimplexWeights::uniform(k),
            eta,
            scale: 0.0,
            steps: 0,
        })
    }

    pub fn weights(&self) -> &SimplexWeights {
        &self.weights
    }

    pub fn update(&mut self, losses: &[f64]) -> Result<()> {
        let k = self.weights.len();
        if losses.len() != k || losses.iter().any(|l| !l.is_finite()) {
            return invalid("BOA update needs one finite loss per expert");
        }
        self.steps += 1;
        let eta = match self.eta {
            EtaPolicy::Fixed(eta) => eta,
            EtaPolicy::Adaptive => {
                let worst = losses.iter().fold(0.0f64, |m, l| m.max(l.abs()));
                if worst > 0.0 {
                    self.scale = doubling_bound(self.scale, worst);
                }
                if self.scale == 0.0 || k == 1 {
                    return Ok(());
                }
                let anytime = ((k as f64).ln() / self.steps as f64).sqrt() / self.scale;
                anytime.min(0.5 / self.scale)
            }
        };
        self.weights = boa_update(&self.weights, losses, eta)?;
        Ok(())
    }
}
