use std::sync::Arc;

use crate::data::{Dataset, QuantileLevel};
use crate::error::{invalid, Result};
use crate::predictor::{ConstantPredictor, SharedPredictor};

use super::quantile::select_lower_quantile;

/// Predicts the lower empirical `alpha`-quantile of the training outcomes
/// everywhere.
pub fn fit_constant(data: &Dataset, alpha: QuantileLevel) -> Result<ConstantPredictor> {
    if data.is_empty() {
        return invalid("cannot fit a constant on an empty dataset");
    }
    let mut ys: Vec<f64> = data.outcomes().collect();
    Ok(ConstantPredictor(select_lower_quantile(&mut ys, alpha.value())))
}

#[derive(Debug, Clone, Default)]
pub struct ConstantLearner;

impl super::Learner for ConstantLearner {
    fn fit(&self, data: &Dataset, alpha: QuantileLevel) -> Result<SharedPredictor> {
        Ok(Arc::new(fit_constant(data, alpha)?))
    }
}

/// Always predicts a fixed value regardless of the data.
#[derive(Debug, Clone)]
pub struct FixedLearner(pub f64);

impl super::Learner for FixedLearner {
    fn fit(&self, _data: &Dataset, _alpha: QuantileLevel) -> Result<SharedPredictor> {
        Ok(Arc::new(ConstantPredictor(self.0)))
    }
}
