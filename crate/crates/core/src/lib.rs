//! Quantile super learning: cross-validated and sequential ensembles of
//! conditional-quantile learners under the pinball loss.

pub mod cv;
pub mod data;
pub mod error;
pub mod learners;
pub mod loss;
pub mod numeric;
pub mod online;
pub mod predictor;
pub mod sim;
pub mod simplex;

pub use data::{Dataset, Observation, QuantileLevel};
pub use error::{QslError, Result};
pub use predictor::{Predictor, SharedPredictor};
