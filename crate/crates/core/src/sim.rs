//! Simulation designs with known conditional quantiles.
//!
//! Covariates are five independent Uniform[0, 1) draws; the mean function is
//! `m(x) = sin(2 x1) + |x2| - 0.5 x1 x3 + floor(x4)` (the floor term is kept
//! literally even though it vanishes on [0, 1)). All draws for one dataset or
//! stream come from a single ChaCha8 generator, observation by observation:
//! five covariates, then one standard-normal innovation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{Dataset, Observation, QuantileLevel};
use crate::error::{invalid, Result};
use crate::online::{Batch, Stream};

pub const DIM: usize = 5;

/// Noise scale shared by both designs: variance 0.1.
pub fn default_noise_sd() -> f64 {
    0.1f64.sqrt()
}

pub fn mean_function(x: &[f64]) -> f64 {
    (2.0 * x[0]).sin() + x[1].abs() - 0.5 * x[0] * x[2] + x[3].floor()
}

/// Standard normal quantile.
pub fn normal_quantile(alpha: QuantileLevel) -> f64 {
    Normal::standard().inverse_cdf(alpha.value())
}

fn draw_covariates(rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..DIM).map(|_| rng.random::<f64>()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IidDgpConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for IidDgpConfig {
    fn default() -> Self {
        IidDgpConfig {
            n_train: 1000,
            n_test: 1000,
            noise_sd: default_noise_sd(),
            seed: 0,
        }
    }
}

impl IidDgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_test == 0 {
            return invalid("n_train and n_test must be >= 1");
        }
        if !(self.noise_sd.is_finite() && self.noise_sd > 0.0) {
            return invalid(format!("noise_sd must be positive, got {}", self.noise_sd));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct IidSample {
    pub train: Dataset,
    pub test: Dataset,
    pub noise_sd: f64,
}

impl IidSample {
    pub fn true_quantile(&self, x: &[f64], alpha: QuantileLevel) -> f64 {
        mean_function(x) + self.noise_sd * normal_quantile(alpha)
    }
}

/// Train set first, then test set, from one generator.
pub fn gen_iid(config: &IidDgpConfig) -> Result<IidSample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draw = |n: usize| -> Result<Dataset> {
        let obs = (0..n)
            .map(|_| {
                let x = draw_covariates(&mut rng);
                let z: f64 = rng.sample(StandardNormal);
                let y = mean_function(&x) + config.noise_sd * z;
                Observation::new(x, y)
            })
            .collect();
        Dataset::new(obs)
    };
    let train = draw(config.n_train)?;
    let test = draw(config.n_test)?;
    Ok(IidSample {
        train,
        test,
        noise_sd: config.noise_sd,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ar1DgpConfig {
    pub t_len: usize,
    pub rho: f64,
    pub sigma: f64,
    pub seed: u64,
    /// Independent AR(1) series, one per location.
    pub locations: usize,
}

impl Default for Ar1DgpConfig {
    fn default() -> Self {
        Ar1DgpConfig {
            t_len: 2000,
            rho: 0.0,
            sigma: default_noise_sd(),
            seed: 0,
            locations: 1,
        }
    }
}

impl Ar1DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_len < 2 {
            return invalid("stream length must be >= 2");
        }
        if !(self.rho.is_finite() && self.rho.abs() < 1.0) {
            return invalid(format!("rho must satisfy |rho| < 1, got {}", self.rho));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return invalid(format!("sigma must be positive, got {}", self.sigma));
        }
        if self.locations == 0 {
            return invalid("need at least one location");
        }
        Ok(())
    }
}

pub fn location_name(j: usize) -> String {
    format!("loc{}", j + 1)
}

#[derive(Debug, Clone)]
pub struct Ar1Sample {
    pub stream: Stream,
    /// `noise[j][t-1]` is the innovation-driven error of location `j` at `t`.
    pub noise: Vec<Vec<f64>>,
    pub rho: f64,
    pub sigma: f64,
}

impl Ar1Sample {
    /// Conditional quantile of `Y_t` at location `j` given `X_t` and the
    /// previous error; at `t = 1` the stationary marginal is used.
    pub fn true_quantile(&self, t: usize, j: usize, alpha: QuantileLevel) -> f64 {
        let obs = &self.stream.batches()[t - 1].items[&location_name(j)];
        let q = normal_quantile(alpha);
        let m = mean_function(&obs.x);
        if t == 1 {
            m + self.sigma / (1.0 - self.rho * self.rho).sqrt() * q
        } else {
            m + self.rho * self.noise[j][t - 2] + self.sigma * q
        }
    }
}

/// Per time step and location (in order): five covariates, one innovation.
/// With `rho = 0` and one location the draws coincide with [`gen_iid`]'s
/// training set of the same seed and size.
pub fn gen_ar1(config: &Ar1DgpConfig) -> Result<Ar1Sample> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let stationary_sd = config.sigma / (1.0 - config.rho * config.rho).sqrt();
    let mut noise = vec![Vec::with_capacity(config.t_len); config.locations];
    let mut batches = Vec::with_capacity(config.t_len);
    for t in 1..=config.t_len {
        let mut items = std::collections::BTreeMap::new();
        for (j, eps_j) in noise.iter_mut().enumerate() {
            let x = draw_covariates(&mut rng);
            let z: f64 = rng.sample(StandardNormal);
            let eps = match eps_j.last() {
                None => stationary_sd * z,
                Some(prev) => config.rho * prev + config.sigma * z,
            };
            eps_j.push(eps);
            let y = mean_function(&x) + eps;
            items.insert(location_name(j), Observation::new(x, y));
        }
        batches.push(Batch::new(t, items)?);
    }
    let stream = Stream::new((0..config.locations).map(location_name), batches)?;
    Ok(Ar1Sample {
        stream,
        noise,
        rho: config.rho,
        sigma: config.sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_function_at_center() {
        let m = mean_function(&[0.5; 5]);
        assert!((m - (1f64.sin() + 0.5 - 0.125)).abs() < 1e-15);
        assert!((m - 1.216471).abs() < 1e-6);
    }

    #[test]
    fn median_is_mean() {
        let s = gen_iid(&IidDgpConfig { n_train: 5, n_test: 5, ..Default::default() }).unwrap();
        let x = [0.1, 0.9, 0.3, 0.7, 0.2];
        let half = QuantileLevel::new(0.5).unwrap();
        assert!((s.true_quantile(&x, half) - mean_function(&x)).abs() < 1e-12);
    }

    #[test]
    fn floor_term_vanishes() {
        let s = gen_iid(&IidDgpConfig { n_train: 500, n_test: 1, ..Default::default() }).unwrap();
        assert!(s.train.iter().all(|o| o.x[3].floor() == 0.0));
    }

    #[test]
    fn same_seed_same_data() {
        let c = Ar1DgpConfig { t_len: 50, rho: 0.5, seed: 9, ..Default::default() };
        let a = gen_ar1(&c).unwrap();
        let b = gen_ar1(&c).unwrap();
        assert_eq!(a.stream, b.stream);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(gen_iid(&IidDgpConfig { n_train: 0, ..Default::default() }).is_err());
        assert!(gen_iid(&IidDgpConfig { noise_sd: 0.0, ..Default::default() }).is_err());
        assert!(gen_ar1(&Ar1DgpConfig { rho: 1.0, ..Default::default() }).is_err());
        assert!(gen_ar1(&Ar1DgpConfig { t_len: 1, ..Default::default() }).is_err());
    }
}
