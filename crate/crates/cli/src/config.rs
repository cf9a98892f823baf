//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use qsl_core::cv::WeightSearch;
use qsl_core::learners::{build_library, LearnerLibrary, LearnerSpec};
use qsl_core::online::{AggregatorKind, EtaPolicy, EvalWindow, OnlineConfig, RefitPolicy};
use qsl_core::sim::{Ar1DgpConfig, IidDgpConfig};
use qsl_core::QuantileLevel;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

/// Bumped whenever an output table changes shape.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Iid,
    Online,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSource {
    /// Simulated i.i.d. design; its seed is replaced per replicate.
    Iid(IidDgpConfig),
    /// Simulated AR(1) stream; its seed is replaced per replicate.
    Ar1(Ar1DgpConfig),
    /// Files in the CSV schema (see `io`). Relative paths resolve against
    /// the config file's directory.
    Csv {
        train: Option<PathBuf>,
        test: Option<PathBuf>,
        stream: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvSpec {
    pub folds: usize,
    pub weights: WeightSearch,
}

impl Default for CvSpec {
    fn default() -> Self {
        CvSpec {
            folds: 10,
            weights: WeightSearch::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamSpec {
    pub refit: RefitPolicy,
    pub window: EvalWindow,
    pub aggregators: Vec<AggregatorKind>,
    pub eta: EtaPolicy,
    pub optimizer_iters: usize,
}

impl Default for StreamSpec {
    fn default() -> Self {
        let d = OnlineConfig::default();
        StreamSpec {
            refit: d.refit,
            window: d.window,
            aggregators: d.aggregators,
            eta: d.eta,
            optimizer_iters: d.optimizer.max_iters,
        }
    }
}

impl StreamSpec {
    pub fn online_config(&self, seed: u64) -> OnlineConfig {
        let mut cfg = OnlineConfig {
            aggregators: self.aggregators.clone(),
            eta: self.eta,
            refit: self.refit,
            window: self.window,
            ..OnlineConfig::default()
        };
        cfg.optimizer.max_iters = self.optimizer_iters;
        cfg.optimizer.seed = seed;
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    /// Independent replicates with seeds `seed, seed + 1, ...`.
    #[serde(default = "one")]
    pub replications: usize,
    pub alphas: Vec<QuantileLevel>,
    /// Interval levels `beta`, each using the `beta/2` and `1 - beta/2` fits.
    #[serde(default)]
    pub intervals: Vec<f64>,
    /// Empty means the built-in library.
    #[serde(default)]
    pub learners: Vec<LearnerSpec>,
    #[serde(default)]
    pub cv: CvSpec,
    #[serde(default)]
    pub stream: StreamSpec,
    pub data: DataSource,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

fn one() -> usize {
    1
}

/// Positions of the lower and upper level of an interval in `alphas`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IntervalPair {
    pub beta: f64,
    pub lower: usize,
    pub upper: usize,
}

/// Names used for the ensembles in output tables.
const RESERVED_NAMES: [&str; 4] = ["qsl_discrete", "qsl_continuous", "ewa", "boa"];

const LEVEL_MATCH_TOL: f64 = 1e-12;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(CliError::config)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; CSV paths become relative to its folder.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (DataSource::Csv { train, test, stream }, Some(dir)) = (&mut cfg.data, path.parent()) {
            for p in [train, test, stream].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.alphas.is_empty() {
            return bad("at least one quantile level is required".into());
        }
        for (i, a) in self.alphas.iter().enumerate() {
            if self.alphas[..i].iter().any(|b| (a.value() - b.value()).abs() <= LEVEL_MATCH_TOL) {
                return bad(format!("quantile level {a} listed twice"));
            }
        }
        if self.replications == 0 {
            return bad("replications must be >= 1".into());
        }
        self.interval_pairs()?;
        self.library()?;
        if self.cv.folds < 2 {
            return bad(format!("cv.folds must be >= 2, got {}", self.cv.folds));
        }
        if let WeightSearch::Grid { mesh: Some(0) } = self.cv.weights {
            return bad("grid mesh must be >= 1".into());
        }
        self.stream.eta.validate().map_err(CliError::config)?;
        if self.stream.aggregators.is_empty() && self.mode == Mode::Online {
            return bad("stream.aggregators must not be empty".into());
        }
        match (&self.mode, &self.data) {
            (Mode::Iid, DataSource::Iid(c)) => c.validate().map_err(CliError::config)?,
            (Mode::Online, DataSource::Ar1(c)) => c.validate().map_err(CliError::config)?,
            (Mode::Iid, DataSource::Csv { train: Some(_), stream: None, .. }) => {}
            (Mode::Online, DataSource::Csv { train: None, test: None, stream: Some(_) }) => {}
            (Mode::Iid, _) => return bad("iid mode needs `source = \"iid\"` or csv `train` (and optional `test`)".into()),
            (Mode::Online, _) => return bad("online mode needs `source = \"ar1\"` or a csv `stream`".into()),
        }
        Ok(())
    }

    pub fn interval_pairs(&self) -> CliResult<Vec<IntervalPair>> {
        let find = |level: f64| {
            self.alphas
                .iter()
                .position(|a| (a.value() - level).abs() <= LEVEL_MATCH_TOL)
        };
        self.intervals
            .iter()
            .map(|&beta| {
                if !(beta > 0.0 && beta < 1.0) {
                    return Err(CliError::Config(format!("interval level beta must lie in (0, 1), got {beta}")));
                }
                match (find(beta / 2.0), find(1.0 - beta / 2.0)) {
                    (Some(lower), Some(upper)) => Ok(IntervalPair { beta, lower, upper }),
                    _ => Err(CliError::Config(format!(
                        "interval beta={beta} needs levels {} and {} in `alphas`",
                        beta / 2.0,
                        1.0 - beta / 2.0
                    ))),
                }
            })
            .collect()
    }

    pub fn library(&self) -> CliResult<LearnerLibrary> {
        let specs = if self.learners.is_empty() {
            LearnerSpec::standard_library()
        } else {
            self.learners.clone()
        };
        for s in &specs {
            s.validate().map_err(CliError::config)?;
            if RESERVED_NAMES.contains(&s.name.as_str()) {
                return Err(CliError::Config(format!("learner name `{}` is reserved", s.name)));
            }
        }
        build_library(&specs).map_err(CliError::config)
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replications as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }

    /// Short digest of the canonical (JSON) form of the config.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serialises");
        let digest = Sha256::digest(canonical.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}
