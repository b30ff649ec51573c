//! Run configuration: a versioned TOML document.
//!
//! ```toml
//! schema_version = 1
//! seed = 7
//! k = 2
//! iterations = 100000
//! stride = 100
//! mode = "single_center"        # or "all_cells"
//!
//! [init]
//! mode = "iid"                  # or "explicit" with centers = [[0.25], [0.75]]
//!
//! [distribution]
//! type = "piecewise1d"
//! breakpoints = [0.0, 1.0]
//! densities = [1.0]
//!
//! [schedule]
//! policy = "generalized_lloyd"
//! alpha = 0.7
//! beta = 0.8
//!
//! [oracle]
//! method = "exact"              # "monte_carlo" (samples, seed) or "none"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::distribution::DistributionSpec;
use crate::error::{Error, Result};
use crate::geometry::Centers;
use crate::moments::{MomentOracle, DEFAULT_MC_SAMPLES};
use crate::schedule::{Policy, PowerLaw, RateSchedule};

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "STREAMKMEANS_SEED";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Update only the center nearest to each draw.
    #[default]
    SingleCenter,
    /// Update every positive-mass center from its own conditional draw.
    AllCells,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    #[default]
    Iid,
    Explicit { centers: Vec<Vec<f64>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub policy: Policy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default = "one")]
    pub uniform_c: f64,
}

fn one() -> f64 {
    1.0
}

impl ScheduleSpec {
    pub fn generalized(alpha: f64, beta: f64) -> Self {
        Self { policy: Policy::GeneralizedLloyd, alpha: Some(alpha), beta: Some(beta), uniform_c: 1.0 }
    }

    pub fn build(&self) -> Result<RateSchedule> {
        let power_law = match (self.alpha, self.beta) {
            (Some(a), Some(b)) => Some(PowerLaw::new(a, b)?),
            (None, None) => None,
            _ => return Err(Error::Config("schedule.alpha and schedule.beta must be given together".into())),
        };
        RateSchedule::new(self.policy, power_law, self.uniform_c)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum OracleSpec {
    Exact,
    MonteCarlo {
        #[serde(default = "default_samples")]
        samples: u64,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    #[default]
    None,
}

fn default_samples() -> u64 {
    DEFAULT_MC_SAMPLES
}

impl OracleSpec {
    pub fn build(&self, run_seed: u64) -> Option<MomentOracle> {
        match *self {
            OracleSpec::Exact => Some(MomentOracle::exact()),
            OracleSpec::MonteCarlo { samples, seed } => Some(MomentOracle::monte_carlo(samples, seed.unwrap_or(run_seed))),
            OracleSpec::None => None,
        }
    }
}

/// Test fixtures that deliberately break the algorithm's assumptions.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    /// Centers whose rate is forced to zero.
    #[serde(default)]
    pub frozen_centers: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerdictSpec {
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Known stationary tuples, compared up to relabeling.
    #[serde(default)]
    pub stationary: Vec<Vec<Vec<f64>>>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_epsilon() -> f64 {
    0.01
}

fn default_tolerance() -> f64 {
    0.05
}

impl Default for VerdictSpec {
    fn default() -> Self {
        Self { epsilon: default_epsilon(), stationary: Vec::new(), tolerance: default_tolerance() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    pub k: usize,
    pub iterations: u64,
    #[serde(default = "default_stride")]
    pub stride: u64,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub init: InitSpec,
    pub distribution: DistributionSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub oracle: OracleSpec,
    #[serde(default)]
    pub fixture: FixtureSpec,
    #[serde(default)]
    pub verdict: VerdictSpec,
}

fn default_stride() -> u64 {
    100
}

fn default_batch() -> usize {
    1
}

impl RunConfig {
    /// Generalized Lloyd's on `U[0,1]` with an exact oracle.
    pub fn uniform_generalized(k: usize, iterations: u64, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed,
            k,
            iterations,
            stride: default_stride(),
            mode: Mode::SingleCenter,
            batch_size: 1,
            init: InitSpec::Iid,
            distribution: DistributionSpec::uniform_unit(),
            schedule: ScheduleSpec::generalized(0.7, 0.8),
            oracle: OracleSpec::Exact,
            fixture: FixtureSpec::default(),
            verdict: VerdictSpec::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config is always representable as TOML")
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be at least 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(&bad) = self.fixture.frozen_centers.iter().find(|&&i| i >= self.k) {
            return Err(Error::Config(format!("frozen center {bad} out of range for k = {}", self.k)));
        }
        if !(self.verdict.epsilon > 0.0) {
            return Err(Error::Config("verdict.epsilon must be positive".into()));
        }
        self.schedule.build()?;
        if let InitSpec::Explicit { centers } = &self.init {
            if centers.len() != self.k {
                return Err(Error::Config(format!("init lists {} centers but k = {}", centers.len(), self.k)));
            }
            Centers::new(centers.clone()).map_err(|e| Error::Config(e.to_string()))?;
        }
        Ok(())
    }

    /// Apply the seed precedence: explicit flag, then [`SEED_ENV`], then the file.
    pub fn resolve_seed(&mut self, flag: Option<u64>) -> Result<()> {
        if let Some(s) = flag {
            self.seed = s;
        } else if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|e| Error::Config(format!("{SEED_ENV}={v:?} is not a u64: {e}")))?;
        }
        Ok(())
    }
}
