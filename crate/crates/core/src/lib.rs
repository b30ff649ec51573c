//! Online k-means over synthetic bounded-support distributions.
//!
//! The crate runs the naive, idealized and generalized online Lloyd's
//! algorithms (and a decaying-rate SGD baseline), evaluates the k-means cost
//! and its gradient through exact or Monte Carlo Voronoi moments, and checks
//! the quantitative bounds behind the convergence argument: the descent
//! decomposition, displacement and accumulated-rate bounds, the horizon
//! function, estimator concentration and local Lipschitz continuity of the
//! cell masses.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod distribution;
pub mod engine;
pub mod error;
pub mod geometry;
pub mod moments;
pub mod objective;
pub mod plot;
pub mod rng;
pub mod schedule;

pub use config::RunConfig;
pub use distribution::{Distribution, DistributionSpec};
pub use engine::{run, Engine, Trace};
pub use error::{Error, Result};
pub use geometry::Centers;
pub use moments::MomentOracle;
