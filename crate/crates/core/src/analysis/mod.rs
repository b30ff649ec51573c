//! Numerical checks of the quantitative bounds behind convergence.

pub mod concentration;
pub mod horizon;
pub mod lipschitz;
pub mod rates;
pub mod suites;
pub mod verdict;

pub use concentration::{concentration_experiment, ConcentrationConfig, ConcentrationReport};
pub use horizon::{harmonic_bounds, horizon, HarmonicBounds};
pub use lipschitz::{lipschitz_probe, LipschitzProbe};
pub use rates::{accumulated_rate_bound_check, displacement_check, worst_case_fixture, RateCheckpoint};
pub use verdict::{convergence_verdict, Verdict};
