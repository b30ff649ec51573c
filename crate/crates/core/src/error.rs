//! Error type shared by every module, with the CLI exit-code partition.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed call arguments (dimension mismatch, bad index, bad range).
    #[error("invalid input: {0}")]
    Input(String),

    /// Invalid configuration: schedule exponents, distribution parameters, init centers.
    #[error("configuration error: {0}")]
    Config(String),

    /// The operation needs a capability the distribution does not provide
    /// (for example exact Voronoi moments on a multidimensional mixture).
    #[error("capability error: {0}")]
    Capability(String),

    /// Fewer than two centers where pairwise quantities are requested.
    #[error("no center pairs: min separation is undefined for k = 1")]
    NoPairs,

    /// Two centers coincide or are closer than the refusal threshold.
    #[error("degenerate centers: {0}")]
    Degenerate(String),

    /// Conditional sampling hit the retry cap; the cell has effectively zero mass.
    #[error("cell {cell} is effectively empty: no hit in {attempts} draws")]
    EmptyCell { cell: usize, attempts: u64 },

    /// A runtime invariant of the algorithm was violated (support escape,
    /// degeneracy after update, zero-mass update).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Exit code: 1 usage/config, 2 contract violation, 3 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Input(_) | Error::Config(_) | Error::Capability(_) | Error::Toml(_) => 1,
            Error::NoPairs | Error::Degenerate(_) | Error::EmptyCell { .. } | Error::Contract(_) => 2,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => 3,
        }
    }
}
