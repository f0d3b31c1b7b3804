use std::io;

use thiserror::Error;

use crate::failure::Family;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{name} = {value} is outside its domain ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("{family} fit failed: {reason}")]
    FitFailure { family: Family, reason: String },

    #[error("MTBF is infinite: per-node failure probability is zero")]
    InfiniteMtbf,

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("unknown shard {shard} (ledger tracks {n_emb} shards)")]
    UnknownShard { shard: usize, n_emb: usize },

    #[error("sample count went backwards: {got} < previously recorded {prior}")]
    NonMonotonicSamples { got: u64, prior: u64 },

    #[error("index {index} out of range for table {table} with {rows} rows")]
    IndexOutOfRange { table: usize, index: u64, rows: usize },

    #[error("unknown table {0}")]
    UnknownTable(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("no snapshot for table {table} shard {shard}")]
    NoSnapshot { table: usize, shard: usize },

    #[error("snapshot format: {0}")]
    Format(String),

    #[error("training diverged at step {step}: loss is not finite")]
    Diverged { step: usize },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            expected,
        }
    }
}
