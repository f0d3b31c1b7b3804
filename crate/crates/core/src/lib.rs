//! Checkpointing with partial recovery for sharded embedding training.
//!
//! The crate covers failure-time modeling and fitting, closed-form overhead
//! accounting, portion-of-lost-samples (PLS) bookkeeping, instrumented
//! embedding tables, a checkpoint engine with priority saves, a toy
//! recommendation trainer and a discrete-event simulator.

pub mod checkpoint;
pub mod cost;
pub mod embedding;
pub mod error;
pub mod failure;
pub mod pls;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod trainer;

pub use error::{Error, Result};
