//! Portion-of-lost-samples (PLS) accounting.
//!
//! A failure of shard `s` at sample count `S` discards the updates that shard
//! absorbed since its last checkpoint, adding
//! `(S - S_last_ckpt[s]) / (S_total * n_emb)` to the running PLS. Simultaneous
//! failures of several shards add one such term per shard.

use serde::Serialize;

use crate::error::{Error, Result};

pub type ShardId = usize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlsLedger {
    pls: f64,
    s_total: u64,
    n_emb: usize,
    last_checkpoint: Vec<u64>,
    current: u64,
}

impl PlsLedger {
    pub fn new(s_total: u64, n_emb: usize) -> Result<Self> {
        if s_total == 0 {
            return Err(Error::InvalidInput("s_total must be positive".into()));
        }
        if n_emb == 0 {
            return Err(Error::InvalidInput("n_emb must be positive".into()));
        }
        Ok(PlsLedger {
            pls: 0.0,
            s_total,
            n_emb,
            last_checkpoint: vec![0; n_emb],
            current: 0,
        })
    }

    pub fn pls(&self) -> f64 {
        self.pls
    }

    pub fn n_emb(&self) -> usize {
        self.n_emb
    }

    pub fn s_total(&self) -> u64 {
        self.s_total
    }

    pub fn current_sample_count(&self) -> u64 {
        self.current
    }

    pub fn samples_at_last_checkpoint(&self, shard: ShardId) -> Option<u64> {
        self.last_checkpoint.get(shard).copied()
    }

    fn check_shard(&self, shard: ShardId) -> Result<()> {
        if shard < self.n_emb {
            Ok(())
        } else {
            Err(Error::UnknownShard {
                shard,
                n_emb: self.n_emb,
            })
        }
    }

    pub fn record_checkpoint(&mut self, shards: &[ShardId], sample_count: u64) -> Result<()> {
        for &s in shards {
            self.check_shard(s)?;
            if sample_count < self.last_checkpoint[s] {
                return Err(Error::NonMonotonicSamples {
                    got: sample_count,
                    prior: self.last_checkpoint[s],
                });
            }
        }
        for &s in shards {
            self.last_checkpoint[s] = sample_count;
        }
        self.current = self.current.max(sample_count);
        Ok(())
    }

    /// Adds the lost-sample fraction of every failed shard; returns the increment.
    pub fn record_failure(&mut self, sample_count: u64, failed: &[ShardId]) -> Result<f64> {
        for &s in failed {
            self.check_shard(s)?;
            if sample_count < self.last_checkpoint[s] {
                return Err(Error::NonMonotonicSamples {
                    got: sample_count,
                    prior: self.last_checkpoint[s],
                });
            }
        }
        let denom = self.s_total as f64 * self.n_emb as f64;
        let delta: f64 = failed
            .iter()
            .map(|&s| (sample_count - self.last_checkpoint[s]) as f64 / denom)
            .sum();
        self.pls += delta;
        self.current = self.current.max(sample_count);
        Ok(delta)
    }
}

/// Expected PLS at interval `t_save`: `0.5 * t_save / (t_fail * n_emb)`.
///
/// `n_emb` is real-valued so callers can pass an effective shard count
/// (shards divided by mean shards lost per failure).
pub fn expected_pls(t_save: f64, t_fail: f64, n_emb: f64) -> f64 {
    0.5 * t_save / (t_fail * n_emb)
}
