//! Snapshot persistence and the save/restore behavior of the six recovery
//! strategies.

mod format;
mod policy;
mod store;

pub use format::{Snapshot, SnapshotKind, HEADER_LEN, MAGIC, VERSION};
pub use policy::{
    default_prioritized_tables, plan_schedule, CheckpointPolicy, SaveAction, SaveCostModel,
    SaveScope, Strategy, DEFAULT_R, PRIORITY_COVERAGE,
};
pub use store::{SnapshotId, SnapshotStore};

use serde::Serialize;

use crate::cost::RecoveryKind;
use crate::embedding::EmbeddingShardSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaveReceipt {
    pub time: f64,
    pub scope: SaveScope,
    /// Rows written per table.
    pub rows_saved: Vec<usize>,
    pub cost_hours: f64,
}

/// Executes a policy's save actions against live tables and restores failed shards.
#[derive(Debug, Clone)]
pub struct CheckpointEngine {
    policy: CheckpointPolicy,
    costs: SaveCostModel,
    store: SnapshotStore,
}

impl CheckpointEngine {
    pub fn new(policy: CheckpointPolicy, costs: SaveCostModel, store: SnapshotStore) -> Result<Self> {
        policy.validate()?;
        if let Some(&t) = policy
            .prioritized_tables
            .iter()
            .find(|&&t| t >= costs.table_volumes.len())
        {
            return Err(Error::UnknownTable(t));
        }
        Ok(CheckpointEngine {
            policy,
            costs,
            store,
        })
    }

    pub fn policy(&self) -> &CheckpointPolicy {
        &self.policy
    }

    pub fn store(&self) -> &SnapshotStore {
        &self.store
    }

    pub fn costs(&self) -> &SaveCostModel {
        &self.costs
    }

    fn check_tables(&self, set: &EmbeddingShardSet) -> Result<()> {
        if set.n_tables() != self.costs.table_volumes.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} tables but {} cost volumes",
                set.n_tables(),
                self.costs.table_volumes.len()
            )));
        }
        Ok(())
    }

    /// Full save of every shard at time zero; not charged.
    pub fn initial_snapshot(&mut self, set: &mut EmbeddingShardSet, sample_count: u64) -> Result<()> {
        self.check_tables(set)?;
        for t in 0..set.n_tables() {
            for s in 0..set.n_shards() {
                self.store.save_full(set, t, s, 0.0, sample_count)?;
            }
        }
        Ok(())
    }

    /// Rows a prioritized save of `table` would write right now, ascending.
    pub fn select_rows(&self, set: &EmbeddingShardSet, table: usize) -> Result<Vec<usize>> {
        let t = set.table(table)?;
        let rn = ((self.policy.r * t.rows() as f64).ceil() as usize).min(t.rows());
        match self.policy.strategy {
            Strategy::CprScar => {
                let rows = set.top_rn_by_delta(table, rn)?;
                Ok(rows.into_iter().filter(|&r| t.delta(r).unwrap_or(0.0) > 0.0).collect())
            }
            Strategy::CprMfu => {
                let counters = t.counters().unwrap_or(&[]);
                let rows = set.top_rn_by_counter(table, rn)?;
                Ok(rows.into_iter().filter(|&r| counters[r] > 0).collect())
            }
            Strategy::CprSsu => {
                let list = t
                    .ssu()
                    .ok_or_else(|| Error::InvalidInput("SSU list is disabled".into()))?;
                let mut rows: Vec<usize> = list.entries().iter().map(|&r| r as usize).collect();
                rows.sort_unstable();
                rows.truncate(rn);
                Ok(rows)
            }
            other => Err(Error::InvalidInput(format!("{other} has no row selector"))),
        }
    }

    pub fn execute(
        &mut self,
        action: &SaveAction,
        set: &mut EmbeddingShardSet,
        sample_count: u64,
    ) -> Result<SaveReceipt> {
        self.check_tables(set)?;
        let mut rows_saved = vec![0; set.n_tables()];
        let mut cost = 0.0;
        for t in 0..set.n_tables() {
            let prioritized = self.policy.is_prioritized_table(t);
            let full = match action.scope {
                SaveScope::AllTables => true,
                SaveScope::NonPrioritized => !prioritized,
                SaveScope::Prioritized => false,
            };
            let rows = set.table(t)?.rows();
            if full {
                for s in 0..set.n_shards() {
                    self.store.save_full(set, t, s, action.time, sample_count)?;
                }
                rows_saved[t] = rows;
                cost += self.costs.table_cost(t);
            } else if action.scope == SaveScope::Prioritized && prioritized {
                let selected = self.select_rows(set, t)?;
                for s in 0..set.n_shards() {
                    let range = set.table(t)?.shard_rows(s);
                    let mine: Vec<usize> =
                        selected.iter().copied().filter(|r| range.contains(r)).collect();
                    self.store
                        .save_partial(set, t, s, &mine, action.time, sample_count)?;
                }
                rows_saved[t] = selected.len();
                cost += self.costs.rows_cost(t, selected.len(), rows);
            }
        }
        Ok(SaveReceipt {
            time: action.time,
            scope: action.scope,
            rows_saved,
            cost_hours: cost,
        })
    }

    /// Rebuilds shards after a failure. Full recovery reverts every shard;
    /// partial strategies touch only `failed_shards`.
    pub fn restore(&self, set: &mut EmbeddingShardSet, failed_shards: &[usize]) -> Result<Vec<usize>> {
        let shards: Vec<usize> = match self.policy.strategy.recovery() {
            RecoveryKind::FullRecovery => (0..set.n_shards()).collect(),
            RecoveryKind::PartialRecovery => failed_shards.to_vec(),
        };
        self.store.restore_shards(set, &shards)?;
        Ok(shards)
    }
}
