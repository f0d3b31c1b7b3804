//! Sharded embedding tables with the per-row instrumentation behind the
//! priority-save policies: access counters (MFU), a bounded list of
//! sub-sampled accessed rows (SSU) and a shadow copy for L2 deltas (SCAR).

use std::collections::HashMap;
use std::io::Write;
use std::ops::Range;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::stats::pearson;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsuConfig {
    /// List capacity as a fraction of the table's rows (capacity = ceil(r * N)).
    pub ratio: f64,
    /// Every `sampling_period`-th access is offered to the list.
    pub sampling_period: u32,
}

/// Which auxiliary per-row state the tables keep.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Instrumentation {
    pub counters: bool,
    pub deltas: bool,
    pub ssu: Option<SsuConfig>,
}

impl Instrumentation {
    pub fn all(ssu: SsuConfig) -> Self {
        Instrumentation {
            counters: true,
            deltas: true,
            ssu: Some(ssu),
        }
    }
}

/// Bounded non-duplicate list of sub-sampled accessed rows.
///
/// When full, an incoming row competes with the current entries: one of the
/// `capacity + 1` candidates is discarded uniformly at random.
#[derive(Debug, Clone)]
pub struct SsuList {
    capacity: usize,
    sampling_period: u32,
    entries: Vec<u32>,
    position: HashMap<u32, usize>,
    offered: u64,
    rng: ChaCha8Rng,
}

impl SsuList {
    pub fn new(capacity: usize, sampling_period: u32, seed: u64) -> Result<Self> {
        if sampling_period == 0 {
            return Err(Error::InvalidInput("SSU sampling period must be >= 1".into()));
        }
        Ok(SsuList {
            capacity,
            sampling_period,
            entries: Vec::with_capacity(capacity),
            position: HashMap::with_capacity(capacity),
            offered: 0,
            rng: rng_from_seed(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[u32] {
        &self.entries
    }

    pub fn contains(&self, row: u32) -> bool {
        self.position.contains_key(&row)
    }

    /// Records one processed access; every `sampling_period`-th one (the 2nd,
    /// 4th, ... for period 2) is offered for insertion.
    pub fn observe(&mut self, row: u32) {
        self.offered += 1;
        if self.offered % self.sampling_period as u64 != 0 {
            return;
        }
        self.insert(row);
    }

    fn insert(&mut self, row: u32) {
        if self.capacity == 0 || self.position.contains_key(&row) {
            return;
        }
        if self.entries.len() < self.capacity {
            self.position.insert(row, self.entries.len());
            self.entries.push(row);
            return;
        }
        let victim = self.rng.random_range(0..=self.capacity);
        if victim == self.capacity {
            return;
        }
        let old = self.entries[victim];
        self.position.remove(&old);
        self.entries[victim] = row;
        self.position.insert(row, victim);
    }

    pub fn remove(&mut self, row: u32) {
        if let Some(i) = self.position.remove(&row) {
            let last = self.entries.len() - 1;
            self.entries.swap_remove(i);
            if i != last {
                self.position.insert(self.entries[i], i);
            }
        }
    }

    pub fn remove_range(&mut self, rows: Range<usize>) {
        let doomed: Vec<u32> = self
            .entries
            .iter()
            .copied()
            .filter(|&r| rows.contains(&(r as usize)))
            .collect();
        for r in doomed {
            self.remove(r);
        }
    }

    pub fn aux_bytes(&self) -> usize {
        self.capacity * std::mem::size_of::<u32>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableSpec {
    pub rows: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    rows: usize,
    dim: usize,
    values: Vec<f32>,
    opt_state: Vec<f32>,
    shard_bounds: Vec<usize>,
    counters: Option<Vec<u32>>,
    shadow: Option<Vec<f32>>,
    ssu: Option<SsuList>,
}

impl EmbeddingTable {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f32] {
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }

    /// Per-row optimizer scalars (0 or 1 per row).
    pub fn opt_scalars(&self) -> usize {
        if self.opt_state.is_empty() {
            0
        } else {
            1
        }
    }

    pub fn opt_state(&self) -> &[f32] {
        &self.opt_state
    }

    pub fn opt_state_mut(&mut self) -> &mut [f32] {
        &mut self.opt_state
    }

    pub fn n_shards(&self) -> usize {
        self.shard_bounds.len() - 1
    }

    pub fn shard_rows(&self, shard: usize) -> Range<usize> {
        self.shard_bounds[shard]..self.shard_bounds[shard + 1]
    }

    pub fn shard_of(&self, row: usize) -> usize {
        // partition_point gives the first bound > row
        self.shard_bounds.partition_point(|&b| b <= row) - 1
    }

    pub fn counters(&self) -> Option<&[u32]> {
        self.counters.as_deref()
    }

    pub fn ssu(&self) -> Option<&SsuList> {
        self.ssu.as_ref()
    }

    /// L2 norm of the change since the row was last saved.
    pub fn delta(&self, r: usize) -> Option<f64> {
        let shadow = self.shadow.as_ref()?;
        let d = self.dim;
        Some(
            self.values[r * d..(r + 1) * d]
                .iter()
                .zip(&shadow[r * d..(r + 1) * d])
                .map(|(a, b)| {
                    let x = (*a as f64) - (*b as f64);
                    x * x
                })
                .sum::<f64>()
                .sqrt(),
        )
    }

    fn record_access(&mut self, r: usize) {
        if let Some(c) = self.counters.as_mut() {
            c[r] = c[r].saturating_add(1);
        }
        if let Some(list) = self.ssu.as_mut() {
            list.observe(r as u32);
        }
    }

    fn clear_tracking(&mut self, r: usize) {
        if let Some(c) = self.counters.as_mut() {
            c[r] = 0;
        }
        if let Some(shadow) = self.shadow.as_mut() {
            let d = self.dim;
            shadow[r * d..(r + 1) * d].copy_from_slice(&self.values[r * d..(r + 1) * d]);
        }
        if let Some(list) = self.ssu.as_mut() {
            list.remove(r as u32);
        }
    }

    /// Auxiliary instrumentation memory in bytes.
    pub fn aux_bytes(&self) -> usize {
        let counters = self.counters.as_ref().map_or(0, |c| c.len() * 4);
        let shadow = self.shadow.as_ref().map_or(0, |s| s.len() * 4);
        let ssu = self.ssu.as_ref().map_or(0, SsuList::aux_bytes);
        counters + shadow + ssu
    }

    pub fn value_bytes(&self) -> usize {
        self.values.len() * 4
    }
}

/// Embedding tables partitioned by contiguous row ranges over `n_shards`
/// parameter-server shards. Shard `s` of every table lives on the same node.
#[derive(Debug, Clone)]
pub struct EmbeddingShardSet {
    tables: Vec<EmbeddingTable>,
    n_shards: usize,
    instrumentation: Instrumentation,
}

impl EmbeddingShardSet {
    pub fn new(
        specs: &[TableSpec],
        n_shards: usize,
        instrumentation: Instrumentation,
        with_opt_state: bool,
        seed: u64,
    ) -> Result<Self> {
        if n_shards == 0 {
            return Err(Error::InvalidInput("need at least one shard".into()));
        }
        let mut tables = Vec::with_capacity(specs.len());
        for (t, spec) in specs.iter().enumerate() {
            if spec.rows == 0 || spec.dim == 0 {
                return Err(Error::InvalidInput(format!("table {t} has zero rows or dim")));
            }
            if spec.rows > u32::MAX as usize {
                return Err(Error::InvalidInput(format!("table {t} too large")));
            }
            let shard_bounds = (0..=n_shards).map(|s| s * spec.rows / n_shards).collect();
            let ssu = match instrumentation.ssu {
                Some(cfg) => {
                    if !(cfg.ratio > 0.0 && cfg.ratio <= 1.0) {
                        return Err(Error::domain("ssu ratio", cfg.ratio, "(0, 1]"));
                    }
                    let cap = (cfg.ratio * spec.rows as f64).ceil() as usize;
                    Some(SsuList::new(
                        cap,
                        cfg.sampling_period,
                        derive_seed(seed, stream::SSU_EVICTION, t as u64),
                    )?)
                }
                None => None,
            };
            tables.push(EmbeddingTable {
                rows: spec.rows,
                dim: spec.dim,
                values: vec![0.0; spec.rows * spec.dim],
                opt_state: if with_opt_state { vec![0.0; spec.rows] } else { Vec::new() },
                shard_bounds,
                counters: instrumentation.counters.then(|| vec![0; spec.rows]),
                shadow: instrumentation
                    .deltas
                    .then(|| vec![0.0; spec.rows * spec.dim]),
                ssu,
            });
        }
        Ok(EmbeddingShardSet {
            tables,
            n_shards,
            instrumentation,
        })
    }

    /// Fills every table with uniform values in `[-scale, scale]` and resets tracking.
    pub fn init_uniform(&mut self, scale: f32, seed: u64) {
        let mut rng = rng_from_seed(seed);
        for t in &mut self.tables {
            for v in &mut t.values {
                *v = rng.random_range(-scale..=scale);
            }
            for r in 0..t.rows {
                t.clear_tracking(r);
            }
        }
    }

    pub fn n_tables(&self) -> usize {
        self.tables.len()
    }

    pub fn n_shards(&self) -> usize {
        self.n_shards
    }

    pub fn instrumentation(&self) -> Instrumentation {
        self.instrumentation
    }

    pub fn table(&self, t: usize) -> Result<&EmbeddingTable> {
        self.tables.get(t).ok_or(Error::UnknownTable(t))
    }

    pub fn table_mut(&mut self, t: usize) -> Result<&mut EmbeddingTable> {
        self.tables.get_mut(t).ok_or(Error::UnknownTable(t))
    }

    pub fn tables(&self) -> &[EmbeddingTable] {
        &self.tables
    }

    fn check_index(&self, t: usize, index: usize) -> Result<()> {
        let rows = self.table(t)?.rows;
        if index < rows {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                table: t,
                index: index as u64,
                rows,
            })
        }
    }

    /// Returns copies of the requested rows and counts each access.
    pub fn lookup_and_count(&mut self, t: usize, indices: &[usize]) -> Result<Vec<Vec<f32>>> {
        for &i in indices {
            self.check_index(t, i)?;
        }
        let table = &mut self.tables[t];
        Ok(indices
            .iter()
            .map(|&i| {
                table.record_access(i);
                table.row(i).to_vec()
            })
            .collect())
    }

    /// Counts one access of a row without copying it.
    pub fn count_access(&mut self, t: usize, index: usize) -> Result<()> {
        self.check_index(t, index)?;
        self.tables[t].record_access(index);
        Ok(())
    }

    /// Adds `updates` (row-major, `indices.len() * dim`) to the listed rows.
    pub fn apply_updates(&mut self, t: usize, indices: &[usize], updates: &[f32]) -> Result<()> {
        let dim = self.table(t)?.dim;
        if updates.len() != indices.len() * dim {
            return Err(Error::ShapeMismatch(format!(
                "{} updates for {} rows of dim {dim}",
                updates.len(),
                indices.len()
            )));
        }
        for &i in indices {
            self.check_index(t, i)?;
        }
        if updates.iter().any(|u| !u.is_finite()) {
            return Err(Error::NonFinite("embedding update"));
        }
        let table = &mut self.tables[t];
        for (k, &i) in indices.iter().enumerate() {
            for (v, u) in table.row_mut(i).iter_mut().zip(&updates[k * dim..(k + 1) * dim]) {
                *v += u;
            }
        }
        Ok(())
    }

    /// The `rn` rows with the highest access counters, ties to the lower row id.
    /// Returned in ascending row order.
    pub fn top_rn_by_counter(&self, t: usize, rn: usize) -> Result<Vec<usize>> {
        let table = self.table(t)?;
        let counters = table
            .counters
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("access counters are disabled".into()))?;
        Ok(top_k_by(table.rows, rn, |r| counters[r] as f64))
    }

    /// The `rn` rows with the largest L2 change since their last save.
    pub fn top_rn_by_delta(&self, t: usize, rn: usize) -> Result<Vec<usize>> {
        let table = self.table(t)?;
        if table.shadow.is_none() {
            return Err(Error::InvalidInput("delta tracking is disabled".into()));
        }
        let deltas: Vec<f64> = (0..table.rows).map(|r| table.delta(r).unwrap()).collect();
        Ok(top_k_by(table.rows, rn, |r| deltas[r]))
    }

    /// Pearson correlation between per-row access counts and L2 deltas.
    pub fn frequency_delta_correlation(&self, t: usize) -> Result<f64> {
        let table = self.table(t)?;
        let counters = table
            .counters
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("access counters are disabled".into()))?;
        if table.shadow.is_none() {
            return Err(Error::InvalidInput("delta tracking is disabled".into()));
        }
        let counts: Vec<f64> = counters.iter().map(|&c| c as f64).collect();
        let deltas: Vec<f64> = (0..table.rows).map(|r| table.delta(r).unwrap()).collect();
        pearson(&counts, &deltas)
    }

    /// Clears counters, refreshes shadows and drops SSU entries for rows just saved.
    pub fn mark_saved(&mut self, t: usize, rows: &[usize]) -> Result<()> {
        let table = self.table_mut(t)?;
        for &r in rows {
            if r >= table.rows {
                return Err(Error::IndexOutOfRange {
                    table: t,
                    index: r as u64,
                    rows: table.rows,
                });
            }
            table.clear_tracking(r);
        }
        Ok(())
    }

    /// Tracking state for a shard whose rows were just rebuilt from snapshots:
    /// counters and list entries are lost with the node, shadows match the
    /// restored (last saved) values.
    pub fn mark_shard_restored(&mut self, t: usize, shard: usize) -> Result<()> {
        let table = self.table_mut(t)?;
        let range = table.shard_rows(shard);
        if let Some(list) = table.ssu.as_mut() {
            list.remove_range(range.clone());
        }
        for r in range {
            if let Some(c) = table.counters.as_mut() {
                c[r] = 0;
            }
            if let Some(shadow) = table.shadow.as_mut() {
                let d = table.dim;
                shadow[r * d..(r + 1) * d].copy_from_slice(&table.values[r * d..(r + 1) * d]);
            }
        }
        Ok(())
    }

    /// Writes `row,count,delta` for one table.
    pub fn dump_diagnostics<W: Write>(&self, t: usize, out: W) -> Result<()> {
        let table = self.table(t)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row", "count", "delta"])?;
        for r in 0..table.rows {
            let count = table.counters.as_ref().map(|c| c[r].to_string()).unwrap_or_default();
            let delta = table.delta(r).map(|d| d.to_string()).unwrap_or_default();
            w.write_record([r.to_string(), count, delta])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Indices of the `k` largest keys, ties broken toward lower index; O(N log N).
fn top_k_by(n: usize, k: usize, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let cmp = |a: &usize, b: &usize| key(*b).total_cmp(&key(*a)).then(a.cmp(b));
    if k < n {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable();
    idx
}
