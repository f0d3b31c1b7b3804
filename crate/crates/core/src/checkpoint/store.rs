use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::format::{Snapshot, SnapshotKind};
use crate::embedding::EmbeddingShardSet;
use crate::error::{Error, Result};

pub type SnapshotId = u64;

#[derive(Debug, Clone)]
struct Stored {
    id: SnapshotId,
    snapshot: Snapshot,
}

/// Per-(table, shard) snapshot chains.
///
/// Each chain holds the latest full snapshot followed by every later partial
/// one, ordered by logical time. Older generations are pruned when a new full
/// snapshot lands. With a directory attached every snapshot is also written
/// to disk (temp file then rename) and pruned files are removed.
#[derive(Debug, Clone)]
pub struct SnapshotStore {
    include_opt_state: bool,
    chains: BTreeMap<(usize, usize), Vec<Stored>>,
    next_id: SnapshotId,
    dir: Option<PathBuf>,
    bytes_written: u64,
}

impl SnapshotStore {
    pub fn in_memory(include_opt_state: bool) -> Self {
        SnapshotStore {
            include_opt_state,
            chains: BTreeMap::new(),
            next_id: 0,
            dir: None,
            bytes_written: 0,
        }
    }

    pub fn with_directory(dir: impl Into<PathBuf>, include_opt_state: bool) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(SnapshotStore {
            dir: Some(dir),
            ..Self::in_memory(include_opt_state)
        })
    }

    /// Rebuilds a store from the snapshot files in `dir`.
    pub fn load_directory(dir: &Path, include_opt_state: bool) -> Result<Self> {
        let mut files: Vec<(SnapshotId, PathBuf)> = Vec::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("cprs") {
                continue;
            }
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.rsplit('_').next())
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("unexpected file name {}", path.display())))?;
            files.push((id, path));
        }
        files.sort();
        let mut store = Self::in_memory(include_opt_state);
        store.dir = Some(dir.to_path_buf());
        for (id, path) in files {
            let snapshot = Snapshot::decode(&fs::read(&path)?)?;
            let key = (snapshot.table as usize, snapshot.shard as usize);
            let chain = store.chains.entry(key).or_default();
            if snapshot.kind == SnapshotKind::Full {
                chain.clear();
            }
            chain.push(Stored { id, snapshot });
            store.next_id = store.next_id.max(id + 1);
        }
        Ok(store)
    }

    pub fn includes_opt_state(&self) -> bool {
        self.include_opt_state
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    pub fn chain(&self, table: usize, shard: usize) -> Vec<&Snapshot> {
        self.chains
            .get(&(table, shard))
            .map(|c| c.iter().map(|s| &s.snapshot).collect())
            .unwrap_or_default()
    }

    pub fn latest_full(&self, table: usize, shard: usize) -> Option<&Snapshot> {
        self.chains
            .get(&(table, shard))?
            .iter()
            .rev()
            .map(|s| &s.snapshot)
            .find(|s| s.kind == SnapshotKind::Full)
    }

    fn file_path(&self, id: SnapshotId, table: usize, shard: usize) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("t{table:03}_s{shard:03}_{id:010}.cprs")))
    }

    fn push(&mut self, snapshot: Snapshot) -> Result<SnapshotId> {
        let key = (snapshot.table as usize, snapshot.shard as usize);
        if let Some(last) = self.chains.get(&key).and_then(|c| c.last()) {
            if snapshot.logical_time < last.snapshot.logical_time {
                return Err(Error::InvalidInput(format!(
                    "snapshot at {} h precedes the chain's latest at {} h",
                    snapshot.logical_time, last.snapshot.logical_time
                )));
            }
        }
        let id = self.next_id;
        let bytes = snapshot.encode()?;
        if let Some(path) = self.file_path(id, key.0, key.1) {
            let tmp = path.with_extension("tmp");
            fs::write(&tmp, &bytes)?;
            fs::rename(&tmp, &path)?;
        }
        self.bytes_written += bytes.len() as u64;
        self.next_id += 1;
        let chain = self.chains.entry(key).or_default();
        if snapshot.kind == SnapshotKind::Full {
            let pruned: Vec<SnapshotId> = chain.drain(..).map(|s| s.id).collect();
            if self.dir.is_some() {
                for old in pruned {
                    if let Some(p) = self.file_path(old, key.0, key.1) {
                        fs::remove_file(p)?;
                    }
                }
            }
        }
        self.chains
            .get_mut(&key)
            .expect("chain exists")
            .push(Stored { id, snapshot });
        Ok(id)
    }

    fn capture(
        &self,
        set: &EmbeddingShardSet,
        table: usize,
        shard: usize,
        rows: Vec<u64>,
        kind: SnapshotKind,
        logical_time: f64,
        sample_count: u64,
    ) -> Result<Snapshot> {
        let t = set.table(table)?;
        let dim = t.dim();
        let k = if self.include_opt_state { t.opt_scalars() } else { 0 };
        let mut values = Vec::with_capacity(rows.len() * dim);
        let mut opt = Vec::with_capacity(rows.len() * k);
        for &r in &rows {
            values.extend_from_slice(t.row(r as usize));
            if k > 0 {
                opt.push(t.opt_state()[r as usize]);
            }
        }
        Ok(Snapshot {
            table: table as u32,
            shard: shard as u32,
            kind,
            logical_time,
            sample_count,
            dim: dim as u32,
            opt_scalars: k as u32,
            rows,
            values,
            opt,
        })
    }

    fn check_shard(set: &EmbeddingShardSet, table: usize, shard: usize) -> Result<()> {
        if shard >= set.n_shards() {
            return Err(Error::UnknownShard {
                shard,
                n_emb: set.n_shards(),
            });
        }
        set.table(table).map(|_| ())
    }

    /// Saves every row of one table's shard and resets those rows' tracking.
    pub fn save_full(
        &mut self,
        set: &mut EmbeddingShardSet,
        table: usize,
        shard: usize,
        logical_time: f64,
        sample_count: u64,
    ) -> Result<SnapshotId> {
        Self::check_shard(set, table, shard)?;
        let range = set.table(table)?.shard_rows(shard);
        let rows: Vec<u64> = range.clone().map(|r| r as u64).collect();
        let snap = self.capture(set, table, shard, rows, SnapshotKind::Full, logical_time, sample_count)?;
        let id = self.push(snap)?;
        set.mark_saved(table, &range.collect::<Vec<_>>())?;
        Ok(id)
    }

    /// Saves the listed rows of one shard; an empty list is a no-op.
    pub fn save_partial(
        &mut self,
        set: &mut EmbeddingShardSet,
        table: usize,
        shard: usize,
        rows: &[usize],
        logical_time: f64,
        sample_count: u64,
    ) -> Result<Option<SnapshotId>> {
        Self::check_shard(set, table, shard)?;
        if rows.is_empty() {
            return Ok(None);
        }
        let range = set.table(table)?.shard_rows(shard);
        let mut sorted = rows.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        if let Some(bad) = sorted.iter().find(|r| !range.contains(r)) {
            return Err(Error::InvalidInput(format!(
                "row {bad} is not in shard {shard} of table {table}"
            )));
        }
        let ids = sorted.iter().map(|&r| r as u64).collect();
        let snap = self.capture(
            set,
            table,
            shard,
            ids,
            SnapshotKind::PartialRows,
            logical_time,
            sample_count,
        )?;
        let id = self.push(snap)?;
        set.mark_saved(table, &sorted)?;
        Ok(Some(id))
    }

    /// Rebuilds one shard: the chain's full snapshot overlaid with later
    /// partial snapshots, latest wins per row. Rows absent from every
    /// snapshot keep their current values. Tracking for the shard is reset.
    pub fn restore_shard(&self, set: &mut EmbeddingShardSet, table: usize, shard: usize) -> Result<()> {
        Self::check_shard(set, table, shard)?;
        let chain = self
            .chains
            .get(&(table, shard))
            .filter(|c| !c.is_empty())
            .ok_or(Error::NoSnapshot { table, shard })?;
        let include_opt = self.include_opt_state;
        let t = set.table_mut(table)?;
        let has_opt = t.opt_scalars() > 0;
        for stored in chain {
            let s = &stored.snapshot;
            if s.dim as usize != t.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "snapshot dim {} vs table dim {}",
                    s.dim,
                    t.dim()
                )));
            }
            for (i, &r) in s.rows.iter().enumerate() {
                let r = r as usize;
                t.row_mut(r).copy_from_slice(s.row_values(i));
                if has_opt {
                    t.opt_state_mut()[r] = if include_opt && s.opt_scalars > 0 {
                        s.row_opt(i)[0]
                    } else {
                        0.0
                    };
                }
            }
        }
        set.mark_shard_restored(table, shard)
    }

    /// Restores every table's copy of the given shards.
    pub fn restore_shards(&self, set: &mut EmbeddingShardSet, shards: &[usize]) -> Result<()> {
        for &s in shards {
            for t in 0..set.n_tables() {
                self.restore_shard(set, t, s)?;
            }
        }
        Ok(())
    }
}
