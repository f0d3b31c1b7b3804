use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cost::RecoveryKind;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    FullRecovery,
    PartialNaive,
    CprVanilla,
    CprScar,
    CprMfu,
    CprSsu,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::FullRecovery,
        Strategy::PartialNaive,
        Strategy::CprVanilla,
        Strategy::CprScar,
        Strategy::CprMfu,
        Strategy::CprSsu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::FullRecovery => "full_recovery",
            Strategy::PartialNaive => "partial_naive",
            Strategy::CprVanilla => "cpr_vanilla",
            Strategy::CprScar => "cpr_scar",
            Strategy::CprMfu => "cpr_mfu",
            Strategy::CprSsu => "cpr_ssu",
        }
    }

    pub fn recovery(self) -> RecoveryKind {
        match self {
            Strategy::FullRecovery => RecoveryKind::FullRecovery,
            _ => RecoveryKind::PartialRecovery,
        }
    }

    pub fn is_prioritized(self) -> bool {
        matches!(self, Strategy::CprScar | Strategy::CprMfu | Strategy::CprSsu)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == norm)
            .ok_or_else(|| Error::InvalidInput(format!("unknown strategy `{s}`")))
    }
}

/// Default priority-save ratio.
pub const DEFAULT_R: f64 = 0.125;

/// Parameter-mass share the default prioritized table set must cover.
pub const PRIORITY_COVERAGE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointPolicy {
    pub strategy: Strategy,
    /// Hours between full-volume saves.
    pub t_save: f64,
    pub r: f64,
    pub prioritized_tables: Vec<usize>,
}

impl CheckpointPolicy {
    pub fn new(strategy: Strategy, t_save: f64) -> Self {
        CheckpointPolicy {
            strategy,
            t_save,
            r: DEFAULT_R,
            prioritized_tables: Vec::new(),
        }
    }

    pub fn with_r(mut self, r: f64) -> Self {
        self.r = r;
        self
    }

    pub fn with_prioritized(mut self, tables: Vec<usize>) -> Self {
        self.prioritized_tables = tables;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_save > 0.0 && self.t_save.is_finite()) {
            return Err(Error::domain("t_save", self.t_save, "finite and > 0"));
        }
        if !(self.r > 0.0 && self.r <= 1.0) {
            return Err(Error::domain("r", self.r, "(0, 1]"));
        }
        if self.strategy.is_prioritized() && self.r >= 1.0 {
            return Err(Error::InvalidInput(format!(
                "{} needs r < 1",
                self.strategy
            )));
        }
        Ok(())
    }

    pub fn is_prioritized_table(&self, table: usize) -> bool {
        self.strategy.is_prioritized() && self.prioritized_tables.contains(&table)
    }
}

/// Largest-first tables whose parameter counts reach `coverage` of the total.
pub fn default_prioritized_tables(params_per_table: &[u64], coverage: f64) -> Vec<usize> {
    let total: u64 = params_per_table.iter().sum();
    let mut order: Vec<usize> = (0..params_per_table.len()).collect();
    order.sort_by(|&a, &b| params_per_table[b].cmp(&params_per_table[a]).then(a.cmp(&b)));
    let mut acc = 0u64;
    let mut out = Vec::new();
    for t in order {
        if total > 0 && acc as f64 >= coverage * total as f64 {
            break;
        }
        acc += params_per_table[t];
        out.push(t);
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaveScope {
    /// Full save of every shard of every table.
    AllTables,
    /// Full save of the tables outside the prioritized set.
    NonPrioritized,
    /// Row-selected save of the prioritized tables.
    Prioritized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaveAction {
    pub time: f64,
    pub scope: SaveScope,
}

/// Save actions in `(0, horizon]` in time order; at equal times full saves come first.
pub fn plan_schedule(policy: &CheckpointPolicy, horizon: f64) -> Result<Vec<SaveAction>> {
    policy.validate()?;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::domain("horizon", horizon, "finite and > 0"));
    }
    let ticks = |period: f64| -> Vec<f64> {
        let n = (horizon / period + 1e-9).floor() as u64;
        (1..=n).map(|k| k as f64 * period).collect()
    };
    let mut out = Vec::new();
    if policy.strategy.is_prioritized() {
        let full = ticks(policy.t_save);
        let part = ticks(policy.r * policy.t_save);
        let mut fi = full.iter().peekable();
        for &t in &part {
            while let Some(&&f) = fi.peek() {
                if f <= t + 1e-9 * t {
                    out.push(SaveAction {
                        time: f,
                        scope: SaveScope::NonPrioritized,
                    });
                    fi.next();
                } else {
                    break;
                }
            }
            out.push(SaveAction {
                time: t,
                scope: SaveScope::Prioritized,
            });
        }
        out.extend(fi.map(|&f| SaveAction {
            time: f,
            scope: SaveScope::NonPrioritized,
        }));
    } else {
        out.extend(ticks(policy.t_save).into_iter().map(|time| SaveAction {
            time,
            scope: SaveScope::AllTables,
        }));
    }
    Ok(out)
}

/// Volume-proportional save pricing: a table's full save costs
/// `o_save * volume(table) / total volume`, and saving `k` of its `N` rows
/// costs `k / N` of that.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaveCostModel {
    pub o_save: f64,
    pub table_volumes: Vec<f64>,
}

impl SaveCostModel {
    pub fn new(o_save: f64, table_volumes: Vec<f64>) -> Result<Self> {
        if !(o_save >= 0.0 && o_save.is_finite()) {
            return Err(Error::domain("o_save", o_save, "finite and >= 0"));
        }
        if table_volumes.is_empty() || table_volumes.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("table volumes must be positive".into()));
        }
        Ok(SaveCostModel {
            o_save,
            table_volumes,
        })
    }

    pub fn total_volume(&self) -> f64 {
        self.table_volumes.iter().sum()
    }

    pub fn table_cost(&self, table: usize) -> f64 {
        self.o_save * self.table_volumes[table] / self.total_volume()
    }

    /// Cost of saving `saved` rows out of `rows` for one table.
    pub fn rows_cost(&self, table: usize, saved: usize, rows: usize) -> f64 {
        self.table_cost(table) * saved as f64 / rows as f64
    }

    /// Cost of a scheduled action when each prioritized save moves `r` of the
    /// rows (the planning-time upper bound; executed saves may move fewer).
    pub fn planned_cost(&self, action: &SaveAction, policy: &CheckpointPolicy) -> f64 {
        let tables = 0..self.table_volumes.len();
        match action.scope {
            SaveScope::AllTables => self.o_save,
            SaveScope::NonPrioritized => tables
                .filter(|t| !policy.prioritized_tables.contains(t))
                .map(|t| self.table_cost(t))
                .sum(),
            SaveScope::Prioritized => {
                policy.r
                    * policy
                        .prioritized_tables
                        .iter()
                        .filter(|&&t| t < self.table_volumes.len())
                        .map(|&t| self.table_cost(t))
                        .sum::<f64>()
            }
        }
    }
}
