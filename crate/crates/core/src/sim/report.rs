use std::fmt::Write as _;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{MonteCarloSummary, SimulationReport};
use crate::checkpoint::Strategy;
use crate::error::{Error, Result};

/// One CSV row per simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub seed: u64,
    pub strategy: Strategy,
    pub interval: f64,
    pub save_hours: f64,
    pub load_hours: f64,
    pub lost_hours: f64,
    pub reschedule_hours: f64,
    pub overhead_fraction: f64,
    pub final_pls: f64,
    /// Empty unless the run trained a model.
    pub auc: Option<f64>,
}

impl From<&SimulationReport> for RunRow {
    fn from(r: &SimulationReport) -> Self {
        RunRow {
            seed: r.seed,
            strategy: r.strategy,
            interval: r.interval_hours,
            save_hours: r.ledger.save_hours,
            load_hours: r.ledger.load_hours,
            lost_hours: r.ledger.lost_hours,
            reschedule_hours: r.ledger.reschedule_hours,
            overhead_fraction: r.overhead_fraction,
            final_pls: r.final_pls,
            auc: r.auc,
        }
    }
}

pub fn write_runs_csv<W: Write>(out: W, rows: &[RunRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_runs_csv<R: Read>(input: R) -> Result<Vec<RunRow>> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<RunRow>, _>>()?;
    if rows.is_empty() {
        return Err(Error::InvalidInput("no runs in CSV".into()));
    }
    Ok(rows)
}

/// Fixed-width table: one line per strategy.
pub fn summary_text(rows: &[MonteCarloSummary]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>9} {:>6} {:>9} {:>9} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "strategy", "interval", "runs", "overhead", "p95", "save_h", "load_h", "lost_h", "res_h", "pls"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<14} {:>9.3} {:>6} {:>8.3}% {:>8.3}% {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.4}",
            r.strategy.name(),
            r.interval_hours,
            r.n_runs,
            100.0 * r.overhead_fraction.mean,
            100.0 * r.overhead_fraction.p95,
            r.mean_ledger.save_hours,
            r.mean_ledger.load_hours,
            r.mean_ledger.lost_hours,
            r.mean_ledger.reschedule_hours,
            r.final_pls.mean,
        );
    }
    s
}
