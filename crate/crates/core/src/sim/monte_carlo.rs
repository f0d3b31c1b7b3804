use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run, OverheadLedger, SimConfig, SimulationReport};
use crate::checkpoint::Strategy;
use crate::cost::{optimal_full_interval, partial_interval_for_pls, CostParameters};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use crate::stats::{mean, percentile, std_error};

/// Seed of run `index` under manifest seed `seed`.
pub fn run_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, stream::RUN, index as u64)
}

/// Planned full-volume save interval: full recovery and naive partial
/// recovery use the optimal full-recovery interval, the CPR variants the
/// interval whose expected PLS equals `target_pls`.
pub fn interval_for(strategy: Strategy, cost: &CostParameters, target_pls: f64) -> Result<f64> {
    match strategy {
        Strategy::FullRecovery | Strategy::PartialNaive => optimal_full_interval(cost),
        _ => partial_interval_for_pls(target_pls, cost.effective_n_emb(), cost.t_fail),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std_error: f64,
    pub p50: f64,
    pub p75: f64,
    pub p95: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(xs: &[f64]) -> Summary {
        Summary {
            mean: mean(xs),
            std_error: std_error(xs),
            p50: percentile(xs, 50.0),
            p75: percentile(xs, 75.0),
            p95: percentile(xs, 95.0),
            min: xs.iter().copied().fold(f64::INFINITY, f64::min),
            max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub strategy: Strategy,
    pub interval_hours: f64,
    pub n_runs: usize,
    pub overhead_fraction: Summary,
    pub final_pls: Summary,
    pub mean_ledger: OverheadLedger,
    pub auc: Option<Summary>,
    /// Per-run reports in seed-index order.
    pub reports: Vec<SimulationReport>,
}

impl MonteCarloSummary {
    fn from_reports(config: &SimConfig, reports: Vec<SimulationReport>) -> Self {
        let n = reports.len();
        let over: Vec<f64> = reports.iter().map(|r| r.overhead_fraction).collect();
        let pls: Vec<f64> = reports.iter().map(|r| r.final_pls).collect();
        let aucs: Vec<f64> = reports.iter().filter_map(|r| r.auc).collect();
        let mut mean_ledger = OverheadLedger::default();
        for r in &reports {
            mean_ledger.merge(&r.ledger);
        }
        let k = 1.0 / n.max(1) as f64;
        mean_ledger.save_hours *= k;
        mean_ledger.load_hours *= k;
        mean_ledger.lost_hours *= k;
        mean_ledger.reschedule_hours *= k;
        MonteCarloSummary {
            strategy: config.policy.strategy,
            interval_hours: config.policy.t_save,
            n_runs: n,
            overhead_fraction: Summary::of(&over),
            final_pls: Summary::of(&pls),
            mean_ledger,
            auc: (aucs.len() == n && n > 0).then(|| Summary::of(&aucs)),
            reports,
        }
    }
}

/// `n_seeds` independent runs of `config`, fanned out over worker threads.
pub fn monte_carlo(config: &SimConfig, n_seeds: usize) -> Result<MonteCarloSummary> {
    if n_seeds == 0 {
        return Err(Error::InvalidInput("n_seeds must be >= 1".into()));
    }
    config.validate()?;
    let reports = (0..n_seeds)
        .into_par_iter()
        .map(|i| run(config, run_seed(config.seed, i)))
        .collect::<Result<Vec<_>>>()?;
    Ok(MonteCarloSummary::from_reports(config, reports))
}

/// Monte-Carlo of each strategy at its planned interval. Run `i` of every
/// strategy sees the same failure trace and failed shards.
pub fn compare_strategies(config: &SimConfig, strategies: &[Strategy]) -> Result<Vec<MonteCarloSummary>> {
    strategies
        .iter()
        .map(|&s| monte_carlo(&config.for_strategy(s)?, config.n_seeds))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Calibration {
    pub o_save: f64,
    pub o_load: f64,
    pub o_res: f64,
    /// Full recovery's mean overhead fraction at the calibrated values.
    pub achieved: f64,
}

/// Finds `o_save` (with `o_load = o_save`, `o_res = 0`) at which full
/// recovery at its optimal interval averages `target_fraction` overhead over
/// the config's seeds.
pub fn calibrate(config: &SimConfig, target_fraction: f64) -> Result<Calibration> {
    if !(target_fraction > 0.0 && target_fraction < 1.0) {
        return Err(Error::domain("target_fraction", target_fraction, "(0, 1)"));
    }
    let eval = |o: f64| -> Result<f64> {
        let mut c = config.clone();
        c.cost.o_save = o;
        c.cost.o_load = o;
        c.cost.o_res = 0.0;
        let c = c.for_strategy(Strategy::FullRecovery)?;
        Ok(monte_carlo(&c, config.n_seeds)?.overhead_fraction.mean)
    };
    let (mut lo, mut hi) = (1e-9, target_fraction * config.cost.t_total);
    if eval(hi)? < target_fraction {
        return Err(Error::Degenerate(
            "target overhead unreachable with o_save up to the whole budget".into(),
        ));
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if eval(mid)? < target_fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let o = 0.5 * (lo + hi);
    Ok(Calibration {
        o_save: o,
        o_load: o,
        o_res: 0.0,
        achieved: eval(o)?,
    })
}
