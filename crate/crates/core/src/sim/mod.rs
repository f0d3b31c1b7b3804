//! Discrete-event checkpoint/failure simulator.
//!
//! Time runs in training-progress hours over `[0, t_total]`. Overheads are
//! booked to a ledger and displace training instead of overlapping it, so
//! saves and failures sit at fixed progress times and an operation is never
//! interrupted. A failure sharing an instant with a save sees the save done.

mod ledger;
mod monte_carlo;
mod report;

pub use ledger::OverheadLedger;
pub use monte_carlo::{
    calibrate, compare_strategies, interval_for, monte_carlo, run_seed, Calibration,
    MonteCarloSummary, Summary,
};
pub use report::{read_runs_csv, summary_text, write_runs_csv, RunRow};

use serde::{Deserialize, Serialize};

use crate::checkpoint::{plan_schedule, CheckpointPolicy, SaveCostModel, SaveScope, Strategy};
use crate::cost::{CostParameters, RecoveryKind};
use crate::error::{Error, Result};
use crate::failure::{
    pick_failed_shards, sample_failure_schedule, sample_uniform_failures, shards_lost,
    FailureProcess, FailureTrace,
};
use crate::pls::PlsLedger;
use crate::rng::{derive_seed, stream};
use crate::trainer::{generate_dataset, run_failure_experiment, SyntheticDataset, TrainerConfig};

/// How restore time is charged for a partial-recovery failure event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoadCharge {
    /// `o_load` once per event, however many shards failed.
    #[default]
    PerEvent,
    /// `o_load` scaled by the failed share of shards.
    Proportional,
}

impl LoadCharge {
    pub fn charge(self, o_load: f64, failed_shards: usize, n_emb: usize) -> f64 {
        match self {
            LoadCharge::PerEvent => o_load,
            LoadCharge::Proportional => o_load * failed_shards as f64 / n_emb as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Time bookkeeping only.
    #[default]
    Analytic,
    /// Also trains the toy model under the same trace and reports its AUC.
    Coupled,
}

/// Where failure times come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Injection {
    /// Renewal process with gaps drawn from the failure process.
    Renewal,
    /// Exactly `count` failures placed uniformly over the horizon.
    FixedCount { count: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Overheads, horizon and shard count. `t_fail` drives interval planning;
    /// the failure draws come from `process` and `injection`.
    pub cost: CostParameters,
    pub process: FailureProcess,
    pub injection: Injection,
    pub policy: CheckpointPolicy,
    pub fraction_set: Vec<f64>,
    pub target_pls: f64,
    /// Relative parameter volume of each embedding table, for pricing saves.
    pub table_volumes: Vec<f64>,
    #[serde(default)]
    pub load_charge: LoadCharge,
    #[serde(default)]
    pub mode: SimMode,
    /// Manifest seed; run `i` uses `run_seed(seed, i)`.
    pub seed: u64,
    pub n_seeds: usize,
    #[serde(default)]
    pub trainer: Option<TrainerConfig>,
}

/// Mean number of shards one failure takes down when its fraction is drawn
/// uniformly from `fraction_set`.
pub fn mean_shards_lost(fraction_set: &[f64], n_emb: usize) -> f64 {
    if fraction_set.is_empty() {
        return 1.0;
    }
    fraction_set
        .iter()
        .map(|&f| shards_lost(f, n_emb) as f64)
        .sum::<f64>()
        / fraction_set.len() as f64
}

impl SimConfig {
    /// The 56-hour emulation: two uniformly placed failures per run, MTBF
    /// 28 h, eight shards, each failure clearing 50%, 25% or 12.5% of them.
    pub fn emulation(o_save: f64, o_load: f64, o_res: f64) -> Result<Self> {
        let fraction_set = vec![0.5, 0.25, 0.125];
        let mut cost = CostParameters::new(o_save, o_load, o_res, 28.0, 56.0, 8)?;
        cost.shards_per_failure = mean_shards_lost(&fraction_set, 8);
        let t_save = crate::cost::optimal_full_interval(&cost)?;
        Ok(SimConfig {
            cost,
            process: FailureProcess::uniform(28.0)?,
            injection: Injection::FixedCount { count: 2 },
            policy: CheckpointPolicy::new(Strategy::FullRecovery, t_save),
            fraction_set,
            target_pls: 0.1,
            table_volumes: vec![1.0],
            load_charge: LoadCharge::PerEvent,
            mode: SimMode::Analytic,
            seed: 0,
            n_seeds: 1000,
            trainer: None,
        })
    }

    /// Same config with `strategy` at its planned interval.
    pub fn for_strategy(&self, strategy: Strategy) -> Result<Self> {
        let mut c = self.clone();
        c.policy.strategy = strategy;
        c.policy.t_save = interval_for(strategy, &self.cost, self.target_pls)?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.cost.validate()?;
        self.process.validate()?;
        self.policy.validate()?;
        if self.fraction_set.is_empty() {
            return Err(Error::InvalidInput("fraction_set is empty".into()));
        }
        for &f in &self.fraction_set {
            if !(f > 0.0 && f <= 1.0) {
                return Err(Error::domain("fraction_set", f, "(0, 1]"));
            }
        }
        if !(self.target_pls > 0.0 && self.target_pls <= 1.0) {
            return Err(Error::domain("target_pls", self.target_pls, "(0, 1]"));
        }
        if self.table_volumes.is_empty() || self.table_volumes.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("table_volumes must be non-empty and positive".into()));
        }
        if let Some(&t) = self
            .policy
            .prioritized_tables
            .iter()
            .find(|&&t| t >= self.table_volumes.len())
        {
            return Err(Error::UnknownTable(t));
        }
        if self.n_seeds == 0 {
            return Err(Error::InvalidInput("n_seeds must be >= 1".into()));
        }
        if self.mode == SimMode::Coupled {
            let trainer = self
                .trainer
                .as_ref()
                .ok_or_else(|| Error::InvalidInput("coupled mode needs a trainer config".into()))?;
            trainer.validate()?;
            if trainer.data.vocab_sizes.len() != self.table_volumes.len() {
                return Err(Error::ShapeMismatch(
                    "table_volumes must have one entry per trainer table".into(),
                ));
            }
            if trainer.n_shards != self.cost.n_emb as usize {
                return Err(Error::ShapeMismatch("trainer n_shards must equal n_emb".into()));
            }
        }
        Ok(())
    }

    /// Failure trace of run `seed`. Depends only on the process, injection,
    /// fraction set and horizon, never on the policy.
    pub fn failure_trace(&self, seed: u64) -> Result<FailureTrace> {
        let s = derive_seed(seed, stream::FAILURE_TIMES, 0);
        match self.injection {
            Injection::Renewal => {
                sample_failure_schedule(&self.process, self.cost.t_total, &self.fraction_set, s)
            }
            Injection::FixedCount { count } => {
                sample_uniform_failures(count, self.cost.t_total, &self.fraction_set, s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum SimEvent {
    Save {
        time_hours: f64,
        scope: SaveScope,
        cost_hours: f64,
    },
    Failure {
        time_hours: f64,
        lost_fraction: f64,
        shards: Vec<usize>,
        load_hours: f64,
        lost_hours: f64,
        reschedule_hours: f64,
        pls_delta: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub seed: u64,
    pub strategy: Strategy,
    pub interval_hours: f64,
    pub t_total: f64,
    pub n_emb: usize,
    pub ledger: OverheadLedger,
    pub final_pls: f64,
    /// `ledger.total() / t_total`.
    pub overhead_fraction: f64,
    pub events: Vec<SimEvent>,
    pub auc: Option<f64>,
}

/// Sample-count resolution of the analytic PLS ledger.
const SAMPLES_PER_HOUR: f64 = (1u64 << 24) as f64;

fn samples(hours: f64) -> u64 {
    (hours * SAMPLES_PER_HOUR).round() as u64
}

impl SimulationReport {
    /// Rebuilds ledger and PLS from the event log alone.
    pub fn replay(&self) -> Result<SimulationReport> {
        let mut ledger = OverheadLedger::default();
        let mut pls = PlsLedger::new(samples(self.t_total), self.n_emb)?;
        let all: Vec<usize> = (0..self.n_emb).collect();
        let partial = self.strategy.recovery() == RecoveryKind::PartialRecovery;
        for e in &self.events {
            match e {
                SimEvent::Save {
                    time_hours,
                    scope,
                    cost_hours,
                } => {
                    ledger.save_hours += cost_hours;
                    if *scope != SaveScope::Prioritized {
                        pls.record_checkpoint(&all, samples(*time_hours))?;
                    }
                }
                SimEvent::Failure {
                    time_hours,
                    shards,
                    load_hours,
                    lost_hours,
                    reschedule_hours,
                    ..
                } => {
                    ledger.load_hours += load_hours;
                    ledger.lost_hours += lost_hours;
                    ledger.reschedule_hours += reschedule_hours;
                    if partial {
                        pls.record_failure(samples(*time_hours), shards)?;
                    }
                }
            }
        }
        Ok(SimulationReport {
            ledger,
            final_pls: pls.pls(),
            overhead_fraction: ledger.total() / self.t_total,
            ..self.clone()
        })
    }
}

/// One run: sample the failure trace of `seed` and account it.
pub fn run(config: &SimConfig, seed: u64) -> Result<SimulationReport> {
    config.validate()?;
    let trace = config.failure_trace(seed)?;
    let mut report = run_trace(config, &trace, seed)?;
    if config.mode == SimMode::Coupled {
        let trainer = config.trainer.as_ref().expect("validated");
        let data = generate_dataset(&trainer.data, seed)?;
        report.auc = Some(coupled_auc(config, &trace, &data, seed)?);
    }
    Ok(report)
}

/// Analytic accounting of a given trace. `seed` picks the failed shards.
pub fn run_trace(config: &SimConfig, trace: &FailureTrace, seed: u64) -> Result<SimulationReport> {
    let p = &config.cost;
    let policy = &config.policy;
    trace.validate()?;
    let actions = plan_schedule(policy, p.t_total)?;
    let costs = SaveCostModel::new(p.o_save, config.table_volumes.clone())?;
    let n = p.n_emb as usize;
    let all: Vec<usize> = (0..n).collect();
    let mut pls = PlsLedger::new(samples(p.t_total), n)?;
    let full = policy.strategy.recovery() == RecoveryKind::FullRecovery;
    let mut ledger = OverheadLedger::default();
    let mut events = Vec::with_capacity(actions.len() + trace.len());
    let mut last_consistent = 0.0;
    let mut ai = 0;
    for (fi, failure) in trace.events.iter().enumerate() {
        let t = failure.time_hours;
        while ai < actions.len() && actions[ai].time <= t {
            book_save(&actions[ai], policy, &costs, &all, &mut pls, &mut ledger, &mut events)?;
            if actions[ai].scope != SaveScope::Prioritized {
                last_consistent = actions[ai].time;
            }
            ai += 1;
        }
        let shards = pick_failed_shards(failure.lost_fraction, n, seed, fi);
        let (load, lost, pls_delta) = if full {
            (p.o_load, t - last_consistent, 0.0)
        } else {
            let load = config.load_charge.charge(p.o_load, shards.len(), n);
            (load, 0.0, pls.record_failure(samples(t), &shards)?)
        };
        ledger.load_hours += load;
        ledger.lost_hours += lost;
        ledger.reschedule_hours += p.o_res;
        events.push(SimEvent::Failure {
            time_hours: t,
            lost_fraction: failure.lost_fraction,
            shards,
            load_hours: load,
            lost_hours: lost,
            reschedule_hours: p.o_res,
            pls_delta,
        });
    }
    for a in &actions[ai..] {
        book_save(a, policy, &costs, &all, &mut pls, &mut ledger, &mut events)?;
    }
    Ok(SimulationReport {
        seed,
        strategy: policy.strategy,
        interval_hours: policy.t_save,
        t_total: p.t_total,
        n_emb: n,
        ledger,
        final_pls: pls.pls(),
        overhead_fraction: ledger.total() / p.t_total,
        events,
        auc: None,
    })
}

fn book_save(
    action: &crate::checkpoint::SaveAction,
    policy: &CheckpointPolicy,
    costs: &SaveCostModel,
    all: &[usize],
    pls: &mut PlsLedger,
    ledger: &mut OverheadLedger,
    events: &mut Vec<SimEvent>,
) -> Result<()> {
    let cost = costs.planned_cost(action, policy);
    ledger.save_hours += cost;
    if action.scope != SaveScope::Prioritized {
        pls.record_checkpoint(all, samples(action.time))?;
    }
    events.push(SimEvent::Save {
        time_hours: action.time,
        scope: action.scope,
        cost_hours: cost,
    });
    Ok(())
}

/// Final test AUC of the toy model trained under `trace` with the config's policy.
pub fn coupled_auc(
    config: &SimConfig,
    trace: &FailureTrace,
    data: &SyntheticDataset,
    seed: u64,
) -> Result<f64> {
    let trainer = config
        .trainer
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("coupled mode needs a trainer config".into()))?;
    let trainer = TrainerConfig {
        hours: config.cost.t_total,
        ..trainer.clone()
    };
    let outcome = run_failure_experiment(&config.policy, trace, &trainer, data, seed)?;
    Ok(outcome.metrics.auc)
}
