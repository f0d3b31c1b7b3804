use serde::{Deserialize, Serialize};

use super::data::{DataConfig, SyntheticDataset};
use super::metrics::TrainMetrics;
use super::model::{ModelConfig, ToyModel};
use crate::checkpoint::{
    default_prioritized_tables, plan_schedule, CheckpointEngine, CheckpointPolicy, SaveCostModel,
    SaveScope, SnapshotStore, Strategy, PRIORITY_COVERAGE,
};
use crate::cost::RecoveryKind;
use crate::embedding::{Instrumentation, SsuConfig};
use crate::error::{Error, Result};
use crate::failure::{pick_failed_shards, FailureTrace};
use crate::pls::PlsLedger;
use crate::sim::{LoadCharge, OverheadLedger};

/// Per-event overheads (hours) charged to the ledger of a training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverheadRates {
    pub o_save: f64,
    pub o_load: f64,
    pub o_res: f64,
}

impl Default for OverheadRates {
    fn default() -> Self {
        OverheadRates {
            o_save: 0.1,
            o_load: 0.1,
            o_res: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub batch_size: usize,
    pub n_shards: usize,
    /// Emulated job length; failure and save times in hours map onto steps
    /// at a constant rate.
    pub hours: f64,
    pub r: f64,
    pub ssu_sampling_period: u32,
    pub include_opt_state: bool,
    pub rates: OverheadRates,
    pub load_charge: LoadCharge,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            batch_size: 64,
            n_shards: 8,
            hours: 56.0,
            r: crate::checkpoint::DEFAULT_R,
            ssu_sampling_period: 2,
            include_opt_state: true,
            rates: OverheadRates::default(),
            load_charge: LoadCharge::PerEvent,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.model.validate()?;
        if self.batch_size == 0 || self.n_shards == 0 {
            return Err(Error::InvalidInput("batch_size and n_shards must be >= 1".into()));
        }
        if self.data.n_train < self.batch_size {
            return Err(Error::InvalidInput("fewer training samples than one batch".into()));
        }
        if !(self.hours > 0.0 && self.hours.is_finite()) {
            return Err(Error::domain("hours", self.hours, "finite and > 0"));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.data.n_train / self.batch_size
    }

    /// Parameter counts per table.
    pub fn table_params(&self) -> Vec<u64> {
        self.data
            .vocab_sizes
            .iter()
            .map(|&v| (v * self.model.emb_dim) as u64)
            .collect()
    }

    /// A policy with this config's `r` and the default prioritized tables.
    pub fn policy(&self, strategy: Strategy, t_save: f64) -> CheckpointPolicy {
        CheckpointPolicy::new(strategy, t_save)
            .with_r(self.r)
            .with_prioritized(default_prioritized_tables(&self.table_params(), PRIORITY_COVERAGE))
    }

    fn instrumentation(&self, strategy: Strategy) -> Instrumentation {
        match strategy {
            Strategy::CprScar => Instrumentation {
                deltas: true,
                ..Default::default()
            },
            Strategy::CprMfu => Instrumentation {
                counters: true,
                ..Default::default()
            },
            Strategy::CprSsu => Instrumentation {
                ssu: Some(SsuConfig {
                    ratio: self.r,
                    sampling_period: self.ssu_sampling_period,
                }),
                ..Default::default()
            },
            _ => Instrumentation::default(),
        }
    }

    pub fn new_model(&self, instrumentation: Instrumentation, seed: u64) -> Result<ToyModel> {
        ToyModel::new(
            &self.model,
            &self.data.vocab_sizes,
            self.data.dense_dim,
            self.n_shards,
            instrumentation,
            seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FailureRecord {
    pub time_hours: f64,
    pub step: usize,
    pub shards: Vec<usize>,
    pub pls_delta: f64,
    /// Steps recomputed (full recovery only).
    pub lost_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentOutcome {
    pub strategy: Strategy,
    pub t_save: f64,
    pub metrics: TrainMetrics,
    pub final_pls: f64,
    pub ledger: OverheadLedger,
    pub failures: Vec<FailureRecord>,
    pub saves: usize,
    pub rows_saved: u64,
}

fn boundary(hours: f64, hours_per_step: f64, steps: usize) -> usize {
    ((hours / hours_per_step + 1e-9).floor() as usize).min(steps)
}

/// Trains one model while saving per `policy` and injecting `trace`.
///
/// Times map to step boundaries at a constant rate; at a shared boundary
/// saves happen before failures. Full recovery reverts every shard and the
/// dense layers to the last save and recomputes the lost steps on the same
/// data, so it ends bit-identical to failure-free training. Partial
/// strategies rebuild only the failed shards and keep going. The PLS ledger
/// marks every shard checkpointed at each full-volume save (multiples of
/// `t_save`) for every strategy.
pub fn run_failure_experiment(
    policy: &CheckpointPolicy,
    trace: &FailureTrace,
    cfg: &TrainerConfig,
    data: &SyntheticDataset,
    seed: u64,
) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    trace.validate()?;
    if data.vocab_sizes != cfg.data.vocab_sizes || data.train.len() < cfg.steps() * cfg.batch_size {
        return Err(Error::ShapeMismatch("dataset does not match the trainer config".into()));
    }
    let steps = cfg.steps();
    let batch = cfg.batch_size;
    let hours_per_step = cfg.hours / steps as f64;
    let strategy = policy.strategy;
    let full_recovery = strategy.recovery() == RecoveryKind::FullRecovery;

    let mut model = cfg.new_model(cfg.instrumentation(strategy), seed)?;
    let volumes: Vec<f64> = cfg.table_params().iter().map(|&p| p as f64).collect();
    let mut engine = CheckpointEngine::new(
        policy.clone(),
        SaveCostModel::new(cfg.rates.o_save, volumes)?,
        SnapshotStore::in_memory(cfg.include_opt_state),
    )?;
    engine.initial_snapshot(&mut model.emb, 0)?;
    let mut mlp_ckpt = (model.mlp.clone(), 0usize);

    let actions = plan_schedule(policy, cfg.hours)?;
    let action_steps: Vec<usize> = actions
        .iter()
        .map(|a| boundary(a.time, hours_per_step, steps))
        .collect();
    let fail_steps: Vec<usize> = trace
        .events
        .iter()
        .map(|e| boundary(e.time_hours, hours_per_step, steps))
        .collect();

    let all_shards: Vec<usize> = (0..cfg.n_shards).collect();
    let mut pls = PlsLedger::new((steps * batch) as u64, cfg.n_shards)?;
    let mut ledger = OverheadLedger::default();
    let mut failures = Vec::new();
    let mut saves = 0;
    let mut rows_saved = 0u64;
    let (mut ai, mut fi) = (0, 0);

    for k in 0..=steps {
        let samples = (k * batch) as u64;
        while ai < actions.len() && action_steps[ai] == k {
            let receipt = engine.execute(&actions[ai], &mut model.emb, samples)?;
            ledger.save_hours += receipt.cost_hours;
            rows_saved += receipt.rows_saved.iter().map(|&r| r as u64).sum::<u64>();
            saves += 1;
            if actions[ai].scope != SaveScope::Prioritized {
                pls.record_checkpoint(&all_shards, samples)?;
                if full_recovery {
                    mlp_ckpt = (model.mlp.clone(), k);
                }
            }
            ai += 1;
        }
        while fi < fail_steps.len() && fail_steps[fi] == k {
            let event = trace.events[fi];
            let shards = pick_failed_shards(event.lost_fraction, cfg.n_shards, seed, fi);
            let mut record = FailureRecord {
                time_hours: event.time_hours,
                step: k,
                shards: shards.clone(),
                pls_delta: 0.0,
                lost_steps: 0,
            };
            engine.restore(&mut model.emb, &shards)?;
            ledger.reschedule_hours += cfg.rates.o_res;
            if full_recovery {
                ledger.load_hours += cfg.rates.o_load;
                model.mlp = mlp_ckpt.0.clone();
                let from = mlp_ckpt.1;
                for s in from..k {
                    model.train_step(&data.train, s * batch..(s + 1) * batch, s)?;
                }
                record.lost_steps = k - from;
                ledger.lost_hours += (k - from) as f64 * hours_per_step;
            } else {
                ledger.load_hours += cfg.load_charge.charge(cfg.rates.o_load, shards.len(), cfg.n_shards);
                record.pls_delta = pls.record_failure(samples, &shards)?;
            }
            failures.push(record);
            fi += 1;
        }
        if k < steps {
            model.train_step(&data.train, k * batch..(k + 1) * batch, k)?;
        }
    }

    Ok(ExperimentOutcome {
        strategy,
        t_save: policy.t_save,
        metrics: model.evaluate(&data.test, (steps * batch) as u64)?,
        final_pls: pls.pls(),
        ledger,
        failures,
        saves,
        rows_saved,
    })
}
