//! Run configuration file (TOML).
//!
//! Every key has a default, so an empty file is the calibrated 56-hour
//! emulation. Unknown keys are rejected. [`RunConfig::resolve`] fills in the
//! derived keys; a resolved config re-serializes to a file that parses back
//! to itself.

use std::path::Path;

use cpr_core::checkpoint::{default_prioritized_tables, CheckpointPolicy, Strategy, DEFAULT_R, PRIORITY_COVERAGE};
use cpr_core::cost::CostParameters;
use cpr_core::failure::FailureProcess;
use cpr_core::sim::{mean_shards_lost, Injection, LoadCharge, SimConfig, SimMode};
use cpr_core::trainer::TrainerConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Save and load cost per event (hours) at which full recovery at its
/// optimal interval spends 8.5% of the emulated job on checkpointing.
pub const CALIBRATED_O_SAVE: f64 = 0.0949;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub n_seeds: usize,
    pub target_pls: f64,
    /// Hours partial recovery must save before it is chosen; 1% of `t_total` if unset.
    pub margin_hours: Option<f64>,
    pub strategies: Vec<Strategy>,
    /// Share of the shards one failure clears, drawn uniformly per event.
    pub fraction_set: Vec<f64>,
    pub load_charge: LoadCharge,
    pub cost: CostSection,
    pub failures: FailureSection,
    pub checkpoint: CheckpointSection,
    pub trainer: TrainerConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    pub o_save: f64,
    pub o_load: f64,
    pub o_res: f64,
    pub t_fail: f64,
    pub t_total: f64,
    pub n_emb: u32,
    /// Mean shards lost per failure; derived from `fraction_set` if unset.
    pub shards_per_failure: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FailureSection {
    pub injection: Injection,
    pub process: FailureProcess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckpointSection {
    pub r: f64,
    /// Relative table sizes for save pricing; the trainer's tables if unset.
    pub table_volumes: Option<Vec<f64>>,
    /// Tables receiving priority saves; largest tables covering 99% if unset.
    pub prioritized_tables: Option<Vec<usize>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            n_seeds: 1000,
            target_pls: 0.1,
            margin_hours: None,
            strategies: Strategy::ALL.to_vec(),
            fraction_set: vec![0.5, 0.25, 0.125],
            load_charge: LoadCharge::PerEvent,
            cost: CostSection::default(),
            failures: FailureSection::default(),
            checkpoint: CheckpointSection::default(),
            trainer: TrainerConfig::default(),
        }
    }
}

impl Default for CostSection {
    fn default() -> Self {
        CostSection {
            o_save: CALIBRATED_O_SAVE,
            o_load: CALIBRATED_O_SAVE,
            o_res: 0.0,
            t_fail: 28.0,
            t_total: 56.0,
            n_emb: 8,
            shards_per_failure: None,
        }
    }
}

impl Default for FailureSection {
    fn default() -> Self {
        FailureSection {
            injection: Injection::FixedCount { count: 2 },
            process: FailureProcess::uniform(28.0).expect("positive MTBF"),
        }
    }
}

impl Default for CheckpointSection {
    fn default() -> Self {
        CheckpointSection {
            r: DEFAULT_R,
            table_volumes: None,
            prioritized_tables: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(RunConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Input(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Materializes every derived key and checks the result.
    pub fn resolve(mut self) -> Result<Self> {
        let n_emb = self.cost.n_emb as usize;
        if self.fraction_set.is_empty() {
            return Err(CliError::Config("fraction_set: must not be empty".into()));
        }
        self.margin_hours.get_or_insert(0.01 * self.cost.t_total);
        self.cost
            .shards_per_failure
            .get_or_insert(mean_shards_lost(&self.fraction_set, n_emb.max(1)));
        let trainer_volumes: Vec<f64> = self.trainer.table_params().iter().map(|&p| p as f64).collect();
        let volumes = self.checkpoint.table_volumes.get_or_insert(trainer_volumes).clone();
        self.checkpoint.prioritized_tables.get_or_insert_with(|| {
            let v: Vec<u64> = volumes.iter().map(|&x| x.round().max(0.0) as u64).collect();
            default_prioritized_tables(&v, PRIORITY_COVERAGE)
        });
        self.trainer.hours = self.cost.t_total;
        self.trainer.r = self.checkpoint.r;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let field = |name: &str, e: cpr_core::Error| CliError::Config(format!("{name}: {e}"));
        if self.n_seeds == 0 {
            return Err(CliError::Config("n_seeds: must be >= 1".into()));
        }
        if !(self.target_pls > 0.0 && self.target_pls <= 1.0) {
            return Err(CliError::Config(format!(
                "target_pls: {} is outside (0, 1]",
                self.target_pls
            )));
        }
        if self.strategies.is_empty() {
            return Err(CliError::Config("strategies: must not be empty".into()));
        }
        if self.margin_hours.is_some_and(|m| !(m >= 0.0)) {
            return Err(CliError::Config("margin_hours: must be >= 0".into()));
        }
        self.cost_parameters()?.validate().map_err(|e| field("cost", e))?;
        self.failures.process.validate().map_err(|e| field("failures.process", e))?;
        if self.trainer.n_shards != self.cost.n_emb as usize {
            return Err(CliError::Config(format!(
                "trainer.n_shards: {} must equal cost.n_emb ({})",
                self.trainer.n_shards, self.cost.n_emb
            )));
        }
        self.trainer.validate().map_err(|e| field("trainer", e))?;
        for s in &self.strategies {
            self.sim_config(*s, SimMode::Analytic)?
                .validate()
                .map_err(|e| field("checkpoint", e))?;
        }
        Ok(())
    }

    pub fn cost_parameters(&self) -> Result<CostParameters> {
        let c = &self.cost;
        Ok(CostParameters {
            o_save: c.o_save,
            o_load: c.o_load,
            o_res: c.o_res,
            t_fail: c.t_fail,
            t_total: c.t_total,
            n_emb: c.n_emb,
            shards_per_failure: c.shards_per_failure.unwrap_or(1.0),
        })
    }

    pub fn margin(&self) -> f64 {
        self.margin_hours.unwrap_or(0.01 * self.cost.t_total)
    }

    /// Simulator config for `strategy` at its planned interval.
    pub fn sim_config(&self, strategy: Strategy, mode: SimMode) -> Result<SimConfig> {
        let cost = self.cost_parameters()?;
        let base = SimConfig {
            cost,
            process: self.failures.process.clone(),
            injection: self.failures.injection,
            policy: CheckpointPolicy {
                prioritized_tables: self.checkpoint.prioritized_tables.clone().unwrap_or_default(),
                ..CheckpointPolicy::new(strategy, 1.0).with_r(self.checkpoint.r)
            },
            fraction_set: self.fraction_set.clone(),
            target_pls: self.target_pls,
            table_volumes: self.checkpoint.table_volumes.clone().unwrap_or_default(),
            load_charge: self.load_charge,
            mode,
            seed: self.seed,
            n_seeds: self.n_seeds,
            trainer: (mode == SimMode::Coupled).then(|| self.trainer.clone()),
        };
        Ok(base.for_strategy(strategy)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// SHA-256 of the resolved TOML, hex encoded.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = RunConfig::default().resolve().unwrap();
        let text = c.to_toml().unwrap();
        let back = RunConfig::parse(&text).unwrap().resolve().unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash().unwrap(), c.hash().unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::parse("sed = 3").is_err());
        assert!(RunConfig::parse("[cost]\no_sav = 0.1").is_err());
    }

    #[test]
    fn derived_keys_are_filled() {
        let c = RunConfig::default().resolve().unwrap();
        assert!((c.cost.shards_per_failure.unwrap() - 7.0 / 3.0).abs() < 1e-12);
        assert_eq!(c.checkpoint.prioritized_tables.as_deref(), Some(&[0, 1, 2, 3][..]));
        assert!((c.margin() - 0.56).abs() < 1e-12);
    }

    #[test]
    fn field_errors_name_the_field() {
        let err = RunConfig::parse("target_pls = 0.0").unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("target_pls"), "{err}");
    }
}
