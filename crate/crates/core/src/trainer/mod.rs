//! Desk-scale recommendation training used to measure the accuracy side of
//! partial recovery.

mod data;
mod experiment;
mod metrics;
mod model;

pub use data::{generate_dataset, EffectDist, zipf_top_mass, DataConfig, Split, SyntheticDataset};
pub use experiment::{
    run_failure_experiment, ExperimentOutcome, FailureRecord, OverheadRates, TrainerConfig,
};
pub use metrics::{auc, logloss, TrainMetrics};
pub use model::{Dense, EmbGrads, Mlp, ModelConfig, ToyModel};

use crate::error::Result;

/// Single-epoch training: every training sample is consumed exactly once,
/// in order, `batch_size` at a time. `before_step` runs before each step.
pub fn train<F>(
    model: &mut ToyModel,
    data: &SyntheticDataset,
    batch_size: usize,
    mut before_step: F,
) -> Result<TrainMetrics>
where
    F: FnMut(usize, &mut ToyModel) -> Result<()>,
{
    let steps = data.train.len() / batch_size.max(1);
    for step in 0..steps {
        before_step(step, model)?;
        model.train_step(&data.train, step * batch_size..(step + 1) * batch_size, step)?;
    }
    model.evaluate(&data.test, (steps * batch_size) as u64)
}
