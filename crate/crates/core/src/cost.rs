//! Closed-form checkpoint overhead accounting for full and partial recovery,
//! the optimal full-recovery interval, the PLS-derived partial interval, the
//! full-vs-partial decision, and node-count scalability sweeps.
//!
//! All times are hours. The per-failure lost computation of full recovery is
//! `t_save / 2` (failures uniform within a checkpoint interval).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::failure::{mtbf_for_nodes, FailureProcess};
use crate::pls::expected_pls;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParameters {
    /// Hours per full checkpoint save.
    pub o_save: f64,
    /// Hours per checkpoint restore.
    pub o_load: f64,
    /// Hours to reschedule failed nodes.
    pub o_res: f64,
    /// Mean time between failures.
    pub t_fail: f64,
    /// Training horizon.
    pub t_total: f64,
    /// Number of embedding parameter-server shards.
    pub n_emb: u32,
    /// Mean number of shards lost per failure event (1 for single-node failures).
    #[serde(default = "one")]
    pub shards_per_failure: f64,
}

fn one() -> f64 {
    1.0
}

impl CostParameters {
    pub fn new(o_save: f64, o_load: f64, o_res: f64, t_fail: f64, t_total: f64, n_emb: u32) -> Result<Self> {
        let p = CostParameters {
            o_save,
            o_load,
            o_res,
            t_fail,
            t_total,
            n_emb,
            shards_per_failure: 1.0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("o_save", self.o_save), ("o_load", self.o_load), ("o_res", self.o_res)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::domain(name, v, "finite and >= 0"));
            }
        }
        if !(self.t_fail > 0.0) {
            return Err(Error::domain("t_fail", self.t_fail, "> 0"));
        }
        if !(self.t_total > 0.0 && self.t_total.is_finite()) {
            return Err(Error::domain("t_total", self.t_total, "finite and > 0"));
        }
        if self.n_emb == 0 {
            return Err(Error::InvalidInput("n_emb must be >= 1".into()));
        }
        if !(self.shards_per_failure >= 1.0 && self.shards_per_failure <= self.n_emb as f64) {
            return Err(Error::domain(
                "shards_per_failure",
                self.shards_per_failure,
                "[1, n_emb]",
            ));
        }
        Ok(())
    }

    /// Shard count seen by the expected-PLS formula once multi-shard failures
    /// are folded in: each event loses `shards_per_failure / n_emb` of the model.
    pub fn effective_n_emb(&self) -> f64 {
        self.n_emb as f64 / self.shards_per_failure
    }

    pub fn expected_failures(&self) -> f64 {
        self.t_total / self.t_fail
    }

    /// The default fallback margin, 1% of the horizon.
    pub fn default_margin(&self) -> f64 {
        0.01 * self.t_total
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverheadMode {
    /// Counts of saves and failures use `t_total` alone.
    #[default]
    Approximate,
    /// Counts use the wall-clock span `t_total + overhead`, solved to a fixed point.
    SelfConsistent,
}

fn check_interval(t_save: f64) -> Result<()> {
    if t_save > 0.0 && !t_save.is_nan() {
        Ok(())
    } else {
        Err(Error::domain("t_save", t_save, "> 0"))
    }
}

fn full_over(p: &CostParameters, t_save: f64, span: f64) -> f64 {
    p.o_save * (span / t_save) + (p.o_load + t_save / 2.0 + p.o_res) * (span / p.t_fail)
}

fn partial_over(p: &CostParameters, t_save: f64, span: f64) -> f64 {
    p.o_save * (span / t_save) + (p.o_load + p.o_res) * (span / p.t_fail)
}

/// Total full-recovery overhead: saving + (loading + lost work + rescheduling) per failure.
pub fn full_overhead(p: &CostParameters, t_save: f64) -> Result<f64> {
    check_interval(t_save)?;
    Ok(full_over(p, t_save, p.t_total))
}

/// Total partial-recovery overhead: as [`full_overhead`] without lost work.
pub fn partial_overhead(p: &CostParameters, t_save: f64) -> Result<f64> {
    check_interval(t_save)?;
    Ok(partial_over(p, t_save, p.t_total))
}

fn fixed_point(p: &CostParameters, f: impl Fn(f64) -> f64) -> Result<f64> {
    // O = f(T_total + O); f is linear in span so this is O = a (T + O).
    let a = f(1.0);
    if a >= 1.0 {
        return Err(Error::Degenerate(format!(
            "overhead rate {a:.3} >= 1: training never completes"
        )));
    }
    let mut o = f(p.t_total);
    for _ in 0..10_000 {
        let next = f(p.t_total + o);
        if (next - o).abs() <= 1e-12 * next.max(1.0) {
            return Ok(next);
        }
        o = next;
    }
    Ok(o)
}

pub fn full_overhead_with(p: &CostParameters, t_save: f64, mode: OverheadMode) -> Result<f64> {
    check_interval(t_save)?;
    match mode {
        OverheadMode::Approximate => Ok(full_over(p, t_save, p.t_total)),
        OverheadMode::SelfConsistent => fixed_point(p, |span| full_over(p, t_save, span)),
    }
}

pub fn partial_overhead_with(p: &CostParameters, t_save: f64, mode: OverheadMode) -> Result<f64> {
    check_interval(t_save)?;
    match mode {
        OverheadMode::Approximate => Ok(partial_over(p, t_save, p.t_total)),
        OverheadMode::SelfConsistent => fixed_point(p, |span| partial_over(p, t_save, span)),
    }
}

/// `sqrt(2 * o_save * t_fail)`, the minimizer of [`full_overhead`].
pub fn optimal_full_interval(p: &CostParameters) -> Result<f64> {
    if !(p.o_save > 0.0) {
        return Err(Error::Degenerate(
            "o_save = 0: the optimal interval is unbounded below".into(),
        ));
    }
    Ok((2.0 * p.o_save * p.t_fail).sqrt())
}

/// Interval whose expected PLS equals `target_pls`: `2 * target * n_emb * t_fail`.
pub fn partial_interval_for_pls(target_pls: f64, n_emb: f64, t_fail: f64) -> Result<f64> {
    if !(target_pls > 0.0 && target_pls <= 1.0) {
        return Err(Error::domain("target_pls", target_pls, "(0, 1]"));
    }
    if !(n_emb > 0.0) {
        return Err(Error::domain("n_emb", n_emb, "> 0"));
    }
    if !(t_fail > 0.0) {
        return Err(Error::domain("t_fail", t_fail, "> 0"));
    }
    Ok(2.0 * target_pls * n_emb * t_fail)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecoveryKind {
    FullRecovery,
    PartialRecovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StrategyDecision {
    pub chosen: RecoveryKind,
    pub interval_hours: f64,
    pub full_interval_hours: f64,
    pub partial_interval_hours: f64,
    pub predicted_overhead_full: f64,
    pub predicted_overhead_partial: f64,
    pub target_pls: f64,
    pub margin_hours: f64,
}

/// Partial recovery at the PLS-derived interval is chosen only when it beats
/// full recovery at its optimal interval by more than `margin` hours.
pub fn choose_strategy(p: &CostParameters, target_pls: f64, margin: f64) -> Result<StrategyDecision> {
    if !(margin >= 0.0) {
        return Err(Error::domain("margin", margin, ">= 0"));
    }
    p.validate()?;
    let full_interval = optimal_full_interval(p)?;
    let partial_interval = partial_interval_for_pls(target_pls, p.effective_n_emb(), p.t_fail)?;
    let full = full_overhead(p, full_interval)?;
    let partial = partial_overhead(p, partial_interval)?;
    let chosen = if partial + margin < full {
        RecoveryKind::PartialRecovery
    } else {
        RecoveryKind::FullRecovery
    };
    Ok(StrategyDecision {
        chosen,
        interval_hours: match chosen {
            RecoveryKind::FullRecovery => full_interval,
            RecoveryKind::PartialRecovery => partial_interval,
        },
        full_interval_hours: full_interval,
        partial_interval_hours: partial_interval,
        predicted_overhead_full: full,
        predicted_overhead_partial: partial,
        target_pls,
        margin_hours: margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalePoint {
    pub nodes: u32,
    pub t_fail: f64,
    pub n_emb: f64,
    pub full_interval: f64,
    pub partial_interval: f64,
    pub overhead_full: f64,
    pub overhead_partial: f64,
}

/// Overheads of both strategies as the job grows.
///
/// Modeling rules: MTBF follows the process's node scaling; the shard count
/// grows in proportion to the node count; `o_save` and `o_res` stay fixed;
/// full recovery reloads every shard (`o_load` fixed) while partial recovery
/// reloads only the failed shards, so its load cost shrinks as
/// `o_load * n_emb(base) / n_emb(n)`.
pub fn scalability_sweep(
    base: &CostParameters,
    process: &FailureProcess,
    nodes: &[u32],
    target_pls: f64,
) -> Result<Vec<ScalePoint>> {
    if nodes.is_empty() {
        return Err(Error::InvalidInput("node range is empty".into()));
    }
    base.validate()?;
    let base_nodes = process.base_nodes as f64;
    nodes
        .iter()
        .map(|&n| {
            let t_fail = mtbf_for_nodes(process, n)?;
            let scale = n as f64 / base_nodes;
            let n_emb = base.n_emb as f64 * scale;
            let at_n = CostParameters { t_fail, ..*base };
            let full_interval = optimal_full_interval(&at_n)?;
            let partial_interval =
                partial_interval_for_pls(target_pls, n_emb / base.shards_per_failure, t_fail)?;
            let partial_params = CostParameters {
                o_load: base.o_load / scale,
                ..at_n
            };
            Ok(ScalePoint {
                nodes: n,
                t_fail,
                n_emb,
                full_interval,
                partial_interval,
                overhead_full: full_overhead(&at_n, full_interval)?,
                overhead_partial: partial_overhead(&partial_params, partial_interval)?,
            })
        })
        .collect()
}

/// Predicted PLS at an interval, re-exported for planners that report both.
pub fn predicted_pls(p: &CostParameters, t_save: f64) -> f64 {
    expected_pls(t_save, p.t_fail, p.effective_n_emb())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::failure::{FailureDistribution, NodeScaling};
    use rand::Rng;

    fn params(o_save: f64, o_load: f64, o_res: f64, t_fail: f64, t_total: f64) -> CostParameters {
        CostParameters::new(o_save, o_load, o_res, t_fail, t_total, 8).unwrap()
    }

    /// Grid-search minimizer of full_overhead over (0, hi].
    fn grid_argmin(p: &CostParameters, hi: f64, step: f64) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut t = step;
        while t <= hi + 1e-12 {
            let o = full_overhead(p, t).unwrap();
            if o < best.0 {
                best = (o, t);
            }
            t += step;
        }
        best.1
    }

    #[test]
    fn full_overhead_hand_evaluation() {
        let p = params(0.5, 0.3, 0.2, 28.0, 56.0);
        // 0.5*56/4.95 + (0.3 + 2.475 + 0.2)*2
        let hand = 0.5 * 56.0 / 4.95 + (0.3 + 4.95 / 2.0 + 0.2) * 2.0;
        let got = full_overhead(&p, 4.95).unwrap();
        assert!((got - hand).abs() < 1e-12);
        assert!((got - 11.6065).abs() < 1e-3);
    }

    #[test]
    fn partial_overhead_drops_lost_term() {
        let p = params(0.5, 0.3, 0.2, 28.0, 56.0);
        let full = full_overhead(&p, 4.95).unwrap();
        let part = partial_overhead(&p, 4.95).unwrap();
        assert!((full - part - 4.95).abs() < 1e-12);
        assert!((part - 6.6565).abs() < 1e-3);
    }

    #[test]
    fn limiting_cases() {
        let p = params(0.0, 0.0, 0.0, 28.0, 56.0);
        assert!((full_overhead(&p, 3.0).unwrap() - 1.5 * 2.0).abs() < 1e-12);
        let p = params(0.5, 0.3, 0.2, 1e12, 56.0);
        assert!((full_overhead(&p, 4.0).unwrap() - 0.5 * 56.0 / 4.0).abs() < 1e-9);
        let p = params(0.5, 0.3, 0.2, 28.0, 56.0);
        assert!((partial_overhead(&p, 1e15).unwrap() - 0.5 * 2.0).abs() < 1e-9);
        let p = params(0.5, 0.0, 0.0, 28.0, 56.0);
        assert!((partial_overhead(&p, 7.0).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_interval_is_domain_error() {
        let p = params(0.5, 0.3, 0.2, 28.0, 56.0);
        assert!(full_overhead(&p, 0.0).is_err());
        assert!(partial_overhead(&p, -1.0).is_err());
    }

    #[test]
    fn optimal_interval_matches_grid_search() {
        let p = params(0.5, 0.3, 0.2, 24.5, 56.0);
        let t = optimal_full_interval(&p).unwrap();
        assert!((t - 24.5f64.sqrt()).abs() < 1e-12);
        assert!((t - 4.95).abs() < 1e-3);
        assert!((grid_argmin(&p, 24.5, 0.001) - t).abs() <= 0.001 + 1e-9);

        let p = params(2.0, 0.3, 0.2, 2.0, 56.0);
        let t = optimal_full_interval(&p).unwrap();
        assert!((t - 8f64.sqrt()).abs() < 1e-12);
        assert!((grid_argmin(&p, 2.0 * 4.0, 0.001) - t).abs() <= 0.001 + 1e-9);
    }

    #[test]
    fn saving_and_lost_terms_balance_at_optimum() {
        let p = params(0.37, 0.1, 0.4, 19.0, 100.0);
        let t = optimal_full_interval(&p).unwrap();
        let saving = p.o_save * p.t_total / t;
        let lost = t / 2.0 * p.t_total / p.t_fail;
        assert!(((saving - lost) / saving).abs() < 1e-9);
    }

    #[test]
    fn zero_save_cost_is_degenerate() {
        let p = params(0.0, 0.3, 0.2, 24.5, 56.0);
        assert!(matches!(optimal_full_interval(&p), Err(Error::Degenerate(_))));
    }

    #[test]
    fn partial_interval_examples() {
        assert!((partial_interval_for_pls(0.1, 18.0, 14.0).unwrap() - 50.4).abs() < 1e-12);
        assert!((partial_interval_for_pls(0.05, 4.0, 28.0).unwrap() - 11.2).abs() < 1e-12);
        assert!(partial_interval_for_pls(0.0, 4.0, 28.0).is_err());
        assert!(partial_interval_for_pls(-0.1, 4.0, 28.0).is_err());
    }

    #[test]
    fn partial_interval_round_trips_expected_pls() {
        let mut rng = crate::rng::rng_from_seed(5);
        for _ in 0..100 {
            let target = rng.random_range(1e-3..1.0);
            let n = rng.random_range(1..64) as f64;
            let tf = rng.random_range(0.5..100.0);
            let t = partial_interval_for_pls(target, n, tf).unwrap();
            let back = expected_pls(t, tf, n);
            assert!(((back - target) / target).abs() < 1e-12);
        }
    }

    #[test]
    fn infinite_margin_forces_full() {
        let p = params(0.1, 0.1, 0.0, 28.0, 56.0);
        let d = choose_strategy(&p, 0.1, f64::INFINITY).unwrap();
        assert_eq!(d.chosen, RecoveryKind::FullRecovery);
        assert_eq!(d.interval_hours, d.full_interval_hours);
    }

    #[test]
    fn frequent_failures_fall_back_to_full() {
        // 40 failures in 56 h, half the shards lost per failure.
        let mut p = params(0.0935, 0.0935, 0.0, 1.4, 56.0);
        p.shards_per_failure = 4.0;
        let d = choose_strategy(&p, 0.02, p.default_margin()).unwrap();
        assert!(d.partial_interval_hours < d.full_interval_hours);
        assert!(d.predicted_overhead_partial > d.predicted_overhead_full);
        assert_eq!(d.chosen, RecoveryKind::FullRecovery);
    }

    #[test]
    fn emulation_like_parameters_choose_partial() {
        let p = params(0.0935, 0.0935, 0.0, 28.0, 56.0);
        let d = choose_strategy(&p, 0.1, p.default_margin()).unwrap();
        assert_eq!(d.chosen, RecoveryKind::PartialRecovery);
        assert!((d.interval_hours - 2.0 * 0.1 * 8.0 * 28.0).abs() < 1e-12);
    }

    #[test]
    fn self_consistent_exceeds_approximation() {
        let p = params(0.5, 0.3, 0.2, 28.0, 56.0);
        let approx = full_overhead(&p, 4.95).unwrap();
        let exact = full_overhead_with(&p, 4.95, OverheadMode::SelfConsistent).unwrap();
        let rate = approx / p.t_total;
        assert!((exact - approx / (1.0 - rate)).abs() < 1e-9);
        let bad = params(5.0, 3.0, 2.0, 1.0, 56.0);
        assert!(full_overhead_with(&bad, 0.1, OverheadMode::SelfConsistent).is_err());
    }

    #[test]
    fn sweep_at_base_matches_point_evaluation() {
        let base = params(0.1, 0.1, 0.05, 28.0, 56.0);
        let process = FailureProcess::new(
            FailureDistribution::Exponential { rate: 1.0 / 28.0 },
            16,
            NodeScaling::LinearMtbf,
        )
        .unwrap();
        let pts = scalability_sweep(&base, &process, &[16], 0.1).unwrap();
        let full = full_overhead(&base, optimal_full_interval(&base).unwrap()).unwrap();
        let part = partial_overhead(
            &base,
            partial_interval_for_pls(0.1, base.effective_n_emb(), base.t_fail).unwrap(),
        )
        .unwrap();
        assert!((pts[0].overhead_full - full).abs() < 1e-12);
        assert!((pts[0].overhead_partial - part).abs() < 1e-12);
        assert!(scalability_sweep(&base, &process, &[], 0.1).is_err());
    }
}
