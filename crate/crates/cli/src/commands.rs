use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cpr_core::checkpoint::Strategy;
use cpr_core::cost::{choose_strategy, predicted_pls, scalability_sweep, RecoveryKind};
use cpr_core::failure::{
    fit_distribution, read_trace_file, samples_from_jobs, shards_lost, write_fit_report, Family,
    FailureTrace, FitRow, MtbfCounting,
};
use cpr_core::sim::{
    coupled_auc, monte_carlo, read_runs_csv, run_seed, run_trace, summary_text, Injection,
    MonteCarloSummary, RunRow, SimMode,
};
use cpr_core::stats::{linear_fit, mean, pearson};
use cpr_core::trainer::{generate_dataset, run_failure_experiment};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::output::{write_atomic, write_csv, write_text, RunManifest};

pub struct Context {
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Context {
    fn config(&self, path: Option<&Path>, edit: impl FnOnce(&mut RunConfig)) -> Result<RunConfig> {
        let mut c = RunConfig::load(path)?;
        if let Some(s) = self.seed {
            c.seed = s;
        }
        edit(&mut c);
        c.resolve()
    }
}

pub fn fit_trace(ctx: &Context, trace: &Path, families: &[Family], counting: MtbfCounting) -> Result<()> {
    let records = read_trace_file(trace)
        .map_err(|e| CliError::Input(format!("{}: {e}", trace.display())))?;
    let samples = samples_from_jobs(&records, counting);
    let families = if families.is_empty() {
        Family::FITTABLE.to_vec()
    } else {
        families.to_vec()
    };
    let rows: Vec<FitRow> = families
        .iter()
        .map(|&family| FitRow {
            family,
            result: fit_distribution(&samples, family).map_err(|e| e.to_string()),
        })
        .collect();
    let mut buf = Vec::new();
    write_fit_report(&mut buf, &rows)?;
    let path = ctx.out.join("fit_report.csv");
    write_atomic(&path, |w| Ok(w.write_all(&buf)?))?;
    print!("{}", String::from_utf8_lossy(&buf));
    eprintln!("{} samples; wrote {}", samples.len(), path.display());
    Ok(())
}

pub fn plan(
    ctx: &Context,
    config: Option<&Path>,
    target_pls: Option<f64>,
    margin: Option<f64>,
    print_config: bool,
) -> Result<()> {
    let c = ctx.config(config, |c| {
        if let Some(t) = target_pls {
            c.target_pls = t;
        }
        if margin.is_some() {
            c.margin_hours = margin;
        }
    })?;
    if print_config {
        print!("{}", c.to_toml()?);
        return Ok(());
    }
    let cost = c.cost_parameters()?;
    let d = choose_strategy(&cost, c.target_pls, c.margin())?;
    let pct = |h: f64| 100.0 * h / cost.t_total;
    println!("config hash        {}", c.hash()?);
    println!("target PLS         {}", d.target_pls);
    println!(
        "full recovery      interval {:.4} h, overhead {:.4} h ({:.3}%)",
        d.full_interval_hours,
        d.predicted_overhead_full,
        pct(d.predicted_overhead_full)
    );
    println!(
        "partial recovery   interval {:.4} h, overhead {:.4} h ({:.3}%), expected PLS {:.4}",
        d.partial_interval_hours,
        d.predicted_overhead_partial,
        pct(d.predicted_overhead_partial),
        predicted_pls(&cost, d.partial_interval_hours)
    );
    println!("margin             {:.4} h", d.margin_hours);
    let chosen = match d.chosen {
        RecoveryKind::FullRecovery => "full_recovery",
        RecoveryKind::PartialRecovery => "partial_recovery",
    };
    println!("chosen             {chosen} at {:.4} h", d.interval_hours);
    let path = ctx.out.join("plan.csv");
    write_csv(&path, &[d])?;
    print!("{}", std::fs::read_to_string(&path)?);
    Ok(())
}

fn run_strategies(c: &RunConfig, strategies: &[Strategy]) -> Result<Vec<MonteCarloSummary>> {
    strategies
        .iter()
        .map(|&s| Ok(monte_carlo(&c.sim_config(s, SimMode::Analytic)?, c.n_seeds)?))
        .collect()
}

pub fn simulate(
    ctx: &Context,
    config: Option<&Path>,
    seeds: Option<usize>,
    strategies: &[Strategy],
) -> Result<()> {
    let c = ctx.config(config, |c| {
        if let Some(n) = seeds {
            c.n_seeds = n;
        }
        if !strategies.is_empty() {
            c.strategies = strategies.to_vec();
        }
    })?;
    let rows = run_strategies(&c, &c.strategies)?;
    let runs: Vec<RunRow> = rows.iter().flat_map(|m| m.reports.iter().map(RunRow::from)).collect();
    write_atomic(&ctx.out.join("runs.csv"), |w| Ok(cpr_core::sim::write_runs_csv(w, &runs)?))?;
    let text = format!("config_hash {}\n{}", c.hash()?, summary_text(&rows));
    write_text(&ctx.out.join("summary.txt"), &text)?;
    RunManifest::new("simulate", config, &c, &["runs.csv", "summary.txt"])?.write(&ctx.out)?;
    print!("{text}");
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    TargetPls,
    Failures,
    Nodes,
}

impl std::str::FromStr for SweepAxis {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "target-pls" | "target_pls" => Ok(SweepAxis::TargetPls),
            "failures" => Ok(SweepAxis::Failures),
            "nodes" => Ok(SweepAxis::Nodes),
            _ => Err(format!("unknown axis `{s}` (target-pls, failures, nodes)")),
        }
    }
}

/// One aggregated sweep cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub fraction: Option<f64>,
    pub strategy: Strategy,
    pub interval: f64,
    pub overhead_fraction: f64,
    pub final_pls: f64,
    pub degradation: Option<f64>,
    pub decision: Option<String>,
}

pub const TARGET_PLS_GRID: [f64; 3] = [0.02, 0.1, 0.2];
pub const FAILURE_COUNT_GRID: [usize; 3] = [2, 20, 40];
pub const FRACTION_GRID: [f64; 3] = [0.125, 0.25, 0.5];

pub fn sweep(
    ctx: &Context,
    config: Option<&Path>,
    axis: SweepAxis,
    seeds: Option<usize>,
    coupled_seeds: Option<usize>,
    nodes: &[u32],
) -> Result<()> {
    let c = ctx.config(config, |c| {
        if let Some(n) = seeds {
            c.n_seeds = n;
        }
    })?;
    let rows = match axis {
        SweepAxis::TargetPls => sweep_target_pls(&c, coupled_seeds)?,
        SweepAxis::Failures => sweep_failures(&c)?,
        SweepAxis::Nodes => sweep_nodes(&c, nodes)?,
    };
    let name = match axis {
        SweepAxis::TargetPls => "target_pls",
        SweepAxis::Failures => "failures",
        SweepAxis::Nodes => "nodes",
    };
    let file = format!("sweep_{name}.csv");
    write_csv(&ctx.out.join(&file), &rows)?;
    RunManifest::new(&format!("sweep_{name}"), config, &c, &[&file])?.write(&ctx.out)?;
    print!("{}", sweep_table(&rows));
    Ok(())
}

fn cpr_strategies(c: &RunConfig) -> Vec<Strategy> {
    let s: Vec<Strategy> = c
        .strategies
        .iter()
        .copied()
        .filter(|s| !matches!(s, Strategy::FullRecovery | Strategy::PartialNaive))
        .collect();
    if s.is_empty() {
        vec![Strategy::CprVanilla]
    } else {
        s
    }
}

fn sweep_target_pls(c: &RunConfig, coupled_seeds: Option<usize>) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for pls in TARGET_PLS_GRID {
        let mut cp = c.clone();
        cp.target_pls = pls;
        for s in cpr_strategies(&cp) {
            let mc = monte_carlo(&cp.sim_config(s, SimMode::Analytic)?, cp.n_seeds)?;
            let degradation = match coupled_seeds {
                Some(n) => Some(mean(
                    &train_rows(&cp, &[s], n)?.iter().map(|r| r.degradation).collect::<Vec<_>>(),
                )),
                None => None,
            };
            rows.push(SweepRow {
                axis: "target_pls".into(),
                value: pls,
                fraction: None,
                strategy: s,
                interval: mc.interval_hours,
                overhead_fraction: mc.overhead_fraction.mean,
                final_pls: mc.final_pls.mean,
                degradation,
                decision: None,
            });
        }
    }
    Ok(rows)
}

fn sweep_failures(c: &RunConfig) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for count in FAILURE_COUNT_GRID {
        for f in FRACTION_GRID {
            let mut cf = c.clone();
            cf.failures.injection = Injection::FixedCount { count };
            cf.cost.t_fail = cf.cost.t_total / count as f64;
            cf.fraction_set = vec![f];
            cf.cost.shards_per_failure = Some(shards_lost(f, cf.cost.n_emb as usize) as f64);
            let decision = choose_strategy(&cf.cost_parameters()?, cf.target_pls, cf.margin())?;
            let chosen = match decision.chosen {
                RecoveryKind::FullRecovery => "full_recovery",
                RecoveryKind::PartialRecovery => "partial_recovery",
            };
            for s in [Strategy::FullRecovery, Strategy::CprVanilla] {
                let mc = monte_carlo(&cf.sim_config(s, SimMode::Analytic)?, cf.n_seeds)?;
                rows.push(SweepRow {
                    axis: "failures".into(),
                    value: count as f64,
                    fraction: Some(f),
                    strategy: s,
                    interval: mc.interval_hours,
                    overhead_fraction: mc.overhead_fraction.mean,
                    final_pls: mc.final_pls.mean,
                    degradation: None,
                    decision: Some(chosen.into()),
                });
            }
        }
    }
    Ok(rows)
}

fn sweep_nodes(c: &RunConfig, nodes: &[u32]) -> Result<Vec<SweepRow>> {
    let base = c.failures.process.base_nodes.max(1);
    let nodes: Vec<u32> = if nodes.is_empty() {
        (0..7).map(|k| base << k).collect()
    } else {
        nodes.to_vec()
    };
    let cost = c.cost_parameters()?;
    let points = scalability_sweep(&cost, &c.failures.process, &nodes, c.target_pls)?;
    let mut rows = Vec::new();
    for p in points {
        for (s, interval, over, pls) in [
            (Strategy::FullRecovery, p.full_interval, p.overhead_full, 0.0),
            (Strategy::CprVanilla, p.partial_interval, p.overhead_partial, c.target_pls),
        ] {
            rows.push(SweepRow {
                axis: "nodes".into(),
                value: p.nodes as f64,
                fraction: None,
                strategy: s,
                interval,
                overhead_fraction: over / cost.t_total,
                final_pls: pls,
                degradation: None,
                decision: None,
            });
        }
    }
    Ok(rows)
}

fn sweep_table(rows: &[SweepRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<10} {:>8} {:>8} {:<14} {:>9} {:>9} {:>8} {:>11} {}",
        "axis", "value", "fraction", "strategy", "interval", "overhead", "pls", "degradation", "decision"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<10} {:>8} {:>8} {:<14} {:>9.3} {:>8.3}% {:>8.4} {:>11} {}",
            r.axis,
            r.value,
            r.fraction.map(|f| f.to_string()).unwrap_or_default(),
            r.strategy.name(),
            r.interval,
            100.0 * r.overhead_fraction,
            r.final_pls,
            r.degradation.map(|d| format!("{d:.5}")).unwrap_or_default(),
            r.decision.as_deref().unwrap_or(""),
        );
    }
    s
}

/// One coupled training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub seed: u64,
    pub strategy: Strategy,
    pub interval: f64,
    pub overhead_fraction: f64,
    pub final_pls: f64,
    pub auc: f64,
    pub baseline_auc: f64,
    /// `baseline_auc - auc`.
    pub degradation: f64,
}

/// Trains `n` seeds per strategy; every strategy of a seed shares the data,
/// the initialization and the failure trace.
fn train_rows(c: &RunConfig, strategies: &[Strategy], n: usize) -> Result<Vec<TrainRow>> {
    let configs = strategies
        .iter()
        .map(|&s| c.sim_config(s, SimMode::Coupled))
        .collect::<Result<Vec<_>>>()?;
    let per_seed = (0..n)
        .into_par_iter()
        .map(|i| -> Result<Vec<TrainRow>> {
            let seed = run_seed(c.seed, i);
            let data = generate_dataset(&c.trainer.data, seed)?;
            let baseline = {
                let policy = c.trainer.policy(Strategy::PartialNaive, c.cost.t_total);
                let free = FailureTrace::empty(c.cost.t_total);
                run_failure_experiment(&policy, &free, &c.trainer, &data, seed)?.metrics.auc
            };
            let trace = configs[0].failure_trace(seed)?;
            configs
                .iter()
                .map(|sc| {
                    let report = run_trace(sc, &trace, seed)?;
                    let auc = coupled_auc(sc, &trace, &data, seed)?;
                    Ok(TrainRow {
                        seed,
                        strategy: sc.policy.strategy,
                        interval: sc.policy.t_save,
                        overhead_fraction: report.overhead_fraction,
                        final_pls: report.final_pls,
                        auc,
                        baseline_auc: baseline,
                        degradation: baseline - auc,
                    })
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_seed.into_iter().flatten().collect())
}

pub fn train(ctx: &Context, config: Option<&Path>, seeds: usize, strategies: &[Strategy]) -> Result<()> {
    if seeds == 0 {
        return Err(CliError::Input("--seeds must be >= 1".into()));
    }
    let c = ctx.config(config, |c| {
        if !strategies.is_empty() {
            c.strategies = strategies.to_vec();
        }
    })?;
    let rows = train_rows(&c, &c.strategies, seeds)?;
    write_csv(&ctx.out.join("train.csv"), &rows)?;
    RunManifest::new("train", config, &c, &["train.csv"])?.write(&ctx.out)?;
    print!("{}", accuracy_table(&rows));
    Ok(())
}

fn accuracy_table(rows: &[TrainRow]) -> String {
    let mut groups: BTreeMap<Strategy, Vec<&TrainRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.strategy).or_default().push(r);
    }
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>5} {:>9} {:>8} {:>8} {:>11} {:>9}",
        "strategy", "runs", "overhead", "pls", "auc", "degradation", "slope"
    );
    for (strategy, g) in &groups {
        let pick = |f: fn(&TrainRow) -> f64| -> Vec<f64> { g.iter().map(|r| f(r)).collect() };
        let pls = pick(|r| r.final_pls);
        let deg = pick(|r| r.degradation);
        let slope = linear_fit(&pls, &deg).map(|(_, b)| format!("{b:.5}")).unwrap_or_else(|_| "-".into());
        let _ = writeln!(
            s,
            "{:<14} {:>5} {:>8.3}% {:>8.4} {:>8.4} {:>11.5} {:>9}",
            strategy.name(),
            g.len(),
            100.0 * mean(&pick(|r| r.overhead_fraction)),
            mean(&pls),
            mean(&pick(|r| r.auc)),
            mean(&deg),
            slope
        );
    }
    let partial: Vec<&TrainRow> = rows
        .iter()
        .filter(|r| r.strategy != Strategy::FullRecovery)
        .collect();
    let x: Vec<f64> = partial.iter().map(|r| r.final_pls).collect();
    let y: Vec<f64> = partial.iter().map(|r| r.degradation).collect();
    if let Ok(r) = pearson(&x, &y) {
        let _ = writeln!(s, "corr(PLS, degradation) over partial runs: {r:.4}");
    }
    s
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?)
}

pub fn report(ctx: &Context, dir: &Path) -> Result<()> {
    if !dir.is_dir() {
        return Err(CliError::Input(format!("{} is not a directory", dir.display())));
    }
    let mut text = String::new();
    let mut found = 0;
    let runs = dir.join("runs.csv");
    if runs.is_file() {
        let rows = read_runs_csv(std::fs::File::open(&runs)?)?;
        text += &format!("== overhead breakdown ({})\n", runs.display());
        text += &overhead_table(&rows);
        found += 1;
    }
    let train = dir.join("train.csv");
    if train.is_file() {
        let rows: Vec<TrainRow> = read_csv(&train)?;
        if !rows.is_empty() {
            text += &format!("\n== accuracy vs PLS ({})\n", train.display());
            text += &accuracy_table(&rows);
            found += 1;
        }
    }
    let mut sweeps: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("sweep_") && n.ends_with(".csv"))
        })
        .collect();
    sweeps.sort();
    for p in sweeps {
        let rows: Vec<SweepRow> = read_csv(&p)?;
        if !rows.is_empty() {
            text += &format!("\n== sweep ({})\n", p.display());
            text += &sweep_table(&rows);
            found += 1;
        }
    }
    if found == 0 {
        return Err(CliError::Input(format!(
            "no runs.csv, train.csv or sweep_*.csv with rows in {}",
            dir.display()
        )));
    }
    write_text(&ctx.out.join("report.txt"), &text)?;
    print!("{text}");
    Ok(())
}

fn overhead_table(rows: &[RunRow]) -> String {
    let mut groups: BTreeMap<Strategy, Vec<&RunRow>> = BTreeMap::new();
    for r in rows {
        groups.entry(r.strategy).or_default().push(r);
    }
    let full = groups
        .get(&Strategy::FullRecovery)
        .map(|g| mean(&g.iter().map(|r| r.overhead_fraction).collect::<Vec<_>>()));
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<14} {:>6} {:>8} {:>8} {:>8} {:>8} {:>9} {:>8} {:>10}",
        "strategy", "runs", "save_h", "load_h", "lost_h", "res_h", "overhead", "pls", "vs_full"
    );
    for (strategy, g) in &groups {
        let m = |f: fn(&RunRow) -> f64| mean(&g.iter().map(|r| f(r)).collect::<Vec<_>>());
        let over = m(|r| r.overhead_fraction);
        let _ = writeln!(
            s,
            "{:<14} {:>6} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.3}% {:>8.4} {:>10}",
            strategy.name(),
            g.len(),
            m(|r| r.save_hours),
            m(|r| r.load_hours),
            m(|r| r.lost_hours),
            m(|r| r.reschedule_hours),
            100.0 * over,
            m(|r| r.final_pls),
            full.map(|f| format!("{:+.1}%", 100.0 * (over - f) / f)).unwrap_or_default(),
        );
    }
    s
}
