//! Failure-time models: parametric distributions, node-count MTBF scaling,
//! maximum-likelihood fitting and renewal sampling of failure schedules.

mod fit;
mod trace_io;

use std::fmt;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, LogNormal, Weibull};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, stream};

pub use fit::{empirical_survival_rmse, fit_distribution, FittedDistribution};
pub use trace_io::{
    parse_trace, read_trace_file, samples_from_jobs, write_fit_report, FitRow, MtbfCounting,
    TraceRecord,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Gamma,
    Weibull,
    Exponential,
    LogNormal,
    UniformHazard,
}

impl Family {
    /// The families `fit_distribution` accepts.
    pub const FITTABLE: [Family; 4] = [
        Family::Gamma,
        Family::Weibull,
        Family::Exponential,
        Family::LogNormal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::Gamma => "gamma",
            Family::Weibull => "weibull",
            Family::Exponential => "exponential",
            Family::LogNormal => "lognormal",
            Family::UniformHazard => "uniform_hazard",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gamma" => Ok(Family::Gamma),
            "weibull" => Ok(Family::Weibull),
            "exponential" | "exp" => Ok(Family::Exponential),
            "lognormal" | "log_normal" => Ok(Family::LogNormal),
            "uniform_hazard" | "uniform" => Ok(Family::UniformHazard),
            other => Err(Error::InvalidInput(format!("unknown family `{other}`"))),
        }
    }
}

/// A parametric time-to-failure distribution, in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FailureDistribution {
    Gamma { shape: f64, scale: f64 },
    Weibull { shape: f64, scale: f64 },
    Exponential { rate: f64 },
    LogNormal { mu: f64, sigma: f64 },
    /// Constant hazard, `rate` events per hour.
    UniformHazard { rate: f64 },
}

impl FailureDistribution {
    pub fn from_params(family: Family, params: &[f64]) -> Result<Self> {
        let want = match family {
            Family::Gamma | Family::Weibull | Family::LogNormal => 2,
            Family::Exponential | Family::UniformHazard => 1,
        };
        if params.len() != want {
            return Err(Error::InvalidInput(format!(
                "{family} takes {want} parameter(s), got {}",
                params.len()
            )));
        }
        let dist = match family {
            Family::Gamma => FailureDistribution::Gamma {
                shape: params[0],
                scale: params[1],
            },
            Family::Weibull => FailureDistribution::Weibull {
                shape: params[0],
                scale: params[1],
            },
            Family::Exponential => FailureDistribution::Exponential { rate: params[0] },
            Family::LogNormal => FailureDistribution::LogNormal {
                mu: params[0],
                sigma: params[1],
            },
            Family::UniformHazard => FailureDistribution::UniformHazard { rate: params[0] },
        };
        dist.validate()?;
        Ok(dist)
    }

    pub fn family(&self) -> Family {
        match self {
            FailureDistribution::Gamma { .. } => Family::Gamma,
            FailureDistribution::Weibull { .. } => Family::Weibull,
            FailureDistribution::Exponential { .. } => Family::Exponential,
            FailureDistribution::LogNormal { .. } => Family::LogNormal,
            FailureDistribution::UniformHazard { .. } => Family::UniformHazard,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        match *self {
            FailureDistribution::Gamma { shape, scale }
            | FailureDistribution::Weibull { shape, scale } => vec![shape, scale],
            FailureDistribution::Exponential { rate }
            | FailureDistribution::UniformHazard { rate } => vec![rate],
            FailureDistribution::LogNormal { mu, sigma } => vec![mu, sigma],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::domain(name, v, "finite and > 0"))
            }
        };
        match *self {
            FailureDistribution::Gamma { shape, scale }
            | FailureDistribution::Weibull { shape, scale } => {
                positive("shape", shape)?;
                positive("scale", scale)
            }
            FailureDistribution::Exponential { rate }
            | FailureDistribution::UniformHazard { rate } => positive("rate", rate),
            FailureDistribution::LogNormal { mu, sigma } => {
                if !mu.is_finite() {
                    return Err(Error::domain("mu", mu, "finite"));
                }
                positive("sigma", sigma)
            }
        }?;
        let m = self.mean();
        if m.is_finite() && m > 0.0 {
            Ok(())
        } else {
            Err(Error::domain("mean", m, "finite and > 0"))
        }
    }

    /// Mean time to failure.
    pub fn mean(&self) -> f64 {
        match *self {
            FailureDistribution::Gamma { shape, scale } => shape * scale,
            FailureDistribution::Weibull { shape, scale } => scale * gamma(1.0 + 1.0 / shape),
            FailureDistribution::Exponential { rate }
            | FailureDistribution::UniformHazard { rate } => 1.0 / rate,
            FailureDistribution::LogNormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
        }
    }

    /// P(T > t).
    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match *self {
            FailureDistribution::Gamma { shape, scale } => {
                statrs::function::gamma::gamma_ur(shape, t / scale)
            }
            FailureDistribution::Weibull { shape, scale } => (-(t / scale).powf(shape)).exp(),
            FailureDistribution::Exponential { rate }
            | FailureDistribution::UniformHazard { rate } => (-rate * t).exp(),
            FailureDistribution::LogNormal { mu, sigma } => {
                0.5 * statrs::function::erf::erfc((t.ln() - mu) / (sigma * std::f64::consts::SQRT_2))
            }
        }
    }

    /// The same family stretched in time so that its mean is multiplied by `factor`.
    pub fn rescaled(&self, factor: f64) -> Self {
        match *self {
            FailureDistribution::Gamma { shape, scale } => FailureDistribution::Gamma {
                shape,
                scale: scale * factor,
            },
            FailureDistribution::Weibull { shape, scale } => FailureDistribution::Weibull {
                shape,
                scale: scale * factor,
            },
            FailureDistribution::Exponential { rate } => {
                FailureDistribution::Exponential { rate: rate / factor }
            }
            FailureDistribution::UniformHazard { rate } => {
                FailureDistribution::UniformHazard { rate: rate / factor }
            }
            FailureDistribution::LogNormal { mu, sigma } => FailureDistribution::LogNormal {
                mu: mu + factor.ln(),
                sigma,
            },
        }
    }

    fn sampler(&self) -> Result<GapSampler> {
        let bad = |e: &dyn fmt::Display| Error::InvalidInput(format!("distribution: {e}"));
        Ok(match *self {
            FailureDistribution::Gamma { shape, scale } => {
                GapSampler::Gamma(Gamma::new(shape, scale).map_err(|e| bad(&e))?)
            }
            FailureDistribution::Weibull { shape, scale } => {
                GapSampler::Weibull(Weibull::new(scale, shape).map_err(|e| bad(&e))?)
            }
            FailureDistribution::Exponential { rate }
            | FailureDistribution::UniformHazard { rate } => {
                GapSampler::Exp(Exp::new(rate).map_err(|e| bad(&e))?)
            }
            FailureDistribution::LogNormal { mu, sigma } => {
                GapSampler::LogNormal(LogNormal::new(mu, sigma).map_err(|e| bad(&e))?)
            }
        })
    }
}

enum GapSampler {
    Gamma(Gamma<f64>),
    Weibull(Weibull<f64>),
    Exp(Exp<f64>),
    LogNormal(LogNormal<f64>),
}

impl GapSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            GapSampler::Gamma(d) => d.sample(rng),
            GapSampler::Weibull(d) => d.sample(rng),
            GapSampler::Exp(d) => d.sample(rng),
            GapSampler::LogNormal(d) => d.sample(rng),
        }
    }
}

/// How MTBF changes with the number of nodes in a job.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum NodeScaling {
    /// MTBF(n) * n is constant.
    LinearMtbf,
    /// Each node fails independently with probability `p` per `period_hours`;
    /// MTBF(n) = period / (1 - (1 - p)^n).
    IndependentNodes { p: f64, period_hours: f64 },
}

/// Extra hazard early in a run, standing in for configuration errors that
/// kill jobs right after launch. Off unless configured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BurnIn {
    /// Leading fraction of the horizon the multiplier applies to.
    pub fraction: f64,
    /// Hazard multiplier (>= 1) over that window.
    pub multiplier: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureProcess {
    pub distribution: FailureDistribution,
    pub base_nodes: u32,
    pub scaling: NodeScaling,
    #[serde(default)]
    pub burn_in: Option<BurnIn>,
}

impl FailureProcess {
    pub fn new(distribution: FailureDistribution, base_nodes: u32, scaling: NodeScaling) -> Result<Self> {
        let p = FailureProcess {
            distribution,
            base_nodes,
            scaling,
            burn_in: None,
        };
        p.validate()?;
        Ok(p)
    }

    /// Constant-hazard process with the given MTBF and linear node scaling.
    pub fn uniform(mtbf_hours: f64) -> Result<Self> {
        Self::new(
            FailureDistribution::UniformHazard {
                rate: 1.0 / mtbf_hours,
            },
            1,
            NodeScaling::LinearMtbf,
        )
    }

    pub fn with_burn_in(mut self, burn_in: BurnIn) -> Result<Self> {
        if !(0.0..=1.0).contains(&burn_in.fraction) || !(burn_in.multiplier >= 1.0) {
            return Err(Error::InvalidInput(
                "burn-in needs fraction in [0, 1] and multiplier >= 1".into(),
            ));
        }
        self.burn_in = Some(burn_in);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.distribution.validate()?;
        if self.base_nodes == 0 {
            return Err(Error::InvalidInput("base_nodes must be >= 1".into()));
        }
        if let NodeScaling::IndependentNodes { p, period_hours } = self.scaling {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain("p", p, "[0, 1]"));
            }
            if !(period_hours > 0.0) {
                return Err(Error::domain("period_hours", period_hours, "> 0"));
            }
        }
        Ok(())
    }

    /// MTBF at `base_nodes`.
    pub fn mtbf(&self) -> f64 {
        self.distribution.mean()
    }

    /// The same process resized to a job of `n` nodes.
    pub fn for_nodes(&self, n: u32) -> Result<Self> {
        let target = mtbf_for_nodes(self, n)?;
        Ok(FailureProcess {
            distribution: self.distribution.rescaled(target / self.mtbf()),
            base_nodes: n,
            scaling: self.scaling,
            burn_in: self.burn_in,
        })
    }
}

/// MTBF in hours for a job of `n` nodes under the process's scaling rule.
pub fn mtbf_for_nodes(process: &FailureProcess, n: u32) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidInput("node count must be >= 1".into()));
    }
    match process.scaling {
        NodeScaling::LinearMtbf => Ok(process.mtbf() * process.base_nodes as f64 / n as f64),
        NodeScaling::IndependentNodes { p, period_hours } => {
            if p == 0.0 {
                return Err(Error::InfiniteMtbf);
            }
            // 1 - (1-p)^n without cancellation for tiny p
            let any_fails = -((n as f64) * (-p).ln_1p()).exp_m1();
            Ok(period_hours / any_fails)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FailureEvent {
    pub time_hours: f64,
    pub lost_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureTrace {
    pub events: Vec<FailureEvent>,
    pub horizon_hours: f64,
}

impl FailureTrace {
    pub fn empty(horizon_hours: f64) -> Self {
        FailureTrace {
            events: Vec::new(),
            horizon_hours,
        }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Checks ordering, range and fraction invariants.
    pub fn validate(&self) -> Result<()> {
        let mut prev = f64::NEG_INFINITY;
        for e in &self.events {
            if !(e.time_hours > prev) {
                return Err(Error::InvalidInput("trace times not strictly increasing".into()));
            }
            if e.time_hours < 0.0 || e.time_hours > self.horizon_hours {
                return Err(Error::InvalidInput(format!(
                    "event at {} h outside [0, {}]",
                    e.time_hours, self.horizon_hours
                )));
            }
            if !(e.lost_fraction > 0.0 && e.lost_fraction <= 1.0) {
                return Err(Error::domain("lost_fraction", e.lost_fraction, "(0, 1]"));
            }
            prev = e.time_hours;
        }
        Ok(())
    }
}

fn check_fractions(fraction_set: &[f64]) -> Result<()> {
    if fraction_set.is_empty() {
        return Err(Error::InvalidInput("fraction set is empty".into()));
    }
    for &f in fraction_set {
        if !(f > 0.0 && f <= 1.0) {
            return Err(Error::domain("lost_fraction", f, "(0, 1]"));
        }
    }
    Ok(())
}

/// Renewal-process failure schedule: i.i.d. gaps from the process
/// distribution until the horizon, each event clearing a fraction drawn
/// uniformly from `fraction_set`. Deterministic in `seed`.
pub fn sample_failure_schedule(
    process: &FailureProcess,
    horizon_hours: f64,
    fraction_set: &[f64],
    seed: u64,
) -> Result<FailureTrace> {
    check_fractions(fraction_set)?;
    process.validate()?;
    if !(horizon_hours > 0.0) {
        return Ok(FailureTrace::empty(horizon_hours.max(0.0)));
    }
    let mut rng = rng_from_seed(seed);
    let sampler = process.distribution.sampler()?;
    let mut times = Vec::new();
    let mut t = 0.0;
    loop {
        let gap = sampler.sample(&mut rng);
        if !(gap > 0.0) {
            continue;
        }
        t += gap;
        if t > horizon_hours {
            break;
        }
        times.push(t);
    }
    if let Some(b) = process.burn_in {
        // Superpose the excess hazard as a Poisson stream over the window.
        let window = b.fraction * horizon_hours;
        let excess = (b.multiplier - 1.0) / process.mtbf();
        if excess > 0.0 && window > 0.0 {
            let exp = Exp::new(excess).expect("positive rate");
            let mut t = 0.0;
            loop {
                t += exp.sample(&mut rng);
                if t > window {
                    break;
                }
                times.push(t);
            }
            times.sort_by(f64::total_cmp);
            times.dedup();
        }
    }
    let events = times
        .into_iter()
        .map(|time_hours| FailureEvent {
            time_hours,
            lost_fraction: *fraction_set.choose(&mut rng).expect("non-empty"),
        })
        .collect();
    Ok(FailureTrace {
        events,
        horizon_hours,
    })
}

/// Exactly `count` failures placed independently and uniformly over the
/// horizon, the injection scheme used by the 56-hour emulation.
pub fn sample_uniform_failures(
    count: usize,
    horizon_hours: f64,
    fraction_set: &[f64],
    seed: u64,
) -> Result<FailureTrace> {
    check_fractions(fraction_set)?;
    if !(horizon_hours > 0.0) {
        return Ok(FailureTrace::empty(horizon_hours.max(0.0)));
    }
    let mut rng = rng_from_seed(seed);
    let mut times: Vec<f64> = (0..count)
        .map(|_| rng.random_range(0.0..horizon_hours))
        .collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let events = times
        .into_iter()
        .map(|time_hours| FailureEvent {
            time_hours,
            lost_fraction: *fraction_set.choose(&mut rng).expect("non-empty"),
        })
        .collect();
    Ok(FailureTrace {
        events,
        horizon_hours,
    })
}

/// Number of shards a failure clearing `lost_fraction` of `n_emb` shards takes down.
pub fn shards_lost(lost_fraction: f64, n_emb: usize) -> usize {
    ((lost_fraction * n_emb as f64 - 1e-9).ceil() as usize).clamp(1, n_emb)
}

/// The distinct shards hit by failure `index` of a run, ascending. Drawn from
/// their own stream so every strategy sees the same shards for the same run.
pub fn pick_failed_shards(lost_fraction: f64, n_emb: usize, run_seed: u64, index: usize) -> Vec<usize> {
    let mut rng = rng_from_seed(derive_seed(run_seed, stream::FAILED_SHARDS, index as u64));
    let k = shards_lost(lost_fraction, n_emb);
    let mut picked = rand::seq::index::sample(&mut rng, n_emb, k).into_vec();
    picked.sort_unstable();
    picked
}
