use serde::Serialize;
use statrs::function::gamma::{digamma, ln_gamma};

use super::{Family, FailureDistribution};
use crate::error::{Error, Result};

/// Convergence tolerance on the log-likelihood for the iterative fits.
const LOGLIK_TOL: f64 = 1e-8;
const MAX_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FittedDistribution {
    pub distribution: FailureDistribution,
    pub survival_rmse: f64,
    pub log_likelihood: f64,
}

impl FittedDistribution {
    pub fn family(&self) -> Family {
        self.distribution.family()
    }

    pub fn params(&self) -> Vec<f64> {
        self.distribution.params()
    }
}

/// Maximum-likelihood fit of `family` to time-to-failure samples (hours),
/// scored by RMSE against the empirical survival curve at the sorted samples.
pub fn fit_distribution(samples: &[f64], family: Family) -> Result<FittedDistribution> {
    if family == Family::UniformHazard {
        return Err(Error::InvalidInput(
            "uniform_hazard is a simulation family and cannot be fitted".into(),
        ));
    }
    if let Some(bad) = samples.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "time-to-failure samples must be positive, got {bad}"
        )));
    }
    if samples.len() < 3 {
        return Err(Error::FitFailure {
            family,
            reason: format!("need at least 3 samples, got {}", samples.len()),
        });
    }
    let first = samples[0];
    if samples.iter().all(|&x| x == first) {
        return Err(Error::FitFailure {
            family,
            reason: "all samples identical".into(),
        });
    }

    let logs: Vec<f64> = samples.iter().map(|x| x.ln()).collect();
    let (distribution, log_likelihood) = match family {
        Family::Exponential => fit_exponential(samples),
        Family::LogNormal => fit_lognormal(&logs),
        Family::Gamma => fit_gamma(samples, &logs)?,
        Family::Weibull => fit_weibull(samples, &logs)?,
        Family::UniformHazard => unreachable!(),
    };
    distribution.validate().map_err(|e| Error::FitFailure {
        family,
        reason: e.to_string(),
    })?;
    Ok(FittedDistribution {
        distribution,
        survival_rmse: empirical_survival_rmse(samples, &distribution),
        log_likelihood,
    })
}

/// RMSE between `dist`'s survival function and the empirical step survival
/// curve S(t) = #{x > t} / n, evaluated at every sorted sample point.
pub fn empirical_survival_rmse(samples: &[f64], dist: &FailureDistribution) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mut sse = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && sorted[j] == sorted[i] {
            j += 1;
        }
        let emp = (n - j) as f64 / n as f64;
        let err = dist.survival(sorted[i]) - emp;
        sse += err * err * (j - i) as f64;
        i = j;
    }
    (sse / n as f64).sqrt()
}

fn fit_exponential(xs: &[f64]) -> (FailureDistribution, f64) {
    let n = xs.len() as f64;
    let sum: f64 = xs.iter().sum();
    let rate = n / sum;
    (
        FailureDistribution::Exponential { rate },
        n * rate.ln() - rate * sum,
    )
}

fn fit_lognormal(logs: &[f64]) -> (FailureDistribution, f64) {
    let n = logs.len() as f64;
    let mu = logs.iter().sum::<f64>() / n;
    let var = logs.iter().map(|y| (y - mu) * (y - mu)).sum::<f64>() / n;
    let sigma = var.sqrt();
    let ll = -logs.iter().sum::<f64>()
        - n * sigma.ln()
        - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
        - 0.5 * n;
    (FailureDistribution::LogNormal { mu, sigma }, ll)
}

fn gamma_loglik(shape: f64, scale: f64, n: f64, sum: f64, sum_log: f64) -> f64 {
    (shape - 1.0) * sum_log - sum / scale - n * shape * scale.ln() - n * ln_gamma(shape)
}

/// Trigamma via recurrence up to x >= 10 then the asymptotic series.
pub(crate) fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 10.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let x2 = 1.0 / (x * x);
    acc + 1.0 / x
        + x2 / 2.0
        + (1.0 / x) * x2 * (1.0 / 6.0 - x2 * (1.0 / 30.0 - x2 * (1.0 / 42.0 - x2 / 30.0)))
}

fn fit_gamma(xs: &[f64], logs: &[f64]) -> Result<(FailureDistribution, f64)> {
    let n = xs.len() as f64;
    let sum: f64 = xs.iter().sum();
    let sum_log: f64 = logs.iter().sum();
    let mean = sum / n;
    let s = mean.ln() - sum_log / n;
    if !(s > 0.0) {
        return Err(Error::FitFailure {
            family: Family::Gamma,
            reason: "sample has no spread in log space".into(),
        });
    }
    // Minka's starting point, then Newton on ln k - psi(k) = s.
    let mut k = (3.0 - s + ((s - 3.0).powi(2) + 24.0 * s).sqrt()) / (12.0 * s);
    let mut ll = gamma_loglik(k, mean / k, n, sum, sum_log);
    for _ in 0..MAX_ITERS {
        let f = k.ln() - digamma(k) - s;
        let df = 1.0 / k - trigamma(k);
        let mut next = k - f / df;
        if !(next > 0.0) || !next.is_finite() {
            next = k / 2.0;
        }
        let next_ll = gamma_loglik(next, mean / next, n, sum, sum_log);
        let done = (next_ll - ll).abs() < LOGLIK_TOL && ((next - k) / k).abs() < 1e-10;
        k = next;
        ll = next_ll;
        if done {
            break;
        }
    }
    Ok((
        FailureDistribution::Gamma {
            shape: k,
            scale: mean / k,
        },
        ll,
    ))
}

struct WeibullSums {
    /// (1/n) sum exp(k (y - ymax))
    m0: f64,
    /// weighted mean of y
    wy: f64,
    /// weighted mean of y^2
    wyy: f64,
}

fn weibull_sums(logs: &[f64], ymax: f64, k: f64) -> WeibullSums {
    let (mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0);
    for &y in logs {
        let w = (k * (y - ymax)).exp();
        s0 += w;
        s1 += w * y;
        s2 += w * y * y;
    }
    WeibullSums {
        m0: s0 / logs.len() as f64,
        wy: s1 / s0,
        wyy: s2 / s0,
    }
}

fn weibull_loglik(k: f64, logs: &[f64], ymax: f64) -> (f64, f64) {
    let n = logs.len() as f64;
    let sums = weibull_sums(logs, ymax, k);
    // ln(lambda) = ymax + ln(m0) / k
    let ln_scale = ymax + sums.m0.ln() / k;
    let sum_log: f64 = logs.iter().sum();
    // sum (x/lambda)^k == n exactly at the profile optimum for lambda
    let ll = n * k.ln() - n * k * ln_scale + (k - 1.0) * sum_log - n;
    (ll, ln_scale)
}

fn fit_weibull(_xs: &[f64], logs: &[f64]) -> Result<(FailureDistribution, f64)> {
    let n = logs.len() as f64;
    let ymean = logs.iter().sum::<f64>() / n;
    let ymax = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ysd = (logs.iter().map(|y| (y - ymean).powi(2)).sum::<f64>() / n).sqrt();
    if !(ysd > 0.0) {
        return Err(Error::FitFailure {
            family: Family::Weibull,
            reason: "sample has no spread in log space".into(),
        });
    }
    // Profile score h(k) = wy - 1/k - ymean is increasing in k.
    let h = |k: f64| {
        let s = weibull_sums(logs, ymax, k);
        (s.wy - 1.0 / k - ymean, s.wyy - s.wy * s.wy + 1.0 / (k * k))
    };
    let mut lo = 1e-3;
    let mut hi = 1.0;
    while h(hi).0 < 0.0 {
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::FitFailure {
                family: Family::Weibull,
                reason: "shape diverged".into(),
            });
        }
    }
    let mut k = (std::f64::consts::PI / (6f64.sqrt() * ysd)).clamp(lo, hi);
    let mut ll = weibull_loglik(k, logs, ymax).0;
    for _ in 0..MAX_ITERS {
        let (f, df) = h(k);
        if f < 0.0 {
            lo = k;
        } else {
            hi = k;
        }
        let mut next = k - f / df;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        let next_ll = weibull_loglik(next, logs, ymax).0;
        let done = (next_ll - ll).abs() < LOGLIK_TOL && ((next - k) / k).abs() < 1e-10;
        k = next;
        ll = next_ll;
        if done {
            break;
        }
    }
    let (ll, ln_scale) = weibull_loglik(k, logs, ymax);
    Ok((
        FailureDistribution::Weibull {
            shape: k,
            scale: ln_scale.exp(),
        },
        ll,
    ))
}
