//! Plain-text failure traces and the CSV fit report.
//!
//! A trace holds one time-to-failure (hours) per line. A line may carry a
//! leading job id (`job-17 12.5` or `job-17,12.5`) so that repeated failures
//! of one job can be grouped. `#` starts a comment.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Family, FittedDistribution};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub job: Option<String>,
    pub hours: f64,
}

/// Which failures of a multi-failure job enter the sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MtbfCounting {
    /// Time to the first failure of each job.
    #[default]
    FirstFailure,
    /// Every gap between consecutive failures of a job.
    AllFailures,
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceRecord>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .collect();
        let (job, value) = match fields.as_slice() {
            [v] => (None, *v),
            [j, v] => (Some(j.to_string()), *v),
            _ => {
                return Err(Error::InvalidInput(format!(
                    "line {}: expected `hours` or `job hours`",
                    lineno + 1
                )))
            }
        };
        let hours: f64 = value.parse().map_err(|_| {
            Error::InvalidInput(format!("line {}: `{value}` is not a number", lineno + 1))
        })?;
        if !(hours.is_finite() && hours > 0.0) {
            return Err(Error::InvalidInput(format!(
                "line {}: time to failure must be positive",
                lineno + 1
            )));
        }
        out.push(TraceRecord { job, hours });
    }
    Ok(out)
}

pub fn read_trace_file(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = std::fs::read_to_string(path)?;
    let records = parse_trace(&text)?;
    if records.is_empty() {
        return Err(Error::InvalidInput(format!(
            "{} contains no samples",
            path.display()
        )));
    }
    Ok(records)
}

/// Turns trace records into time-to-failure samples.
pub fn samples_from_jobs(records: &[TraceRecord], counting: MtbfCounting) -> Vec<f64> {
    let mut out = Vec::new();
    let mut jobs: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in records {
        match &r.job {
            None => out.push(r.hours),
            Some(j) => jobs.entry(j.as_str()).or_default().push(r.hours),
        }
    }
    for (_, mut times) in jobs {
        times.sort_by(f64::total_cmp);
        match counting {
            MtbfCounting::FirstFailure => out.push(times[0]),
            MtbfCounting::AllFailures => {
                let mut prev = 0.0;
                for t in times {
                    if t > prev {
                        out.push(t - prev);
                    }
                    prev = t;
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct FitRow {
    pub family: Family,
    pub result: std::result::Result<FittedDistribution, String>,
}

#[derive(Serialize)]
struct FitCsvRow {
    family: &'static str,
    param1: Option<f64>,
    param2: Option<f64>,
    survival_rmse: Option<f64>,
    log_likelihood: Option<f64>,
    note: String,
}

/// Writes the fit report sorted by survival RMSE; failed fits go last with
/// their error in the `note` column.
pub fn write_fit_report<W: Write>(out: W, rows: &[FitRow]) -> Result<()> {
    let mut sorted: Vec<&FitRow> = rows.iter().collect();
    sorted.sort_by(|a, b| match (&a.result, &b.result) {
        (Ok(x), Ok(y)) => x.survival_rmse.total_cmp(&y.survival_rmse),
        (Ok(_), Err(_)) => std::cmp::Ordering::Less,
        (Err(_), Ok(_)) => std::cmp::Ordering::Greater,
        (Err(_), Err(_)) => std::cmp::Ordering::Equal,
    });
    let mut w = csv::Writer::from_writer(out);
    for row in sorted {
        let rec = match &row.result {
            Ok(fit) => {
                let p = fit.params();
                FitCsvRow {
                    family: row.family.name(),
                    param1: p.first().copied(),
                    param2: p.get(1).copied(),
                    survival_rmse: Some(fit.survival_rmse),
                    log_likelihood: Some(fit.log_likelihood),
                    note: String::new(),
                }
            }
            Err(msg) => FitCsvRow {
                family: row.family.name(),
                param1: None,
                param2: None,
                survival_rmse: None,
                log_likelihood: None,
                note: msg.clone(),
            },
        };
        w.serialize(rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_job_ids() {
        let text = "# header\n12.5\n\njob-a, 3.0 # first\njob-a 7.0\n";
        let recs = parse_trace(text).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].job, None);
        assert_eq!(recs[2].job.as_deref(), Some("job-a"));
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_trace("abc\n").is_err());
        assert!(parse_trace("-1\n").is_err());
        assert!(parse_trace("a b c\n").is_err());
    }

    #[test]
    fn counting_modes() {
        let recs = parse_trace("j 3\nj 7\nk 5\n2\n").unwrap();
        let mut first = samples_from_jobs(&recs, MtbfCounting::FirstFailure);
        first.sort_by(f64::total_cmp);
        assert_eq!(first, vec![2.0, 3.0, 5.0]);
        let mut all = samples_from_jobs(&recs, MtbfCounting::AllFailures);
        all.sort_by(f64::total_cmp);
        assert_eq!(all, vec![2.0, 3.0, 4.0, 5.0]);
    }
}
