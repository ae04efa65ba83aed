//! Positioning error series, summary statistics and ECDF.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::Estimate;
use crate::grid::distance;
use crate::sim::{truth_at, TruthSample};

/// Timestamp matching tolerance between estimates and ground truth, s.
pub const MATCH_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorSeries {
    pub timestamps: Vec<f64>,
    /// 3D Euclidean error per matched estimate, m.
    pub errors: Vec<f64>,
    /// Estimates without a truth sample within tolerance.
    pub unmatched: usize,
}

impl ErrorSeries {
    pub fn len(&self) -> usize {
        self.errors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty()
    }
}

/// `truth` must be sorted by timestamp.
pub fn error_series(estimates: &[Estimate], truth: &[TruthSample]) -> ErrorSeries {
    let mut series = ErrorSeries::default();
    for e in estimates {
        match truth_at(truth, e.timestamp, MATCH_TOLERANCE) {
            Some(x) => {
                series.timestamps.push(e.timestamp);
                series.errors.push(distance(&x, &e.position));
            }
            None => series.unmatched += 1,
        }
    }
    if series.unmatched > 0 {
        log::warn!("{} estimates had no ground truth within {MATCH_TOLERANCE} s", series.unmatched);
    }
    series
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    /// Sample variance, `1/(N-1)`; zero for a single value.
    pub variance: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn summarize(errors: &[f64]) -> Result<StatsSummary> {
    if errors.is_empty() {
        return Err(Error::EmptySeries);
    }
    if let Some(bad) = errors.iter().find(|q| !q.is_finite()) {
        return Err(Error::Parse(format!("non-finite error value {bad}")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    // shifted by the first value so that a constant series is exact
    let shift = sorted[0];
    let offset = sorted.iter().map(|q| q - shift).sum::<f64>() / n;
    let mean = shift + offset;
    let variance = if sorted.len() > 1 {
        sorted.iter().map(|q| (q - shift - offset).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let p50 = percentile(&sorted, 50.0);
    Ok(StatsSummary {
        count: sorted.len(),
        mean,
        median: p50,
        variance,
        sigma1: percentile(&sorted, 68.27),
        sigma2: percentile(&sorted, 95.45),
        sigma3: percentile(&sorted, 99.73),
        p25: percentile(&sorted, 25.0),
        p50,
        p75: percentile(&sorted, 75.0),
    })
}

/// Steps `(q, F(q))` at each distinct value, right-continuous.
pub fn ecdf(errors: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::EmptySeries);
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, q) in sorted.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *q => last.1 = f,
            _ => out.push((*q, f)),
        }
    }
    Ok(out)
}
