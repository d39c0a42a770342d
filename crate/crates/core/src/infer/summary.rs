//! Empirical posterior summaries.

use crate::error::{CoreError, Result};

/// Linear-interpolation empirical quantile (the common "type 7" rule); the
/// even-length median is the midpoint of the two central order statistics.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    assert!(n > 0, "quantile of empty slice");
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let w = h - lo as f64;
    sorted[lo] + w * (sorted[hi] - sorted[lo])
}

/// Median with the midpoint convention for even-length inputs.
pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    quantile(&sorted, 0.5)
}

/// Posterior summary of one scalar parameter.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MarginalSummary {
    pub mean: f64,
    pub median: f64,
    pub sd: f64,
    pub q025: f64,
    pub q50: f64,
    pub q975: f64,
}

pub fn summarize(draws: &[f64]) -> Result<MarginalSummary> {
    if draws.is_empty() {
        return Err(CoreError::InvalidData("no draws to summarize".into()));
    }
    let n = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / n;
    let sd = if draws.len() < 2 {
        0.0
    } else {
        (draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q50 = quantile(&sorted, 0.5);
    Ok(MarginalSummary {
        mean,
        median: q50,
        sd,
        q025: quantile(&sorted, 0.025),
        q50,
        q975: quantile(&sorted, 0.975),
    })
}
