use std::collections::BTreeMap;

use super::records::{Method, Precision, RunRecord};
use crate::nn::Family;

/// Groups records that differ only by seed.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SummaryKey {
    pub family: Family,
    pub size_label: String,
    pub bits: Precision,
    pub method: Method,
}

/// Seed statistics of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub size_param_count: u64,
    pub seeds: usize,
    pub valid_mean: f64,
    pub valid_std_error: f64,
    pub test_mean: f64,
    /// Sample standard deviation over `sqrt(seeds)`; 0 for a single seed.
    pub test_std_error: f64,
}

fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Averages records over seeds.
pub fn summarize(records: &[RunRecord]) -> BTreeMap<SummaryKey, CellSummary> {
    let mut groups: BTreeMap<SummaryKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = SummaryKey {
            family: r.family,
            size_label: r.size_label.clone(),
            bits: r.bits,
            method: r.method,
        };
        groups.entry(key).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(k, rs)| {
            let valid: Vec<f64> = rs.iter().map(|r| r.valid_error).collect();
            let test: Vec<f64> = rs.iter().map(|r| r.test_error).collect();
            let (valid_mean, valid_std_error) = mean_and_std_error(&valid);
            let (test_mean, test_std_error) = mean_and_std_error(&test);
            let summary = CellSummary {
                size_param_count: rs[0].size_param_count,
                seeds: rs.len(),
                valid_mean,
                valid_std_error,
                test_mean,
                test_std_error,
            };
            (k, summary)
        })
        .collect()
}
