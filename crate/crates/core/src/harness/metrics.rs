use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ErrorStats {
    pub queries: usize,
    /// Mean of `|noisy - true|`.
    pub mean_abs: f64,
    /// Mean of `noisy - true`.
    pub mean_signed: f64,
    /// Share of queries with `|noisy - true| <= 2`.
    pub frac_within_two: f64,
    /// Signed error -> number of queries.
    pub histogram: BTreeMap<i64, u64>,
}

/// Per-query absolute and signed errors averaged over aligned sequences.
///
/// Sums are accumulated as integers so the result does not depend on the
/// order queries were evaluated in.
pub fn error_metrics(true_counts: &[u64], noisy_counts: &[u64]) -> Result<ErrorStats, HarnessError> {
    if true_counts.len() != noisy_counts.len() {
        return Err(HarnessError::LengthMismatch(
            true_counts.len(),
            noisy_counts.len(),
        ));
    }
    if true_counts.is_empty() {
        return Err(HarnessError::Empty);
    }
    let mut abs_sum: i128 = 0;
    let mut signed_sum: i128 = 0;
    let mut within_two = 0usize;
    let mut histogram = BTreeMap::new();
    for (&t, &n) in true_counts.iter().zip(noisy_counts) {
        let err = n as i128 - t as i128;
        abs_sum += err.abs();
        signed_sum += err;
        if err.abs() <= 2 {
            within_two += 1;
        }
        *histogram.entry(err as i64).or_insert(0) += 1;
    }
    let n = true_counts.len() as f64;
    Ok(ErrorStats {
        queries: true_counts.len(),
        mean_abs: abs_sum as f64 / n,
        mean_signed: signed_sum as f64 / n,
        frac_within_two: within_two as f64 / n,
        histogram,
    })
}

/// `1 - |A ∩ B| / |A ∪ B|`; two empty sets are at distance 0.
pub fn jaccard_distance<T: Ord>(a: &BTreeSet<T>, b: &BTreeSet<T>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 0.0;
    }
    let inter = a.intersection(b).count();
    1.0 - inter as f64 / union as f64
}
