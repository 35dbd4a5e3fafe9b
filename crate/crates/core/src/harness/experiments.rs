use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use super::metrics::{error_metrics, jaccard_distance, ErrorStats};
use super::synthetic::{ExpectedCell, SyntheticData};
use super::HarnessError;
use crate::engine::{apply_threshold, compute_noisy_count, top_k, PrivacyParams};
use crate::noise::{NoiseParams, StatType};
use crate::store::Store;

pub const DEFAULT_EPSILONS: [f64; 7] = [0.1, 0.3, 0.5, 1.0, 2.0, 3.0, 5.0];
pub const THRESHOLD_EPSILONS: [f64; 3] = [0.1, 0.5, 1.0];
pub const TOPN_EPSILONS: [f64; 4] = [0.1, 0.5, 1.0, 3.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ExperimentName {
    EpsilonSweep,
    ThresholdSweep,
    TopN,
}

impl ExperimentName {
    pub const ALL: [ExperimentName; 3] = [Self::EpsilonSweep, Self::ThresholdSweep, Self::TopN];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::EpsilonSweep => "epsilon-sweep",
            Self::ThresholdSweep => "threshold-sweep",
            Self::TopN => "topn",
        }
    }
}

impl fmt::Display for ExperimentName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentName {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| HarnessError::UnknownExperiment(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// Overrides each experiment's own epsilon grid when set.
    pub epsilons: Option<Vec<f64>>,
    pub tau_max: u64,
    pub n_max: usize,
    pub k_max: usize,
    /// Top-n only scores groups with strictly more values than this.
    pub topn_min_values: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            epsilons: None,
            tau_max: 10,
            n_max: 10,
            k_max: 100,
            topn_min_values: 10,
        }
    }
}

impl ExperimentConfig {
    fn grid(&self, default: &[f64]) -> Vec<f64> {
        self.epsilons.clone().unwrap_or_else(|| default.to_vec())
    }
}

/// A rendered result table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CsvTable {
    pub file_name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    fn new(name: ExperimentName, header: &[&str]) -> Self {
        Self {
            file_name: format!("{name}.csv"),
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn write(&self, w: impl Write) -> Result<(), HarnessError> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for row in &self.rows {
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }

    /// Column `name` of every row, parsed as a float.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.header.iter().position(|h| h == name)?;
        self.rows.iter().map(|r| r[idx].parse().ok()).collect()
    }
}

fn real(x: f64) -> String {
    format!("{x:.6}")
}

fn params_at(base: &PrivacyParams, epsilon: f64, tau: u64) -> Result<PrivacyParams, HarnessError> {
    let noise = base
        .noise
        .with_epsilon(epsilon)
        .map_err(crate::engine::EngineError::from)?;
    Ok(base.map_noise(noise).with_tau(tau))
}

/// Noisy count of every synthetic cell over the day, in cell order.
fn noisy_counts(
    params: &PrivacyParams<NoiseParams>,
    cells: &[ExpectedCell],
    store: &Store,
) -> Result<Vec<u64>, HarnessError> {
    let range = SyntheticData::range();
    cells
        .par_iter()
        .map(|c| {
            compute_noisy_count(params, c.stat, &c.entity, &c.attr, &c.value, range, store)
                .map(|a| a.value)
                .map_err(HarnessError::from)
        })
        .collect()
}

/// Error statistics of all cells at one `(epsilon, tau)`.
pub fn error_run(
    base: &PrivacyParams,
    epsilon: f64,
    tau: u64,
    data: &SyntheticData,
    store: &Store,
) -> Result<ErrorStats, HarnessError> {
    let params = params_at(base, epsilon, tau)?;
    let truth: Vec<u64> = data.cells.iter().map(|c| c.count).collect();
    error_metrics(&truth, &noisy_counts(&params, &data.cells, store)?)
}

/// Jaccard distances of one `(entity, attr)` group for `n = 1..=n_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct TopNQuery {
    pub entity: String,
    pub attr: String,
    pub values: usize,
    pub distances: Vec<f64>,
}

/// (entity, stat, attribute) of one top-n query.
type GroupKey<'a> = (&'a str, StatType, &'a str);

/// Scores noisy top-n against true top-n for every group with more than
/// `min_values` values. One `top_k` call at `k_max` per group serves every
/// `n`, since smaller results are prefixes of larger ones.
pub fn topn_distances(
    base: &PrivacyParams,
    epsilon: f64,
    config: &ExperimentConfig,
    min_values: usize,
    data: &SyntheticData,
    store: &Store,
) -> Result<Vec<TopNQuery>, HarnessError> {
    let params = params_at(base, epsilon, 0)?;
    let range = SyntheticData::range();
    let mut groups: BTreeMap<GroupKey<'_>, Vec<(&str, u64)>> = BTreeMap::new();
    for c in &data.cells {
        groups
            .entry((&c.entity, c.stat, &c.attr))
            .or_default()
            .push((&c.value, c.count));
    }
    let groups: Vec<_> = groups
        .into_iter()
        .filter(|(_, vals)| vals.len() > min_values)
        .collect();

    groups
        .par_iter()
        .map(|((entity, stat, attr), vals)| {
            let mut truth = vals.clone();
            truth.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            let noisy = top_k(
                &params,
                *stat,
                entity,
                attr,
                range,
                config.k_max,
                config.k_max,
                store,
            )?;
            let distances = (1..=config.n_max)
                .map(|n| {
                    let t: BTreeSet<&str> = truth.iter().take(n).map(|(v, _)| *v).collect();
                    let p: BTreeSet<&str> = noisy.entries.iter().take(n).map(|r| r.value.as_str()).collect();
                    jaccard_distance(&t, &p)
                })
                .collect();
            Ok(TopNQuery {
                entity: entity.to_string(),
                attr: attr.to_string(),
                values: vals.len(),
                distances,
            })
        })
        .collect()
}

/// Runs one experiment over a synthetic data set. `base` supplies the secret
/// and time hierarchy; epsilon and tau are set by the sweep.
pub fn run_experiment(
    name: ExperimentName,
    config: &ExperimentConfig,
    base: &PrivacyParams,
    data: &SyntheticData,
    store: &Store,
) -> Result<CsvTable, HarnessError> {
    match name {
        ExperimentName::EpsilonSweep => {
            let mut table = CsvTable::new(name, &["epsilon", "meanAbs", "meanSigned", "fracWithinTwo"]);
            for eps in config.grid(&DEFAULT_EPSILONS) {
                let s = error_run(base, eps, 0, data, store)?;
                table.rows.push(vec![
                    eps.to_string(),
                    real(s.mean_abs),
                    real(s.mean_signed),
                    real(s.frac_within_two),
                ]);
            }
            Ok(table)
        }
        ExperimentName::ThresholdSweep => {
            let mut table = CsvTable::new(
                name,
                &[
                    "epsilon",
                    "tau",
                    "meanAbs",
                    "meanSigned",
                    "fracWithinTwo",
                    "suppressed",
                ],
            );
            let truth: Vec<u64> = data.cells.iter().map(|c| c.count).collect();
            for eps in config.grid(&THRESHOLD_EPSILONS) {
                let unthresholded = noisy_counts(&params_at(base, eps, 0)?, &data.cells, store)?;
                for tau in 0..=config.tau_max {
                    let mut suppressed = 0u64;
                    let noisy: Vec<u64> = unthresholded
                        .iter()
                        .map(|&sum| {
                            let (v, hidden) = apply_threshold(sum, tau);
                            suppressed += u64::from(hidden);
                            v
                        })
                        .collect();
                    let s = error_metrics(&truth, &noisy)?;
                    table.rows.push(vec![
                        eps.to_string(),
                        tau.to_string(),
                        real(s.mean_abs),
                        real(s.mean_signed),
                        real(s.frac_within_two),
                        suppressed.to_string(),
                    ]);
                }
            }
            Ok(table)
        }
        ExperimentName::TopN => {
            let mut table = CsvTable::new(name, &["epsilon", "n", "queries", "meanJaccard"]);
            for eps in config.grid(&TOPN_EPSILONS) {
                let queries = topn_distances(base, eps, config, config.topn_min_values, data, store)?;
                for n in 1..=config.n_max {
                    let mean = if queries.is_empty() {
                        0.0
                    } else {
                        queries.iter().map(|q| q.distances[n - 1]).sum::<f64>() / queries.len() as f64
                    };
                    table.rows.push(vec![
                        eps.to_string(),
                        n.to_string(),
                        queries.len().to_string(),
                        real(mean),
                    ]);
                }
            }
            Ok(table)
        }
    }
}
