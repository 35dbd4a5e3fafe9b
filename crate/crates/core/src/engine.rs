//! Privacy mechanism: canonical noisy counts, hierarchical range answers,
//! entity-hierarchy recursion, small-count suppression and top-k.

use std::cmp::Reverse;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::noise::{CanonicalQuery, NoiseError, NoiseParams, NoiseSource, StatType};
use crate::store::{Store, StoreError, TOTAL_ATTR, TOTAL_VALUE};
use crate::timegrid::{minimal_partition, AtomicTimeRange, Level, TimeError, TimeHierarchy, TimeRange};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error("store granularity {store} is coarser than the hierarchy's finest level {hierarchy}")]
    GranularityMismatch { store: Level, hierarchy: Level },
    #[error("top-k needs 1 <= kMax and k <= kMax (k = {k}, kMax = {k_max})")]
    InvalidTopK { k: usize, k_max: usize },
    #[error("budget dimensions must all be at least 1")]
    BadBudgetDims,
}

/// Everything the mechanism needs besides the data.
#[derive(Debug, Clone)]
pub struct PrivacyParams<N = NoiseParams> {
    pub noise: N,
    /// Noisy counts below this are reported as zero.
    pub tau: u64,
    /// Parents with at most this many children report the sum of their children.
    pub l: usize,
    pub hierarchy: TimeHierarchy,
    /// When false, undivided totals are served exactly and only breakdowns get noise.
    pub noisy_totals: bool,
}

impl<N> PrivacyParams<N> {
    pub fn new(noise: N, hierarchy: TimeHierarchy) -> Self {
        Self {
            noise,
            tau: 0,
            l: 0,
            hierarchy,
            noisy_totals: false,
        }
    }

    pub fn with_tau(mut self, tau: u64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_l(mut self, l: usize) -> Self {
        self.l = l;
        self
    }

    pub fn with_noisy_totals(mut self, noisy_totals: bool) -> Self {
        self.noisy_totals = noisy_totals;
        self
    }

    /// Same settings with a different noise source.
    pub fn map_noise<M>(&self, noise: M) -> PrivacyParams<M> {
        PrivacyParams {
            noise,
            tau: self.tau,
            l: self.l,
            hierarchy: self.hierarchy.clone(),
            noisy_totals: self.noisy_totals,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NoisyAnswer {
    pub value: u64,
    /// A positive noisy count fell below the threshold and was zeroed.
    pub suppressed: bool,
    pub partition_size: usize,
    /// Children summed instead of answering directly; 0 if none.
    pub entity_fanout: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedValue {
    pub value: String,
    pub answer: NoisyAnswer,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TopK {
    pub entries: Vec<RankedValue>,
    /// Candidates dropped because their noisy count was suppressed.
    pub suppressed: usize,
    pub partition_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BudgetDims {
    pub n_attr: u32,
    pub n_time: u32,
    pub n_ent: u32,
}

impl BudgetDims {
    pub fn new(n_attr: u32, n_time: u32, n_ent: u32) -> Result<Self, EngineError> {
        let dims = Self {
            n_attr,
            n_time,
            n_ent,
        };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.n_attr == 0 || self.n_time == 0 || self.n_ent == 0 {
            return Err(EngineError::BadBudgetDims);
        }
        Ok(())
    }
}

/// Worst-case event-level privacy loss when every canonical query is answered.
pub fn privacy_loss_bound(dims: BudgetDims, epsilon: f64) -> f64 {
    f64::from(dims.n_attr) * f64::from(dims.n_time) * f64::from(dims.n_ent) * epsilon
}

/// `max(trueCount + noise, 0)` for one canonical query.
pub fn canonical_noisy_count<N: NoiseSource>(
    params: &PrivacyParams<N>,
    q: &CanonicalQuery<'_>,
    store: &Store,
) -> Result<u64, EngineError> {
    q.validate()?;
    let true_count = store.true_count(q.stat, q.entity, q.attr, q.value, &q.range)?;
    let noise = params.noise.noise(q)?;
    Ok((i128::from(true_count) + i128::from(noise)).max(0) as u64)
}

fn check_inputs<N>(params: &PrivacyParams<N>, range: TimeRange, store: &Store) -> Result<(), EngineError> {
    if store.finest() > params.hierarchy.finest() {
        return Err(EngineError::GranularityMismatch {
            store: store.finest(),
            hierarchy: params.hierarchy.finest(),
        });
    }
    range.check_aligned(&params.hierarchy)?;
    Ok(())
}

/// Noisy count for an arbitrary aligned range.
///
/// A parent with between 1 and `l` children answers with the sum of its
/// children's answers and is not thresholded again. Everything else sums
/// canonical noisy counts over the minimal atomic partition of the range and
/// zeroes the result if it falls below `tau`.
pub fn compute_noisy_count<N: NoiseSource>(
    params: &PrivacyParams<N>,
    stat: StatType,
    entity: &str,
    attr: &str,
    value: &str,
    range: TimeRange,
    store: &Store,
) -> Result<NoisyAnswer, EngineError> {
    check_inputs(params, range, store)?;
    let parts = minimal_partition(range, &params.hierarchy)?;
    noisy_over_parts(params, stat, entity, attr, value, &parts, store)
}

fn noisy_over_parts<N: NoiseSource>(
    params: &PrivacyParams<N>,
    stat: StatType,
    entity: &str,
    attr: &str,
    value: &str,
    parts: &[AtomicTimeRange],
    store: &Store,
) -> Result<NoisyAnswer, EngineError> {
    let children = store.children_of(entity)?;
    if !children.is_empty() && children.len() <= params.l {
        let mut sum = 0u64;
        for child in children {
            sum += noisy_over_parts(params, stat, child, attr, value, parts, store)?.value;
        }
        return Ok(NoisyAnswer {
            value: sum,
            suppressed: false,
            partition_size: parts.len(),
            entity_fanout: children.len(),
        });
    }

    let mut sum = 0u64;
    for range in parts {
        let q = CanonicalQuery {
            stat,
            entity,
            attr,
            value,
            range: *range,
        };
        sum += canonical_noisy_count(params, &q, store)?;
    }
    let (value, suppressed) = apply_threshold(sum, params.tau);
    Ok(NoisyAnswer {
        value,
        suppressed,
        partition_size: parts.len(),
        entity_fanout: 0,
    })
}

/// Zeroes noisy sums below `tau`. The flag is set only when a positive count
/// was hidden, so `tau = 0` and `tau = 1` behave identically.
pub fn apply_threshold(sum: u64, tau: u64) -> (u64, bool) {
    if sum < tau {
        (0, sum > 0)
    } else {
        (sum, false)
    }
}

/// Undivided total for an entity, stored under the reserved `*` attribute.
/// Exact unless `noisy_totals` is set.
pub fn compute_total<N: NoiseSource>(
    params: &PrivacyParams<N>,
    stat: StatType,
    entity: &str,
    range: TimeRange,
    store: &Store,
) -> Result<NoisyAnswer, EngineError> {
    if params.noisy_totals {
        return compute_noisy_count(params, stat, entity, TOTAL_ATTR, TOTAL_VALUE, range, store);
    }
    check_inputs(params, range, store)?;
    let parts = minimal_partition(range, &params.hierarchy)?;
    Ok(NoisyAnswer {
        value: store.count_over(stat, entity, TOTAL_ATTR, TOTAL_VALUE, range)?,
        suppressed: false,
        partition_size: parts.len(),
        entity_fanout: 0,
    })
}

/// Top `k` values of `attr` by noisy count.
///
/// Candidates are the `k_max` values with the largest true counts over the
/// range; that selection step itself is not differentially private. Each
/// candidate is then scored with [`compute_noisy_count`], suppressed ones are
/// dropped, and the rest are ranked by noisy count. Ties break by value in
/// both stages, so results for `k < k_max` are prefixes of each other.
#[allow(clippy::too_many_arguments)]
pub fn top_k<N: NoiseSource>(
    params: &PrivacyParams<N>,
    stat: StatType,
    entity: &str,
    attr: &str,
    range: TimeRange,
    k: usize,
    k_max: usize,
    store: &Store,
) -> Result<TopK, EngineError> {
    if k_max == 0 || k > k_max {
        return Err(EngineError::InvalidTopK { k, k_max });
    }
    check_inputs(params, range, store)?;
    let parts = minimal_partition(range, &params.hierarchy)?;
    if k == 0 {
        return Ok(TopK {
            partition_size: parts.len(),
            ..TopK::default()
        });
    }

    let mut candidates: Vec<(&str, u64)> = store
        .value_counts(stat, entity, attr, range)?
        .into_iter()
        .collect();
    candidates.sort_by_key(|&(value, count)| (Reverse(count), value));
    candidates.truncate(k_max);

    let mut scored = Vec::with_capacity(candidates.len());
    let mut suppressed = 0;
    for (value, _) in candidates {
        let answer = noisy_over_parts(params, stat, entity, attr, value, &parts, store)?;
        if answer.suppressed {
            suppressed += 1;
        } else {
            scored.push(RankedValue {
                value: value.to_string(),
                answer,
            });
        }
    }
    scored.sort_by(|a, b| {
        b.answer
            .value
            .cmp(&a.answer.value)
            .then_with(|| a.value.cmp(&b.value))
    });
    scored.truncate(k);
    Ok(TopK {
        entries: scored,
        suppressed,
        partition_size: parts.len(),
    })
}
