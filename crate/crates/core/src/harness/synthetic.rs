use std::collections::BTreeMap;
use std::io::Write;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Geometric};
use serde::Serialize;

use super::HarnessError;
use crate::noise::StatType;
use crate::store::{ActionEvent, EntityHierarchy, Store, DEFAULT_LEAF_LABEL};
use crate::timegrid::{Instant, Level, TimeRange};

/// 2018-01-01T00:00:00Z, the day every synthetic event falls on.
pub const SYNTHETIC_DAY: Instant = 1_514_764_800;
const EPOCHS_PER_DAY: i64 = 8;
const EPOCH_SECONDS: i64 = 3 * 3600;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    /// Number of (creative, attribute, value) cells, one query each.
    pub num_queries: usize,
    /// Success probability of the per-cell count distribution.
    pub geometric_q: f64,
    pub seed: u64,
    pub attr_cardinalities: BTreeMap<String, u32>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let attr_cardinalities = [
            ("companySize", 8),
            ("function", 26),
            ("industry", 20),
            ("location", 40),
            ("seniority", 10),
            ("title", 60),
        ]
        .into_iter()
        .map(|(a, n)| (a.to_string(), n))
        .collect();
        Self {
            num_queries: 100_000,
            geometric_q: 0.3,
            seed: 7,
            attr_cardinalities,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if !(self.geometric_q > 0.0 && self.geometric_q < 1.0) {
            return Err(HarnessError::BadSpec(
                "geometricQ must lie strictly between 0 and 1",
            ));
        }
        if self.num_queries == 0 {
            return Err(HarnessError::BadSpec("numQueries must be at least 1"));
        }
        if self.attr_cardinalities.values().all(|&n| n == 0) {
            return Err(HarnessError::BadSpec("at least one attribute needs a value"));
        }
        Ok(())
    }
}

/// Exact true count of one cell over [`SyntheticData::range`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExpectedCell {
    pub entity: String,
    pub stat: StatType,
    pub attr: String,
    pub value: String,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub events: Vec<ActionEvent>,
    pub cells: Vec<ExpectedCell>,
    pub hierarchy: EntityHierarchy,
}

/// Draws `num_queries` cells with geometric counts (support 1, 2, ...) and
/// scatters each count over random 3-hour epochs of one day.
///
/// Creatives `cr00000, cr00001, ...` each carry every value of every
/// attribute with probability one half; cells are emitted until the
/// requested number is reached.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData, HarnessError> {
    spec.validate()?;
    let mut rng = StdRng::seed_from_u64(spec.seed);
    let geometric = Geometric::new(spec.geometric_q).map_err(|_| HarnessError::BadSpec("geometricQ"))?;
    let mut data = SyntheticData {
        events: Vec::new(),
        cells: Vec::with_capacity(spec.num_queries),
        hierarchy: EntityHierarchy::new(),
    };

    let mut creative = 0u32;
    'outer: loop {
        let entity = format!("cr{creative:05}");
        data.hierarchy.add_root(&entity, DEFAULT_LEAF_LABEL)?;
        for (attr, &cardinality) in &spec.attr_cardinalities {
            for v in 0..cardinality {
                if !rng.random_bool(0.5) {
                    continue;
                }
                let value = format!("{attr}-{v:02}");
                let count = geometric.sample(&mut rng) + 1;
                let mut per_epoch = [0u64; EPOCHS_PER_DAY as usize];
                for _ in 0..count {
                    per_epoch[rng.random_range(0..EPOCHS_PER_DAY) as usize] += 1;
                }
                for (epoch, &c) in per_epoch.iter().enumerate().filter(|(_, c)| **c > 0) {
                    data.events.push(ActionEvent {
                        timestamp: SYNTHETIC_DAY
                            + epoch as i64 * EPOCH_SECONDS
                            + rng.random_range(0..EPOCH_SECONDS),
                        stat: StatType::Impression,
                        entity: entity.clone(),
                        attr: attr.clone(),
                        value: value.clone(),
                        count: c,
                    });
                }
                data.cells.push(ExpectedCell {
                    entity: entity.clone(),
                    stat: StatType::Impression,
                    attr: attr.clone(),
                    value,
                    count,
                });
                if data.cells.len() == spec.num_queries {
                    break 'outer;
                }
            }
        }
        creative += 1;
    }
    Ok(data)
}

impl SyntheticData {
    /// The one-day query range every cell is evaluated over.
    pub fn range() -> TimeRange {
        TimeRange::new(SYNTHETIC_DAY, SYNTHETIC_DAY + 86_400).expect("valid day")
    }

    pub fn to_store(&self) -> Result<Store, HarnessError> {
        let mut store = Store::with_hierarchy(Level::Epoch3h, self.hierarchy.clone());
        for event in &self.events {
            store.add(event)?;
        }
        Ok(store)
    }

    /// Events in the store's NDJSON ingestion format.
    pub fn write_events(&self, mut w: impl Write) -> std::io::Result<()> {
        for event in &self.events {
            writeln!(w, "{}", event.to_json_line())?;
        }
        w.flush()
    }

    /// Exact per-cell counts over the day, for oracle checks.
    pub fn write_cells(&self, w: impl Write) -> Result<(), HarnessError> {
        let range = Self::range();
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["entity", "stat", "attr", "value", "start", "end", "count"])?;
        for c in &self.cells {
            out.write_record([
                c.entity.as_str(),
                c.stat.as_str(),
                &c.attr,
                &c.value,
                &range.start().to_string(),
                &range.end().to_string(),
                &c.count.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_hierarchy(&self, w: impl Write) -> Result<(), HarnessError> {
        serde_json::to_writer_pretty(w, &self.hierarchy.to_forest()).map_err(std::io::Error::from)?;
        Ok(())
    }
}
