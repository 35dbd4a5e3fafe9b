//! Pre-aggregated event counts at the finest time granularity, plus the
//! entity hierarchy they roll up through.

mod hierarchy;
mod ingest;
mod snapshot;

use std::collections::BTreeMap;

use thiserror::Error;

pub use hierarchy::{EntityHierarchy, ForestNode, DEFAULT_LEAF_LABEL};
pub use ingest::{ActionEvent, IngestReport, RejectedRow};
pub use snapshot::{SnapshotError, SNAPSHOT_MAGIC};

use crate::noise::{NoiseError, StatType};
use crate::timegrid::{AtomicTimeRange, Instant, Level, TimeError, TimeRange};

/// Reserved attribute and value under which undivided totals are stored.
pub const TOTAL_ATTR: &str = "*";
pub const TOTAL_VALUE: &str = "*";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown entity `{0}`")]
    UnknownEntity(String),
    #[error("entity `{0}` already exists")]
    DuplicateEntity(String),
    #[error("entity id must not be empty")]
    EmptyEntityId,
    #[error("entity `{0}` has children; events must reference leaf entities")]
    NonLeafEntity(String),
    #[error("entity `{0}` already has events and cannot become a parent")]
    ParentWithEvents(String),
    #[error("invalid event: {0}")]
    InvalidEvent(&'static str),
    #[error("invalid entity hierarchy document: {0}")]
    HierarchyFormat(String),
    #[error(transparent)]
    Field(#[from] NoiseError),
    #[error(transparent)]
    Time(#[from] TimeError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Counts per finest-level epoch start.
pub type Series = BTreeMap<Instant, u64>;
type ValueMap = BTreeMap<String, Series>;
type AttrMap = BTreeMap<String, ValueMap>;
type StatMap = BTreeMap<StatType, AttrMap>;

/// One stored cell: the count of a (stat, entity, attr, value) series in one
/// finest-level epoch.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct AggregatedRow {
    pub stat: StatType,
    pub entity: String,
    pub attr: String,
    pub value: String,
    pub epoch_start: Instant,
    pub count: u64,
}

/// In-memory aggregated store. Cheap to clone relative to ingest cost; the
/// service publishes clones as immutable snapshots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Store {
    finest: Level,
    hierarchy: EntityHierarchy,
    cells: BTreeMap<String, StatMap>,
}

impl Store {
    pub fn new(finest: Level) -> Self {
        Self::with_hierarchy(finest, EntityHierarchy::new())
    }

    pub fn with_hierarchy(finest: Level, hierarchy: EntityHierarchy) -> Self {
        Self {
            finest,
            hierarchy,
            cells: BTreeMap::new(),
        }
    }

    pub fn finest(&self) -> Level {
        self.finest
    }

    pub fn hierarchy(&self) -> &EntityHierarchy {
        &self.hierarchy
    }

    /// Registers `id` under `parent`. The parent must not hold events itself.
    pub fn add_child_entity(&mut self, parent: &str, id: &str, label: &str) -> Result<(), StoreError> {
        if self.cells.contains_key(parent) {
            return Err(StoreError::ParentWithEvents(parent.to_string()));
        }
        self.hierarchy.add_child(parent, id, label)
    }

    pub fn add_root_entity(&mut self, id: &str, label: &str) -> Result<(), StoreError> {
        self.hierarchy.add_root(id, label)
    }

    pub fn children_of(&self, entity: &str) -> Result<&std::collections::BTreeSet<String>, StoreError> {
        self.hierarchy.children_of(entity)
    }

    /// Adds `count` to the cell containing `timestamp`. The entity must be a
    /// registered leaf, or unknown (then it is registered as a root leaf).
    pub fn add(&mut self, event: &ActionEvent) -> Result<(), StoreError> {
        self.check_event(event)?;
        if !self.hierarchy.contains(&event.entity) {
            self.hierarchy.add_root(&event.entity, DEFAULT_LEAF_LABEL)?;
        }
        let epoch = self.finest.floor(event.timestamp);
        *self
            .cells
            .entry(event.entity.clone())
            .or_default()
            .entry(event.stat)
            .or_default()
            .entry(event.attr.clone())
            .or_default()
            .entry(event.value.clone())
            .or_default()
            .entry(epoch)
            .or_insert(0) += event.count;
        Ok(())
    }

    pub(crate) fn check_event(&self, event: &ActionEvent) -> Result<(), StoreError> {
        event.validate()?;
        if self.hierarchy.contains(&event.entity) && !self.hierarchy.is_leaf(&event.entity)? {
            return Err(StoreError::NonLeafEntity(event.entity.clone()));
        }
        Ok(())
    }

    fn leaf_series<'a>(&'a self, stat: StatType, leaf: &str, attr: &str) -> Option<&'a ValueMap> {
        self.cells.get(leaf)?.get(&stat)?.get(attr)
    }

    /// True count of the series over an atomic range, summed across the
    /// entity's leaf descendants.
    pub fn true_count(
        &self,
        stat: StatType,
        entity: &str,
        attr: &str,
        value: &str,
        range: &AtomicTimeRange,
    ) -> Result<u64, StoreError> {
        self.count_over(stat, entity, attr, value, range.range())
    }

    /// True count over any range whose endpoints are finest-level boundaries.
    pub fn count_over(
        &self,
        stat: StatType,
        entity: &str,
        attr: &str,
        value: &str,
        range: TimeRange,
    ) -> Result<u64, StoreError> {
        self.check_range(range)?;
        let mut total = 0;
        for leaf in self.hierarchy.leaf_descendants(entity)? {
            if let Some(series) = self.leaf_series(stat, leaf, attr).and_then(|v| v.get(value)) {
                total += sum_range(series, range);
            }
        }
        Ok(total)
    }

    /// True counts over `range` for every value of `attr` seen under `entity`,
    /// zero counts omitted.
    pub fn value_counts(
        &self,
        stat: StatType,
        entity: &str,
        attr: &str,
        range: TimeRange,
    ) -> Result<BTreeMap<&str, u64>, StoreError> {
        self.check_range(range)?;
        let mut out: BTreeMap<&str, u64> = BTreeMap::new();
        for leaf in self.hierarchy.leaf_descendants(entity)? {
            let Some(values) = self.leaf_series(stat, leaf, attr) else {
                continue;
            };
            for (value, series) in values {
                let n = sum_range(series, range);
                if n > 0 {
                    *out.entry(value.as_str()).or_insert(0) += n;
                }
            }
        }
        Ok(out)
    }

    fn check_range(&self, range: TimeRange) -> Result<(), StoreError> {
        for instant in [range.start(), range.end()] {
            if !self.finest.is_boundary(instant) {
                return Err(TimeError::Misaligned {
                    instant,
                    level: self.finest,
                }
                .into());
            }
        }
        Ok(())
    }

    pub fn cell_count(&self) -> usize {
        self.rows().count()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Sum of all stored counts per stat type.
    pub fn totals_by_stat(&self) -> BTreeMap<StatType, u64> {
        let mut out = BTreeMap::new();
        for row in self.rows() {
            *out.entry(row.stat).or_insert(0) += row.count;
        }
        out
    }

    /// Every stored cell in (entity, stat, attr, value, epoch) order.
    pub fn rows(&self) -> impl Iterator<Item = AggregatedRow> + '_ {
        self.cells.iter().flat_map(|(entity, stats)| {
            stats.iter().flat_map(move |(stat, attrs)| {
                attrs.iter().flat_map(move |(attr, values)| {
                    values.iter().flat_map(move |(value, series)| {
                        series.iter().map(move |(epoch, count)| AggregatedRow {
                            stat: *stat,
                            entity: entity.clone(),
                            attr: attr.clone(),
                            value: value.clone(),
                            epoch_start: *epoch,
                            count: *count,
                        })
                    })
                })
            })
        })
    }
}

fn sum_range(series: &Series, range: TimeRange) -> u64 {
    series.range(range.start()..range.end()).map(|(_, c)| c).sum()
}
