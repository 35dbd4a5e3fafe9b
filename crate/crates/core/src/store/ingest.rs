use std::collections::HashSet;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use super::{Store, StoreError, TOTAL_ATTR, TOTAL_VALUE};
use crate::noise::{check_field, NoiseError, StatType};
use crate::timegrid::{format_instant, parse_instant, Instant};

/// Rejected rows kept in a report, beyond which only the count grows.
const MAX_REPORTED_REJECTIONS: usize = 100;

/// One member action (or a pre-batched group of identical actions).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionEvent {
    pub timestamp: Instant,
    pub stat: StatType,
    pub entity: String,
    pub attr: String,
    pub value: String,
    pub count: u64,
}

/// Wire form: one NDJSON line.
#[derive(Debug, Serialize, Deserialize)]
struct EventLine {
    ts: String,
    stat: String,
    entity: String,
    attr: String,
    value: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    count: Option<u64>,
}

impl ActionEvent {
    pub fn validate(&self) -> Result<(), StoreError> {
        check_field("entity", &self.entity)?;
        check_field("attr", &self.attr)?;
        check_field("value", &self.value)?;
        if self.entity.is_empty() {
            return Err(StoreError::EmptyEntityId);
        }
        if self.count == 0 {
            return Err(StoreError::InvalidEvent("count must be at least 1"));
        }
        if self.attr == TOTAL_ATTR && self.value != TOTAL_VALUE {
            return Err(StoreError::InvalidEvent("total rows must use value `*`"));
        }
        Ok(())
    }

    /// Parses one NDJSON line `{ts, stat, entity, attr, value, count?}`.
    pub fn from_json_line(line: &str) -> Result<Self, String> {
        let raw: EventLine = serde_json::from_str(line).map_err(|e| format!("malformed JSON: {e}"))?;
        let count = raw.count.unwrap_or(1);
        if count == 0 {
            return Err("count must be at least 1".into());
        }
        let event = ActionEvent {
            timestamp: parse_instant(&raw.ts).map_err(|e| e.to_string())?,
            stat: raw.stat.parse().map_err(|e: NoiseError| e.to_string())?,
            entity: raw.entity,
            attr: raw.attr,
            value: raw.value,
            count,
        };
        Ok(event)
    }

    pub fn to_json_line(&self) -> String {
        let line = EventLine {
            ts: format_instant(self.timestamp),
            stat: self.stat.as_str().to_string(),
            entity: self.entity.clone(),
            attr: self.attr.clone(),
            value: self.value.clone(),
            count: (self.count != 1).then_some(self.count),
        };
        serde_json::to_string(&line).expect("event line serializes")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RejectedRow {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestReport {
    pub rows_read: u64,
    pub rows_rejected: u64,
    pub cells_written: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rejections: Vec<RejectedRow>,
}

impl IngestReport {
    fn reject(&mut self, line: u64, reason: String) {
        self.rows_rejected += 1;
        if self.rejections.len() < MAX_REPORTED_REJECTIONS {
            self.rejections.push(RejectedRow { line, reason });
        }
    }
}

#[derive(Default)]
struct Batch {
    report: IngestReport,
    touched: HashSet<(String, StatType, String, String, Instant)>,
}

impl Batch {
    fn apply(&mut self, store: &mut Store, line: u64, event: Result<ActionEvent, String>) {
        self.report.rows_read += 1;
        let event = match event {
            Ok(e) => e,
            Err(reason) => return self.report.reject(line, reason),
        };
        match store.add(&event) {
            Ok(()) => {
                let epoch = store.finest().floor(event.timestamp);
                self.touched
                    .insert((event.entity, event.stat, event.attr, event.value, epoch));
            }
            Err(e) => self.report.reject(line, e.to_string()),
        }
    }

    fn finish(mut self) -> IngestReport {
        self.report.cells_written = self.touched.len() as u64;
        self.report
    }
}

impl Store {
    /// Adds every valid event; invalid ones are counted and skipped.
    pub fn ingest_events<I>(&mut self, events: I) -> IngestReport
    where
        I: IntoIterator<Item = ActionEvent>,
    {
        let mut batch = Batch::default();
        for (i, event) in events.into_iter().enumerate() {
            batch.apply(self, i as u64 + 1, Ok(event));
        }
        batch.finish()
    }

    /// Ingests newline-delimited JSON. Blank lines are ignored; malformed
    /// lines are reported with their 1-based line number.
    pub fn ingest_ndjson(&mut self, reader: impl BufRead) -> Result<IngestReport, StoreError> {
        let mut batch = Batch::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            batch.apply(self, i as u64 + 1, ActionEvent::from_json_line(trimmed));
        }
        Ok(batch.finish())
    }
}
