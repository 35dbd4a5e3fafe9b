use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::PathBuf;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, HeaderMap};
use axum::Json;
use pprl_core::{
    compute_noisy_count, compute_total, format_instant, parse_instant, top_k, truncate_to_completed,
    IngestReport, Instant, StatType, Store, TimeRange,
};
use serde::{Deserialize, Serialize};

use crate::error::ApiError;
use crate::state::AppState;

pub const TEST_NOW_HEADER: &str = "x-test-now";
pub const DEFAULT_K_MAX: usize = 100;

const CANDIDATE_NOTE: &str =
    "candidates are the kMax values with the largest true counts; that selection is not differentially private";

/// Query-string fields, consumed one by one so leftovers can be rejected.
struct Fields(BTreeMap<String, String>);

impl Fields {
    fn take(&mut self, name: &str) -> Option<String> {
        self.0.remove(name)
    }

    fn required(&mut self, name: &'static str) -> Result<String, ApiError> {
        match self.take(name) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(ApiError::invalid(name, format!("`{name}` is required"))),
        }
    }

    fn positive(&mut self, name: &'static str) -> Result<Option<usize>, ApiError> {
        self.take(name)
            .map(|v| match v.parse::<usize>() {
                Ok(n) if n > 0 => Ok(n),
                _ => Err(ApiError::invalid(
                    name,
                    format!("`{name}` must be a positive integer"),
                )),
            })
            .transpose()
    }

    fn finish(self) -> Result<(), ApiError> {
        match self.0.into_keys().next() {
            Some(k) => Err(ApiError::bad_request(format!("unknown parameter `{k}`"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct QueryEcho {
    pub stat: StatType,
    pub entity: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attr: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    pub start: String,
    pub end: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k_max: Option<usize>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CountResponse {
    pub query: QueryEcho,
    pub value: u64,
    /// True for undivided totals served without noise.
    pub exact: bool,
    pub suppressed_count: usize,
    pub partition_size: usize,
    pub truncated_end: String,
    pub budget_bound: f64,
}

#[derive(Debug, Serialize)]
pub struct RankedCount {
    pub value: String,
    pub count: u64,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct TopKResponse {
    pub query: QueryEcho,
    pub ranked: Vec<RankedCount>,
    pub suppressed_count: usize,
    pub partition_size: usize,
    pub truncated_end: String,
    pub budget_bound: f64,
    pub candidate_selection: &'static str,
}

struct Common {
    stat: StatType,
    entity: String,
    attr: Option<String>,
    start: Instant,
    end: Instant,
    /// `None` when no complete epoch lies inside the range yet.
    effective: Option<TimeRange>,
}

fn parse_common(state: &AppState, headers: &HeaderMap, f: &mut Fields) -> Result<Common, ApiError> {
    let stat = f
        .required("stat")?
        .parse::<StatType>()
        .map_err(|e| ApiError::invalid("stat", e.to_string()))?;
    let entity = f.required("entity")?;
    let attr = f.take("attr");
    let start_raw = f.required("start")?;
    let end_raw = f.required("end")?;
    let start = parse_instant(&start_raw).map_err(|e| ApiError::invalid("start", e.to_string()))?;
    let end = parse_instant(&end_raw).map_err(|e| ApiError::invalid("end", e.to_string()))?;

    let hierarchy = &state.params().hierarchy;
    let finest = hierarchy.finest();
    for (field, t) in [("start", start), ("end", end)] {
        if !finest.is_boundary(t) {
            return Err(ApiError::invalid(
                field,
                format!("{} is not aligned to a {finest} boundary", format_instant(t)),
            ));
        }
    }
    let range = TimeRange::new(start, end).map_err(|e| ApiError::invalid("end", e.to_string()))?;
    let now = request_now(state, headers)?;
    Ok(Common {
        stat,
        entity,
        attr,
        start,
        end,
        effective: truncate_to_completed(range, now, hierarchy),
    })
}

fn request_now(state: &AppState, headers: &HeaderMap) -> Result<Instant, ApiError> {
    if state.test_mode() {
        if let Some(v) = headers.get(TEST_NOW_HEADER) {
            let text = v
                .to_str()
                .map_err(|_| ApiError::invalid("X-Test-Now", "header must be ASCII"))?;
            return parse_instant(text).map_err(|e| ApiError::invalid("X-Test-Now", e.to_string()));
        }
    }
    Ok(state.clock().now())
}

fn snapshot_with(state: &AppState, entity: &str) -> Result<std::sync::Arc<Store>, ApiError> {
    let store = state.current().ok_or_else(ApiError::no_snapshot)?;
    if !store.hierarchy().contains(entity) {
        return Err(ApiError::not_found(format!("unknown entity `{entity}`")));
    }
    Ok(store)
}

fn echo(c: &Common, value: Option<String>, top_k: Option<usize>, k_max: Option<usize>) -> QueryEcho {
    QueryEcho {
        stat: c.stat,
        entity: c.entity.clone(),
        attr: c.attr.clone(),
        value,
        start: format_instant(c.start),
        end: format_instant(c.end),
        top_k,
        k_max,
    }
}

/// GET /v1/count
///
/// With `attr` and `value` this is a noisy breakdown count; with neither it
/// is the entity's total.
pub async fn count(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(raw): Query<BTreeMap<String, String>>,
) -> Result<Json<CountResponse>, ApiError> {
    let mut f = Fields(raw);
    let c = parse_common(&state, &headers, &mut f)?;
    let value = f.take("value");
    if f.take("topK").is_some() {
        return Err(ApiError::invalid("topK", "`topK` is only accepted by /v1/topk"));
    }
    f.finish()?;
    match (&c.attr, &value) {
        (Some(_), None) => return Err(ApiError::invalid("value", "`value` is required")),
        (None, Some(_)) => return Err(ApiError::invalid("attr", "`attr` is required with `value`")),
        _ => {}
    }
    let store = snapshot_with(&state, &c.entity)?;
    let params = state.params();

    let total = c.attr.is_none();
    let (answer, truncated_end) = match c.effective {
        Some(range) => {
            let answer = match (&c.attr, &value) {
                (Some(attr), Some(v)) => {
                    compute_noisy_count(params, c.stat, &c.entity, attr, v, range, &store)?
                }
                _ => compute_total(params, c.stat, &c.entity, range, &store)?,
            };
            (Some(answer), range.end())
        }
        None => (None, c.start),
    };
    Ok(Json(CountResponse {
        query: echo(&c, value, None, None),
        value: answer.as_ref().map_or(0, |a| a.value),
        exact: total && !params.noisy_totals,
        suppressed_count: answer.as_ref().map_or(0, |a| usize::from(a.suppressed)),
        partition_size: answer.as_ref().map_or(0, |a| a.partition_size),
        truncated_end: format_instant(truncated_end),
        budget_bound: state.budget_bound(),
    }))
}

/// GET /v1/topk
pub async fn topk(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(raw): Query<BTreeMap<String, String>>,
) -> Result<Json<TopKResponse>, ApiError> {
    let mut f = Fields(raw);
    let c = parse_common(&state, &headers, &mut f)?;
    if f.take("value").is_some() {
        return Err(ApiError::invalid(
            "value",
            "`value` is not accepted by /v1/topk; use /v1/count",
        ));
    }
    let k = f
        .positive("topK")?
        .ok_or_else(|| ApiError::invalid("topK", "`topK` is required"))?;
    let k_max = f.positive("kMax")?.unwrap_or(DEFAULT_K_MAX);
    f.finish()?;
    let Some(attr) = c.attr.clone() else {
        return Err(ApiError::invalid("attr", "`attr` is required"));
    };
    if k > k_max {
        return Err(ApiError::invalid(
            "topK",
            format!("`topK` must not exceed kMax ({k_max})"),
        ));
    }
    let store = snapshot_with(&state, &c.entity)?;

    let (result, truncated_end) = match c.effective {
        Some(range) => (
            Some(top_k(
                state.params(),
                c.stat,
                &c.entity,
                &attr,
                range,
                k,
                k_max,
                &store,
            )?),
            range.end(),
        ),
        None => (None, c.start),
    };
    let (ranked, suppressed_count, partition_size) = match result {
        Some(r) => (
            r.entries
                .into_iter()
                .map(|e| RankedCount {
                    value: e.value,
                    count: e.answer.value,
                })
                .collect(),
            r.suppressed,
            r.partition_size,
        ),
        None => (Vec::new(), 0, 0),
    };
    Ok(Json(TopKResponse {
        query: echo(&c, None, Some(k), Some(k_max)),
        ranked,
        suppressed_count,
        partition_size,
        truncated_end: format_instant(truncated_end),
        budget_bound: state.budget_bound(),
        candidate_selection: CANDIDATE_NOTE,
    }))
}

fn require_admin(state: &AppState, headers: &HeaderMap) -> Result<(), ApiError> {
    let auth = headers.get(header::AUTHORIZATION).and_then(|v| v.to_str().ok());
    if state.authorized(auth) {
        Ok(())
    } else {
        Err(ApiError::unauthorized())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IngestParams {
    pub path: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IngestResponse {
    #[serde(flatten)]
    pub report: IngestReport,
    /// Whether a new snapshot was published.
    pub published: bool,
}

/// POST /v1/admin/ingest
///
/// Reads NDJSON events from `?path=` on the server or from the request body,
/// applies them to a copy of the current snapshot and publishes the copy.
pub async fn ingest(
    State(state): State<AppState>,
    headers: HeaderMap,
    Query(params): Query<IngestParams>,
    body: Bytes,
) -> Result<Json<IngestResponse>, ApiError> {
    require_admin(&state, &headers)?;
    let _writer = state.try_writer().ok_or_else(ApiError::conflict)?;
    let finest = state.params().hierarchy.finest();
    let base = state.current();
    let (store, report) = tokio::task::spawn_blocking(move || -> Result<_, ApiError> {
        let mut store = base.map_or_else(|| Store::new(finest), |s| (*s).clone());
        let report = match params.path {
            Some(path) => {
                let file = File::open(&path)
                    .map_err(|e| ApiError::invalid("path", format!("cannot open {}: {e}", path.display())))?;
                store.ingest_ndjson(BufReader::new(file))?
            }
            None => store.ingest_ndjson(&body[..])?,
        };
        Ok((store, report))
    })
    .await
    .map_err(|e| ApiError::internal(e.to_string()))??;

    let published = report.cells_written > 0;
    if published {
        state.publish(store);
    }
    tracing::info!(
        rows = report.rows_read,
        rejected = report.rows_rejected,
        published,
        "ingestion finished"
    );
    Ok(Json(IngestResponse { report, published }))
}

#[derive(Debug, Clone, Copy, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum SnapshotAction {
    Save,
    Load,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotRequest {
    pub action: SnapshotAction,
    pub path: PathBuf,
}

#[derive(Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SnapshotResponse {
    pub action: SnapshotAction,
    pub path: PathBuf,
    pub entities: usize,
    pub cells: usize,
}

/// POST /v1/admin/snapshot with `{"action": "save" | "load", "path": ...}`.
pub async fn snapshot(
    State(state): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Json<SnapshotResponse>, ApiError> {
    require_admin(&state, &headers)?;
    let req: SnapshotRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::invalid("body", e.to_string()))?;
    let path = req.path.clone();
    let store = match req.action {
        SnapshotAction::Save => {
            let store = state.current().ok_or_else(ApiError::no_snapshot)?;
            let s = store.clone();
            tokio::task::spawn_blocking(move || s.save(&path))
                .await
                .map_err(|e| ApiError::internal(e.to_string()))??;
            store
        }
        SnapshotAction::Load => {
            let _writer = state.try_writer().ok_or_else(ApiError::conflict)?;
            let loaded = tokio::task::spawn_blocking(move || Store::load(&path))
                .await
                .map_err(|e| ApiError::internal(e.to_string()))??;
            let finest = state.params().hierarchy.finest();
            if loaded.finest() > finest {
                return Err(ApiError::invalid(
                    "path",
                    format!(
                        "snapshot granularity {} is coarser than {finest}",
                        loaded.finest()
                    ),
                ));
            }
            state.publish(loaded);
            state.current().ok_or_else(ApiError::no_snapshot)?
        }
    };
    tracing::info!(action = ?req.action, path = %req.path.display(), "snapshot request handled");
    Ok(Json(SnapshotResponse {
        action: req.action,
        path: req.path,
        entities: store.hierarchy().len(),
        cells: store.cell_count(),
    }))
}
