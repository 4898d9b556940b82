use std::collections::BTreeMap;
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Duration, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use serde_json::json;
use tower_http::services::ServeDir;

use viewlink::hits::{append_resolution, validate_resolution, Decision, Hit, HitKind, HitResolution};
use viewlink::ingest::Side;
use viewlink::pipeline::{AuditScope, HitState};

use crate::{ReviewService, Snapshot};

type Svc = State<Arc<ReviewService>>;

pub fn router(service: Arc<ReviewService>) -> Router {
    let mut app = Router::new()
        .route("/hits", get(list_hits))
        .route("/hits/:id", get(get_hit))
        .route("/hits/:id/resolution", post(post_resolution))
        .route("/progress", get(progress))
        .route("/crosswalk", get(crosswalk));
    if let Some(dir) = &service.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(axum::middleware::map_response_with_state(service.clone(), stamp))
        .with_state(service)
}

async fn stamp(State(svc): Svc, mut res: Response) -> Response {
    if let Ok(v) = HeaderValue::from_str(svc.manifest_hash()) {
        res.headers_mut().insert("x-manifest-hash", v);
    }
    res
}

struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    detail: Option<serde_json::Value>,
    hash: String,
}

impl ApiError {
    fn new(svc: &ReviewService, status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: None,
            hash: svc.manifest_hash().to_string(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut error = json!({ "code": self.code, "message": self.message });
        if let Some(d) = self.detail {
            error["detail"] = d;
        }
        (self.status, Json(json!({ "manifest_hash": self.hash, "error": error }))).into_response()
    }
}

#[derive(Serialize)]
struct HitView<'a> {
    #[serde(flatten)]
    hit: &'a Hit,
    status: &'static str,
    resolution: Option<&'a HitResolution>,
}

fn view(h: &HitState) -> HitView<'_> {
    HitView {
        hit: &h.hit,
        status: status_of(h),
        resolution: h.resolution.as_ref(),
    }
}

fn status_of(h: &HitState) -> &'static str {
    if h.is_pending() {
        "pending"
    } else {
        "resolved"
    }
}

#[derive(Deserialize)]
struct HitFilter {
    status: Option<String>,
    kind: Option<String>,
    pass: Option<u32>,
}

async fn list_hits(State(svc): Svc, Query(filter): Query<HitFilter>) -> Result<Json<serde_json::Value>, ApiError> {
    let status = match filter.status.as_deref() {
        None | Some("") | Some("all") => None,
        Some(s @ ("pending" | "resolved")) => Some(s.to_string()),
        Some(other) => {
            return Err(ApiError::new(
                &svc,
                StatusCode::BAD_REQUEST,
                "bad_filter",
                format!("unknown status '{other}'; use pending or resolved"),
            ))
        }
    };
    let kind = match filter.kind.as_deref() {
        None | Some("") => None,
        Some(k) => Some(
            k.parse::<HitKind>()
                .map_err(|e| ApiError::new(&svc, StatusCode::BAD_REQUEST, "bad_filter", e))?,
        ),
    };
    let snap = svc.snapshot();
    let hits: Vec<HitView<'_>> = snap
        .state
        .hits
        .iter()
        .filter(|h| status.as_deref().is_none_or(|s| status_of(h) == s))
        .filter(|h| kind.is_none_or(|k| h.hit.kind == k))
        .filter(|h| filter.pass.is_none_or(|p| h.hit.pass_number == p))
        .map(view)
        .collect();
    Ok(Json(json!({
        "manifest_hash": svc.manifest_hash(),
        "count": hits.len(),
        "hits": hits,
    })))
}

async fn get_hit(State(svc): Svc, Path(id): Path<String>) -> Result<Json<serde_json::Value>, ApiError> {
    let snap = svc.snapshot();
    let h = snap.state.hit(&id).ok_or_else(|| unknown_hit(&svc, &id))?;
    Ok(Json(json!({ "manifest_hash": svc.manifest_hash(), "hit": view(h) })))
}

fn unknown_hit(svc: &ReviewService, id: &str) -> ApiError {
    ApiError::new(svc, StatusCode::NOT_FOUND, "unknown_hit", format!("no HIT with id '{id}'"))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolutionBody {
    pub decision: String,
    #[serde(default)]
    pub chosen_right_id: Option<String>,
    pub reviewer: String,
    #[serde(default)]
    pub note: String,
}

async fn post_resolution(
    State(svc): Svc,
    Path(id): Path<String>,
    body: Result<Json<ResolutionBody>, JsonRejection>,
) -> Result<Json<serde_json::Value>, ApiError> {
    if svc.is_read_only() {
        return Err(ApiError::new(
            &svc,
            StatusCode::LOCKED,
            "stale_state",
            "outputs do not match the inputs on disk; re-run the pipeline before reviewing",
        ));
    }
    let Json(body) = body.map_err(|e| ApiError::new(&svc, StatusCode::UNPROCESSABLE_ENTITY, "invalid_body", e.body_text()))?;
    let invalid = |msg: String| ApiError::new(&svc, StatusCode::UNPROCESSABLE_ENTITY, "invalid_resolution", msg);
    let decision: Decision = body.decision.parse().map_err(|e: viewlink::hits::HitError| invalid(e.to_string()))?;
    if body.reviewer.trim().is_empty() {
        return Err(invalid("reviewer is required".into()));
    }
    let chosen = body
        .chosen_right_id
        .map(|c| c.trim().to_string())
        .filter(|c| !c.is_empty());

    let _writer = svc.writer.lock().await;
    let snap = svc.snapshot();
    let current = snap.state.hit(&id).ok_or_else(|| unknown_hit(&svc, &id))?;
    if let Some(existing) = &current.resolution {
        if existing.decision == decision && existing.chosen_right_entity_id == chosen {
            return Ok(Json(json!({
                "manifest_hash": svc.manifest_hash(),
                "resolution": existing,
                "duplicate": true,
                "pending": snap.state.pending_hits().len(),
            })));
        }
        if existing.decision != Decision::Defer {
            let mut err = ApiError::new(
                &svc,
                StatusCode::CONFLICT,
                "already_resolved",
                format!("HIT '{id}' is already resolved as {}", existing.decision.as_str()),
            );
            err.detail = Some(json!({ "resolution": existing }));
            return Err(err);
        }
    }

    let res = HitResolution {
        hit_id: id.clone(),
        decision,
        chosen_right_entity_id: chosen,
        reviewer: body.reviewer.trim().to_string(),
        note: body.note,
        timestamp: next_timestamp(&snap, &id),
    };
    validate_resolution(&current.hit, &res).map_err(|e| invalid(e.to_string()))?;

    let mut log = snap.log.clone();
    log.push(res.clone());
    let worker = svc.clone();
    let applied = res.clone();
    let outcome = tokio::task::spawn_blocking(move || commit(&worker, log, &applied))
        .await
        .map_err(|e| ApiError::new(&svc, StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?;
    let pending = match outcome {
        Ok(p) => p,
        Err(Failure::Rejected(msg)) => {
            return Err(ApiError::new(&svc, StatusCode::UNPROCESSABLE_ENTITY, "rejected", msg))
        }
        Err(Failure::Storage(msg)) => {
            return Err(ApiError::new(&svc, StatusCode::INTERNAL_SERVER_ERROR, "storage", msg))
        }
    };
    log::info!("{} resolved {} as {}", res.reviewer, res.hit_id, res.decision.as_str());
    Ok(Json(json!({
        "manifest_hash": svc.manifest_hash(),
        "resolution": res,
        "duplicate": false,
        "pending": pending,
    })))
}

enum Failure {
    Rejected(String),
    Storage(String),
}

/// Re-runs with the extended log, appends the decision durably and
/// publishes the new state. Returns the pending HIT count.
fn commit(svc: &ReviewService, log: Vec<HitResolution>, res: &HitResolution) -> Result<usize, Failure> {
    let bench = svc.workbench();
    let state = bench.execute(&log).map_err(|e| Failure::Rejected(e.to_string()))?;
    append_resolution(&svc.resolution_path(), res).map_err(|e| Failure::Storage(e.to_string()))?;
    let pending = state.pending_hits().len();
    svc.publish(Snapshot { log, state });
    let snap = svc.snapshot();
    bench
        .write_outputs(&snap.state, svc.started_at(), AuditScope::Resolution, 1)
        .map_err(|e| Failure::Storage(format!("decision recorded but outputs not refreshed: {e}")))?;
    Ok(pending)
}

/// Now, nudged past any earlier entry for the same HIT so the new row
/// supersedes it.
fn next_timestamp(snap: &Snapshot, id: &str) -> String {
    let mut now = Utc::now();
    let latest = snap
        .log
        .iter()
        .filter(|r| r.hit_id == id)
        .filter_map(|r| DateTime::parse_from_rfc3339(r.timestamp.trim()).ok())
        .map(|t| t.with_timezone(&Utc))
        .max();
    if let Some(t) = latest {
        if now <= t {
            now = t + Duration::microseconds(1);
        }
    }
    now.to_rfc3339_opts(SecondsFormat::Micros, true)
}

#[derive(Default, Serialize)]
struct Tally {
    pending: usize,
    resolved: usize,
}

impl Tally {
    fn add(&mut self, h: &HitState) {
        if h.is_pending() {
            self.pending += 1;
        } else {
            self.resolved += 1;
        }
    }
}

async fn progress(State(svc): Svc) -> Json<serde_json::Value> {
    let snap = svc.snapshot();
    let mut all = Tally::default();
    let mut by_kind: BTreeMap<&str, Tally> = BTreeMap::new();
    let mut by_pass: BTreeMap<u32, Tally> = BTreeMap::new();
    let mut by_decision: BTreeMap<&str, usize> = BTreeMap::new();
    for h in &snap.state.hits {
        all.add(h);
        by_kind.entry(h.hit.kind.as_str()).or_default().add(h);
        by_pass.entry(h.hit.pass_number).or_default().add(h);
        if let Some(r) = &h.resolution {
            *by_decision.entry(r.decision.as_str()).or_default() += 1;
        }
    }
    let bench = svc.workbench();
    Json(json!({
        "manifest_hash": svc.manifest_hash(),
        "read_only": svc.is_read_only(),
        "total": snap.state.hits.len(),
        "pending": all.pending,
        "resolved": all.resolved,
        "by_kind": by_kind,
        "by_pass": by_pass,
        "by_decision": by_decision,
        "orphaned_resolutions": snap.state.orphaned.len(),
        "left": snap.state.side_counts(Side::Left, bench.left_views.len()),
        "right": snap.state.side_counts(Side::Right, bench.right_views.len()),
    }))
}

async fn crosswalk(State(svc): Svc) -> Json<serde_json::Value> {
    let snap = svc.snapshot();
    let entries = snap.state.crosswalk.sorted_entries();
    Json(json!({
        "manifest_hash": svc.manifest_hash(),
        "linked": snap.state.crosswalk.linked().count(),
        "entries": entries,
    }))
}
