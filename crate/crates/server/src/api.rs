//! Routes and handlers. Every JSON payload carries `"v": 1`.

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard, RwLock};

use axum::body::{to_bytes, Body, Bytes};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use dpchart_core::charts::{chart_json, overlay_json, render_chart_data, ChartSpec, Selection};
use dpchart_core::data::{load_csv, SchemaDescriptor};
use dpchart_core::metrics::ranking_csv;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;
use tower_http::services::ServeDir;

use crate::error::ApiError;
use crate::export::export_archive;
use crate::session::{ranking_row, record_json, Session, Settings, Status, ViewSpec};
use crate::store::{Store, StoreError};
use crate::PAYLOAD_VERSION;

pub const MAX_UPLOAD_BYTES: usize = 64 * 1024 * 1024;

type ApiResult = Result<Response, ApiError>;
type Handle = Arc<Mutex<Session>>;

pub struct AppState {
    sessions: RwLock<BTreeMap<String, Handle>>,
    next_session: AtomicU64,
    store: Option<Store>,
    settings: Settings,
}

pub type Shared = Arc<AppState>;

fn lock(h: &Handle) -> MutexGuard<'_, Session> {
    // A panic while holding the lock leaves the session as last written.
    h.lock().unwrap_or_else(|p| p.into_inner())
}

impl AppState {
    /// State restored from `store` when given. Sessions that fail to load
    /// are skipped and returned.
    pub fn new(settings: Settings, store: Option<Store>) -> (Shared, Vec<StoreError>) {
        let (sessions, errors) = store.as_ref().map(Store::load_all).unwrap_or_default();
        let next = sessions
            .iter()
            .filter_map(|s| s.id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()))
            .max()
            .unwrap_or(0)
            + 1;
        let map = sessions.into_iter().map(|s| (s.id.clone(), Arc::new(Mutex::new(s)))).collect();
        let state = AppState { sessions: RwLock::new(map), next_session: AtomicU64::new(next), store, settings };
        (Arc::new(state), errors)
    }

    fn session(&self, id: &str) -> Result<Handle, ApiError> {
        let map = self.sessions.read().unwrap_or_else(|p| p.into_inner());
        map.get(id).cloned().ok_or_else(|| ApiError::not_found(format!("unknown session {id:?}")))
    }

    fn persist(&self, s: &Session) -> Result<(), ApiError> {
        match &self.store {
            Some(store) => store.save(s).map_err(|e| ApiError::internal(format!("persisting session {}: {e}", s.id))),
            None => Ok(()),
        }
    }

    /// Writes every session to the store.
    pub fn persist_all(&self) -> Vec<String> {
        let map = self.sessions.read().unwrap_or_else(|p| p.into_inner());
        map.values().filter_map(|h| self.persist(&lock(h)).err().map(|e| e.message)).collect()
    }

    pub fn session_ids(&self) -> Vec<String> {
        self.sessions.read().unwrap_or_else(|p| p.into_inner()).keys().cloned().collect()
    }

    /// A copy of a session's current state.
    pub fn snapshot(&self, id: &str) -> Option<Session> {
        self.session(id).ok().map(|h| lock(&h).clone())
    }
}

fn reply(status: StatusCode, mut body: Value) -> Response {
    match body.as_object_mut() {
        Some(obj) => {
            obj.insert("v".into(), json!(PAYLOAD_VERSION));
        }
        None => body = json!({ "v": PAYLOAD_VERSION, "items": body }),
    }
    (status, Json(body)).into_response()
}

fn ok(body: Value) -> ApiResult {
    Ok(reply(StatusCode::OK, body))
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T, ApiError> {
    Ok(serde_json::from_slice(body)?)
}

pub fn router(state: Shared, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/dataset", post(upload_dataset).get(get_dataset))
        .route("/sessions/{id}/filter", put(put_filter).get(get_filter))
        .route("/sessions/{id}/charts", post(add_chart).get(list_charts))
        .route("/sessions/{id}/charts/{cid}/data", get(chart_data))
        .route("/sessions/{id}/patterns", post(add_pattern).get(list_patterns))
        .route("/sessions/{id}/patterns/{pid}", patch(set_weight).delete(remove_pattern).get(get_pattern))
        .route("/sessions/{id}/analytics/relationship", get(relationship))
        .route("/sessions/{id}/analytics/flow", get(flow))
        .route("/sessions/{id}/analytics/network", get(network))
        .route("/sessions/{id}/analytics/distributions", get(distributions))
        .route("/sessions/{id}/schemes", post(create_scheme).get(list_schemes))
        .route("/sessions/{id}/schemes/{sid}", get(get_scheme))
        .route("/sessions/{id}/schemes/{sid}/metrics", get(scheme_metrics))
        .route("/sessions/{id}/schemes/{sid}/export", get(export_scheme))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD_BYTES))
        .layer(CorsLayer::permissive())
        .with_state(state);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(|| async { ApiError::not_found("no such route") }),
    }
}

async fn create_session(State(st): State<Shared>) -> ApiResult {
    let id = format!("s{}", st.next_session.fetch_add(1, Ordering::SeqCst));
    let s = Session::new(&id, st.settings);
    st.persist(&s)?;
    st.sessions.write().unwrap_or_else(|p| p.into_inner()).insert(id.clone(), Arc::new(Mutex::new(s)));
    Ok(reply(StatusCode::CREATED, json!({ "id": id })))
}

async fn list_sessions(State(st): State<Shared>) -> ApiResult {
    ok(json!({ "sessions": st.session_ids() }))
}

async fn get_session(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    ok(s.summary())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonUpload {
    csv: String,
    #[serde(default)]
    schema: Option<SchemaDescriptor>,
}

/// CSV bytes and optional schema from a raw, JSON or multipart body.
async fn read_upload(req: Request) -> Result<(Bytes, Option<SchemaDescriptor>), ApiError> {
    let content_type =
        req.headers().get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("").to_ascii_lowercase();
    if content_type.starts_with("multipart/form-data") {
        let mut form = Multipart::from_request(req, &()).await.map_err(|e| ApiError::bad_request(e.body_text()))?;
        let (mut csv, mut schema) = (None, None);
        while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.body_text()))? {
            let name = field.name().unwrap_or("").to_string();
            let data = field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?;
            match name.as_str() {
                "file" | "csv" => csv = Some(data),
                "schema" => schema = Some(parse::<SchemaDescriptor>(&data)?),
                other => return Err(ApiError::bad_request(format!("unexpected form field {other:?}"))),
            }
        }
        let csv = csv.ok_or_else(|| ApiError::bad_request("multipart upload needs a \"file\" field"))?;
        return Ok((csv, schema));
    }
    let body = to_bytes(req.into_body(), MAX_UPLOAD_BYTES).await.map_err(|e| ApiError::bad_request(e.to_string()))?;
    if content_type.starts_with("application/json") {
        let up: JsonUpload = parse(&body)?;
        Ok((Bytes::from(up.csv), up.schema))
    } else {
        Ok((body, None))
    }
}

async fn upload_dataset(State(st): State<Shared>, Path(id): Path<String>, req: Request) -> ApiResult {
    let h = st.session(&id)?;
    let (csv, schema) = read_upload(req).await?;
    let ds = load_csv(&csv, schema.as_deref())?;
    let mut s = lock(&h);
    let summary = s.upload(ds)?;
    st.persist(&s)?;
    ok(summary)
}

async fn get_dataset(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    ok(s.summary()["dataset"].clone())
}

async fn put_filter(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let h = st.session(&id)?;
    let spec: ViewSpec = parse(&body)?;
    let mut s = lock(&h);
    let out = s.set_view(spec)?;
    st.persist(&s)?;
    ok(out)
}

async fn get_filter(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    ok(json!({ "filter": s.summary()["filter"], "rows": s.view()?.n_rows() }))
}

async fn add_chart(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let h = st.session(&id)?;
    let spec: ChartSpec = parse(&body)?;
    let mut s = lock(&h);
    let spec = s.add_chart(spec)?;
    st.persist(&s)?;
    Ok(reply(StatusCode::CREATED, json!({ "id": spec.id, "chart": spec })))
}

async fn list_charts(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    ok(json!({ "charts": s.charts() }))
}

/// Chart data on the current view. With `scheme`, adds the synthetic data
/// and an overlay description; with `pattern`, outlines its selection.
async fn chart_data(
    State(st): State<Shared>,
    Path((id, cid)): Path<(String, String)>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    let spec = s.chart(&cid)?;
    let data = s.chart_data(&cid)?;
    let mut out = json!({ "chart": spec, "data": data, "description": chart_json(spec, &data) });
    let selection: Option<Selection> =
        q.get("pattern").map(|p| s.pattern(p).map(|p| p.selection.clone())).transpose()?;
    if let Some(sid) = q.get("scheme") {
        let scheme = s.complete_scheme(sid)?;
        let synth = render_chart_data(scheme.synthetic(), spec)?;
        out["overlay"] = overlay_json(spec, &data, &synth, selection.as_ref());
        out["synthetic"] = serde_json::to_value(&synth)?;
        out["scheme"] = json!(sid);
    }
    ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NewPattern {
    chart: String,
    selection: Selection,
    #[serde(default = "unit_weight")]
    weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightUpdate {
    weight: f64,
}

async fn add_pattern(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let h = st.session(&id)?;
    let req: NewPattern = parse(&body)?;
    let mut s = lock(&h);
    // An unknown chart in the body is a semantic error, not a missing resource.
    s.chart(&req.chart).map_err(|e| ApiError::unprocessable(e.message))?;
    let p = s.add_pattern(&req.chart, req.selection, req.weight)?;
    st.persist(&s)?;
    let mut body = json!({ "id": p.id, "size": p.records.len(), "pattern": p });
    if p.records.is_empty() {
        body["warning"] = json!("the selection contains no rows");
    }
    Ok(reply(StatusCode::CREATED, body))
}

async fn list_patterns(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    ok(json!({ "patterns": s.patterns() }))
}

async fn get_pattern(State(st): State<Shared>, Path((id, pid)): Path<(String, String)>) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    ok(json!({ "pattern": s.pattern(&pid)? }))
}

async fn set_weight(State(st): State<Shared>, Path((id, pid)): Path<(String, String)>, body: Bytes) -> ApiResult {
    let h = st.session(&id)?;
    let req: WeightUpdate = parse(&body)?;
    let mut s = lock(&h);
    let p = s.set_weight(&pid, req.weight)?;
    st.persist(&s)?;
    ok(json!({ "pattern": p }))
}

async fn remove_pattern(State(st): State<Shared>, Path((id, pid)): Path<(String, String)>) -> ApiResult {
    let h = st.session(&id)?;
    let mut s = lock(&h);
    let p = s.remove_pattern(&pid)?;
    st.persist(&s)?;
    ok(json!({ "removed": p.id }))
}

async fn relationship(State(st): State<Shared>, Path(id): Path<String>) -> ApiResult {
    let h = st.session(&id)?;
    let job = lock(&h).relationship_job()?;
    let graph = tokio::task::spawn_blocking(move || job.run())
        .await
        .map_err(|e| ApiError::internal(format!("relationship task failed: {e}")))??;
    ok(serde_json::to_value(graph)?)
}

async fn flow(State(st): State<Shared>, Path(id): Path<String>, Query(q): Query<HashMap<String, String>>) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    let columns = q.get("columns").map(|c| c.split(',').map(str::to_string).collect());
    ok(serde_json::to_value(s.flow(columns, q.get("highlight").map(String::as_str))?)?)
}

async fn network(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    let (sid, layout, net) = s.network(q.get("scheme").map(String::as_str))?;
    ok(json!({ "scheme": sid, "layout": layout, "network": net }))
}

async fn distributions(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let h = st.session(&id)?;
    let attr = q.get("attr").ok_or_else(|| ApiError::bad_request("query parameter \"attr\" is required"))?;
    let s = lock(&h);
    let (sid, dist) = s.distributions(attr, q.get("scheme").map(String::as_str))?;
    ok(json!({ "scheme": sid, "distribution": dist }))
}

async fn create_scheme(State(st): State<Shared>, Path(id): Path<String>, body: Bytes) -> ApiResult {
    let h = st.session(&id)?;
    let req = parse(&body)?;
    let job = {
        let mut s = lock(&h);
        let job = s.start_scheme(req)?;
        st.persist(&s)?;
        job
    };
    let sid = job.id.clone();
    let (st2, h2) = (st.clone(), h.clone());
    tokio::task::spawn_blocking(move || {
        let outcome = job.run();
        let mut s = lock(&h2);
        s.finish_scheme(&job.id, outcome);
        if let Err(e) = st2.persist(&s) {
            eprintln!("warning: {e}");
        }
    });
    Ok(reply(StatusCode::ACCEPTED, json!({ "id": sid, "status": Status::Running })))
}

async fn list_schemes(
    State(st): State<Shared>,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    if q.get("format").map(String::as_str) == Some("csv") {
        let rows: Vec<(String, f64, &dpchart_core::metrics::MetricsReport)> = s
            .schemes()
            .iter()
            .filter_map(|r| {
                let sc = r.scheme.as_ref()?;
                Some((r.id.clone(), r.request.epsilon, sc.metrics.as_ref()?))
            })
            .collect();
        return Ok(([(header::CONTENT_TYPE, "text/csv")], ranking_csv(&rows)).into_response());
    }
    ok(json!({ "schemes": s.schemes().iter().map(ranking_row).collect::<Vec<_>>() }))
}

async fn get_scheme(State(st): State<Shared>, Path((id, sid)): Path<(String, String)>) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    ok(record_json(s.scheme(&sid)?))
}

async fn scheme_metrics(State(st): State<Shared>, Path((id, sid)): Path<(String, String)>) -> ApiResult {
    let h = st.session(&id)?;
    let s = lock(&h);
    let scheme = s.complete_scheme(&sid)?;
    ok(json!({ "scheme": sid, "metrics": scheme.metrics }))
}

async fn export_scheme(State(st): State<Shared>, Path((id, sid)): Path<(String, String)>) -> ApiResult {
    let h = st.session(&id)?;
    let (scheme, charts) = {
        let s = lock(&h);
        (s.complete_scheme(&sid)?, s.charts().to_vec())
    };
    let bytes = export_archive(&scheme, &charts).map_err(|e| ApiError::internal(e.to_string()))?;
    let mut headers = HeaderMap::new();
    headers.insert(header::CONTENT_TYPE, "application/gzip".parse().expect("static header"));
    let disposition = format!("attachment; filename=\"{id}-{sid}.tar.gz\"");
    headers.insert(header::CONTENT_DISPOSITION, disposition.parse().map_err(|_| ApiError::bad_request("bad id"))?);
    Ok((headers, Body::from(bytes)).into_response())
}
