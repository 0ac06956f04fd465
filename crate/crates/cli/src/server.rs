//! HTTP API over the shared engine. Sessions live in memory and, with a data
//! directory, are mirrored to `sessions/{id}/` after every mutation and
//! reloaded at startup.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use etho_core::behaviors::{render_ethogram, render_trajectory, ParamMap};
use etho_core::geometry::Vec2;
use etho_core::retrieval::{ModuleRegistry, DEFAULT_K};
use etho_core::trackdata::{self, DataFormat};
use etho_core::{BehaviorRegistry, Dataset, EventDict, SessionState};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use tokio::sync::RwLock;

use crate::cli::{selection, session_summary};
use crate::engine::{self, Bundle, EngineError, ErrorKind};

const STATE_FILE: &str = "state.json";

#[derive(Debug, Default)]
pub struct Session {
    pub state: SessionState,
    pub dataset: Option<Dataset>,
}

impl Session {
    fn bundle(&self) -> Result<Bundle, EngineError> {
        let dataset = self.dataset.clone().ok_or_else(|| EngineError::validation("no dataset uploaded"))?;
        Ok(Bundle { dataset, objects: self.state.objects.clone() })
    }
}

pub type SessionRef = Arc<RwLock<Session>>;

pub struct AppState {
    sessions: Mutex<BTreeMap<String, SessionRef>>,
    data_dir: Option<PathBuf>,
    modules: ModuleRegistry,
    next_id: AtomicU64,
}

impl AppState {
    /// Reloads every session found under `data_dir/sessions`.
    pub fn open(data_dir: Option<PathBuf>) -> Result<Arc<AppState>, EngineError> {
        let mut sessions = BTreeMap::new();
        let mut max_id = 0;
        if let Some(dir) = &data_dir {
            let root = dir.join("sessions");
            if root.is_dir() {
                let entries = std::fs::read_dir(&root).map_err(|e| EngineError::runtime(format!("{}: {e}", root.display())))?;
                for entry in entries.flatten() {
                    let id = entry.file_name().to_string_lossy().into_owned();
                    let session = load_session(&entry.path())?;
                    if let Some(n) = id.strip_prefix('s').and_then(|n| n.parse::<u64>().ok()) {
                        max_id = max_id.max(n);
                    }
                    sessions.insert(id, Arc::new(RwLock::new(session)));
                }
            }
        }
        Ok(Arc::new(AppState {
            sessions: Mutex::new(sessions),
            data_dir,
            modules: ModuleRegistry::with_shipped(),
            next_id: AtomicU64::new(max_id + 1),
        }))
    }

    pub fn session(&self, id: &str) -> Option<SessionRef> {
        self.sessions.lock().expect("session map lock").get(id).cloned()
    }

    fn lookup(&self, id: &str) -> Result<SessionRef, ApiError> {
        self.session(id).ok_or_else(|| ApiError(EngineError::new(ErrorKind::NotFound, format!("unknown session `{id}`"))))
    }

    fn persist(&self, id: &str, s: &Session) -> Result<(), EngineError> {
        let Some(dir) = &self.data_dir else { return Ok(()) };
        let dir = dir.join("sessions").join(id);
        let io = |e: std::io::Error| EngineError::runtime(format!("{}: {e}", dir.display()));
        std::fs::create_dir_all(&dir).map_err(io)?;
        std::fs::write(dir.join(STATE_FILE), s.state.to_json_string()).map_err(io)?;
        match &s.dataset {
            Some(d) => std::fs::write(dir.join(engine::DATASET_FILE), trackdata::dataset_json_string(d)).map_err(io),
            None => Ok(()),
        }
    }
}

fn load_session(dir: &Path) -> Result<Session, EngineError> {
    let read = |p: PathBuf| std::fs::read_to_string(&p).map_err(|e| EngineError::runtime(format!("{}: {e}", p.display())));
    let state = SessionState::from_json_str(&read(dir.join(STATE_FILE))?)?;
    let dataset_path = dir.join(engine::DATASET_FILE);
    let dataset = if dataset_path.exists() { Some(engine::parse_dataset(&read(dataset_path)?)?) } else { None };
    Ok(Session { state, dataset })
}

pub struct ApiError(pub EngineError);

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        let status = match e.kind {
            ErrorKind::Usage | ErrorKind::Validation => StatusCode::BAD_REQUEST,
            ErrorKind::NotFound => StatusCode::NOT_FOUND,
            ErrorKind::Conflict => StatusCode::CONFLICT,
            ErrorKind::Runtime => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = serde_json::json!({ "error": e.message });
        if !e.diagnostics.is_empty() {
            body["diagnostics"] = serde_json::to_value(&e.diagnostics).expect("diagnostics serialize");
        }
        if e.kind == ErrorKind::NotFound && !e.known.is_empty() {
            body["known"] = serde_json::to_value(&e.known).expect("names serialize");
        }
        (status, json_headers(), body.to_string()).into_response()
    }
}

type ApiResult = Result<Response, ApiError>;

fn json_headers() -> [(header::HeaderName, &'static str); 1] {
    [(header::CONTENT_TYPE, "application/json")]
}

fn json_text(status: StatusCode, text: String) -> Response {
    (status, json_headers(), text).into_response()
}

fn json_value(value: serde_json::Value) -> Response {
    json_text(StatusCode::OK, serde_json::to_string_pretty(&value).expect("value serializes"))
}

fn svg(text: String) -> Response {
    ([(header::CONTENT_TYPE, "image/svg+xml")], text).into_response()
}

fn body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError(EngineError::validation(format!("request body: {e}"))))
}

fn busy() -> ApiError {
    ApiError(EngineError::new(ErrorKind::Conflict, "session busy"))
}

/// Takes the session for writing without queueing behind another writer.
fn try_lock(s: &SessionRef) -> Result<tokio::sync::RwLockWriteGuard<'_, Session>, ApiError> {
    s.try_write().map_err(|_| busy())
}

pub fn app(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/state", get(get_state).post(put_state))
        .route("/sessions/{id}/dataset", get(get_dataset).post(upload_dataset))
        .route("/sessions/{id}/objects", get(get_objects))
        .route("/sessions/{id}/rois", post(add_roi))
        .route("/sessions/{id}/utterance", post(utterance))
        .route("/sessions/{id}/run", post(run))
        .route("/sessions/{id}/behaviors", get(behaviors))
        .route("/sessions/{id}/symbols", get(symbols))
        .route("/sessions/{id}/ethogram.svg", get(ethogram))
        .route("/sessions/{id}/trajectory.svg", get(trajectory))
        .route("/eval", post(eval))
        .route("/retrieve", post(retrieve))
        .with_state(state)
}

pub async fn serve(host: &str, port: u16, data_dir: Option<PathBuf>) -> Result<(), EngineError> {
    let state = AppState::open(data_dir)?;
    let listener = tokio::net::TcpListener::bind((host, port))
        .await
        .map_err(|e| EngineError::runtime(format!("bind {host}:{port}: {e}")))?;
    axum::serve(listener, app(state)).await.map_err(|e| EngineError::runtime(e.to_string()))
}

async fn create_session(State(app): State<Arc<AppState>>) -> ApiResult {
    let id = format!("s{:06}", app.next_id.fetch_add(1, Ordering::SeqCst));
    let session = Session::default();
    app.persist(&id, &session)?;
    app.sessions.lock().expect("session map lock").insert(id.clone(), Arc::new(RwLock::new(session)));
    Ok(json_text(StatusCode::CREATED, serde_json::json!({ "session_id": id }).to_string()))
}

async fn get_state(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let s = app.lookup(&id)?;
    let s = s.read().await;
    Ok(json_text(StatusCode::OK, s.state.to_json_string()))
}

async fn put_state(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, bytes: Bytes) -> ApiResult {
    let text = std::str::from_utf8(&bytes).map_err(|e| ApiError(EngineError::validation(e.to_string())))?;
    let state = SessionState::from_json_str(text).map_err(EngineError::from)?;
    let s = app.lookup(&id)?;
    let mut s = try_lock(&s)?;
    s.state = state;
    app.persist(&id, &s)?;
    Ok(json_value(session_summary(&s.state)))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetUpload {
    /// Dataset in its JSON form.
    dataset: Option<serde_json::Value>,
    /// Keypoints in the long CSV form.
    keypoints_csv: Option<String>,
    objects: Option<serde_json::Value>,
}

async fn upload_dataset(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, bytes: Bytes) -> ApiResult {
    let req: DatasetUpload = body(&bytes)?;
    let (text, format) = match (req.dataset, req.keypoints_csv) {
        (Some(v), None) => (v.to_string(), DataFormat::Json),
        (None, Some(csv)) => (csv, DataFormat::Csv),
        _ => return Err(ApiError(EngineError::validation("give exactly one of `dataset` or `keypoints_csv`"))),
    };
    let objects = req.objects.map(|v| v.to_string());
    let bundle = engine::ingest(&text, format, objects.as_deref())?;
    let s = app.lookup(&id)?;
    let mut s = try_lock(&s)?;
    if objects.is_some() {
        s.state.objects = bundle.objects;
    }
    let summary = serde_json::json!({
        "n_frames": bundle.dataset.n_frames(),
        "animals": bundle.dataset.animal_ids(),
        "bodyparts": bundle.dataset.bodypart_names(),
        "objects": s.state.objects.names(),
    });
    s.dataset = Some(bundle.dataset);
    app.persist(&id, &s)?;
    Ok(json_value(summary))
}

async fn get_dataset(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let s = app.lookup(&id)?;
    let s = s.read().await;
    let d = s.dataset.as_ref().ok_or_else(|| ApiError(EngineError::new(ErrorKind::NotFound, "no dataset uploaded")))?;
    Ok(json_text(StatusCode::OK, trackdata::dataset_json_string(d)))
}

async fn get_objects(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let s = app.lookup(&id)?;
    let s = s.read().await;
    Ok(json_value(serde_json::json!({ "objects": trackdata::get_object_names(&s.state.objects) })))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RoiRequest {
    name: String,
    polygon: Vec<[f64; 2]>,
}

async fn add_roi(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, bytes: Bytes) -> ApiResult {
    let req: RoiRequest = body(&bytes)?;
    let s = app.lookup(&id)?;
    let mut s = try_lock(&s)?;
    let polygon = req.polygon.iter().map(|p| Vec2::new(p[0], p[1])).collect();
    s.state.objects = s.state.objects.add_roi(&req.name, polygon).map_err(EngineError::from)?;
    app.persist(&id, &s)?;
    let names = trackdata::get_object_names(&s.state.objects);
    Ok(json_text(StatusCode::CREATED, serde_json::json!({ "objects": names }).to_string()))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRequest {
    text: String,
}

async fn utterance(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, bytes: Bytes) -> ApiResult {
    let req: UtteranceRequest = body(&bytes)?;
    let s = app.lookup(&id)?;
    let mut s = try_lock(&s)?;
    let outcome = s.state.process_utterance(&req.text).map_err(EngineError::from)?;
    app.persist(&id, &s)?;
    Ok(json_value(serde_json::to_value(&outcome).expect("outcome serializes")))
}

/// Parameter values may be given as strings, numbers or booleans.
fn params_of(raw: BTreeMap<String, serde_json::Value>) -> Result<ParamMap, ApiError> {
    raw.into_iter()
        .map(|(k, v)| match v {
            serde_json::Value::String(s) => Ok((k, s)),
            serde_json::Value::Number(n) => Ok((k, n.to_string())),
            serde_json::Value::Bool(b) => Ok((k, b.to_string())),
            other => Err(ApiError(EngineError::validation(format!("parameter `{k}`: unsupported value {other}")))),
        })
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RunRequest {
    behavior: String,
    #[serde(default)]
    params: BTreeMap<String, serde_json::Value>,
}

async fn run(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>, bytes: Bytes) -> ApiResult {
    let req: RunRequest = body(&bytes)?;
    let params = params_of(req.params)?;
    let s = app.lookup(&id)?;
    let s = s.read().await;
    let events = run_in(&s, &req.behavior, &params)?;
    Ok(json_text(StatusCode::OK, engine::events_json(&events)))
}

fn run_in(s: &Session, behavior: &str, params: &ParamMap) -> Result<EventDict, ApiError> {
    let bundle = s.bundle()?;
    Ok(engine::run_behavior(&s.state.behaviors, behavior, params, &bundle)?)
}

async fn behaviors(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let s = app.lookup(&id)?;
    let s = s.read().await;
    Ok(json_value(serde_json::json!({
        "builtin": BehaviorRegistry::new().names(),
        "user": s.state.behaviors.user_names(),
    })))
}

async fn symbols(State(app): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> ApiResult {
    let s = app.lookup(&id)?;
    let s = s.read().await;
    let symbols: BTreeMap<&String, &String> = s.state.long.iter().collect();
    Ok(json_value(serde_json::json!({ "symbols": symbols })))
}

#[derive(Deserialize)]
struct EthogramQuery {
    behaviors: String,
}

async fn ethogram(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<EthogramQuery>,
) -> ApiResult {
    let s = app.lookup(&id)?;
    let s = s.read().await;
    let mut runs = Vec::new();
    for name in q.behaviors.split(',').map(str::trim).filter(|n| !n.is_empty()) {
        runs.push((name.to_string(), run_in(&s, name, &ParamMap::new())?));
    }
    let refs: Vec<(String, &EventDict)> = runs.iter().map(|(n, d)| (n.clone(), d)).collect();
    Ok(svg(render_ethogram(&refs).map_err(EngineError::from)?))
}

#[derive(Deserialize)]
struct TrajectoryQuery {
    animal: String,
    bodyparts: Option<String>,
    behavior: Option<String>,
}

async fn trajectory(
    State(app): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Query(q): Query<TrajectoryQuery>,
) -> ApiResult {
    let s = app.lookup(&id)?;
    let s = s.read().await;
    let bundle = s.bundle()?;
    let events = match q.behavior.as_deref().filter(|b| !b.is_empty()) {
        Some(b) => Some(run_in(&s, b, &ParamMap::new())?),
        None => None,
    };
    let sel = selection(q.bodyparts.as_deref());
    Ok(svg(render_trajectory(&bundle.dataset, &q.animal, &sel, events.as_ref()).map_err(EngineError::from)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalRequest {
    task: String,
    pred: serde_json::Value,
    labels_csv: String,
}

async fn eval(bytes: Bytes) -> ApiResult {
    let req: EvalRequest = body(&bytes)?;
    let pred = engine::parse_events(&req.pred.to_string())?;
    Ok(json_text(StatusCode::OK, engine::eval_json(&req.task, &pred, &req.labels_csv)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RetrieveRequest {
    query: String,
    k: Option<usize>,
}

async fn retrieve(State(app): State<Arc<AppState>>, bytes: Bytes) -> ApiResult {
    let req: RetrieveRequest = body(&bytes)?;
    Ok(json_text(StatusCode::OK, engine::retrieve_json(&app.modules, &req.query, req.k.unwrap_or(DEFAULT_K))))
}
