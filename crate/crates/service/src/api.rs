//! HTTP API over panel sessions.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use axum::body::{Body, Bytes};
use axum::extract::{Path, Query, Request, State};
use axum::http::{header, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::json;
use tokio::sync::RwLock;

use semantic_panel::edit::{apply_edits, EditError, EditOp};
use semantic_panel::encoder::{
    assemble_condition_map, build_attention_mask, write_attention_mask, write_condition, LatentGrid, PatchGrid,
    TextEmbedder, LATENT_SCALE,
};
use semantic_panel::llm::{Bridge, BridgeError, BridgeErrorKind, SessionLog};
use semantic_panel::palette::Palette;
use semantic_panel::panel::SemanticPanel;
use semantic_panel::render::{encode_image, render_edit, render_panel, ImageKind, RenderConfig};

use crate::config::{Encoding, SharedProvider};
use crate::store::{self, Cause, HistoryEntry, Session, SessionInfo, SessionMeta, SessionMode};

pub const VERSION_HEADER: &str = "x-panel-version";

#[derive(Debug)]
pub enum ApiError {
    BadRequest(String),
    NotFound(String),
    Conflict { expected: u64, actual: u64 },
    Unprocessable(String),
    Provider { stage: String, message: String },
    Unavailable(String),
    Internal(String),
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message, stage) = match self {
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "bad_request", m, None),
            ApiError::NotFound(m) => (StatusCode::NOT_FOUND, "not_found", m, None),
            ApiError::Conflict { expected, actual } => (
                StatusCode::CONFLICT,
                "version_conflict",
                format!("expected version {expected}, session is at {actual}"),
                None,
            ),
            ApiError::Unprocessable(m) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_op", m, None),
            ApiError::Provider { stage, message } => (StatusCode::BAD_GATEWAY, "provider_error", message, Some(stage)),
            ApiError::Unavailable(m) => (StatusCode::SERVICE_UNAVAILABLE, "unavailable", m, None),
            ApiError::Internal(m) => (StatusCode::INTERNAL_SERVER_ERROR, "internal", m, None),
        };
        let mut err = json!({ "code": code, "message": message });
        if let Some(stage) = stage {
            err["stage"] = json!(stage);
        }
        (status, Json(json!({ "error": err }))).into_response()
    }
}

impl From<store::StoreError> for ApiError {
    fn from(e: store::StoreError) -> Self {
        ApiError::Internal(e.to_string())
    }
}

impl From<EditError> for ApiError {
    fn from(e: EditError) -> Self {
        match e {
            EditError::UnknownTarget(_) => ApiError::NotFound(e.to_string()),
            other => ApiError::Unprocessable(other.to_string()),
        }
    }
}

impl From<BridgeError> for ApiError {
    fn from(e: BridgeError) -> Self {
        match &e.kind {
            BridgeErrorKind::Provider(_) | BridgeErrorKind::Unparseable { .. } => {
                ApiError::Provider { stage: e.stage.to_string(), message: e.to_string() }
            }
            BridgeErrorKind::EmptyInput(_) | BridgeErrorKind::Invalid(_) => ApiError::Unprocessable(e.to_string()),
            BridgeErrorKind::Template(_) => ApiError::Internal(e.to_string()),
        }
    }
}

type ApiResult<T> = Result<T, ApiError>;
type SessionHandle = Arc<RwLock<Session>>;

pub struct AppState {
    sessions: parking_lot::RwLock<HashMap<String, SessionHandle>>,
    data_dir: Option<PathBuf>,
    bridge: Option<Arc<Bridge<SharedProvider>>>,
    encoding: Encoding,
    palette: &'static Palette,
}

impl AppState {
    /// In-memory state unless `data_dir` is given, in which case existing
    /// session files there are loaded.
    pub fn new(data_dir: Option<PathBuf>, provider: Option<SharedProvider>, encoding: Encoding) -> Result<Self, String> {
        let mut sessions = HashMap::new();
        if let Some(dir) = &data_dir {
            std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
            let (loaded, errors) = store::load_dir(dir).map_err(|e| e.to_string())?;
            for e in errors {
                tracing::warn!("skipping session file: {e}");
            }
            for s in loaded {
                sessions.insert(s.meta.id.clone(), Arc::new(RwLock::new(s)));
            }
        }
        Ok(Self {
            sessions: parking_lot::RwLock::new(sessions),
            data_dir,
            bridge: provider.map(|p| Arc::new(Bridge::new(p))),
            encoding,
            palette: Palette::standard(),
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().len()
    }

    fn session(&self, id: &str) -> ApiResult<SessionHandle> {
        self.sessions.read().get(id).cloned().ok_or_else(|| ApiError::NotFound(format!("unknown session {id}")))
    }

    fn bridge(&self) -> ApiResult<Arc<Bridge<SharedProvider>>> {
        self.bridge.clone().ok_or_else(|| ApiError::Unavailable("no chat provider configured".into()))
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/history", get(get_history))
        .route("/sessions/{id}/ops", post(post_ops))
        .route("/sessions/{id}/chat", post(post_chat))
        .route("/sessions/{id}/undo", post(post_undo))
        .route("/sessions/{id}/condition", get(get_condition))
        .route("/sessions/{id}/attention", get(get_attention))
        .route("/sessions/{id}/render", get(get_render))
        .route("/sessions/{id}/render_edit", get(get_render_edit))
        .layer(middleware::from_fn(log_requests))
        .with_state(state)
}

async fn log_requests(req: Request, next: Next) -> Response {
    let (method, path) = (req.method().clone(), req.uri().path().to_string());
    let start = Instant::now();
    let resp = next.run(req).await;
    tracing::info!(%method, %path, status = resp.status().as_u16(), elapsed_ms = start.elapsed().as_millis() as u64, "request");
    resp
}

/// Parse a JSON body: syntax errors are 400, shape errors 422.
fn parse_body<T: serde::de::DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| {
        if e.is_data() {
            ApiError::Unprocessable(e.to_string())
        } else {
            ApiError::BadRequest(e.to_string())
        }
    })
}

fn check_version(expected: Option<u64>, session: &Session) -> ApiResult<()> {
    match expected {
        Some(v) if v != session.version() => Err(ApiError::Conflict { expected: v, actual: session.version() }),
        _ => Ok(()),
    }
}

#[derive(Serialize)]
struct PanelResponse<'a> {
    session: SessionInfo,
    panel: &'a SemanticPanel,
}

#[derive(Serialize)]
struct EditResponse<'a> {
    session: SessionInfo,
    panel: &'a SemanticPanel,
    ops: &'a [EditOp],
    changed: bool,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    #[serde(default)]
    prompt: String,
    #[serde(default = "default_mode")]
    mode: SessionMode,
}

fn default_mode() -> SessionMode {
    SessionMode::Empty
}

async fn create_session(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<Response> {
    let body: CreateBody = parse_body(&body)?;
    let (panel, log) = match body.mode {
        SessionMode::Empty => (SemanticPanel::new(body.prompt.clone()), None),
        SessionMode::Llm => {
            let bridge = state.bridge()?;
            let prompt = body.prompt.clone();
            let (result, log) = tokio::task::spawn_blocking(move || {
                let mut log = SessionLog::default();
                (bridge.text_to_panel(&prompt, &mut log), log)
            })
            .await
            .map_err(|e| ApiError::Internal(e.to_string()))?;
            (result?, Some(log))
        }
    };
    let now = Utc::now();
    let meta = SessionMeta { id: uuid::Uuid::new_v4().to_string(), mode: body.mode, prompt: body.prompt, created_at: now };
    let first = HistoryEntry {
        version: 0,
        parent: None,
        cause: Cause::Create,
        ops: vec![],
        instruction: None,
        restored: None,
        at: now,
        panel,
        log,
    };
    let session = Session::create(meta, first, state.data_dir.as_deref())?;
    let resp = Json(PanelResponse { session: session.info(), panel: &session.head().panel }).into_response();
    state.sessions.write().insert(session.meta.id.clone(), Arc::new(RwLock::new(session)));
    Ok((StatusCode::CREATED, resp).into_response())
}

#[derive(Deserialize)]
struct VersionQuery {
    version: Option<u64>,
}

fn entry_at(session: &Session, version: Option<u64>) -> ApiResult<&HistoryEntry> {
    match version {
        None => Ok(session.head()),
        Some(v) => session.get(v).ok_or_else(|| ApiError::NotFound(format!("no version {v}"))),
    }
}

async fn get_session(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<VersionQuery>,
) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let s = handle.read().await;
    let entry = entry_at(&s, q.version)?;
    Ok(Json(PanelResponse { session: s.info(), panel: &entry.panel }).into_response())
}

async fn get_history(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let s = handle.read().await;
    Ok(Json(json!({ "session": s.info(), "versions": s.history() })).into_response())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OpsBody {
    Bare(Vec<EditOp>),
    Batch {
        #[serde(default)]
        expected_version: Option<u64>,
        ops: Vec<EditOp>,
    },
}

async fn post_ops(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let (expected, ops) = match parse_body::<OpsBody>(&body)? {
        OpsBody::Bare(ops) => (None, ops),
        OpsBody::Batch { expected_version, ops } => (expected_version, ops),
    };
    let mut s = handle.write().await;
    check_version(expected, &s)?;
    if ops.is_empty() {
        return Err(ApiError::Unprocessable("empty op batch".into()));
    }
    let head = s.head();
    let next = apply_edits(&head.panel, &ops)?;
    let entry = HistoryEntry {
        version: next.version,
        parent: Some(head.version),
        cause: Cause::Ops,
        ops: ops.clone(),
        instruction: None,
        restored: None,
        at: Utc::now(),
        panel: next,
        log: None,
    };
    s.append(entry)?;
    let head = s.head();
    Ok(Json(EditResponse { session: s.info(), panel: &head.panel, ops: &head.ops, changed: true }).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChatBody {
    instruction: String,
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn post_chat(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let body: ChatBody = parse_body(&body)?;
    if body.instruction.trim().is_empty() {
        return Err(ApiError::Unprocessable("empty instruction".into()));
    }
    let bridge = state.bridge()?;
    let mut s = handle.write().await;
    check_version(body.expected_version, &s)?;
    let current = s.head().panel.clone();
    let instruction = body.instruction.clone();
    let (result, log) = tokio::task::spawn_blocking(move || {
        let mut log = SessionLog::default();
        (bridge.chat_edit(&current, &instruction, &mut log), log)
    })
    .await
    .map_err(|e| ApiError::Internal(e.to_string()))?;
    let edit = result?;
    if edit.ops.is_empty() {
        let head = s.head();
        return Ok(Json(EditResponse { session: s.info(), panel: &head.panel, ops: &[], changed: false }).into_response());
    }
    let entry = HistoryEntry {
        version: edit.panel.version,
        parent: Some(s.version()),
        cause: Cause::Chat,
        ops: edit.ops,
        instruction: Some(body.instruction),
        restored: None,
        at: Utc::now(),
        panel: edit.panel,
        log: Some(log),
    };
    s.append(entry)?;
    let head = s.head();
    Ok(Json(EditResponse { session: s.info(), panel: &head.panel, ops: &head.ops, changed: true }).into_response())
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct UndoBody {
    #[serde(default)]
    expected_version: Option<u64>,
}

async fn post_undo(State(state): State<Arc<AppState>>, Path(id): Path<String>, body: Bytes) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let body: UndoBody = if body.iter().all(u8::is_ascii_whitespace) { UndoBody::default() } else { parse_body(&body)? };
    let mut s = handle.write().await;
    check_version(body.expected_version, &s)?;
    let target = s.undo_target().ok_or_else(|| ApiError::Unprocessable("nothing to undo".into()))?;
    let version = s.version() + 1;
    let mut panel = target.panel.clone();
    panel.version = version;
    let entry = HistoryEntry {
        version,
        parent: target.parent,
        cause: Cause::Undo,
        ops: vec![],
        instruction: None,
        restored: Some(target.version),
        at: Utc::now(),
        panel,
        log: None,
    };
    s.append(entry)?;
    let head = s.head();
    Ok(Json(EditResponse { session: s.info(), panel: &head.panel, ops: &[], changed: true }).into_response())
}

#[derive(Deserialize)]
struct ImageQuery {
    w: Option<u32>,
    h: Option<u32>,
    version: Option<u64>,
    patch: Option<u32>,
}

fn binary(content_type: &'static str, version: u64, bytes: Vec<u8>) -> Response {
    let mut resp = Response::new(Body::from(bytes));
    resp.headers_mut().insert(header::CONTENT_TYPE, HeaderValue::from_static(content_type));
    resp.headers_mut().insert(VERSION_HEADER, HeaderValue::from(version));
    resp
}

async fn get_condition(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let s = handle.read().await;
    let entry = entry_at(&s, q.version)?;
    let (w, h) = (q.w.unwrap_or(512) as usize, q.h.unwrap_or(512) as usize);
    let enc = &state.encoding;
    let grid = LatentGrid::for_image(w, h, enc.weights.channels).map_err(|e| ApiError::BadRequest(e.to_string()))?;
    let map = assemble_condition_map(&entry.panel, &grid, &enc.embedder, &enc.weights)
        .map_err(|e| ApiError::Internal(e.to_string()))?;
    let mut buf = Vec::new();
    write_condition(&mut buf, &map.data).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(binary("application/octet-stream", entry.version, buf))
}

async fn get_attention(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let s = handle.read().await;
    let entry = entry_at(&s, q.version)?;
    let (w, h, patch) = (q.w.unwrap_or(512), q.h.unwrap_or(512), q.patch.unwrap_or(16));
    if patch == 0 || w == 0 || h == 0 || w % patch != 0 || h % patch != 0 {
        return Err(ApiError::BadRequest(format!("{w}x{h} is not a positive multiple of patch size {patch}")));
    }
    let grid = PatchGrid::new((h / patch) as usize, (w / patch) as usize);
    let tokens = state.encoding.embedder.tokenize(&entry.panel.prompt);
    let mask = build_attention_mask(&entry.panel, grid, &tokens, &state.encoding.embedder);
    let mut buf = Vec::new();
    write_attention_mask(&mut buf, &mask).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(binary("application/octet-stream", entry.version, buf))
}

fn render_config(q_w: Option<u32>, q_h: Option<u32>) -> ApiResult<RenderConfig> {
    let cfg = RenderConfig::sized(q_w.unwrap_or(256), q_h.unwrap_or(256));
    cfg.check().map_err(|e| ApiError::BadRequest(format!("{e} (latent scale {LATENT_SCALE})")))?;
    Ok(cfg)
}

async fn get_render(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<ImageQuery>,
) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let s = handle.read().await;
    let entry = entry_at(&s, q.version)?;
    let cfg = render_config(q.w, q.h)?;
    let img = render_panel(&entry.panel, &cfg, state.palette).map_err(|e| ApiError::Internal(e.to_string()))?;
    let png = encode_image(&img, ImageKind::Png).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(binary("image/png", entry.version, png))
}

#[derive(Deserialize)]
struct EditQuery {
    from: Option<u64>,
    to: Option<u64>,
    w: Option<u32>,
    h: Option<u32>,
}

async fn get_render_edit(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    Query(q): Query<EditQuery>,
) -> ApiResult<Response> {
    let handle = state.session(&id)?;
    let s = handle.read().await;
    let to = entry_at(&s, q.to)?;
    let from = entry_at(&s, Some(q.from.unwrap_or(to.version.saturating_sub(1))))?;
    let cfg = render_config(q.w, q.h)?;
    let img = render_edit(&from.panel, &to.panel, &cfg, state.palette).map_err(|e| ApiError::Internal(e.to_string()))?;
    let png = encode_image(&img, ImageKind::Png).map_err(|e| ApiError::Internal(e.to_string()))?;
    Ok(binary("image/png", to.version, png))
}
