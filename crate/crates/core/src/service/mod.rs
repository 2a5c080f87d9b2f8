//! HTTP service accepting sketch submissions and returning assessments.
//!
//! Routes:
//! - `POST /v1/submissions` stores an envelope, `201 {record_id}`
//! - `POST /v1/submissions/{id}/assess` captions, runs the model, stores and returns the assessment
//! - `GET /v1/submissions/{id}` returns the stored record with the questionnaire reduced to its label
//! - `GET /v1/preview/{id}?size=96` returns the 12 cumulative frames as base64 PNG
//! - `GET /v1/health`

mod store;

pub use store::{Store, StoreError, LOG_FILE};

use crate::caption::{generate_caption, CaptionCache, CaptionClient, CaptionError, CaptionRecord, MentalPrompt, RetryPolicy};
use crate::eval::Phq9Response;
use crate::model::{Assessment, CaptionRef, VsLlm};
use crate::sketch::{decompose, parse_sketch_json, rasterize, Sketch, SketchError, DEFAULT_RASTER_SIZE};
use axum::body::Bytes;
use axum::extract::rejection::BytesRejection;
use axum::extract::{DefaultBodyLimit, Path, Query, Request, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use base64::Engine;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, RwLock};
use tower_http::cors::{AllowOrigin, CorsLayer};

/// Request bodies above this size are refused with 413.
pub const MAX_BODY_BYTES: usize = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubmissionEnvelope {
    /// Pseudonymous participant id.
    pub participant_ref: String,
    pub sketch: Sketch,
    #[serde(default)]
    pub phq9: Option<Phq9Response>,
    pub client_version: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EnvelopeDoc {
    participant_ref: String,
    sketch: serde_json::Value,
    #[serde(default)]
    phq9: Option<Phq9Response>,
    client_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredRecord {
    pub record_id: u64,
    pub envelope: SubmissionEnvelope,
    pub assessment: Option<Assessment>,
    pub caption: Option<CaptionRecord>,
    pub created_at: u64,
    pub assessed_at: Option<u64>,
}

/// What `GET /v1/submissions/{id}` returns. Questionnaire answers are
/// reduced to the derived label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordView {
    pub record_id: u64,
    pub participant_ref: String,
    pub client_version: String,
    pub sketch: Sketch,
    pub phq9_label: Option<usize>,
    pub assessment: Option<Assessment>,
    pub caption: Option<CaptionRecord>,
    pub created_at: u64,
    pub assessed_at: Option<u64>,
}

impl From<&StoredRecord> for RecordView {
    fn from(r: &StoredRecord) -> Self {
        RecordView {
            record_id: r.record_id,
            participant_ref: r.envelope.participant_ref.clone(),
            client_version: r.envelope.client_version.clone(),
            sketch: r.envelope.sketch.clone(),
            phq9_label: r.envelope.phq9.map(|p| p.label()),
            assessment: r.assessment.clone(),
            caption: r.caption.clone(),
            created_at: r.created_at,
            assessed_at: r.assessed_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preview {
    pub record_id: u64,
    pub content_type: String,
    pub width: u32,
    pub height: u32,
    pub cumulative_counts: Vec<usize>,
    /// Base64 PNG, one per cumulative frame.
    pub frames: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    pub prompt: MentalPrompt,
    pub retry: RetryPolicy,
    pub bearer_token: Option<String>,
    /// Allowed browser origins; empty allows any.
    pub cors_origins: Vec<String>,
}

pub struct ServiceState {
    store: Store,
    cache: CaptionCache,
    client: Arc<dyn CaptionClient>,
    model: RwLock<Option<Arc<VsLlm>>>,
    config: ServiceConfig,
    assess_lock: tokio::sync::Mutex<()>,
}

impl ServiceState {
    pub fn new(
        store: Store,
        cache: CaptionCache,
        client: Arc<dyn CaptionClient>,
        model: Option<VsLlm>,
        config: ServiceConfig,
    ) -> Arc<Self> {
        Arc::new(ServiceState {
            store,
            cache,
            client,
            model: RwLock::new(model.map(Arc::new)),
            config,
            assess_lock: tokio::sync::Mutex::new(()),
        })
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Replaces the served model; in-flight requests keep the old one.
    pub fn set_model(&self, model: Option<VsLlm>) {
        *self.model.write().unwrap() = model.map(Arc::new);
    }

    fn model(&self) -> Option<Arc<VsLlm>> {
        self.model.read().unwrap().clone()
    }
}

#[derive(Debug, Serialize)]
struct ApiErrorBody {
    error: &'static str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

#[derive(Debug)]
struct ApiError {
    status: StatusCode,
    body: ApiErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ApiErrorBody {
                error,
                message: message.into(),
                path: None,
            },
        }
    }

    fn schema(path: impl Into<String>, message: impl Into<String>) -> Self {
        let mut e = ApiError::new(StatusCode::BAD_REQUEST, "SchemaError", message);
        e.body.path = Some(path.into());
        e
    }

    fn unknown(id: &str) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, "UnknownRecord", format!("no record `{id}`"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        json_response(self.status, &self.body)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::UnknownRecord(id) => ApiError::unknown(&id.to_string()),
            other => ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "StoreUnavailable", other.to_string()),
        }
    }
}

fn json_response(status: StatusCode, value: &impl Serialize) -> Response {
    let body = serde_json::to_vec(value).expect("response types serialize");
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

pub fn router(state: Arc<ServiceState>) -> Router {
    let cors = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE, header::AUTHORIZATION]);
    let cors = if state.config.cors_origins.is_empty() {
        cors.allow_origin(AllowOrigin::any())
    } else {
        let origins: Vec<HeaderValue> = state
            .config
            .cors_origins
            .iter()
            .filter_map(|o| HeaderValue::from_str(o).ok())
            .collect();
        cors.allow_origin(AllowOrigin::list(origins))
    };
    Router::new()
        .route("/v1/submissions", post(submit))
        .route("/v1/submissions/{id}", get(get_record))
        .route("/v1/submissions/{id}/assess", post(assess))
        .route("/v1/preview/{id}", get(preview))
        .route("/v1/health", get(health))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .layer(DefaultBodyLimit::max(MAX_BODY_BYTES))
        .layer(cors)
        .with_state(state)
}

pub async fn serve(listener: tokio::net::TcpListener, state: Arc<ServiceState>) -> std::io::Result<()> {
    axum::serve(listener, router(state)).await
}

async fn require_token(State(state): State<Arc<ServiceState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.config.bearer_token {
        let ok = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "))
            .is_some_and(|t| t == token);
        if !ok {
            return ApiError::new(StatusCode::UNAUTHORIZED, "Unauthorized", "missing or wrong bearer token").into_response();
        }
    }
    next.run(req).await
}

fn parse_envelope(body: &[u8]) -> Result<SubmissionEnvelope, ApiError> {
    let de = &mut serde_json::Deserializer::from_slice(body);
    let doc: EnvelopeDoc = serde_path_to_error::deserialize(de)
        .map_err(|e| ApiError::schema(e.path().to_string(), e.inner().to_string()))?;
    if doc.participant_ref.trim().is_empty() {
        return Err(ApiError::schema("participant_ref", "participant_ref must be nonempty"));
    }
    let raw = serde_json::to_vec(&doc.sketch).expect("value serializes");
    let sketch = parse_sketch_json(&raw).map_err(|e| match e {
        SketchError::EmptySketch => {
            let mut err = ApiError::new(StatusCode::BAD_REQUEST, "EmptySketch", e.to_string());
            err.body.path = Some("sketch.strokes".into());
            err
        }
        SketchError::Schema { path, message } => ApiError::schema(format!("sketch.{path}"), message),
        other => ApiError::schema("sketch", other.to_string()),
    })?;
    Ok(SubmissionEnvelope {
        participant_ref: doc.participant_ref,
        sketch,
        phq9: doc.phq9,
        client_version: doc.client_version,
    })
}

async fn submit(State(state): State<Arc<ServiceState>>, body: Result<Bytes, BytesRejection>) -> Result<Response, ApiError> {
    let body = body.map_err(|r| {
        let status = r.status();
        let kind = if status == StatusCode::PAYLOAD_TOO_LARGE {
            "PayloadTooLarge"
        } else {
            "BadRequest"
        };
        ApiError::new(status, kind, r.body_text())
    })?;
    let envelope = parse_envelope(&body)?;
    let st = state.clone();
    let record_id = tokio::task::spawn_blocking(move || st.store.submit(envelope))
        .await
        .map_err(|e| ApiError::new(StatusCode::SERVICE_UNAVAILABLE, "StoreUnavailable", e.to_string()))??;
    Ok(json_response(StatusCode::CREATED, &serde_json::json!({ "record_id": record_id })))
}

fn lookup(state: &ServiceState, id: &str) -> Result<Arc<StoredRecord>, ApiError> {
    id.parse::<u64>()
        .ok()
        .and_then(|n| state.store.get(n))
        .ok_or_else(|| ApiError::unknown(id))
}

async fn get_record(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let rec = lookup(&state, &id)?;
    Ok(json_response(StatusCode::OK, &RecordView::from(rec.as_ref())))
}

fn caption_error(e: CaptionError) -> ApiError {
    match e {
        CaptionError::ProviderTimeout { .. } => ApiError::new(StatusCode::BAD_GATEWAY, "ProviderTimeout", e.to_string()),
        CaptionError::ProviderRejection(_) => ApiError::new(StatusCode::BAD_GATEWAY, "ProviderRejection", e.to_string()),
        other => ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "CaptionError", other.to_string()),
    }
}

async fn assess(State(state): State<Arc<ServiceState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let rec = lookup(&state, &id)?;
    if let Some(a) = &rec.assessment {
        return Ok(json_response(StatusCode::OK, a));
    }
    let model = state
        .model()
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "ModelNotLoaded", "no checkpoint is loaded"))?;
    let _guard = state.assess_lock.lock().await;
    let rec = lookup(&state, &id)?;
    if let Some(a) = &rec.assessment {
        return Ok(json_response(StatusCode::OK, a));
    }
    let st = state.clone();
    let stored = tokio::task::spawn_blocking(move || -> Result<Arc<StoredRecord>, ApiError> {
        let sketch = &rec.envelope.sketch;
        let caption = generate_caption(sketch, &st.config.prompt, st.client.as_ref(), &st.cache, &st.config.retry)
            .map_err(caption_error)?;
        let mut assessment = model
            .forward(sketch, &caption.caption_text)
            .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "InferenceError", e.to_string()))?;
        assessment.caption_used = Some(CaptionRef {
            sketch_hash: caption.sketch_hash.clone(),
            template_version: caption.template_version.clone(),
        });
        Ok(st.store.record_assessment(rec.record_id, assessment, Some(caption))?)
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "InferenceError", e.to_string()))??;
    Ok(json_response(StatusCode::OK, stored.assessment.as_ref().expect("just stored")))
}

#[derive(Deserialize)]
struct PreviewQuery {
    size: Option<u32>,
}

async fn preview(
    State(state): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    Query(q): Query<PreviewQuery>,
) -> Result<Response, ApiError> {
    let rec = lookup(&state, &id)?;
    let size = q.size.unwrap_or(DEFAULT_RASTER_SIZE);
    if !(16..=512).contains(&size) {
        return Err(ApiError::schema("size", "size must be within 16..=512"));
    }
    let body = tokio::task::spawn_blocking(move || -> Result<Preview, SketchError> {
        let seq = decompose(&rec.envelope.sketch)?;
        let frames = seq
            .sub_sketches
            .iter()
            .map(|s| rasterize(s, size, size).map(|img| base64::engine::general_purpose::STANDARD.encode(img.to_png())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Preview {
            record_id: rec.record_id,
            content_type: "image/png".into(),
            width: size,
            height: size,
            cumulative_counts: seq.cumulative_counts.to_vec(),
            frames,
        })
    })
    .await
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "RenderError", e.to_string()))?
    .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "RenderError", e.to_string()))?;
    Ok(json_response(StatusCode::OK, &body))
}

async fn health(State(state): State<Arc<ServiceState>>) -> Response {
    json_response(
        StatusCode::OK,
        &serde_json::json!({
            "status": "ok",
            "model_loaded": state.model().is_some(),
            "records": state.store.len(),
        }),
    )
}
