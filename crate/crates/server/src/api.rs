//! The `/api/v1` routes. Each handler forwards to one [`ReviewService`]
//! method; authentication and idempotency run as middleware in front.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Mutex};

use axum::body::{to_bytes, Body};
use axum::extract::{DefaultBodyLimit, FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode};
use axum::middleware::{from_fn_with_state, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Extension, Json, Router};
use serde::Deserialize;
use serde_json::json;
use sha2::{Digest, Sha256};
use sieve_core::auto_screen::{ClassifierKind, QaBatch};
use sieve_core::catalog::{CriterionId, PaperId, ProtocolDraft, ReviewId, ReviewProtocol, ReviewerId, ScreeningDecision};
use sieve_core::config::AuthConfig;
use sieve_core::error::Error;
use sieve_core::ingest::{ImportReport, SourceKind};
use sieve_core::persistence::IdempotentResponse;
use sieve_core::screening::{DecisionSubmission, NextItem, Progress};
use sieve_core::search::SearchRun;
use sieve_core::service::{ClassifierSummary, PredictionReport, ReviewService};

use crate::error::ApiError;

pub const IDEMPOTENCY_HEADER: &str = "idempotency-key";
pub const REPLAYED_HEADER: &str = "idempotent-replayed";

/// Extra room for multipart framing on top of the upload limit.
const FRAMING_SLACK: usize = 1024 * 1024;

#[derive(Clone)]
pub struct AppState {
    service: Arc<ReviewService>,
    auth: Arc<AuthConfig>,
    in_flight: Arc<Mutex<HashSet<String>>>,
}

impl AppState {
    pub fn new(service: Arc<ReviewService>, auth: AuthConfig) -> Self {
        AppState { service, auth: Arc::new(auth), in_flight: Arc::default() }
    }

    fn body_limit(&self) -> usize {
        self.service.upload_limit() + FRAMING_SLACK
    }
}

/// The authenticated reviewer, if any.
#[derive(Debug, Clone, Default)]
pub struct Caller(pub Option<ReviewerId>);

type ApiResult<T> = Result<T, ApiError>;

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/reviews", post(create_review))
        .route("/reviews/{id}", get(get_review))
        .route("/reviews/{id}/protocol", put(update_protocol))
        .route("/reviews/{id}/search", post(run_search))
        .route("/reviews/{id}/search-runs", get(search_runs))
        .route("/reviews/{id}/import", post(import))
        .route("/reviews/{id}/next-item", get(next_item))
        .route("/reviews/{id}/decisions", post(submit_decision))
        .route("/reviews/{id}/progress", get(progress))
        .route("/reviews/{id}/classifiers/{kind}/retrain", post(retrain))
        .route("/reviews/{id}/classifiers/{kind}/predict", post(predict))
        .route("/reviews/{id}/qa", post(qa))
        .route("/reviews/{id}/export", get(export));

    let limit = state.body_limit();
    Router::new()
        .route("/healthz", get(healthz))
        .nest("/api/v1", api)
        .fallback(not_found)
        .method_not_allowed_fallback(method_not_allowed)
        .layer(from_fn_with_state(state.clone(), idempotency))
        .layer(from_fn_with_state(state.clone(), authenticate))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

fn is_mutation(method: &Method) -> bool {
    !matches!(*method, Method::GET | Method::HEAD | Method::OPTIONS)
}

// JSON bodies with rejections reported in the API error shape
pub struct ApiJson<T>(pub T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    Json<T>: FromRequest<S, Rejection = axum::extract::rejection::JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, Self::Rejection> {
        match Json::<T>::from_request(req, state).await {
            Ok(Json(v)) => Ok(ApiJson(v)),
            Err(r) => Err(ApiError::new(r.status(), "bad_request", r.body_text())),
        }
    }
}

async fn healthz() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such endpoint")
}

async fn method_not_allowed() -> ApiError {
    ApiError::new(StatusCode::METHOD_NOT_ALLOWED, "method_not_allowed", "method not allowed on this endpoint")
}

// middleware

fn bearer(headers: &HeaderMap) -> Option<&str> {
    headers
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

async fn authenticate(State(state): State<AppState>, mut req: Request, next: Next) -> Response {
    let caller = match bearer(req.headers()) {
        Some(token) => match state.auth.reviewer_for(token) {
            Some(r) => Some(ReviewerId::new(r)),
            None if state.auth.enabled => return ApiError::unauthorized().into_response(),
            None => None,
        },
        None => None,
    };
    if state.auth.enabled && caller.is_none() && is_mutation(req.method()) {
        return ApiError::unauthorized().into_response();
    }
    req.extensions_mut().insert(Caller(caller));
    next.run(req).await
}

struct InFlight {
    set: Arc<Mutex<HashSet<String>>>,
    key: String,
}

impl Drop for InFlight {
    fn drop(&mut self) {
        self.set.lock().unwrap_or_else(|p| p.into_inner()).remove(&self.key);
    }
}

fn fingerprint(method: &Method, uri: &axum::http::Uri, body: &[u8]) -> String {
    let mut h = Sha256::new();
    for part in [method.as_str().as_bytes(), uri.to_string().as_bytes(), body] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    hex::encode(h.finalize())
}

fn replay(cached: IdempotentResponse) -> Response {
    let status = StatusCode::from_u16(cached.status).unwrap_or(StatusCode::OK);
    let mut response = (status, cached.body).into_response();
    let headers = response.headers_mut();
    headers.insert(header::CONTENT_TYPE, HeaderValue::from_static("application/json"));
    headers.insert(REPLAYED_HEADER, HeaderValue::from_static("true"));
    response
}

/// Mutations carrying an idempotency key run once; later requests with the
/// same key and the same method, URI and body get the stored response.
/// Server errors are not stored, so those requests can be retried.
async fn idempotency(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if !is_mutation(req.method()) {
        return next.run(req).await;
    }
    let Some(key) = req.headers().get(IDEMPOTENCY_HEADER) else {
        return next.run(req).await;
    };
    let key = match key.to_str() {
        Ok(k) if !k.is_empty() && k.len() <= 255 => k.to_owned(),
        _ => return ApiError::bad_request("idempotency key must be 1 to 255 visible ASCII characters").into_response(),
    };
    let caller = req.extensions().get::<Caller>().and_then(|c| c.0.clone());
    let scoped = format!("{}:{key}", caller.as_ref().map_or("", |r| r.as_str()));

    let (parts, body) = req.into_parts();
    let bytes = match to_bytes(body, state.body_limit()).await {
        Ok(b) => b,
        Err(_) => {
            return ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", "request body too large")
                .into_response()
        }
    };
    let print = fingerprint(&parts.method, &parts.uri, &bytes);

    let store = state.service.store();
    match store.read(|tx| tx.idempotent_response(&scoped)) {
        Ok(Some(cached)) if cached.fingerprint == print => return replay(cached),
        Ok(Some(_)) => {
            return ApiError::new(
                StatusCode::UNPROCESSABLE_ENTITY,
                "idempotency_key_reused",
                "this idempotency key was used for a different request",
            )
            .into_response()
        }
        Ok(None) => {}
        Err(e) => return ApiError::from(e).into_response(),
    }

    let _guard = {
        let mut set = state.in_flight.lock().unwrap_or_else(|p| p.into_inner());
        if !set.insert(scoped.clone()) {
            return ApiError::new(
                StatusCode::CONFLICT,
                "idempotency_in_flight",
                "a request with this idempotency key is still running",
            )
            .into_response();
        }
        InFlight { set: Arc::clone(&state.in_flight), key: scoped.clone() }
    };

    let response = next.run(Request::from_parts(parts, Body::from(bytes))).await;
    let (parts, body) = response.into_parts();
    let bytes = match to_bytes(body, usize::MAX).await {
        Ok(b) => b,
        Err(e) => {
            return ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal_error", e.to_string()).into_response()
        }
    };
    if !parts.status.is_server_error() {
        let cached = IdempotentResponse {
            fingerprint: print,
            status: parts.status.as_u16(),
            body: String::from_utf8_lossy(&bytes).into_owned(),
        };
        if let Err(e) = store.write(|tx| tx.store_idempotent_response(&scoped, &cached, chrono::Utc::now())) {
            tracing::warn!("could not store idempotent response: {e}");
        }
    }
    Response::from_parts(parts, Body::from(bytes))
}

// reviews

async fn create_review(
    State(s): State<AppState>,
    ApiJson(draft): ApiJson<ProtocolDraft>,
) -> ApiResult<(StatusCode, Json<ReviewProtocol>)> {
    Ok((StatusCode::CREATED, Json(s.service.create_review(draft)?)))
}

async fn get_review(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<ReviewProtocol>> {
    Ok(Json(s.service.review(&ReviewId::new(id))?))
}

async fn update_protocol(
    State(s): State<AppState>,
    Path(id): Path<String>,
    ApiJson(draft): ApiJson<ProtocolDraft>,
) -> ApiResult<Json<ReviewProtocol>> {
    Ok(Json(s.service.update_protocol(&ReviewId::new(id), draft).await?))
}

// search and import

async fn run_search(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<SearchRun>> {
    Ok(Json(s.service.run_search(&ReviewId::new(id)).await?))
}

async fn search_runs(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Vec<SearchRun>>> {
    Ok(Json(s.service.search_runs(&ReviewId::new(id))?))
}

fn multipart_error(e: axum::extract::multipart::MultipartError) -> ApiError {
    if e.status() == StatusCode::PAYLOAD_TOO_LARGE {
        ApiError::new(StatusCode::PAYLOAD_TOO_LARGE, "payload_too_large", e.body_text())
    } else {
        ApiError::bad_request(e.body_text())
    }
}

/// Multipart fields: `kind` (ris, bib or pdf), optional `seed` (true or
/// false) and `file`.
async fn import(
    State(s): State<AppState>,
    Path(id): Path<String>,
    mut form: Multipart,
) -> ApiResult<Json<ImportReport>> {
    let limit = s.service.upload_limit();
    let (mut kind, mut seed, mut payload) = (None, false, None);
    while let Some(mut field) = form.next_field().await.map_err(multipart_error)? {
        match field.name() {
            Some("kind") => {
                let text = field.text().await.map_err(multipart_error)?;
                kind = Some(text.trim().parse::<SourceKind>().map_err(Error::from)?);
            }
            Some("seed") => {
                seed = match field.text().await.map_err(multipart_error)?.trim() {
                    "true" | "1" => true,
                    "false" | "0" | "" => false,
                    other => return Err(Error::validation("seed", format!("expected true or false, got {other:?}")).into()),
                };
            }
            Some("file") => {
                let mut bytes = Vec::new();
                while let Some(chunk) = field.chunk().await.map_err(multipart_error)? {
                    bytes.extend_from_slice(&chunk);
                    if bytes.len() > limit {
                        return Err(Error::PayloadTooLarge { size: bytes.len(), limit }.into());
                    }
                }
                payload = Some(bytes);
            }
            _ => {}
        }
    }
    let kind = kind.ok_or_else(|| Error::validation("kind", "the kind field is required"))?;
    let payload = payload.ok_or_else(|| Error::validation("file", "the file field is required"))?;
    Ok(Json(s.service.import(&ReviewId::new(id), kind, payload, seed).await?))
}

// screening

async fn next_item(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Extension(caller): Extension<Caller>,
    Query(params): Query<HashMap<String, String>>,
) -> ApiResult<Json<NextItem>> {
    let reviewer = match (params.get("reviewer"), caller.0) {
        (Some(r), _) => ReviewerId::new(r.as_str()),
        (None, Some(r)) => r,
        (None, None) => return Err(ApiError::bad_request("the reviewer query parameter is required")),
    };
    Ok(Json(s.service.next_item(&ReviewId::new(id), &reviewer)?))
}

async fn submit_decision(
    State(s): State<AppState>,
    Path(id): Path<String>,
    Extension(caller): Extension<Caller>,
    ApiJson(submission): ApiJson<DecisionSubmission>,
) -> ApiResult<(StatusCode, Json<ScreeningDecision>)> {
    if let Some(r) = caller.0 {
        if r != submission.reviewer_id {
            return Err(ApiError::forbidden(format!("token belongs to {r}, not {}", submission.reviewer_id)));
        }
    }
    Ok((StatusCode::CREATED, Json(s.service.submit_decision(&ReviewId::new(id), submission).await?)))
}

async fn progress(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Progress>> {
    Ok(Json(s.service.progress(&ReviewId::new(id))?))
}

// automation

async fn retrain(
    State(s): State<AppState>,
    Path((id, kind)): Path<(String, String)>,
) -> ApiResult<Json<ClassifierSummary>> {
    let kind: ClassifierKind = kind.parse()?;
    let model = s.service.retrain(&ReviewId::new(id), kind).await?;
    Ok(Json(ClassifierSummary::from(&model)))
}

async fn predict(
    State(s): State<AppState>,
    Path((id, kind)): Path<(String, String)>,
) -> ApiResult<Json<PredictionReport>> {
    let kind: ClassifierKind = kind.parse()?;
    Ok(Json(s.service.predict(&ReviewId::new(id), kind).await?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct QaRequest {
    criterion_ids: Vec<CriterionId>,
    paper_ids: Vec<PaperId>,
}

async fn qa(
    State(s): State<AppState>,
    Path(id): Path<String>,
    ApiJson(body): ApiJson<QaRequest>,
) -> ApiResult<Json<QaBatch>> {
    Ok(Json(s.service.qa_screen(&ReviewId::new(id), &body.criterion_ids, &body.paper_ids).await?))
}

// export

async fn export(State(s): State<AppState>, Path(id): Path<String>) -> ApiResult<Response> {
    let json = s.service.export_json(&ReviewId::new(id))?;
    Ok(([(header::CONTENT_TYPE, "application/json")], json).into_response())
}
