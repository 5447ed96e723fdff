//! JSON-over-HTTP routes.
//!
//! The caller's label namespace comes from the `x-labelfact-namespace`
//! header (default `"default"`).

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post};
use axum::{Json, Router};
use labelfact_core::eval::load::parse_csv_texts;
use serde::Deserialize;
use serde_json::json;

use crate::error::ServiceError;
use crate::live::LiveSession;
use crate::snapshot::parse_annotation_csv;

pub const NAMESPACE_HEADER: &str = "x-labelfact-namespace";
pub const DEFAULT_NAMESPACE: &str = "default";
pub const DEFAULT_TOP_LIMIT: usize = 1000;

type AppState = Arc<LiveSession>;

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = self.status();
        if status.is_server_error() {
            tracing::error!(error = %self, "request failed");
        }
        (status, Json(json!({ "error": self.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ServiceError>;

fn namespace(headers: &HeaderMap) -> String {
    headers
        .get(NAMESPACE_HEADER)
        .and_then(|v| v.to_str().ok())
        .map(str::trim)
        .filter(|v| !v.is_empty())
        .unwrap_or(DEFAULT_NAMESPACE)
        .to_string()
}

fn is_csv(headers: &HeaderMap) -> bool {
    headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("text/csv"))
}

/// Runs blocking session work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(format!("worker task failed: {e}")))?
}

pub fn router(session: Arc<LiveSession>) -> Router {
    let limit = session.config().max_payload_bytes;
    Router::new()
        .route("/corpus", post(import_corpus))
        .route("/labels", get(list_labels).post(create_label))
        .route("/labels/{id}", delete(delete_label))
        .route("/labels/{id}/top", get(top_texts))
        .route("/annotations", post(annotate))
        .route("/annotations/import", post(import_annotations))
        .route("/texts/{id}/scores", get(text_scores))
        .route("/export", get(export))
        .route("/status", get(status))
        .route("/admin/persist", post(persist))
        .layer(DefaultBodyLimit::max(limit))
        .with_state(session)
}

#[derive(Deserialize)]
struct CorpusQuery {
    column: Option<String>,
}

async fn import_corpus(
    State(s): State<AppState>,
    Query(q): Query<CorpusQuery>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let texts: Vec<String> = if is_csv(&headers) {
        let column = q.column.unwrap_or_else(|| "text".into());
        parse_csv_texts("upload", body.as_ref(), &column)?
    } else {
        let text = std::str::from_utf8(&body)
            .map_err(|e| ServiceError::BadRequest(format!("corpus is not UTF-8: {e}")))?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_string)
            .collect()
    };
    let summary = blocking(move || s.import_texts(texts)).await?;
    Ok((StatusCode::CREATED, Json(summary)))
}

async fn list_labels(State(s): State<AppState>, headers: HeaderMap) -> impl IntoResponse {
    Json(s.snapshot().labels(Some(&namespace(&headers))))
}

#[derive(Deserialize)]
struct NewLabel {
    name: String,
}

async fn create_label(
    State(s): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<NewLabel>,
) -> ApiResult<impl IntoResponse> {
    let owner = namespace(&headers);
    let def = blocking(move || s.create_label(&req.name, &owner)).await?;
    Ok((StatusCode::CREATED, Json(def)))
}

async fn delete_label(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<usize>,
) -> ApiResult<impl IntoResponse> {
    let owner = namespace(&headers);
    blocking(move || s.delete_label(id, &owner)).await?;
    Ok(StatusCode::NO_CONTENT)
}

#[derive(Deserialize)]
struct TopQuery {
    limit: Option<usize>,
    include_annotated: Option<bool>,
}

async fn top_texts(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<usize>,
    Query(q): Query<TopQuery>,
) -> ApiResult<impl IntoResponse> {
    let limit = q.limit.unwrap_or(DEFAULT_TOP_LIMIT);
    let include = q.include_annotated.unwrap_or(false);
    Ok(Json(s.snapshot().top_texts(
        id,
        Some(&namespace(&headers)),
        limit,
        include,
    )?))
}

async fn text_scores(
    State(s): State<AppState>,
    headers: HeaderMap,
    Path(id): Path<usize>,
) -> ApiResult<impl IntoResponse> {
    Ok(Json(
        s.snapshot().text_scores(id, Some(&namespace(&headers)))?,
    ))
}

#[derive(Deserialize)]
struct NewAnnotation {
    row_id: usize,
    label_id: usize,
    value: u8,
}

async fn annotate(
    State(s): State<AppState>,
    headers: HeaderMap,
    Json(req): Json<NewAnnotation>,
) -> ApiResult<impl IntoResponse> {
    let owner = namespace(&headers);
    let ack = blocking(move || s.annotate(req.row_id, req.label_id, req.value, &owner)).await?;
    Ok(Json(ack))
}

async fn import_annotations(
    State(s): State<AppState>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let owner = namespace(&headers);
    let snap = s.snapshot();
    let cells = parse_annotation_csv(body.as_ref(), |name| {
        snap.label_named(name, Some(&owner)).map(|l| l.label_id)
    })?;
    let applied = blocking(move || s.annotate_batch(&cells, &owner)).await?;
    Ok(Json(json!({ "applied": applied })))
}

#[derive(Deserialize)]
struct ExportQuery {
    labels: Option<String>,
}

async fn export(
    State(s): State<AppState>,
    headers: HeaderMap,
    Query(q): Query<ExportQuery>,
) -> ApiResult<impl IntoResponse> {
    let labels: Vec<usize> = q
        .labels
        .as_deref()
        .unwrap_or("")
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| {
            t.parse()
                .map_err(|_| ServiceError::BadRequest(format!("label id {t:?} is not an integer")))
        })
        .collect::<ApiResult<_>>()?;
    let mut out = Vec::new();
    s.snapshot()
        .write_export(&mut out, &labels, Some(&namespace(&headers)))?;
    Ok(([(header::CONTENT_TYPE, "text/csv; charset=utf-8")], out))
}

async fn status(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.status())
}

async fn persist(State(s): State<AppState>) -> ApiResult<impl IntoResponse> {
    let dir = s.data_dir();
    let passes = blocking(move || s.persist()).await?;
    Ok(Json(json!({ "data_dir": dir, "snapshot_pass": passes })))
}

/// Binds `cfg.bind:cfg.port` and serves until Ctrl-C.
pub async fn serve(session: Arc<LiveSession>) -> std::io::Result<()> {
    let addr = format!("{}:{}", session.config().bind, session.config().port);
    let listener = tokio::net::TcpListener::bind(&addr).await?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(session))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
