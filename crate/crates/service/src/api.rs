//! HTTP API.
//!
//! | method | path | body / query | response |
//! |---|---|---|---|
//! | GET | `/health` | | `{status, version, counts}` |
//! | GET | `/staff/{id}/statement` | `month=YYYY-MM` | monthly statement |
//! | GET | `/staff/{id}/feedback` | `date=YYYY-MM-DD` | feedback view |
//! | POST | `/whatif` | `{staff_id, month, proposed: [...]}` | projected statement |
//! | POST | `/ingest/{kind}` | CSV text, `Authorization: Bearer <token>` | ingest report |
//! | GET | `/reports/prepost` | `metric=&baseline=&compare=` | pre/post report |
//! | GET | `/reports/variance` | `from=&to=` | revenue variance series |
//! | GET | `/reports/eligibility` | `month=&baseline=` | eligibility snapshot |
//! | GET | `/roster` | `month=YYYY-MM` | roster aggregates |
//!
//! Errors come back as `{"error": {"code", "message"}}`.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use serde::Serialize;
use vpu_core::store::RecordKind;
use vpu_core::wire::to_machine;

use crate::app::{parse_date, parse_month, App, AppError, ErrorClass, WhatIfRequest};

type Shared = Arc<App>;
type Params = Query<HashMap<String, String>>;

impl IntoResponse for AppError {
    fn into_response(self) -> Response {
        let status = match self.class {
            ErrorClass::BadRequest => StatusCode::BAD_REQUEST,
            ErrorClass::NotFound => StatusCode::NOT_FOUND,
            ErrorClass::Unprocessable => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorClass::Unauthorized => StatusCode::UNAUTHORIZED,
            ErrorClass::Forbidden => StatusCode::FORBIDDEN,
            ErrorClass::Config | ErrorClass::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let body = serde_json::json!({
            "error": { "code": self.class.code(), "message": self.message }
        });
        json_response(status, &body)
    }
}

fn json_response<T: Serialize>(status: StatusCode, value: &T) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], to_machine(value)).into_response()
}

fn ok<T: Serialize>(value: &T) -> Response {
    json_response(StatusCode::OK, value)
}

fn param<'a>(q: &'a HashMap<String, String>, name: &str) -> Result<&'a str, AppError> {
    q.get(name)
        .map(String::as_str)
        .ok_or_else(|| AppError::bad_request(format!("missing query parameter {name:?}")))
}

async fn health(State(app): State<Shared>) -> Response {
    ok(&app.health(&app.snapshot()))
}

async fn statement(State(app): State<Shared>, Path(id): Path<String>, Query(q): Params) -> Result<Response, AppError> {
    let month = parse_month(param(&q, "month")?)?;
    Ok(ok(&app.statement(&app.snapshot(), &id, month)?))
}

async fn feedback(State(app): State<Shared>, Path(id): Path<String>, Query(q): Params) -> Result<Response, AppError> {
    let date = parse_date(param(&q, "date")?)?;
    Ok(ok(&app.feedback(&app.snapshot(), &id, date)?))
}

async fn whatif(State(app): State<Shared>, body: Bytes) -> Result<Response, AppError> {
    let request: WhatIfRequest =
        serde_json::from_slice(&body).map_err(|e| AppError::bad_request(format!("invalid what-if request: {e}")))?;
    Ok(ok(&app.whatif(&app.snapshot(), &request)?))
}

fn authorize(app: &App, headers: &HeaderMap) -> Result<(), AppError> {
    let Some(expected) = app.token.as_deref() else {
        return Err(AppError::new(ErrorClass::Forbidden, "ingest disabled: no token configured"));
    };
    let given = headers
        .get(header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    if given != Some(expected) {
        return Err(AppError::new(ErrorClass::Unauthorized, "missing or invalid bearer token"));
    }
    Ok(())
}

async fn ingest(
    State(app): State<Shared>,
    Path(kind): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> Result<Response, AppError> {
    authorize(&app, &headers)?;
    let kind: RecordKind = kind.parse()?;
    let text = String::from_utf8(body.to_vec()).map_err(|_| AppError::bad_request("body must be UTF-8 CSV"))?;
    let source = format!("http:{kind}");
    let report = tokio::task::spawn_blocking(move || app.store.ingest(kind, &source, &text))
        .await
        .map_err(|e| AppError::new(ErrorClass::Internal, e.to_string()))??;
    Ok(ok(&report))
}

async fn prepost(State(app): State<Shared>, Query(q): Params) -> Result<Response, AppError> {
    let baseline = parse_month(param(&q, "baseline")?)?;
    let compare = parse_month(param(&q, "compare")?)?;
    Ok(ok(&app.prepost(&app.snapshot(), param(&q, "metric")?, baseline, compare)?))
}

async fn variance(State(app): State<Shared>, Query(q): Params) -> Result<Response, AppError> {
    let from = parse_month(param(&q, "from")?)?;
    let to = parse_month(param(&q, "to")?)?;
    Ok(ok(&app.variance(&app.snapshot(), from, to)?))
}

async fn eligibility(State(app): State<Shared>, Query(q): Params) -> Result<Response, AppError> {
    let month = parse_month(param(&q, "month")?)?;
    let baseline = match q.get("baseline") {
        Some(b) => b
            .parse()
            .map_err(|_| AppError::bad_request(format!("invalid baseline caseload {b:?}")))?,
        None => 0,
    };
    Ok(ok(&app.eligibility(&app.snapshot(), month, baseline)))
}

async fn roster(State(app): State<Shared>, Query(q): Params) -> Result<Response, AppError> {
    let month = parse_month(param(&q, "month")?)?;
    Ok(ok(&app.roster(&app.snapshot(), month)?))
}

async fn not_found() -> AppError {
    AppError::new(ErrorClass::NotFound, "no such endpoint")
}

pub fn router(app: Arc<App>, static_dir: Option<PathBuf>) -> Router {
    let router = Router::new()
        .route("/health", get(health))
        .route("/staff/{id}/statement", get(statement))
        .route("/staff/{id}/feedback", get(feedback))
        .route("/whatif", post(whatif))
        .route("/ingest/{kind}", post(ingest))
        .route("/reports/prepost", get(prepost))
        .route("/reports/variance", get(variance))
        .route("/reports/eligibility", get(eligibility))
        .route("/roster", get(roster));
    let router = match static_dir {
        Some(dir) => router.fallback_service(tower_http::services::ServeDir::new(dir)),
        None => router.fallback(not_found),
    };
    router.with_state(app)
}
