//! JSON-over-HTTP front end for a [`Planner`].
//!
//! | route            | reply                                          |
//! |------------------|------------------------------------------------|
//! | `GET /healthz`   | `{"status":"ok","checkpoint":"<id>"}`          |
//! | `GET /v1/catalog`| `{"courses":[...],"failure_rates":{...}}`      |
//! | `POST /v1/score` | [`PlanResponse`](super::PlanResponse)          |
//!
//! Errors are `{"error":"bad_request","message":...}` (400),
//! `{"error":"unknown_course","course":...}` (422) or
//! `{"error":"internal","message":...}` (500).

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{HeaderValue, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;
use tokio::net::TcpListener;
use tower_http::cors::{AllowOrigin, CorsLayer};

use super::{PlanQuery, Planner};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct ServiceConfig {
    /// Origin allowed by CORS. `None` allows any origin.
    pub cors_origin: Option<String>,
}

pub fn router(planner: Arc<Planner>, config: &ServiceConfig) -> Result<Router> {
    let origin = match &config.cors_origin {
        None => AllowOrigin::any(),
        Some(o) => AllowOrigin::exact(
            HeaderValue::from_str(o).map_err(|_| Error::invalid(format!("invalid CORS origin {o:?}")))?,
        ),
    };
    let cors = CorsLayer::new()
        .allow_origin(origin)
        .allow_methods([axum::http::Method::GET, axum::http::Method::POST])
        .allow_headers([axum::http::header::CONTENT_TYPE]);
    Ok(Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/catalog", get(catalog))
        .route("/v1/score", post(score))
        .layer(cors)
        .with_state(planner))
}

/// Answers requests on `listener` until the task is dropped.
pub async fn serve(listener: TcpListener, planner: Arc<Planner>, config: &ServiceConfig) -> Result<()> {
    axum::serve(listener, router(planner, config)?).await?;
    Ok(())
}

async fn healthz(State(planner): State<Arc<Planner>>) -> Response {
    Json(json!({"status": "ok", "checkpoint": planner.checkpoint_id()})).into_response()
}

async fn catalog(State(planner): State<Arc<Planner>>) -> Response {
    Json(json!({
        "courses": planner.catalog(),
        "failure_rates": planner.failure_rates(),
    }))
    .into_response()
}

async fn score(State(planner): State<Arc<Planner>>, body: Bytes) -> Response {
    let query: PlanQuery = match serde_json::from_slice(&body) {
        Ok(q) => q,
        Err(e) => return bad_request(e.to_string()),
    };
    match planner.score(&query) {
        Ok(r) => Json(r).into_response(),
        Err(e) => error_response(e),
    }
}

fn bad_request(message: String) -> Response {
    (StatusCode::BAD_REQUEST, Json(json!({"error": "bad_request", "message": message}))).into_response()
}

fn error_response(err: Error) -> Response {
    match err {
        Error::UnknownCourse(course) => (
            StatusCode::UNPROCESSABLE_ENTITY,
            Json(json!({"error": "unknown_course", "course": course})),
        )
            .into_response(),
        Error::InvalidInput(_) | Error::Validation { .. } | Error::Parse { .. } | Error::Json(_) => {
            bad_request(err.to_string())
        }
        other => (
            StatusCode::INTERNAL_SERVER_ERROR,
            Json(json!({"error": "internal", "message": other.to_string()})),
        )
            .into_response(),
    }
}
