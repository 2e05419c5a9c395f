use std::path::PathBuf;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, Query, State};
use axum::http::header;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

use telewatch_core::api::{
    AnomalyItem, AnomalyQuery, ErrorSeriesResponse, FeedbackRequest, FeedbackResponse, QTableResponse, RunRecord,
    StartRunRequest, StartRunResponse,
};
use telewatch_core::report::{render_report_markdown, DiscrepancyReport};
use telewatch_core::track::TrackKey;

use crate::error::ServiceError;
use crate::service::Service;

type ApiResult<T> = Result<Json<T>, ServiceError>;

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ServiceError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ServiceError::BadRequest(e.body_text()))
}

async fn start_run(
    State(svc): State<Service>,
    payload: Result<Json<StartRunRequest>, JsonRejection>,
) -> ApiResult<StartRunResponse> {
    let run_id = svc.start_run(body(payload)?).await?;
    Ok(Json(StartRunResponse { run_id }))
}

async fn list_runs(State(svc): State<Service>) -> Json<Vec<RunRecord>> {
    Json(svc.runs().await)
}

async fn get_run(State(svc): State<Service>, Path(id): Path<String>) -> ApiResult<RunRecord> {
    Ok(Json(svc.run(&id).await?))
}

async fn list_anomalies(State(svc): State<Service>, Query(q): Query<AnomalyQuery>) -> ApiResult<Vec<AnomalyItem>> {
    Ok(Json(svc.anomalies(&q).await?))
}

async fn feedback(
    State(svc): State<Service>,
    Path(id): Path<String>,
    payload: Result<Json<FeedbackRequest>, JsonRejection>,
) -> ApiResult<FeedbackResponse> {
    Ok(Json(svc.submit_feedback(&id, body(payload)?).await?))
}

#[derive(Debug, Default, Deserialize)]
struct ReportQuery {
    #[serde(default)]
    format: Option<String>,
}

async fn get_report(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<ReportQuery>,
) -> Result<Response, ServiceError> {
    let report: DiscrepancyReport = svc.report(&id).await?;
    Ok(match q.format.as_deref() {
        Some("markdown") | Some("md") => (
            [(header::CONTENT_TYPE, "text/markdown; charset=utf-8")],
            render_report_markdown(&report),
        )
            .into_response(),
        None | Some("json") => Json(report).into_response(),
        Some(other) => return Err(ServiceError::BadRequest(format!("unknown format `{other}`"))),
    })
}

#[derive(Debug, Default, Deserialize)]
struct TrackQuery {
    dss: Option<u32>,
    scid: Option<u32>,
}

async fn run_errors(
    State(svc): State<Service>,
    Path(id): Path<String>,
    Query(q): Query<TrackQuery>,
) -> ApiResult<ErrorSeriesResponse> {
    let key = match (q.dss, q.scid) {
        (Some(d), Some(s)) => Some(TrackKey::new(d, s)),
        (None, None) => None,
        _ => return Err(ServiceError::BadRequest("pass both dss and scid".into())),
    };
    let s = svc.errors(&id, key).await?;
    Ok(Json(ErrorSeriesResponse {
        run_id: id,
        key: s.key,
        errors: s.errors,
        timestamps_us: s.timestamps_us,
        threshold: s.threshold,
        flagged: s.flagged,
    }))
}

async fn qtable(State(svc): State<Service>) -> Json<QTableResponse> {
    Json(QTableResponse {
        qtable: svc.qtable().await,
    })
}

/// API routes plus, when `static_dir` is given, the UI bundle at `/`.
pub fn router(svc: Service, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/runs", post(start_run).get(list_runs))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/runs/{id}/errors", get(run_errors))
        .route("/api/anomalies", get(list_anomalies))
        .route("/api/anomalies/{id}/feedback", post(feedback))
        .route("/api/reports/{id}", get(get_report))
        .route("/api/qtable", get(qtable))
        .with_state(svc);
    let app = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    };
    app.layer(TraceLayer::new_for_http())
}
