//! HTTP routes under `/api/v1` plus `/healthz`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gradecast_core::explain::ShapleyBudget;
use gradecast_core::grading::CHECKPOINTS;
use gradecast_core::ingest::HistoricalStats;
use gradecast_core::{GradeScheme, StudentId};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};
use tower_http::services::{ServeDir, ServeFile};

use crate::error::ApiError;
use crate::store::{ModelStore, Snapshot};
use crate::views::{BehaviorView, EffortView, GradesView, Health, PercentileView, TrainResponse};

#[derive(Debug, Clone)]
pub struct ApiSettings {
    pub admin_token: Option<String>,
    pub top_k: usize,
    pub shapley_budget: ShapleyBudget,
    pub cors_origins: Vec<String>,
    pub static_dir: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone)]
pub struct AppState {
    pub store: Arc<ModelStore>,
    pub settings: Arc<ApiSettings>,
}

type ApiResult<T> = Result<T, ApiError>;
type Params = Query<HashMap<String, String>>;

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/students/{id}/prediction", get(prediction))
        .route("/students/{id}/grades", get(grades))
        .route("/students/{id}/behavior", get(behavior))
        .route("/students/{id}/percentile", get(percentile))
        .route("/course/history", get(history))
        .route("/course/trends", get(trends))
        .route("/course/effort", get(effort))
        .route("/course/scheme", get(scheme))
        .route("/admin/train", post(train))
        .fallback(|| async { ApiError::not_found() });
    let cors = cors_layer(&state.settings.cors_origins);
    let mut app = Router::new().route("/healthz", get(healthz)).nest("/api/v1", api);
    app = match &state.settings.static_dir {
        Some(dir) => app.fallback_service(ServeDir::new(dir).fallback(ServeFile::new(dir.join("index.html")))),
        None => app.fallback(|| async { ApiError::not_found() }),
    };
    app.layer(cors).with_state(state)
}

fn cors_layer(origins: &[String]) -> CorsLayer {
    let base = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([axum::http::header::AUTHORIZATION, axum::http::header::CONTENT_TYPE]);
    if origins.iter().any(|o| o == "*") {
        base.allow_origin(Any)
    } else {
        let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
        base.allow_origin(AllowOrigin::list(list))
    }
}

/// `checkpoint` query parameter; the last checkpoint when absent.
fn checkpoint_param(q: &HashMap<String, String>) -> ApiResult<u8> {
    match q.get("checkpoint") {
        None => Ok(CHECKPOINTS),
        Some(raw) => match raw.trim().parse::<u8>() {
            Ok(cp) if (1..=CHECKPOINTS).contains(&cp) => Ok(cp),
            _ => Err(ApiError::invalid_checkpoint(raw)),
        },
    }
}

fn student(snap: &Snapshot, raw: &str) -> ApiResult<StudentId> {
    let id = StudentId::new(raw);
    if snap.knows(&id) {
        Ok(id)
    } else {
        Err(ApiError::unknown_student(raw))
    }
}

async fn healthz(State(st): State<AppState>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        model_version: st.store.version(),
    })
}

async fn prediction(State(st): State<AppState>, Path(id): Path<String>, Query(q): Params) -> ApiResult<Response> {
    let cp = checkpoint_param(&q)?;
    let snap = st.store.snapshot();
    let s = student(&snap, &id)?;
    let (top_k, budget) = (st.settings.top_k, st.settings.shapley_budget);
    let view = tokio::task::spawn_blocking(move || snap.prediction(&s, cp, top_k, budget))
        .await
        .map_err(|e| ApiError::internal("internal", e))??;
    view.check_local_accuracy()
        .map_err(|e| ApiError::internal("attribution_invalid", e))?;
    Ok(Json(view.as_ref()).into_response())
}

async fn grades(State(st): State<AppState>, Path(id): Path<String>, Query(q): Params) -> ApiResult<Json<GradesView>> {
    let cp = checkpoint_param(&q)?;
    let snap = st.store.snapshot();
    let s = student(&snap, &id)?;
    Ok(Json(GradesView::new(&snap.cohort, &st.store.settings().scheme, &s, cp)))
}

async fn behavior(State(st): State<AppState>, Path(id): Path<String>, Query(q): Params) -> ApiResult<Json<BehaviorView>> {
    let cp = checkpoint_param(&q)?;
    let snap = st.store.snapshot();
    let s = student(&snap, &id)?;
    Ok(Json(BehaviorView::new(&snap.cohort, &s, snap.calendar.checkpoint(cp)?)?))
}

async fn percentile(
    State(st): State<AppState>,
    Path(id): Path<String>,
    Query(q): Params,
) -> ApiResult<Json<PercentileView>> {
    let cp = checkpoint_param(&q)?;
    let snap = st.store.snapshot();
    let s = student(&snap, &id)?;
    Ok(Json(PercentileView::new(
        &snap.cohort,
        &st.store.settings().scheme,
        &s,
        snap.calendar.checkpoint(cp)?,
    )?))
}

async fn history(State(st): State<AppState>) -> Json<Vec<HistoricalStats>> {
    Json(st.store.snapshot().cohort.history.clone())
}

async fn trends(State(st): State<AppState>) -> ApiResult<Response> {
    let snap = st.store.snapshot();
    match &snap.trends {
        Some(t) => Ok(Json(t).into_response()),
        None => Err(ApiError::new(
            StatusCode::NOT_FOUND,
            "not_available",
            "trend series need final outcomes for the cohort",
        )),
    }
}

async fn effort(State(st): State<AppState>) -> Json<EffortView> {
    Json(EffortView::from(&st.store.snapshot().cohort.survey))
}

async fn scheme(State(st): State<AppState>) -> Json<GradeScheme> {
    Json(st.store.settings().scheme.clone())
}

fn constant_time_eq(a: &[u8], b: &[u8]) -> bool {
    a.len() == b.len() && a.iter().zip(b).fold(0u8, |acc, (x, y)| acc | (x ^ y)) == 0
}

fn authorize(headers: &HeaderMap, token: Option<&str>) -> ApiResult<()> {
    let Some(expected) = token else {
        return Err(ApiError::new(
            StatusCode::FORBIDDEN,
            "admin_disabled",
            "no admin token is configured for this deployment",
        ));
    };
    let presented = headers
        .get(axum::http::header::AUTHORIZATION)
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.strip_prefix("Bearer "));
    match presented {
        Some(t) if constant_time_eq(t.as_bytes(), expected.as_bytes()) => Ok(()),
        _ => Err(ApiError::new(
            StatusCode::UNAUTHORIZED,
            "unauthorized",
            "missing or invalid bearer token",
        )),
    }
}

async fn train(State(st): State<AppState>, headers: HeaderMap) -> ApiResult<Json<TrainResponse>> {
    authorize(&headers, st.settings.admin_token.as_deref())?;
    let store = Arc::clone(&st.store);
    let new_version = tokio::task::spawn_blocking(move || store.retrain_from_disk())
        .await
        .map_err(|e| ApiError::internal("internal", e))?
        .map_err(|e| {
            tracing::error!(error = %e, "retraining failed; keeping the current models");
            ApiError::internal("training_failed", e)
        })?;
    Ok(Json(TrainResponse { new_version }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_parsing() {
        let q = |v: &str| HashMap::from([("checkpoint".to_string(), v.to_string())]);
        assert_eq!(checkpoint_param(&HashMap::new()).unwrap(), 4);
        assert_eq!(checkpoint_param(&q("1")).unwrap(), 1);
        for bad in ["0", "5", "-1", "two", "", "256"] {
            let e = checkpoint_param(&q(bad)).unwrap_err();
            assert_eq!(e.status, StatusCode::BAD_REQUEST);
            assert_eq!(e.body.code, "invalid_checkpoint");
        }
    }

    #[test]
    fn token_checks() {
        let mut h = HeaderMap::new();
        assert_eq!(authorize(&h, None).unwrap_err().body.code, "admin_disabled");
        assert_eq!(authorize(&h, Some("t0k")).unwrap_err().status, StatusCode::UNAUTHORIZED);
        h.insert("authorization", HeaderValue::from_static("Bearer t0x"));
        assert!(authorize(&h, Some("t0k")).is_err());
        h.insert("authorization", HeaderValue::from_static("Bearer t0k"));
        assert!(authorize(&h, Some("t0k")).is_ok());
    }
}
