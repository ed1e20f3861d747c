//! Snapshot swapping, persistence and startup checks.

mod common;

use std::sync::Arc;

use axum::http::{Method, StatusCode};
use common::*;
use gradecast_core::explain::ShapleyBudget;
use gradecast_core::ingest::GRADEBOOK_FILE;
use gradecast_core::pipeline::model_file_name;
use gradecast_core::StudentId;
use gradecast_service::store::StoreError;
use gradecast_service::{ModelStore, StoreSettings};

fn model_bytes(fx: &Fixture) -> Vec<Vec<u8>> {
    (1..=4)
        .map(|cp| std::fs::read(fx.config.data.model_dir.join(model_file_name(cp))).unwrap())
        .collect()
}

#[test]
fn successful_swap_increments_version() {
    let fx = fixture(20, 1, 8);
    assert_eq!(fx.store.version(), 1);
    let before = fx.store.snapshot();
    let cohort = fx.store.settings().load_cohort().unwrap();
    assert_eq!(fx.store.train_and_swap(cohort).unwrap(), 2);
    assert_eq!(fx.store.version(), 2);
    // a reader holding the old snapshot keeps a complete, consistent view
    assert_eq!(before.version, 1);
    assert_eq!(before.models.len(), 4);
    let s = StudentId::new("s001");
    let old = before.compute_prediction(&s, 2, 3, ShapleyBudget::default()).unwrap();
    assert_eq!(old.model_version, 1);
    let new = fx.store.snapshot().compute_prediction(&s, 2, 3, ShapleyBudget::default()).unwrap();
    assert_eq!(new.model_version, 2);
    // same data and seed: same numbers
    assert_eq!(old.attribution, new.attribution);
}

#[test]
fn failed_training_keeps_serving_the_old_version() {
    let fx = fixture(20, 2, 8);
    let s = StudentId::new("s003");
    let before = fx.store.snapshot().compute_prediction(&s, 4, 3, ShapleyBudget::default()).unwrap();
    let files = model_bytes(&fx);

    let mut broken = fx.store.settings().load_cohort().unwrap();
    broken.outcomes.remove(&s);
    assert!(fx.store.train_and_swap(broken).is_err());

    assert_eq!(fx.store.version(), 1);
    let after = fx.store.snapshot().compute_prediction(&s, 4, 3, ShapleyBudget::default()).unwrap();
    assert_eq!(before, after);
    assert_eq!(files, model_bytes(&fx));
    assert!(!fx.config.data.model_dir.join(".staging").exists());
}

#[test]
fn concurrent_swaps_are_serialized() {
    let fx = fixture(20, 3, 8);
    let initial = fx.store.version();
    let handles: Vec<_> = (0..2)
        .map(|_| {
            let store = Arc::clone(&fx.store);
            std::thread::spawn(move || store.retrain_from_disk().unwrap())
        })
        .collect();
    let mut versions: Vec<u64> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    versions.sort_unstable();
    assert_eq!(versions, [initial + 1, initial + 2]);
    assert_eq!(fx.store.version(), initial + 2);
}

#[test]
fn reopening_loads_the_persisted_models() {
    let fx = fixture(20, 4, 8);
    let reopened = ModelStore::open(StoreSettings::from_config(&fx.config)).unwrap();
    assert_eq!(reopened.snapshot().models, fx.store.snapshot().models);
}

#[test]
fn mismatched_models_refuse_to_start() {
    let fx = fixture(20, 5, 8);
    let settings = StoreSettings::from_config(&fx.config);
    let path = fx.config.data.model_dir.join(model_file_name(2));
    let original = std::fs::read_to_string(&path).unwrap();

    // unknown format version
    let mut doc: serde_json::Value = serde_json::from_str(&original).unwrap();
    doc["format_version"] = 99.into();
    std::fs::write(&path, doc.to_string()).unwrap();
    assert!(ModelStore::open(settings.clone()).is_err());

    // a schema that no longer matches the cohort's features
    let mut doc: serde_json::Value = serde_json::from_str(&original).unwrap();
    doc["schema"].as_array_mut().unwrap().pop();
    std::fs::write(&path, doc.to_string()).unwrap();
    assert!(ModelStore::open(settings.clone()).is_err());

    // models trained for a different calendar
    std::fs::write(&path, &original).unwrap();
    let mut moved = settings.clone();
    moved.cutoffs = ["2021-11-08", "2021-12-01", "2022-01-01", "2022-02-01"]
        .iter()
        .map(|d| d.parse().unwrap())
        .collect();
    assert!(matches!(ModelStore::open(moved), Err(StoreError::Mismatch(_))));

    // partial model directory
    std::fs::remove_file(&path).unwrap();
    assert!(matches!(ModelStore::open(settings.clone()), Err(StoreError::Mismatch(_))));
}

#[test]
fn predictions_are_cached_per_snapshot() {
    let fx = fixture(20, 6, 8);
    let snap = fx.store.snapshot();
    let s = StudentId::new("s002");
    let a = snap.prediction(&s, 1, 3, ShapleyBudget::default()).unwrap();
    let b = snap.prediction(&s, 1, 3, ShapleyBudget::default()).unwrap();
    assert!(Arc::ptr_eq(&a, &b));
    assert_eq!(snap.cached_predictions(), 1);
    fx.store.retrain_from_disk().unwrap();
    assert_eq!(fx.store.snapshot().cached_predictions(), 0);
}

#[tokio::test(flavor = "multi_thread")]
async fn admin_endpoint_swaps_and_reports_failures() {
    let fx = tokio::task::spawn_blocking(|| fixture(20, 7, 8)).await.unwrap();
    let app = fx.app();

    let (status, body) = call(&app, Method::POST, "/api/v1/admin/train", None).await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::UNAUTHORIZED, Some("unauthorized")));

    // two concurrent requests both succeed, one after the other
    let (a, b) = tokio::join!(
        call(&app, Method::POST, "/api/v1/admin/train", Some(TOKEN)),
        call(&app, Method::POST, "/api/v1/admin/train", Some(TOKEN)),
    );
    assert_eq!((a.0, b.0), (StatusCode::OK, StatusCode::OK));
    let mut v = [a.1["new_version"].as_u64().unwrap(), b.1["new_version"].as_u64().unwrap()];
    v.sort_unstable();
    assert_eq!(v, [2, 3]);
    let (_, health) = get(&app, "/healthz").await;
    assert_eq!(health["model_version"], 3);

    let (_, before) = get(&app, "/api/v1/students/s001/prediction?checkpoint=3").await;
    std::fs::remove_file(fx.config.data.cohort_dir.join(GRADEBOOK_FILE)).unwrap();
    let (status, body) = call(&app, Method::POST, "/api/v1/admin/train", Some(TOKEN)).await;
    assert_eq!(status, StatusCode::INTERNAL_SERVER_ERROR);
    assert_eq!(body["code"], "training_failed");
    let (_, health) = get(&app, "/healthz").await;
    assert_eq!(health["model_version"], 3);
    let (_, after) = get(&app, "/api/v1/students/s001/prediction?checkpoint=3").await;
    assert_eq!(before, after);
}

#[tokio::test(flavor = "multi_thread")]
async fn admin_endpoint_is_disabled_without_a_token() {
    let mut fx = tokio::task::spawn_blocking(|| fixture(12, 8, 5)).await.unwrap();
    fx.config.server.admin_token = None;
    let app = gradecast_service::router(gradecast_service::cli::app_state(&fx.config, Arc::clone(&fx.store)));
    let (status, body) = call(&app, Method::POST, "/api/v1/admin/train", Some(TOKEN)).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["code"], "admin_disabled");
    assert_eq!(fx.store.version(), 1);
}

#[tokio::test(flavor = "multi_thread")]
async fn static_dashboard_is_served_beside_the_api() {
    let mut fx = tokio::task::spawn_blocking(|| fixture(12, 9, 5)).await.unwrap();
    let web = fx.dir.path().join("web");
    std::fs::create_dir_all(&web).unwrap();
    std::fs::write(web.join("index.html"), "<html></html>").unwrap();
    fx.config.data.static_dir = Some(web);
    let app = gradecast_service::router(gradecast_service::cli::app_state(&fx.config, Arc::clone(&fx.store)));
    use tower::ServiceExt;
    let resp = app
        .clone()
        .oneshot(axum::http::Request::get("/").body(axum::body::Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let (status, _) = get(&app, "/api/v1/course/scheme").await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = get(&app, "/api/v1/missing").await;
    assert_eq!((status, body["code"].as_str()), (StatusCode::NOT_FOUND, Some("not_found")));
}
