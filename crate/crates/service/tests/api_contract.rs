//! Endpoint responses against their schema documents and the recorded
//! golden suite.

mod common;

use axum::http::StatusCode;
use common::*;
use serde_json::Value;

#[tokio::test(flavor = "multi_thread")]
async fn endpoints_match_schemas_and_golden_suite() {
    let checked = contract::run_golden_suite().await;
    assert!(checked > 20);
}

#[tokio::test(flavor = "multi_thread")]
async fn prediction_bodies_satisfy_local_accuracy_and_cascade() {
    let fx = tokio::task::spawn_blocking(|| fixture(30, 3, 15)).await.unwrap();
    let app = fx.app();
    let validator = validator("prediction");
    for i in 1..=30 {
        for cp in 1..=4 {
            let (status, v) = get(&app, &format!("/api/v1/students/s{i:03}/prediction?checkpoint={cp}")).await;
            assert_eq!(status, StatusCode::OK);
            assert!(validator.is_valid(&v), "{v}");
            let a = &v["attribution"];
            let sum: f64 = a["phi"].as_array().unwrap().iter().map(|p| p["value"].as_f64().unwrap()).sum();
            let gap = (a["base"].as_f64().unwrap() + sum - a["prediction"].as_f64().unwrap()).abs();
            assert!(gap <= 1e-9, "s{i:03} cp{cp}: gap {gap:e}");
            let risk = v["risk_probability"].as_f64().unwrap();
            assert_eq!(v["verdict"] == "at_risk", risk >= 0.5);
            assert!(v["sentences"].as_array().unwrap().len() <= fx.config.top_k.max(1));
        }
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn grades_view_follows_releases() {
    let fx = tokio::task::spawn_blocking(|| fixture(20, 5, 10)).await.unwrap();
    let app = fx.app();
    let (_, g1) = get(&app, "/api/v1/students/s001/grades?checkpoint=1").await;
    let (_, g4) = get(&app, "/api/v1/students/s001/grades").await;
    assert_eq!(g4["checkpoint"], 4);
    let released = |g: &Value| -> Vec<String> {
        g["items"]
            .as_array()
            .unwrap()
            .iter()
            .filter(|i| i["released"] == true)
            .map(|i| i["id"].as_str().unwrap().to_string())
            .collect()
    };
    assert_eq!(released(&g1), ["assignment1", "assignment2", "quiz1"]);
    assert_eq!(released(&g4).len(), 12);
    for g in [&g1, &g4] {
        let items = g["items"].as_array().unwrap();
        let total: u64 = items.iter().filter_map(|i| i["earned"].as_u64()).sum();
        assert_eq!(g["earned_total"], total);
        assert!(items.iter().all(|i| i["released"] == true || i["earned"].is_null()));
        assert_eq!(g["max_total"], 100);
        assert!((g["progress"].as_f64().unwrap() - total as f64 / 100.0).abs() < 1e-12);
    }
}
