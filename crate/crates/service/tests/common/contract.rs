#![allow(dead_code)]
//! The recorded API suite, shared by the contract and acceptance tests.
//! Regenerate the recordings with `UPDATE_GOLDEN=1`.

use std::path::PathBuf;

use axum::http::{Method, StatusCode};
use serde_json::Value;

use super::*;

pub fn golden_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(format!("{name}.json"))
}

pub fn same(a: &Value, b: &Value, at: &str) -> Result<(), String> {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            if (x - y).abs() <= 1e-9 * x.abs().max(y.abs()).max(1.0) {
                Ok(())
            } else {
                Err(format!("{at}: {x} != {y}"))
            }
        }
        (Value::Array(x), Value::Array(y)) => {
            if x.len() != y.len() {
                return Err(format!("{at}: length {} != {}", x.len(), y.len()));
            }
            x.iter().zip(y).enumerate().try_for_each(|(i, (p, q))| same(p, q, &format!("{at}[{i}]")))
        }
        (Value::Object(x), Value::Object(y)) => {
            let kx: Vec<_> = x.keys().collect();
            let ky: Vec<_> = y.keys().collect();
            if kx != ky {
                return Err(format!("{at}: keys {kx:?} != {ky:?}"));
            }
            x.iter().try_for_each(|(k, v)| same(v, &y[k], &format!("{at}.{k}")))
        }
        _ if a == b => Ok(()),
        _ => Err(format!("{at}: {a} != {b}")),
    }
}

pub fn check_golden(name: &str, got: &Value) {
    let path = golden_path(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        let mut text = serde_json::to_string_pretty(got).unwrap();
        text.push('\n');
        std::fs::write(&path, text).unwrap();
        return;
    }
    let want: Value = serde_json::from_str(
        &std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}; run with UPDATE_GOLDEN=1", path.display())),
    )
    .unwrap();
    if let Err(e) = same(got, &want, name) {
        panic!("golden mismatch for {name}: {e}");
    }
}

pub struct Case {
    name: String,
    method: Method,
    uri: String,
    token: Option<&'static str>,
    status: StatusCode,
    schema: &'static str,
}

pub fn case(name: &str, uri: &str, status: StatusCode, schema: &'static str) -> Case {
    Case {
        name: name.into(),
        method: Method::GET,
        uri: uri.into(),
        token: None,
        status,
        schema,
    }
}

/// First student (in id order) with the given verdict at checkpoint 4.
pub async fn student_with(app: &axum::Router, verdict: &str) -> String {
    for i in 1..=40 {
        let id = format!("s{i:03}");
        let (_, v) = get(app, &format!("/api/v1/students/{id}/prediction?checkpoint=4")).await;
        if v["verdict"] == verdict {
            return id;
        }
    }
    panic!("no {verdict} student in the fixture");
}

/// Replays the recorded suite against a fresh 40-student deployment and
/// returns the number of requests checked.
pub async fn run_golden_suite() -> usize {
    let fx = tokio::task::spawn_blocking(|| fixture(40, 11, 25)).await.unwrap();
    let app = fx.app();
    let pass = student_with(&app, "pass").await;
    let risk = student_with(&app, "at_risk").await;

    let ok = StatusCode::OK;
    let mut cases = vec![
        case("healthz", "/healthz", ok, "health"),
        case("course_history", "/api/v1/course/history", ok, "history"),
        case("course_trends", "/api/v1/course/trends", ok, "trends"),
        case("course_effort", "/api/v1/course/effort", ok, "effort"),
        case("course_scheme", "/api/v1/course/scheme", ok, "scheme"),
        case("unknown_route", "/api/v1/nope", StatusCode::NOT_FOUND, "error"),
        case(
            "unknown_student",
            "/api/v1/students/nobody/prediction?checkpoint=1",
            StatusCode::NOT_FOUND,
            "error",
        ),
        case(
            "checkpoint_5",
            &format!("/api/v1/students/{pass}/prediction?checkpoint=5"),
            StatusCode::BAD_REQUEST,
            "error",
        ),
        case(
            "checkpoint_text",
            &format!("/api/v1/students/{pass}/behavior?checkpoint=two"),
            StatusCode::BAD_REQUEST,
            "error",
        ),
        case(
            "percentile_checkpoint_0",
            &format!("/api/v1/students/{pass}/percentile?checkpoint=0"),
            StatusCode::BAD_REQUEST,
            "error",
        ),
    ];
    for (tag, id) in [("pass", &pass), ("at_risk", &risk)] {
        for cp in [1, 4] {
            cases.push(case(
                &format!("prediction_{tag}_cp{cp}"),
                &format!("/api/v1/students/{id}/prediction?checkpoint={cp}"),
                ok,
                "prediction",
            ));
        }
        cases.push(case(&format!("grades_{tag}"), &format!("/api/v1/students/{id}/grades"), ok, "grades"));
        cases.push(case(
            &format!("grades_{tag}_cp2"),
            &format!("/api/v1/students/{id}/grades?checkpoint=2"),
            ok,
            "grades",
        ));
        cases.push(case(
            &format!("behavior_{tag}_cp2"),
            &format!("/api/v1/students/{id}/behavior?checkpoint=2"),
            ok,
            "behavior",
        ));
        cases.push(case(
            &format!("percentile_{tag}_cp3"),
            &format!("/api/v1/students/{id}/percentile?checkpoint=3"),
            ok,
            "percentile",
        ));
    }
    cases.push(Case {
        name: "train_unauthorized".into(),
        method: Method::POST,
        uri: "/api/v1/admin/train".into(),
        token: Some("wrong"),
        status: StatusCode::UNAUTHORIZED,
        schema: "error",
    });

    let mut keys = Vec::new();
    for c in &cases {
        let (status, body) = call(&app, c.method.clone(), &c.uri, c.token).await;
        assert_eq!(status, c.status, "{}: {body}", c.name);
        let errors = schema_errors(c.schema, &body);
        assert!(errors.is_empty(), "{} violates {}: {errors:#?}", c.name, c.schema);
        check_golden(&c.name, &body);
        // read-only endpoints are idempotent
        let (again_status, again) = call(&app, c.method.clone(), &c.uri, c.token).await;
        assert_eq!((again_status, &again), (status, &body), "{} is not idempotent", c.name);
        collect_keys(&body, &mut keys);
    }

    // the admin endpoint answers with the next version
    let (status, body) = call(&app, Method::POST, "/api/v1/admin/train", Some(TOKEN)).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert!(schema_errors("train", &body).is_empty());
    assert_eq!(body["new_version"], 2);
    collect_keys(&body, &mut keys);

    for k in &keys {
        assert!(!FORBIDDEN_KEYS.contains(&k.as_str()), "response key `{k}` exposes personal data");
    }
    cases.len() + 1
}

