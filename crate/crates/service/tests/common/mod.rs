#![allow(dead_code)]

pub mod contract;

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use gradecast_core::pipeline::AssessmentCalendar;
use gradecast_core::synth::{export_cohort, generate_cohort, SynthParams};
use gradecast_core::trees::ForestParams;
use gradecast_core::GradeScheme;
use gradecast_service::cli::app_state;
use gradecast_service::{router, AppState, ModelStore, ServiceConfig, StoreSettings};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub const TOKEN: &str = "test-token";

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub config: ServiceConfig,
    pub store: Arc<ModelStore>,
    pub state: AppState,
}

impl Fixture {
    pub fn app(&self) -> Router {
        router(self.state.clone())
    }
}

pub fn write_cohort(dir: &Path, n: usize, seed: u64) {
    let scheme = GradeScheme::reference();
    let p = SynthParams {
        seed,
        n_students: n,
        target_fail_count: (n * 18).div_ceil(106),
        ..SynthParams::default()
    };
    let cal = AssessmentCalendar::monthly(&scheme, p.semester_start).unwrap();
    let cohort = generate_cohort(&p, &scheme, &cal).unwrap();
    export_cohort(&cohort, dir, &scheme).unwrap();
}

pub fn test_config(root: &Path, n_trees: usize) -> ServiceConfig {
    let mut c = ServiceConfig::default();
    c.data.cohort_dir = root.join("cohort");
    c.data.model_dir = root.join("models");
    c.data.report_dir = root.join("reports");
    c.server.admin_token = Some(TOKEN.into());
    c.model.forest = ForestParams {
        n_trees,
        ..ForestParams::default()
    };
    c
}

/// Small synthetic deployment: cohort on disk, models trained on open.
pub fn fixture(n: usize, seed: u64, n_trees: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let config = test_config(dir.path(), n_trees);
    write_cohort(&config.data.cohort_dir, n, seed);
    let store = Arc::new(ModelStore::open(StoreSettings::from_config(&config)).unwrap());
    let state = app_state(&config, Arc::clone(&store));
    Fixture {
        dir,
        config,
        store,
        state,
    }
}

pub async fn call(app: &Router, method: Method, uri: &str, token: Option<&str>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let resp = app.clone().oneshot(req.body(Body::empty()).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|e| panic!("{uri}: body is not JSON ({e})"))
    };
    (status, value)
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, Value) {
    call(app, Method::GET, uri, None).await
}

pub fn schema_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas")
}

pub fn validator(name: &str) -> jsonschema::Validator {
    let path = schema_dir().join(format!("{name}.schema.json"));
    let doc: Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
    jsonschema::validator_for(&doc).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Validation messages, empty when `value` conforms.
pub fn schema_errors(name: &str, value: &Value) -> Vec<String> {
    validator(name).iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect()
}

/// Object keys that would expose raw demographics or identity.
pub const FORBIDDEN_KEYS: &[&str] = &[
    "gender",
    "disability",
    "schedule_group",
    "demographics",
    "name",
    "first_name",
    "last_name",
    "email",
    "birth_date",
    "date_of_birth",
    "address",
];

pub fn collect_keys(v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                out.push(k.clone());
                collect_keys(x, out);
            }
        }
        Value::Array(a) => a.iter().for_each(|x| collect_keys(x, out)),
        _ => {}
    }
}
