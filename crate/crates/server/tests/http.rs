use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};
use tower::ServiceExt;

use digico_core::api::{ErrorBody, ErrorKind, ExperimentAccepted, ExperimentStatus, JobState, PlanInfo};
use digico_core::experiment::{SummaryDocument, MANIFEST_FILE, METRICS_FILE};
use digico_server::{router, AppState};

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, bytes)
}

fn parse<T: DeserializeOwned>(bytes: &[u8]) -> T {
    serde_json::from_slice(bytes).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(bytes)))
}

fn app(out: &std::path::Path) -> axum::Router {
    router(AppState::new(out))
}

const TINY: &str = r#"
name = "tiny"
seeds = [0, 1]

[base]
generations = 3
steps_per_generation = 5

[[axes]]
name = "ai_type"
values = ["none", "all_zero"]
"#;

#[tokio::test]
async fn health_and_plans() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(&app, "GET", "/health", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse::<Value>(&body)["status"], "ok");

    let (status, body) = call(&app, "GET", "/v1/plans", None).await;
    assert_eq!(status, StatusCode::OK);
    let plans: Vec<PlanInfo> = parse(&body);
    assert_eq!(plans.len(), 7);
    let s1 = plans.iter().find(|p| p.name == "scenario1").unwrap();
    assert_eq!((s1.conditions, s1.seeds), (32, 10));
}

#[tokio::test]
async fn validate_reports_config_errors_as_400() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(
        &app,
        "POST",
        "/v1/config/validate",
        Some(json!({"overrides": {"lambda": 0.5}})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(parse::<Value>(&body)["config"]["lambda"], 0.5);

    for bad in [json!({"no_such_key": 1}), json!({"subpop_sizes": [10, 10]}), json!({"ai_type": "robots"})] {
        let (status, body) = call(&app, "POST", "/v1/config/validate", Some(json!({ "overrides": bad }))).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{bad}");
        assert_eq!(parse::<ErrorBody>(&body).kind, ErrorKind::Config);
    }
}

#[tokio::test]
async fn single_run_returns_rows_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = call(
        &app,
        "POST",
        "/v1/runs",
        Some(json!({"overrides": {"generations": 4, "steps_per_generation": 5, "seed": 3}})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let out: Value = parse(&body);
    assert_eq!(out["rows"].as_array().unwrap().len(), 4);
    assert_eq!(out["summary"]["generations"], 4);
}

async fn wait(app: &axum::Router, id: &str) -> ExperimentStatus {
    for _ in 0..600 {
        let (status, body) = call(app, "GET", &format!("/v1/experiments/{id}"), None).await;
        assert_eq!(status, StatusCode::OK);
        let st: ExperimentStatus = parse(&body);
        if st.state != JobState::Running {
            return st;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    }
    panic!("experiment {id} did not finish");
}

#[tokio::test]
async fn experiment_lifecycle_resume_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results");
    let app = app(dir.path());
    let req = json!({"plan": {"toml": TINY}, "workers": 2, "out": out});

    let (status, body) = call(&app, "POST", "/v1/experiments", Some(req.clone())).await;
    assert_eq!(status, StatusCode::ACCEPTED);
    let accepted: ExperimentAccepted = parse(&body);
    assert_eq!(accepted.total, 4);
    let st = wait(&app, &accepted.id).await;
    assert_eq!(st.state, JobState::Finished);
    assert_eq!(st.records.len(), 4);
    let report = st.report.unwrap();
    assert_eq!((report.completed, report.skipped, report.failed), (4, 0, 0));
    let run_dir = out.join("ai_type-all_zero").join("seed-1");
    assert!(run_dir.join(METRICS_FILE).is_file());
    assert!(run_dir.join(MANIFEST_FILE).is_file());

    // second submission finds every manifest and skips
    let (_, body) = call(&app, "POST", "/v1/experiments", Some(req)).await;
    let again = wait(&app, &parse::<ExperimentAccepted>(&body).id).await;
    assert_eq!(again.report.unwrap().skipped, 4);

    let summary_path = dir.path().join("summary.json");
    let (status, body) = call(
        &app,
        "POST",
        "/v1/summarize",
        Some(json!({"in": out, "out": summary_path})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let doc: SummaryDocument = parse(&body);
    assert_eq!(doc.conditions.len(), 2);
    assert_eq!(doc.condition("ai_type-none").unwrap().seeds, vec![0, 1]);
    let on_disk: SummaryDocument = parse(&std::fs::read(summary_path).unwrap());
    assert_eq!(on_disk, doc);
}

#[tokio::test]
async fn experiment_request_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let cases = [
        json!({"plan": {"builtin": "scenario9"}}),
        json!({"plan": {"builtin": "scenario1"}, "overrides": {"lambda": -1.0}}),
        json!({"plan": {"toml": "name = \"x\"\nseeds = [1, 1]"}}),
        json!({"plan": {"toml": "name = \"x\"\n[[axes]]\nname = \"k_b\"\nvalues = [\"high\"]"}}),
        json!({"plan": {"builtin": "scenario1"}, "workers": 0}),
        json!({"plan": {"builtin": "scenario1"}, "seeds": 0}),
    ];
    for req in cases {
        let (status, body) = call(&app, "POST", "/v1/experiments", Some(req.clone())).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{req}");
        assert_eq!(parse::<ErrorBody>(&body).kind, ErrorKind::Config);
    }
    let (status, _) = call(&app, "GET", "/v1/experiments/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(
        &app,
        "POST",
        "/v1/summarize",
        Some(json!({"in": dir.path().join("missing"), "out": dir.path().join("s.json")})),
    )
    .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}
