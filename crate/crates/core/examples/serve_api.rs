//! Drive the HTTP API in process. `dvhpred serve` binds the same router to a
//! socket.
//!
//! cargo run --release --example serve_api

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use dvhpred::config::{ConstraintSet, GridConfig, PipelineConfig};
use dvhpred::pipeline::{cmd_train, Library};
use dvhpred::regress::AlgorithmId;
use dvhpred::service::{router, AppState};
use dvhpred::synth::synth_cohort;
use http_body_util::BodyExt;
use tower::ServiceExt;

async fn call(app: &axum::Router, req: Request<Body>) -> (StatusCode, String) {
    let resp = app.clone().oneshot(req).await.expect("router is infallible");
    let status = resp.status();
    let body = resp.into_body().collect().await.expect("body").to_bytes();
    (status, String::from_utf8_lossy(&body).into_owned())
}

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut config = PipelineConfig::default();
    config.grid = GridConfig { start_cgy: 100.0, step_cgy: 100.0, n_bins: 64 };
    config.synth.n_patients = 30;
    config.train.algorithms = vec![AlgorithmId::LR, AlgorithmId::EN, AlgorithmId::DT];
    let grid = config.dose_grid()?;
    let bundle = cmd_train(&Library::new(grid, synth_cohort(&config.synth, &grid)?), &config)?.bundle;
    let app = router(Arc::new(AppState { bundle, constraints: ConstraintSet::default() }));

    let (status, body) = call(&app, Request::get("/api/health").body(Body::empty())?).await;
    println!("GET /api/health -> {status} {body}");

    let predict = |json: &str| {
        Request::post("/api/predict").header("content-type", "application/json").body(Body::from(json.to_string()))
    };
    let ok = r#"{"features": {"ptv60_cc": 110, "ptv44_cc": 320, "rectum_cc": 70, "bladder_cc": 220,
                "rectum_overlap_frac": 0.12, "bladder_overlap_frac": 0.18},
                "organ": "rectum", "algorithms": ["LR", "Ensemble3"]}"#;
    let (status, body) = call(&app, predict(ok)?).await;
    let v: serde_json::Value = serde_json::from_str(&body)?;
    println!("POST /api/predict -> {status}, point doses {}", v["point_doses"]);

    let bad = ok.replace("0.12", "1.5");
    let (status, body) = call(&app, predict(&bad)?).await;
    println!("POST /api/predict (overlap 1.5) -> {status} {body}");
    Ok(())
}
