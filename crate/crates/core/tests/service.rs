mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use dvhpred::config::{Constraint, ConstraintSet};
use dvhpred::dvh::{FeatureVector, Organ};
use dvhpred::pipeline::{predict_case, PredictRequest};
use dvhpred::service::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

fn features() -> FeatureVector {
    FeatureVector {
        ptv60_cc: 100.0,
        ptv44_cc: 250.0,
        rectum_cc: 80.0,
        bladder_cc: 250.0,
        rectum_overlap_frac: 0.15,
        bladder_overlap_frac: 0.1,
    }
}

fn constraints() -> ConstraintSet {
    ConstraintSet {
        bladder: vec![Constraint { dose_cgy: 6000.0, max_volume_pct: 5.0 }],
        rectum: vec![Constraint { dose_cgy: 4000.0, max_volume_pct: 60.0 }],
    }
}

fn app() -> (Router, Arc<AppState>) {
    let state = Arc::new(AppState { bundle: common::small_bundle(), constraints: constraints() });
    (router(state.clone()), state)
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    (status, resp.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn post(app: &Router, body: String) -> (StatusCode, Value) {
    let req = Request::post("/api/predict").header(header::CONTENT_TYPE, "application/json").body(Body::from(body));
    let (status, bytes) = send(app, req.unwrap()).await;
    (status, serde_json::from_slice(&bytes).unwrap())
}

#[tokio::test]
async fn health_reports_version() {
    let (app, _) = app();
    let (status, body) = send(&app, Request::get("/api/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["status"], "ok");
    assert_eq!(v["version"], env!("CARGO_PKG_VERSION"));
}

#[tokio::test]
async fn models_list_roster_and_members() {
    let (app, state) = app();
    let (status, body) = send(&app, Request::get("/api/models").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(v["fingerprint"], state.bundle.meta.fingerprint);
    assert_eq!(v["grid"]["n_bins"], 64);
    let bladder = v["organs"]["bladder"].as_array().unwrap();
    let names: Vec<&str> = bladder.iter().map(|e| e["algorithm"].as_str().unwrap()).collect();
    assert_eq!(names, ["LR", "EN", "DT", "Ensemble3"]);
    assert!(bladder[0]["training_fingerprint"].is_string());
    assert_eq!(bladder[3]["members"].as_array().unwrap().len(), 3);
}

#[tokio::test]
async fn constraints_echoed() {
    let (app, _) = app();
    let (_, body) = send(&app, Request::get("/api/constraints").body(Body::empty()).unwrap()).await;
    let v: Value = serde_json::from_slice(&body).unwrap();
    assert_eq!(
        v,
        json!({"bladder": [{"dose_cgy": 6000.0, "max_volume_pct": 5.0}], "rectum": [{"dose_cgy": 4000.0, "max_volume_pct": 60.0}]})
    );
}

#[tokio::test]
async fn predict_matches_library_call_and_is_pure() {
    let (app, state) = app();
    let request =
        PredictRequest { features: features(), organ: Organ::Rectum, algorithms: vec!["DT".into(), "LR".into()] };
    let body = serde_json::to_string(&request).unwrap();
    let expected = serde_json::to_vec(&predict_case(&state.bundle, &state.constraints, &request).unwrap()).unwrap();
    let mk = || Request::post("/api/predict").body(Body::from(body.clone())).unwrap();
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let app = app.clone();
            let req = mk();
            tokio::spawn(async move { send(&app, req).await })
        })
        .collect();
    for h in handles {
        let (status, bytes) = h.await.unwrap();
        assert_eq!(status, StatusCode::OK);
        assert_eq!(bytes, expected);
    }
    let v: Value = serde_json::from_slice(&expected).unwrap();
    assert_eq!(v["curves"].as_object().unwrap().len(), 2);
    assert_eq!(v["curves"]["LR"]["values"].as_array().unwrap().len(), 64);
    assert_eq!(v["point_doses"]["DT"].as_array().unwrap().len(), 3);
    assert_eq!(v["constraint_flags"]["LR"][0]["dose_cgy"], 4000.0);
    assert_eq!(v["band"]["lower"].as_array().unwrap().len(), 64);
}

#[tokio::test]
async fn empty_algorithm_list_serves_roster() {
    let (app, _) = app();
    let (status, v) = post(&app, json!({"features": features(), "organ": "bladder"}).to_string()).await;
    assert_eq!(status, StatusCode::OK);
    let names: Vec<&String> = v["curves"].as_object().unwrap().keys().collect();
    assert_eq!(names, ["DT", "EN", "Ensemble3", "LR"]);
}

#[tokio::test]
async fn invalid_features_are_400_with_field() {
    let (app, _) = app();
    let mut f = features();
    f.bladder_cc = -1.0;
    let (status, v) = post(&app, json!({"features": f, "organ": "bladder"}).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "bladder_cc");
    let mut f = features();
    f.rectum_overlap_frac = 1.2;
    let (status, v) = post(&app, json!({"features": f, "organ": "rectum"}).to_string()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "rectum_overlap_frac");
}

#[tokio::test]
async fn malformed_bodies_are_400() {
    let (app, _) = app();
    for body in ["", "{", r#"{"organ": "bladder"}"#, r#"{"features": {}, "organ": "kidney"}"#] {
        let (status, v) = post(&app, body.into()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert!(v["error"].as_str().unwrap().starts_with("malformed request"));
    }
}

#[tokio::test]
async fn unknown_algorithm_is_404() {
    let (app, _) = app();
    for alg in ["XGB", "RF"] {
        let (status, v) =
            post(&app, json!({"features": features(), "organ": "bladder", "algorithms": [alg]}).to_string()).await;
        assert_eq!(status, StatusCode::NOT_FOUND);
        assert!(v["error"].as_str().unwrap().contains(alg));
    }
}

#[tokio::test]
async fn cors_preflight_allowed() {
    let (app, _) = app();
    let req = Request::builder()
        .method(Method::OPTIONS)
        .uri("/api/predict")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app.oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert!(resp.headers().contains_key(header::ACCESS_CONTROL_ALLOW_ORIGIN));
}
