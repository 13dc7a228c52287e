//! JSON-over-HTTP prediction API.
//!
//! | method | path              | body                                   |
//! |--------|-------------------|----------------------------------------|
//! | GET    | `/api/health`     |                                        |
//! | GET    | `/api/models`     |                                        |
//! | GET    | `/api/constraints`|                                        |
//! | POST   | `/api/predict`    | `{features, organ, algorithms[]}`      |
//!
//! The loaded bundle is shared read-only between requests, so every
//! response depends only on the bundle and the request body.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use tower_http::cors::CorsLayer;

use crate::bundle::{ModelBundle, FORMAT_VERSION};
use crate::config::{Constraint, ConstraintSet};
use crate::dvh::{DoseGrid, DvhError, Organ};
use crate::pipeline::{predict_case, PipelineError, PredictRequest};
use crate::regress::{AlgorithmId, Hyperparams};

pub struct AppState {
    pub bundle: ModelBundle,
    pub constraints: ConstraintSet,
}

#[derive(Debug, Serialize)]
struct ErrorBody {
    error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    field: Option<&'static str>,
}

fn error(status: StatusCode, error: String, field: Option<&'static str>) -> Response {
    (status, Json(ErrorBody { error, field })).into_response()
}

#[derive(Debug, Serialize)]
struct Health {
    status: &'static str,
    version: &'static str,
    bundle_format_version: u32,
}

async fn health() -> Json<Health> {
    Json(Health { status: "ok", version: env!("CARGO_PKG_VERSION"), bundle_format_version: FORMAT_VERSION })
}

#[derive(Debug, Serialize)]
struct RosterEntry {
    algorithm: AlgorithmId,
    #[serde(skip_serializing_if = "Option::is_none")]
    training_fingerprint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    hyperparams: Option<Hyperparams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    members: Option<Vec<AlgorithmId>>,
}

#[derive(Debug, Serialize)]
struct ModelsBody {
    fingerprint: String,
    format_version: u32,
    created_unix: u64,
    seed: u64,
    grid: DoseGrid,
    point_doses_cgy: [f64; 3],
    organs: BTreeMap<Organ, Vec<RosterEntry>>,
}

async fn models(State(state): State<Arc<AppState>>) -> Json<ModelsBody> {
    let b = &state.bundle;
    let organs = Organ::ALL
        .iter()
        .map(|&organ| {
            let entries = b
                .roster(organ)
                .into_iter()
                .map(|alg| match b.model(alg, organ) {
                    Some(m) => RosterEntry {
                        algorithm: alg,
                        training_fingerprint: Some(m.training_fingerprint.clone()),
                        hyperparams: Some(m.hyperparams.clone()),
                        members: None,
                    },
                    None => RosterEntry {
                        algorithm: alg,
                        training_fingerprint: None,
                        hyperparams: None,
                        members: b.meta.ensembles.get(&organ).and_then(|e| e.members(alg)).map(<[_]>::to_vec),
                    },
                })
                .collect();
            (organ, entries)
        })
        .collect();
    Json(ModelsBody {
        fingerprint: b.meta.fingerprint.clone(),
        format_version: b.meta.format_version,
        created_unix: b.meta.created_unix,
        seed: b.meta.seed,
        grid: b.meta.grid,
        point_doses_cgy: crate::eval::POINT_DOSES,
        organs,
    })
}

async fn constraints(State(state): State<Arc<AppState>>) -> Json<BTreeMap<Organ, Vec<Constraint>>> {
    Json(state.constraints.by_organ())
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let request: PredictRequest = match serde_json::from_slice(&body) {
        Ok(r) => r,
        Err(e) => return error(StatusCode::BAD_REQUEST, format!("malformed request: {e}"), None),
    };
    match predict_case(&state.bundle, &state.constraints, &request) {
        Ok(resp) => Json(resp).into_response(),
        Err(PipelineError::InvalidFeatures(e)) => {
            let field = match &e {
                DvhError::InvalidFeature { field, .. } => Some(*field),
                _ => None,
            };
            error(StatusCode::BAD_REQUEST, e.to_string(), field)
        }
        Err(e @ PipelineError::UnknownAlgorithm(_)) => error(StatusCode::NOT_FOUND, e.to_string(), None),
        Err(e) => error(StatusCode::INTERNAL_SERVER_ERROR, e.to_string(), None),
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/health", get(health))
        .route("/api/models", get(models))
        .route("/api/constraints", get(constraints))
        .route("/api/predict", post(predict))
        .layer(CorsLayer::permissive())
        .with_state(state)
}

/// Serves until Ctrl-C.
pub async fn serve(state: AppState, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
