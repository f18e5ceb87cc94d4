//! HTTP service running the two-alternative shape identification task:
//! hands out pre-rendered random-dot trials in a fixed per-session order,
//! records responses durably and reports accuracy.

pub mod error;
pub mod session;
pub mod store;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::{DateTime, Utc};
use motionseg::stimuli::{StimulusBank, STIMULI_DIR};
use serde::{Deserialize, Serialize};

pub use error::{Result, ServiceError};
use session::{plan_session, summarize, trial_bundle, Ack, ResponsePayload, ResultsSummary, Session, SessionConfig, TrialBundle, TrialRecord};
pub use store::Store;

pub const DEFAULT_BIN_WIDTH: f64 = 10.0;

#[derive(Debug, Clone)]
pub struct AppState {
    pub bank: Arc<StimulusBank>,
    pub store: Arc<Store>,
    /// Width of the informative-dot bins in result summaries.
    pub bin_width: f64,
    pub stimuli_dir: PathBuf,
}

impl AppState {
    pub fn open(bank_dir: impl AsRef<Path>, data_dir: impl AsRef<Path>) -> Result<Self> {
        Ok(AppState {
            bank: Arc::new(StimulusBank::load(&bank_dir)?),
            stimuli_dir: bank_dir.as_ref().join(STIMULI_DIR),
            store: Arc::new(Store::open(data_dir)?),
            bin_width: DEFAULT_BIN_WIDTH,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
    pub created_at: DateTime<Utc>,
    pub n_training: usize,
    pub n_test: usize,
    pub n_trials: usize,
}

async fn create_session(
    State(app): State<AppState>,
    payload: std::result::Result<Json<SessionConfig>, JsonRejection>,
) -> Result<(StatusCode, Json<Created>)> {
    let Json(config) = payload.map_err(|e| ServiceError::Malformed(e.body_text()))?;
    let seed = config.seed.unwrap_or_else(rand::random);
    let plan = plan_session(&app.bank, &config, seed)?;
    let session = Session {
        session_id: uuid::Uuid::new_v4().simple().to_string(),
        created_at: Utc::now(),
        seed,
        n_training: config.n_training,
        n_test: config.n_test,
        plan,
    };
    let created = Created {
        session_id: session.session_id.clone(),
        created_at: session.created_at,
        n_training: session.n_training,
        n_test: session.n_test,
        n_trials: session.plan.len(),
    };
    app.store.insert(session)?;
    Ok((StatusCode::CREATED, Json(created)))
}

async fn get_trial(
    State(app): State<AppState>,
    UrlPath((id, index)): UrlPath<(String, usize)>,
) -> Result<Json<TrialBundle>> {
    let state = app.store.get(&id)?;
    let state = state.lock().expect("session lock");
    let len = state.session.plan.len();
    if index >= len {
        return Err(ServiceError::UnknownTrial { index, len });
    }
    if index != state.cursor() {
        return Err(ServiceError::OutOfOrder {
            requested: index,
            cursor: state.cursor(),
        });
    }
    Ok(Json(trial_bundle(&state.session, index, &app.bank)?))
}

async fn post_response(
    State(app): State<AppState>,
    UrlPath(id): UrlPath<String>,
    payload: std::result::Result<Json<ResponsePayload>, JsonRejection>,
) -> Result<Json<Ack>> {
    let Json(p) = payload.map_err(|e| ServiceError::Malformed(e.body_text()))?;
    if !(p.response_time_ms.is_finite() && p.response_time_ms > 0.0) {
        return Err(ServiceError::Malformed("response_time_ms must be positive".into()));
    }
    let state = app.store.get(&id)?;
    let mut state = state.lock().expect("session lock");
    let len = state.session.plan.len();
    let cursor = state.cursor();
    if p.trial_index >= len {
        return Err(ServiceError::UnknownTrial { index: p.trial_index, len });
    }
    if p.trial_index < cursor {
        return Err(ServiceError::Duplicate(p.trial_index));
    }
    if p.trial_index > cursor {
        return Err(ServiceError::OutOfOrder {
            requested: p.trial_index,
            cursor,
        });
    }
    let planned = state.session.plan[cursor].clone();
    let entry = app
        .bank
        .get(&planned.stimulus_id)
        .ok_or_else(|| ServiceError::Storage(format!("stimulus {} missing from bank", planned.stimulus_id)))?;
    let correct = planned.option_in(p.choice) == entry.target_option;
    let record = TrialRecord {
        session_id: id,
        trial_index: cursor,
        stimulus_id: planned.stimulus_id.clone(),
        phase: planned.phase,
        choice: p.choice,
        correct,
        response_time_ms: p.response_time_ms,
        received_at: Utc::now(),
    };
    app.store.append(&mut state, record)?;
    Ok(Json(Ack {
        trial_index: cursor,
        phase: planned.phase,
        correct: (planned.phase == session::Phase::Training).then_some(correct),
        next_trial_index: (cursor + 1 < len).then_some(cursor + 1),
    }))
}

async fn session_results(State(app): State<AppState>, UrlPath(id): UrlPath<String>) -> Result<Json<ResultsSummary>> {
    let state = app.store.get(&id)?;
    let state = state.lock().expect("session lock");
    Ok(Json(summarize(&state.records, 1, &app.bank, app.bin_width)?))
}

async fn all_results(State(app): State<AppState>) -> Result<Json<ResultsSummary>> {
    let ids = app.store.session_ids();
    let mut records = Vec::new();
    for id in &ids {
        let state = app.store.get(id)?;
        records.extend(state.lock().expect("session lock").records.iter().cloned());
    }
    Ok(Json(summarize(&records, ids.len(), &app.bank, app.bin_width)?))
}

/// Static PNG assets of the bank. Only plain relative paths below the
/// stimuli directory resolve.
async fn stimulus_asset(State(app): State<AppState>, UrlPath(rel): UrlPath<String>) -> Result<impl IntoResponse> {
    let rel = Path::new(&rel);
    let plain = rel.components().all(|c| matches!(c, std::path::Component::Normal(_)));
    if !plain || rel.extension().and_then(|e| e.to_str()) != Some("png") {
        return Err(ServiceError::UnknownAsset(rel.display().to_string()));
    }
    let path = app.stimuli_dir.join(rel);
    let bytes = tokio::fs::read(&path)
        .await
        .map_err(|_| ServiceError::UnknownAsset(rel.display().to_string()))?;
    Ok(([(header::CONTENT_TYPE, "image/png")], bytes))
}

/// Routes of the service; `/stimuli` serves the PNGs under `<bank_dir>/stimuli`.
pub fn router(app: AppState) -> Router {
    Router::new()
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}/trials/{index}", get(get_trial))
        .route("/api/sessions/{id}/responses", post(post_response))
        .route("/api/sessions/{id}/results", get(session_results))
        .route("/api/results", get(all_results))
        .route(&format!("/{STIMULI_DIR}/{{*path}}"), get(stimulus_asset))
        .with_state(app)
}

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub bank_dir: PathBuf,
    pub data_dir: PathBuf,
    pub addr: SocketAddr,
}

pub async fn serve(config: ServeConfig) -> std::io::Result<()> {
    let app = AppState::open(&config.bank_dir, &config.data_dir).map_err(std::io::Error::other)?;
    let listener = tokio::net::TcpListener::bind(config.addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(app)).await
}
