use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::routing::{get, post};
use axum::{Json, Router};
use mmsvae_core::critique::Polarity;
use mmsvae_core::dataio::normalize_keyphrase;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tower_http::cors::CorsLayer;

use crate::error::ApiError;
use crate::state::{AppState, KeyphraseRef, Profile, SessionView};

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub user_id: Option<String>,
    pub keyphrases: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
pub struct CritiqueRequest {
    pub keyphrase: String,
    pub polarity: String,
}

#[derive(Debug, Serialize)]
pub struct ModelInfo {
    pub variant: String,
    pub latent_dim: usize,
    pub n_items: usize,
    pub n_keyphrases: usize,
    pub checkpoint_hash: String,
    pub blender_mode: Option<String>,
    pub blender_hash: Option<String>,
    pub top_n: usize,
    pub max_turns: usize,
}

fn body<T>(payload: Result<Json<T>, JsonRejection>) -> Result<T, ApiError> {
    payload
        .map(|Json(v)| v)
        .map_err(|e| ApiError::new(e.status(), e.body_text()))
}

async fn create_session(
    State(state): State<AppState>,
    payload: Result<Json<CreateSession>, JsonRejection>,
) -> Result<(StatusCode, Json<SessionView>), ApiError> {
    let req = body(payload)?;
    let loaded = state.loaded()?;
    let profile = match (req.user_id, req.keyphrases) {
        (Some(id), None) => Profile::User(
            loaded
                .data
                .user_index(&id)
                .ok_or_else(|| ApiError::not_found(format!("unknown user `{id}`")))?,
        ),
        (None, Some(names)) if !names.is_empty() => {
            let mut ks = names
                .iter()
                .map(|n| state.keyphrase(&normalize_keyphrase(n)))
                .collect::<Result<Vec<_>, _>>()?;
            ks.sort_unstable();
            ks.dedup();
            Profile::Cold(ks)
        }
        _ => {
            return Err(ApiError::unprocessable(
                "give exactly one of `user_id` or a non-empty `keyphrases` list",
            ))
        }
    };
    Ok((StatusCode::CREATED, Json(state.create(profile)?)))
}

async fn add_critique(
    State(state): State<AppState>,
    Path(id): Path<String>,
    payload: Result<Json<CritiqueRequest>, JsonRejection>,
) -> Result<Json<SessionView>, ApiError> {
    // unknown sessions answer 404 before the body is looked at
    state.with_session(&id, |_, _| Ok(()))?;
    let req = body(payload)?;
    let polarity: Polarity = req.polarity.parse().map_err(|e: mmsvae_core::Error| ApiError::unprocessable(e.to_string()))?;
    let k = state.keyphrase(&normalize_keyphrase(&req.keyphrase))?;
    Ok(Json(state.critique(&id, k, polarity)?))
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(state.get(&id)?))
}

async fn reset_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    Ok(Json(state.reset(&id)?))
}

async fn models(State(state): State<AppState>) -> Json<Value> {
    let cfg = state.config();
    let models: Vec<ModelInfo> = state
        .loaded()
        .ok()
        .map(|l| ModelInfo {
            variant: l.model.variant.name().to_string(),
            latent_dim: l.model.dims.latent_dim,
            n_items: l.model.dims.n_items,
            n_keyphrases: l.model.dims.n_keyphrases,
            checkpoint_hash: l.model_hash.clone(),
            blender_mode: l.blender.as_ref().map(|b| format!("{:?}", b.mode).to_lowercase()),
            blender_hash: l.blender_hash.clone(),
            top_n: cfg.top_n,
            max_turns: cfg.max_turns,
        })
        .into_iter()
        .collect();
    Json(json!({ "models": models }))
}

async fn keyphrases(State(state): State<AppState>) -> Result<Json<Vec<KeyphraseRef>>, ApiError> {
    let l = state.loaded()?;
    Ok(Json(
        l.data
            .keyphrases
            .iter()
            .enumerate()
            .map(|(index, name)| KeyphraseRef {
                index,
                name: name.clone(),
            })
            .collect(),
    ))
}

async fn health(State(state): State<AppState>) -> Json<Value> {
    Json(json!({
        "status": "ok",
        "model_loaded": state.loaded().is_ok(),
        "sessions": state.session_count(),
    }))
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/models", get(models))
        .route("/keyphrases", get(keyphrases))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session).delete(reset_session))
        .route("/sessions/{id}/critiques", post(add_critique))
        .layer(CorsLayer::permissive())
        .with_state(state)
}
