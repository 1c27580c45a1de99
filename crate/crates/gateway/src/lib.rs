//! HTTP front of the trashcan controller.
//!
//! Every mutating request is turned into a command for the controller
//! thread (see [`spawn_controller`]); reads come from snapshots and the
//! shared store and ledger. Endpoints are described in `API.md`.

mod actor;

use std::convert::Infallible;
use std::net::SocketAddr;
use std::time::Duration as StdDuration;

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::Duration;
use futures::stream::{self, Stream};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use itrash_core::domain::{BinColor, ClassificationOutcome, DisposalRecord, OutcomeKind};
use itrash_core::item::ItemTag;
use itrash_core::ledger::Wallet;
use itrash_core::runtime::RuntimeError;
use itrash_core::store::QueryFilter;

pub use actor::{spawn_controller, ActorError, ClockMode, ControllerHandle, StimulusInput};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: SocketAddr,
        source: std::io::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    /// Exposes `POST /stimulus` (and `POST /sim/advance` with a manual
    /// clock). Off for a build wired to real sensors.
    pub simulation: bool,
    /// Interval of keep-alive comments on the event stream.
    pub heartbeat: StdDuration,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions {
            simulation: true,
            heartbeat: StdDuration::from_secs(10),
        }
    }
}

#[derive(Clone)]
struct AppState {
    handle: ControllerHandle,
    heartbeat: StdDuration,
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<ActorError> for ApiError {
    fn from(e: ActorError) -> Self {
        let status = match &e {
            ActorError::Gone => StatusCode::SERVICE_UNAVAILABLE,
            ActorError::Runtime(r) => match r {
                RuntimeError::InvalidNgo(_) => StatusCode::NOT_FOUND,
                RuntimeError::NoActiveSession(_) => StatusCode::CONFLICT,
                RuntimeError::InvalidQr(_) | RuntimeError::Device(_) => StatusCode::BAD_REQUEST,
                RuntimeError::RewardFailed(_) => StatusCode::BAD_GATEWAY,
                _ => StatusCode::INTERNAL_SERVER_ERROR,
            },
        };
        ApiError(status, e.to_string())
    }
}

pub fn router(handle: ControllerHandle, options: &GatewayOptions) -> Router {
    let mut app = Router::new()
        .route("/state", get(get_state))
        .route("/events", get(events))
        .route("/donate/{ngo}", get(donate))
        .route("/qr", post(qr))
        .route("/ledger/transfers", get(transfers))
        .route("/ledger/wallets", get(wallets))
        .route("/records", get(records));
    if options.simulation {
        app = app.route("/stimulus", post(stimulus));
        if handle.clock == ClockMode::Manual {
            app = app.route("/sim/advance", post(advance));
        }
    }
    app.with_state(AppState {
        handle,
        heartbeat: options.heartbeat,
    })
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(addr: SocketAddr, app: Router) -> Result<(), GatewayError> {
    let listener = tokio::net::TcpListener::bind(addr)
        .await
        .map_err(|source| GatewayError::Bind { addr, source })?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app).await?;
    Ok(())
}

async fn get_state(State(s): State<AppState>) -> impl IntoResponse {
    Json(s.handle.snapshot())
}

async fn events(State(s): State<AppState>) -> Sse<impl Stream<Item = Result<Event, Infallible>>> {
    let rx = s.handle.subscribe();
    let stream = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(snap) => {
                    let event = Event::default()
                        .event("state")
                        .json_data(&snap)
                        .expect("snapshot serializes");
                    return Some((Ok(event), rx));
                }
                Err(RecvError::Lagged(n)) => log::warn!("event subscriber lagged, {n} updates dropped"),
                Err(RecvError::Closed) => return None,
            }
        }
    });
    Sse::new(stream).keep_alive(KeepAlive::new().interval(s.heartbeat))
}

#[derive(Debug, Deserialize)]
struct ItemSpec {
    #[serde(default)]
    id: u64,
    #[serde(default)]
    real: Option<BinColor>,
    /// "blue", "yellow", "brown" or "invalid".
    #[serde(default)]
    predict: Option<String>,
}

#[derive(Debug, Deserialize)]
struct StimulusRequest {
    channel: String,
    #[serde(default)]
    payload: Option<String>,
    /// Camera only: builds a simulated item image instead of `payload`.
    #[serde(default)]
    item: Option<ItemSpec>,
}

async fn stimulus(State(s): State<AppState>, Json(req): Json<StimulusRequest>) -> Result<Response, ApiError> {
    let input = match req.item {
        Some(item) if req.channel == "camera" => {
            let scripted = match item.predict.as_deref() {
                None => None,
                Some("invalid") => Some(ClassificationOutcome::Invalid),
                Some(c) => Some(ClassificationOutcome::Valid(
                    c.parse().map_err(|e: itrash_core::domain::DomainError| ApiError(StatusCode::BAD_REQUEST, e.to_string()))?,
                )),
            };
            StimulusInput::Image(
                ItemTag {
                    item: item.id,
                    real: item.real,
                    scripted,
                }
                .encode(),
            )
        }
        Some(_) => {
            return Err(ApiError(StatusCode::BAD_REQUEST, "`item` is only valid on the camera channel".into()));
        }
        None => StimulusInput::Raw {
            channel: req.channel,
            payload: req.payload,
        },
    };
    let ack = s.handle.stimulus(input).await?;
    Ok((StatusCode::ACCEPTED, Json(ack)).into_response())
}

#[derive(Debug, Deserialize)]
struct AdvanceRequest {
    ms: i64,
}

async fn advance(State(s): State<AppState>, Json(req): Json<AdvanceRequest>) -> Result<Response, ApiError> {
    if req.ms < 0 {
        return Err(ApiError(StatusCode::BAD_REQUEST, "ms must be non-negative".into()));
    }
    let snap = s.handle.advance(Duration::milliseconds(req.ms)).await?;
    Ok(Json(snap).into_response())
}

async fn donate(State(s): State<AppState>, Path(ngo): Path<u32>) -> Result<&'static str, ApiError> {
    Ok(s.handle.donate(ngo).await?)
}

#[derive(Debug, Deserialize)]
struct QrRequest {
    payload: String,
}

async fn qr(State(s): State<AppState>, Json(req): Json<QrRequest>) -> Result<&'static str, ApiError> {
    Ok(s.handle.qr(req.payload).await?)
}

async fn transfers(State(s): State<AppState>) -> impl IntoResponse {
    let body = s.handle.ledger.read().expect("ledger lock").transfers_jsonl();
    ([(header::CONTENT_TYPE, "application/x-ndjson")], body)
}

async fn wallets(State(s): State<AppState>) -> Json<Vec<Wallet>> {
    Json(s.handle.ledger.read().expect("ledger lock").wallets().cloned().collect())
}

#[derive(Debug, Default, Deserialize, Serialize)]
struct RecordQuery {
    #[serde(default)]
    disposed: Option<bool>,
    #[serde(default)]
    outcome: Option<String>,
}

async fn records(State(s): State<AppState>, Query(q): Query<RecordQuery>) -> Result<Json<Vec<DisposalRecord>>, ApiError> {
    let mut filter = QueryFilter {
        disposed_only: q.disposed.unwrap_or(false),
        ..QueryFilter::default()
    };
    if let Some(o) = q.outcome {
        let kind: OutcomeKind = o.parse().map_err(|e: String| ApiError(StatusCode::BAD_REQUEST, e))?;
        filter.outcomes.push(kind);
    }
    Ok(Json(s.handle.store.read().expect("store lock").query(&filter)))
}
