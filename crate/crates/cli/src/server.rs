//! HTTP session service hosting live experiment sessions.
//!
//! Every session is backed by an append-only JSONL file in the data
//! directory; on start-up the service replays those files, so an interrupted
//! session resumes at its last recorded flight. Latent route rates stay on the
//! server until the session is complete.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use metabandit::beliefs::default_hypothesis_class;
use metabandit::env::{airline_name, spec_from_condition, Environment};
use metabandit::io::{
    read_session, record_from_trajectory, write_session, SessionRecord, SessionWriter, SubjectKind,
};
use metabandit::rng::{self, Domain, StreamRng};
use metabandit::simulate::{run_episode, Trajectory};
use metabandit::{Agent, AgentConfig, ChoiceRule, ConditionLabel, PolicyKind};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub routes: usize,
    pub flights: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            routes: 10,
            flights: 10,
        }
    }
}

struct LiveSession {
    record: SessionRecord,
    env: Environment,
    writer: Option<SessionWriter>,
}

pub struct AppState {
    config: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Mutex<LiveSession>>>>,
}

impl AppState {
    /// Creates the data directory if needed and replays every session file in it.
    pub fn load(config: ServiceConfig) -> anyhow::Result<Arc<Self>> {
        std::fs::create_dir_all(&config.data_dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&config.data_dir)? {
            let path = entry?.path();
            if path.extension().is_none_or(|x| x != "jsonl") {
                continue;
            }
            match replay(&path) {
                Ok(live) => {
                    sessions.insert(live.record.header.session_id.clone(), Arc::new(Mutex::new(live)));
                }
                Err(e) => log::warn!("skipping {}: {e}", path.display()),
            }
        }
        log::info!("replayed {} sessions from {}", sessions.len(), config.data_dir.display());
        Ok(Arc::new(Self {
            config,
            sessions: RwLock::new(sessions),
        }))
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<LiveSession>>, ApiError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown session {id}")))
    }

    fn session_path(&self, id: &str) -> PathBuf {
        self.config.data_dir.join(format!("{id}.jsonl"))
    }
}

fn replay(path: &Path) -> metabandit::Result<LiveSession> {
    let record = read_session(path)?;
    let env = Environment::with_rates(record.header.env.clone(), record.header.route_rates.clone())?;
    let writer = if record.completed {
        None
    } else {
        Some(SessionWriter::append_to(path)?)
    };
    Ok(LiveSession { record, env, writer })
}

/// Environment of a session: the condition's hyper-priors with rates drawn from `seed`.
pub fn session_environment(
    condition: ConditionLabel,
    routes: usize,
    flights: usize,
    seed: u64,
) -> metabandit::Result<Environment> {
    Environment::realize(spec_from_condition(&condition.spec(), routes, flights, seed)?)
}

/// Choice stream of a bot session with the given seed.
pub fn bot_rng(seed: u64) -> StreamRng {
    rng::stream(seed, Domain::Session, &[0])
}

/// Plays a whole bot episode the way the service does.
pub fn play_bot(env: &Environment, config: &AgentConfig, seed: u64) -> metabandit::Result<Trajectory> {
    let class = Arc::new(default_hypothesis_class(env.spec.k)?);
    let mut agent = Agent::new(config.clone(), class)?;
    run_episode(&mut agent, env, &mut bot_rng(seed))
}

#[derive(Debug)]
pub struct ApiError(pub StatusCode, pub String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

impl From<metabandit::Error> for ApiError {
    fn from(e: metabandit::Error) -> Self {
        ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

fn bad_request(msg: impl Into<String>) -> ApiError {
    ApiError(StatusCode::BAD_REQUEST, msg.into())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRequest {
    pub condition: String,
    pub subject: SubjectKind,
    #[serde(default)]
    pub seed: Option<u64>,
    /// Bot policy: `dp`, `metadp`, `brmdp`, `brmdp3`, ...
    #[serde(default)]
    pub policy: Option<String>,
    /// Bot choice rule, e.g. `eps:0.1`.
    #[serde(default)]
    pub rule: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub k: usize,
    pub m: usize,
    pub t: usize,
    pub airline_names: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cursor {
    pub route: usize,
    pub flight: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub on_time: u64,
    pub points: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateResponse {
    /// Next flight to be flown, or the last one once the session is done.
    pub route: usize,
    pub flight: usize,
    pub totals: Totals,
    pub done: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChoiceRequest {
    /// 1-based airline.
    pub airline: usize,
    #[serde(default)]
    pub reaction_time_ms: Option<u64>,
    /// When given, the choice is only accepted at this cursor.
    #[serde(default)]
    pub route: Option<usize>,
    #[serde(default)]
    pub flight: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceResponse {
    pub outcome: u8,
    pub points_after: u64,
    pub next: Option<Cursor>,
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/state", get(session_state))
        .route("/sessions/{id}/choice", post(make_choice))
        .route("/sessions/{id}/log", get(session_log))
        .with_state(state)
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339()
}

fn bot_config(req: &CreateRequest, flights: usize) -> Result<AgentConfig, ApiError> {
    let kind: PolicyKind = req
        .policy
        .as_deref()
        .unwrap_or("metadp")
        .parse()
        .map_err(|e: metabandit::Error| bad_request(e.to_string()))?;
    let rule: ChoiceRule = req
        .rule
        .as_deref()
        .unwrap_or("eps:0.1")
        .parse()
        .map_err(|e: metabandit::Error| bad_request(e.to_string()))?;
    Ok(AgentConfig::new(kind, rule, flights))
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    Json(req): Json<CreateRequest>,
) -> Result<Json<CreateResponse>, ApiError> {
    let condition: ConditionLabel = req.condition.parse().map_err(|e: metabandit::Error| bad_request(e.to_string()))?;
    let seed = req.seed.unwrap_or_else(rand::random);
    let (routes, flights) = (state.config.routes, state.config.flights);
    let env = session_environment(condition, routes, flights, seed)?;
    let id = uuid::Uuid::new_v4().to_string();
    let path = state.session_path(&id);
    let live = match req.subject {
        SubjectKind::Human => {
            let record = SessionRecord::new(&id, SubjectKind::Human, &env, None);
            let writer = SessionWriter::create(&path, &record.header)?;
            LiveSession {
                record,
                env,
                writer: Some(writer),
            }
        }
        SubjectKind::Bot => {
            let config = bot_config(&req, flights)?;
            let (env, record) = tokio::task::spawn_blocking(move || {
                let traj = play_bot(&env, &config, seed)?;
                let record = record_from_trajectory(&id, &env, &traj, Some(config), &now())?;
                write_session(&path, &record)?;
                Ok::<_, metabandit::Error>((env, record))
            })
            .await
            .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))??;
            LiveSession {
                record,
                env,
                writer: None,
            }
        }
    };
    let id = live.record.header.session_id.clone();
    let k = live.env.spec.k;
    state
        .sessions
        .write()
        .unwrap()
        .insert(id.clone(), Arc::new(Mutex::new(live)));
    log::info!("created {:?} session {id} ({condition}, seed {seed})", req.subject);
    Ok(Json(CreateResponse {
        session_id: id,
        k,
        m: routes,
        t: flights,
        airline_names: (0..k).map(airline_name).collect(),
    }))
}

fn state_of(record: &SessionRecord) -> StateResponse {
    let (route, flight) = record
        .cursor()
        .unwrap_or((record.header.env.m, record.header.env.t));
    StateResponse {
        route,
        flight,
        totals: Totals {
            on_time: record.on_time(),
            points: record.points(),
        },
        done: record.completed,
    }
}

async fn session_state(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<StateResponse>, ApiError> {
    let session = state.get(&id)?;
    let live = session.lock().unwrap();
    Ok(Json(state_of(&live.record)))
}

async fn make_choice(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Json(req): Json<ChoiceRequest>,
) -> Result<Json<ChoiceResponse>, ApiError> {
    let session = state.get(&id)?;
    let mut live = session.lock().unwrap();
    if live.record.completed {
        return Err(ApiError(StatusCode::GONE, "session is complete".into()));
    }
    if live.record.header.subject == SubjectKind::Bot {
        return Err(ApiError(StatusCode::CONFLICT, "bot sessions play themselves".into()));
    }
    let (route, flight) = live.record.cursor().expect("incomplete session has a cursor");
    if req.route.is_some_and(|r| r != route) || req.flight.is_some_and(|f| f != flight) {
        return Err(ApiError(
            StatusCode::CONFLICT,
            format!("choice for route {:?} flight {:?}, expected route {route} flight {flight}", req.route, req.flight),
        ));
    }
    let k = live.env.spec.k;
    if req.airline < 1 || req.airline > k {
        return Err(bad_request(format!("airline must be in 1..={k}")));
    }
    let outcome = live.env.outcome(route, flight, req.airline - 1)?;
    let row = live
        .record
        .push_flight(req.airline, outcome, req.reaction_time_ms, now())?
        .clone();
    let done = live.record.completed;
    if let Some(writer) = live.writer.as_mut() {
        writer.append(&row)?;
        if done {
            writer.finish()?;
        }
    }
    if done {
        live.writer = None;
    }
    Ok(Json(ChoiceResponse {
        outcome,
        points_after: row.points_after,
        next: live.record.cursor().map(|(route, flight)| Cursor { route, flight }),
    }))
}

async fn session_log(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
) -> Result<Json<SessionRecord>, ApiError> {
    let session = state.get(&id)?;
    let live = session.lock().unwrap();
    if !live.record.completed {
        return Err(ApiError(StatusCode::CONFLICT, "log is available once the session is complete".into()));
    }
    Ok(Json(live.record.clone()))
}

/// Binds `addr` and serves until interrupted.
pub async fn serve(addr: &str, config: ServiceConfig) -> anyhow::Result<()> {
    let state = AppState::load(config)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
