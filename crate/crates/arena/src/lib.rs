//! HTTP service for live human-vs-AI sessions, AI move explanations, replays
//! of stored self-play games, and training statistics.

pub mod error;
pub mod session;
pub mod store;

use std::collections::HashMap;
use std::convert::Infallible;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::routing::{get, post};
use axum::{Json, Router};
use futures::stream::{self, Stream};
use gomoku_core::catalog::Catalog;
use gomoku_core::engine::{Board, Player, Position, DEFAULT_SIZE};
use gomoku_core::evaluation::{
    EvaluatorBackend, HeuristicBackend, LlmBackend, LlmClient, LlmConfig, RandomLegalBackend,
};
use gomoku_core::move_select::default_workers;
use gomoku_core::persistence::load_checkpoint;
use gomoku_core::prompting::{PromptTemplate, DEFAULT_RULES};
use gomoku_core::qlearn::{Mlp, QNetwork, TrainConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

pub use error::ArenaError;
use session::{AiMove, AiTurn, Brain, Session, SessionView};

#[derive(Debug, Clone)]
pub struct ArenaConfig {
    pub store_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub catalog: Catalog,
    pub template: PromptTemplate,
    pub rules: String,
    pub workers: usize,
    pub default_backend: String,
    pub llm: LlmConfig,
    pub idle_timeout: Duration,
    /// Seed for the untrained network used when no checkpoint fits.
    pub seed: u64,
}

impl Default for ArenaConfig {
    fn default() -> Self {
        ArenaConfig {
            store_path: PathBuf::from("transitions.tsv"),
            checkpoint_path: PathBuf::from("checkpoint.bin"),
            catalog: Catalog::default_catalog(),
            template: PromptTemplate::default(),
            rules: DEFAULT_RULES.to_string(),
            workers: default_workers(),
            default_backend: "heuristic".into(),
            llm: LlmConfig::default(),
            idle_timeout: Duration::from_secs(3600),
            seed: TrainConfig::default().seed,
        }
    }
}

struct Slot {
    session: tokio::sync::Mutex<Session>,
    events: broadcast::Sender<SessionEvent>,
    last_seen: Mutex<Instant>,
}

pub struct AppState {
    config: ArenaConfig,
    catalog: Arc<Catalog>,
    template: Arc<PromptTemplate>,
    rules: Arc<str>,
    heuristic: Arc<dyn EvaluatorBackend>,
    sessions: Mutex<HashMap<String, Arc<Slot>>>,
    next_id: AtomicU64,
    default_nets: Mutex<HashMap<usize, Arc<QNetwork>>>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "event", rename_all = "kebab-case")]
pub enum SessionEvent {
    MoveApplied { player: Player, position: Position, session: SessionView },
    AiThinking { turn: usize },
    AiMoved { ai_move: AiMove },
}

impl SessionEvent {
    fn name(&self) -> &'static str {
        match self {
            SessionEvent::MoveApplied { .. } => "move-applied",
            SessionEvent::AiThinking { .. } => "ai-thinking",
            SessionEvent::AiMoved { .. } => "ai-moved",
        }
    }
}

#[derive(Debug, Deserialize)]
pub struct CreateSession {
    pub size: Option<usize>,
    pub human: Option<String>,
    pub backend: Option<String>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
pub struct MoveBody {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Serialize)]
pub struct AiMoveResponse {
    pub position: Position,
    pub explanation: session::AiMoveExplanation,
    pub session: SessionView,
}

type Shared = Arc<AppState>;

impl AppState {
    pub fn new(config: ArenaConfig) -> Shared {
        Arc::new(AppState {
            catalog: Arc::new(config.catalog.clone()),
            template: Arc::new(config.template.clone()),
            rules: Arc::from(config.rules.as_str()),
            heuristic: Arc::new(HeuristicBackend::default()),
            sessions: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
            default_nets: Mutex::new(HashMap::new()),
            config,
        })
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().unwrap().len()
    }

    /// Drop sessions idle for longer than the configured timeout.
    pub fn evict_idle(&self, now: Instant) -> usize {
        let timeout = self.config.idle_timeout;
        let mut sessions = self.sessions.lock().unwrap();
        let before = sessions.len();
        sessions.retain(|_, slot| now.saturating_duration_since(*slot.last_seen.lock().unwrap()) < timeout);
        before - sessions.len()
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, ArenaError> {
        let slot = self
            .sessions
            .lock()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| ArenaError::UnknownSession(id.to_string()))?;
        *slot.last_seen.lock().unwrap() = Instant::now();
        Ok(slot)
    }

    fn backend(&self, tag: &str, seed: u64) -> Result<Arc<dyn EvaluatorBackend>, ArenaError> {
        match tag {
            "heuristic" => Ok(self.heuristic.clone()),
            "random" => Ok(Arc::new(RandomLegalBackend::new(seed))),
            "llm" => {
                let client = LlmClient::new(self.config.llm.clone()).map_err(|e| ArenaError::BadRequest(e.to_string()))?;
                Ok(Arc::new(LlmBackend::with_prompts(
                    client,
                    self.config.template.clone(),
                    self.config.rules.clone(),
                )))
            }
            other => Err(ArenaError::BadRequest(format!(
                "unknown backend {other:?} (expected heuristic, random or llm)"
            ))),
        }
    }

    /// The server checkpoint if it fits `size`, else a seeded untrained net.
    fn default_net(&self, size: usize) -> Result<Arc<QNetwork>, ArenaError> {
        if let Some(net) = self.default_nets.lock().unwrap().get(&size) {
            return Ok(net.clone());
        }
        let actions = self.catalog.action_space_size();
        let from_disk = if self.config.checkpoint_path.exists() {
            let cp = load_checkpoint(&self.config.checkpoint_path).map_err(|e| ArenaError::Checkpoint(e.to_string()))?;
            Some(cp.net).filter(|n| n.input_len() == size * size && n.output_len() == actions)
        } else {
            None
        };
        let net = Arc::new(from_disk.unwrap_or_else(|| {
            let cfg = TrainConfig {
                seed: self.config.seed,
                ..TrainConfig::default()
            };
            Mlp::new(&cfg.dims(size * size, actions), &mut ChaCha8Rng::seed_from_u64(cfg.seed))
        }));
        self.default_nets.lock().unwrap().insert(size, net.clone());
        Ok(net)
    }

    fn load_net(&self, path: &std::path::Path, size: usize) -> Result<Arc<QNetwork>, ArenaError> {
        let cp = load_checkpoint(path).map_err(|e| ArenaError::Checkpoint(format!("{}: {e}", path.display())))?;
        if cp.net.input_len() != size * size || cp.net.output_len() != self.catalog.action_space_size() {
            return Err(ArenaError::Checkpoint(format!(
                "network {:?} does not fit a {size}x{size} board and {} actions",
                cp.net.dims(),
                self.catalog.action_space_size()
            )));
        }
        Ok(Arc::new(cp.net))
    }

    pub fn create_session(&self, req: CreateSession) -> Result<SessionView, ArenaError> {
        let size = req.size.unwrap_or(DEFAULT_SIZE);
        let board = Board::new(size).map_err(|e| ArenaError::BadRequest(e.to_string()))?;
        let human = match req.human.as_deref().unwrap_or("black") {
            "black" => Player::Black,
            "white" => Player::White,
            other => return Err(ArenaError::BadRequest(format!("unknown colour {other:?}"))),
        };
        let tag = req.backend.unwrap_or_else(|| self.config.default_backend.clone());
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        let backend = self.backend(&tag, self.config.seed ^ n)?;
        let net = match &req.checkpoint {
            Some(path) => self.load_net(path, size)?,
            None => self.default_net(size)?,
        };
        let id = format!("s{n}");
        let brain = Brain {
            catalog: self.catalog.clone(),
            template: self.template.clone(),
            rules: self.rules.clone(),
            backend,
            net,
            workers: self.config.workers,
        };
        let session = Session::new(id.clone(), board, human, tag, brain);
        let view = session.view();
        let (events, _) = broadcast::channel(64);
        self.sessions.lock().unwrap().insert(
            id,
            Arc::new(Slot {
                session: tokio::sync::Mutex::new(session),
                events,
                last_seen: Mutex::new(Instant::now()),
            }),
        );
        Ok(view)
    }
}

fn json_body<T>(body: Result<Json<T>, JsonRejection>) -> Result<T, ArenaError> {
    body.map(|Json(v)| v).map_err(|e| ArenaError::BadRequest(e.body_text()))
}

async fn create_session(
    State(app): State<Shared>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> Result<Json<SessionView>, ArenaError> {
    let req = json_body(body)?;
    let app2 = app.clone();
    // Checkpoint loading touches the disk.
    tokio::task::spawn_blocking(move || app2.create_session(req))
        .await
        .map_err(|e| ArenaError::Backend(e.to_string()))?
        .map(Json)
}

async fn get_session(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<SessionView>, ArenaError> {
    let slot = app.slot(&id)?;
    let session = slot.session.lock().await;
    Ok(Json(session.view()))
}

async fn human_move(
    State(app): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<MoveBody>, JsonRejection>,
) -> Result<Json<SessionView>, ArenaError> {
    let mv = json_body(body)?;
    let slot = app.slot(&id)?;
    let mut session = slot.session.lock().await;
    let pos = Position::new(mv.row, mv.col);
    session.submit_human_move(pos)?;
    let view = session.view();
    let _ = slot.events.send(SessionEvent::MoveApplied {
        player: session.human,
        position: pos,
        session: view.clone(),
    });
    Ok(Json(view))
}

async fn ai_move(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<AiMoveResponse>, ArenaError> {
    let slot = app.slot(&id)?;
    // Held for the whole computation: one AI move in flight per session.
    let mut session = slot.session.lock().await;
    let board = match session.ai_turn()? {
        AiTurn::Recorded(m) => {
            return Ok(Json(AiMoveResponse {
                position: m.position,
                explanation: m.explanation,
                session: session.view(),
            }))
        }
        AiTurn::Compute(board) => board,
    };
    let _ = slot.events.send(SessionEvent::AiThinking {
        turn: board.move_count(),
    });
    let brain = session.brain.clone();
    let player = session.ai();
    let started = Instant::now();
    let for_board = board.clone();
    let decision = tokio::task::spawn_blocking(move || brain.decide(&for_board, player))
        .await
        .map_err(|e| ArenaError::Backend(e.to_string()))??;
    let record = session.apply_ai(&board, decision, started.elapsed().as_millis() as u64)?;
    let view = session.view();
    let _ = slot.events.send(SessionEvent::MoveApplied {
        player,
        position: record.position,
        session: view.clone(),
    });
    let _ = slot.events.send(SessionEvent::AiMoved {
        ai_move: record.clone(),
    });
    Ok(Json(AiMoveResponse {
        position: record.position,
        explanation: record.explanation,
        session: view,
    }))
}

async fn session_events(
    State(app): State<Shared>,
    Path(id): Path<String>,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ArenaError> {
    let slot = app.slot(&id)?;
    let rx = slot.events.subscribe();
    let events = stream::unfold(rx, |mut rx| async move {
        loop {
            match rx.recv().await {
                Ok(ev) => {
                    let event = Event::default()
                        .event(ev.name())
                        .json_data(&ev)
                        .unwrap_or_else(|_| Event::default().event(ev.name()));
                    return Some((Ok(event), rx));
                }
                Err(broadcast::error::RecvError::Lagged(_)) => continue,
                Err(broadcast::error::RecvError::Closed) => return None,
            }
        }
    });
    Ok(Sse::new(events).keep_alive(KeepAlive::default()))
}

async fn list_games(State(app): State<Shared>) -> Result<Json<Vec<store::GameSummary>>, ArenaError> {
    let path = app.config.store_path.clone();
    tokio::task::spawn_blocking(move || store::list_games(&path))
        .await
        .map_err(|e| ArenaError::Store(e.to_string()))?
        .map(Json)
}

async fn game_replay(State(app): State<Shared>, Path(id): Path<String>) -> Result<Json<store::Replay>, ArenaError> {
    let game_id: u64 = id
        .parse()
        .map_err(|_| ArenaError::BadRequest(format!("game id {id:?} is not a number")))?;
    let app2 = app.clone();
    tokio::task::spawn_blocking(move || store::replay(&app2.config.store_path, &app2.catalog, game_id))
        .await
        .map_err(|e| ArenaError::Store(e.to_string()))?
        .map(Json)
}

async fn stats(State(app): State<Shared>) -> Result<Json<store::Stats>, ArenaError> {
    let app2 = app.clone();
    tokio::task::spawn_blocking(move || store::stats(&app2.config.store_path, &app2.config.checkpoint_path))
        .await
        .map_err(|e| ArenaError::Store(e.to_string()))?
        .map(Json)
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/moves", post(human_move))
        .route("/sessions/{id}/ai-move", post(ai_move))
        .route("/sessions/{id}/events", get(session_events))
        .route("/games", get(list_games))
        .route("/games/{id}/replay", get(game_replay))
        .route("/stats", get(stats))
        .with_state(state)
}

/// Serve on `listener` until the process ends, evicting idle sessions once a
/// minute.
pub async fn serve(listener: tokio::net::TcpListener, config: ArenaConfig) -> std::io::Result<()> {
    let state = AppState::new(config);
    let sweeper = state.clone();
    tokio::spawn(async move {
        let mut tick = tokio::time::interval(Duration::from_secs(60));
        loop {
            tick.tick().await;
            sweeper.evict_idle(Instant::now());
        }
    });
    axum::serve(listener, router(state)).await
}
