//! HTTP + WebSocket service for sessions with human participants.
//!
//! `POST /api/sessions` creates a session and returns one token per human
//! seat. Clients then open `GET /api/ws` and send a `join` message with the
//! token. Each session runs on its own thread, which owns the session
//! state, its transcript writer and any AI agents; connections talk to it
//! over channels.

use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use cgbench_agents::selfplay::ENDPOINT_ERROR_MARKER;
use cgbench_agents::{build_agent, Agent, AgentContext, Observation};
use cgbench_core::catalog::{PieceCatalog, TrialSet};
use cgbench_core::config::{AgentSpec, Seat, SessionConfig, ViewCondition, DEFAULT_TRIAL_TIME_LIMIT_SECS};
use cgbench_core::session::{Clock, EventSink, Session, SessionError, SessionEvent, SystemClock};
use cgbench_core::transcript::{log_path, LogHeader, TranscriptWriter};
use cgbench_core::wire::{
    decode_client, encode, ClientMessage, CreateSessionRequest, CreateSessionResponse, ErrorCode, SeatStatus,
    ServerMessage, PROTOCOL_VERSION,
};
use rand::RngCore;
use tokio::sync::{broadcast, oneshot};
use tower_http::services::ServeDir;

use crate::app_config::{AppConfig, AppConfigError};

/// How often a session thread checks its trial clock.
const TICK: Duration = Duration::from_millis(100);
/// Agent steps per wake-up, so one chatty pair cannot starve the loop.
const MAX_AGENT_STEPS: usize = 16;

#[derive(Clone)]
struct Update {
    events: Arc<Vec<SessionEvent>>,
    statuses: Arc<BTreeMap<Seat, SeatStatus>>,
}

struct JoinReply {
    backlog: Vec<SessionEvent>,
    status: SeatStatus,
    updates: broadcast::Receiver<Update>,
}

enum Request {
    Join { seat: Seat, from_seq: u64, reply: oneshot::Sender<JoinReply> },
    Chat { seat: Seat, text: String, reply: oneshot::Sender<Result<(), SessionError>> },
    Complete { seat: Seat, reply: oneshot::Sender<Result<(), SessionError>> },
}

#[derive(Clone)]
struct SessionHandle {
    requests: mpsc::Sender<Request>,
    tokens: BTreeMap<String, Seat>,
    view: ViewCondition,
}

pub struct ServerState {
    config: AppConfig,
    catalog: Arc<PieceCatalog>,
    trials: Arc<TrialSet>,
    sessions: Mutex<HashMap<String, SessionHandle>>,
    counter: AtomicU64,
}

impl ServerState {
    /// Loads the puzzle and prepares the log directory.
    pub fn new(config: AppConfig) -> Result<ServerState, AppConfigError> {
        let puzzle = config.load_puzzle()?;
        std::fs::create_dir_all(&config.log_dir)
            .map_err(|e| AppConfigError::Read { path: config.log_dir.clone(), message: e.to_string() })?;
        Ok(ServerState {
            config,
            catalog: Arc::new(puzzle.catalog),
            trials: Arc::new(puzzle.trials),
            sessions: Mutex::new(HashMap::new()),
            counter: AtomicU64::new(0),
        })
    }

    pub fn log_dir(&self) -> PathBuf {
        self.config.log_dir.clone()
    }

    fn session(&self, id: &str) -> Option<SessionHandle> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }
}

pub fn router(state: Arc<ServerState>) -> Router {
    let mut app = Router::new()
        .route("/api/health", get(|| async { "ok" }))
        .route("/api/protocol", get(|| async { PROTOCOL_VERSION }))
        .route("/api/sessions", post(create_session))
        .route("/api/ws", get(ws_upgrade));
    if let Some(dir) = &state.config.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(config: AppConfig, addr: SocketAddr) -> anyhow::Result<()> {
    let state = Arc::new(ServerState::new(config)?);
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| anyhow::anyhow!("cannot bind {addr}: {e}"))?;
    tracing::info!(addr = %listener.local_addr()?, logs = %state.log_dir().display(), "serving");
    axum::serve(listener, router(state)).await?;
    Ok(())
}

fn random_token() -> String {
    let mut bytes = [0u8; 16];
    rand::thread_rng().fill_bytes(&mut bytes);
    hex::encode(bytes)
}

fn error_response(status: StatusCode, message: impl Into<String>) -> Response {
    let body = ServerMessage::Error { code: ErrorCode::BadRequest, message: message.into() };
    (status, Json(body)).into_response()
}

async fn create_session(State(state): State<Arc<ServerState>>, Json(req): Json<CreateSessionRequest>) -> Response {
    let n = state.counter.fetch_add(1, Ordering::Relaxed);
    let session_id = req
        .session_id
        .clone()
        .unwrap_or_else(|| format!("s-{}-{n}", SystemClock.now_ms()));
    let config = SessionConfig {
        session_id: session_id.clone(),
        view: req.view,
        human_role: req.human_role,
        focal_role: req.human_role.unwrap_or(Seat::Helper),
        seats: req.seats.clone(),
        trial_set_ref: state.config.trial_set_ref(),
        trial_time_limit_secs: req.trial_time_limit_secs.unwrap_or(DEFAULT_TRIAL_TIME_LIMIT_SECS),
        rotation_sensitive: req.rotation_sensitive.unwrap_or(true),
        seed: req.seed.unwrap_or_else(|| rand::thread_rng().next_u64()),
    };
    if let Err(e) = config.validate() {
        return error_response(StatusCode::BAD_REQUEST, e.to_string());
    }
    if let Some(h) = config.human_role {
        if !config.agent(h).is_some_and(AgentSpec::is_human) {
            return error_response(StatusCode::BAD_REQUEST, format!("human_role {h} is not a human seat"));
        }
    }
    if state.session(&session_id).is_some() || log_path(&state.config.log_dir, &session_id).exists() {
        return error_response(StatusCode::CONFLICT, format!("session {session_id} already exists"));
    }
    let tokens: BTreeMap<String, Seat> = config
        .seats
        .iter()
        .filter(|a| a.agent.is_human())
        .map(|a| (random_token(), a.seat))
        .collect();

    let (ready_tx, ready_rx) = oneshot::channel();
    let (req_tx, req_rx) = mpsc::channel();
    let ctx = AgentContext {
        catalog: state.catalog.clone(),
        trials: state.trials.clone(),
        endpoints: state.config.endpoints.clone(),
        seed: config.seed,
    };
    let path = log_path(&state.config.log_dir, &session_id);
    let durable = state.config.durable_logs;
    let view = config.view;
    let spawned = std::thread::Builder::new()
        .name(format!("session-{session_id}"))
        .spawn(move || match start_session(config, ctx, path, durable) {
            Ok((session, agents)) => {
                let _ = ready_tx.send(Ok(()));
                run_session_thread(session, agents, req_rx);
            }
            Err(message) => {
                let _ = ready_tx.send(Err(message));
            }
        });
    if let Err(e) = spawned {
        return error_response(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    }
    match ready_rx.await {
        Ok(Ok(())) => {}
        Ok(Err(message)) => return error_response(StatusCode::BAD_REQUEST, message),
        Err(_) => return error_response(StatusCode::INTERNAL_SERVER_ERROR, "session thread exited"),
    }
    let seat_tokens = tokens.iter().map(|(t, s)| (*s, t.clone())).collect();
    state
        .sessions
        .lock()
        .unwrap_or_else(|e| e.into_inner())
        .insert(session_id.clone(), SessionHandle { requests: req_tx, tokens, view });
    tracing::info!(session = %session_id, "session created");
    Json(CreateSessionResponse { session_id, seat_tokens, protocol: PROTOCOL_VERSION.into() }).into_response()
}

type Agents = BTreeMap<Seat, Box<dyn Agent>>;

fn start_session(config: SessionConfig, ctx: AgentContext, path: PathBuf, durable: bool) -> Result<(Session, Agents), String> {
    let mut agents = Agents::new();
    for a in config.seats.iter().filter(|a| !a.agent.is_human()) {
        agents.insert(a.seat, build_agent(&a.agent, a.seat, &ctx).map_err(|e| format!("{} seat: {e}", a.seat))?);
    }
    let clock: Arc<dyn Clock> = Arc::new(SystemClock);
    let header = LogHeader::new(&config, &ctx.catalog, &ctx.trials, clock.now_ms());
    let writer = TranscriptWriter::create(&path, &header).map_err(|e| e.to_string())?;
    let sink: Box<dyn EventSink> = Box::new(if durable { writer } else { writer.without_fsync() });
    let session = Session::start(config, ctx.catalog, ctx.trials, clock, Some(sink)).map_err(|e| e.to_string())?;
    Ok((session, agents))
}

fn status_of(session: &Session, seat: Seat) -> SeatStatus {
    SeatStatus {
        trial_index: session.current_trial(),
        pending_proposal: session.pending_proposal(),
        deadline_ms: session.deadline_ms(),
        can_send: session.can_send(seat),
        materials: session.materials(seat),
    }
}

struct SessionThread {
    session: Session,
    agents: Agents,
    cursors: BTreeMap<Seat, (u64, Option<u32>)>,
    updates: broadcast::Sender<Update>,
    published: usize,
}

impl SessionThread {
    fn publish(&mut self) {
        let events = self.session.events();
        if events.len() == self.published {
            return;
        }
        let fresh = events[self.published..].to_vec();
        self.published = events.len();
        let statuses = Seat::BOTH.into_iter().map(|s| (s, status_of(&self.session, s))).collect();
        // no receivers is fine: nobody has joined yet
        let _ = self.updates.send(Update { events: Arc::new(fresh), statuses: Arc::new(statuses) });
    }

    fn handle(&mut self, req: Request) {
        match req {
            Request::Join { seat, from_seq, reply } => {
                let _ = reply.send(JoinReply {
                    backlog: self.session.observe(seat, from_seq).cloned().collect(),
                    status: status_of(&self.session, seat),
                    updates: self.updates.subscribe(),
                });
            }
            Request::Chat { seat, text, reply } => {
                let _ = reply.send(self.session.submit_message(seat, &text).map(|_| ()));
            }
            Request::Complete { seat, reply } => {
                let _ = reply.send(self.session.propose_complete(seat).map(|_| ()));
            }
        }
    }

    /// Lets each AI seat act once it has something new to react to.
    fn step_agents(&mut self) {
        for _ in 0..MAX_AGENT_STEPS {
            let mut acted = false;
            let seats: Vec<Seat> = self.agents.keys().copied().collect();
            for seat in seats {
                let Some(trial_index) = self.session.current_trial() else { return };
                let (cursor, seen_trial) = self.cursors.get(&seat).copied().unwrap_or((0, None));
                let new_events: Vec<SessionEvent> = self.session.observe(seat, cursor).cloned().collect();
                if new_events.is_empty() && seen_trial == Some(trial_index) {
                    continue;
                }
                self.cursors.insert(seat, (self.session.events().len() as u64, Some(trial_index)));
                let materials = self.session.materials(seat).expect("active trial");
                let obs = Observation {
                    seat,
                    view: self.session.config().view,
                    trial_index,
                    materials: &materials,
                    new_events: &new_events,
                    pending_proposal: self.session.pending_proposal(),
                    can_send: self.session.can_send(seat),
                };
                let agent = self.agents.get_mut(&seat).expect("agent seat");
                match agent.step(&obs) {
                    Ok(turn) => {
                        if let Some(text) = &turn.text {
                            if let Err(e) = self.session.submit_message(seat, text) {
                                tracing::debug!(%seat, error = %e, "agent message refused");
                            }
                        }
                        if turn.complete && self.session.current_trial() == Some(trial_index) {
                            let _ = self.session.propose_complete(seat);
                        }
                        acted |= !turn.is_pass();
                    }
                    Err(e) => {
                        tracing::error!(%seat, error = %e, "agent failed, ending session");
                        let _ = self.session.notice(&format!("{ENDPOINT_ERROR_MARKER}: {e}"), &[]);
                        let _ = self.session.abort_session();
                        return;
                    }
                }
            }
            if !acted {
                return;
            }
        }
    }
}

fn run_session_thread(session: Session, agents: Agents, requests: mpsc::Receiver<Request>) {
    let (updates, _) = broadcast::channel(1024);
    let mut t = SessionThread { session, agents, cursors: BTreeMap::new(), updates, published: 0 };
    t.step_agents();
    t.publish();
    loop {
        match requests.recv_timeout(TICK) {
            Ok(req) => t.handle(req),
            Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        if let Err(e) = t.session.tick() {
            if !matches!(e, SessionError::Ended) {
                tracing::error!(error = %e, "session tick failed");
            }
        }
        t.step_agents();
        t.publish();
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<Arc<ServerState>>) -> Response {
    ws.on_upgrade(move |socket| client_loop(socket, state))
}

fn code_for(e: &SessionError) -> ErrorCode {
    match e {
        SessionError::Ended => ErrorCode::SessionEnded,
        SessionError::TrialExpired { .. } => ErrorCode::TrialExpired,
        SessionError::AwaitingResponse { .. } => ErrorCode::AwaitingResponse,
        SessionError::NoPendingProposal { .. } => ErrorCode::NoPendingProposal,
        _ => ErrorCode::Internal,
    }
}

async fn send(socket: &mut WebSocket, msg: &ServerMessage) -> bool {
    socket.send(Message::Text(encode(msg).into())).await.is_ok()
}

async fn send_error(socket: &mut WebSocket, code: ErrorCode, message: impl Into<String>) -> bool {
    send(socket, &ServerMessage::Error { code, message: message.into() }).await
}

async fn join(handle: &SessionHandle, seat: Seat, from_seq: u64) -> Option<JoinReply> {
    let (tx, rx) = oneshot::channel();
    handle.requests.send(Request::Join { seat, from_seq, reply: tx }).ok()?;
    rx.await.ok()
}

async fn client_loop(mut socket: WebSocket, state: Arc<ServerState>) {
    // Wait for a valid join.
    let (handle, seat, mut reply, mut next_seq) = loop {
        let Some(Ok(msg)) = socket.recv().await else { return };
        let Message::Text(text) = msg else { continue };
        match decode_client(&text) {
            Ok(ClientMessage::Join { session_id, token, from_seq }) => {
                let Some(handle) = state.session(&session_id) else {
                    send_error(&mut socket, ErrorCode::BadToken, format!("unknown session {session_id}")).await;
                    continue;
                };
                let Some(&seat) = handle.tokens.get(&token) else {
                    send_error(&mut socket, ErrorCode::BadToken, "token not valid for this session").await;
                    continue;
                };
                let Some(reply) = join(&handle, seat, from_seq).await else {
                    send_error(&mut socket, ErrorCode::Internal, "session unavailable").await;
                    return;
                };
                let ack = ServerMessage::Join { session_id, seat, view: handle.view, protocol: PROTOCOL_VERSION.into() };
                if !send(&mut socket, &ack).await {
                    return;
                }
                break (handle, seat, reply, from_seq);
            }
            Ok(ClientMessage::Heartbeat { nonce }) => {
                send(&mut socket, &ServerMessage::Heartbeat { nonce, server_ms: SystemClock.now_ms() }).await;
            }
            Ok(_) => {
                send_error(&mut socket, ErrorCode::NotJoined, "send join first").await;
            }
            Err(e) => {
                send_error(&mut socket, ErrorCode::BadRequest, e.to_string()).await;
            }
        }
    };

    for event in std::mem::take(&mut reply.backlog) {
        next_seq = event.seq + 1;
        if !send(&mut socket, &ServerMessage::Event { event }).await {
            return;
        }
    }
    if !send(&mut socket, &ServerMessage::Status { status: reply.status.clone() }).await {
        return;
    }
    let mut updates = reply.updates;
    let period = Duration::from_secs(state.config.heartbeat_secs.max(1));
    let mut heartbeat = tokio::time::interval_at(tokio::time::Instant::now() + period, period);
    let mut beats = 0u64;

    loop {
        tokio::select! {
            incoming = socket.recv() => {
                let Some(Ok(msg)) = incoming else { return };
                let text = match msg {
                    Message::Text(t) => t,
                    Message::Close(_) => return,
                    _ => continue,
                };
                let request = match decode_client(&text) {
                    Ok(ClientMessage::Chat { text }) => {
                        let (tx, rx) = oneshot::channel();
                        (Request::Chat { seat, text, reply: tx }, rx)
                    }
                    Ok(ClientMessage::Complete) => {
                        let (tx, rx) = oneshot::channel();
                        (Request::Complete { seat, reply: tx }, rx)
                    }
                    Ok(ClientMessage::Heartbeat { nonce }) => {
                        if !send(&mut socket, &ServerMessage::Heartbeat { nonce, server_ms: SystemClock.now_ms() }).await {
                            return;
                        }
                        continue;
                    }
                    Ok(ClientMessage::Join { .. }) => {
                        send_error(&mut socket, ErrorCode::BadRequest, "already joined").await;
                        continue;
                    }
                    Err(e) => {
                        send_error(&mut socket, ErrorCode::BadRequest, e.to_string()).await;
                        continue;
                    }
                };
                let (req, rx) = request;
                if handle.requests.send(req).is_err() {
                    send_error(&mut socket, ErrorCode::Internal, "session unavailable").await;
                    return;
                }
                match rx.await {
                    Ok(Ok(())) => {}
                    Ok(Err(e)) => {
                        if !send_error(&mut socket, code_for(&e), e.to_string()).await {
                            return;
                        }
                    }
                    Err(_) => return,
                }
            }
            update = updates.recv() => {
                match update {
                    Ok(u) => {
                        let start = next_seq;
                        for event in u.events.iter().filter(|e| e.seq >= start) {
                            next_seq = event.seq + 1;
                            if event.visible_to(seat) && !send(&mut socket, &ServerMessage::Event { event: event.clone() }).await {
                                return;
                            }
                        }
                        if let Some(status) = u.statuses.get(&seat) {
                            if !send(&mut socket, &ServerMessage::Status { status: status.clone() }).await {
                                return;
                            }
                        }
                    }
                    Err(broadcast::error::RecvError::Lagged(_)) => {
                        // fell behind: resubscribe and replay from the last delivered event
                        let Some(mut r) = join(&handle, seat, next_seq).await else { return };
                        for event in std::mem::take(&mut r.backlog) {
                            next_seq = event.seq + 1;
                            if !send(&mut socket, &ServerMessage::Event { event }).await {
                                return;
                            }
                        }
                        updates = r.updates;
                    }
                    Err(broadcast::error::RecvError::Closed) => return,
                }
            }
            _ = heartbeat.tick() => {
                beats += 1;
                if !send(&mut socket, &ServerMessage::Heartbeat { nonce: beats, server_ms: SystemClock.now_ms() }).await {
                    return;
                }
            }
        }
    }
}
