//! One benchmark session: practice plus four scored trials.
//!
//! All mutations go through a single [`Session`] value, which appends
//! [`SessionEvent`]s to its log (and to an optional durable [`EventSink`]
//! before returning). Seats read the log through [`Session::observe`], which
//! filters by each event's visibility.
//!
//! Visibility rules:
//! - chat is visible to both seats; system notices name their audience;
//! - actions and their results go to the Worker only;
//! - snapshots go to the Helper only, and only in the shared view;
//! - trial ends carry the scored board and are log-only.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{exact_match, BoardError, BoardState, BoardView, MatchPolicy};
use crate::catalog::{GridSize, Piece, PieceCatalog, Rotation, TargetSolution, TrialSet};
use crate::config::{ConfigError, Seat, SessionConfig, ViewCondition};
use crate::dsl::{self, Command, DslError};
use crate::transcript::StoreError;

pub trait Clock: Send + Sync {
    /// Milliseconds since the Unix epoch.
    fn now_ms(&self) -> i64;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_millis() as i64).unwrap_or(0)
    }
}

/// Clock advanced explicitly; clones share the same time.
#[derive(Debug, Default, Clone)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn starting_at(ms: i64) -> ManualClock {
        ManualClock(Arc::new(AtomicI64::new(ms)))
    }

    pub fn advance_ms(&self, ms: i64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }

    pub fn set_ms(&self, ms: i64) {
        self.0.store(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

/// Durable destination for events; called before the session acknowledges.
pub trait EventSink: Send {
    fn record(&mut self, event: &SessionEvent) -> Result<(), StoreError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Helper,
    Worker,
    System,
}

impl From<Seat> for Actor {
    fn from(seat: Seat) -> Self {
        match seat {
            Seat::Helper => Actor::Helper,
            Seat::Worker => Actor::Worker,
        }
    }
}

impl Actor {
    pub fn seat(self) -> Option<Seat> {
        match self {
            Actor::Helper => Some(Seat::Helper),
            Actor::Worker => Some(Seat::Worker),
            Actor::System => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndReason {
    AgreedComplete,
    Timeout,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial_index: u32,
    pub success: bool,
    pub end_reason: EndReason,
    pub final_board: BoardState,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ActionResult {
    Applied,
    Rejected { error: BoardError },
}

impl ActionResult {
    pub fn is_applied(&self) -> bool {
        matches!(self, ActionResult::Applied)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Chat { text: String },
    Action { command: Command, result: ActionResult },
    Snapshot { board: BoardView },
    TrialStart,
    TrialEnd { outcome: TrialOutcome },
    SessionEnd,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub timestamp_ms: i64,
    pub trial_index: u32,
    pub actor: Actor,
    pub kind: EventKind,
    pub visibility: BTreeSet<Seat>,
}

impl SessionEvent {
    pub fn visible_to(&self, seat: Seat) -> bool {
        self.visibility.contains(&seat)
    }

    /// Chat text from a seat (not a system notice).
    pub fn seat_chat(&self) -> Option<(Seat, &str)> {
        match (&self.kind, self.actor.seat()) {
            (EventKind::Chat { text }, Some(seat)) => Some((seat, text.as_str())),
            _ => None,
        }
    }
}

fn both() -> BTreeSet<Seat> {
    Seat::BOTH.into_iter().collect()
}

fn only(seat: Seat) -> BTreeSet<Seat> {
    BTreeSet::from([seat])
}

/// One target cell as the Helper sees it: appearance, not identifiers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetCell {
    pub row: u32,
    pub col: u32,
    pub rotation: Rotation,
    pub color: String,
    pub pattern: String,
    pub image_ref: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HelperMaterials {
    pub trial_index: u32,
    pub grid: GridSize,
    pub target: Vec<TargetCell>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerMaterials {
    pub trial_index: u32,
    /// Pieces not yet on the board.
    pub palette: Vec<Piece>,
    pub board: BoardState,
}

/// Static, seat-specific view of the current trial.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "seat", rename_all = "snake_case")]
pub enum SeatMaterials {
    Helper(HelperMaterials),
    Worker(WorkerMaterials),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SessionError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("trial set does not fit the catalog or config: {0}")]
    TrialSet(String),
    #[error("session has ended")]
    Ended,
    #[error("trial {trial_index} ran out of time before the request arrived")]
    TrialExpired { trial_index: u32 },
    #[error("{seat} must wait for the other seat's first message in this trial")]
    AwaitingResponse { seat: Seat },
    #[error("{seat} has no pending completion proposal to confirm")]
    NoPendingProposal { seat: Seat },
    #[error("event storage failed: {0}")]
    Storage(String),
}

impl From<StoreError> for SessionError {
    fn from(e: StoreError) -> Self {
        SessionError::Storage(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Completion {
    /// Waiting for the other seat to confirm.
    Pending { proposer: Seat },
    Completed(TrialOutcome),
}

/// What a submitted message did.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MessageAck {
    /// Sequence numbers of the events this message appended.
    pub seqs: Vec<u64>,
    pub applied: usize,
    pub rejected: usize,
    pub malformed: Option<DslError>,
    pub completion: Option<Completion>,
}

#[derive(Debug, Clone)]
struct TrialState {
    index: u32,
    started_ms: i64,
    board: BoardState,
    proposal: Option<Seat>,
    spoken: BTreeSet<Seat>,
}

pub struct Session {
    config: SessionConfig,
    catalog: Arc<PieceCatalog>,
    trials: Arc<TrialSet>,
    clock: Arc<dyn Clock>,
    sink: Option<Box<dyn EventSink>>,
    events: Vec<SessionEvent>,
    outcomes: Vec<TrialOutcome>,
    trial: Option<TrialState>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("session_id", &self.config.session_id)
            .field("events", &self.events.len())
            .field("trial", &self.trial.as_ref().map(|t| t.index))
            .finish()
    }
}

impl Session {
    /// Validates the config and opens the practice trial.
    pub fn start(
        config: SessionConfig,
        catalog: Arc<PieceCatalog>,
        trials: Arc<TrialSet>,
        clock: Arc<dyn Clock>,
        sink: Option<Box<dyn EventSink>>,
    ) -> Result<Session, SessionError> {
        config.validate()?;
        for i in 0..trials.len() as u32 {
            let target = trials.target(i).expect("index in range");
            if let Some(p) = target.placements.iter().find(|p| !catalog.contains(p.piece_id)) {
                return Err(SessionError::TrialSet(format!("trial {i} references unknown piece {}", p.piece_id)));
            }
        }
        let mut session =
            Session { config, catalog, trials, clock, sink, events: Vec::new(), outcomes: Vec::new(), trial: None };
        session.open_trial(0)?;
        Ok(session)
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn catalog(&self) -> &PieceCatalog {
        &self.catalog
    }

    pub fn trial_set(&self) -> &TrialSet {
        &self.trials
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn outcomes(&self) -> &[TrialOutcome] {
        &self.outcomes
    }

    pub fn is_ended(&self) -> bool {
        self.trial.is_none()
    }

    pub fn current_trial(&self) -> Option<u32> {
        self.trial.as_ref().map(|t| t.index)
    }

    pub fn board(&self) -> Option<&BoardState> {
        self.trial.as_ref().map(|t| &t.board)
    }

    pub fn pending_proposal(&self) -> Option<Seat> {
        self.trial.as_ref().and_then(|t| t.proposal)
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now_ms()
    }

    /// Wall-clock deadline of the current trial.
    pub fn deadline_ms(&self) -> Option<i64> {
        self.trial
            .as_ref()
            .map(|t| t.started_ms + (self.config.trial_time_limit_secs as i64) * 1000)
    }

    fn policy(&self) -> MatchPolicy {
        MatchPolicy { rotation_sensitive: self.config.rotation_sensitive }
    }

    /// Events visible to `seat` with `seq >= from_seq`, in order.
    pub fn observe(&self, seat: Seat, from_seq: u64) -> impl Iterator<Item = &SessionEvent> {
        self.events.iter().skip(from_seq as usize).filter(move |e| e.visible_to(seat))
    }

    pub fn materials(&self, seat: Seat) -> Option<SeatMaterials> {
        let trial = self.trial.as_ref()?;
        Some(match seat {
            Seat::Helper => {
                let target = self.trials.target(trial.index).expect("active trial has a target");
                SeatMaterials::Helper(HelperMaterials {
                    trial_index: trial.index,
                    grid: self.trials.grid,
                    target: target_cells(target, &self.catalog),
                })
            }
            Seat::Worker => SeatMaterials::Worker(WorkerMaterials {
                trial_index: trial.index,
                palette: trial
                    .board
                    .available()
                    .iter()
                    .filter_map(|id| self.catalog.get(*id).cloned())
                    .collect(),
                board: trial.board.clone(),
            }),
        })
    }

    fn emit(
        &mut self,
        trial_index: u32,
        actor: Actor,
        kind: EventKind,
        visibility: BTreeSet<Seat>,
    ) -> Result<u64, SessionError> {
        let event = SessionEvent {
            seq: self.events.len() as u64,
            timestamp_ms: self.clock.now_ms(),
            trial_index,
            actor,
            kind,
            visibility,
        };
        if let Some(sink) = self.sink.as_mut() {
            sink.record(&event)?;
        }
        let seq = event.seq;
        self.events.push(event);
        Ok(seq)
    }

    fn open_trial(&mut self, index: u32) -> Result<(), SessionError> {
        self.trial = Some(TrialState {
            index,
            started_ms: self.clock.now_ms(),
            board: BoardState::new(self.trials.grid, &self.catalog),
            proposal: None,
            spoken: BTreeSet::new(),
        });
        self.emit(index, Actor::System, EventKind::TrialStart, both())?;
        Ok(())
    }

    fn finish_trial(&mut self, end_reason: EndReason) -> Result<TrialOutcome, SessionError> {
        let trial = self.trial.take().ok_or(SessionError::Ended)?;
        let target = self.trials.target(trial.index).expect("active trial has a target");
        let outcome = TrialOutcome {
            trial_index: trial.index,
            success: exact_match(&trial.board, target, self.policy()),
            end_reason,
            final_board: trial.board,
        };
        self.emit(
            trial.index,
            Actor::System,
            EventKind::TrialEnd { outcome: outcome.clone() },
            BTreeSet::new(),
        )?;
        self.outcomes.push(outcome.clone());
        let next = trial.index + 1;
        if (next as usize) < self.trials.len() {
            self.open_trial(next)?;
        } else {
            self.emit(trial.index, Actor::System, EventKind::SessionEnd, both())?;
        }
        Ok(outcome)
    }

    /// Ends the current trial if its time limit has passed.
    pub fn tick(&mut self) -> Result<Option<TrialOutcome>, SessionError> {
        match self.deadline_ms() {
            Some(deadline) if self.clock.now_ms() >= deadline => self.finish_trial(EndReason::Timeout).map(Some),
            _ => Ok(None),
        }
    }

    fn active_index(&mut self) -> Result<u32, SessionError> {
        let index = self.current_trial().ok_or(SessionError::Ended)?;
        if self.tick()?.is_some() {
            return Err(SessionError::TrialExpired { trial_index: index });
        }
        Ok(index)
    }

    /// Whether `seat` may send a chat message now. Within a trial, a seat
    /// that has spoken waits until the other seat has spoken once too.
    pub fn can_send(&self, seat: Seat) -> bool {
        self.trial
            .as_ref()
            .is_some_and(|t| !t.spoken.contains(&seat) || t.spoken.contains(&seat.other()))
    }

    /// Appends a chat message. Worker messages are scanned for commands,
    /// which are applied in order; in the shared view a snapshot for the
    /// Helper follows any message that produced at least one action.
    pub fn submit_message(&mut self, seat: Seat, text: &str) -> Result<MessageAck, SessionError> {
        let index = self.active_index()?;
        if !self.can_send(seat) {
            return Err(SessionError::AwaitingResponse { seat });
        }
        let mut ack = MessageAck::default();
        ack.seqs.push(self.emit(index, seat.into(), EventKind::Chat { text: text.to_string() }, both())?);
        if seat == Seat::Helper {
            self.trial.as_mut().expect("active trial").spoken.insert(seat);
            return Ok(ack);
        }
        let commands = match dsl::parse(text) {
            Ok(c) => c,
            Err(e) => {
                let notice = format!("Command not executed: {e}. Nothing was changed; please resend.");
                ack.seqs.push(self.emit(index, Actor::System, EventKind::Chat { text: notice }, only(Seat::Worker))?);
                ack.malformed = Some(e);
                return Ok(ack);
            }
        };
        // a rejected message does not use up the Worker's turn
        self.trial.as_mut().expect("active trial").spoken.insert(seat);
        let mut acted = false;
        let mut done = false;
        for command in commands {
            if !command.is_board_action() {
                done = true;
                continue;
            }
            let trial = self.trial.as_mut().expect("active trial");
            let result = match apply(&mut trial.board, &command) {
                Ok(()) => {
                    trial.proposal = None;
                    done = false;
                    ack.applied += 1;
                    ActionResult::Applied
                }
                Err(error) => {
                    ack.rejected += 1;
                    ActionResult::Rejected { error }
                }
            };
            acted = true;
            ack.seqs.push(self.emit(index, Actor::Worker, EventKind::Action { command, result }, only(Seat::Worker))?);
        }
        if acted && self.config.view == ViewCondition::Shared {
            let board = self.trial.as_ref().expect("active trial").board.view();
            ack.seqs.push(self.emit(index, Actor::System, EventKind::Snapshot { board }, only(Seat::Helper))?);
        }
        if done {
            ack.completion = Some(self.register_proposal(Seat::Worker)?);
        }
        Ok(ack)
    }

    fn register_proposal(&mut self, seat: Seat) -> Result<Completion, SessionError> {
        let trial = self.trial.as_mut().expect("active trial");
        if trial.proposal == Some(seat.other()) {
            return self.finish_trial(EndReason::AgreedComplete).map(Completion::Completed);
        }
        trial.proposal = Some(seat);
        Ok(Completion::Pending { proposer: seat })
    }

    /// Proposes that the current puzzle is solved. If the other seat already
    /// proposed, this confirms and ends the trial.
    pub fn propose_complete(&mut self, seat: Seat) -> Result<Completion, SessionError> {
        self.active_index()?;
        self.register_proposal(seat)
    }

    /// Confirms the other seat's pending proposal and ends the trial.
    pub fn confirm_complete(&mut self, seat: Seat) -> Result<TrialOutcome, SessionError> {
        self.active_index()?;
        if self.pending_proposal() != Some(seat.other()) {
            return Err(SessionError::NoPendingProposal { seat });
        }
        self.finish_trial(EndReason::AgreedComplete)
    }

    /// Appends a system notice for the given seats (empty = log only).
    pub fn notice(&mut self, text: &str, audience: &[Seat]) -> Result<u64, SessionError> {
        let index = self.current_trial().ok_or(SessionError::Ended)?;
        self.emit(index, Actor::System, EventKind::Chat { text: text.to_string() }, audience.iter().copied().collect())
    }

    /// Ends the current trial without agreement, scoring the board as it is.
    pub fn abort_trial(&mut self) -> Result<TrialOutcome, SessionError> {
        self.finish_trial(EndReason::Aborted)
    }

    /// Aborts every remaining trial.
    pub fn abort_session(&mut self) -> Result<(), SessionError> {
        while !self.is_ended() {
            self.abort_trial()?;
        }
        Ok(())
    }
}

/// Applies one board command. `DONE` is a no-op here.
pub fn apply(board: &mut BoardState, command: &Command) -> Result<(), BoardError> {
    match *command {
        Command::Place { piece_id, row, col } => board.place(piece_id, row, col),
        Command::Rotate { piece_id, degrees } => board.rotate(piece_id, degrees.degrees()),
        Command::Remove { piece_id } => board.remove(piece_id),
        Command::Done => Ok(()),
    }
}

fn target_cells(target: &TargetSolution, catalog: &PieceCatalog) -> Vec<TargetCell> {
    target
        .row_major()
        .into_iter()
        .map(|p| {
            let piece = catalog.get(p.piece_id).expect("validated at start");
            TargetCell {
                row: p.row,
                col: p.col,
                rotation: p.rotation,
                color: piece.color.clone(),
                pattern: piece.pattern.clone(),
                image_ref: piece.image_ref.clone(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{PieceId, Puzzle};
    use crate::config::{AgentSpec, SeatAssignment};

    fn start(view: ViewCondition) -> (Session, ManualClock) {
        let puzzle = Puzzle::default_bundled();
        let clock = ManualClock::starting_at(1_000);
        let session = Session::start(
            SessionConfig::oracle_selfplay("t", view, Seat::Helper),
            Arc::new(puzzle.catalog),
            Arc::new(puzzle.trials),
            Arc::new(clock.clone()),
            None,
        )
        .unwrap();
        (session, clock)
    }

    fn kinds(s: &Session, from: usize) -> Vec<&'static str> {
        s.events()[from..]
            .iter()
            .map(|e| match e.kind {
                EventKind::Chat { .. } => "chat",
                EventKind::Action { .. } => "action",
                EventKind::Snapshot { .. } => "snapshot",
                EventKind::TrialStart => "trial_start",
                EventKind::TrialEnd { .. } => "trial_end",
                EventKind::SessionEnd => "session_end",
            })
            .collect()
    }

    #[test]
    fn starts_with_practice_trial() {
        let (s, _) = start(ViewCondition::Shared);
        assert_eq!(s.events().len(), 1);
        assert_eq!(s.events()[0].kind, EventKind::TrialStart);
        assert_eq!(s.events()[0].trial_index, 0);
        assert!(matches!(s.materials(Seat::Helper), Some(SeatMaterials::Helper(m)) if m.target.len() == 4));
        assert!(matches!(s.materials(Seat::Worker), Some(SeatMaterials::Worker(m)) if m.palette.len() == 24 && m.board.is_empty()));
    }

    #[test]
    fn rejects_two_helper_seats() {
        let puzzle = Puzzle::default_bundled();
        let mut config = SessionConfig::oracle_selfplay("t", ViewCondition::Shared, Seat::Helper);
        config.seats[1] = SeatAssignment { seat: Seat::Helper, agent: AgentSpec::OracleHelper };
        let err = Session::start(
            config,
            Arc::new(puzzle.catalog),
            Arc::new(puzzle.trials),
            Arc::new(SystemClock),
            None,
        )
        .unwrap_err();
        assert!(matches!(err, SessionError::Config(_)));
    }

    #[test]
    fn worker_message_in_shared_view_gets_snapshot() {
        let (mut s, _) = start(ViewCondition::Shared);
        let ack = s.submit_message(Seat::Worker, "PLACE 18 AT 0,0; done").unwrap();
        assert_eq!(kinds(&s, 1), ["chat", "action", "snapshot"]);
        assert_eq!(ack.applied, 1);
        assert_eq!(ack.completion, Some(Completion::Pending { proposer: Seat::Worker }));
        let EventKind::Snapshot { board } = &s.events()[3].kind else { panic!() };
        assert_eq!(board.cells.len(), 1);
        assert_eq!(s.events()[3].visibility, only(Seat::Helper));
        assert_eq!(s.events()[2].visibility, only(Seat::Worker));
    }

    #[test]
    fn worker_message_in_nonshared_view_has_no_snapshot() {
        let (mut s, _) = start(ViewCondition::NonShared);
        s.submit_message(Seat::Worker, "PLACE 18 AT 0,0; done").unwrap();
        assert_eq!(kinds(&s, 1), ["chat", "action"]);
    }

    #[test]
    fn helper_messages_never_act() {
        let (mut s, _) = start(ViewCondition::Shared);
        s.submit_message(Seat::Helper, "place the spiral at the top left").unwrap();
        s.submit_message(Seat::Worker, "which spiral?").unwrap();
        s.submit_message(Seat::Helper, "PLACE 18 AT 0,0").unwrap();
        assert_eq!(kinds(&s, 1), ["chat", "chat", "chat"]);
        assert!(s.board().unwrap().is_empty());
    }

    #[test]
    fn first_message_waits_for_a_response() {
        let (mut s, _) = start(ViewCondition::Shared);
        s.submit_message(Seat::Helper, "hi").unwrap();
        assert_eq!(s.submit_message(Seat::Helper, "hello?"), Err(SessionError::AwaitingResponse { seat: Seat::Helper }));
        s.submit_message(Seat::Worker, "hi").unwrap();
        s.submit_message(Seat::Worker, "ready").unwrap();
        s.submit_message(Seat::Helper, "ok").unwrap();
        s.submit_message(Seat::Helper, "first piece").unwrap();
    }

    #[test]
    fn malformed_command_goes_back_to_worker() {
        let (mut s, _) = start(ViewCondition::Shared);
        let ack = s.submit_message(Seat::Worker, "PLACE eighteen AT 0,0").unwrap();
        assert!(ack.malformed.is_some());
        assert_eq!(kinds(&s, 1), ["chat", "chat"]);
        let notice = &s.events()[2];
        assert_eq!(notice.actor, Actor::System);
        assert_eq!(notice.visibility, only(Seat::Worker));
        // the turn is not forfeited
        s.submit_message(Seat::Worker, "PLACE 18 AT 0,0").unwrap();
        assert_eq!(s.board().unwrap().at(0, 0), Some((PieceId(18), Rotation::Deg0)));
    }

    #[test]
    fn rejected_action_is_recorded() {
        let (mut s, _) = start(ViewCondition::Shared);
        let ack = s.submit_message(Seat::Worker, "PLACE 18 AT 0,0 PLACE 10 AT 0,0").unwrap();
        assert_eq!((ack.applied, ack.rejected), (1, 1));
        let EventKind::Action { result, .. } = &s.events()[3].kind else { panic!() };
        assert_eq!(result, &ActionResult::Rejected { error: BoardError::CellOccupied { row: 0, col: 0 } });
    }

    fn solve(s: &mut Session) {
        let index = s.current_trial().unwrap();
        let target = s.trial_set().target(index).unwrap().clone();
        if s.can_send(Seat::Helper) {
            s.submit_message(Seat::Helper, "next").unwrap();
        }
        let mut text = String::new();
        for p in &target.placements {
            text.push_str(&format!("PLACE {} AT {},{} ", p.piece_id, p.row, p.col));
            if p.rotation != Rotation::Deg0 {
                text.push_str(&format!("ROTATE {} {} ", p.piece_id, p.rotation));
            }
        }
        s.submit_message(Seat::Worker, &text).unwrap();
    }

    #[test]
    fn agreement_ends_trial_and_scores_board() {
        let (mut s, _) = start(ViewCondition::Shared);
        solve(&mut s);
        assert_eq!(s.submit_message(Seat::Worker, "DONE").unwrap().completion, Some(Completion::Pending { proposer: Seat::Worker }));
        let outcome = s.confirm_complete(Seat::Helper).unwrap();
        assert!(outcome.success);
        assert_eq!(outcome.end_reason, EndReason::AgreedComplete);
        assert_eq!(s.current_trial(), Some(1));

        // agreement is not correctness
        s.submit_message(Seat::Worker, "PLACE 1 AT 2,2").unwrap();
        s.propose_complete(Seat::Helper).unwrap();
        let Completion::Completed(outcome) = s.propose_complete(Seat::Worker).unwrap() else { panic!() };
        assert!(!outcome.success);
    }

    #[test]
    fn board_action_cancels_pending_proposal() {
        let (mut s, _) = start(ViewCondition::Shared);
        s.submit_message(Seat::Worker, "PLACE 18 AT 0,0 DONE").unwrap();
        assert_eq!(s.pending_proposal(), Some(Seat::Worker));
        s.submit_message(Seat::Helper, "no, take it off").unwrap();
        s.submit_message(Seat::Worker, "REMOVE 18").unwrap();
        assert_eq!(s.pending_proposal(), None);
        assert_eq!(s.confirm_complete(Seat::Helper), Err(SessionError::NoPendingProposal { seat: Seat::Helper }));
    }

    #[test]
    fn timeout_scores_current_board() {
        let (mut s, clock) = start(ViewCondition::NonShared);
        solve(&mut s);
        clock.advance_ms(299_999);
        assert_eq!(s.tick().unwrap(), None);
        clock.advance_ms(1);
        let outcome = s.tick().unwrap().unwrap();
        assert_eq!(outcome.end_reason, EndReason::Timeout);
        assert!(outcome.success);
        assert_eq!(s.current_trial(), Some(1));

        clock.advance_ms(300_000);
        assert_eq!(s.submit_message(Seat::Helper, "hello?"), Err(SessionError::TrialExpired { trial_index: 1 }));
        assert_eq!(s.current_trial(), Some(2));
    }

    #[test]
    fn five_trials_then_end() {
        let (mut s, _) = start(ViewCondition::NonShared);
        for _ in 0..5 {
            solve(&mut s);
            s.submit_message(Seat::Worker, "done").unwrap();
            s.confirm_complete(Seat::Helper).unwrap();
        }
        assert!(s.is_ended());
        assert_eq!(s.outcomes().len(), 5);
        assert!(s.outcomes().iter().all(|o| o.success));
        assert_eq!(s.events().last().unwrap().kind, EventKind::SessionEnd);
        assert_eq!(s.submit_message(Seat::Helper, "hi"), Err(SessionError::Ended));
        let starts = s.events().iter().filter(|e| e.kind == EventKind::TrialStart).count();
        assert_eq!(starts, 5);
    }

    #[test]
    fn observation_respects_visibility() {
        let (mut s, _) = start(ViewCondition::NonShared);
        solve(&mut s);
        s.submit_message(Seat::Helper, "great").unwrap();
        let helper: Vec<_> = s.observe(Seat::Helper, 0).collect();
        assert!(helper.iter().all(|e| matches!(e.kind, EventKind::Chat { .. } | EventKind::TrialStart)));
        let chats = |seat| {
            s.observe(seat, 0).filter_map(|e| e.seat_chat().map(|(_, t)| t.to_string())).collect::<Vec<_>>()
        };
        assert_eq!(chats(Seat::Helper), chats(Seat::Worker));
    }
}
