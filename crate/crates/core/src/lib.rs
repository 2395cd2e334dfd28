//! Core of the common-ground benchmark: the puzzle catalog, the board
//! engine, the Worker action language, the session engine, session logs
//! and the wire protocol.

pub mod board;
pub mod catalog;
pub mod config;
pub mod dsl;
pub mod session;
pub mod transcript;
pub mod wire;

pub use board::{exact_match, BoardError, BoardState, BoardView, CellEntry, MatchPolicy};
pub use catalog::{
    load_puzzle, GridSize, Piece, PieceCatalog, PieceId, Placement, Puzzle, Rotation, TargetSolution, TrialSet,
};
pub use config::{AgentSpec, Seat, SeatAssignment, SessionConfig, ViewCondition};
pub use dsl::{Command, DslError};
pub use session::{
    Actor, Clock, EndReason, EventKind, ManualClock, SeatMaterials, Session, SessionError, SessionEvent, SystemClock,
    TrialOutcome,
};
pub use transcript::{replay, LogHeader, SessionLog, StoreError, TranscriptWriter};
