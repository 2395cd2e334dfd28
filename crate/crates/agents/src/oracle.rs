//! Scripted agents with perfect (or deliberately noisy) play.

use std::sync::Arc;

use cgbench_core::board::BoardView;
use cgbench_core::catalog::{GridSize, PieceCatalog, PieceId, Placement, Rotation, TrialSet};
use cgbench_core::config::{Seat, ViewCondition};
use cgbench_core::dsl::{self, Command};
use cgbench_core::session::{EventKind, SeatMaterials};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Agent, AgentError, AgentTurn, Observation};

/// Helper that reads the target by piece id and instructs in the action
/// language, one piece per message.
///
/// In the shared view it repairs from snapshots: misplaced pieces first,
/// then missing pieces in row-major order, then orientation. Without
/// snapshots it instructs each target piece once and trusts the Worker.
#[derive(Debug)]
pub struct OracleHelper {
    trials: Arc<TrialSet>,
    catalog: Arc<PieceCatalog>,
    trial: Option<u32>,
    board: Option<BoardView>,
    instructed: usize,
    awaiting_reply: bool,
}

impl OracleHelper {
    pub fn new(trials: Arc<TrialSet>, catalog: Arc<PieceCatalog>) -> OracleHelper {
        OracleHelper { trials, catalog, trial: None, board: None, instructed: 0, awaiting_reply: false }
    }

    fn describe(&self, id: PieceId) -> String {
        self.catalog.get(id).map(|p| format!("{} {}", p.color, p.pattern)).unwrap_or_else(|| format!("piece {id}"))
    }

    fn place_instruction(&self, p: &Placement) -> String {
        let mut text = format!(
            "Take the {} piece and put it {}: PLACE {} AT {},{}",
            self.describe(p.piece_id),
            cell_name(self.trials.grid, p.row, p.col),
            p.piece_id,
            p.row,
            p.col
        );
        if p.rotation != Rotation::Deg0 {
            text.push_str(&format!(" then ROTATE {} {}", p.piece_id, p.rotation));
        }
        text
    }

    /// Next correction for a board seen in a snapshot; `None` once it matches.
    fn next_fix(&self, target: &[Placement], board: &BoardView) -> Option<String> {
        let wanted = |id: PieceId| target.iter().find(|p| p.piece_id == id);
        if let Some(c) = board.cells.iter().find(|c| wanted(c.piece_id).is_none_or(|p| (p.row, p.col) != (c.row, c.col))) {
            return Some(format!(
                "The {} piece {} does not belong there, take it off: REMOVE {}",
                self.describe(c.piece_id),
                cell_name(board.grid, c.row, c.col),
                c.piece_id
            ));
        }
        if let Some(p) = target.iter().find(|p| !board.cells.iter().any(|c| c.piece_id == p.piece_id)) {
            return Some(self.place_instruction(p));
        }
        board.cells.iter().find_map(|c| {
            let p = wanted(c.piece_id)?;
            (p.rotation != c.rotation).then(|| {
                format!(
                    "The {} piece needs turning: ROTATE {} {}",
                    self.describe(c.piece_id),
                    c.piece_id,
                    c.rotation.delta_to(p.rotation)
                )
            })
        })
    }
}

impl Agent for OracleHelper {
    fn step(&mut self, obs: &Observation<'_>) -> Result<AgentTurn, AgentError> {
        if self.trial != Some(obs.trial_index) {
            self.trial = Some(obs.trial_index);
            self.board = None;
            self.instructed = 0;
            self.awaiting_reply = false;
        }
        for e in obs.new_events.iter().filter(|e| e.trial_index == obs.trial_index) {
            match &e.kind {
                EventKind::Chat { .. } if e.seat_chat().is_some_and(|(s, _)| s == Seat::Worker) => {
                    self.awaiting_reply = false
                }
                EventKind::Snapshot { board } => self.board = Some(board.clone()),
                _ => {}
            }
        }
        if self.awaiting_reply || !obs.can_send {
            return Ok(AgentTurn::pass());
        }
        let target = self
            .trials
            .target(obs.trial_index)
            .ok_or_else(|| AgentError::Config(format!("no target for trial {}", obs.trial_index)))?
            .row_major();
        let instruction = match obs.view {
            ViewCondition::Shared => {
                let empty = BoardView { grid: self.trials.grid, cells: vec![] };
                self.next_fix(&target, self.board.as_ref().unwrap_or(&empty))
            }
            ViewCondition::NonShared => {
                let next = target.get(self.instructed).map(|p| self.place_instruction(p));
                self.instructed += 1;
                next
            }
        };
        Ok(match instruction {
            Some(text) => {
                self.awaiting_reply = true;
                AgentTurn::say(text)
            }
            None => AgentTurn::complete(),
        })
    }
}

/// Worker that executes the commands found in Helper messages. With
/// `error_rate > 0` each `PLACE` goes to a random wrong cell with that
/// probability.
#[derive(Debug)]
pub struct OracleWorker {
    error_rate: f64,
    rng: ChaCha8Rng,
}

impl OracleWorker {
    pub fn new(error_rate: f64, seed: u64) -> OracleWorker {
        OracleWorker { error_rate, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    fn corrupt(&mut self, cmd: Command, grid: GridSize) -> Command {
        match cmd {
            Command::Place { piece_id, row, col }
                if self.error_rate > 0.0 && grid.rows * grid.cols > 1 && self.rng.gen_bool(self.error_rate) =>
            {
                let others: Vec<(u32, u32)> = grid.cells().filter(|&cell| cell != (row, col)).collect();
                let (row, col) = others[self.rng.gen_range(0..others.len())];
                Command::Place { piece_id, row, col }
            }
            other => other,
        }
    }
}

impl Agent for OracleWorker {
    fn step(&mut self, obs: &Observation<'_>) -> Result<AgentTurn, AgentError> {
        let grid = match obs.materials {
            SeatMaterials::Worker(m) => m.board.grid(),
            SeatMaterials::Helper(_) => return Err(AgentError::Config("oracle worker seated as helper".into())),
        };
        let mut heard = false;
        let mut commands = Vec::new();
        for e in obs.new_events.iter().filter(|e| e.trial_index == obs.trial_index) {
            if let Some((Seat::Helper, text)) = e.seat_chat() {
                heard = true;
                commands.extend(dsl::parse(text).unwrap_or_default().into_iter().filter(Command::is_board_action));
            }
        }
        if commands.is_empty() && obs.pending_proposal == Some(Seat::Helper) {
            return Ok(AgentTurn::complete());
        }
        if !obs.can_send {
            return Ok(AgentTurn::pass());
        }
        if commands.is_empty() {
            return Ok(if heard { AgentTurn::say("Which piece do you mean?") } else { AgentTurn::pass() });
        }
        let done: Vec<String> = commands.into_iter().map(|c| dsl::format(&self.corrupt(c, grid))).collect();
        Ok(AgentTurn::say(format!("{}. Done. What is next?", done.join(" "))))
    }
}

/// Plain-language cell name: "in the top left" on a 3x3 grid, otherwise
/// "at row r, column c".
pub fn cell_name(grid: GridSize, row: u32, col: u32) -> String {
    if grid.rows == 3 && grid.cols == 3 {
        let v = ["top", "middle", "bottom"][row as usize];
        let h = ["left", "middle", "right"][col as usize];
        return match (v, h) {
            ("middle", "middle") => "in the center".into(),
            (v, h) => format!("in the {v} {h}"),
        };
    }
    format!("at row {row}, column {col}")
}
