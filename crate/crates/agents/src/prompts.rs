//! Prompt profiles and the text rendering of seat materials and events.

use cgbench_core::board::BoardView;
use cgbench_core::catalog::GridSize;
use cgbench_core::config::{Seat, ViewCondition};
use cgbench_core::dsl::GRAMMAR_VERSION;
use cgbench_core::session::{Actor, EventKind, SeatMaterials, SessionEvent};

const DSL_SUMMARY: &str = "  PLACE <id> AT <row>,<col>\n  ROTATE <id> <90|180|270>\n  REMOVE <id>\n  DONE";

/// A named set of system prompts, one per seat and view.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptProfile {
    pub name: String,
    helper_shared: String,
    helper_nonshared: String,
    worker_shared: String,
    worker_nonshared: String,
}

impl PromptProfile {
    pub fn bundled(name: &str) -> Option<PromptProfile> {
        match name {
            "default-v1" => Some(PromptProfile {
                name: name.to_string(),
                helper_shared: include_str!("../assets/prompts/default-v1/helper_shared.txt").to_string(),
                helper_nonshared: include_str!("../assets/prompts/default-v1/helper_nonshared.txt").to_string(),
                worker_shared: include_str!("../assets/prompts/default-v1/worker_shared.txt").to_string(),
                worker_nonshared: include_str!("../assets/prompts/default-v1/worker_nonshared.txt").to_string(),
            }),
            _ => None,
        }
    }

    pub fn system_prompt(&self, seat: Seat, view: ViewCondition, grid: GridSize) -> String {
        let template = match (seat, view) {
            (Seat::Helper, ViewCondition::Shared) => &self.helper_shared,
            (Seat::Helper, ViewCondition::NonShared) => &self.helper_nonshared,
            (Seat::Worker, ViewCondition::Shared) => &self.worker_shared,
            (Seat::Worker, ViewCondition::NonShared) => &self.worker_nonshared,
        };
        template
            .replace("{rows}", &grid.rows.to_string())
            .replace("{cols}", &grid.cols.to_string())
            .replace("{grammar}", &format!("{DSL_SUMMARY}\n({GRAMMAR_VERSION})"))
            .trim_end()
            .to_string()
    }
}

pub fn render_materials(materials: &SeatMaterials) -> String {
    match materials {
        SeatMaterials::Helper(m) => {
            let mut out = format!(
                "Puzzle {} target ({}x{} grid, row 0 at the top):\n",
                m.trial_index, m.grid.rows, m.grid.cols
            );
            for c in &m.target {
                out.push_str(&format!(
                    "- row {}, column {}: {} {} piece, rotated {} degrees\n",
                    c.row, c.col, c.color, c.pattern, c.rotation
                ));
            }
            out
        }
        SeatMaterials::Worker(m) => {
            let mut out = format!("Puzzle {}. Pieces in your hand:\n", m.trial_index);
            for p in &m.palette {
                out.push_str(&format!("- id {}: {} {}\n", p.id, p.color, p.pattern));
            }
            out.push_str(&render_board(&m.board.view()));
            out
        }
    }
}

pub fn render_board(board: &BoardView) -> String {
    if board.cells.is_empty() {
        return format!("Board ({}x{}): empty\n", board.grid.rows, board.grid.cols);
    }
    let mut out = format!("Board ({}x{}):\n", board.grid.rows, board.grid.cols);
    for c in &board.cells {
        out.push_str(&format!(
            "- row {}, column {}: piece {}, rotated {} degrees\n",
            c.row, c.col, c.piece_id, c.rotation
        ));
    }
    out
}

/// Who a rendered line comes from, from the agent's point of view.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Speaker {
    Own,
    Other,
    System,
}

/// Text form of an event for the agent in `seat`; `None` for events that
/// carry nothing for it.
pub fn render_event(event: &SessionEvent, seat: Seat) -> Option<(Speaker, String)> {
    match &event.kind {
        EventKind::Chat { text } => match event.actor.seat() {
            Some(s) if s == seat => Some((Speaker::Own, text.clone())),
            Some(s) => Some((Speaker::Other, format!("{}: {text}", title(s)))),
            None => Some((Speaker::System, format!("[system] {text}"))),
        },
        EventKind::Action { command, result } => Some((
            Speaker::System,
            match result {
                cgbench_core::session::ActionResult::Applied => format!("[system] {command}: applied"),
                cgbench_core::session::ActionResult::Rejected { error } => {
                    format!("[system] {command}: rejected ({error})")
                }
            },
        )),
        EventKind::Snapshot { board } => {
            Some((Speaker::System, format!("[system] Snapshot of the Worker's board.\n{}", render_board(board))))
        }
        EventKind::TrialStart => None,
        EventKind::TrialEnd { .. } => None,
        EventKind::SessionEnd => Some((Speaker::System, "[system] The session is over.".into())),
    }
    .filter(|_| event.visible_to(seat) || event.actor == Actor::from(seat))
}

fn title(seat: Seat) -> &'static str {
    match seat {
        Seat::Helper => "Helper",
        Seat::Worker => "Worker",
    }
}
