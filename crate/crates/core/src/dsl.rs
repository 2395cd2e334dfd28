//! The Worker action language.
//!
//! Grammar, case-insensitive, commands may be embedded anywhere in chat text:
//!
//! ```text
//! PLACE <id> AT <row>,<col>
//! ROTATE <id> <90|180|270>
//! REMOVE <id>
//! DONE
//! ```
//!
//! Keywords only count as whole words, except that a keyword running
//! straight into a digit (`PLACE18`) is still a keyword. A keyword whose arguments do not fit
//! the grammar is reported as [`DslError::MalformedCommand`]; nothing is
//! silently skipped.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{PieceId, Rotation};

/// Version tag of the grammar above, surfaced in prompts and logs.
pub const GRAMMAR_VERSION: &str = "cg-dsl/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Command {
    Place { piece_id: PieceId, row: u32, col: u32 },
    /// `degrees` is never [`Rotation::Deg0`].
    Rotate { piece_id: PieceId, degrees: Rotation },
    Remove { piece_id: PieceId },
    Done,
}

impl Command {
    pub fn piece_id(&self) -> Option<PieceId> {
        match *self {
            Command::Place { piece_id, .. } | Command::Rotate { piece_id, .. } | Command::Remove { piece_id } => {
                Some(piece_id)
            }
            Command::Done => None,
        }
    }

    /// Whether the command acts on the board (everything but `DONE`).
    pub fn is_board_action(&self) -> bool {
        !matches!(self, Command::Done)
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::Place { piece_id, row, col } => write!(f, "PLACE {piece_id} AT {row},{col}"),
            Command::Rotate { piece_id, degrees } => write!(f, "ROTATE {piece_id} {degrees}"),
            Command::Remove { piece_id } => write!(f, "REMOVE {piece_id}"),
            Command::Done => f.write_str("DONE"),
        }
    }
}

/// Canonical uppercase rendering; `parse(&format(c)) == Ok(vec![c])`.
pub fn format(cmd: &Command) -> String {
    cmd.to_string()
}

#[derive(Debug, Error, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DslError {
    #[error("malformed {keyword} command at byte {offset}: {reason}")]
    MalformedCommand { offset: usize, keyword: String, reason: String },
    #[error("expected exactly one command, found {0}")]
    NotSingle(usize),
}

static KEYWORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\b(place|rotate|remove|done)(?:\b|\d)").unwrap());
static PLACE_ARGS: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s+(\d+)\s+at\s+(\d+)\s*,\s*(\d+)").unwrap());
static ROTATE_ARGS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s+(\d+)\s+(\d+)").unwrap());
static REMOVE_ARGS: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s+(\d+)").unwrap());

/// Extracts every command in `text`, in textual order. Text without
/// keywords yields an empty list.
pub fn parse(text: &str) -> Result<Vec<Command>, DslError> {
    let mut commands = Vec::new();
    let mut pos = 0;
    while let Some(caps) = KEYWORD.captures_at(text, pos) {
        let m = caps.get(1).unwrap();
        let keyword = m.as_str().to_ascii_uppercase();
        let rest = &text[m.end()..];
        let malformed = |reason: &str| DslError::MalformedCommand {
            offset: m.start(),
            keyword: keyword.clone(),
            reason: reason.to_string(),
        };
        let (cmd, consumed) = match keyword.as_str() {
            "PLACE" => {
                let caps = PLACE_ARGS.captures(rest).ok_or_else(|| malformed("expected `<id> AT <row>,<col>`"))?;
                let cmd = Command::Place {
                    piece_id: PieceId(number(&caps[1]).ok_or_else(|| malformed("id out of range"))?),
                    row: number(&caps[2]).ok_or_else(|| malformed("row out of range"))?,
                    col: number(&caps[3]).ok_or_else(|| malformed("column out of range"))?,
                };
                (cmd, caps.get(0).unwrap().end())
            }
            "ROTATE" => {
                let caps = ROTATE_ARGS.captures(rest).ok_or_else(|| malformed("expected `<id> <90|180|270>`"))?;
                let piece_id = PieceId(number(&caps[1]).ok_or_else(|| malformed("id out of range"))?);
                let degrees = number(&caps[2])
                    .and_then(Rotation::from_degrees)
                    .filter(|r| *r != Rotation::Deg0)
                    .ok_or_else(|| malformed("angle must be 90, 180 or 270"))?;
                (Command::Rotate { piece_id, degrees }, caps.get(0).unwrap().end())
            }
            "REMOVE" => {
                let caps = REMOVE_ARGS.captures(rest).ok_or_else(|| malformed("expected `<id>`"))?;
                let piece_id = PieceId(number(&caps[1]).ok_or_else(|| malformed("id out of range"))?);
                (Command::Remove { piece_id }, caps.get(0).unwrap().end())
            }
            _ if rest.starts_with(|c: char| c.is_ascii_digit()) => return Err(malformed("unexpected digits after DONE")),
            _ => (Command::Done, 0),
        };
        if consumed > 0 && !ends_cleanly(&rest[consumed..]) {
            return Err(malformed("unexpected characters after arguments"));
        }
        commands.push(cmd);
        pos = m.end() + consumed;
    }
    Ok(commands)
}

fn number(s: &str) -> Option<u32> {
    s.parse().ok()
}

// An argument list must not run straight into a word or another number:
// `3x`, `3-8`, `0,0,4` and `40 2` are all rejected.
fn ends_cleanly(tail: &str) -> bool {
    let mut chars = tail.chars();
    match chars.next() {
        None => true,
        Some(c) if c.is_alphanumeric() || c == '_' => false,
        Some(c) if c.is_whitespace() => !tail.trim_start().starts_with(|c: char| c.is_ascii_digit()),
        Some(',' | '.' | '-' | '/' | ':' | ';' | '+' | '#') => !chars.next().is_some_and(|c| c.is_ascii_digit()),
        Some(_) => true,
    }
}

impl FromStr for Command {
    type Err = DslError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let cmds = parse(s)?;
        match cmds.as_slice() {
            [c] => Ok(*c),
            _ => Err(DslError::NotSingle(cmds.len())),
        }
    }
}

impl TryFrom<String> for Command {
    type Error = DslError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Command> for String {
    fn from(value: Command) -> Self {
        value.to_string()
    }
}
