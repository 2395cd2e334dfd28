//! Append-only session logs and replay.
//!
//! A log is a `<session_id>.events.jsonl` file: one JSON record per line,
//! a `header` record first, then `event` records with contiguous `seq`,
//! then a `footer` record once the session has ended. A crash can leave a
//! partial last line; readers drop it and report the log as truncated.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::board::{exact_match, BoardState, MatchPolicy};
use crate::catalog::{PieceCatalog, TrialSet};
use crate::config::SessionConfig;
use crate::session::{apply, ActionResult, EventKind, EventSink, SessionEvent, TrialOutcome};

pub const LOG_FORMAT: &str = "cgbench-log/1";
pub const LOG_SUFFIX: &str = ".events.jsonl";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StoreError {
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("expected event seq {expected}, got {got}")]
    SeqGap { expected: u64, got: u64 },
    #[error("log already has a footer")]
    Finished,
    #[error("corrupt log at line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("{what} hash mismatch: log has {logged}, loaded data has {loaded}")]
    HashMismatch { what: &'static str, logged: String, loaded: String },
    #[error("replay diverged at seq {seq}: {reason}")]
    Diverged { seq: u64, reason: String },
}

fn io_err(path: &Path, e: std::io::Error) -> StoreError {
    StoreError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub format: String,
    pub session_id: String,
    pub config: SessionConfig,
    pub catalog_hash: String,
    pub trial_set_hash: String,
    pub started_ms: i64,
}

impl LogHeader {
    pub fn new(config: &SessionConfig, catalog: &PieceCatalog, trials: &TrialSet, started_ms: i64) -> LogHeader {
        LogHeader {
            format: LOG_FORMAT.to_string(),
            session_id: config.session_id.clone(),
            config: config.clone(),
            catalog_hash: catalog.content_hash(),
            trial_set_hash: trials.content_hash(),
            started_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogFooter {
    pub outcomes: Vec<TrialOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header(LogHeader),
    Event(SessionEvent),
    Footer(LogFooter),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionLog {
    pub header: LogHeader,
    pub events: Vec<SessionEvent>,
    pub footer: Option<LogFooter>,
    /// A partial trailing line was dropped while reading.
    pub torn_tail: bool,
}

impl SessionLog {
    pub fn session_id(&self) -> &str {
        &self.header.session_id
    }

    pub fn is_complete(&self) -> bool {
        self.footer.is_some()
    }

    /// Canonical serialization, one record per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |r: &LogRecord| {
            out.push_str(&serde_json::to_string(r).expect("log records serialize"));
            out.push('\n');
        };
        push(&LogRecord::Header(self.header.clone()));
        for e in &self.events {
            push(&LogRecord::Event(e.clone()));
        }
        if let Some(f) = &self.footer {
            push(&LogRecord::Footer(f.clone()));
        }
        out
    }
}

pub fn log_path(dir: &Path, session_id: &str) -> PathBuf {
    dir.join(format!("{session_id}{LOG_SUFFIX}"))
}

/// Appends records to a log file, syncing each one before returning.
///
/// As an [`EventSink`] it collects trial outcomes from `trial_end` events
/// and writes the footer when it sees `session_end`.
pub struct TranscriptWriter {
    path: PathBuf,
    out: BufWriter<File>,
    next_seq: u64,
    outcomes: Vec<TrialOutcome>,
    finished: bool,
    sync: bool,
}

impl std::fmt::Debug for TranscriptWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TranscriptWriter").field("path", &self.path).field("next_seq", &self.next_seq).finish()
    }
}

impl TranscriptWriter {
    /// Creates (or truncates) the log and writes its header.
    pub fn create(path: impl Into<PathBuf>, header: &LogHeader) -> Result<TranscriptWriter, StoreError> {
        let path = path.into();
        let file = OpenOptions::new().create(true).write(true).truncate(true).open(&path).map_err(|e| io_err(&path, e))?;
        let mut writer = TranscriptWriter {
            path,
            out: BufWriter::new(file),
            next_seq: 0,
            outcomes: Vec::new(),
            finished: false,
            sync: true,
        };
        writer.write_record(&LogRecord::Header(header.clone()))?;
        Ok(writer)
    }

    /// Skip fsync after each record. Lines are still flushed to the OS.
    pub fn without_fsync(mut self) -> Self {
        self.sync = false;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    fn write_record(&mut self, record: &LogRecord) -> Result<(), StoreError> {
        let line = serde_json::to_string(record).expect("log records serialize");
        let path = self.path.clone();
        self.out.write_all(line.as_bytes()).map_err(|e| io_err(&path, e))?;
        self.out.write_all(b"\n").map_err(|e| io_err(&path, e))?;
        self.out.flush().map_err(|e| io_err(&path, e))?;
        if self.sync {
            self.out.get_ref().sync_data().map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }

    pub fn append(&mut self, event: &SessionEvent) -> Result<(), StoreError> {
        if self.finished {
            return Err(StoreError::Finished);
        }
        if event.seq != self.next_seq {
            return Err(StoreError::SeqGap { expected: self.next_seq, got: event.seq });
        }
        self.write_record(&LogRecord::Event(event.clone()))?;
        self.next_seq += 1;
        if let EventKind::TrialEnd { outcome } = &event.kind {
            self.outcomes.push(outcome.clone());
        }
        Ok(())
    }

    pub fn finish(&mut self) -> Result<(), StoreError> {
        if self.finished {
            return Err(StoreError::Finished);
        }
        let footer = LogFooter { outcomes: self.outcomes.clone() };
        self.write_record(&LogRecord::Footer(footer))?;
        self.finished = true;
        Ok(())
    }
}

impl EventSink for TranscriptWriter {
    fn record(&mut self, event: &SessionEvent) -> Result<(), StoreError> {
        self.append(event)?;
        if event.kind == EventKind::SessionEnd {
            self.finish()?;
        }
        Ok(())
    }
}

/// Parses a log. A final line without its newline that fails to parse is
/// treated as a torn write and dropped; any other bad line is corruption.
pub fn parse_log(text: &str) -> Result<SessionLog, StoreError> {
    let mut header = None;
    let mut events: Vec<SessionEvent> = Vec::new();
    let mut footer = None;
    let mut torn_tail = false;
    let lines: Vec<&str> = text.split_inclusive('\n').collect();
    for (i, raw) in lines.iter().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() {
            continue;
        }
        let record: LogRecord = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(_) if i + 1 == lines.len() && !raw.ends_with('\n') => {
                torn_tail = true;
                break;
            }
            Err(e) => return Err(StoreError::Corrupt { line: line_no, reason: e.to_string() }),
        };
        let corrupt = |reason: String| StoreError::Corrupt { line: line_no, reason };
        match record {
            LogRecord::Header(h) if header.is_none() && line_no == 1 => header = Some(h),
            LogRecord::Header(_) => return Err(corrupt("unexpected header record".into())),
            _ if header.is_none() => return Err(corrupt("log must start with a header".into())),
            _ if footer.is_some() => return Err(corrupt("record after footer".into())),
            LogRecord::Event(e) => {
                if e.seq != events.len() as u64 {
                    return Err(corrupt(format!("expected seq {}, got {}", events.len(), e.seq)));
                }
                events.push(e);
            }
            LogRecord::Footer(f) => footer = Some(f),
        }
    }
    let header = header.ok_or(StoreError::Corrupt { line: 1, reason: "missing header".into() })?;
    if header.format != LOG_FORMAT {
        return Err(StoreError::Corrupt { line: 1, reason: format!("unsupported format {:?}", header.format) });
    }
    Ok(SessionLog { header, events, footer, torn_tail })
}

pub fn read_log(path: &Path) -> Result<SessionLog, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    parse_log(&text)
}

pub fn write_log(path: &Path, log: &SessionLog) -> Result<(), StoreError> {
    std::fs::write(path, log.to_jsonl()).map_err(|e| io_err(path, e))
}

/// Log files in `dir`, sorted by file name.
pub fn list_logs(dir: &Path) -> Result<Vec<PathBuf>, StoreError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.ends_with(LOG_SUFFIX)))
        .collect();
    paths.sort();
    Ok(paths)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayedTrial {
    pub trial_index: u32,
    pub final_board: BoardState,
    /// `None` when the log stops before the trial ended.
    pub outcome: Option<TrialOutcome>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Replay {
    pub trials: Vec<ReplayedTrial>,
    pub snapshots_checked: usize,
    /// The log ends before the session did.
    pub truncated: bool,
}

impl Replay {
    pub fn outcomes(&self) -> Vec<TrialOutcome> {
        self.trials.iter().filter_map(|t| t.outcome.clone()).collect()
    }
}

/// Rebuilds every trial's board from the logged actions and checks the log
/// against it: each action result, each snapshot, each trial outcome and
/// the footer must match what the board engine produces.
pub fn replay(log: &SessionLog, catalog: &PieceCatalog, trials: &TrialSet) -> Result<Replay, StoreError> {
    let loaded = catalog.content_hash();
    if log.header.catalog_hash != loaded {
        return Err(StoreError::HashMismatch { what: "catalog", logged: log.header.catalog_hash.clone(), loaded });
    }
    let loaded = trials.content_hash();
    if log.header.trial_set_hash != loaded {
        return Err(StoreError::HashMismatch { what: "trial set", logged: log.header.trial_set_hash.clone(), loaded });
    }
    let policy = MatchPolicy { rotation_sensitive: log.header.config.rotation_sensitive };
    let mut boards: BTreeMap<u32, BoardState> = BTreeMap::new();
    let mut replayed: Vec<ReplayedTrial> = Vec::new();
    let mut snapshots_checked = 0;
    let mut session_ended = false;

    for e in &log.events {
        let diverged = |reason: String| StoreError::Diverged { seq: e.seq, reason };
        match &e.kind {
            EventKind::TrialStart => {
                if trials.target(e.trial_index).is_none() {
                    return Err(diverged(format!("trial {} is not in the trial set", e.trial_index)));
                }
                if boards.contains_key(&e.trial_index) || replayed.iter().any(|t| t.trial_index == e.trial_index) {
                    return Err(diverged(format!("trial {} started twice", e.trial_index)));
                }
                boards.insert(e.trial_index, BoardState::new(trials.grid, catalog));
            }
            EventKind::Action { command, result } => {
                let board = boards.get_mut(&e.trial_index).ok_or_else(|| diverged("action outside a trial".into()))?;
                let actual = match apply(board, command) {
                    Ok(()) => ActionResult::Applied,
                    Err(error) => ActionResult::Rejected { error },
                };
                if &actual != result {
                    return Err(diverged(format!("{command}: logged {result:?}, engine gives {actual:?}")));
                }
            }
            EventKind::Snapshot { board: logged } => {
                let board = boards.get(&e.trial_index).ok_or_else(|| diverged("snapshot outside a trial".into()))?;
                if &board.view() != logged {
                    return Err(diverged("snapshot does not match the replayed board".into()));
                }
                snapshots_checked += 1;
            }
            EventKind::TrialEnd { outcome } => {
                let board = boards.remove(&e.trial_index).ok_or_else(|| diverged("trial end without start".into()))?;
                let target = trials.target(e.trial_index).expect("checked at start");
                if outcome.final_board != board {
                    return Err(diverged("final board does not match the replayed board".into()));
                }
                if outcome.trial_index != e.trial_index {
                    return Err(diverged("outcome names a different trial".into()));
                }
                if outcome.success != exact_match(&board, target, policy) {
                    return Err(diverged("logged success disagrees with exact match".into()));
                }
                replayed.push(ReplayedTrial {
                    trial_index: e.trial_index,
                    final_board: board,
                    outcome: Some(outcome.clone()),
                });
            }
            EventKind::SessionEnd => session_ended = true,
            EventKind::Chat { .. } => {}
        }
    }
    for (trial_index, final_board) in boards {
        replayed.push(ReplayedTrial { trial_index, final_board, outcome: None });
    }
    let result = Replay { trials: replayed, snapshots_checked, truncated: !session_ended || log.footer.is_none() };
    if let Some(footer) = &log.footer {
        if footer.outcomes != result.outcomes() {
            let seq = log.events.last().map_or(0, |e| e.seq);
            return Err(StoreError::Diverged { seq, reason: "footer outcomes differ from replayed outcomes".into() });
        }
    }
    Ok(result)
}
