//! View-condition audit over session logs: snapshots reach the Helper only
//! in the shared view, once after every Worker message that carried at
//! least one board action.

use std::path::{Path, PathBuf};

use cgbench_core::config::{Seat, ViewCondition};
use cgbench_core::session::{Actor, EventKind};
use cgbench_core::transcript::{list_logs, read_log, SessionLog, StoreError};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LogAudit {
    pub session_id: String,
    pub view: ViewCondition,
    pub worker_messages_with_actions: usize,
    pub snapshots: usize,
    pub violations: Vec<String>,
}

impl LogAudit {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn audit_log(log: &SessionLog) -> LogAudit {
    let view = log.header.config.view;
    let events = &log.events;
    let mut violations = Vec::new();
    let mut acted_messages = 0;
    let mut accounted = 0;
    let mut i = 0;
    while i < events.len() {
        let e = &events[i];
        i += 1;
        if !(e.actor == Actor::Worker && matches!(e.kind, EventKind::Chat { .. })) {
            continue;
        }
        let mut actions = 0;
        while i < events.len() && matches!(events[i].kind, EventKind::Action { .. }) {
            actions += 1;
            i += 1;
        }
        let mut snapshots = 0;
        while i < events.len() && matches!(events[i].kind, EventKind::Snapshot { .. }) {
            snapshots += 1;
            i += 1;
        }
        accounted += snapshots;
        if actions > 0 {
            acted_messages += 1;
        }
        let expected = usize::from(view == ViewCondition::Shared && actions > 0);
        if snapshots != expected {
            violations.push(format!(
                "seq {}: Worker message with {actions} action(s) followed by {snapshots} snapshot(s), expected {expected}",
                e.seq
            ));
        }
    }
    let snapshots: Vec<_> = events.iter().filter(|e| matches!(e.kind, EventKind::Snapshot { .. })).collect();
    if snapshots.len() != accounted {
        violations.push(format!("{} snapshot(s) not attached to a Worker message", snapshots.len() - accounted));
    }
    for s in &snapshots {
        if s.visibility.iter().copied().ne([Seat::Helper]) {
            violations.push(format!("seq {}: snapshot visible to {:?}", s.seq, s.visibility));
        }
    }
    LogAudit {
        session_id: log.header.session_id.clone(),
        view,
        worker_messages_with_actions: acted_messages,
        snapshots: snapshots.len(),
        violations,
    }
}

pub type AuditResults = Vec<(PathBuf, Result<LogAudit, StoreError>)>;

/// Audits every log in `dir`; unreadable logs are reported as errors.
pub fn audit_corpus(dir: &Path) -> Result<AuditResults, StoreError> {
    Ok(list_logs(dir)?.into_iter().map(|p| {
        let r = read_log(&p).map(|log| audit_log(&log));
        (p, r)
    }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use cgbench_core::board::BoardState;
    use cgbench_core::catalog::Puzzle;
    use cgbench_core::config::SessionConfig;
    use cgbench_core::session::SessionEvent;
    use cgbench_core::transcript::LogHeader;
    use std::collections::BTreeSet;

    fn ev(seq: u64, actor: Actor, kind: EventKind, vis: &[Seat]) -> SessionEvent {
        SessionEvent {
            seq,
            timestamp_ms: 0,
            trial_index: 0,
            actor,
            kind,
            visibility: vis.iter().copied().collect::<BTreeSet<_>>(),
        }
    }

    fn log(view: ViewCondition, events: Vec<SessionEvent>) -> SessionLog {
        let p = Puzzle::default_bundled();
        let config = SessionConfig::oracle_selfplay("a", view, Seat::Helper);
        SessionLog { header: LogHeader::new(&config, &p.catalog, &p.trials, 0), events, footer: None, torn_tail: false }
    }

    fn chat(seq: u64, actor: Actor) -> SessionEvent {
        ev(seq, actor, EventKind::Chat { text: "x".into() }, &Seat::BOTH)
    }

    fn action(seq: u64) -> SessionEvent {
        ev(
            seq,
            Actor::Worker,
            EventKind::Action {
                command: cgbench_core::dsl::Command::Remove { piece_id: cgbench_core::catalog::PieceId(1) },
                result: cgbench_core::session::ActionResult::Applied,
            },
            &[Seat::Worker],
        )
    }

    fn snapshot(seq: u64, vis: &[Seat]) -> SessionEvent {
        let board = BoardState::new(Default::default(), &Puzzle::default_bundled().catalog).view();
        ev(seq, Actor::System, EventKind::Snapshot { board }, vis)
    }

    #[test]
    fn flags_missing_extra_and_leaked_snapshots() {
        let good = log(ViewCondition::Shared, vec![chat(0, Actor::Helper), chat(1, Actor::Worker), action(2), snapshot(3, &[Seat::Helper])]);
        assert!(audit_log(&good).passed());
        assert_eq!(audit_log(&good).worker_messages_with_actions, 1);

        let missing = log(ViewCondition::Shared, vec![chat(0, Actor::Worker), action(1), chat(2, Actor::Helper)]);
        assert_eq!(audit_log(&missing).violations.len(), 1);

        let chat_only = log(ViewCondition::Shared, vec![chat(0, Actor::Worker), snapshot(1, &[Seat::Helper])]);
        assert!(!audit_log(&chat_only).passed());

        let nonshared = log(ViewCondition::NonShared, vec![chat(0, Actor::Worker), action(1), snapshot(2, &[Seat::Helper])]);
        assert!(!audit_log(&nonshared).passed());

        let stray = log(ViewCondition::Shared, vec![chat(0, Actor::Helper), snapshot(1, &[Seat::Helper])]);
        assert!(!audit_log(&stray).passed());

        let leaked = log(ViewCondition::Shared, vec![chat(0, Actor::Worker), action(1), snapshot(2, &Seat::BOTH)]);
        assert!(!audit_log(&leaked).passed());
    }
}
