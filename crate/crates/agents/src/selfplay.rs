//! Runs two agents against each other in one session.
//!
//! Time is virtual: the clock advances a fixed amount per agent step, so
//! timeouts are reached deterministically and a run depends only on its
//! config and seed.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cgbench_core::config::{AgentSpec, Seat, SeatAssignment, SessionConfig, ViewCondition};
use cgbench_core::session::{EventSink, ManualClock, Session, SessionError, SessionEvent, TrialOutcome};
use cgbench_core::transcript::{log_path, LogHeader, StoreError, TranscriptWriter};
use thiserror::Error;

use crate::{build_agent, Agent, AgentContext, AgentError, Observation};

/// Prefix of the log-only system notice written when an agent fails.
pub const ENDPOINT_ERROR_MARKER: &str = "EndpointError";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfPlayOptions {
    /// Virtual milliseconds per agent step.
    pub step_ms: i64,
    /// fsync every log record.
    pub durable: bool,
}

impl Default for SelfPlayOptions {
    fn default() -> Self {
        SelfPlayOptions { step_ms: 2_000, durable: true }
    }
}

#[derive(Debug, Error)]
pub enum SelfPlayError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone)]
pub struct SessionRun {
    pub session_id: String,
    pub outcomes: Vec<TrialOutcome>,
    pub events: Vec<SessionEvent>,
    /// Agent failure that ended the session early.
    pub failure: Option<AgentError>,
    pub log_path: Option<PathBuf>,
}

impl SessionRun {
    pub fn successes(&self) -> usize {
        self.outcomes.iter().filter(|o| o.success).count()
    }

    pub fn summary_line(&self) -> String {
        let marks: String = self.outcomes.iter().map(|o| if o.success { '+' } else { '-' }).collect();
        let status = match &self.failure {
            Some(e) => format!("FAILED ({e})"),
            None => "ok".into(),
        };
        format!(
            "{}  {}/{} solved  [{}]  {} events  {}",
            self.session_id,
            self.successes(),
            self.outcomes.len(),
            marks,
            self.events.len(),
            status
        )
    }
}

/// Runs one session to the end, writing its log into `out_dir` if given.
pub fn run_session(
    config: SessionConfig,
    ctx: &AgentContext,
    out_dir: Option<&Path>,
    options: SelfPlayOptions,
) -> Result<SessionRun, SelfPlayError> {
    config.validate().map_err(SessionError::from)?;
    let clock = ManualClock::starting_at(0);
    let path = out_dir.map(|dir| log_path(dir, &config.session_id));
    let sink: Option<Box<dyn EventSink>> = match &path {
        Some(p) => {
            let header = LogHeader::new(&config, &ctx.catalog, &ctx.trials, clock_now(&clock));
            let writer = TranscriptWriter::create(p, &header)?;
            Some(Box::new(if options.durable { writer } else { writer.without_fsync() }))
        }
        None => None,
    };
    let ctx = AgentContext { seed: config.seed, ..ctx.clone() };
    let agents: Result<Vec<Box<dyn Agent>>, AgentError> = Seat::BOTH
        .iter()
        .map(|&seat| build_agent(config.agent(seat).expect("validated"), seat, &ctx))
        .collect();
    let session_id = config.session_id.clone();
    let mut session = Session::start(config, ctx.catalog.clone(), ctx.trials.clone(), Arc::new(clock.clone()), sink)?;
    let failure = match agents {
        Ok(mut agents) => drive(&mut session, &mut agents, &clock, options.step_ms)?,
        Err(e) => Some(e),
    };
    if let Some(e) = &failure {
        session.notice(&format!("{ENDPOINT_ERROR_MARKER}: {e}"), &[])?;
        session.abort_session()?;
    }
    Ok(SessionRun {
        session_id,
        outcomes: session.outcomes().to_vec(),
        events: session.events().to_vec(),
        failure,
        log_path: path,
    })
}

fn clock_now(clock: &ManualClock) -> i64 {
    use cgbench_core::session::Clock;
    clock.now_ms()
}

fn drive(
    session: &mut Session,
    agents: &mut [Box<dyn Agent>],
    clock: &ManualClock,
    step_ms: i64,
) -> Result<Option<AgentError>, SelfPlayError> {
    let mut cursors = [0u64; 2];
    while !session.is_ended() {
        for (i, seat) in Seat::BOTH.into_iter().enumerate() {
            let Some(trial_index) = session.current_trial() else { break };
            let materials = session.materials(seat).expect("active trial");
            let new_events: Vec<SessionEvent> = session.observe(seat, cursors[i]).cloned().collect();
            cursors[i] = session.events().len() as u64;
            let obs = Observation {
                seat,
                view: session.config().view,
                trial_index,
                materials: &materials,
                new_events: &new_events,
                pending_proposal: session.pending_proposal(),
                can_send: session.can_send(seat),
            };
            let turn = match agents[i].step(&obs) {
                Ok(turn) => turn,
                Err(e) => return Ok(Some(e)),
            };
            if let Some(text) = &turn.text {
                tolerate(session.submit_message(seat, text).map(|_| ()))?;
            }
            if turn.complete && session.current_trial() == Some(trial_index) {
                tolerate(session.propose_complete(seat).map(|_| ()))?;
            }
            clock.advance_ms(step_ms);
            session.tick()?;
        }
    }
    Ok(None)
}

// Errors an agent can provoke by acting at the wrong moment are not fatal.
fn tolerate(r: Result<(), SessionError>) -> Result<(), SessionError> {
    match r {
        Err(SessionError::AwaitingResponse { .. } | SessionError::TrialExpired { .. } | SessionError::Ended) => Ok(()),
        other => other,
    }
}

/// Derives a per-session seed from the run seed.
pub fn session_seed(run_seed: u64, index: u64) -> u64 {
    // splitmix64
    let mut z = run_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Configs for `per_cell` sessions in every (view, role) cell.
pub fn matrix_configs(
    per_cell: usize,
    views: &[ViewCondition],
    roles: &[Seat],
    helper: &AgentSpec,
    worker: &AgentSpec,
    run_seed: u64,
) -> Vec<SessionConfig> {
    let mut out = Vec::new();
    for &view in views {
        for &role in roles {
            for idx in 0..per_cell {
                let view_tag = match view {
                    ViewCondition::Shared => "shared",
                    ViewCondition::NonShared => "nonshared",
                };
                let mut c = SessionConfig::oracle_selfplay(
                    format!("sp-{view_tag}-{role}-{idx:03}-s{run_seed}"),
                    view,
                    role,
                );
                c.seats = vec![
                    SeatAssignment { seat: Seat::Helper, agent: helper.clone() },
                    SeatAssignment { seat: Seat::Worker, agent: worker.clone() },
                ];
                c.seed = session_seed(run_seed, out.len() as u64);
                out.push(c);
            }
        }
    }
    out
}
