use std::collections::BTreeMap;
use std::sync::Arc;

use cgbench_agents::selfplay::{matrix_configs, run_session, SelfPlayOptions, SessionRun, ENDPOINT_ERROR_MARKER};
use cgbench_agents::{AgentContext, AgentError, EndpointConfig, RetryPolicy};
use cgbench_core::catalog::Puzzle;
use cgbench_core::config::{AgentSpec, Seat, ViewCondition};
use cgbench_core::dsl::Command;
use cgbench_core::session::{ActionResult, Actor, EndReason, EventKind};
use cgbench_core::transcript::{read_log, replay};

fn ctx() -> AgentContext {
    let puzzle = Puzzle::default_bundled();
    AgentContext {
        catalog: Arc::new(puzzle.catalog),
        trials: Arc::new(puzzle.trials),
        endpoints: BTreeMap::new(),
        seed: 0,
    }
}

fn fast() -> SelfPlayOptions {
    SelfPlayOptions { durable: false, ..SelfPlayOptions::default() }
}

fn count_actions(run: &SessionRun, trial: u32, pred: impl Fn(&Command) -> bool) -> usize {
    run.events
        .iter()
        .filter(|e| e.trial_index == trial)
        .filter(|e| matches!(&e.kind, EventKind::Action { command, result: ActionResult::Applied } if pred(command)))
        .count()
}

#[test]
fn oracles_solve_every_trial_in_every_cell() {
    let configs = matrix_configs(
        1,
        &[ViewCondition::Shared, ViewCondition::NonShared],
        &Seat::BOTH,
        &AgentSpec::OracleHelper,
        &AgentSpec::OracleWorker,
        1,
    );
    let dir = tempfile::tempdir().unwrap();
    for c in configs {
        let run = run_session(c, &ctx(), Some(dir.path()), fast()).unwrap();
        assert!(run.failure.is_none());
        assert_eq!(run.successes(), 5, "{}", run.summary_line());
        assert!(run.outcomes.iter().all(|o| o.end_reason == EndReason::AgreedComplete));
        for t in 0..5 {
            assert_eq!(count_actions(&run, t, |c| matches!(c, Command::Place { .. })), 4);
            assert_eq!(count_actions(&run, t, |c| matches!(c, Command::Remove { .. })), 0);
        }
        let log = read_log(run.log_path.as_ref().unwrap()).unwrap();
        let puzzle = Puzzle::default_bundled();
        let r = replay(&log, &puzzle.catalog, &puzzle.trials).unwrap();
        assert_eq!(r.outcomes(), run.outcomes);
    }
}

#[test]
fn noisy_worker_is_repaired_in_shared_view() {
    let worker = AgentSpec::NoisyOracle { error_rate: 0.5 };
    let configs = matrix_configs(10, &[ViewCondition::Shared], &Seat::BOTH, &AgentSpec::OracleHelper, &worker, 3);
    let mut removes = 0;
    for c in configs {
        let run = run_session(c, &ctx(), None, fast()).unwrap();
        assert_eq!(run.successes(), 5, "{}", run.summary_line());
        removes += (0..5).map(|t| count_actions(&run, t, |c| matches!(c, Command::Remove { .. }))).sum::<usize>();
    }
    assert!(removes > 0);
}

#[test]
fn noisy_runs_repeat_exactly() {
    let worker = AgentSpec::NoisyOracle { error_rate: 0.5 };
    let run = |seed| {
        matrix_configs(2, &[ViewCondition::Shared, ViewCondition::NonShared], &[Seat::Worker], &AgentSpec::OracleHelper, &worker, seed)
            .into_iter()
            .map(|c| run_session(c, &ctx(), None, fast()).unwrap().events)
            .collect::<Vec<_>>()
    };
    assert_eq!(run(11), run(11));
    assert_ne!(run(11), run(12));
}

#[test]
fn noisy_worker_without_snapshots_can_fail() {
    let worker = AgentSpec::NoisyOracle { error_rate: 1.0 };
    let c = matrix_configs(1, &[ViewCondition::NonShared], &[Seat::Helper], &AgentSpec::OracleHelper, &worker, 5).remove(0);
    let run = run_session(c, &ctx(), None, fast()).unwrap();
    assert!(run.successes() < 5);
    assert_eq!(run.outcomes.len(), 5);
}

#[test]
fn unreachable_endpoint_ends_session_with_marker() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let port = listener.local_addr().unwrap().port();
    drop(listener);
    let mut ctx = ctx();
    ctx.endpoints.insert(
        "down".into(),
        EndpointConfig {
            base_url: format!("http://127.0.0.1:{port}/v1"),
            api_key_env: None,
            timeout_secs: 2,
            retry: RetryPolicy { max_attempts: 3, base_delay_ms: 1, max_delay_ms: 2 },
        },
    );
    let helper = AgentSpec::Llm {
        endpoint_ref: "down".into(),
        model_name: "m".into(),
        prompt_profile: "default-v1".into(),
        vision: false,
    };
    let c = matrix_configs(1, &[ViewCondition::Shared], &[Seat::Helper], &helper, &AgentSpec::OracleWorker, 1).remove(0);
    let dir = tempfile::tempdir().unwrap();
    let run = run_session(c, &ctx, Some(dir.path()), fast()).unwrap();
    assert!(matches!(run.failure, Some(AgentError::Endpoint { attempts: 3, .. })), "{:?}", run.failure);
    assert_eq!(run.outcomes.len(), 5);
    assert!(run.outcomes.iter().all(|o| o.end_reason == EndReason::Aborted));
    let log = read_log(run.log_path.as_ref().unwrap()).unwrap();
    assert!(log.is_complete());
    let marker = log.events.iter().find(|e| {
        e.actor == Actor::System && matches!(&e.kind, EventKind::Chat { text } if text.starts_with(ENDPOINT_ERROR_MARKER))
    });
    assert!(marker.is_some_and(|e| e.visibility.is_empty()));
}

#[test]
fn unknown_endpoint_is_a_config_failure() {
    let helper = AgentSpec::Llm {
        endpoint_ref: "missing".into(),
        model_name: "m".into(),
        prompt_profile: "default-v1".into(),
        vision: false,
    };
    let c = matrix_configs(1, &[ViewCondition::Shared], &[Seat::Helper], &helper, &AgentSpec::OracleWorker, 1).remove(0);
    let run = run_session(c, &ctx(), None, fast()).unwrap();
    assert!(matches!(run.failure, Some(AgentError::Config(_))));
}
