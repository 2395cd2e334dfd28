use std::collections::VecDeque;
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};

use cgbench_agents::llm::{BackendError, ChatBackend, ChatMessage, ContentPart, Role};
use cgbench_agents::prompts::PromptProfile;
use cgbench_agents::{Agent, AgentError, AgentTurn, EndpointConfig, HttpChatBackend, LlmAgent, Observation, RetryPolicy};
use cgbench_core::catalog::Puzzle;
use cgbench_core::config::{Seat, SessionConfig, ViewCondition};
use cgbench_core::session::{ManualClock, Session};

#[derive(Clone, Default)]
struct Script {
    replies: Arc<Mutex<VecDeque<Result<String, BackendError>>>>,
    seen: Arc<Mutex<Vec<Vec<ChatMessage>>>>,
}

impl Script {
    fn new(replies: Vec<Result<String, BackendError>>) -> Script {
        Script { replies: Arc::new(Mutex::new(replies.into())), seen: Default::default() }
    }
}

impl ChatBackend for Script {
    fn complete(&self, messages: &[ChatMessage]) -> Result<String, BackendError> {
        self.seen.lock().unwrap().push(messages.to_vec());
        self.replies.lock().unwrap().pop_front().unwrap_or(Ok(String::new()))
    }
}

fn no_wait() -> RetryPolicy {
    RetryPolicy { max_attempts: 3, base_delay_ms: 0, max_delay_ms: 0 }
}

fn session(view: ViewCondition) -> Session {
    let puzzle = Puzzle::default_bundled();
    Session::start(
        SessionConfig::oracle_selfplay("llm", view, Seat::Helper),
        Arc::new(puzzle.catalog),
        Arc::new(puzzle.trials),
        Arc::new(ManualClock::default()),
        None,
    )
    .unwrap()
}

fn agent(seat: Seat, script: &Script, vision: bool) -> LlmAgent {
    LlmAgent::new(
        seat,
        PromptProfile::bundled("default-v1").unwrap(),
        Box::new(script.clone()),
        Arc::new(Puzzle::default_bundled().catalog),
        vision,
    )
    .with_retry(no_wait())
}

fn step(agent: &mut LlmAgent, s: &Session, seat: Seat, from: &mut u64) -> Result<AgentTurn, AgentError> {
    let materials = s.materials(seat).unwrap();
    let events: Vec<_> = s.observe(seat, *from).cloned().collect();
    *from = s.events().len() as u64;
    agent.step(&Observation {
        seat,
        view: s.config().view,
        trial_index: s.current_trial().unwrap(),
        materials: &materials,
        new_events: &events,
        pending_proposal: s.pending_proposal(),
        can_send: s.can_send(seat),
    })
}

#[test]
fn three_server_errors_surface_as_endpoint_error() {
    let script = Script::new(vec![
        Err(BackendError::Transient("HTTP 500".into())),
        Err(BackendError::Transient("HTTP 502".into())),
        Err(BackendError::Transient("HTTP 503".into())),
        Ok("never reached".into()),
    ]);
    let s = session(ViewCondition::Shared);
    let mut a = agent(Seat::Helper, &script, false);
    let err = step(&mut a, &s, Seat::Helper, &mut 0).unwrap_err();
    assert_eq!(err, AgentError::Endpoint { attempts: 3, message: "HTTP 503".into() });
    assert_eq!(script.seen.lock().unwrap().len(), 3);
}

#[test]
fn transient_failure_then_success() {
    let script = Script::new(vec![Err(BackendError::Transient("HTTP 500".into())), Ok("Find the pink spiral.".into())]);
    let s = session(ViewCondition::Shared);
    let mut a = agent(Seat::Helper, &script, false);
    assert_eq!(step(&mut a, &s, Seat::Helper, &mut 0).unwrap(), AgentTurn::say("Find the pink spiral."));
}

#[test]
fn helper_prompt_has_target_but_worker_prompt_does_not() {
    let script = Script::new(vec![Ok("Put the cream stripes piece in the top left.".into()), Ok("PLACE 18 AT 0,0".into())]);
    let mut s = session(ViewCondition::NonShared);
    let mut helper = agent(Seat::Helper, &script, false);
    let mut worker = agent(Seat::Worker, &script, false);
    let (mut hc, mut wc) = (0, 0);
    let turn = step(&mut helper, &s, Seat::Helper, &mut hc).unwrap();
    s.submit_message(Seat::Helper, turn.text.as_deref().unwrap()).unwrap();
    let turn = step(&mut worker, &s, Seat::Worker, &mut wc).unwrap();
    s.submit_message(Seat::Worker, turn.text.as_deref().unwrap()).unwrap();

    let seen = script.seen.lock().unwrap();
    let flat = |msgs: &Vec<ChatMessage>| -> String {
        msgs.iter()
            .flat_map(|m| m.content.iter())
            .filter_map(|c| if let ContentPart::Text(t) = c { Some(t.clone()) } else { None })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let helper_prompt = flat(&seen[0]);
    let worker_prompt = flat(&seen[1]);
    assert!(helper_prompt.contains("cannot see the Worker's board"));
    assert!(helper_prompt.contains("rotated 90 degrees"));
    assert!(!helper_prompt.contains("id 18"));
    assert!(worker_prompt.contains("- id 18: cream stripes"));
    assert!(worker_prompt.contains("Helper: Put the cream stripes piece in the top left."));
    assert!(!worker_prompt.contains("rotated 90"));
    assert_eq!(seen[1][0].role, Role::System);
}

#[test]
fn snapshot_is_text_without_vision_and_adds_image_with_it() {
    for vision in [false, true] {
        let script = Script::new(vec![Ok("Start with the pink spiral.".into()), Ok("Good.".into())]);
        let mut s = session(ViewCondition::Shared);
        let mut helper = agent(Seat::Helper, &script, vision);
        let mut hc = 0;
        let turn = step(&mut helper, &s, Seat::Helper, &mut hc).unwrap();
        s.submit_message(Seat::Helper, turn.text.as_deref().unwrap()).unwrap();
        s.submit_message(Seat::Worker, "PLACE 0 AT 0,0").unwrap();
        step(&mut helper, &s, Seat::Helper, &mut hc).unwrap();
        let seen = script.seen.lock().unwrap();
        let last = seen.last().unwrap();
        let snap = last
            .iter()
            .find(|m| matches!(&m.content[0], ContentPart::Text(t) if t.contains("Snapshot of the Worker's board")))
            .unwrap();
        let ContentPart::Text(text) = &snap.content[0] else { unreachable!() };
        assert!(text.contains("row 0, column 0: piece 0, rotated 0 degrees"), "{text}");
        assert_eq!(snap.has_image(), vision);
        // the palette never reaches the helper
        assert!(last.iter().all(|m| m.content.iter().all(|c| !matches!(c, ContentPart::Text(t) if t.contains("Pieces in your hand")))));
    }
}

#[test]
fn helper_done_means_complete() {
    let script = Script::new(vec![Ok("Looks right to me. DONE".into())]);
    let s = session(ViewCondition::Shared);
    let mut helper = agent(Seat::Helper, &script, false);
    let turn = step(&mut helper, &s, Seat::Helper, &mut 0).unwrap();
    assert!(turn.complete);
    assert_eq!(turn.text.as_deref(), Some("Looks right to me. DONE"));
}

#[test]
fn worker_waits_for_the_helper() {
    let script = Script::new(vec![Ok("hello".into())]);
    let s = session(ViewCondition::Shared);
    let mut worker = agent(Seat::Worker, &script, false);
    assert!(step(&mut worker, &s, Seat::Worker, &mut 0).unwrap().is_pass());
    assert!(script.seen.lock().unwrap().is_empty());
}

#[test]
fn context_overflow_drops_the_oldest_trial() {
    let script = Script::new(vec![
        Ok("first".into()),
        Err(BackendError::ContextOverflow),
        Ok("second".into()),
        Err(BackendError::ContextOverflow),
    ]);
    let mut s = session(ViewCondition::NonShared);
    let mut helper = agent(Seat::Helper, &script, false);
    let mut hc = 0;
    let turn = step(&mut helper, &s, Seat::Helper, &mut hc).unwrap();
    s.submit_message(Seat::Helper, turn.text.as_deref().unwrap()).unwrap();
    s.submit_message(Seat::Worker, "DONE").unwrap();
    s.confirm_complete(Seat::Helper).unwrap();
    assert_eq!(step(&mut helper, &s, Seat::Helper, &mut hc).unwrap().text.as_deref(), Some("second"));
    let seen = script.seen.lock().unwrap();
    let practice_intro = |msgs: &Vec<ChatMessage>| {
        msgs.iter().any(|m| matches!(&m.content[0], ContentPart::Text(t) if t.starts_with("Practice puzzle")))
    };
    assert!(practice_intro(&seen[1]));
    assert!(!practice_intro(&seen[2]));
    drop(seen);
    // nothing older left to drop
    let mut fresh = agent(Seat::Helper, &Script::new(vec![Err(BackendError::ContextOverflow)]), false);
    assert_eq!(step(&mut fresh, &session(ViewCondition::NonShared), Seat::Helper, &mut 0), Err(AgentError::ContextOverflow));
}

/// Serves canned HTTP responses, one per connection, and records requests.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    let requests = Arc::new(Mutex::new(Vec::new()));
    let log = requests.clone();
    std::thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut head = String::new();
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
                head.push_str(&line);
                if line == "\r\n" {
                    break;
                }
            }
            let mut body_in = vec![0; len];
            reader.read_exact(&mut body_in).unwrap();
            log.lock().unwrap().push(format!("{head}{}", String::from_utf8_lossy(&body_in)));
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, requests)
}

#[test]
fn http_backend_speaks_chat_completions() {
    let ok = r#"{"choices":[{"message":{"role":"assistant","content":"PLACE 3 AT 0,1"}}]}"#.to_string();
    let (url, requests) = serve(vec![(503, "{}".into()), (200, ok)]);
    std::env::set_var("CGBENCH_TEST_KEY", "sk-test");
    let backend = HttpChatBackend::new(
        EndpointConfig { base_url: url, api_key_env: Some("CGBENCH_TEST_KEY".into()), timeout_secs: 5, retry: no_wait() },
        "gpt-test".into(),
    )
    .unwrap();
    assert!(!format!("{backend:?}").contains("sk-test"));
    let msgs = [ChatMessage::text(Role::System, "sys"), ChatMessage::text(Role::User, "hi")];
    assert!(matches!(backend.complete(&msgs), Err(BackendError::Transient(_))));
    assert_eq!(backend.complete(&msgs), Ok("PLACE 3 AT 0,1".into()));
    let requests = requests.lock().unwrap();
    assert!(requests[1].starts_with("POST /v1/chat/completions"));
    assert!(requests[1].to_ascii_lowercase().contains("authorization: bearer sk-test"));
    assert!(requests[1].contains(r#""model":"gpt-test""#));
    assert!(requests[1].contains(r#"{"content":"hi","role":"user"}"#) || requests[1].contains(r#"{"role":"user","content":"hi"}"#));
}

#[test]
fn http_backend_classifies_errors() {
    let overflow = r#"{"error":{"code":"context_length_exceeded","message":"too long"}}"#.to_string();
    let (url, _) = serve(vec![(400, overflow), (401, r#"{"error":"bad key"}"#.into())]);
    let backend = HttpChatBackend::new(
        EndpointConfig { base_url: url, api_key_env: None, timeout_secs: 5, retry: no_wait() },
        "m".into(),
    )
    .unwrap();
    let msgs = [ChatMessage::text(Role::User, "hi")];
    assert_eq!(backend.complete(&msgs), Err(BackendError::ContextOverflow));
    assert!(matches!(backend.complete(&msgs), Err(BackendError::Fatal(_))));
}

#[test]
fn missing_api_key_variable_is_reported() {
    let err = HttpChatBackend::new(
        EndpointConfig {
            base_url: "http://localhost:1".into(),
            api_key_env: Some("CGBENCH_SURELY_UNSET_VAR".into()),
            timeout_secs: 1,
            retry: no_wait(),
        },
        "m".into(),
    )
    .unwrap_err();
    assert!(err.to_string().contains("CGBENCH_SURELY_UNSET_VAR"));
}
