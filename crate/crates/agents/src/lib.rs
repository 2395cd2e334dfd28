//! Agents that occupy a seat: scripted oracles, a noisy oracle Worker, and
//! an LLM adapter over any chat-completion endpoint. Also the self-play
//! runner that pairs two agents in one session.

pub mod llm;
pub mod oracle;
pub mod prompts;
pub mod render;
pub mod selfplay;

use std::collections::BTreeMap;
use std::sync::Arc;

use cgbench_core::catalog::{PieceCatalog, TrialSet};
use cgbench_core::config::{AgentSpec, Seat, ViewCondition};
use cgbench_core::session::{SeatMaterials, SessionEvent};
use thiserror::Error;

pub use llm::{ChatBackend, EndpointConfig, HttpChatBackend, LlmAgent, RetryPolicy};
pub use oracle::{OracleHelper, OracleWorker};

/// What an agent sees when asked for its next move.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub seat: Seat,
    pub view: ViewCondition,
    pub trial_index: u32,
    pub materials: &'a SeatMaterials,
    /// Events visible to this seat that arrived since its previous step.
    pub new_events: &'a [SessionEvent],
    pub pending_proposal: Option<Seat>,
    /// False while the seat waits for the other seat's first message.
    pub can_send: bool,
}

/// An agent's move: an optional chat message and whether it proposes (or
/// confirms) that the puzzle is solved.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentTurn {
    pub text: Option<String>,
    pub complete: bool,
}

impl AgentTurn {
    pub fn say(text: impl Into<String>) -> AgentTurn {
        AgentTurn { text: Some(text.into()), complete: false }
    }

    pub fn complete() -> AgentTurn {
        AgentTurn { text: None, complete: true }
    }

    pub fn pass() -> AgentTurn {
        AgentTurn::default()
    }

    pub fn is_pass(&self) -> bool {
        self.text.is_none() && !self.complete
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgentError {
    #[error("endpoint error after {attempts} attempt(s): {message}")]
    Endpoint { attempts: u32, message: String },
    #[error("context does not fit the model even after dropping earlier trials")]
    ContextOverflow,
    #[error("agent configuration: {0}")]
    Config(String),
}

pub trait Agent: Send {
    fn step(&mut self, obs: &Observation<'_>) -> Result<AgentTurn, AgentError>;
}

/// Shared inputs for building agents.
#[derive(Debug, Clone)]
pub struct AgentContext {
    pub catalog: Arc<PieceCatalog>,
    /// Only oracle Helpers read the privileged target identifiers.
    pub trials: Arc<TrialSet>,
    pub endpoints: BTreeMap<String, EndpointConfig>,
    pub seed: u64,
}

/// Builds the agent described by `spec` for `seat`.
pub fn build_agent(spec: &AgentSpec, seat: Seat, ctx: &AgentContext) -> Result<Box<dyn Agent>, AgentError> {
    match (spec, seat) {
        (AgentSpec::OracleHelper, Seat::Helper) => Ok(Box::new(OracleHelper::new(ctx.trials.clone(), ctx.catalog.clone()))),
        (AgentSpec::OracleWorker, Seat::Worker) => Ok(Box::new(OracleWorker::new(0.0, ctx.seed))),
        (AgentSpec::NoisyOracle { error_rate }, Seat::Worker) => Ok(Box::new(OracleWorker::new(*error_rate, ctx.seed))),
        (AgentSpec::Llm { endpoint_ref, model_name, prompt_profile, vision }, _) => {
            let endpoint = ctx
                .endpoints
                .get(endpoint_ref)
                .ok_or_else(|| AgentError::Config(format!("unknown endpoint {endpoint_ref:?}")))?;
            let backend = HttpChatBackend::new(endpoint.clone(), model_name.clone())?;
            let profile = prompts::PromptProfile::bundled(prompt_profile)
                .ok_or_else(|| AgentError::Config(format!("unknown prompt profile {prompt_profile:?}")))?;
            Ok(Box::new(LlmAgent::new(seat, profile, Box::new(backend), ctx.catalog.clone(), *vision)))
        }
        (AgentSpec::HumanBridge, _) => Err(AgentError::Config("a human seat has no local agent".into())),
        (spec, seat) => Err(AgentError::Config(format!("{} cannot sit in the {seat} seat", spec.label()))),
    }
}
