//! Session configuration: seats, view condition and agent specs.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default per-trial time limit in seconds (five minutes).
pub const DEFAULT_TRIAL_TIME_LIMIT_SECS: u64 = 300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seat {
    Helper,
    Worker,
}

impl Seat {
    pub const BOTH: [Seat; 2] = [Seat::Helper, Seat::Worker];

    pub fn other(self) -> Seat {
        match self {
            Seat::Helper => Seat::Worker,
            Seat::Worker => Seat::Helper,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Seat::Helper => "helper",
            Seat::Worker => "worker",
        }
    }
}

impl fmt::Display for Seat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Seat {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "helper" => Ok(Seat::Helper),
            "worker" => Ok(Seat::Worker),
            other => Err(ConfigError::Parse(format!("unknown seat {other:?}"))),
        }
    }
}

/// Whether the Helper receives snapshots of the Worker's board.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewCondition {
    Shared,
    NonShared,
}

impl ViewCondition {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewCondition::Shared => "shared",
            ViewCondition::NonShared => "non_shared",
        }
    }
}

impl fmt::Display for ViewCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewCondition {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "shared" => Ok(ViewCondition::Shared),
            "nonshared" => Ok(ViewCondition::NonShared),
            other => Err(ConfigError::Parse(format!("unknown view condition {other:?}"))),
        }
    }
}

/// Who or what occupies a seat.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentSpec {
    OracleHelper,
    OracleWorker,
    /// Oracle worker that misplaces pieces with probability `error_rate`.
    NoisyOracle { error_rate: f64 },
    Llm { endpoint_ref: String, model_name: String, prompt_profile: String, vision: bool },
    HumanBridge,
}

impl AgentSpec {
    pub fn is_human(&self) -> bool {
        matches!(self, AgentSpec::HumanBridge)
    }

    pub fn label(&self) -> String {
        match self {
            AgentSpec::OracleHelper => "oracle-helper".into(),
            AgentSpec::OracleWorker => "oracle-worker".into(),
            AgentSpec::NoisyOracle { error_rate } => format!("noisy-oracle({error_rate})"),
            AgentSpec::Llm { model_name, vision, .. } => {
                format!("llm({model_name}{})", if *vision { ",vision" } else { "" })
            }
            AgentSpec::HumanBridge => "human".into(),
        }
    }

    /// Parses the command-line form for a given seat:
    /// `oracle`, `noisy:<rate>`, `human`, or
    /// `llm:endpoint=<ref>,model=<name>[,profile=<name>][,vision=<bool>]`.
    pub fn parse_for_seat(s: &str, seat: Seat) -> Result<AgentSpec, ConfigError> {
        let s = s.trim();
        let (head, tail) = s.split_once(':').unwrap_or((s, ""));
        match head.to_ascii_lowercase().as_str() {
            "oracle" => Ok(match seat {
                Seat::Helper => AgentSpec::OracleHelper,
                Seat::Worker => AgentSpec::OracleWorker,
            }),
            "noisy" => {
                let error_rate: f64 =
                    tail.parse().map_err(|_| ConfigError::Parse(format!("bad error rate in {s:?}")))?;
                Ok(AgentSpec::NoisyOracle { error_rate })
            }
            "human" => Ok(AgentSpec::HumanBridge),
            "llm" => {
                let mut endpoint_ref = None;
                let mut model_name = None;
                let mut prompt_profile = "default-v1".to_string();
                let mut vision = false;
                for kv in tail.split(',').filter(|kv| !kv.is_empty()) {
                    let (k, v) = kv
                        .split_once('=')
                        .ok_or_else(|| ConfigError::Parse(format!("expected key=value, got {kv:?}")))?;
                    match k {
                        "endpoint" => endpoint_ref = Some(v.to_string()),
                        "model" => model_name = Some(v.to_string()),
                        "profile" => prompt_profile = v.to_string(),
                        "vision" => {
                            vision = v.parse().map_err(|_| ConfigError::Parse(format!("bad vision flag {v:?}")))?
                        }
                        _ => return Err(ConfigError::Parse(format!("unknown llm option {k:?}"))),
                    }
                }
                Ok(AgentSpec::Llm {
                    endpoint_ref: endpoint_ref.unwrap_or_else(|| "default".into()),
                    model_name: model_name.ok_or_else(|| ConfigError::Parse("llm spec needs model=<name>".into()))?,
                    prompt_profile,
                    vision,
                })
            }
            other => Err(ConfigError::Parse(format!("unknown agent kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeatAssignment {
    pub seat: Seat,
    pub agent: AgentSpec,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("{0}")]
    Parse(String),
    #[error("invalid session config: {0}")]
    Invalid(String),
}

/// One cell of the role x view design plus everything needed to run it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub session_id: String,
    pub view: ViewCondition,
    /// Seat played by a human participant; `None` for self-play.
    pub human_role: Option<Seat>,
    /// Role cell this session belongs to. Equals `human_role` when a human
    /// takes part; in self-play it names the seat standing in for the participant.
    pub focal_role: Seat,
    pub seats: Vec<SeatAssignment>,
    pub trial_set_ref: String,
    pub trial_time_limit_secs: u64,
    pub rotation_sensitive: bool,
    pub seed: u64,
}

impl SessionConfig {
    /// Self-play config with oracle agents in both seats.
    pub fn oracle_selfplay(session_id: impl Into<String>, view: ViewCondition, focal_role: Seat) -> SessionConfig {
        SessionConfig {
            session_id: session_id.into(),
            view,
            human_role: None,
            focal_role,
            seats: vec![
                SeatAssignment { seat: Seat::Helper, agent: AgentSpec::OracleHelper },
                SeatAssignment { seat: Seat::Worker, agent: AgentSpec::OracleWorker },
            ],
            trial_set_ref: "bundled:default".into(),
            trial_time_limit_secs: DEFAULT_TRIAL_TIME_LIMIT_SECS,
            rotation_sensitive: true,
            seed: 0,
        }
    }

    pub fn agent(&self, seat: Seat) -> Option<&AgentSpec> {
        self.seats.iter().find(|a| a.seat == seat).map(|a| &a.agent)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.session_id.is_empty()
            || !self.session_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.')
        {
            return invalid(format!("session id {:?} must be a non-empty file-safe name", self.session_id));
        }
        for seat in Seat::BOTH {
            let n = self.seats.iter().filter(|a| a.seat == seat).count();
            if n != 1 {
                return invalid(format!("expected exactly one {seat} seat, found {n}"));
            }
        }
        if self.trial_time_limit_secs == 0 {
            return invalid("trial time limit must be positive".into());
        }
        for a in &self.seats {
            match (&a.agent, a.seat) {
                (AgentSpec::OracleHelper, Seat::Worker) => return invalid("oracle helper cannot sit in the worker seat".into()),
                (AgentSpec::OracleWorker | AgentSpec::NoisyOracle { .. }, Seat::Helper) => {
                    return invalid("oracle worker cannot sit in the helper seat".into())
                }
                (AgentSpec::NoisyOracle { error_rate }, _) if !(0.0..=1.0).contains(error_rate) => {
                    return invalid(format!("error rate {error_rate} outside [0, 1]"))
                }
                _ => {}
            }
        }
        let humans: Vec<Seat> = self.seats.iter().filter(|a| a.agent.is_human()).map(|a| a.seat).collect();
        match (self.human_role, humans.as_slice()) {
            (None, []) => Ok(()),
            (Some(role), [seat]) if role == *seat && role == self.focal_role => Ok(()),
            _ => invalid("human_role must name the single human seat and match focal_role".into()),
        }
    }
}
