//! Messages exchanged with browser clients and remote agents.
//!
//! Session bootstrap is a JSON request/response ([`CreateSessionRequest`] →
//! [`CreateSessionResponse`]). After that, each seat holds a duplex channel
//! carrying one JSON object per frame (or per line on a byte stream), tagged
//! by `type`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config::{AgentSpec, Seat, SeatAssignment, ViewCondition};
use crate::session::{SeatMaterials, SessionEvent};

pub const PROTOCOL_VERSION: &str = "cgbench-wire/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    #[serde(default)]
    pub session_id: Option<String>,
    pub view: ViewCondition,
    /// Agents for both seats. Seats taken by `human_bridge` receive tokens.
    pub seats: Vec<SeatAssignment>,
    #[serde(default)]
    pub human_role: Option<Seat>,
    #[serde(default)]
    pub trial_time_limit_secs: Option<u64>,
    #[serde(default)]
    pub rotation_sensitive: Option<bool>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl CreateSessionRequest {
    /// A human in `human_role`, the server's default agent in the other seat.
    pub fn human_vs(view: ViewCondition, human_role: Seat, other: AgentSpec) -> CreateSessionRequest {
        CreateSessionRequest {
            session_id: None,
            view,
            seats: vec![
                SeatAssignment { seat: human_role, agent: AgentSpec::HumanBridge },
                SeatAssignment { seat: human_role.other(), agent: other },
            ],
            human_role: Some(human_role),
            trial_time_limit_secs: None,
            rotation_sensitive: None,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CreateSessionResponse {
    pub session_id: String,
    /// Capability token per remotely connected seat.
    pub seat_tokens: BTreeMap<Seat, String>,
    pub protocol: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ClientMessage {
    /// First message on a channel. `from_seq` resumes a stream.
    Join {
        session_id: String,
        token: String,
        #[serde(default)]
        from_seq: u64,
    },
    Chat { text: String },
    /// Propose that the puzzle is solved, or confirm the other seat's proposal.
    Complete,
    Heartbeat {
        #[serde(default)]
        nonce: u64,
    },
}

/// Seat-specific status after every change: current trial, whose
/// completion proposal is pending, and the seat's materials.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeatStatus {
    pub trial_index: Option<u32>,
    pub pending_proposal: Option<Seat>,
    pub deadline_ms: Option<i64>,
    pub can_send: bool,
    pub materials: Option<SeatMaterials>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    BadToken,
    NotJoined,
    SessionEnded,
    TrialExpired,
    AwaitingResponse,
    NoPendingProposal,
    Internal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    Join { session_id: String, seat: Seat, view: ViewCondition, protocol: String },
    Event { event: SessionEvent },
    Status { status: SeatStatus },
    Error { code: ErrorCode, message: String },
    Heartbeat { nonce: u64, server_ms: i64 },
}

pub fn encode<T: Serialize>(message: &T) -> String {
    serde_json::to_string(message).expect("wire messages serialize")
}

pub fn decode_client(text: &str) -> Result<ClientMessage, serde_json::Error> {
    serde_json::from_str(text)
}

pub fn decode_server(text: &str) -> Result<ServerMessage, serde_json::Error> {
    serde_json::from_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::{Actor, EventKind};

    #[test]
    fn client_messages_are_tagged() {
        assert_eq!(decode_client(r#"{"type":"chat","text":"PLACE 18 AT 0,0"}"#).unwrap(), ClientMessage::Chat {
            text: "PLACE 18 AT 0,0".into()
        });
        assert_eq!(decode_client(r#"{"type":"complete"}"#).unwrap(), ClientMessage::Complete);
        assert_eq!(decode_client(r#"{"type":"heartbeat"}"#).unwrap(), ClientMessage::Heartbeat { nonce: 0 });
        assert_eq!(
            decode_client(r#"{"type":"join","session_id":"s","token":"t"}"#).unwrap(),
            ClientMessage::Join { session_id: "s".into(), token: "t".into(), from_seq: 0 }
        );
        assert!(decode_client(r#"{"type":"place","id":3}"#).is_err());
    }

    #[test]
    fn event_message_embeds_session_event() {
        let msg = ServerMessage::Event {
            event: SessionEvent {
                seq: 2,
                timestamp_ms: 5,
                trial_index: 0,
                actor: Actor::Worker,
                kind: EventKind::Chat { text: "hi".into() },
                visibility: Seat::BOTH.into_iter().collect(),
            },
        };
        let text = encode(&msg);
        assert_eq!(
            text,
            r#"{"type":"event","event":{"seq":2,"timestamp_ms":5,"trial_index":0,"actor":"worker","kind":{"type":"chat","text":"hi"},"visibility":["helper","worker"]}}"#
        );
        assert_eq!(decode_server(&text).unwrap(), msg);
    }

    #[test]
    fn create_request_defaults() {
        let req: CreateSessionRequest = serde_json::from_str(
            r#"{"view":"non_shared","seats":[{"seat":"helper","agent":{"kind":"human_bridge"}},{"seat":"worker","agent":{"kind":"oracle_worker"}}],"human_role":"helper"}"#,
        )
        .unwrap();
        assert_eq!(req, CreateSessionRequest::human_vs(ViewCondition::NonShared, Seat::Helper, AgentSpec::OracleWorker));
    }
}
