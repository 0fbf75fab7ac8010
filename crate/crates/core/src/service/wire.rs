//! Message envelope and payloads of the live coaching protocol.
//!
//! Every frame is one JSON text message `{type, seq, ts, payload}`. `seq`
//! increases by one per message in each direction of a connection; `ts` is
//! milliseconds since the run started (server frames) or since whatever
//! epoch the client likes (client frames).

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{ControlCommand, Phase};
use crate::error::{Error, Result};
use crate::instruction::{Directive, InstructionClass};
use crate::reward::RewardWeights;
use crate::sim::{ActionCommand, ActorKind, CarState, FeatureVector, Terminal, TrackSpec};
use crate::trainer::Task;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MessageType {
    Hello,
    State,
    EpochMetrics,
    Instruction,
    InstructionAck,
    Control,
    Error,
}

impl MessageType {
    /// Types a client may send.
    pub fn from_client(self) -> bool {
        matches!(self, MessageType::Instruction | MessageType::Control)
    }

    /// Frames that may be dropped in favor of a newer one.
    pub fn droppable(self) -> bool {
        self == MessageType::State
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: MessageType,
    pub seq: u64,
    pub ts: u64,
    pub payload: Value,
}

impl WireMessage {
    pub fn new<T: Serialize>(kind: MessageType, seq: u64, ts: u64, payload: &T) -> Result<Self> {
        Ok(Self {
            kind,
            seq,
            ts,
            payload: serde_json::to_value(payload)?,
        })
    }

    /// Parses one text frame. Malformed JSON, missing fields and unknown
    /// types are all protocol errors.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Protocol(format!("bad frame: {e}")))
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("wire message serializes")
    }

    pub fn payload_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.payload.clone())
            .map_err(|e| Error::Protocol(format!("bad {:?} payload: {e}", self.kind)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HelloPayload {
    pub protocol: u32,
    pub run_id: String,
    /// SHA-256 of the run config in TOML form, hex.
    pub config_digest: String,
    pub phase: Phase,
    pub task: Task,
    pub step_hz: f64,
    pub track: TrackSpec,
    /// Centerline sampled every meter, for drawing.
    pub centerline: Vec<[f64; 2]>,
    pub lane_half_width: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActorView {
    pub kind: ActorKind,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub phase: Phase,
    pub epoch: usize,
    pub episode: usize,
    pub step: usize,
    pub car: CarState,
    pub actors: Vec<ActorView>,
    pub features: FeatureVector,
    /// Action that led to this state.
    pub action: Option<ActionCommand>,
    pub overridden: bool,
    pub reward: Option<f64>,
    pub episode_return: f64,
    pub beta: RewardWeights,
    pub terminal: Option<Terminal>,
    pub completion: f64,
}

/// A coach instruction: free text, or a class picked from a button.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstructionPayload {
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub class: Option<InstructionClass>,
    /// Client wall clock at send, Unix milliseconds.
    #[serde(default)]
    pub client_sent_ms: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AckPayload {
    /// `seq` of the instruction being acknowledged.
    pub ref_seq: u64,
    pub text: String,
    pub class: InstructionClass,
    pub confidence: f64,
    pub directive: Directive,
    pub summary: String,
    pub epoch: usize,
    pub episode: usize,
    /// Step boundary at which the trainer took the instruction.
    pub arrival_step: usize,
    /// Step a human reward was credited to.
    pub attributed_step: Option<usize>,
    /// False for rewards at step 0 and overrides after the episode ended.
    pub effective: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlPayload {
    pub command: ControlCommand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default)]
    pub ref_seq: Option<u64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    /// Unparseable frame, unknown type, or out-of-order seq. The server closes.
    Protocol,
    NotTraining,
    EmptyText,
    QueueFull,
    IllegalTransition,
}

impl ErrorPayload {
    pub fn new(code: ErrorCode, message: impl Into<String>, ref_seq: Option<u64>) -> Self {
        Self {
            code,
            message: message.into(),
            ref_seq,
        }
    }

    /// Whether the server closes the connection after sending this error.
    pub fn fatal(&self) -> bool {
        self.code == ErrorCode::Protocol
    }
}
