//! Wire messages: one JSON object per line, tagged by `type`.

use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::node::ActuationKind;
use crate::physics::{Walker, Waypoint};
use crate::tracking::{Metrics, TrackEvent};

pub const PROTOCOL_VERSION: u32 = 1;

/// Longest accepted client line, in bytes.
pub const MAX_LINE: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topic {
    Floor,
    Tracks,
    Pir,
    Actuations,
    Metrics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    #[default]
    Observer,
    Controller,
}

/// Actuator request body; exactly one of the fields must be set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WireActuation {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub led: Option<[u8; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sound: Option<u32>,
}

impl WireActuation {
    pub fn to_kind(self) -> Result<ActuationKind, String> {
        match (self.led, self.sound) {
            (Some([r, g, b]), None) => {
                let k = ActuationKind::Led { r, g, b };
                k.validate()?;
                Ok(k)
            }
            (None, Some(sample_id)) => Ok(ActuationKind::Sound { sample_id }),
            _ => Err("exactly one of led or sound is required".into()),
        }
    }

    pub fn from_kind(k: ActuationKind) -> Self {
        match k {
            ActuationKind::Led { r, g, b } => WireActuation {
                led: Some([r, g, b]),
                sound: None,
            },
            ActuationKind::Sound { sample_id } => WireActuation {
                led: None,
                sound: Some(sample_id),
            },
        }
    }
}

/// Client to server. `req` is echoed in the matching ACK or ERROR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ClientMsg {
    Hello {
        req: u64,
        version: u32,
        #[serde(default)]
        role: Role,
    },
    Subscribe {
        req: u64,
        topics: Vec<Topic>,
        /// Floor delta rate; defaults to the server's setting.
        #[serde(default)]
        floor_rate_hz: Option<f64>,
    },
    SpawnWalker {
        req: u64,
        walker: Walker,
        /// Waypoint times count from the current engine instant.
        #[serde(default)]
        relative: bool,
    },
    MoveWalker {
        req: u64,
        walker: u32,
        path: Vec<Waypoint>,
        #[serde(default)]
        relative: bool,
    },
    RemoveWalker {
        req: u64,
        walker: u32,
    },
    SetAlgorithm {
        req: u64,
        name: String,
        #[serde(default)]
        params: Vec<String>,
    },
    Actuate {
        req: u64,
        node: u32,
        #[serde(flatten)]
        action: WireActuation,
    },
    RecordStart {
        req: u64,
        path: String,
        #[serde(default)]
        truth: bool,
    },
    RecordStop {
        req: u64,
    },
    Replay {
        req: u64,
        path: String,
        algorithm: String,
        #[serde(default)]
        params: Vec<String>,
    },
    Pause {
        req: u64,
    },
    Resume {
        req: u64,
    },
    Snapshot {
        req: u64,
    },
}

impl ClientMsg {
    pub fn req(&self) -> u64 {
        match *self {
            ClientMsg::Hello { req, .. }
            | ClientMsg::Subscribe { req, .. }
            | ClientMsg::SpawnWalker { req, .. }
            | ClientMsg::MoveWalker { req, .. }
            | ClientMsg::RemoveWalker { req, .. }
            | ClientMsg::SetAlgorithm { req, .. }
            | ClientMsg::Actuate { req, .. }
            | ClientMsg::RecordStart { req, .. }
            | ClientMsg::RecordStop { req }
            | ClientMsg::Replay { req, .. }
            | ClientMsg::Pause { req }
            | ClientMsg::Resume { req }
            | ClientMsg::Snapshot { req } => req,
        }
    }

    /// Commands that need the controller lease.
    pub fn is_mutating(&self) -> bool {
        !matches!(
            self,
            ClientMsg::Hello { .. } | ClientMsg::Subscribe { .. } | ClientMsg::Snapshot { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    VersionMismatch,
    HelloRequired,
    PermissionDenied,
    LeaseHeld,
    Rejected,
}

/// One sensor in a delta: absolute latest reading, baseline deviation in
/// counts and the load flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensorState {
    pub s: u32,
    pub v: u16,
    pub d: u32,
    pub on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkerView {
    pub id: u32,
    pub pos: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorSnapshot {
    pub t_us: u64,
    /// Indexed by sensor id; `None` before the first sample.
    pub sensors: Vec<Option<SensorState>>,
    pub pir: Vec<bool>,
    /// Ground truth, present for controller sessions only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walkers: Option<Vec<WalkerView>>,
    pub tracks: Vec<TrackEvent>,
    pub paused: bool,
}

/// Engine counters reported in METRICS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EngineCounters {
    pub samples: u64,
    pub events: u64,
    pub active_tracks: usize,
}

/// Server to client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ServerMsg {
    Ack {
        req: u64,
        t_us: u64,
        /// Position of the command in the server's single command order.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seq: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        session: Option<u64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        role: Option<Role>,
    },
    Error {
        req: Option<u64>,
        code: ErrorCode,
        message: String,
    },
    StateDelta {
        seq: u64,
        t_us: u64,
        sensors: Vec<SensorState>,
        pir: Vec<(u32, bool)>,
    },
    FloorSnapshot {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        req: Option<u64>,
        #[serde(flatten)]
        snapshot: FloorSnapshot,
    },
    Tracks {
        t_us: u64,
        events: Vec<TrackEvent>,
    },
    Actuation {
        t_us: u64,
        node: u32,
        #[serde(flatten)]
        action: WireActuation,
    },
    Metrics {
        t_us: u64,
        #[serde(rename = "final")]
        is_final: bool,
        engine: EngineCounters,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tracking: Option<Metrics>,
    },
}

impl ServerMsg {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("server messages serialize");
        s.push('\n');
        s
    }

    pub fn error(req: Option<u64>, code: ErrorCode, message: impl Into<String>) -> Self {
        ServerMsg::Error {
            req,
            code,
            message: message.into(),
        }
    }
}

/// Parses one client line. A line that is JSON but not a known command still
/// yields its `req` when one can be read, so the ERROR can carry it.
pub fn parse_client(line: &str) -> Result<ClientMsg, (Option<u64>, String)> {
    serde_json::from_str(line).map_err(|e| {
        let req = serde_json::from_str::<serde_json::Value>(line)
            .ok()
            .and_then(|v| v.get("req").and_then(|r| r.as_u64()));
        (req, e.to_string())
    })
}
