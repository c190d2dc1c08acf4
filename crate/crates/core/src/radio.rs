//! Simulated wireless medium: neighbor-limited broadcast and unicast with
//! latency, bounded jitter and independent Bernoulli loss.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::floor::FloorTopology;
use crate::ids::NodeId;

/// Largest payload a node may put on the air.
pub const MAX_PAYLOAD: usize = 96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadioConfig {
    pub radio_radius_m: f64,
    pub latency_base_us: u64,
    pub latency_jitter_us: u64,
    pub loss_prob: f64,
    /// Rng stream id for loss and jitter draws.
    pub stream: u64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        RadioConfig {
            radio_radius_m: 3.0,
            latency_base_us: 2_000,
            latency_jitter_us: 1_000,
            loss_prob: 0.0,
            stream: 1,
        }
    }
}

impl RadioConfig {
    /// Zero latency, zero jitter, no loss.
    pub fn ideal() -> Self {
        RadioConfig {
            latency_base_us: 0,
            latency_jitter_us: 0,
            loss_prob: 0.0,
            ..RadioConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.loss_prob) {
            return Err(format!("radio.loss_prob {} outside [0,1]", self.loss_prob));
        }
        if !(self.radio_radius_m >= 0.0) {
            return Err(format!("radio.radius_m {} negative", self.radio_radius_m));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Destination {
    Node(NodeId),
    Broadcast,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeMsg {
    pub src: NodeId,
    pub dst: Destination,
    pub payload: Vec<u8>,
    pub sent_t_us: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RadioError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    PayloadTooLarge(usize),
    #[error("unknown source node {0}")]
    UnknownSource(NodeId),
}

impl NodeMsg {
    pub fn new(
        src: NodeId,
        dst: Destination,
        payload: Vec<u8>,
        sent_t_us: u64,
    ) -> Result<Self, RadioError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(RadioError::PayloadTooLarge(payload.len()));
        }
        Ok(NodeMsg {
            src,
            dst,
            payload,
            sent_t_us,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SendOutcome {
    /// `(recipient, delivery time)` for every copy that survives the channel.
    pub deliveries: Vec<(NodeId, u64)>,
    pub dropped: Vec<NodeId>,
    /// Set for unicast to a node outside radio range; nothing is delivered.
    pub routing_error: Option<NodeId>,
}

/// Resolves one transmission into per-recipient deliveries.
///
/// Recipients are visited in ascending node order and each consumes exactly
/// one loss draw and, if it survives, one jitter draw, so the rng stream
/// advances identically for identical inputs.
pub fn send<R: Rng + ?Sized>(
    cfg: &RadioConfig,
    topo: &FloorTopology,
    msg: &NodeMsg,
    rng: &mut R,
) -> Result<SendOutcome, RadioError> {
    let neighbors = topo
        .neighbors
        .get(msg.src.index())
        .ok_or(RadioError::UnknownSource(msg.src))?;
    let mut out = SendOutcome::default();
    let single;
    let recipients: &[NodeId] = match msg.dst {
        Destination::Broadcast => neighbors,
        Destination::Node(dst) => {
            if neighbors.binary_search(&dst).is_err() {
                out.routing_error = Some(dst);
                return Ok(out);
            }
            single = [dst];
            &single
        }
    };
    for &dst in recipients {
        if cfg.loss_prob > 0.0 && rng.random::<f64>() < cfg.loss_prob {
            out.dropped.push(dst);
            continue;
        }
        let jitter = if cfg.latency_jitter_us > 0 {
            (rng.random::<f64>() * cfg.latency_jitter_us as f64) as u64
        } else {
            0
        };
        out.deliveries
            .push((dst, msg.sent_t_us + cfg.latency_base_us + jitter));
    }
    Ok(out)
}
