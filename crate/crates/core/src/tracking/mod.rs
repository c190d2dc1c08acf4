//! Target detection, localization and counting.
//!
//! [`DistributedTracker`] is the in-network algorithm run on every node;
//! [`oracle`] is the centralized brute-force reference it approximates;
//! [`eval`] scores either against ground truth.

mod distributed;
pub mod eval;
pub mod oracle;
pub mod wire;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::geometry::Point;
use crate::ids::{NodeId, SensorId};
use crate::node::CalibrationParams;

pub use distributed::DistributedTracker;
pub use eval::{evaluate, Metrics, TruthFrame};
pub use oracle::{oracle_clusters, oracle_track, OracleCluster, OracleTracker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrackState {
    Tentative,
    Confirmed,
    Dead,
}

impl TrackState {
    pub fn as_str(self) -> &'static str {
        match self {
            TrackState::Tentative => "tentative",
            TrackState::Confirmed => "confirmed",
            TrackState::Dead => "dead",
        }
    }
}

/// One sensor's load evidence as broadcast by its node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub sensor: SensorId,
    pub pos: Point,
    pub deviation_counts: f64,
    /// `deviation / gain` when the gain is known, else the raw counts.
    pub normalized_force_n: f64,
    pub t_us: u64,
}

/// A state change or position update of one track.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackEvent {
    pub t_us: u64,
    pub track_id: u32,
    /// Emitting leader; `None` for the centralized oracle.
    pub node: Option<NodeId>,
    pub pos: Point,
    pub strength: f64,
    pub state: TrackState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub track_id: u32,
    /// `(t_us, position, strength)`, strictly increasing in time.
    pub samples: Vec<(u64, Point, f64)>,
    pub state: TrackState,
}

/// Folds an event stream into per-track histories, ordered by track id.
pub fn build_tracks(events: &[TrackEvent]) -> Vec<Track> {
    let mut by_id: std::collections::BTreeMap<u32, Track> = Default::default();
    for e in events {
        let t = by_id.entry(e.track_id).or_insert_with(|| Track {
            track_id: e.track_id,
            samples: Vec::new(),
            state: e.state,
        });
        if e.state != TrackState::Dead && t.samples.last().is_none_or(|s| s.0 < e.t_us) {
            t.samples.push((e.t_us, e.pos, e.strength));
        }
        t.state = e.state;
    }
    by_id.into_values().collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackerParams {
    pub cluster_radius_m: f64,
    pub velocity_gate_mps: f64,
    /// Position allowance added to the velocity gate for centroid jitter.
    pub gate_slack_m: f64,
    pub min_hits: u32,
    pub max_misses: u32,
    pub pir_gate: bool,
    pub pir_window_us: u64,
    pub round_us: u64,
    pub hop_ttl: u8,
    pub calibration: CalibrationParams,
    /// Per-sensor gains in counts/N when known to the nodes.
    #[serde(skip)]
    pub gains: Option<Arc<Vec<f64>>>,
    /// Light the media board green while a confirmed track is led here.
    pub actuate: bool,
}

impl Default for TrackerParams {
    fn default() -> Self {
        TrackerParams {
            cluster_radius_m: 1.2,
            velocity_gate_mps: 3.0,
            gate_slack_m: 0.3,
            min_hits: 3,
            max_misses: 8,
            pir_gate: true,
            pir_window_us: 2_000_000,
            round_us: 125_000,
            hop_ttl: 1,
            calibration: CalibrationParams::default(),
            gains: None,
            actuate: true,
        }
    }
}

impl TrackerParams {
    /// One sample period, but at least 25 ms.
    pub fn for_rate(rate_hz: u32) -> Self {
        TrackerParams {
            round_us: default_round_us(rate_hz),
            ..TrackerParams::default()
        }
    }

    /// Whether an observation `dt_us` after a track's last fix, `dist_m`
    /// away, is physically reachable.
    pub fn within_gate(&self, dist_m: f64, dt_us: u64) -> bool {
        dist_m <= self.velocity_gate_mps * dt_us as f64 * 1e-6 + self.gate_slack_m
    }

    /// Applies `key=value` overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        fn p<T: std::str::FromStr>(k: &str, v: &str) -> Result<T, String> {
            v.parse().map_err(|_| format!("invalid value {v:?} for {k}"))
        }
        match key {
            "cluster_radius" | "cluster_radius_m" => self.cluster_radius_m = p(key, value)?,
            "velocity_gate" | "velocity_gate_mps" => self.velocity_gate_mps = p(key, value)?,
            "gate_slack" | "gate_slack_m" => self.gate_slack_m = p(key, value)?,
            "min_hits" => self.min_hits = p(key, value)?,
            "max_misses" => self.max_misses = p(key, value)?,
            "pir_gate" => self.pir_gate = parse_bool(key, value)?,
            "pir_window_us" => self.pir_window_us = p(key, value)?,
            "round_us" => self.round_us = p(key, value)?,
            "hop_ttl" => self.hop_ttl = p(key, value)?,
            "alpha" => self.calibration.alpha = p(key, value)?,
            "warmup_us" => self.calibration.warmup_us = p(key, value)?,
            "k" => self.calibration.k = p(key, value)?,
            "release_hold_us" => self.calibration.release_hold_us = p(key, value)?,
            "actuate" => self.actuate = parse_bool(key, value)?,
            _ => return Err(format!("unknown tracker parameter {key:?}")),
        }
        if self.round_us < 2 {
            return Err("round_us must be at least 2".into());
        }
        Ok(())
    }
}

pub(crate) fn parse_bool(key: &str, v: &str) -> Result<bool, String> {
    match v {
        "1" | "true" | "on" | "yes" => Ok(true),
        "0" | "false" | "off" | "no" => Ok(false),
        _ => Err(format!("invalid boolean {v:?} for {key}")),
    }
}

pub fn default_round_us(rate_hz: u32) -> u64 {
    (1_000_000 / rate_hz.max(1) as u64).max(25_000)
}
