//! Algorithms selectable by name from the CLI and the gateway.

use std::sync::Arc;

use crate::engine::AlgorithmFactory;
use crate::floor::FloorTopology;
use crate::node::{ActuationKind, CalibrationParams, LoadDetector, NodeAlgorithm, NodeContext};
use crate::physics::{AdcSample, SensorModel};
use crate::tracking::{parse_bool, DistributedTracker, TrackerParams};

pub const ALGORITHMS: [&str; 4] = ["centroid-tracker", "echo", "led-follow", "idle"];

/// Parses `key=value` words.
pub fn parse_params<S: AsRef<str>>(words: &[S]) -> Result<Vec<(String, String)>, String> {
    words
        .iter()
        .map(|w| {
            let w = w.as_ref();
            w.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format!("parameter {w:?} is not key=value"))
        })
        .collect()
}

fn calibration(params: &[(String, String)]) -> Result<CalibrationParams, String> {
    let mut c = CalibrationParams::default();
    for (k, v) in params {
        let bad = || format!("invalid value {v:?} for {k}");
        match k.as_str() {
            "alpha" => c.alpha = v.parse().map_err(|_| bad())?,
            "warmup_us" => c.warmup_us = v.parse().map_err(|_| bad())?,
            "k" => c.k = v.parse().map_err(|_| bad())?,
            "release_hold_us" => c.release_hold_us = v.parse().map_err(|_| bad())?,
            _ => return Err(format!("unknown parameter {k:?}")),
        }
    }
    if !(c.alpha > 0.0 && c.alpha <= 1.0) {
        return Err("alpha must be in (0, 1]".into());
    }
    Ok(c)
}

/// Tracker parameters for `rate_hz` with overrides applied. `known_gains`
/// hands the nodes their sensors' gains so centroids weigh force, not counts.
pub fn tracker_params(
    params: &[(String, String)],
    models: &[SensorModel],
    rate_hz: u32,
) -> Result<TrackerParams, String> {
    let mut p = TrackerParams::for_rate(rate_hz);
    for (k, v) in params {
        if k == "known_gains" {
            if parse_bool(k, v)? {
                if models.is_empty() {
                    return Err("known_gains needs sensor models (not available in replay)".into());
                }
                p.gains = Some(Arc::new(models.iter().map(|m| m.gain).collect()));
            }
        } else {
            p.set(k, v)?;
        }
    }
    Ok(p)
}

/// Resolves an algorithm name plus parameters into a per-node factory.
pub fn build_algorithm(
    name: &str,
    params: &[(String, String)],
    topo: &FloorTopology,
    models: &[SensorModel],
    rate_hz: u32,
) -> Result<AlgorithmFactory, String> {
    let n = topo.config.sensors_per_node;
    match name {
        "centroid-tracker" => {
            let p = tracker_params(params, models, rate_hz)?;
            Ok(Arc::new(move |_| Box::new(DistributedTracker::new(p.clone(), n))))
        }
        "echo" => {
            let c = calibration(params)?;
            Ok(Arc::new(move |_| Box::new(Echo::new(c, n))))
        }
        "led-follow" => {
            let c = calibration(params)?;
            Ok(Arc::new(move |_| Box::new(LedFollow::new(c, n))))
        }
        "idle" => {
            if let Some((k, _)) = params.first() {
                return Err(format!("idle takes no parameters (got {k:?})"));
            }
            Ok(Arc::new(|_| Box::new(Idle)))
        }
        _ => Err(format!("unknown algorithm {name:?}; available: {}", ALGORITHMS.join(", "))),
    }
}

pub struct Idle;

impl NodeAlgorithm for Idle {}

/// Broadcasts `sensor:u16 deviation:f32` for every loaded sample.
pub struct Echo {
    params: CalibrationParams,
    detectors: Vec<LoadDetector>,
}

impl Echo {
    pub fn new(params: CalibrationParams, n_sensors: usize) -> Self {
        Echo {
            detectors: vec![LoadDetector::new(&params); n_sensors],
            params,
        }
    }
}

impl NodeAlgorithm for Echo {
    fn on_sample(&mut self, ctx: &mut NodeContext, idx: usize, s: &AdcSample) {
        if let Some(d) = self.detectors[idx].observe(s, &self.params) {
            let mut payload = (s.sensor.0 as u16).to_le_bytes().to_vec();
            payload.extend((d as f32).to_le_bytes());
            let _ = ctx.broadcast(payload);
        }
    }
}

/// Lights the node's red LEDs while any of its sensors carries load.
pub struct LedFollow {
    params: CalibrationParams,
    detectors: Vec<LoadDetector>,
    lit: bool,
}

impl LedFollow {
    pub fn new(params: CalibrationParams, n_sensors: usize) -> Self {
        LedFollow {
            detectors: vec![LoadDetector::new(&params); n_sensors],
            params,
            lit: false,
        }
    }
}

impl NodeAlgorithm for LedFollow {
    fn on_sample(&mut self, ctx: &mut NodeContext, idx: usize, s: &AdcSample) {
        self.detectors[idx].observe(s, &self.params);
        let loaded = self.detectors.iter().any(LoadDetector::is_active);
        if loaded != self.lit && ctx.actuator.is_some() {
            self.lit = loaded;
            let r = if loaded { 3 } else { 0 };
            ctx.actuate(ActuationKind::Led { r, g: 0, b: 0 });
        }
    }
}
