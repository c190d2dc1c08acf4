//! The virtual sensor node: an event-handler API around a user algorithm,
//! plus the per-sensor baseline estimator and load detector that most
//! algorithms build on.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::floor::FloorTopology;
use crate::ids::{ActuatorId, NodeId, PirId, SensorId};
use crate::physics::{AdcSample, PirEvent};
use crate::radio::{Destination, NodeMsg, RadioError, MAX_PAYLOAD};
use crate::tracking::TrackEvent;

/// Gaussian consistency factor turning mean absolute deviation into sigma.
pub const MAD_TO_SIGMA: f64 = 1.2533;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActuationKind {
    /// Intensity 0..=3 per color (three LEDs of each color).
    Led { r: u8, g: u8, b: u8 },
    Sound { sample_id: u32 },
}

impl ActuationKind {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            ActuationKind::Led { r, g, b } if r > 3 || g > 3 || b > 3 => {
                Err(format!("LED intensity ({r},{g},{b}) outside 0..=3"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Actuation {
    pub t_us: u64,
    pub node: NodeId,
    pub kind: ActuationKind,
}

#[derive(Debug, Clone, PartialEq)]
pub enum NodeCommand {
    Send { dst: Destination, payload: Vec<u8> },
    SetTimer { timer_id: u32, delay_us: u64 },
    Actuate(ActuationKind),
    Report(TrackEvent),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum NodeError {
    #[error("node {0} has no actuator")]
    NoActuator(NodeId),
    #[error("node {0}: invalid actuation: {1}")]
    BadActuation(NodeId, String),
    #[error("node {0}: unicast to {1} is out of radio range")]
    Routing(NodeId, NodeId),
    #[error("baseline calibration incomplete")]
    CalibrationIncomplete,
}

/// Everything a handler may see or touch. Handlers only ever get their own
/// node's context.
#[derive(Debug)]
pub struct NodeContext {
    pub node: NodeId,
    pub sensors: Vec<SensorId>,
    pub pir: Option<PirId>,
    pub actuator: Option<ActuatorId>,
    /// Node-local clock: global time plus this node's skew.
    pub now_us: u64,
    pub scratch: BTreeMap<String, f64>,
    topo: Arc<FloorTopology>,
    commands: Vec<NodeCommand>,
}

impl NodeContext {
    pub fn new(topo: Arc<FloorTopology>, node: NodeId) -> Self {
        let n = &topo.nodes[node.index()];
        NodeContext {
            node,
            sensors: n.sensors.clone(),
            pir: n.pir,
            actuator: n.actuator,
            now_us: 0,
            scratch: BTreeMap::new(),
            commands: Vec::new(),
            topo,
        }
    }

    /// Deployment map (sensor positions, PIR zones). Read-only.
    pub fn topology(&self) -> &FloorTopology {
        &self.topo
    }

    pub fn broadcast(&mut self, payload: Vec<u8>) -> Result<(), RadioError> {
        self.send_to(Destination::Broadcast, payload)
    }

    pub fn send(&mut self, dst: NodeId, payload: Vec<u8>) -> Result<(), RadioError> {
        self.send_to(Destination::Node(dst), payload)
    }

    fn send_to(&mut self, dst: Destination, payload: Vec<u8>) -> Result<(), RadioError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(RadioError::PayloadTooLarge(payload.len()));
        }
        self.commands.push(NodeCommand::Send { dst, payload });
        Ok(())
    }

    pub fn set_timer(&mut self, timer_id: u32, delay_us: u64) {
        self.commands.push(NodeCommand::SetTimer { timer_id, delay_us });
    }

    pub fn actuate(&mut self, kind: ActuationKind) {
        self.commands.push(NodeCommand::Actuate(kind));
    }

    pub fn report(&mut self, ev: TrackEvent) {
        self.commands.push(NodeCommand::Report(ev));
    }
}

/// Event handlers of an in-network algorithm. One instance runs per node.
pub trait NodeAlgorithm: Send {
    fn on_init(&mut self, _ctx: &mut NodeContext) {}
    fn on_sample(&mut self, _ctx: &mut NodeContext, _local_idx: usize, _sample: &AdcSample) {}
    fn on_pir(&mut self, _ctx: &mut NodeContext, _ev: &PirEvent) {}
    fn on_message(&mut self, _ctx: &mut NodeContext, _msg: &NodeMsg) {}
    fn on_timer(&mut self, _ctx: &mut NodeContext, _timer_id: u32) {}
}

#[derive(Debug, Clone, Copy)]
pub enum NodeEvent<'a> {
    Init,
    Sample(usize, &'a AdcSample),
    Pir(&'a PirEvent),
    Message(&'a NodeMsg),
    Timer(u32),
}

/// Commands accepted from one handler run, plus those rejected.
#[derive(Debug, Default, PartialEq)]
pub struct Dispatch {
    pub commands: Vec<NodeCommand>,
    pub errors: Vec<NodeError>,
}

pub struct NodeRuntime {
    pub ctx: NodeContext,
    algorithm: Box<dyn NodeAlgorithm>,
}

impl NodeRuntime {
    pub fn new(ctx: NodeContext, algorithm: Box<dyn NodeAlgorithm>) -> Self {
        NodeRuntime { ctx, algorithm }
    }

    pub fn replace_algorithm(&mut self, algorithm: Box<dyn NodeAlgorithm>) {
        self.algorithm = algorithm;
        self.ctx.scratch.clear();
    }

    /// Runs the matching hook at node-local time `now_local_us`.
    pub fn dispatch(&mut self, now_local_us: u64, event: NodeEvent<'_>) -> Dispatch {
        self.ctx.now_us = now_local_us;
        self.ctx.commands.clear();
        let ctx = &mut self.ctx;
        match event {
            NodeEvent::Init => self.algorithm.on_init(ctx),
            NodeEvent::Sample(i, s) => self.algorithm.on_sample(ctx, i, s),
            NodeEvent::Pir(p) => self.algorithm.on_pir(ctx, p),
            NodeEvent::Message(m) => self.algorithm.on_message(ctx, m),
            NodeEvent::Timer(id) => self.algorithm.on_timer(ctx, id),
        }
        let mut out = Dispatch::default();
        for cmd in self.ctx.commands.drain(..) {
            if let NodeCommand::Actuate(kind) = &cmd {
                if self.ctx.actuator.is_none() {
                    out.errors.push(NodeError::NoActuator(self.ctx.node));
                    continue;
                }
                if let Err(e) = kind.validate() {
                    out.errors.push(NodeError::BadActuation(self.ctx.node, e));
                    continue;
                }
            }
            out.commands.push(cmd);
        }
        out
    }
}

/// Running estimate of one sensor's unloaded reading and noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub mean_counts: f64,
    pub sigma_counts: f64,
    pub last_update_us: u64,
    pub warmup_complete: bool,
    /// Set while the sensor is carrying load; freezes the estimate.
    pub active: bool,
    abs_dev: f64,
    samples: u64,
    first_us: u64,
    warmup_us: u64,
}

impl Baseline {
    pub fn new(warmup_us: u64) -> Self {
        Baseline {
            mean_counts: 0.0,
            sigma_counts: 0.0,
            last_update_us: 0,
            warmup_complete: false,
            active: false,
            abs_dev: 0.0,
            samples: 0,
            first_us: 0,
            warmup_us,
        }
    }

    /// An already-warm baseline with the given statistics.
    pub fn calibrated(mean_counts: f64, sigma_counts: f64) -> Self {
        Baseline {
            mean_counts,
            sigma_counts,
            warmup_complete: true,
            abs_dev: sigma_counts / MAD_TO_SIGMA,
            samples: u64::MAX,
            ..Baseline::new(0)
        }
    }
}

/// EWMA update of mean and mean absolute deviation.
///
/// The first samples use a running average (`max(alpha, 1/n)`) so the
/// estimate is usable after warmup regardless of `alpha`. Suspended while the
/// sensor is flagged active.
pub fn calibrate_update(b: Baseline, sample: &AdcSample, alpha: f64) -> Baseline {
    if b.active {
        return b;
    }
    let mut b = b;
    let x = sample.value as f64;
    b.samples = b.samples.saturating_add(1);
    if b.samples == 1 {
        b.mean_counts = x;
        b.abs_dev = 0.0;
        b.first_us = sample.t_us;
    } else {
        let a = alpha.max(1.0 / b.samples as f64);
        let dev = (x - b.mean_counts).abs();
        // (1-a)*m + a*x, written so a constant input is an exact fixed point
        b.mean_counts += a * (x - b.mean_counts);
        b.abs_dev += a * (dev - b.abs_dev);
    }
    b.sigma_counts = MAD_TO_SIGMA * b.abs_dev;
    b.last_update_us = sample.t_us;
    if !b.warmup_complete && sample.t_us.saturating_sub(b.first_us) >= b.warmup_us {
        b.warmup_complete = true;
    }
    b
}

/// One-sided load test: readings only drop under load.
pub fn detect(b: &Baseline, sample: &AdcSample, k: f64) -> Result<Option<f64>, NodeError> {
    if !b.warmup_complete {
        return Err(NodeError::CalibrationIncomplete);
    }
    let deviation = (b.mean_counts - sample.value as f64).max(0.0);
    Ok((deviation > k * b.sigma_counts).then_some(deviation))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub alpha: f64,
    pub warmup_us: u64,
    pub k: f64,
    /// Time the deviation must stay below `k*sigma/2` before release.
    pub release_hold_us: u64,
}

impl Default for CalibrationParams {
    fn default() -> Self {
        CalibrationParams {
            alpha: 0.01,
            warmup_us: 5_000_000,
            k: 5.0,
            release_hold_us: 500_000,
        }
    }
}

/// Baseline plus active-flag hysteresis for one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoadDetector {
    pub baseline: Baseline,
    quiet_since: Option<u64>,
}

impl LoadDetector {
    pub fn new(params: &CalibrationParams) -> Self {
        LoadDetector {
            baseline: Baseline::new(params.warmup_us),
            quiet_since: None,
        }
    }

    pub fn is_active(&self) -> bool {
        self.baseline.active
    }

    /// Feeds one sample; returns the current deviation while the sensor is
    /// flagged active.
    pub fn observe(&mut self, sample: &AdcSample, params: &CalibrationParams) -> Option<f64> {
        let b = &mut self.baseline;
        // warmup spans [first, first + warmup_us); the sample that closes it
        // is already tested, not absorbed
        if !b.warmup_complete && b.samples > 0 && sample.t_us.saturating_sub(b.first_us) >= b.warmup_us {
            b.warmup_complete = true;
        }
        let detected = match detect(b, sample, params.k) {
            Err(_) => {
                *b = calibrate_update(*b, sample, params.alpha);
                return None;
            }
            Ok(d) => d,
        };
        if let Some(d) = detected {
            b.active = true;
            self.quiet_since = None;
            return Some(d);
        }
        if b.active {
            let deviation = (b.mean_counts - sample.value as f64).max(0.0);
            if deviation <= params.k * b.sigma_counts / 2.0 {
                let since = *self.quiet_since.get_or_insert(sample.t_us);
                if sample.t_us - since >= params.release_hold_us {
                    b.active = false;
                    self.quiet_since = None;
                }
            } else {
                self.quiet_since = None;
            }
            if b.active {
                return Some(deviation);
            }
        }
        *b = calibrate_update(*b, sample, params.alpha);
        None
    }
}
