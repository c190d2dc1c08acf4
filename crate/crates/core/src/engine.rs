//! Discrete-event simulation engine.
//!
//! One priority queue orders every event by `(t_us, kind, seq)`. A frame
//! event advances the world once per sample period and schedules one sample
//! tick per node at the same instant; node commands feed back into the queue
//! as radio deliveries and timers. Outputs accumulate in a buffer that the
//! caller drains.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fmt;
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::floor::FloorTopology;
use crate::ids::{NodeId, PirId};
use crate::node::{Actuation, ActuationKind, NodeAlgorithm, NodeCommand, NodeContext, NodeError, NodeEvent, NodeRuntime};
use crate::physics::{self, AdcSample, PirEvent, SensorModel, Walker};
use crate::radio::{self, NodeMsg, RadioConfig};
use crate::rng;
use crate::scenario::{Scenario, ScenarioError};
use crate::trace::{Trace, TraceError, TraceHeader, TraceRecord, TruthRecord};
use crate::tracking::{TrackEvent, TruthFrame};

/// Builds the algorithm instance for one node.
pub type AlgorithmFactory = Arc<dyn Fn(NodeId) -> Box<dyn NodeAlgorithm> + Send + Sync>;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub sample_rate_hz: u32,
    /// `None` runs until stopped.
    pub duration_us: Option<u64>,
    pub seed: u64,
    /// Per-node offset of the local clock; missing entries are 0.
    pub clock_skew_us: Vec<i64>,
    pub pir_speed_threshold_mps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            sample_rate_hz: 8,
            duration_us: Some(10_000_000),
            seed: 0,
            clock_skew_us: Vec::new(),
            pir_speed_threshold_mps: 0.1,
        }
    }
}

impl SimConfig {
    pub fn new(sample_rate_hz: u32, duration_s: f64, seed: u64) -> Self {
        SimConfig {
            sample_rate_hz,
            duration_us: Some((duration_s * 1e6).round() as u64),
            seed,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        if self.sample_rate_hz == 0 {
            return Err(EngineError::Config("sample rate must be positive".into()));
        }
        if !(self.pir_speed_threshold_mps >= 0.0) {
            return Err(EngineError::Config("PIR speed threshold must be non-negative".into()));
        }
        Ok(())
    }

    /// Sample ticks per sensor: `floor(duration * rate)`.
    pub fn tick_count(&self) -> Option<u64> {
        self.duration_us
            .map(|d| (d as u128 * self.sample_rate_hz as u128 / 1_000_000) as u64)
    }

    pub fn tick_time_us(&self, k: u64) -> u64 {
        (k as u128 * 1_000_000 / self.sample_rate_hz as u128) as u64
    }

    fn skew(&self, node: NodeId) -> i64 {
        self.clock_skew_us.get(node.index()).copied().unwrap_or(0)
    }
}

/// Mutations accepted from outside the engine.
#[derive(Clone)]
pub enum EngineCommand {
    SpawnWalker(Walker),
    /// Replaces a walker's path; waypoint times are absolute.
    MoveWalker { id: u32, path: Vec<crate::physics::Waypoint> },
    RemoveWalker(u32),
    SetAlgorithm(AlgorithmFactory),
    Actuate { node: NodeId, kind: ActuationKind },
}

impl fmt::Debug for EngineCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EngineCommand::SpawnWalker(w) => f.debug_tuple("SpawnWalker").field(w).finish(),
            EngineCommand::MoveWalker { id, path } => f
                .debug_struct("MoveWalker")
                .field("id", id)
                .field("path", path)
                .finish(),
            EngineCommand::RemoveWalker(id) => f.debug_tuple("RemoveWalker").field(id).finish(),
            EngineCommand::SetAlgorithm(_) => f.write_str("SetAlgorithm(..)"),
            EngineCommand::Actuate { node, kind } => f
                .debug_struct("Actuate")
                .field("node", node)
                .field("kind", kind)
                .finish(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    Sample(AdcSample),
    Pir(PirEvent),
    Actuation(Actuation),
    Truth(TruthRecord),
    Track(TrackEvent),
    Error { t_us: u64, error: NodeError },
    CommandDone { ticket: u64, t_us: u64, result: Result<(), String> },
}

impl Output {
    pub fn trace_record(&self) -> Option<TraceRecord> {
        match *self {
            Output::Sample(s) => Some(TraceRecord::Sample(s)),
            Output::Pir(p) => Some(TraceRecord::Pir(p)),
            Output::Actuation(a) => Some(TraceRecord::Act(a)),
            Output::Truth(t) => Some(TraceRecord::Truth(t)),
            _ => None,
        }
    }
}

/// Cloneable sender for commands from other threads.
#[derive(Clone)]
pub struct CommandSender {
    tx: Sender<(u64, EngineCommand)>,
    tickets: Arc<std::sync::atomic::AtomicU64>,
}

impl CommandSender {
    /// Queues a command; its [`Output::CommandDone`] carries the ticket.
    pub fn send(&self, cmd: EngineCommand) -> u64 {
        let ticket = self.tickets.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        let _ = self.tx.send((ticket, cmd));
        ticket
    }
}

// walker-update < sample-tick < radio-delivery < node-timer < client-command
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
#[repr(u8)]
pub enum EventKind {
    WalkerUpdate = 0,
    SampleTick = 1,
    RadioDelivery = 2,
    NodeTimer = 3,
    ClientCommand = 4,
}

enum Body {
    Frame { k: u64 },
    Tick { node: NodeId },
    Delivery { to: NodeId, msg: Arc<NodeMsg> },
    Timer { node: NodeId, timer_id: u32 },
    Command { ticket: u64, cmd: EngineCommand },
}

struct Scheduled {
    t_us: u64,
    kind: EventKind,
    seq: u64,
    body: Body,
}

impl Scheduled {
    fn key(&self) -> (u64, EventKind, u64) {
        (self.t_us, self.kind, self.seq)
    }
}

impl PartialEq for Scheduled {
    fn eq(&self, o: &Self) -> bool {
        self.key() == o.key()
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
        Some(self.cmp(o))
    }
}
impl Ord for Scheduled {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, o: &Self) -> Ordering {
        o.key().cmp(&self.key())
    }
}

struct ReplaySource {
    samples: HashMap<u64, Vec<AdcSample>>,
    pirs: HashMap<u64, Vec<PirEvent>>,
    truth: HashMap<u64, Vec<TruthRecord>>,
}

enum Source {
    Live { models: Vec<SensorModel>, noise: Vec<ChaCha8Rng> },
    Replay(ReplaySource),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EngineStats {
    pub scheduled: u64,
    pub processed: u64,
    pub samples: u64,
}

pub struct Engine {
    topo: Arc<FloorTopology>,
    radio: RadioConfig,
    cfg: SimConfig,
    header: TraceHeader,
    source: Source,
    radio_rng: ChaCha8Rng,
    walkers: BTreeMap<u32, Walker>,
    nodes: Vec<NodeRuntime>,
    queue: BinaryHeap<Scheduled>,
    seq: u64,
    now_us: u64,
    stats: EngineStats,
    forces: Vec<f64>,
    latest: Vec<Option<u16>>,
    pir_state: Vec<bool>,
    pending_samples: Vec<Vec<AdcSample>>,
    pending_pir: Vec<Option<PirEvent>>,
    out: Vec<Output>,
    cmd_rx: Receiver<(u64, EngineCommand)>,
    cmd_sender: CommandSender,
}

impl Engine {
    /// A live simulation of `scenario` on `topo`.
    pub fn new(
        topo: Arc<FloorTopology>,
        radio: RadioConfig,
        scenario: &Scenario,
        cfg: SimConfig,
        algorithm: AlgorithmFactory,
    ) -> Result<Engine, EngineError> {
        let models = scenario.sensor_models(topo.sensors.len(), cfg.seed)?;
        Self::with_models(topo, radio, &scenario.walkers, models, cfg, algorithm)
    }

    /// A live simulation with explicit sensor models.
    pub fn with_models(
        topo: Arc<FloorTopology>,
        radio: RadioConfig,
        walkers: &[Walker],
        models: Vec<SensorModel>,
        cfg: SimConfig,
        algorithm: AlgorithmFactory,
    ) -> Result<Engine, EngineError> {
        cfg.validate()?;
        if models.len() != topo.sensors.len() {
            return Err(EngineError::Config(format!(
                "{} sensor models for {} sensors",
                models.len(),
                topo.sensors.len()
            )));
        }
        let mut header = TraceHeader::for_topology(&topo, cfg.sample_rate_hz, cfg.seed, physics::models_digest(&models));
        header.duration_us = cfg.duration_us;
        let noise = (0..topo.sensors.len()).map(|i| rng::sensor_stream(cfg.seed, i)).collect();
        let mut e = Self::build(topo, radio, cfg, header, Source::Live { models, noise }, algorithm)?;
        for w in walkers {
            w.validate().map_err(|err| EngineError::Scenario(ScenarioError::Invalid(err.to_string())))?;
            if e.walkers.insert(w.id, w.clone()).is_some() {
                return Err(ScenarioError::DuplicateWalker(w.id).into());
            }
        }
        Ok(e)
    }

    /// Drives `algorithm` from a recorded trace instead of the physics.
    /// Sample, PIR and truth records are re-emitted exactly as recorded.
    pub fn replay(
        topo: Arc<FloorTopology>,
        radio: RadioConfig,
        trace: &Trace,
        clock_skew_us: Vec<i64>,
        algorithm: AlgorithmFactory,
    ) -> Result<Engine, EngineError> {
        trace.validate(&topo)?;
        let h = &trace.header;
        let mut src = ReplaySource {
            samples: HashMap::new(),
            pirs: HashMap::new(),
            truth: HashMap::new(),
        };
        let mut last_t = h.start_t_us;
        for r in &trace.records {
            last_t = last_t.max(r.t_us());
            match *r {
                TraceRecord::Sample(s) => src.samples.entry(s.t_us).or_default().push(s),
                TraceRecord::Pir(p) => src.pirs.entry(p.t_us).or_default().push(p),
                TraceRecord::Truth(t) => src.truth.entry(t.t_us).or_default().push(t),
                TraceRecord::Act(_) => {}
            }
        }
        let rate = h.rate_hz.max(1) as u128;
        let duration = h.duration_us.unwrap_or_else(|| {
            // smallest duration whose tick grid covers the last record
            let ticks = last_t as u128 * rate / 1_000_000 + 1;
            ((ticks * 1_000_000).div_ceil(rate)) as u64
        });
        let cfg = SimConfig {
            sample_rate_hz: h.rate_hz,
            duration_us: Some(duration),
            seed: h.seed,
            clock_skew_us,
            ..SimConfig::default()
        };
        Self::build(topo, radio, cfg, h.clone(), Source::Replay(src), algorithm)
    }

    fn build(
        topo: Arc<FloorTopology>,
        radio: RadioConfig,
        cfg: SimConfig,
        header: TraceHeader,
        source: Source,
        algorithm: AlgorithmFactory,
    ) -> Result<Engine, EngineError> {
        cfg.validate()?;
        radio.validate().map_err(EngineError::Config)?;
        let nodes = topo
            .nodes
            .iter()
            .map(|n| NodeRuntime::new(NodeContext::new(topo.clone(), n.id), algorithm(n.id)))
            .collect();
        let (tx, cmd_rx) = mpsc::channel();
        let n_sensors = topo.sensors.len();
        let n_nodes = topo.nodes.len();
        let mut e = Engine {
            radio_rng: rng::stream(cfg.seed, radio.stream),
            radio,
            header,
            source,
            walkers: BTreeMap::new(),
            nodes,
            queue: BinaryHeap::new(),
            seq: 0,
            now_us: 0,
            stats: EngineStats::default(),
            forces: vec![0.0; n_sensors],
            latest: vec![None; n_sensors],
            pir_state: vec![false; topo.pirs.len()],
            pending_samples: vec![Vec::new(); n_nodes],
            pending_pir: vec![None; n_nodes],
            out: Vec::new(),
            cmd_rx,
            cmd_sender: CommandSender {
                tx,
                tickets: Arc::new(std::sync::atomic::AtomicU64::new(1)),
            },
            topo,
            cfg,
        };
        if e.cfg.tick_count() != Some(0) {
            e.schedule(0, EventKind::WalkerUpdate, Body::Frame { k: 0 });
        }
        for i in 0..n_nodes {
            e.dispatch(NodeId(i as u32), NodeEvent::Init);
        }
        Ok(e)
    }

    pub fn topology(&self) -> &Arc<FloorTopology> {
        &self.topo
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn radio(&self) -> &RadioConfig {
        &self.radio
    }

    /// Header for recording this run as a trace.
    pub fn trace_header(&self) -> &TraceHeader {
        &self.header
    }

    pub fn now_us(&self) -> u64 {
        self.now_us
    }

    pub fn stats(&self) -> EngineStats {
        self.stats
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn next_event_us(&self) -> Option<u64> {
        self.queue.peek().map(|e| e.t_us)
    }

    /// Sensor models of a live run; empty for replays.
    pub fn models(&self) -> &[SensorModel] {
        match &self.source {
            Source::Live { models, .. } => models,
            Source::Replay(_) => &[],
        }
    }

    pub fn walkers(&self) -> impl Iterator<Item = &Walker> {
        self.walkers.values()
    }

    pub fn is_replay(&self) -> bool {
        matches!(self.source, Source::Replay(_))
    }

    /// Most recent reading of every sensor.
    pub fn latest_values(&self) -> &[Option<u16>] {
        &self.latest
    }

    pub fn pir_states(&self) -> &[bool] {
        &self.pir_state
    }

    pub fn command_sender(&self) -> CommandSender {
        self.cmd_sender.clone()
    }

    /// Queues a command at the current instant.
    pub fn submit(&mut self, cmd: EngineCommand) -> u64 {
        let ticket = self.cmd_sender.send(cmd);
        self.pull_commands();
        ticket
    }

    pub fn drain_output(&mut self) -> Vec<Output> {
        std::mem::take(&mut self.out)
    }

    fn schedule(&mut self, t_us: u64, kind: EventKind, body: Body) {
        self.seq += 1;
        self.stats.scheduled += 1;
        self.queue.push(Scheduled {
            t_us,
            kind,
            seq: self.seq,
            body,
        });
    }

    fn pull_commands(&mut self) {
        while let Ok((ticket, cmd)) = self.cmd_rx.try_recv() {
            self.schedule(self.now_us, EventKind::ClientCommand, Body::Command { ticket, cmd });
        }
    }

    /// Processes the earliest pending event; returns its time.
    pub fn step(&mut self) -> Option<u64> {
        self.pull_commands();
        let ev = self.queue.pop()?;
        debug_assert!(ev.t_us >= self.now_us);
        self.now_us = ev.t_us;
        self.stats.processed += 1;
        match ev.body {
            Body::Frame { k } => self.frame(k),
            Body::Tick { node } => self.tick(node),
            Body::Delivery { to, msg } => self.dispatch(to, NodeEvent::Message(&msg)),
            Body::Timer { node, timer_id } => self.dispatch(node, NodeEvent::Timer(timer_id)),
            Body::Command { ticket, cmd } => {
                let result = self.apply(cmd);
                self.out.push(Output::CommandDone {
                    ticket,
                    t_us: self.now_us,
                    result,
                });
            }
        }
        Some(self.now_us)
    }

    /// Processes every event strictly before `t_us`, then parks the clock
    /// at `t_us` (or at the end of the run, if earlier).
    pub fn run_until(&mut self, t_us: u64) {
        let stop = self.cfg.duration_us.map_or(t_us, |d| d.min(t_us));
        loop {
            self.pull_commands();
            match self.queue.peek() {
                Some(e) if e.t_us < stop => {
                    self.step();
                }
                _ => break,
            }
        }
        self.now_us = self.now_us.max(stop);
    }

    /// Processes every event at or before the current instant.
    pub fn settle(&mut self) {
        loop {
            self.pull_commands();
            match self.queue.peek() {
                Some(e) if e.t_us <= self.now_us => {
                    self.step();
                }
                _ => break,
            }
        }
    }

    pub fn is_finished(&self) -> bool {
        match self.cfg.duration_us {
            Some(d) => self.now_us >= d && self.queue.peek().is_none_or(|e| e.t_us >= d),
            None => false,
        }
    }

    /// Runs a bounded simulation to completion.
    pub fn run(mut self) -> RunOutput {
        let end = self.cfg.duration_us.expect("run() needs a bounded duration");
        self.run_until(end);
        RunOutput {
            outputs: self.drain_output(),
            header: self.header.clone(),
            stats: self.stats,
            frame_times: (0..self.cfg.tick_count().unwrap_or(0)).map(|k| self.cfg.tick_time_us(k)).collect(),
        }
    }

    fn local_time(&self, node: NodeId) -> u64 {
        (self.now_us as i64 + self.cfg.skew(node)).max(0) as u64
    }

    fn frame(&mut self, k: u64) {
        let t = self.now_us;
        let t_s = t as f64 * 1e-6;
        match &self.source {
            Source::Live { .. } => {
                self.forces.iter_mut().for_each(|f| *f = 0.0);
                physics::add_world_forces(&self.topo, self.walkers.values(), t_s, &mut self.forces);
                for w in self.walkers.values() {
                    if let Some(p) = w.position(t_s) {
                        self.out.push(Output::Truth(TruthRecord {
                            t_us: t,
                            walker: w.id,
                            x_mm: (p.x * 1000.0).round() as i64,
                            y_mm: (p.y * 1000.0).round() as i64,
                        }));
                    }
                }
                for z in &self.topo.pirs {
                    let active = physics::pir_active(&z.zone, self.walkers.values(), t_s, self.cfg.pir_speed_threshold_mps);
                    if active != self.pir_state[z.id.index()] {
                        self.pending_pir[z.node.index()] = Some(PirEvent {
                            t_us: t,
                            pir: z.id,
                            active,
                        });
                    }
                }
            }
            Source::Replay(src) => {
                if let Some(ts) = src.truth.get(&t) {
                    self.out.extend(ts.iter().map(|r| Output::Truth(*r)));
                }
                if let Some(ss) = src.samples.get(&t) {
                    for s in ss {
                        let n = self.topo.sensors[s.sensor.index()].node;
                        self.pending_samples[n.index()].push(*s);
                    }
                }
                if let Some(ps) = src.pirs.get(&t) {
                    for p in ps {
                        let n = self.topo.pirs[p.pir.index()].node;
                        self.pending_pir[n.index()] = Some(*p);
                    }
                }
            }
        }
        for i in 0..self.nodes.len() {
            self.schedule(t, EventKind::SampleTick, Body::Tick { node: NodeId(i as u32) });
        }
        if self.cfg.tick_count().is_none_or(|n| k + 1 < n) {
            let next = self.cfg.tick_time_us(k + 1);
            self.schedule(next, EventKind::WalkerUpdate, Body::Frame { k: k + 1 });
        }
    }

    fn tick(&mut self, node: NodeId) {
        let t = self.now_us;
        let mut samples = std::mem::take(&mut self.pending_samples[node.index()]);
        if let Source::Live { models, noise } = &mut self.source {
            for &s in &self.topo.nodes[node.index()].sensors {
                let i = s.index();
                samples.push(AdcSample {
                    t_us: t,
                    sensor: s,
                    value: physics::transduce(&models[i], self.forces[i], &mut noise[i]),
                });
            }
        }
        for s in &samples {
            self.stats.samples += 1;
            self.latest[s.sensor.index()] = Some(s.value);
            self.out.push(Output::Sample(*s));
            let local_idx = self.nodes[node.index()].ctx.sensors.iter().position(|x| *x == s.sensor);
            if let Some(idx) = local_idx {
                self.dispatch(node, NodeEvent::Sample(idx, s));
            }
        }
        samples.clear();
        self.pending_samples[node.index()] = samples;
        if let Some(p) = self.pending_pir[node.index()].take() {
            self.pir_state[p.pir.index()] = p.active;
            self.out.push(Output::Pir(p));
            self.dispatch(node, NodeEvent::Pir(&p));
        }
    }

    fn dispatch(&mut self, node: NodeId, event: NodeEvent<'_>) {
        let local = self.local_time(node);
        let skew = self.cfg.skew(node);
        let d = self.nodes[node.index()].dispatch(local, event);
        let t = self.now_us;
        for error in d.errors {
            self.out.push(Output::Error { t_us: t, error });
        }
        for c in d.commands {
            match c {
                NodeCommand::Send { dst, payload } => {
                    let msg = NodeMsg {
                        src: node,
                        dst,
                        payload,
                        sent_t_us: t,
                    };
                    let outcome = radio::send(&self.radio, &self.topo, &msg, &mut self.radio_rng)
                        .expect("sender is a known node");
                    if let Some(dst) = outcome.routing_error {
                        self.out.push(Output::Error {
                            t_us: t,
                            error: NodeError::Routing(node, dst),
                        });
                    }
                    let msg = Arc::new(msg);
                    for (to, at) in outcome.deliveries {
                        self.schedule(at, EventKind::RadioDelivery, Body::Delivery { to, msg: msg.clone() });
                    }
                }
                NodeCommand::SetTimer { timer_id, delay_us } => {
                    self.schedule(t + delay_us, EventKind::NodeTimer, Body::Timer { node, timer_id });
                }
                NodeCommand::Actuate(kind) => self.out.push(Output::Actuation(Actuation { t_us: t, node, kind })),
                NodeCommand::Report(mut ev) => {
                    // observation times are node-local; report them globally
                    ev.t_us = (ev.t_us as i64 - skew).max(0) as u64;
                    self.out.push(Output::Track(ev));
                }
            }
        }
    }

    fn apply(&mut self, cmd: EngineCommand) -> Result<(), String> {
        match cmd {
            EngineCommand::SpawnWalker(w) => {
                if self.is_replay() {
                    return Err("walkers cannot be changed during a replay".into());
                }
                w.validate().map_err(|e| e.to_string())?;
                if self.walkers.contains_key(&w.id) {
                    return Err(format!("walker {} already exists", w.id));
                }
                self.walkers.insert(w.id, w);
                Ok(())
            }
            EngineCommand::MoveWalker { id, path } => {
                let w = self.walkers.get_mut(&id).ok_or_else(|| format!("unknown walker {id}"))?;
                let moved = Walker { path, ..w.clone() };
                moved.validate().map_err(|e| e.to_string())?;
                *w = moved;
                Ok(())
            }
            EngineCommand::RemoveWalker(id) => self
                .walkers
                .remove(&id)
                .map(|_| ())
                .ok_or_else(|| format!("unknown walker {id}")),
            EngineCommand::SetAlgorithm(factory) => {
                for n in &mut self.nodes {
                    let id = n.ctx.node;
                    n.replace_algorithm(factory(id));
                }
                for i in 0..self.nodes.len() {
                    self.dispatch(NodeId(i as u32), NodeEvent::Init);
                }
                Ok(())
            }
            EngineCommand::Actuate { node, kind } => {
                let n = self.topo.node(node).ok_or_else(|| format!("unknown node {node}"))?;
                if n.actuator.is_none() {
                    return Err(NodeError::NoActuator(node).to_string());
                }
                kind.validate()?;
                self.out.push(Output::Actuation(Actuation {
                    t_us: self.now_us,
                    node,
                    kind,
                }));
                Ok(())
            }
        }
    }

    /// Ground-truth forces of the current frame (live runs only).
    pub fn current_forces(&self) -> Option<&[f64]> {
        match self.source {
            Source::Live { .. } => Some(&self.forces),
            Source::Replay(_) => None,
        }
    }

    pub fn pir_of(&self, pir: PirId) -> bool {
        self.pir_state[pir.index()]
    }
}

/// Everything a bounded run emitted, in processing order.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub outputs: Vec<Output>,
    pub header: TraceHeader,
    pub stats: EngineStats,
    pub frame_times: Vec<u64>,
}

impl RunOutput {
    pub fn samples(&self) -> impl Iterator<Item = &AdcSample> {
        self.outputs.iter().filter_map(|o| match o {
            Output::Sample(s) => Some(s),
            _ => None,
        })
    }

    pub fn actuations(&self) -> impl Iterator<Item = &Actuation> {
        self.outputs.iter().filter_map(|o| match o {
            Output::Actuation(a) => Some(a),
            _ => None,
        })
    }

    pub fn tracks(&self) -> impl Iterator<Item = &TrackEvent> {
        self.outputs.iter().filter_map(|o| match o {
            Output::Track(t) => Some(t),
            _ => None,
        })
    }

    pub fn errors(&self) -> impl Iterator<Item = &NodeError> {
        self.outputs.iter().filter_map(|o| match o {
            Output::Error { error, .. } => Some(error),
            _ => None,
        })
    }

    pub fn trace_records(&self, with_truth: bool) -> Vec<TraceRecord> {
        self.outputs
            .iter()
            .filter_map(Output::trace_record)
            .filter(|r| with_truth || !matches!(r, TraceRecord::Truth(_)))
            .collect()
    }

    pub fn to_trace(&self, with_truth: bool) -> Trace {
        Trace {
            header: self.header.clone(),
            records: self.trace_records(with_truth),
        }
    }

    /// One truth frame per sample tick.
    pub fn truth_frames(&self) -> Vec<TruthFrame> {
        truth_frames(&self.frame_times, self.outputs.iter().filter_map(|o| match o {
            Output::Truth(t) => Some(t),
            _ => None,
        }))
    }

    /// SHA-256 over the serialized sample, PIR, actuation and track streams.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for o in &self.outputs {
            match o {
                Output::Sample(_) | Output::Pir(_) | Output::Actuation(_) => {
                    h.update(o.trace_record().expect("trace record").serialize().as_bytes());
                    h.update(b"\n");
                }
                Output::Track(t) => h.update(track_line(t).as_bytes()),
                _ => {}
            }
        }
        hex::encode(h.finalize())
    }
}

/// Bit-exact text form of a track event.
pub fn track_line(t: &TrackEvent) -> String {
    format!(
        "K {} {} {} {:016x} {:016x} {:016x} {}\n",
        t.t_us,
        t.track_id,
        t.node.map_or(-1, |n| n.0 as i64),
        t.pos.x.to_bits(),
        t.pos.y.to_bits(),
        t.strength.to_bits(),
        t.state.as_str()
    )
}

/// Groups truth records onto the given frame instants.
pub fn truth_frames<'a>(frame_times: &[u64], truth: impl IntoIterator<Item = &'a TruthRecord>) -> Vec<TruthFrame> {
    let mut by_t: BTreeMap<u64, Vec<(u32, crate::geometry::Point)>> =
        frame_times.iter().map(|t| (*t, Vec::new())).collect();
    for r in truth {
        by_t.entry(r.t_us).or_default().push((r.walker, r.pos()));
    }
    by_t.into_iter().map(|(t_us, walkers)| TruthFrame { t_us, walkers }).collect()
}
