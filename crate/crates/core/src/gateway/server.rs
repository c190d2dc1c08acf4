//! TCP front end. One acceptor thread, a reader and a writer thread per
//! connection, and a hub thread that owns the engine. Readers forward parsed
//! lines to the hub over a channel; the hub is the only place commands are
//! applied, so they take effect in arrival order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use crate::algorithms::{build_algorithm, parse_params};
use crate::engine::{truth_frames, Engine, EngineCommand, Output};
use crate::ids::NodeId;
use crate::node::CalibrationParams;
use crate::physics::Waypoint;
use crate::trace::{Trace, TraceRecord, TraceWriter, TruthRecord};
use crate::tracking::{evaluate, TrackEvent};

use super::monitor::{DeltaCutter, FloorMonitor};
use super::protocol::{
    parse_client, ClientMsg, EngineCounters, ErrorCode, FloorSnapshot, Role, ServerMsg, Topic,
    WalkerView, WireActuation, MAX_LINE, PROTOCOL_VERSION,
};
use super::queue::{Outbound, SessionQueue};

pub const DEFAULT_PORT: u16 = 9910;

#[derive(Debug, Clone)]
pub struct ServeOptions {
    /// Default floor delta rate.
    pub floor_rate_hz: f64,
    /// Simulated seconds per wall second; `None` runs as fast as possible.
    pub speed: Option<f64>,
    pub start_paused: bool,
    /// Per-session outbound queue length before floor deltas are shed.
    pub queue_capacity: usize,
    pub metrics_period_us: u64,
    /// Baseline settings of the server-side floor view.
    pub calibration: CalibrationParams,
    /// Record the whole run from the start.
    pub record: Option<(PathBuf, bool)>,
}

impl Default for ServeOptions {
    fn default() -> Self {
        ServeOptions {
            floor_rate_hz: 10.0,
            speed: Some(1.0),
            start_paused: false,
            queue_capacity: 256,
            metrics_period_us: 1_000_000,
            calibration: CalibrationParams::default(),
            record: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ServerStats {
    pub sessions: usize,
    pub samples: u64,
    pub sim_us: u64,
    /// Lines shed across all sessions.
    pub dropped: u64,
    /// Wall time spent with the clock running.
    pub running_wall: Duration,
    pub finished: bool,
}

#[derive(Default)]
struct Shared {
    sessions: AtomicUsize,
    samples: AtomicU64,
    sim_us: AtomicU64,
    dropped: AtomicU64,
    running_ns: AtomicU64,
    finished: Mutex<bool>,
    finished_cv: Condvar,
}

enum HubMsg {
    Join {
        id: u64,
        stream: TcpStream,
    },
    Line {
        id: u64,
        msg: ClientMsg,
    },
    Malformed {
        id: u64,
        req: Option<u64>,
        message: String,
    },
    Leave {
        id: u64,
    },
    Shutdown,
}

pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    tx: Sender<HubMsg>,
    stop: Arc<AtomicBool>,
    acceptor: Option<JoinHandle<()>>,
    hub: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> ServerStats {
        let s = &self.shared;
        ServerStats {
            sessions: s.sessions.load(Ordering::Relaxed),
            samples: s.samples.load(Ordering::Relaxed),
            sim_us: s.sim_us.load(Ordering::Relaxed),
            dropped: s.dropped.load(Ordering::Relaxed),
            running_wall: Duration::from_nanos(s.running_ns.load(Ordering::Relaxed)),
            finished: *s.finished.lock().expect("stats lock"),
        }
    }

    /// Blocks until a bounded run has finished, or `timeout` passes.
    /// Returns whether it finished.
    pub fn wait_finished(&self, timeout: Option<Duration>) -> bool {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut done = self.shared.finished.lock().expect("stats lock");
        while !*done {
            let wait = match deadline {
                Some(d) => match d.checked_duration_since(Instant::now()) {
                    Some(w) => w,
                    None => return false,
                },
                None => Duration::from_secs(3600),
            };
            done = self.shared.finished_cv.wait_timeout(done, wait).expect("stats lock").0;
        }
        true
    }

    pub fn shutdown(mut self) {
        self.stop_threads();
    }

    fn stop_threads(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.tx.send(HubMsg::Shutdown);
        // wake the blocking accept
        let mut wake = self.addr;
        if wake.ip().is_unspecified() {
            wake.set_ip(if wake.is_ipv4() {
                std::net::Ipv4Addr::LOCALHOST.into()
            } else {
                std::net::Ipv6Addr::LOCALHOST.into()
            });
        }
        let _ = TcpStream::connect_timeout(&wake, Duration::from_secs(1));
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        if let Some(h) = self.hub.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.hub.is_some() {
            self.stop_threads();
        }
    }
}

/// Binds `addr` and serves `engine` until the handle is shut down.
pub fn serve<A: ToSocketAddrs>(engine: Engine, addr: A, opts: ServeOptions) -> io::Result<ServerHandle> {
    if !(opts.floor_rate_hz > 0.0) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "floor rate must be positive"));
    }
    if opts.speed.is_some_and(|s| !(s > 0.0)) {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "speed must be positive"));
    }
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let shared = Arc::new(Shared::default());
    let (tx, rx) = mpsc::channel();
    let stop = Arc::new(AtomicBool::new(false));

    let mut hub = Hub::new(engine, opts, rx, shared.clone()).map_err(|e| io::Error::other(e))?;
    let hub = thread::Builder::new()
        .name("gateway-hub".into())
        .spawn(move || hub.run())?;

    let acceptor = {
        let tx = tx.clone();
        let stop = stop.clone();
        thread::Builder::new()
            .name("gateway-accept".into())
            .spawn(move || accept_loop(listener, tx, stop))?
    };
    info!("gateway listening on {local}");
    Ok(ServerHandle {
        addr: local,
        shared,
        tx,
        stop,
        acceptor: Some(acceptor),
        hub: Some(hub),
    })
}

fn accept_loop(listener: TcpListener, tx: Sender<HubMsg>, stop: Arc<AtomicBool>) {
    let mut next_id = 1u64;
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                warn!("accept failed: {e}");
                continue;
            }
        };
        let id = next_id;
        next_id += 1;
        if let Err(e) = start_session(id, stream, &tx) {
            warn!("session {id} failed to start: {e}");
        }
    }
}

fn start_session(id: u64, stream: TcpStream, tx: &Sender<HubMsg>) -> io::Result<()> {
    let _ = stream.set_nodelay(true);
    debug!("session {id} from {:?}", stream.peer_addr());
    let read_stream = stream.try_clone()?;
    // Join goes first so the hub knows the session before any of its lines
    let _ = tx.send(HubMsg::Join { id, stream });
    let tx = tx.clone();
    thread::Builder::new()
        .name(format!("gateway-r{id}"))
        .spawn(move || reader_loop(id, read_stream, tx))?;
    Ok(())
}

fn reader_loop(id: u64, stream: TcpStream, tx: Sender<HubMsg>) {
    let mut reader = BufReader::new(stream);
    let mut buf = Vec::new();
    loop {
        buf.clear();
        let n = match (&mut reader).take(MAX_LINE as u64 + 1).read_until(b'\n', &mut buf) {
            Ok(n) => n,
            Err(_) => break,
        };
        if n == 0 {
            break;
        }
        if buf.last() != Some(&b'\n') {
            if buf.len() > MAX_LINE {
                let _ = tx.send(HubMsg::Malformed {
                    id,
                    req: None,
                    message: format!("line longer than {MAX_LINE} bytes"),
                });
                break;
            }
            // final line without a newline: still a frame
        }
        let Ok(text) = std::str::from_utf8(&buf) else {
            let _ = tx.send(HubMsg::Malformed {
                id,
                req: None,
                message: "line is not UTF-8".into(),
            });
            continue;
        };
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        let msg = match parse_client(text) {
            Ok(msg) => HubMsg::Line { id, msg },
            Err((req, message)) => HubMsg::Malformed { id, req, message },
        };
        if tx.send(msg).is_err() {
            return;
        }
    }
    let _ = tx.send(HubMsg::Leave { id });
}

fn writer_loop(queue: Arc<SessionQueue>, stream: TcpStream) {
    let mut w = BufWriter::new(&stream);
    loop {
        match queue.pop(Duration::from_millis(200)) {
            Some(Some(o)) => {
                if w.write_all(o.line.as_bytes()).is_err() {
                    break;
                }
                if queue.is_empty() && w.flush().is_err() {
                    break;
                }
            }
            Some(None) => {
                if w.flush().is_err() {
                    break;
                }
            }
            None => {
                let _ = w.flush();
                break;
            }
        }
    }
    queue.close();
    drop(w);
    let _ = stream.shutdown(Shutdown::Both);
}

struct Session {
    queue: Arc<SessionQueue>,
    stream: TcpStream,
    hello: bool,
    role: Role,
    topics: BTreeSet<Topic>,
    floor_period_us: Option<u64>,
}

struct Recorder {
    writer: TraceWriter,
    truth: bool,
}

/// Everything needed to score tracks at the end of a bounded run.
#[derive(Default)]
struct EvalLog {
    tracks: Vec<TrackEvent>,
    truth: Vec<TruthRecord>,
}

struct Hub {
    engine: Engine,
    opts: ServeOptions,
    rx: Receiver<HubMsg>,
    shared: Arc<Shared>,
    monitor: FloorMonitor,
    classes: BTreeMap<u64, DeltaCutter>,
    pir_cutter: DeltaCutter,
    default_period_us: u64,
    sessions: BTreeMap<u64, Session>,
    controller: Option<u64>,
    paused: bool,
    anchor: (Instant, u64),
    recorder: Option<Recorder>,
    pending_tracks: Vec<TrackEvent>,
    pending_acks: HashMap<u64, (u64, u64)>,
    eval: Option<EvalLog>,
    next_metrics_us: u64,
    final_sent: bool,
    shutting_down: bool,
    /// Drops counted by sessions that have left.
    retired_dropped: u64,
}

fn period_us(rate_hz: f64) -> u64 {
    ((1e6 / rate_hz).round() as u64).max(1)
}

impl Hub {
    fn new(engine: Engine, opts: ServeOptions, rx: Receiver<HubMsg>, shared: Arc<Shared>) -> Result<Self, String> {
        let topo = engine.topology().clone();
        let monitor = FloorMonitor::new(topo.sensors.len(), topo.pirs.len(), opts.calibration);
        let default_period_us = period_us(opts.floor_rate_hz);
        let now = engine.now_us();
        let mut hub = Hub {
            pir_cutter: DeltaCutter::new(default_period_us, now, &monitor),
            eval: engine.config().duration_us.map(|_| EvalLog::default()),
            next_metrics_us: now + opts.metrics_period_us.max(1),
            paused: opts.start_paused,
            anchor: (Instant::now(), now),
            monitor,
            classes: BTreeMap::new(),
            default_period_us,
            sessions: BTreeMap::new(),
            controller: None,
            recorder: None,
            pending_tracks: Vec::new(),
            pending_acks: HashMap::new(),
            final_sent: false,
            shutting_down: false,
            retired_dropped: 0,
            engine,
            opts,
            rx,
            shared,
        };
        if let Some((path, truth)) = hub.opts.record.clone() {
            hub.start_recording(path, truth, true)?;
        }
        Ok(hub)
    }

    fn run(&mut self) {
        while !self.shutting_down {
            let running = !self.paused && !self.engine.is_finished();
            if !running {
                self.finish_if_done();
                match self.rx.recv_timeout(Duration::from_millis(100)) {
                    Ok(m) => self.handle(m),
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                }
                self.drain_inbox();
                continue;
            }
            let started = Instant::now();
            let target = match self.opts.speed {
                None => self.engine.now_us().saturating_add(100_000),
                Some(speed) => {
                    let (wall, sim) = self.anchor;
                    sim + (wall.elapsed().as_secs_f64() * speed * 1e6) as u64
                }
            };
            if target > self.engine.now_us() {
                self.advance(target);
            }
            self.shared
                .running_ns
                .fetch_add(started.elapsed().as_nanos() as u64, Ordering::Relaxed);
            self.finish_if_done();
            match self.opts.speed {
                None => self.drain_inbox(),
                Some(_) => match self.rx.recv_timeout(Duration::from_millis(5)) {
                    Ok(m) => {
                        self.handle(m);
                        self.drain_inbox();
                    }
                    Err(RecvTimeoutError::Timeout) => {}
                    Err(RecvTimeoutError::Disconnected) => break,
                },
            }
        }
        self.stop_all();
    }

    fn drain_inbox(&mut self) {
        while let Ok(m) = self.rx.try_recv() {
            self.handle(m);
            if self.shutting_down {
                return;
            }
        }
    }

    /// Runs the engine to `target`, cutting deltas and metrics on their grids.
    fn advance(&mut self, target: u64) {
        loop {
            let mut next = target.min(self.next_metrics_us).min(self.pir_cutter.next_us);
            for c in self.classes.values() {
                next = next.min(c.next_us);
            }
            self.engine.run_until(next);
            let outs = self.engine.drain_output();
            self.absorb(outs);
            let now = self.engine.now_us();
            self.emit_due(now);
            self.flush_tracks();
            self.shared.sim_us.store(now, Ordering::Relaxed);
            if now >= target || self.engine.is_finished() {
                break;
            }
        }
    }

    fn absorb(&mut self, outs: Vec<Output>) {
        // command answers go out before the effects they caused
        for o in &outs {
            if let Output::CommandDone { ticket, t_us, result } = o {
                if let Some((sid, req)) = self.pending_acks.remove(ticket) {
                    let msg = match result {
                        Ok(()) => ServerMsg::Ack {
                            req,
                            t_us: *t_us,
                            seq: Some(*ticket),
                            session: None,
                            role: None,
                        },
                        Err(e) => ServerMsg::error(Some(req), ErrorCode::Rejected, e.clone()),
                    };
                    self.send_to(sid, &msg);
                }
            }
        }
        let mut samples = 0;
        for o in outs {
            if let Some(rec) = self.recorder.as_mut() {
                if let Some(r) = o.trace_record() {
                    if rec.truth || !matches!(r, TraceRecord::Truth(_)) {
                        if let Err(e) = rec.writer.write(&r) {
                            warn!("recording stopped: {e}");
                            self.recorder = None;
                        }
                    }
                }
            }
            match o {
                Output::Sample(s) => {
                    samples += 1;
                    self.monitor.on_sample(&s);
                }
                Output::Pir(p) => self.monitor.on_pir(&p),
                Output::Actuation(a) => {
                    let line: Arc<str> = ServerMsg::Actuation {
                        t_us: a.t_us,
                        node: a.node.0,
                        action: WireActuation::from_kind(a.kind),
                    }
                    .to_line()
                    .into();
                    self.broadcast(Topic::Actuations, &line, false);
                }
                Output::Truth(t) => {
                    if let Some(ev) = self.eval.as_mut() {
                        ev.truth.push(t);
                    }
                }
                Output::Track(t) => {
                    self.monitor.on_track(&t);
                    self.pending_tracks.push(t);
                    if let Some(ev) = self.eval.as_mut() {
                        ev.tracks.push(t);
                    }
                }
                Output::Error { t_us, error } => warn!("node error at {t_us}: {error}"),
                Output::CommandDone { .. } => {}
            }
        }
        self.shared.samples.fetch_add(samples, Ordering::Relaxed);
    }

    fn emit_due(&mut self, now: u64) {
        let resync: Vec<u64> = self
            .sessions
            .iter()
            .filter(|(_, s)| (s.floor_period_us.is_some() || s.topics.contains(&Topic::Pir)) && s.queue.take_resync())
            .map(|(id, _)| *id)
            .collect();
        for id in resync {
            self.send_snapshot(id, None, true);
        }
        let periods: Vec<u64> = self.classes.keys().copied().collect();
        for p in periods {
            let c = self.classes.get_mut(&p).expect("class");
            if c.next_us > now {
                continue;
            }
            let (sensors, pir) = c.cut(&self.monitor);
            let line: Arc<str> = ServerMsg::StateDelta {
                seq: c.seq,
                t_us: now,
                sensors,
                pir,
            }
            .to_line()
            .into();
            // a long pause between cuts should not produce a burst
            if c.next_us <= now {
                c.next_us = (now / p + 1) * p;
            }
            for s in self.sessions.values() {
                if s.floor_period_us != Some(p) {
                    continue;
                }
                // deltas are useless to a session that still owes a snapshot
                if s.queue.needs_resync() {
                    s.queue.shed();
                } else {
                    s.queue.push(Outbound {
                        line: line.clone(),
                        droppable: true,
                    });
                }
            }
        }
        if self.pir_cutter.next_us <= now {
            let (_, pir) = self.pir_cutter.cut(&self.monitor);
            let p = self.pir_cutter.period_us;
            if self.pir_cutter.next_us <= now {
                self.pir_cutter.next_us = (now / p + 1) * p;
            }
            if !pir.is_empty() {
                let line: Arc<str> = ServerMsg::StateDelta {
                    seq: self.pir_cutter.seq,
                    t_us: now,
                    sensors: Vec::new(),
                    pir,
                }
                .to_line()
                .into();
                for s in self.sessions.values() {
                    if s.floor_period_us.is_none() && s.hello && s.topics.contains(&Topic::Pir) && !s.queue.needs_resync() {
                        s.queue.push(Outbound {
                            line: line.clone(),
                            droppable: true,
                        });
                    }
                }
            }
        }
        if self.next_metrics_us <= now {
            let p = self.opts.metrics_period_us.max(1);
            self.next_metrics_us = (now / p + 1) * p;
            let line: Arc<str> = self.metrics_msg(false).to_line().into();
            self.broadcast(Topic::Metrics, &line, false);
        }
        self.reap();
    }

    fn flush_tracks(&mut self) {
        if self.pending_tracks.is_empty() {
            return;
        }
        let events = std::mem::take(&mut self.pending_tracks);
        let line: Arc<str> = ServerMsg::Tracks {
            t_us: self.engine.now_us(),
            events,
        }
        .to_line()
        .into();
        self.broadcast(Topic::Tracks, &line, false);
    }

    fn metrics_msg(&self, is_final: bool) -> ServerMsg {
        let st = self.engine.stats();
        let tracking = if is_final {
            self.eval.as_ref().filter(|e| !e.truth.is_empty()).map(|e| {
                let cfg = self.engine.config();
                let times: Vec<u64> = (0..cfg.tick_count().unwrap_or(0)).map(|k| cfg.tick_time_us(k)).collect();
                evaluate(&e.tracks, &truth_frames(&times, &e.truth), self.opts.calibration.warmup_us)
            })
        } else {
            None
        };
        ServerMsg::Metrics {
            t_us: self.engine.now_us(),
            is_final,
            engine: EngineCounters {
                samples: st.samples,
                events: st.processed,
                active_tracks: self.monitor.live_tracks(),
            },
            tracking,
        }
    }

    fn finish_if_done(&mut self) {
        if self.final_sent || !self.engine.is_finished() {
            return;
        }
        self.final_sent = true;
        let outs = self.engine.drain_output();
        self.absorb(outs);
        let now = self.engine.now_us();
        // last cut at the end instant, whatever the grids say
        for c in self.classes.values_mut() {
            c.next_us = c.next_us.min(now);
        }
        self.pir_cutter.next_us = self.pir_cutter.next_us.min(now);
        self.next_metrics_us = u64::MAX;
        self.emit_due(now);
        self.flush_tracks();
        // the file is complete before anyone hears the run is over
        if let Some(rec) = self.recorder.take() {
            match rec.writer.finish() {
                Ok(p) => info!("trace written to {}", p.display()),
                Err(e) => warn!("trace not written: {e}"),
            }
        }
        let line: Arc<str> = self.metrics_msg(true).to_line().into();
        self.broadcast(Topic::Metrics, &line, false);
        self.shared.sim_us.store(now, Ordering::Relaxed);
        *self.shared.finished.lock().expect("stats lock") = true;
        self.shared.finished_cv.notify_all();
    }

    fn broadcast(&mut self, topic: Topic, line: &Arc<str>, droppable: bool) {
        for s in self.sessions.values() {
            if s.hello && s.topics.contains(&topic) {
                s.queue.push(Outbound {
                    line: line.clone(),
                    droppable,
                });
            }
        }
        self.reap();
    }

    fn send_to(&mut self, id: u64, msg: &ServerMsg) {
        if let Some(s) = self.sessions.get(&id) {
            s.queue.push(Outbound {
                line: msg.to_line().into(),
                droppable: false,
            });
        }
    }

    /// Drops sessions whose queue has closed.
    fn reap(&mut self) {
        let dead: Vec<u64> = self
            .sessions
            .iter()
            .filter(|(_, s)| s.queue.is_closed())
            .map(|(id, _)| *id)
            .collect();
        for id in dead {
            self.leave(id);
        }
        let live: u64 = self.sessions.values().map(|s| s.queue.dropped()).sum();
        self.shared.dropped.store(self.retired_dropped + live, Ordering::Relaxed);
    }

    fn leave(&mut self, id: u64) {
        if let Some(s) = self.sessions.remove(&id) {
            s.queue.close();
            let _ = s.stream.shutdown(Shutdown::Both);
            self.retired_dropped += s.queue.dropped();
            if self.controller == Some(id) {
                self.controller = None;
                info!("session {id} released the controller lease");
            }
            self.shared.sessions.store(self.sessions.len(), Ordering::Relaxed);
            debug!("session {id} left");
        }
    }

    fn stop_all(&mut self) {
        let ids: Vec<u64> = self.sessions.keys().copied().collect();
        for id in ids {
            if let Some(s) = self.sessions.get(&id) {
                // let the writer drain what is queued
                s.queue.close();
            }
            self.sessions.remove(&id);
        }
        if let Some(rec) = self.recorder.take() {
            let _ = rec.writer.finish();
        }
        self.shared.sessions.store(0, Ordering::Relaxed);
    }

    fn handle(&mut self, m: HubMsg) {
        match m {
            HubMsg::Join { id, stream } => {
                let queue = Arc::new(SessionQueue::new(self.opts.queue_capacity));
                let Ok(w_stream) = stream.try_clone() else {
                    return;
                };
                let q = queue.clone();
                let spawned = thread::Builder::new()
                    .name(format!("gateway-w{id}"))
                    .spawn(move || writer_loop(q, w_stream));
                if spawned.is_err() {
                    return;
                }
                self.sessions.insert(
                    id,
                    Session {
                        queue,
                        stream,
                        hello: false,
                        role: Role::Observer,
                        topics: BTreeSet::new(),
                        floor_period_us: None,
                    },
                );
                self.shared.sessions.store(self.sessions.len(), Ordering::Relaxed);
            }
            HubMsg::Line { id, msg } => self.command(id, msg),
            HubMsg::Malformed { id, req, message } => {
                self.send_to(id, &ServerMsg::error(req, ErrorCode::Malformed, message));
            }
            HubMsg::Leave { id } => self.leave(id),
            HubMsg::Shutdown => self.shutting_down = true,
        }
    }

    fn command(&mut self, id: u64, msg: ClientMsg) {
        let Some(session) = self.sessions.get(&id) else {
            return;
        };
        let req = msg.req();
        if let ClientMsg::Hello { version, role, .. } = msg {
            return self.hello(id, req, version, role);
        }
        if !session.hello {
            return self.send_to(id, &ServerMsg::error(Some(req), ErrorCode::HelloRequired, "send HELLO first"));
        }
        if msg.is_mutating() && self.controller != Some(id) {
            return self.send_to(
                id,
                &ServerMsg::error(Some(req), ErrorCode::PermissionDenied, "command needs the controller role"),
            );
        }
        let now_s = self.engine.now_us() as f64 * 1e-6;
        let shift = |path: Vec<Waypoint>, relative: bool| -> Vec<Waypoint> {
            if !relative {
                return path;
            }
            path.into_iter()
                .map(|w| Waypoint {
                    t_s: w.t_s + now_s,
                    ..w
                })
                .collect()
        };
        match msg {
            ClientMsg::Hello { .. } => unreachable!(),
            ClientMsg::Subscribe { topics, floor_rate_hz, .. } => self.subscribe(id, req, topics, floor_rate_hz),
            ClientMsg::Snapshot { .. } => {
                self.ack(id, req);
                self.send_snapshot(id, Some(req), false);
            }
            ClientMsg::SpawnWalker { mut walker, relative, .. } => {
                walker.path = shift(walker.path, relative);
                self.engine_command(id, req, EngineCommand::SpawnWalker(walker));
            }
            ClientMsg::MoveWalker {
                walker, path, relative, ..
            } => {
                let path = shift(path, relative);
                self.engine_command(id, req, EngineCommand::MoveWalker { id: walker, path });
            }
            ClientMsg::RemoveWalker { walker, .. } => {
                self.engine_command(id, req, EngineCommand::RemoveWalker(walker))
            }
            ClientMsg::SetAlgorithm { name, params, .. } => {
                let built = parse_params(&params).and_then(|p| {
                    build_algorithm(
                        &name,
                        &p,
                        self.engine.topology(),
                        self.engine.models(),
                        self.engine.config().sample_rate_hz,
                    )
                });
                match built {
                    Ok(f) => self.engine_command(id, req, EngineCommand::SetAlgorithm(f)),
                    Err(e) => self.send_to(id, &ServerMsg::error(Some(req), ErrorCode::Rejected, e)),
                }
            }
            ClientMsg::Actuate { node, action, .. } => match action.to_kind() {
                Ok(kind) => self.engine_command(id, req, EngineCommand::Actuate { node: NodeId(node), kind }),
                Err(e) => self.send_to(id, &ServerMsg::error(Some(req), ErrorCode::Rejected, e)),
            },
            ClientMsg::RecordStart { path, truth, .. } => {
                if self.recorder.is_some() {
                    return self.send_to(id, &ServerMsg::error(Some(req), ErrorCode::Rejected, "already recording"));
                }
                match self.start_recording(PathBuf::from(path), truth, false) {
                    Ok(()) => self.ack(id, req),
                    Err(e) => self.send_to(id, &ServerMsg::error(Some(req), ErrorCode::Rejected, e)),
                }
            }
            ClientMsg::RecordStop { .. } => match self.recorder.take() {
                None => self.send_to(id, &ServerMsg::error(Some(req), ErrorCode::Rejected, "not recording")),
                Some(rec) => match rec.writer.finish() {
                    Ok(_) => self.ack(id, req),
                    Err(e) => self.send_to(id, &ServerMsg::error(Some(req), ErrorCode::Rejected, e.to_string())),
                },
            },
            ClientMsg::Replay {
                path, algorithm, params, ..
            } => match self.load_replay(&path, &algorithm, &params) {
                Ok(()) => {
                    self.ack(id, req);
                    let ids: Vec<u64> = self
                        .sessions
                        .iter()
                        .filter(|(_, s)| s.floor_period_us.is_some())
                        .map(|(i, _)| *i)
                        .collect();
                    for sid in ids {
                        self.send_snapshot(sid, None, true);
                    }
                }
                Err(e) => self.send_to(id, &ServerMsg::error(Some(req), ErrorCode::Rejected, e)),
            },
            ClientMsg::Pause { .. } => {
                self.paused = true;
                self.ack(id, req);
            }
            ClientMsg::Resume { .. } => {
                self.paused = false;
                self.anchor = (Instant::now(), self.engine.now_us());
                self.ack(id, req);
            }
        }
    }

    fn hello(&mut self, id: u64, req: u64, version: u32, role: Role) {
        if version != PROTOCOL_VERSION {
            self.send_to(
                id,
                &ServerMsg::error(
                    Some(req),
                    ErrorCode::VersionMismatch,
                    format!("server speaks protocol {PROTOCOL_VERSION}, client sent {version}"),
                ),
            );
            if let Some(s) = self.sessions.get(&id) {
                s.queue.close();
            }
            return;
        }
        if role == Role::Controller && self.controller.is_some_and(|c| c != id) {
            return self.send_to(
                id,
                &ServerMsg::error(Some(req), ErrorCode::LeaseHeld, "another session holds the controller lease"),
            );
        }
        let Some(s) = self.sessions.get_mut(&id) else {
            return;
        };
        s.hello = true;
        s.role = role;
        match role {
            Role::Controller => self.controller = Some(id),
            Role::Observer if self.controller == Some(id) => self.controller = None,
            Role::Observer => {}
        }
        let msg = ServerMsg::Ack {
            req,
            t_us: self.engine.now_us(),
            seq: None,
            session: Some(id),
            role: Some(role),
        };
        self.send_to(id, &msg);
    }

    fn subscribe(&mut self, id: u64, req: u64, topics: Vec<Topic>, floor_rate_hz: Option<f64>) {
        let max = self.engine.config().sample_rate_hz as f64;
        let period = match floor_rate_hz {
            None => self.default_period_us,
            Some(r) if r > 0.0 && r <= max => period_us(r),
            Some(r) => {
                return self.send_to(
                    id,
                    &ServerMsg::error(Some(req), ErrorCode::Rejected, format!("floor rate {r} outside (0, {max}]")),
                )
            }
        };
        let now = self.engine.now_us();
        let wants_floor = topics.contains(&Topic::Floor);
        let s = self.sessions.get_mut(&id).expect("session");
        s.topics.extend(topics);
        if wants_floor {
            s.floor_period_us = Some(period);
            self.classes
                .entry(period)
                .or_insert_with(|| DeltaCutter::new(period, now, &self.monitor));
        }
        self.ack(id, req);
        if wants_floor {
            self.send_snapshot(id, None, false);
        }
    }

    fn ack(&mut self, id: u64, req: u64) {
        let msg = ServerMsg::Ack {
            req,
            t_us: self.engine.now_us(),
            seq: None,
            session: None,
            role: None,
        };
        self.send_to(id, &msg);
    }

    /// Applies `cmd` at the current instant; the ACK goes out once the
    /// engine has processed it.
    fn engine_command(&mut self, id: u64, req: u64, cmd: EngineCommand) {
        let ticket = self.engine.submit(cmd);
        self.pending_acks.insert(ticket, (id, req));
        self.engine.settle();
        let outs = self.engine.drain_output();
        self.absorb(outs);
        self.flush_tracks();
    }

    fn snapshot(&self, role: Role) -> FloorSnapshot {
        let now_s = self.engine.now_us() as f64 * 1e-6;
        FloorSnapshot {
            t_us: self.engine.now_us(),
            sensors: self.monitor.sensors().to_vec(),
            pir: self.monitor.pir().to_vec(),
            walkers: (role == Role::Controller).then(|| {
                self.engine
                    .walkers()
                    .filter_map(|w| w.position(now_s).map(|pos| WalkerView { id: w.id, pos }))
                    .collect()
            }),
            tracks: self.monitor.confirmed_tracks(),
            paused: self.paused,
        }
    }

    fn send_snapshot(&mut self, id: u64, req: Option<u64>, droppable: bool) {
        let Some(s) = self.sessions.get(&id) else {
            return;
        };
        let msg = ServerMsg::FloorSnapshot {
            req,
            snapshot: self.snapshot(s.role),
        };
        s.queue.push(Outbound {
            line: msg.to_line().into(),
            droppable,
        });
    }

    fn start_recording(&mut self, path: PathBuf, truth: bool, whole_run: bool) -> Result<(), String> {
        let mut header = self.engine.trace_header().clone();
        if !whole_run {
            header.start_t_us = self.engine.now_us();
            header.duration_us = None;
        }
        let writer = TraceWriter::create(&path, &header).map_err(|e| e.to_string())?;
        self.recorder = Some(Recorder { writer, truth });
        Ok(())
    }

    fn load_replay(&mut self, path: &str, algorithm: &str, params: &[String]) -> Result<(), String> {
        let trace = Trace::load(std::path::Path::new(path)).map_err(|e| e.to_string())?;
        let topo = self.engine.topology().clone();
        let p = parse_params(params)?;
        let factory = build_algorithm(algorithm, &p, &topo, &[], trace.header.rate_hz)?;
        let engine = Engine::replay(
            topo.clone(),
            self.engine.radio().clone(),
            &trace,
            self.engine.config().clock_skew_us.clone(),
            factory,
        )
        .map_err(|e| e.to_string())?;
        if let Some(rec) = self.recorder.take() {
            let _ = rec.writer.finish();
        }
        self.engine = engine;
        self.monitor = FloorMonitor::new(topo.sensors.len(), topo.pirs.len(), self.opts.calibration);
        let now = self.engine.now_us();
        for (p, c) in self.classes.iter_mut() {
            *c = DeltaCutter::new(*p, now, &self.monitor);
        }
        self.pir_cutter = DeltaCutter::new(self.default_period_us, now, &self.monitor);
        self.pending_acks.clear();
        self.pending_tracks.clear();
        self.eval = self.engine.config().duration_us.map(|_| EvalLog::default());
        self.next_metrics_us = now + self.opts.metrics_period_us.max(1);
        self.final_sent = false;
        self.anchor = (Instant::now(), now);
        *self.shared.finished.lock().expect("stats lock") = false;
        Ok(())
    }
}
