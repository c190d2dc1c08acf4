use std::collections::{BTreeMap, BTreeSet};

use crate::geometry::{weighted_centroid, Point};
use crate::ids::{NodeId, PirId, SensorId};
use crate::node::{ActuationKind, LoadDetector, NodeAlgorithm, NodeContext};
use crate::physics::{AdcSample, PirEvent};
use crate::radio::NodeMsg;

use super::wire::{self, ClusterMsg, TrackMsg, TrackerMsg, WireReport};
use super::{TrackEvent, TrackState, TrackerParams};

const ROUND_TIMER: u32 = 1;
const DECIDE_TIMER: u32 = 2;

/// Rounds kept in the inbox; later rounds arrive early under clock skew.
const INBOX_ROUNDS: u64 = 4;

const RADIUS_EPS_M: f64 = 1e-6;

/// Rounds open this fraction of a round after the boundary, so nodes whose
/// clocks run a little fast still report the frame taken at the boundary.
const GUARD_DIVISOR: u64 = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Heard {
    from: NodeId,
    sensor: SensorId,
    deviation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TrackCopy {
    owner: NodeId,
    pos: Point,
    t_us: u64,
    hits: u32,
    misses: u32,
    state: TrackState,
    round: u64,
}

/// Round-synchronous cooperative tracker.
///
/// Each round every node with loaded sensors broadcasts its deviation
/// reports for the frame at the round boundary. Half a round later a node
/// whose strongest report beats every report heard within the cluster
/// radius (ties to the smaller node id) leads that cluster: it fuses the reports into a weighted centroid,
/// associates it with a known track, and broadcasts the track state so the
/// next leader can pick it up when the target moves on.
pub struct DistributedTracker {
    params: TrackerParams,
    detectors: Vec<LoadDetector>,
    deviations: Vec<Option<f64>>,
    round: u64,
    inbox: BTreeMap<u64, Vec<Heard>>,
    forwarded: BTreeSet<(NodeId, u32)>,
    own_pir_active: bool,
    own_pir_last_us: Option<u64>,
    pir_last_us: BTreeMap<PirId, u64>,
    tracks: BTreeMap<u32, TrackCopy>,
    next_local_id: u32,
    led_on: bool,
}

impl DistributedTracker {
    pub fn new(params: TrackerParams, n_sensors: usize) -> Self {
        let det = LoadDetector::new(&params.calibration);
        DistributedTracker {
            detectors: vec![det; n_sensors],
            deviations: vec![None; n_sensors],
            params,
            round: 0,
            inbox: BTreeMap::new(),
            forwarded: BTreeSet::new(),
            own_pir_active: false,
            own_pir_last_us: None,
            pir_last_us: BTreeMap::new(),
            tracks: BTreeMap::new(),
            next_local_id: 0,
            led_on: false,
        }
    }

    fn round_start_us(&self, round: u64) -> u64 {
        round * self.params.round_us
    }

    fn weight(&self, sensor: SensorId, deviation: f64) -> f64 {
        match &self.params.gains {
            Some(g) => deviation / g[sensor.index()],
            None => deviation,
        }
    }

    fn start_round(&mut self, ctx: &mut NodeContext) {
        let p = self.params.round_us;
        // nearest boundary: a clock clamped at zero shifts the phase slightly
        self.round = (ctx.now_us + p / 2).saturating_sub(p / GUARD_DIVISOR) / p;
        let round = self.round;
        self.inbox.retain(|r, _| *r >= round && *r < round + INBOX_ROUNDS);
        self.forwarded.retain(|(_, r)| *r as u64 + 1 >= round);

        let reports: Vec<WireReport> = ctx
            .sensors
            .iter()
            .zip(&self.deviations)
            .filter_map(|(s, d)| {
                d.filter(|d| *d > 0.0).map(|d| WireReport {
                    sensor: *s,
                    deviation: d as f32,
                })
            })
            .collect();
        let inbox = self.inbox.entry(round).or_default();
        inbox.extend(reports.iter().map(|r| Heard {
            from: ctx.node,
            sensor: r.sensor,
            deviation: r.deviation as f64,
        }));

        let pir = ctx.pir.and_then(|pir| {
            let age = if self.own_pir_active {
                0
            } else {
                ctx.now_us.saturating_sub(self.own_pir_last_us?)
            };
            (age <= self.params.pir_window_us).then_some((pir, (age / 1000).min(u16::MAX as u64) as u16))
        });
        if let Some((p, _)) = pir {
            self.pir_last_us.insert(p, ctx.now_us);
        }
        if !reports.is_empty() || pir.is_some() {
            let msg = ClusterMsg {
                round_no: round as u32,
                cluster_leader: ctx.node,
                hop_ttl: self.params.hop_ttl,
                origin: ctx.node,
                pir,
                reports,
            };
            let _ = ctx.broadcast(msg.encode());
        }

        ctx.set_timer(DECIDE_TIMER, p / 2);
        ctx.set_timer(ROUND_TIMER, p);
    }

    fn decide(&mut self, ctx: &mut NodeContext) {
        let round = self.round;
        let t_obs = self.round_start_us(round);
        let topo = ctx.topology();
        let heard: &[Heard] = self.inbox.get(&round).map_or(&[], Vec::as_slice);
        // strictly inside the radius: sensors exactly two tile sides apart
        // belong to separate footprints
        let r = self.params.cluster_radius_m - RADIUS_EPS_M;

        let best = heard
            .iter()
            .filter(|h| h.from == ctx.node)
            .max_by(|a, b| a.deviation.total_cmp(&b.deviation).then(b.sensor.cmp(&a.sensor)));
        let mut observation = None;
        if let Some(best) = best {
            let p_best = topo.sensors[best.sensor.index()].pos;
            let leads = heard.iter().all(|h| {
                h.from == ctx.node
                    || topo.sensors[h.sensor.index()].pos.dist(p_best) >= r
                    || h.deviation < best.deviation
                    || (h.deviation == best.deviation && h.from > ctx.node)
            });
            if leads {
                let mut seen = BTreeSet::new();
                let members = heard.iter().filter(|h| seen.insert(h.sensor)).filter_map(|h| {
                    let pos = topo.sensors[h.sensor.index()].pos;
                    (pos.dist(p_best) < r).then(|| (pos, self.weight(h.sensor, h.deviation)))
                });
                observation = weighted_centroid(members);
            }
        }
        let pir_ok = observation.is_some_and(|(c, _)| self.pir_allows(topo.pir_covering(c), ctx.now_us));

        let mut out = Vec::new();
        if let Some((c, strength)) = observation {
            out.push(self.associate(ctx.node, c, strength, t_obs, pir_ok));
        }

        // age the tracks this node is responsible for
        let me = ctx.node;
        let max_misses = self.params.max_misses;
        for (&id, t) in self.tracks.iter_mut() {
            if t.owner != me || t.round >= round || t.state == TrackState::Dead {
                continue;
            }
            t.misses += 1;
            t.round = round;
            if t.misses >= max_misses {
                t.state = TrackState::Dead;
                out.push((id, *t, t_obs, t.pos, 0.0));
            }
        }

        for (id, t, t_us, pos, strength) in out {
            ctx.report(TrackEvent {
                t_us,
                track_id: id,
                node: Some(me),
                pos,
                strength,
                state: t.state,
            });
            let msg = TrackMsg {
                track_id: id,
                owner: t.owner,
                x: t.pos.x as f32,
                y: t.pos.y as f32,
                t_us: t.t_us,
                hits: t.hits.min(u16::MAX as u32) as u16,
                misses: t.misses.min(u8::MAX as u32) as u8,
                state: t.state,
                round_no: round as u32,
            };
            let _ = ctx.broadcast(msg.encode());
        }
        self.tracks.retain(|_, t| t.state != TrackState::Dead || t.round + 1 >= round);
        self.update_led(ctx);
    }

    fn pir_allows(&self, pir: Option<PirId>, now: u64) -> bool {
        if !self.params.pir_gate {
            return true;
        }
        match pir {
            None => true,
            Some(p) => self
                .pir_last_us
                .get(&p)
                .is_some_and(|last| now.saturating_sub(*last) <= self.params.pir_window_us),
        }
    }

    /// Nearest gated track, else a new tentative one.
    fn associate(
        &mut self,
        me: NodeId,
        c: Point,
        strength: f64,
        t_obs: u64,
        pir_ok: bool,
    ) -> (u32, TrackCopy, u64, Point, f64) {
        let p = &self.params;
        let nearest = self
            .tracks
            .iter()
            .filter(|(_, t)| t.state != TrackState::Dead && t.t_us <= t_obs)
            .map(|(id, t)| (*id, t.pos.dist(c), t.t_us))
            .filter(|&(_, d, t)| p.within_gate(d, t_obs - t))
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let round = self.round;
        let (id, t) = match nearest {
            Some((id, _, _)) => {
                let t = self.tracks.get_mut(&id).unwrap();
                t.hits = if t.state == TrackState::Tentative && t.misses > 0 {
                    1
                } else {
                    t.hits + 1
                };
                t.misses = 0;
                (id, t)
            }
            None => {
                let id = (me.0 << 20) | (self.next_local_id & 0xF_FFFF);
                self.next_local_id = self.next_local_id.wrapping_add(1);
                let t = self.tracks.entry(id).or_insert(TrackCopy {
                    owner: me,
                    pos: c,
                    t_us: t_obs,
                    hits: 1,
                    misses: 0,
                    state: TrackState::Tentative,
                    round,
                });
                (id, t)
            }
        };
        t.owner = me;
        t.pos = c;
        t.t_us = t_obs;
        t.round = round;
        if t.state == TrackState::Tentative && t.hits >= p.min_hits && pir_ok {
            t.state = TrackState::Confirmed;
        }
        (id, *t, t_obs, c, strength)
    }

    fn on_track_msg(&mut self, m: &TrackMsg) {
        let incoming = TrackCopy {
            owner: m.owner,
            pos: Point::new(m.x as f64, m.y as f64),
            t_us: m.t_us,
            hits: m.hits as u32,
            misses: m.misses as u32,
            state: m.state,
            round: m.round_no as u64,
        };
        match self.tracks.get_mut(&m.track_id) {
            None => {
                if m.state != TrackState::Dead {
                    self.tracks.insert(m.track_id, incoming);
                }
            }
            Some(t) => {
                // newer fix wins; same fix time goes to the smaller owner id
                let newer = incoming.t_us > t.t_us
                    || (incoming.t_us == t.t_us && incoming.owner < t.owner)
                    || (m.state == TrackState::Dead && incoming.t_us >= t.t_us);
                if newer {
                    *t = incoming;
                }
            }
        }
    }

    fn on_cluster_msg(&mut self, ctx: &mut NodeContext, m: &ClusterMsg) {
        let round = m.round_no as u64;
        if round + 1 < self.round + 1 && round < self.round {
            return;
        }
        if let Some((pir, age_ms)) = m.pir {
            let seen = ctx.now_us.saturating_sub(age_ms as u64 * 1000);
            let e = self.pir_last_us.entry(pir).or_insert(seen);
            *e = (*e).max(seen);
        }
        if m.origin == ctx.node {
            return;
        }
        let inbox = self.inbox.entry(round).or_default();
        for r in &m.reports {
            if !inbox.iter().any(|h| h.sensor == r.sensor) {
                inbox.push(Heard {
                    from: m.origin,
                    sensor: r.sensor,
                    deviation: r.deviation as f64,
                });
            }
        }
        if m.hop_ttl > 1 && self.forwarded.insert((m.origin, m.round_no)) {
            let fwd = ClusterMsg {
                hop_ttl: m.hop_ttl - 1,
                ..m.clone()
            };
            let _ = ctx.broadcast(fwd.encode());
        }
    }

    fn update_led(&mut self, ctx: &mut NodeContext) {
        if !self.params.actuate || ctx.actuator.is_none() {
            return;
        }
        let leading = self
            .tracks
            .values()
            .any(|t| t.owner == ctx.node && t.state == TrackState::Confirmed && t.misses == 0);
        if leading != self.led_on {
            self.led_on = leading;
            let g = if leading { 3 } else { 0 };
            ctx.actuate(ActuationKind::Led { r: 0, g, b: 0 });
        }
    }
}

impl NodeAlgorithm for DistributedTracker {
    fn on_init(&mut self, ctx: &mut NodeContext) {
        let p = self.params.round_us;
        let guard = p / GUARD_DIVISOR;
        let into = ctx.now_us % p;
        let delay = if into <= guard { guard - into } else { p - into + guard };
        ctx.set_timer(ROUND_TIMER, delay);
    }

    fn on_sample(&mut self, _ctx: &mut NodeContext, local_idx: usize, sample: &AdcSample) {
        if let Some(det) = self.detectors.get_mut(local_idx) {
            // sensors held active by the release hysteresis stay quiet
            let k = self.params.calibration.k;
            self.deviations[local_idx] = det
                .observe(sample, &self.params.calibration)
                .filter(|d| *d > k * det.baseline.sigma_counts);
        }
    }

    fn on_pir(&mut self, ctx: &mut NodeContext, ev: &PirEvent) {
        self.own_pir_active = ev.active;
        self.own_pir_last_us = Some(ctx.now_us);
    }

    fn on_message(&mut self, ctx: &mut NodeContext, msg: &NodeMsg) {
        match wire::decode(&msg.payload) {
            Ok(TrackerMsg::Cluster(m)) => self.on_cluster_msg(ctx, &m),
            Ok(TrackerMsg::Track(m)) => self.on_track_msg(&m),
            Err(e) => log::debug!("node {}: dropping malformed payload: {e}", ctx.node),
        }
    }

    fn on_timer(&mut self, ctx: &mut NodeContext, timer_id: u32) {
        match timer_id {
            ROUND_TIMER => self.start_round(ctx),
            DECIDE_TIMER => self.decide(ctx),
            _ => {}
        }
    }
}
