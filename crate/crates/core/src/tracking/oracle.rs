//! Centralized brute-force tracker over noiseless force fields.

use crate::floor::FloorTopology;
use crate::geometry::{weighted_centroid, Point};
use crate::ids::SensorId;

use super::{TrackEvent, TrackState, TrackerParams};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleCluster {
    pub sensors: Vec<SensorId>,
    pub centroid: Point,
    pub total_force_n: f64,
}

/// Groups loaded sensors by 8-neighbour connectivity on the sensor grid.
/// Clusters come out ordered by their smallest sensor id.
pub fn oracle_clusters(topo: &FloorTopology, forces: &[f64]) -> Vec<OracleCluster> {
    let mut seen = vec![false; topo.sensors.len()];
    let mut out = Vec::new();
    for start in 0..topo.sensors.len() {
        if seen[start] || forces[start] <= 0.0 {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(SensorId(i as u32));
            let s = &topo.sensors[i];
            for dc in -1i64..=1 {
                for dr in -1i64..=1 {
                    let (c, r) = (s.col as i64 + dc, s.row as i64 + dr);
                    if c < 0 || r < 0 {
                        continue;
                    }
                    if let Some(n) = topo.sensor_at(c as usize, r as usize) {
                        let j = n.index();
                        if !seen[j] && forces[j] > 0.0 {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        members.sort();
        let (centroid, total) = weighted_centroid(
            members
                .iter()
                .map(|s| (topo.sensors[s.index()].pos, forces[s.index()])),
        )
        .expect("cluster has positive weight");
        out.push(OracleCluster {
            sensors: members,
            centroid,
            total_force_n: total,
        });
    }
    out
}

#[derive(Debug, Clone)]
struct OracleTrack {
    id: u32,
    pos: Point,
    t_us: u64,
    hits: u32,
    misses: u32,
    state: TrackState,
}

/// Frame-by-frame oracle with global greedy nearest-neighbour association.
#[derive(Debug, Clone)]
pub struct OracleTracker {
    params: TrackerParams,
    tracks: Vec<OracleTrack>,
    next_id: u32,
}

impl OracleTracker {
    pub fn new(params: TrackerParams) -> Self {
        OracleTracker {
            params,
            tracks: Vec::new(),
            next_id: 1,
        }
    }

    pub fn step(&mut self, topo: &FloorTopology, t_us: u64, forces: &[f64]) -> Vec<TrackEvent> {
        let clusters = oracle_clusters(topo, forces);
        let p = &self.params;

        let mut pairs = Vec::new();
        for (ti, t) in self.tracks.iter().enumerate() {
            for (ci, c) in clusters.iter().enumerate() {
                let d = t.pos.dist(c.centroid);
                if p.within_gate(d, t_us.saturating_sub(t.t_us)) {
                    pairs.push((d, ti, ci));
                }
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut track_used = vec![false; self.tracks.len()];
        let mut cluster_used = vec![false; clusters.len()];
        let mut events = Vec::new();
        for (_, ti, ci) in pairs {
            if track_used[ti] || cluster_used[ci] {
                continue;
            }
            track_used[ti] = true;
            cluster_used[ci] = true;
            let t = &mut self.tracks[ti];
            let c = &clusters[ci];
            t.hits = if t.state == TrackState::Tentative && t.misses > 0 {
                1
            } else {
                t.hits + 1
            };
            t.misses = 0;
            t.pos = c.centroid;
            t.t_us = t_us;
            if t.state == TrackState::Tentative && t.hits >= p.min_hits {
                t.state = TrackState::Confirmed;
            }
            events.push(event(t, t_us, c.total_force_n));
        }
        for (ti, t) in self.tracks.iter_mut().enumerate() {
            if track_used[ti] {
                continue;
            }
            t.misses += 1;
            if t.misses >= p.max_misses {
                t.state = TrackState::Dead;
                events.push(event(t, t_us, 0.0));
            }
        }
        self.tracks.retain(|t| t.state != TrackState::Dead);
        for (ci, c) in clusters.iter().enumerate() {
            if cluster_used[ci] {
                continue;
            }
            let t = OracleTrack {
                id: self.next_id,
                pos: c.centroid,
                t_us,
                hits: 1,
                misses: 0,
                state: if p.min_hits <= 1 {
                    TrackState::Confirmed
                } else {
                    TrackState::Tentative
                },
            };
            self.next_id += 1;
            events.push(event(&t, t_us, c.total_force_n));
            self.tracks.push(t);
        }
        events.sort_by_key(|e| e.track_id);
        events
    }
}

fn event(t: &OracleTrack, t_us: u64, strength: f64) -> TrackEvent {
    TrackEvent {
        t_us,
        track_id: t.id,
        node: None,
        pos: t.pos,
        strength,
        state: t.state,
    }
}

/// Runs the oracle over a stream of `(t_us, per-sensor forces)` frames and
/// returns its event stream; fold with [`super::build_tracks`] for tracks.
pub fn oracle_track<'a, I>(topo: &FloorTopology, frames: I, params: &TrackerParams) -> Vec<TrackEvent>
where
    I: IntoIterator<Item = (u64, &'a [f64])>,
{
    let mut tracker = OracleTracker::new(params.clone());
    frames
        .into_iter()
        .flat_map(|(t, f)| tracker.step(topo, t, f))
        .collect()
}
