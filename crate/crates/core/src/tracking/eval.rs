//! Scoring a track event stream against ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::geometry::Point;

use super::{TrackEvent, TrackState};

/// Walker positions at one evaluation instant. Frames with nobody on the
/// floor still count for the people-counting score.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TruthFrame {
    pub t_us: u64,
    pub walkers: Vec<(u32, Point)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub frames: usize,
    pub matched: usize,
    /// `None` when no track was ever matched to a walker.
    pub rmse_m: Option<f64>,
    pub count_accuracy: f64,
    pub id_switches: usize,
    pub crossings: usize,
    pub continuity: f64,
}

impl Metrics {
    pub fn key_values(&self) -> String {
        let rmse = self
            .rmse_m
            .map_or_else(|| "undefined".to_string(), |r| format!("{r:.6}"));
        format!(
            "frames={}\nmatched={}\nrmse_m={rmse}\ncount_accuracy={:.6}\nid_switches={}\ncrossings={}\ncontinuity={:.6}\n",
            self.frames, self.matched, self.count_accuracy, self.id_switches, self.crossings, self.continuity
        )
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "evaluated frames   {}", self.frames);
        match self.rmse_m {
            Some(r) => {
                let _ = writeln!(s, "position rmse      {r:.3} m over {} matches", self.matched);
            }
            None => {
                let _ = writeln!(s, "position rmse      undefined (no matches)");
            }
        }
        let _ = writeln!(s, "count accuracy     {:.1}%", self.count_accuracy * 100.0);
        let _ = writeln!(
            s,
            "track continuity   {:.3} ({} id switches, {} walkers)",
            self.continuity, self.id_switches, self.crossings
        );
        s
    }
}

/// Scores `events` on every truth frame at or after `from_us`.
///
/// A track counts at a frame if its latest event at or before the frame is
/// confirmed; its position is that event's. Tracks are matched to walkers
/// greedily by distance.
pub fn evaluate(events: &[TrackEvent], truth: &[TruthFrame], from_us: u64) -> Metrics {
    let mut sorted: Vec<&TrackEvent> = events.iter().collect();
    sorted.sort_by_key(|e| e.t_us);

    let mut latest: BTreeMap<u32, &TrackEvent> = BTreeMap::new();
    let mut next = 0;
    let mut frames = 0;
    let mut correct = 0;
    let mut sq_err = 0.0;
    let mut matched = 0;
    let mut last_match: BTreeMap<u32, u32> = BTreeMap::new();
    let mut walkers_seen = std::collections::BTreeSet::new();
    let mut switches = 0;

    let mut frames_sorted: Vec<&TruthFrame> = truth.iter().collect();
    frames_sorted.sort_by_key(|f| f.t_us);
    for f in frames_sorted {
        while next < sorted.len() && sorted[next].t_us <= f.t_us {
            latest.insert(sorted[next].track_id, sorted[next]);
            next += 1;
        }
        if f.t_us < from_us {
            continue;
        }
        frames += 1;
        let confirmed: Vec<&TrackEvent> = latest
            .values()
            .copied()
            .filter(|e| e.state == TrackState::Confirmed)
            .collect();
        if confirmed.len() == f.walkers.len() {
            correct += 1;
        }
        walkers_seen.extend(f.walkers.iter().map(|w| w.0));

        let mut pairs = Vec::new();
        for (ti, t) in confirmed.iter().enumerate() {
            for (wi, w) in f.walkers.iter().enumerate() {
                pairs.push((t.pos.dist(w.1), ti, wi));
            }
        }
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        let mut t_used = vec![false; confirmed.len()];
        let mut w_used = vec![false; f.walkers.len()];
        for (d, ti, wi) in pairs {
            if t_used[ti] || w_used[wi] {
                continue;
            }
            t_used[ti] = true;
            w_used[wi] = true;
            sq_err += d * d;
            matched += 1;
            let walker = f.walkers[wi].0;
            let id = confirmed[ti].track_id;
            if let Some(prev) = last_match.insert(walker, id) {
                if prev != id {
                    switches += 1;
                }
            }
        }
    }

    let crossings = walkers_seen.len();
    Metrics {
        frames,
        matched,
        rmse_m: (matched > 0).then(|| (sq_err / matched as f64).sqrt()),
        count_accuracy: if frames == 0 {
            1.0
        } else {
            correct as f64 / frames as f64
        },
        id_switches: switches,
        crossings,
        continuity: if crossings == 0 {
            1.0
        } else {
            (1.0 - switches as f64 / crossings as f64).max(0.0)
        },
    }
}
