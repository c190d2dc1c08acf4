//! Server-side view of the floor that deltas and snapshots are cut from.

use std::collections::BTreeMap;

use crate::node::{CalibrationParams, LoadDetector};
use crate::physics::{AdcSample, PirEvent};
use crate::tracking::{TrackEvent, TrackState};

use super::protocol::SensorState;

/// Latest reading, baseline deviation and load flag of every sensor, plus
/// PIR states and live tracks. Fed from engine outputs in processing order.
#[derive(Debug, Clone)]
pub struct FloorMonitor {
    params: CalibrationParams,
    detectors: Vec<LoadDetector>,
    sensors: Vec<Option<SensorState>>,
    pir: Vec<bool>,
    tracks: BTreeMap<u32, TrackEvent>,
}

impl FloorMonitor {
    pub fn new(n_sensors: usize, n_pirs: usize, params: CalibrationParams) -> Self {
        FloorMonitor {
            detectors: vec![LoadDetector::new(&params); n_sensors],
            params,
            sensors: vec![None; n_sensors],
            pir: vec![false; n_pirs],
            tracks: BTreeMap::new(),
        }
    }

    pub fn on_sample(&mut self, s: &AdcSample) {
        let i = s.sensor.index();
        let det = &mut self.detectors[i];
        det.observe(s, &self.params);
        let b = &det.baseline;
        let d = if b.warmup_complete {
            (b.mean_counts - s.value as f64).max(0.0).round() as u32
        } else {
            0
        };
        self.sensors[i] = Some(SensorState {
            s: s.sensor.0,
            v: s.value,
            d,
            on: det.is_active(),
        });
    }

    pub fn on_pir(&mut self, p: &PirEvent) {
        self.pir[p.pir.index()] = p.active;
    }

    pub fn on_track(&mut self, e: &TrackEvent) {
        if e.state == TrackState::Dead {
            self.tracks.remove(&e.track_id);
        } else {
            self.tracks.insert(e.track_id, *e);
        }
    }

    pub fn sensors(&self) -> &[Option<SensorState>] {
        &self.sensors
    }

    pub fn pir(&self) -> &[bool] {
        &self.pir
    }

    pub fn confirmed_tracks(&self) -> Vec<TrackEvent> {
        self.tracks
            .values()
            .filter(|e| e.state == TrackState::Confirmed)
            .copied()
            .collect()
    }

    pub fn live_tracks(&self) -> usize {
        self.tracks.len()
    }
}

/// Change detector for one delta rate: remembers what was last sent.
#[derive(Debug, Clone)]
pub struct DeltaCutter {
    pub period_us: u64,
    pub next_us: u64,
    pub seq: u64,
    sent: Vec<Option<SensorState>>,
    sent_pir: Vec<bool>,
}

impl DeltaCutter {
    /// Starts from the monitor's current state, which the new subscriber
    /// receives as a snapshot.
    pub fn new(period_us: u64, now_us: u64, monitor: &FloorMonitor) -> Self {
        DeltaCutter {
            period_us,
            next_us: (now_us / period_us + 1) * period_us,
            seq: 0,
            sent: monitor.sensors.clone(),
            sent_pir: monitor.pir.clone(),
        }
    }

    /// Sensors and PIRs that changed since the previous cut.
    pub fn cut(&mut self, monitor: &FloorMonitor) -> (Vec<SensorState>, Vec<(u32, bool)>) {
        let mut sensors = Vec::new();
        for (sent, cur) in self.sent.iter_mut().zip(&monitor.sensors) {
            if sent != cur {
                if let Some(c) = cur {
                    sensors.push(*c);
                }
                *sent = *cur;
            }
        }
        let mut pir = Vec::new();
        for (i, (sent, cur)) in self.sent_pir.iter_mut().zip(&monitor.pir).enumerate() {
            if sent != cur {
                pir.push((i as u32, *cur));
                *sent = *cur;
            }
        }
        self.seq += 1;
        self.next_us += self.period_us;
        (sensors, pir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point;
    use crate::ids::{PirId, SensorId};

    fn sample(t_us: u64, s: u32, v: u16) -> AdcSample {
        AdcSample {
            t_us,
            sensor: SensorId(s),
            value: v,
        }
    }

    #[test]
    fn deviation_appears_after_warmup() {
        let params = CalibrationParams {
            warmup_us: 1_000_000,
            ..CalibrationParams::default()
        };
        let mut m = FloorMonitor::new(2, 1, params);
        for k in 0..=10 {
            m.on_sample(&sample(k * 125_000, 0, 1000 + (k % 2) as u16));
        }
        assert_eq!(m.sensors()[0].unwrap().d, 0);
        assert!(m.sensors()[1].is_none());
        m.on_sample(&sample(1_500_000, 0, 800));
        let s = m.sensors()[0].unwrap();
        assert!(s.on);
        assert!((199..=201).contains(&s.d), "{s:?}");
    }

    #[test]
    fn cutter_reports_changes_only() {
        let mut m = FloorMonitor::new(3, 2, CalibrationParams::default());
        m.on_sample(&sample(0, 0, 900));
        let mut c = DeltaCutter::new(100_000, 0, &m);
        assert_eq!(c.next_us, 100_000);
        m.on_sample(&sample(50_000, 1, 700));
        m.on_pir(&PirEvent {
            t_us: 50_000,
            pir: PirId(1),
            active: true,
        });
        let (s, p) = c.cut(&m);
        assert_eq!(s.iter().map(|x| x.s).collect::<Vec<_>>(), vec![1]);
        assert_eq!(p, vec![(1, true)]);
        let (s, p) = c.cut(&m);
        assert!(s.is_empty() && p.is_empty());
        assert_eq!((c.seq, c.next_us), (2, 300_000));
    }

    #[test]
    fn dead_tracks_leave_the_view() {
        let mut m = FloorMonitor::new(1, 1, CalibrationParams::default());
        let mut e = TrackEvent {
            t_us: 0,
            track_id: 5,
            node: None,
            pos: Point::new(1.0, 1.0),
            strength: 1.0,
            state: TrackState::Tentative,
        };
        m.on_track(&e);
        assert!(m.confirmed_tracks().is_empty());
        e.state = TrackState::Confirmed;
        m.on_track(&e);
        assert_eq!(m.confirmed_tracks().len(), 1);
        e.state = TrackState::Dead;
        m.on_track(&e);
        assert_eq!(m.live_tracks(), 0);
    }
}
