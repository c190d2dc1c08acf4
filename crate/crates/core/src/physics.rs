//! Ground-truth world: walkers, load distribution onto the columns under the
//! tiles, strain-gauge transduction to ADC counts, and PIR motion response.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::floor::{Corner, FloorTopology};
use crate::geometry::{Point, Rect};
use crate::ids::{PirId, SensorId};
use crate::rng;

/// Largest value of the 12-bit ADC.
pub const ADC_MAX: u16 = 4095;

/// Half the lateral distance between the feet in gait mode.
const HALF_STEP_WIDTH_M: f64 = 0.1;

#[derive(Debug, Error, PartialEq)]
pub enum PhysicsError {
    #[error("tile coordinate ({0}, {1}) outside [0,1]")]
    OutOfTile(f64, f64),
    #[error("negative weight {0}")]
    NegativeWeight(f64),
    #[error("walker {0}: {1}")]
    BadWalker(u32, String),
    #[error("sensor model {0}: {1}")]
    BadModel(SensorId, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub pos: Point,
    pub t_s: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64, t_s: f64) -> Self {
        Waypoint {
            pos: Point::new(x, y),
            t_s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    pub step_length_m: f64,
    /// Steps per second. Zero derives it from mean path speed and step length.
    pub cadence_hz: f64,
    pub double_support_fraction: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        GaitParams {
            step_length_m: 0.7,
            cadence_hz: 0.0,
            double_support_fraction: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum WalkerMode {
    PointMass,
    Gait(GaitParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Walker {
    pub id: u32,
    pub weight_n: f64,
    pub path: Vec<Waypoint>,
    pub mode: WalkerMode,
}

/// A point where a walker presses on the floor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Contact {
    pub pos: Point,
    pub weight_n: f64,
}

impl Walker {
    pub fn point_mass(id: u32, weight_n: f64, path: Vec<Waypoint>) -> Self {
        Walker {
            id,
            weight_n,
            path,
            mode: WalkerMode::PointMass,
        }
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |m: &str| Err(PhysicsError::BadWalker(self.id, m.to_string()));
        if !(self.weight_n > 0.0 && self.weight_n.is_finite()) {
            return bad("weight must be positive");
        }
        if self.path.is_empty() {
            return bad("empty path");
        }
        if self.path.windows(2).any(|w| !(w[1].t_s > w[0].t_s)) {
            return bad("waypoint times must be strictly increasing");
        }
        if let WalkerMode::Gait(g) = self.mode {
            if !(0.0..=1.0).contains(&g.double_support_fraction) {
                return bad("double support fraction outside [0,1]");
            }
            if !(g.step_length_m > 0.0) || g.cadence_hz < 0.0 {
                return bad("gait parameters must be positive");
            }
        }
        Ok(())
    }

    pub fn start_s(&self) -> f64 {
        self.path.first().map_or(f64::INFINITY, |w| w.t_s)
    }

    pub fn end_s(&self) -> f64 {
        self.path.last().map_or(f64::NEG_INFINITY, |w| w.t_s)
    }

    pub fn is_present(&self, t_s: f64) -> bool {
        t_s >= self.start_s() && t_s <= self.end_s()
    }

    fn segment(&self, t_s: f64) -> usize {
        // index i such that path[i].t <= t <= path[i+1].t
        let i = self.path.partition_point(|w| w.t_s <= t_s);
        i.saturating_sub(1).min(self.path.len().saturating_sub(2))
    }

    /// Body position by linear interpolation; `None` while absent.
    pub fn position(&self, t_s: f64) -> Option<Point> {
        if !self.is_present(t_s) {
            return None;
        }
        if self.path.len() == 1 {
            return Some(self.path[0].pos);
        }
        let i = self.segment(t_s);
        let (a, b) = (self.path[i], self.path[i + 1]);
        let f = ((t_s - a.t_s) / (b.t_s - a.t_s)).clamp(0.0, 1.0);
        Some(a.pos.lerp(b.pos, f))
    }

    /// Body velocity in m/s; zero while absent or on a one-point path.
    pub fn velocity(&self, t_s: f64) -> Point {
        if !self.is_present(t_s) || self.path.len() < 2 {
            return Point::default();
        }
        let i = self.segment(t_s);
        let (a, b) = (self.path[i], self.path[i + 1]);
        let dt = b.t_s - a.t_s;
        Point::new((b.pos.x - a.pos.x) / dt, (b.pos.y - a.pos.y) / dt)
    }

    pub fn speed(&self, t_s: f64) -> f64 {
        let v = self.velocity(t_s);
        v.x.hypot(v.y)
    }

    fn path_length(&self) -> f64 {
        self.path.windows(2).map(|w| w[0].pos.dist(w[1].pos)).sum()
    }

    /// Unit walking direction at `t`, falling back to the nearest moving
    /// segment and finally to `+y` (along the hallway).
    fn heading(&self, t_s: f64) -> Point {
        let unit = |i: usize| {
            let (a, b) = (self.path[i].pos, self.path[i + 1].pos);
            let d = a.dist(b);
            (d > 0.0).then(|| Point::new((b.x - a.x) / d, (b.y - a.y) / d))
        };
        if self.path.len() >= 2 {
            let i = self.segment(t_s);
            let n = self.path.len() - 1;
            if let Some(h) = (0..=i).rev().chain(i + 1..n).find_map(unit) {
                return h;
            }
        }
        Point::new(0.0, 1.0)
    }

    /// Planted foot `k`: lands at step start, stands until the next step's
    /// double support ends, placed under the body at mid-stance.
    fn footfall(&self, k: u64, period: f64, dsf: f64) -> Point {
        let t0 = self.start_s();
        let mid = (t0 + period * (k as f64 + (1.0 + dsf) / 2.0)).min(self.end_s());
        let body = self.position(mid).unwrap_or(self.path[0].pos);
        let h = self.heading(mid);
        let side = if k % 2 == 0 { -1.0 } else { 1.0 };
        Point::new(
            body.x - h.y * side * HALF_STEP_WIDTH_M,
            body.y + h.x * side * HALF_STEP_WIDTH_M,
        )
    }
}

/// Force on the (NW, NE, SW, SE) corners of a rigid tile loaded at `(u, v)`.
pub fn corner_loads(u: f64, v: f64, weight_n: f64) -> Result<[f64; 4], PhysicsError> {
    if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) {
        return Err(PhysicsError::OutOfTile(u, v));
    }
    if weight_n < 0.0 {
        return Err(PhysicsError::NegativeWeight(weight_n));
    }
    // SE takes the remainder so the four shares sum to the weight
    let nw = weight_n * (1.0 - u) * (1.0 - v);
    let ne = weight_n * u * (1.0 - v);
    let sw = weight_n * (1.0 - u) * v;
    let se = weight_n - nw - ne - sw;
    Ok([nw, ne, sw, se.max(0.0)])
}

/// Points where the walker presses on the floor at `t_s`.
pub fn walker_contacts(walker: &Walker, t_s: f64) -> Vec<Contact> {
    let Some(body) = walker.position(t_s) else {
        return Vec::new();
    };
    let g = match walker.mode {
        WalkerMode::PointMass => None,
        WalkerMode::Gait(g) => {
            let cadence = if g.cadence_hz > 0.0 {
                g.cadence_hz
            } else {
                let dur = walker.end_s() - walker.start_s();
                if dur > 0.0 {
                    walker.path_length() / dur / g.step_length_m
                } else {
                    0.0
                }
            };
            (cadence > 0.0).then_some((g, cadence))
        }
    };
    let Some((g, cadence)) = g else {
        return vec![Contact {
            pos: body,
            weight_n: walker.weight_n,
        }];
    };

    let period = 1.0 / cadence;
    let dsf = g.double_support_fraction;
    let steps = (t_s - walker.start_s()) / period;
    let k = steps.floor().max(0.0) as u64;
    let phase = steps - k as f64;
    let lead = walker.footfall(k, period, dsf);
    if k >= 1 && phase < dsf {
        let lead_share = walker.weight_n * (phase / dsf);
        vec![
            Contact {
                pos: walker.footfall(k - 1, period, dsf),
                weight_n: walker.weight_n - lead_share,
            },
            Contact {
                pos: lead,
                weight_n: lead_share,
            },
        ]
    } else {
        vec![Contact {
            pos: lead,
            weight_n: walker.weight_n,
        }]
    }
}

/// Accumulates every contact onto the instrumented corners of its tile.
/// Force on uninstrumented supports and off-floor contacts is discarded.
pub fn world_forces(topo: &FloorTopology, walkers: &[Walker], t_s: f64) -> Vec<f64> {
    let mut forces = vec![0.0; topo.sensors.len()];
    add_world_forces(topo, walkers.iter(), t_s, &mut forces);
    forces
}

pub(crate) fn add_world_forces<'a>(
    topo: &FloorTopology,
    walkers: impl IntoIterator<Item = &'a Walker>,
    t_s: f64,
    forces: &mut [f64],
) {
    for w in walkers {
        for c in walker_contacts(w, t_s) {
            let Some((tile, u, v)) = topo.locate(c.pos) else {
                continue;
            };
            let loads = corner_loads(u, v, c.weight_n).expect("locate yields unit coordinates");
            let corners = &topo.tiles[tile.index()].corners;
            for corner in Corner::ALL {
                if let Some(s) = corners[corner as usize] {
                    forces[s.index()] += loads[corner as usize];
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorModel {
    pub sensor: SensorId,
    /// Unloaded reading in ADC counts.
    pub zero_offset: f64,
    /// Reading drop per newton.
    pub gain: f64,
    pub noise_sigma: f64,
    pub adc_max: u16,
}

impl SensorModel {
    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |m: &str| Err(PhysicsError::BadModel(self.sensor, m.to_string()));
        if !(self.zero_offset > 0.0 && self.zero_offset <= self.adc_max as f64) {
            return bad("zero offset outside (0, adc_max]");
        }
        if !(self.gain > 0.0) {
            return bad("gain must be positive");
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise sigma must be non-negative");
        }
        Ok(())
    }
}

/// Uniform priors for hand-built sensors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPriors {
    pub offset: (f64, f64),
    pub gain: (f64, f64),
    pub sigma: (f64, f64),
}

impl Default for SensorPriors {
    fn default() -> Self {
        SensorPriors {
            offset: (400.0, 1300.0),
            gain: (0.3, 0.7),
            sigma: (2.0, 6.0),
        }
    }
}

impl SensorPriors {
    pub fn draw(&self, n: usize, seed: u64) -> Vec<SensorModel> {
        let mut rng = rng::priors_stream(seed);
        (0..n)
            .map(|i| SensorModel {
                sensor: SensorId::from(i),
                zero_offset: rng.random_range(self.offset.0..=self.offset.1),
                gain: rng.random_range(self.gain.0..=self.gain.1),
                noise_sigma: rng.random_range(self.sigma.0..=self.sigma.1),
                adc_max: ADC_MAX,
            })
            .collect()
    }
}

/// SHA-256 over the exact bit patterns of every model parameter.
pub fn models_digest(models: &[SensorModel]) -> String {
    let mut h = Sha256::new();
    for m in models {
        h.update(m.sensor.0.to_le_bytes());
        h.update(m.zero_offset.to_bits().to_le_bytes());
        h.update(m.gain.to_bits().to_le_bytes());
        h.update(m.noise_sigma.to_bits().to_le_bytes());
        h.update(m.adc_max.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Converts a column force to a quantized reading. Load lowers the value.
///
/// Draws from `rng` only when the model has noise.
pub fn transduce<R: Rng + ?Sized>(model: &SensorModel, force_n: f64, rng: &mut R) -> u16 {
    let eps = if model.noise_sigma > 0.0 {
        Normal::new(0.0, model.noise_sigma)
            .expect("finite sigma")
            .sample(rng)
    } else {
        0.0
    };
    let raw = (model.zero_offset - model.gain * force_n + eps).round();
    raw.clamp(0.0, model.adc_max as f64) as u16
}

/// PIRs respond to motion: true iff some walker presses inside the zone
/// while moving at least `speed_threshold_mps`.
pub fn pir_state(zone: &Rect, walkers: &[Walker], t_s: f64, speed_threshold_mps: f64) -> bool {
    pir_active(zone, walkers.iter(), t_s, speed_threshold_mps)
}

pub(crate) fn pir_active<'a>(
    zone: &Rect,
    walkers: impl IntoIterator<Item = &'a Walker>,
    t_s: f64,
    speed_threshold_mps: f64,
) -> bool {
    walkers.into_iter().any(|w| {
        w.speed(t_s) >= speed_threshold_mps
            && walker_contacts(w, t_s).iter().any(|c| zone.contains(c.pos))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdcSample {
    pub t_us: u64,
    pub sensor: SensorId,
    pub value: u16,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PirEvent {
    pub t_us: u64,
    pub pir: PirId,
    pub active: bool,
}
