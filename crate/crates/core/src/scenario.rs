//! Scenario files: walkers plus per-sensor model overrides.
//!
//! ```text
//! # one record per line
//! walker 1 800 point 1.5:0.6:5,1.5:18:22.4
//! walker 2 700 gait:step=0.7:cadence=1.6:ds=0.2 0.9:1:0,0.9:10:9
//! sensor 17 offset=950 gain=0.5 sigma=3
//! sensor * sigma=0
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::SensorId;
use crate::physics::{GaitParams, SensorModel, SensorPriors, Walker, WalkerMode, Waypoint};

#[derive(Debug, Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("scenario references unknown sensor {0}")]
    UnknownSensor(SensorId),
    #[error("duplicate walker id {0}")]
    DuplicateWalker(u32),
    #[error("{0}")]
    Invalid(String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SensorSelector {
    All,
    One(SensorId),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SensorOverride {
    pub offset: Option<f64>,
    pub gain: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Scenario {
    pub walkers: Vec<Walker>,
    /// Applied in order, so a later `sensor 3` refines an earlier `sensor *`.
    pub overrides: Vec<(SensorSelector, SensorOverride)>,
}

impl Scenario {
    pub fn new(walkers: Vec<Walker>) -> Self {
        Scenario {
            walkers,
            overrides: Vec::new(),
        }
    }

    pub fn with_override(mut self, sel: SensorSelector, o: SensorOverride) -> Self {
        self.overrides.push((sel, o));
        self
    }

    /// Turns sensor noise off everywhere.
    pub fn noiseless(self) -> Self {
        self.with_override(
            SensorSelector::All,
            SensorOverride {
                sigma: Some(0.0),
                ..Default::default()
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        let mut sc = Scenario::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let err = |message: String| ScenarioError::Parse { line, message };
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let fields: Vec<&str> = body.split_whitespace().collect();
            match fields[0] {
                "walker" => {
                    let w = parse_walker(&fields[1..]).map_err(err)?;
                    if sc.walkers.iter().any(|o| o.id == w.id) {
                        return Err(ScenarioError::DuplicateWalker(w.id));
                    }
                    sc.walkers.push(w);
                }
                "sensor" => sc.overrides.push(parse_sensor(&fields[1..]).map_err(err)?),
                other => return Err(err(format!("unknown record {other:?}"))),
            }
        }
        Ok(sc)
    }

    /// Checks walkers and that every override names an existing sensor.
    pub fn validate(&self, n_sensors: usize) -> Result<(), ScenarioError> {
        for w in &self.walkers {
            w.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        for (sel, _) in &self.overrides {
            if let SensorSelector::One(s) = sel {
                if s.index() >= n_sensors {
                    return Err(ScenarioError::UnknownSensor(*s));
                }
            }
        }
        Ok(())
    }

    /// Prior draw for `n` sensors with this scenario's overrides applied.
    pub fn sensor_models(&self, n: usize, seed: u64) -> Result<Vec<SensorModel>, ScenarioError> {
        self.validate(n)?;
        let mut models = SensorPriors::default().draw(n, seed);
        for (sel, o) in &self.overrides {
            let targets: Vec<usize> = match sel {
                SensorSelector::All => (0..n).collect(),
                SensorSelector::One(s) => vec![s.index()],
            };
            for i in targets {
                let m = &mut models[i];
                if let Some(v) = o.offset {
                    m.zero_offset = v;
                }
                if let Some(v) = o.gain {
                    m.gain = v;
                }
                if let Some(v) = o.sigma {
                    m.noise_sigma = v;
                }
            }
        }
        for m in &models {
            m.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        Ok(models)
    }
}

fn num<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, String> {
    s.parse().map_err(|_| format!("invalid {what} {s:?}"))
}

pub(crate) fn parse_mode(s: &str) -> Result<WalkerMode, String> {
    let mut parts = s.split(':');
    match parts.next() {
        Some("point") if parts.next().is_none() => Ok(WalkerMode::PointMass),
        Some("gait") => {
            let mut g = GaitParams::default();
            for kv in parts {
                let (k, v) = kv
                    .split_once('=')
                    .ok_or_else(|| format!("gait option {kv:?} is not key=value"))?;
                match k {
                    "step" => g.step_length_m = num("step length", v)?,
                    "cadence" => g.cadence_hz = num("cadence", v)?,
                    "ds" => g.double_support_fraction = num("double support", v)?,
                    _ => return Err(format!("unknown gait option {k:?}")),
                }
            }
            Ok(WalkerMode::Gait(g))
        }
        _ => Err(format!("unknown walker mode {s:?}")),
    }
}

pub(crate) fn parse_waypoints(s: &str) -> Result<Vec<Waypoint>, String> {
    s.split(',')
        .map(|wp| {
            let p: Vec<&str> = wp.split(':').collect();
            if p.len() != 3 {
                return Err(format!("waypoint {wp:?} is not x:y:t"));
            }
            Ok(Waypoint::new(
                num("x", p[0])?,
                num("y", p[1])?,
                num("t", p[2])?,
            ))
        })
        .collect()
}

fn parse_walker(f: &[&str]) -> Result<Walker, String> {
    if f.len() != 4 {
        return Err("expected: walker <id> <weight_n> <mode> <x:y:t,...>".into());
    }
    let w = Walker {
        id: num("walker id", f[0])?,
        weight_n: num("weight", f[1])?,
        mode: parse_mode(f[2])?,
        path: parse_waypoints(f[3])?,
    };
    w.validate().map_err(|e| e.to_string())?;
    Ok(w)
}

fn parse_sensor(f: &[&str]) -> Result<(SensorSelector, SensorOverride), String> {
    let (first, rest) = f
        .split_first()
        .ok_or("expected: sensor <id|*> key=value...")?;
    let sel = if *first == "*" {
        SensorSelector::All
    } else {
        SensorSelector::One(SensorId(num("sensor id", first)?))
    };
    let mut o = SensorOverride::default();
    for kv in rest {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| format!("{kv:?} is not key=value"))?;
        match k {
            "offset" => o.offset = Some(num("offset", v)?),
            "gain" => o.gain = Some(num("gain", v)?),
            "sigma" => o.sigma = Some(num("sigma", v)?),
            _ => return Err(format!("unknown sensor key {k:?}")),
        }
    }
    Ok((sel, o))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_walkers_and_overrides() {
        let sc = Scenario::parse(
            "walker 1 800 point 1.5:0.6:5,1.5:18:22.4\n\
             walker 2 700 gait:step=0.7:cadence=1.6:ds=0.25 0.9:1:0,0.9:10:9 # slow\n\
             sensor * sigma=0\nsensor 3 offset=900 gain=0.5\n",
        )
        .unwrap();
        assert_eq!(sc.walkers.len(), 2);
        assert_eq!(sc.walkers[0].path[1], Waypoint::new(1.5, 18.0, 22.4));
        match sc.walkers[1].mode {
            WalkerMode::Gait(g) => {
                assert_eq!(g.cadence_hz, 1.6);
                assert_eq!(g.double_support_fraction, 0.25);
            }
            _ => panic!("expected gait"),
        }
        let models = sc.sensor_models(120, 1).unwrap();
        assert!(models.iter().all(|m| m.noise_sigma == 0.0));
        assert_eq!(models[3].zero_offset, 900.0);
        assert_eq!(models[3].gain, 0.5);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Scenario::parse("\nwalker 1 800 hover 0:0:0").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 2, .. }));
        let e = Scenario::parse("walker 1 800 point 0:0:1,1:1:1").unwrap_err();
        assert!(matches!(e, ScenarioError::Parse { line: 1, .. }));
        let e = Scenario::parse("walker 1 800 point 0:0:0\nwalker 1 800 point 0:0:0").unwrap_err();
        assert_eq!(e, ScenarioError::DuplicateWalker(1));
    }

    #[test]
    fn unknown_sensor_rejected() {
        let sc = Scenario::parse("sensor 500 gain=1").unwrap();
        assert_eq!(
            sc.sensor_models(120, 0),
            Err(ScenarioError::UnknownSensor(SensorId(500)))
        );
    }
}
