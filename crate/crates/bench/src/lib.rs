//! Shared fixtures for the benchmarks.

use std::sync::Arc;

use corridor_core::algorithms::build_algorithm;
use corridor_core::{build_floor, Engine, FloorConfig, RadioConfig, Scenario, SimConfig, Trace, Walker, Waypoint};

/// Two walkers crossing the default floor after the baseline warmup.
pub fn scenario() -> Scenario {
    let walk = |id, x| Walker::point_mass(id, 800.0, vec![Waypoint::new(x, 1.0, 5.0), Waypoint::new(x, 17.0, 17.0)]);
    Scenario::new(vec![walk(1, 0.9), walk(2, 2.1)])
}

pub fn engine(algorithm: &str, rate_hz: u32, duration_s: f64) -> Engine {
    let radio = RadioConfig::default();
    let topo = Arc::new(build_floor(&FloorConfig::default(), &radio).expect("default floor"));
    let sc = scenario();
    let models = sc.sensor_models(topo.sensors.len(), 1).expect("models");
    let f = build_algorithm(algorithm, &[], &topo, &models, rate_hz).expect("algorithm");
    Engine::new(topo, radio, &sc, SimConfig::new(rate_hz, duration_s, 1), f).expect("engine")
}

/// A recorded 8 Hz run with ground truth.
pub fn trace(duration_s: f64) -> Trace {
    engine("centroid-tracker", 8, duration_s).run().to_trace(true)
}
