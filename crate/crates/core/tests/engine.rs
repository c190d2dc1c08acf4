mod common;

use std::collections::HashMap;

use corridor_core::algorithms::{build_algorithm, ALGORITHMS};
use corridor_core::physics::ADC_MAX;
use corridor_core::*;
use proptest::prelude::*;

use common::topo;

fn crossing(id: u32, x: f64) -> Walker {
    Walker::point_mass(id, 800.0, vec![Waypoint::new(x, 1.0, 5.5), Waypoint::new(x, 12.0, 16.5)])
}

fn run(algo: &str, rate: u32, dur: f64, seed: u64, radio: RadioConfig) -> RunOutput {
    let topo = topo();
    let sc = Scenario::new(vec![crossing(1, 1.5), crossing(2, 0.9)]);
    let models = sc.sensor_models(topo.sensors.len(), seed).unwrap();
    let f = build_algorithm(algo, &[], &topo, &models, rate).unwrap();
    Engine::new(topo, radio, &sc, SimConfig::new(rate, dur, seed), f).unwrap().run()
}

#[test]
fn every_algorithm_replays_to_the_same_actuations() {
    let radio = RadioConfig {
        loss_prob: 0.2,
        ..RadioConfig::default()
    };
    for algo in ALGORITHMS {
        let live = run(algo, 8, 18.0, 5, radio.clone());
        let topo = topo();
        let f = build_algorithm(algo, &[], &topo, &[], 8).unwrap();
        let trace = Trace::parse(&live.to_trace(true).serialize()).unwrap();
        let again = Engine::replay(topo, radio.clone(), &trace, Vec::new(), f).unwrap().run();
        assert_eq!(
            live.actuations().collect::<Vec<_>>(),
            again.actuations().collect::<Vec<_>>(),
            "{algo}"
        );
        assert_eq!(live.tracks().collect::<Vec<_>>(), again.tracks().collect::<Vec<_>>(), "{algo}");
    }
}

#[test]
fn pir_events_alternate_and_actuators_exist() {
    let out = run("led-follow", 8, 18.0, 2, RadioConfig::default());
    let topo = topo();
    let mut last: HashMap<PirId, bool> = HashMap::new();
    let mut pir_events = 0;
    for o in &out.outputs {
        if let Output::Pir(p) = o {
            let prev = last.insert(p.pir, p.active).unwrap_or(false);
            assert_ne!(prev, p.active, "{p:?}");
            pir_events += 1;
        }
    }
    assert!(pir_events > 10);
    let acts: Vec<_> = out.actuations().collect();
    assert!(!acts.is_empty());
    for a in acts {
        assert!(topo.nodes[a.node.index()].actuator.is_some(), "{a:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn streams_obey_rate_range_and_order(rate in 1u32..60, dur in 0.0f64..3.0, seed in 0u64..1000) {
        let out = run("idle", rate, dur, seed, RadioConfig::default());
        let want = (dur * 1e6).round() as u128 * rate as u128 / 1_000_000;
        let mut count = vec![0u128; 120];
        let mut last_t = vec![0u64; 120];
        for s in out.samples() {
            let i = s.sensor.index();
            prop_assert!(s.value <= ADC_MAX);
            prop_assert!(s.t_us >= last_t[i]);
            last_t[i] = s.t_us;
            count[i] += 1;
        }
        prop_assert!(count.iter().all(|&c| c == want), "{count:?} vs {want}");
    }

    #[test]
    fn same_seed_same_digest(seed in 0u64..1000, loss in 0.0f64..0.5) {
        let radio = RadioConfig { loss_prob: loss, ..RadioConfig::default() };
        let a = run("centroid-tracker", 8, 8.0, seed, radio.clone());
        let b = run("centroid-tracker", 8, 8.0, seed, radio);
        prop_assert_eq!(a.digest(), b.digest());
    }
}
