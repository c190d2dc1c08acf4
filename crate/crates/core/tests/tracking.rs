mod common;

use std::collections::BTreeMap;

use corridor_core::algorithms::build_algorithm;
use corridor_core::physics::world_forces;
use corridor_core::scenario::{SensorOverride, SensorSelector};
use corridor_core::tracking::{evaluate, oracle_clusters};
use corridor_core::*;
use proptest::prelude::*;

use common::topo;

fn ideal() -> SensorOverride {
    SensorOverride {
        offset: Some(1000.0),
        gain: Some(1.0),
        sigma: Some(0.0),
    }
}

fn run_with(walkers: Vec<Walker>, o: Option<SensorOverride>, radio: RadioConfig, dur: f64, seed: u64, params: &[(&str, &str)]) -> RunOutput {
    let topo = topo();
    let mut sc = Scenario::new(walkers);
    if let Some(o) = o {
        sc = sc.with_override(SensorSelector::All, o);
    }
    let models = sc.sensor_models(topo.sensors.len(), seed).unwrap();
    let params: Vec<(String, String)> = params.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    let f = build_algorithm("centroid-tracker", &params, &topo, &models, 8).unwrap();
    Engine::new(topo, radio, &sc, SimConfig::new(8, dur, seed), f).unwrap().run()
}

fn live(out: &RunOutput) -> impl Iterator<Item = &TrackEvent> {
    out.tracks().filter(|e| e.state != TrackState::Dead)
}

fn standing(id: u32, x: f64, y: f64, from: f64, to: f64) -> Walker {
    Walker::point_mass(id, 800.0, vec![Waypoint::new(x, y, from), Waypoint::new(x, y, to)])
}

#[test]
fn centered_walker_is_located_at_the_tile_center() {
    let out = run_with(vec![standing(1, 1.5, 9.3, 6.0, 10.0)], Some(ideal()), RadioConfig::ideal(), 10.0, 1, &[]);
    let events: Vec<_> = live(&out).collect();
    assert!(events.len() > 20);
    for e in events {
        assert!(e.pos.dist(Point::new(1.5, 9.3)) <= 1e-6, "{e:?}");
    }
}

#[test]
fn empty_floor_never_confirms_a_track() {
    for seed in 1..=3 {
        let out = run_with(vec![], None, RadioConfig::default(), 20.0, seed, &[]);
        assert_eq!(out.tracks().filter(|e| e.state == TrackState::Confirmed).count(), 0);
    }
}

#[test]
fn off_center_walker_matches_the_bilinear_centroid() {
    let w = standing(1, 0.9, 0.9, 6.0, 9.0);
    let out = run_with(vec![w.clone()], Some(ideal()), RadioConfig::ideal(), 9.0, 1, &[]);
    let topo = topo();
    let oracle = oracle_clusters(&topo, &world_forces(&topo, &[w], 7.0));
    assert_eq!(oracle.len(), 1);
    let events: Vec<_> = live(&out).collect();
    assert!(!events.is_empty());
    for e in events {
        assert!(e.pos.dist(oracle[0].centroid) <= 1e-6);
    }
}

#[test]
fn one_leader_reports_per_round_for_one_walker() {
    let w = Walker::point_mass(1, 800.0, vec![Waypoint::new(1.5, 1.0, 6.0), Waypoint::new(1.5, 15.0, 20.0)]);
    let out = run_with(vec![w], Some(ideal()), RadioConfig::ideal(), 20.0, 1, &[]);
    let mut per_round: BTreeMap<u64, Vec<Option<NodeId>>> = BTreeMap::new();
    for e in live(&out) {
        per_round.entry(e.t_us).or_default().push(e.node);
    }
    assert!(per_round.len() > 100);
    for (t, leaders) in &per_round {
        assert_eq!(leaders.len(), 1, "round at {t}: {leaders:?}");
    }
    // the walker crosses many nodes, so leadership must move
    let distinct: std::collections::BTreeSet<_> = per_round.values().map(|l| l[0]).collect();
    assert!(distinct.len() > 5);
}

#[test]
fn separated_walkers_are_counted_exactly_without_noise() {
    let walkers: Vec<Walker> = (0..3)
        .map(|i| {
            let y = 1.2 + 2.4 * i as f64;
            Walker::point_mass(i + 1, 800.0, vec![Waypoint::new(1.5, y, 6.0), Waypoint::new(1.5, y + 8.0, 14.0)])
        })
        .collect();
    let out = run_with(walkers, Some(ideal()), RadioConfig::ideal(), 15.0, 1, &[]);
    let tracks: Vec<_> = out.tracks().copied().collect();
    // confirmation takes min_hits rounds after the walkers appear; tracks
    // outlive their walkers by max_misses rounds
    let frames: Vec<_> = out.truth_frames().into_iter().filter(|f| f.t_us <= 14_000_000).collect();
    let m = evaluate(&tracks, &frames, 6_500_000);
    assert_eq!(m.count_accuracy, 1.0, "{m:?}");
}

#[test]
fn rounds_keep_closing_under_heavy_loss() {
    let w = Walker::point_mass(1, 800.0, vec![Waypoint::new(1.5, 1.0, 6.0), Waypoint::new(1.5, 15.0, 20.0)]);
    for loss in [0.5, 0.9, 1.0] {
        let radio = RadioConfig {
            loss_prob: loss,
            ..RadioConfig::default()
        };
        let out = run_with(vec![w.clone()], None, radio, 20.0, 2, &[]);
        // a node alone still hears itself, so observations keep flowing
        let late = live(&out).filter(|e| e.t_us > 15_000_000).count();
        assert!(late > 0, "loss {loss}: no observations late in the run");
    }
}

#[test]
fn skewed_clocks_still_track() {
    let w = Walker::point_mass(1, 800.0, vec![Waypoint::new(1.5, 0.9, 5.0), Waypoint::new(1.5, 17.7, 21.8)]);
    let topo = topo();
    let sc = Scenario::new(vec![w]);
    let models = sc.sensor_models(topo.sensors.len(), 4).unwrap();
    let f = build_algorithm("centroid-tracker", &[], &topo, &models, 8).unwrap();
    let mut cfg = SimConfig::new(8, 21.8, 4);
    // up to 6 ms either way, including clocks clamped at zero on start
    cfg.clock_skew_us = (0..30).map(|i| (i % 5 - 2) * 3_000).collect();
    let out = Engine::new(topo, RadioConfig::default(), &sc, cfg, f).unwrap().run();
    let tracks: Vec<_> = out.tracks().copied().collect();
    let m = evaluate(&tracks, &out.truth_frames(), 5_000_000);
    assert!(m.rmse_m.unwrap() <= 0.3, "{m:?}");
    assert!(m.count_accuracy >= 0.95, "{m:?}");
    assert_eq!(m.id_switches, 0);
}

#[test]
fn pir_gate_can_be_switched_off() {
    let w = Walker::point_mass(1, 800.0, vec![Waypoint::new(1.5, 1.0, 6.0), Waypoint::new(1.5, 15.0, 20.0)]);
    let out = run_with(vec![w], None, RadioConfig::default(), 20.0, 1, &[("pir_gate", "false")]);
    assert!(out.tracks().any(|e| e.state == TrackState::Confirmed));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Every centroid lies in the bounding box of the sensors loaded at
    /// that instant, and the distributed tracker agrees with the oracle.
    #[test]
    fn centroids_stay_inside_the_loaded_sensors(
        x0 in 0.7f64..2.3, y0 in 0.7f64..6.0,
        dx in -0.5f64..0.5, dy in 0.0f64..8.0,
    ) {
        let w = Walker::point_mass(1, 800.0, vec![Waypoint::new(x0, y0, 6.0), Waypoint::new((x0 + dx).clamp(0.7, 2.3), y0 + dy, 10.0)]);
        let out = run_with(vec![w.clone()], Some(ideal()), RadioConfig::ideal(), 10.0, 1, &[]);
        let topo = topo();
        for e in live(&out) {
            let forces = world_forces(&topo, std::slice::from_ref(&w), e.t_us as f64 * 1e-6);
            let loaded: Vec<Point> = topo.sensors.iter().zip(&forces).filter(|(_, f)| **f > 0.0).map(|(s, _)| s.pos).collect();
            let lo = loaded.iter().fold(Point::new(f64::MAX, f64::MAX), |a, p| Point::new(a.x.min(p.x), a.y.min(p.y)));
            let hi = loaded.iter().fold(Point::new(f64::MIN, f64::MIN), |a, p| Point::new(a.x.max(p.x), a.y.max(p.y)));
            prop_assert!(e.pos.x >= lo.x - 1e-9 && e.pos.x <= hi.x + 1e-9 && e.pos.y >= lo.y - 1e-9 && e.pos.y <= hi.y + 1e-9);
        }
    }
}
