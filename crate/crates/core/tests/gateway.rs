mod common;

use std::time::Duration;

use common::{engine, walker_json, Client};
use corridor_core::gateway::{serve, ServeOptions};
use corridor_core::physics::Walker;
use corridor_core::Waypoint;
use serde_json::{json, Value};

fn paused() -> ServeOptions {
    ServeOptions {
        start_paused: true,
        speed: None,
        ..ServeOptions::default()
    }
}

fn of_type<'a>(vs: &'a [Value], t: &str) -> Vec<&'a Value> {
    vs.iter().filter(|v| v["type"] == t).collect()
}

/// Reads everything up to and including the final METRICS line.
fn until_final(c: &mut Client) -> Vec<String> {
    let mut lines = Vec::new();
    while let Some(l) = c.recv_line() {
        let done = l.contains("\"type\":\"METRICS\"") && l.contains("\"final\":true");
        lines.push(l);
        if done {
            return lines;
        }
    }
    panic!("connection ended before the final METRICS");
}

#[test]
fn observers_see_identical_delta_streams() {
    let w = Walker::point_mass(1, 800.0, vec![Waypoint::new(0.9, 1.0, 0.5), Waypoint::new(0.9, 6.0, 5.5)]);
    let h = serve(engine(vec![w], 8, Some(6.0), "centroid-tracker"), "127.0.0.1:0", paused()).unwrap();
    let mut ctl = Client::connect(h.local_addr());
    let mut a = Client::connect(h.local_addr());
    let mut b = Client::connect(h.local_addr());
    assert_eq!(ctl.hello("controller")["type"], "ACK");
    for c in [&mut a, &mut b] {
        assert_eq!(c.hello("observer")["role"], "observer");
        let sub = c.request(json!({"type": "SUBSCRIBE", "topics": ["floor", "metrics"]}));
        assert_eq!(sub["type"], "ACK");
    }
    assert_eq!(ctl.request(json!({"type": "RESUME"}))["type"], "ACK");
    let la = until_final(&mut a);
    let lb = until_final(&mut b);
    let deltas = |ls: &[String]| -> Vec<String> {
        ls.iter().filter(|l| l.contains("\"type\":\"STATE_DELTA\"")).cloned().collect()
    };
    let (da, db) = (deltas(&la), deltas(&lb));
    // 10 Hz over 6 s plus the closing cut
    assert!(da.len() >= 60, "{}", da.len());
    assert_eq!(da, db);
    // observers never see ground truth
    assert!(la.iter().all(|l| !l.contains("\"walkers\"")));
    h.shutdown();
}

#[test]
fn privileges_and_lease() {
    let h = serve(engine(vec![], 8, None, "idle"), "127.0.0.1:0", paused()).unwrap();
    let mut obs = Client::connect(h.local_addr());
    let mut ctl = Client::connect(h.local_addr());
    let mut ctl2 = Client::connect(h.local_addr());

    let r = obs.request(json!({"type": "SNAPSHOT"}));
    assert_eq!(r["code"], "hello_required");
    obs.hello("observer");
    let r = obs.request(json!({"type": "SPAWN_WALKER", "walker": walker_json(1, 0.9, 1.0, 5.0, 0.0, 4.0)}));
    assert_eq!((r["type"].as_str(), r["code"].as_str()), (Some("ERROR"), Some("permission_denied")));

    assert_eq!(ctl.hello("controller")["type"], "ACK");
    let r = ctl2.hello("controller");
    assert_eq!(r["code"], "lease_held");
    drop(ctl);
    // the lease frees when the holder disconnects
    let mut got = false;
    for _ in 0..50 {
        if ctl2.hello("controller")["type"] == "ACK" {
            got = true;
            break;
        }
        std::thread::sleep(Duration::from_millis(20));
    }
    assert!(got);
    h.shutdown();
}

#[test]
fn malformed_lines_keep_the_connection() {
    let h = serve(engine(vec![], 8, None, "idle"), "127.0.0.1:0", paused()).unwrap();
    let mut c = Client::connect(h.local_addr());
    c.send_raw("this is not json");
    let e = c.recv().unwrap();
    assert_eq!((e["type"].as_str(), e["code"].as_str()), (Some("ERROR"), Some("malformed")));
    assert!(e["req"].is_null());
    c.send_raw(r#"{"type":"TELEPORT","req":41}"#);
    assert_eq!(c.recv().unwrap()["req"], 41);
    assert_eq!(c.hello("observer")["type"], "ACK");
    h.shutdown();
}

#[test]
fn version_mismatch_closes_after_error() {
    let h = serve(engine(vec![], 8, None, "idle"), "127.0.0.1:0", paused()).unwrap();
    let mut c = Client::connect(h.local_addr());
    let r = c.request(json!({"type": "HELLO", "version": 99}));
    assert_eq!(r["code"], "version_mismatch");
    assert!(c.recv_line().is_none());
    h.shutdown();
}

#[test]
fn actuate_is_acked_then_broadcast() {
    let h = serve(engine(vec![], 8, None, "idle"), "127.0.0.1:0", paused()).unwrap();
    let mut ctl = Client::connect(h.local_addr());
    let mut obs = Client::connect(h.local_addr());
    ctl.hello("controller");
    ctl.request(json!({"type": "SUBSCRIBE", "topics": ["actuations"]}));
    obs.hello("observer");
    obs.request(json!({"type": "SUBSCRIBE", "topics": ["actuations"]}));

    let req = ctl.send(json!({"type": "ACTUATE", "node": 3, "led": [0, 3, 0]}));
    let (ack, before) = ctl.answer(req);
    assert_eq!(ack["type"], "ACK");
    assert!(ack["seq"].as_u64().is_some());
    assert!(of_type(&before, "ACTUATION").is_empty());
    let a = ctl.recv().unwrap();
    assert_eq!((a["type"].as_str(), a["node"].as_u64()), (Some("ACTUATION"), Some(3)));
    assert_eq!(a["led"], json!([0, 3, 0]));
    assert_eq!(obs.recv().unwrap(), a);

    // node 29 has no actuator
    let r = ctl.request(json!({"type": "ACTUATE", "node": 29, "led": [1, 0, 0]}));
    assert_eq!(r["code"], "rejected");
    let r = ctl.request(json!({"type": "ACTUATE", "node": 3, "led": [9, 0, 0]}));
    assert_eq!(r["code"], "rejected");
    h.shutdown();
}

#[test]
fn snapshots_reflect_commands_and_hide_truth_from_observers() {
    let h = serve(engine(vec![], 8, None, "idle"), "127.0.0.1:0", paused()).unwrap();
    let mut ctl = Client::connect(h.local_addr());
    let mut obs = Client::connect(h.local_addr());
    ctl.hello("controller");
    obs.hello("observer");

    let req = obs.send(json!({"type": "SNAPSHOT"}));
    obs.answer(req);
    let empty = obs.recv().unwrap();
    assert_eq!(empty["type"], "FLOOR_SNAPSHOT");
    assert!(empty["tracks"].as_array().unwrap().is_empty());
    assert!(empty["pir"].as_array().unwrap().iter().all(|p| p == false));
    assert!(empty["sensors"]
        .as_array()
        .unwrap()
        .iter()
        .all(|s| s.is_null() || s["on"] == false));

    let r = ctl.request(json!({"type": "SPAWN_WALKER", "walker": walker_json(7, 0.9, 1.0, 5.0, 0.0, 4.0), "relative": true}));
    assert_eq!(r["type"], "ACK");
    let req = ctl.send(json!({"type": "SNAPSHOT"}));
    ctl.answer(req);
    let mut s1 = ctl.recv().unwrap();
    s1.as_object_mut().unwrap().remove("req");
    let walkers = s1["walkers"].as_array().unwrap();
    assert_eq!(walkers.len(), 1);
    assert_eq!(walkers[0]["id"], 7);
    let req = ctl.send(json!({"type": "SNAPSHOT"}));
    ctl.answer(req);
    let mut s2 = ctl.recv().unwrap();
    s2.as_object_mut().unwrap().remove("req");
    assert_eq!(s2, s1);

    let req = obs.send(json!({"type": "SNAPSHOT"}));
    obs.answer(req);
    assert!(obs.recv().unwrap().get("walkers").is_none());

    let r = ctl.request(json!({"type": "SPAWN_WALKER", "walker": walker_json(7, 0.9, 1.0, 5.0, 0.0, 4.0)}));
    assert_eq!(r["code"], "rejected");
    assert_eq!(ctl.request(json!({"type": "REMOVE_WALKER", "walker": 7}))["type"], "ACK");
    h.shutdown();
}

#[test]
fn stalled_client_sheds_deltas_without_blocking_the_engine() {
    let opts = ServeOptions {
        queue_capacity: 8,
        ..paused()
    };
    let w = Walker::point_mass(1, 800.0, vec![Waypoint::new(0.9, 1.0, 0.0), Waypoint::new(0.9, 17.0, 16.0)]);
    let h = serve(engine(vec![w], 800, Some(3.0), "idle"), "127.0.0.1:0", opts).unwrap();
    let mut ctl = Client::connect(h.local_addr());
    let mut stalled = Client::connect(h.local_addr());
    stalled.hello("observer");
    stalled.request(json!({"type": "SUBSCRIBE", "topics": ["floor"], "floor_rate_hz": 800}));
    ctl.hello("controller");
    ctl.request(json!({"type": "RESUME"}));
    assert!(h.wait_finished(Some(Duration::from_secs(60))));
    assert_eq!(h.stats().samples, 120 * 800 * 3);
    drop(stalled);
    std::thread::sleep(Duration::from_millis(100));
    h.shutdown();
}

#[test]
fn record_and_replay_over_the_wire() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("wire.trace");
    let w = Walker::point_mass(1, 800.0, vec![Waypoint::new(0.9, 1.0, 0.0), Waypoint::new(0.9, 3.0, 2.0)]);
    let opts = ServeOptions {
        record: Some((path.clone(), true)),
        ..paused()
    };
    let h = serve(engine(vec![w], 8, Some(2.0), "idle"), "127.0.0.1:0", opts).unwrap();
    let mut ctl = Client::connect(h.local_addr());
    ctl.hello("controller");
    ctl.request(json!({"type": "SUBSCRIBE", "topics": ["metrics"]}));
    ctl.request(json!({"type": "RESUME"}));
    let lines = until_final(&mut ctl);
    let last: Value = serde_json::from_str(lines.last().unwrap()).unwrap();
    assert_eq!(last["engine"]["samples"], 120 * 16);
    let trace = corridor_core::Trace::load(&path).unwrap();
    assert_eq!(trace.records.iter().filter(|r| matches!(r, corridor_core::TraceRecord::Sample(_))).count(), 120 * 16);

    let r = ctl.request(json!({"type": "REPLAY", "path": path.to_str().unwrap(), "algorithm": "centroid-tracker"}));
    assert_eq!(r["type"], "ACK");
    let lines = until_final(&mut ctl);
    let last: Value = serde_json::from_str(lines.last().unwrap()).unwrap();
    assert_eq!(last["engine"]["samples"], 120 * 16);
    let r = ctl.request(json!({"type": "REPLAY", "path": "/nonexistent.trace", "algorithm": "idle"}));
    assert_eq!(r["code"], "rejected");
    h.shutdown();
}

#[test]
fn lagged_client_is_resynced_with_a_snapshot() {
    let opts = ServeOptions {
        queue_capacity: 8,
        speed: Some(5.0),
        start_paused: true,
        ..ServeOptions::default()
    };
    let h = serve(engine(vec![], 800, Some(10.0), "idle"), "127.0.0.1:0", opts).unwrap();
    let mut ctl = Client::connect(h.local_addr());
    let mut slow = Client::connect(h.local_addr());
    slow.hello("observer");
    let req = slow.send(json!({"type": "SUBSCRIBE", "topics": ["floor", "metrics"], "floor_rate_hz": 800}));
    ctl.hello("controller");
    ctl.request(json!({"type": "RESUME"}));
    std::thread::sleep(Duration::from_millis(1200));
    let lines = until_final(&mut slow);
    let vs: Vec<Value> = lines.iter().map(|l| serde_json::from_str(l).unwrap()).collect();
    let ack = vs.iter().position(|v| v["type"] == "ACK" && v["req"] == req).unwrap();
    let resync = vs
        .iter()
        .skip(ack + 2)
        .position(|v| v["type"] == "FLOOR_SNAPSHOT" && v.get("req").is_none())
        .map(|i| i + ack + 2)
        .expect("an unsolicited snapshot after the drops");
    assert!(vs[resync + 1..].iter().any(|v| v["type"] == "STATE_DELTA"));
    assert!(h.stats().dropped > 0);
    h.shutdown();
}
