#![allow(dead_code)]

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpStream};
use std::sync::Arc;
use std::time::{Duration, Instant};

use corridor_core::algorithms::build_algorithm;
use corridor_core::*;
use serde_json::{json, Value};

pub fn topo() -> Arc<FloorTopology> {
    Arc::new(build_floor(&FloorConfig::default(), &RadioConfig::default()).unwrap())
}

pub fn engine(walkers: Vec<Walker>, rate: u32, dur_s: Option<f64>, algorithm: &str) -> Engine {
    let topo = topo();
    let sc = Scenario::new(walkers);
    let models = sc.sensor_models(topo.sensors.len(), 1).unwrap();
    let f = build_algorithm(algorithm, &[], &topo, &models, rate).unwrap();
    let mut cfg = SimConfig::new(rate, dur_s.unwrap_or(1.0), 1);
    cfg.duration_us = dur_s.map(|d| (d * 1e6).round() as u64);
    Engine::new(topo, RadioConfig::default(), &sc, cfg, f).unwrap()
}

/// Line-oriented test client.
pub struct Client {
    w: TcpStream,
    r: BufReader<TcpStream>,
    next_req: u64,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> Client {
        let s = TcpStream::connect(addr).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(10))).unwrap();
        Client {
            r: BufReader::new(s.try_clone().unwrap()),
            w: s,
            next_req: 1,
        }
    }

    pub fn send_raw(&mut self, line: &str) {
        self.w.write_all(line.as_bytes()).unwrap();
        self.w.write_all(b"\n").unwrap();
    }

    /// Sends a command with a fresh `req`; returns it.
    pub fn send(&mut self, mut v: Value) -> u64 {
        let req = self.next_req;
        self.next_req += 1;
        v["req"] = json!(req);
        self.send_raw(&v.to_string());
        req
    }

    /// Next line, or `None` on EOF or timeout.
    pub fn recv(&mut self) -> Option<Value> {
        let mut line = String::new();
        match self.r.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(serde_json::from_str(&line).unwrap()),
        }
    }

    pub fn recv_line(&mut self) -> Option<String> {
        let mut line = String::new();
        match self.r.read_line(&mut line) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(line),
        }
    }

    /// Reads until the ACK or ERROR for `req`, returning it plus whatever
    /// came before.
    pub fn answer(&mut self, req: u64) -> (Value, Vec<Value>) {
        let mut before = Vec::new();
        let deadline = Instant::now() + Duration::from_secs(10);
        while Instant::now() < deadline {
            let v = self.recv().expect("connection open");
            let t = v["type"].as_str().unwrap_or("");
            if (t == "ACK" || t == "ERROR") && v["req"] == json!(req) {
                return (v, before);
            }
            before.push(v);
        }
        panic!("no answer for request {req}");
    }

    pub fn request(&mut self, v: Value) -> Value {
        let req = self.send(v);
        self.answer(req).0
    }

    pub fn hello(&mut self, role: &str) -> Value {
        self.request(json!({"type": "HELLO", "version": PROTOCOL_VERSION_FOR_TESTS, "role": role}))
    }
}

pub const PROTOCOL_VERSION_FOR_TESTS: u32 = corridor_core::gateway::PROTOCOL_VERSION;

pub fn walker_json(id: u32, x: f64, y0: f64, y1: f64, t0: f64, t1: f64) -> Value {
    json!({
        "id": id,
        "weight_n": 800.0,
        "path": [{"pos": {"x": x, "y": y0}, "t_s": t0}, {"pos": {"x": x, "y": y1}, "t_s": t1}],
        "mode": "PointMass"
    })
}
