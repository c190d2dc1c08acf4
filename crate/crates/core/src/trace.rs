//! Line-oriented trace files.
//!
//! ```text
//! #version 1
//! #tiles_x 5
//! ...
//! S 0 17 1043
//! P 125000 3 1
//! A 250000 4 L 0 3 0
//! T 250000 1 900 3300
//! ```

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::floor::FloorTopology;
use crate::ids::{NodeId, PirId, SensorId};
use crate::node::{Actuation, ActuationKind};
use crate::physics::{AdcSample, PirEvent};

pub const TRACE_VERSION: u32 = 1;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unsupported trace version {0}")]
    Version(u32),
    #[error("trace was recorded on {trace}, loaded floor is {loaded}")]
    TopologyMismatch { trace: String, loaded: String },
    #[error("{0}")]
    Io(String),
}

fn perr(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub version: u32,
    pub tiles_x: usize,
    pub tiles_y: usize,
    pub tile_side_mm: u64,
    pub sensors_per_node: usize,
    pub pir_section_len_tiles: usize,
    pub rate_hz: u32,
    pub seed: u64,
    pub start_t_us: u64,
    /// Run length; sample ticks cover `[start, start + duration)`.
    pub duration_us: Option<u64>,
    pub model_digest: String,
}

impl TraceHeader {
    pub fn for_topology(topo: &FloorTopology, rate_hz: u32, seed: u64, model_digest: String) -> Self {
        let c = &topo.config;
        TraceHeader {
            version: TRACE_VERSION,
            tiles_x: c.tiles_x,
            tiles_y: c.tiles_y,
            tile_side_mm: (c.tile_side_m * 1000.0).round() as u64,
            sensors_per_node: c.sensors_per_node,
            pir_section_len_tiles: c.pir_section_len_tiles,
            rate_hz,
            seed,
            start_t_us: 0,
            duration_us: None,
            model_digest,
        }
    }

    fn layout(&self) -> String {
        format!(
            "{}x{}@{}mm/{}/{}",
            self.tiles_x, self.tiles_y, self.tile_side_mm, self.sensors_per_node, self.pir_section_len_tiles
        )
    }

    /// Rejects traces recorded on a different floor layout.
    pub fn check_topology(&self, topo: &FloorTopology) -> Result<(), TraceError> {
        let loaded = topo.layout_key();
        if self.layout() != loaded {
            return Err(TraceError::TopologyMismatch {
                trace: self.layout(),
                loaded,
            });
        }
        Ok(())
    }

    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "#version {}", self.version);
        let _ = writeln!(s, "#tiles_x {}", self.tiles_x);
        let _ = writeln!(s, "#tiles_y {}", self.tiles_y);
        let _ = writeln!(s, "#tile_side_mm {}", self.tile_side_mm);
        let _ = writeln!(s, "#sensors_per_node {}", self.sensors_per_node);
        let _ = writeln!(s, "#pir_section_len_tiles {}", self.pir_section_len_tiles);
        let _ = writeln!(s, "#rate_hz {}", self.rate_hz);
        let _ = writeln!(s, "#seed {}", self.seed);
        let _ = writeln!(s, "#start_t_us {}", self.start_t_us);
        if let Some(d) = self.duration_us {
            let _ = writeln!(s, "#duration_us {d}");
        }
        let _ = writeln!(s, "#model_digest {}", self.model_digest);
        s
    }
}

/// Ground-truth walker position in integer millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruthRecord {
    pub t_us: u64,
    pub walker: u32,
    pub x_mm: i64,
    pub y_mm: i64,
}

impl TruthRecord {
    pub fn pos(&self) -> crate::geometry::Point {
        crate::geometry::Point::new(self.x_mm as f64 / 1000.0, self.y_mm as f64 / 1000.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TraceRecord {
    Sample(AdcSample),
    Pir(PirEvent),
    Act(Actuation),
    Truth(TruthRecord),
}

impl TraceRecord {
    pub fn t_us(&self) -> u64 {
        match self {
            TraceRecord::Sample(s) => s.t_us,
            TraceRecord::Pir(p) => p.t_us,
            TraceRecord::Act(a) => a.t_us,
            TraceRecord::Truth(t) => t.t_us,
        }
    }

    /// One line without the trailing newline.
    pub fn serialize(&self) -> String {
        match *self {
            TraceRecord::Sample(s) => format!("S {} {} {}", s.t_us, s.sensor.0, s.value),
            TraceRecord::Pir(p) => format!("P {} {} {}", p.t_us, p.pir.0, p.active as u8),
            TraceRecord::Act(a) => match a.kind {
                ActuationKind::Led { r, g, b } => format!("A {} {} L {r} {g} {b}", a.t_us, a.node.0),
                ActuationKind::Sound { sample_id } => format!("A {} {} D {sample_id}", a.t_us, a.node.0),
            },
            TraceRecord::Truth(t) => format!("T {} {} {} {}", t.t_us, t.walker, t.x_mm, t.y_mm),
        }
    }

    pub fn parse(line: &str) -> Result<Self, String> {
        fn n<T: std::str::FromStr>(what: &str, s: Option<&&str>) -> Result<T, String> {
            let s = s.ok_or_else(|| format!("missing {what}"))?;
            s.parse().map_err(|_| format!("invalid {what} {s:?}"))
        }
        let f: Vec<&str> = line.split(' ').collect();
        let arity = |k: usize| {
            if f.len() == k {
                Ok(())
            } else {
                Err(format!("expected {} fields, found {}", k, f.len()))
            }
        };
        let t_us = n("timestamp", f.get(1))?;
        match f[0] {
            "S" => {
                arity(4)?;
                Ok(TraceRecord::Sample(AdcSample {
                    t_us,
                    sensor: SensorId(n("sensor id", f.get(2))?),
                    value: n("value", f.get(3))?,
                }))
            }
            "P" => {
                arity(4)?;
                let active = match f[3] {
                    "0" => false,
                    "1" => true,
                    o => return Err(format!("invalid PIR state {o:?}")),
                };
                Ok(TraceRecord::Pir(PirEvent {
                    t_us,
                    pir: PirId(n("pir id", f.get(2))?),
                    active,
                }))
            }
            "A" => {
                let node = NodeId(n("node id", f.get(2))?);
                let kind = match f.get(3) {
                    Some(&"L") => {
                        arity(7)?;
                        ActuationKind::Led {
                            r: n("red", f.get(4))?,
                            g: n("green", f.get(5))?,
                            b: n("blue", f.get(6))?,
                        }
                    }
                    Some(&"D") => {
                        arity(5)?;
                        ActuationKind::Sound {
                            sample_id: n("sample id", f.get(4))?,
                        }
                    }
                    other => return Err(format!("unknown actuation kind {other:?}")),
                };
                kind.validate()?;
                Ok(TraceRecord::Act(Actuation { t_us, node, kind }))
            }
            "T" => {
                arity(5)?;
                Ok(TraceRecord::Truth(TruthRecord {
                    t_us,
                    walker: n("walker id", f.get(2))?,
                    x_mm: n("x", f.get(3))?,
                    y_mm: n("y", f.get(4))?,
                }))
            }
            tag => Err(format!("unknown record tag {tag:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub records: Vec<TraceRecord>,
}

/// A leniently parsed trace: every record before `error` is usable.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialTrace {
    pub trace: Trace,
    pub error: Option<TraceError>,
}

impl Trace {
    pub fn serialize(&self) -> String {
        let mut s = self.header.serialize();
        for r in &self.records {
            s.push_str(&r.serialize());
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Trace, TraceError> {
        let p = Self::parse_lenient(text)?;
        match p.error {
            Some(e) => Err(e),
            None => Ok(p.trace),
        }
    }

    /// Stops at the first bad record and keeps what came before it. Header
    /// problems are still fatal.
    pub fn parse_lenient(text: &str) -> Result<PartialTrace, TraceError> {
        let lines: Vec<&str> = text.split('\n').collect();
        // text ends with '\n' iff the final split piece is empty
        let complete = lines.len() - 1;
        let mut fields: Vec<(String, String, usize)> = Vec::new();
        let mut i = 0;
        while i < complete && lines[i].starts_with('#') {
            let (k, v) = lines[i][1..]
                .split_once(' ')
                .ok_or_else(|| perr(i + 1, "header line is not `#key value`"))?;
            fields.push((k.to_string(), v.to_string(), i + 1));
            i += 1;
        }
        let header = parse_header(&fields, i + 1)?;

        let mut records = Vec::new();
        let mut last_t = 0;
        let mut error = None;
        for (j, line) in lines.iter().enumerate().skip(i) {
            let no = j + 1;
            if j == complete {
                if !line.is_empty() {
                    error = Some(perr(no, "truncated record (no terminating newline)"));
                }
                break;
            }
            let rec = match TraceRecord::parse(line) {
                Ok(r) => r,
                Err(m) => {
                    error = Some(perr(no, m));
                    break;
                }
            };
            if rec.t_us() < last_t {
                error = Some(perr(no, format!("timestamp {} precedes {last_t}", rec.t_us())));
                break;
            }
            last_t = rec.t_us();
            records.push(rec);
        }
        Ok(PartialTrace {
            trace: Trace { header, records },
            error,
        })
    }

    pub fn load(path: &Path) -> Result<Trace, TraceError> {
        Self::parse(&read(path)?)
    }

    pub fn load_lenient(path: &Path) -> Result<PartialTrace, TraceError> {
        Self::parse_lenient(&read(path)?)
    }

    /// Checks the header and every id against a topology.
    pub fn validate(&self, topo: &FloorTopology) -> Result<(), TraceError> {
        self.header.check_topology(topo)?;
        let body_start = self.header.serialize().lines().count() + 1;
        for (i, r) in self.records.iter().enumerate() {
            let bad = match r {
                TraceRecord::Sample(s) => (s.sensor.index() >= topo.sensors.len()).then(|| format!("unknown sensor {}", s.sensor)),
                TraceRecord::Pir(p) => (p.pir.index() >= topo.pirs.len()).then(|| format!("unknown PIR {}", p.pir)),
                TraceRecord::Act(a) => (a.node.index() >= topo.nodes.len()).then(|| format!("unknown node {}", a.node)),
                TraceRecord::Truth(_) => None,
            };
            if let Some(m) = bad {
                return Err(perr(body_start + i, m));
            }
        }
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, TraceError> {
    std::fs::read_to_string(path).map_err(|e| TraceError::Io(format!("{}: {e}", path.display())))
}

fn parse_header(fields: &[(String, String, usize)], next_line: usize) -> Result<TraceHeader, TraceError> {
    fn get<T: std::str::FromStr>(fields: &[(String, String, usize)], key: &str) -> Result<Option<T>, TraceError> {
        match fields.iter().find(|f| f.0 == key) {
            None => Ok(None),
            Some((_, v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| perr(*line, format!("invalid value {v:?} for {key}"))),
        }
    }
    let need = |key: &str| perr(next_line, format!("missing required header key {key}"));
    let version: u32 = get(fields, "version")?.ok_or_else(|| need("version"))?;
    if version != TRACE_VERSION {
        return Err(TraceError::Version(version));
    }
    let model_digest: String = get(fields, "model_digest")?.ok_or_else(|| need("model_digest"))?;
    Ok(TraceHeader {
        version,
        tiles_x: get(fields, "tiles_x")?.ok_or_else(|| need("tiles_x"))?,
        tiles_y: get(fields, "tiles_y")?.ok_or_else(|| need("tiles_y"))?,
        tile_side_mm: get(fields, "tile_side_mm")?.unwrap_or(600),
        sensors_per_node: get(fields, "sensors_per_node")?.unwrap_or(4),
        pir_section_len_tiles: get(fields, "pir_section_len_tiles")?.unwrap_or(1),
        rate_hz: get(fields, "rate_hz")?.ok_or_else(|| need("rate_hz"))?,
        seed: get(fields, "seed")?.ok_or_else(|| need("seed"))?,
        start_t_us: get(fields, "start_t_us")?.unwrap_or(0),
        duration_us: get(fields, "duration_us")?,
        model_digest,
    })
}

/// Streams records into a temporary file next to `path`; the trace only
/// appears under its final name once [`TraceWriter::finish`] succeeds.
pub struct TraceWriter {
    file: std::io::BufWriter<tempfile::NamedTempFile>,
    path: PathBuf,
    last_t: u64,
    records: u64,
}

impl TraceWriter {
    pub fn create(path: &Path, header: &TraceHeader) -> Result<Self, TraceError> {
        let dir = match path.parent() {
            Some(d) if !d.as_os_str().is_empty() => d,
            _ => Path::new("."),
        };
        let tmp = tempfile::Builder::new()
            .prefix(".trace-")
            .tempfile_in(dir)
            .map_err(|e| TraceError::Io(format!("{}: {e}", dir.display())))?;
        let mut w = TraceWriter {
            file: std::io::BufWriter::new(tmp),
            path: path.to_path_buf(),
            last_t: 0,
            records: 0,
        };
        w.write_raw(header.serialize().as_bytes())?;
        Ok(w)
    }

    fn write_raw(&mut self, bytes: &[u8]) -> Result<(), TraceError> {
        self.file
            .write_all(bytes)
            .map_err(|e| TraceError::Io(format!("{}: {e}", self.path.display())))
    }

    pub fn write(&mut self, rec: &TraceRecord) -> Result<(), TraceError> {
        if rec.t_us() < self.last_t {
            return Err(TraceError::Io(format!(
                "record at {} written after {}",
                rec.t_us(),
                self.last_t
            )));
        }
        self.last_t = rec.t_us();
        self.records += 1;
        let mut line = rec.serialize();
        line.push('\n');
        self.write_raw(line.as_bytes())
    }

    pub fn records_written(&self) -> u64 {
        self.records
    }

    pub fn finish(self) -> Result<PathBuf, TraceError> {
        let io = |e: String| TraceError::Io(e);
        let tmp = self.file.into_inner().map_err(|e| io(e.to_string()))?;
        tmp.as_file().sync_all().map_err(|e| io(e.to_string()))?;
        tmp.persist(&self.path).map_err(|e| io(e.to_string()))?;
        Ok(self.path)
    }
}

/// Writes a whole trace atomically.
pub fn record<'a>(
    path: &Path,
    header: &TraceHeader,
    records: impl IntoIterator<Item = &'a TraceRecord>,
) -> Result<PathBuf, TraceError> {
    let mut w = TraceWriter::create(path, header)?;
    for r in records {
        w.write(r)?;
    }
    w.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header() -> TraceHeader {
        TraceHeader {
            version: 1,
            tiles_x: 5,
            tiles_y: 31,
            tile_side_mm: 600,
            sensors_per_node: 4,
            pir_section_len_tiles: 1,
            rate_hz: 8,
            seed: 42,
            start_t_us: 0,
            duration_us: Some(10_000_000),
            model_digest: "ab".repeat(32),
        }
    }

    fn arb_record() -> impl Strategy<Value = TraceRecord> {
        let t = 0u64..u64::MAX / 2;
        prop_oneof![
            (t.clone(), 0u32..200, 0u16..=4095).prop_map(|(t_us, s, value)| TraceRecord::Sample(AdcSample {
                t_us,
                sensor: SensorId(s),
                value
            })),
            (t.clone(), 0u32..40, any::<bool>()).prop_map(|(t_us, p, active)| TraceRecord::Pir(PirEvent {
                t_us,
                pir: PirId(p),
                active
            })),
            (t.clone(), 0u32..40, 0u8..=3, 0u8..=3, 0u8..=3).prop_map(|(t_us, n, r, g, b)| TraceRecord::Act(Actuation {
                t_us,
                node: NodeId(n),
                kind: ActuationKind::Led { r, g, b }
            })),
            (t.clone(), 0u32..40, any::<u32>()).prop_map(|(t_us, n, sample_id)| TraceRecord::Act(Actuation {
                t_us,
                node: NodeId(n),
                kind: ActuationKind::Sound { sample_id }
            })),
            (t, any::<u32>(), -100_000i64..100_000, -100_000i64..100_000).prop_map(|(t_us, walker, x_mm, y_mm)| {
                TraceRecord::Truth(TruthRecord { t_us, walker, x_mm, y_mm })
            }),
        ]
    }

    proptest! {
        #[test]
        fn record_roundtrip(r in arb_record()) {
            prop_assert_eq!(TraceRecord::parse(&r.serialize()), Ok(r));
        }

        #[test]
        fn trace_roundtrip(mut recs in proptest::collection::vec(arb_record(), 0..50)) {
            recs.sort_by_key(|r| r.t_us());
            let t = Trace { header: header(), records: recs };
            let text = t.serialize();
            prop_assert_eq!(Trace::parse(&text), Ok(t.clone()));
            prop_assert_eq!(Trace::parse(&text).unwrap().serialize(), text);
        }
    }

    #[test]
    fn header_only_trace() {
        let t = Trace {
            header: header(),
            records: vec![],
        };
        let text = t.serialize();
        assert!(text.lines().all(|l| l.starts_with('#')));
        assert_eq!(Trace::parse(&text), Ok(t));
    }

    #[test]
    fn truncated_last_line_reports_its_number() {
        let mut text = header().serialize();
        let first_record_line = text.lines().count() + 1;
        text.push_str("S 0 1 1000\nS 0 2 1001\nS 125000 1 99");
        let e = Trace::parse(&text).unwrap_err();
        assert_eq!(e, perr(first_record_line + 2, "truncated record (no terminating newline)"));
        let p = Trace::parse_lenient(&text).unwrap();
        assert_eq!(p.trace.records.len(), 2);
        assert!(p.error.is_some());
    }

    #[test]
    fn structured_errors() {
        let h = header().serialize();
        let n = h.lines().count();
        let e = Trace::parse(&format!("{h}S 10 1 5\nS 9 1 5\n")).unwrap_err();
        assert!(matches!(e, TraceError::Parse { line, .. } if line == n + 2));
        let e = Trace::parse(&format!("{h}X 10 1 5\n")).unwrap_err();
        assert!(matches!(e, TraceError::Parse { line, .. } if line == n + 1));
        let e = Trace::parse(&h.replace("#version 1", "#version 7")).unwrap_err();
        assert_eq!(e, TraceError::Version(7));
        let e = Trace::parse(&h.replace("#seed 42\n", "")).unwrap_err();
        assert!(matches!(e, TraceError::Parse { message, .. } if message.contains("seed")));
        let e = Trace::parse(&format!("{h}A 10 1 L 9 0 0\n")).unwrap_err();
        assert!(matches!(e, TraceError::Parse { .. }));
    }

    #[test]
    fn topology_mismatch_rejected() {
        use crate::floor::{build_floor, FloorConfig};
        use crate::radio::RadioConfig;
        let topo = build_floor(&FloorConfig::default(), &RadioConfig::default()).unwrap();
        assert_eq!(header().check_topology(&topo), Ok(()));
        let mut h = header();
        h.tiles_y = 11;
        assert!(matches!(h.check_topology(&topo), Err(TraceError::TopologyMismatch { .. })));
        let t = Trace {
            header: header(),
            records: vec![TraceRecord::Sample(AdcSample {
                t_us: 0,
                sensor: SensorId(120),
                value: 3,
            })],
        };
        assert!(matches!(t.validate(&topo), Err(TraceError::Parse { .. })));
    }

    #[test]
    fn writer_is_atomic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.trace");
        let mut w = TraceWriter::create(&path, &header()).unwrap();
        w.write(&TraceRecord::Sample(AdcSample {
            t_us: 5,
            sensor: SensorId(0),
            value: 1,
        }))
        .unwrap();
        assert!(!path.exists());
        drop(w);
        assert!(!path.exists());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);

        record(&path, &header(), &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), header().serialize());
    }
}
