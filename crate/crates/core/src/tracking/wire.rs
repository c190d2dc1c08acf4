//! Radio payloads of the distributed tracker. Little-endian, fixed layout.
//!
//! ```text
//! cluster: 0x01 round:u32 leader:u16 ttl:u8 origin:u16 pir:u16 pir_age_ms:u16 n:u8
//!          n x (sensor:u16 deviation:f32)
//! track:   0x02 id:u32 owner:u16 x:f32 y:f32 t_us:u64 hits:u16 misses:u8 state:u8 round:u32
//! ```

use thiserror::Error;

use crate::ids::{NodeId, PirId, SensorId};
use crate::radio::MAX_PAYLOAD;

use super::TrackState;

const TAG_CLUSTER: u8 = 1;
const TAG_TRACK: u8 = 2;
const CLUSTER_HEADER: usize = 15;
const REPORT_LEN: usize = 6;
const NO_PIR: u16 = u16::MAX;

/// Reports that fit into one cluster message.
pub const MAX_REPORTS: usize = (MAX_PAYLOAD - CLUSTER_HEADER) / REPORT_LEN;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("empty payload")]
    Empty,
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("truncated message")]
    Truncated,
    #[error("invalid track state {0}")]
    BadState(u8),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WireReport {
    pub sensor: SensorId,
    pub deviation: f32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterMsg {
    pub round_no: u32,
    pub cluster_leader: NodeId,
    pub hop_ttl: u8,
    /// Node whose sensors produced the reports; survives forwarding.
    pub origin: NodeId,
    /// Sender's PIR and milliseconds since it last saw motion.
    pub pir: Option<(PirId, u16)>,
    pub reports: Vec<WireReport>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackMsg {
    pub track_id: u32,
    pub owner: NodeId,
    pub x: f32,
    pub y: f32,
    pub t_us: u64,
    pub hits: u16,
    pub misses: u8,
    pub state: TrackState,
    pub round_no: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrackerMsg {
    Cluster(ClusterMsg),
    Track(TrackMsg),
}

fn state_code(s: TrackState) -> u8 {
    match s {
        TrackState::Tentative => 0,
        TrackState::Confirmed => 1,
        TrackState::Dead => 2,
    }
}

impl ClusterMsg {
    /// Encodes, keeping only the strongest reports that fit the payload.
    pub fn encode(&self) -> Vec<u8> {
        let mut reports = self.reports.clone();
        reports.sort_by(|a, b| {
            b.deviation
                .total_cmp(&a.deviation)
                .then(a.sensor.cmp(&b.sensor))
        });
        reports.truncate(MAX_REPORTS);
        let mut out = Vec::with_capacity(CLUSTER_HEADER + REPORT_LEN * reports.len());
        out.push(TAG_CLUSTER);
        out.extend(self.round_no.to_le_bytes());
        out.extend((self.cluster_leader.0 as u16).to_le_bytes());
        out.push(self.hop_ttl);
        out.extend((self.origin.0 as u16).to_le_bytes());
        let (pir, age) = self.pir.map_or((NO_PIR, 0), |(p, a)| (p.0 as u16, a));
        out.extend(pir.to_le_bytes());
        out.extend(age.to_le_bytes());
        out.push(reports.len() as u8);
        for r in &reports {
            out.extend((r.sensor.0 as u16).to_le_bytes());
            out.extend(r.deviation.to_le_bytes());
        }
        out
    }
}

impl TrackMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(31);
        out.push(TAG_TRACK);
        out.extend(self.track_id.to_le_bytes());
        out.extend((self.owner.0 as u16).to_le_bytes());
        out.extend(self.x.to_le_bytes());
        out.extend(self.y.to_le_bytes());
        out.extend(self.t_us.to_le_bytes());
        out.extend(self.hits.to_le_bytes());
        out.push(self.misses);
        out.push(state_code(self.state));
        out.extend(self.round_no.to_le_bytes());
        out
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], WireError> {
        if self.0.len() < N {
            return Err(WireError::Truncated);
        }
        let (head, rest) = self.0.split_at(N);
        self.0 = rest;
        Ok(head.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn f32(&mut self) -> Result<f32, WireError> {
        Ok(f32::from_le_bytes(self.take()?))
    }
}

pub fn decode(payload: &[u8]) -> Result<TrackerMsg, WireError> {
    let (&tag, rest) = payload.split_first().ok_or(WireError::Empty)?;
    let mut r = Reader(rest);
    match tag {
        TAG_CLUSTER => {
            let round_no = r.u32()?;
            let cluster_leader = NodeId(r.u16()? as u32);
            let hop_ttl = r.u8()?;
            let origin = NodeId(r.u16()? as u32);
            let pir = r.u16()?;
            let age = r.u16()?;
            let n = r.u8()? as usize;
            let mut reports = Vec::with_capacity(n);
            for _ in 0..n {
                reports.push(WireReport {
                    sensor: SensorId(r.u16()? as u32),
                    deviation: r.f32()?,
                });
            }
            Ok(TrackerMsg::Cluster(ClusterMsg {
                round_no,
                cluster_leader,
                hop_ttl,
                origin,
                pir: (pir != NO_PIR).then_some((PirId(pir as u32), age)),
                reports,
            }))
        }
        TAG_TRACK => Ok(TrackerMsg::Track(TrackMsg {
            track_id: r.u32()?,
            owner: NodeId(r.u16()? as u32),
            x: r.f32()?,
            y: r.f32()?,
            t_us: r.u64()?,
            hits: r.u16()?,
            misses: r.u8()?,
            state: match r.u8()? {
                0 => TrackState::Tentative,
                1 => TrackState::Confirmed,
                2 => TrackState::Dead,
                s => return Err(WireError::BadState(s)),
            },
            round_no: r.u32()?,
        })),
        t => Err(WireError::UnknownTag(t)),
    }
}
