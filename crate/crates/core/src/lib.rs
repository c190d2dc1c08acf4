//! Simulation core for an instrumented hallway: load-sensor floor, PIR
//! walls, actuators and wireless nodes running in-network algorithms.

pub mod algorithms;
pub mod config;
pub mod engine;
pub mod floor;
pub mod gateway;
pub mod geometry;
pub mod ids;
pub mod node;
pub mod physics;
pub mod radio;
pub mod rng;
pub mod scenario;
pub mod trace;
pub mod tracking;

pub use config::DeploymentConfig;
pub use floor::{build_floor, Corner, FloorConfig, FloorTopology};
pub use geometry::{Point, Rect};
pub use ids::{ActuatorId, NodeId, PirId, SensorId, TileId};
pub use node::{Actuation, ActuationKind, NodeAlgorithm, NodeContext};
pub use physics::{AdcSample, PirEvent, SensorModel, Walker, WalkerMode, Waypoint};
pub use radio::{NodeMsg, RadioConfig};
pub use scenario::Scenario;
pub use tracking::{Track, TrackEvent, TrackState, TrackerParams};
pub use engine::{AlgorithmFactory, Engine, EngineCommand, Output, RunOutput, SimConfig};
pub use trace::{Trace, TraceHeader, TraceRecord};
