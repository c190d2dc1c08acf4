//! Multi-client TCP gateway: a global live view of the floor plus a
//! control surface, speaking newline-delimited JSON.
//!
//! Observers may subscribe and take snapshots. One controller at a time
//! may change the scenario. See `docs/protocol.md` for the wire format.

pub mod monitor;
pub mod protocol;
pub mod queue;
mod server;

pub use monitor::FloorMonitor;
pub use protocol::{ClientMsg, FloorSnapshot, Role, ServerMsg, Topic, PROTOCOL_VERSION};
pub use server::{serve, ServeOptions, ServerHandle, ServerStats, DEFAULT_PORT};
