//! Wire I/O and the service runtime around the show-control core: the OSC
//! codec, mocap ingestion, state snapshots and the fixed-rate engine loop.

pub mod config;
pub mod mocap;
pub mod osc;
pub mod service;
pub mod snapshot;

pub use config::{load_show, ServiceConfig, Show, StartupError};
pub use osc::{decode_osc, encode_osc, MalformedPacket};
pub use service::{run_service, start_service, ServiceHandle};
pub use snapshot::{snapshot, ServerMessage, StateSnapshot};
