//! Show-control core for a mixed live/virtual stage: level goals, rigid
//! offsets, the cue engine, the salient/idle animation player and device
//! routing. Everything here is synchronous and free of I/O; the network
//! crate owns sockets and the clock.

mod entries;

pub mod cueengine;
pub mod devio;
pub mod motionplayer;
pub mod osc;
pub mod scene;
pub mod stagemath;
pub mod world;

pub use cueengine::{apply_cue, parse_cuesheet, Cue, CueError, CueId, Cuesheet, CuesheetError, Effect, Engine, EngineState};
pub use devio::{Action, DeviceConfig, InputEvent};
pub use motionplayer::{load_clip_catalog, ClipCatalog, PlayerOutput, PlayerState};
pub use osc::{OscArg, OscMessage};
pub use scene::{load_level, GoalKind, Level, Pose, Vec3};
pub use stagemath::{apply_offset, compose, compute_offset, OffsetTransform, SkeletonFrame};
pub use world::{Command, World};
