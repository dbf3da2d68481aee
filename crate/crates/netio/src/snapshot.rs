//! What connected clients see: a snapshot per tick, plus a one-off summary
//! of the loaded show when they connect.

use std::collections::BTreeMap;

use regie_core::cueengine::{CueId, LightSetting, Placement};
use regie_core::motionplayer::{PlayerOutput, SequencePlayback};
use regie_core::scene::{AvatarSource, Goal, Pose, SocketRef};
use regie_core::stagemath::OffsetTransform;
use regie_core::world::{LoggedEffect, World};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvatarSnapshot {
    pub root: Pose,
    pub offset: OffsetTransform,
    pub visible: bool,
    pub source: AvatarSource,
    pub appearance: String,
    pub player: Option<PlayerOutput>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropSnapshot {
    pub pose: Pose,
    pub attached: Option<SocketRef>,
    pub visible: bool,
    pub light: Option<LightSetting>,
    pub audio_playing: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraSnapshot {
    pub pose: Pose,
    pub attached: Option<SocketRef>,
    pub fade_level: f64,
}

/// Immutable copy of the world after one tick. Maps are ordered, so equal
/// worlds serialize to equal bytes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateSnapshot {
    pub tick: u64,
    pub cuelist: String,
    pub pointer: i64,
    pub cue: Option<CueId>,
    pub avatars: BTreeMap<String, AvatarSnapshot>,
    pub props: BTreeMap<String, PropSnapshot>,
    pub cameras: BTreeMap<String, CameraSnapshot>,
    /// Effective bypass flag of every Set, by cue.
    pub bypass: BTreeMap<CueId, Vec<bool>>,
    pub sequences: Vec<SequencePlayback>,
    pub effects: Vec<LoggedEffect>,
    pub errors: Vec<String>,
    /// Digest of the cue engine state alone.
    pub state_hash: String,
}

fn attachment(placement: &Placement) -> Option<SocketRef> {
    match placement {
        Placement::Free(_) => None,
        Placement::Attached(s) => Some(s.clone()),
    }
}

pub fn snapshot(world: &World) -> StateSnapshot {
    let engine = world.engine();
    let state = engine.state();
    let cuesheet = engine.cuesheet();
    let placement_pose = |p: &Placement| state.placement_pose(p, &cuesheet.cast.sockets, |id| world.live_root(id));

    let avatars = state
        .avatars
        .iter()
        .map(|(id, a)| {
            let snap = AvatarSnapshot {
                root: world.avatar_world_root(id).unwrap_or(Pose::IDENTITY),
                offset: a.offset,
                visible: a.visible,
                source: a.source.clone(),
                appearance: a.appearance.clone(),
                player: world.player_output(id).cloned(),
            };
            (id.clone(), snap)
        })
        .collect();
    let props = state
        .props
        .iter()
        .map(|(id, p)| {
            let snap = PropSnapshot {
                pose: placement_pose(&p.placement),
                attached: attachment(&p.placement),
                visible: p.visible,
                light: p.light,
                audio_playing: p.audio_playing,
            };
            (id.clone(), snap)
        })
        .collect();
    let cameras = state
        .cameras
        .iter()
        .map(|(id, c)| {
            let snap = CameraSnapshot {
                pose: placement_pose(&c.placement),
                attached: attachment(&c.placement),
                fade_level: c.fade_level,
            };
            (id.clone(), snap)
        })
        .collect();
    let bypass = cuesheet
        .cues
        .values()
        .map(|cue| (cue.id, (0..cue.sets.len()).map(|i| state.is_bypassed(cue, i)).collect()))
        .collect();

    StateSnapshot {
        tick: world.tick_count(),
        cuelist: state.active_cuelist.clone(),
        pointer: state.pointer_index(),
        cue: engine.current_cue().map(|c| c.id),
        avatars,
        props,
        cameras,
        bypass,
        sequences: world.sequences().to_vec(),
        effects: world.recent_effects().cloned().collect(),
        errors: world.recent_errors().cloned().collect(),
        state_hash: state.digest(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetSummary {
    pub kind: &'static str,
    pub label: String,
    pub bypass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CueSummary {
    pub label: String,
    pub sets: Vec<SetSummary>,
}

/// Static description of the loaded show, for operator displays.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShowSummary {
    pub level: String,
    pub goals: Vec<Goal>,
    pub cuelists: BTreeMap<String, Vec<CueId>>,
    pub cues: BTreeMap<CueId, CueSummary>,
}

pub fn show_summary(world: &World) -> ShowSummary {
    let engine = world.engine();
    let cues = engine
        .cuesheet()
        .cues
        .values()
        .map(|cue| {
            let sets = cue
                .sets
                .iter()
                .map(|s| SetSummary {
                    kind: s.body.kind(),
                    label: s.body.summary(),
                    bypass: s.bypass,
                })
                .collect();
            (
                cue.id,
                CueSummary {
                    label: cue.label.clone(),
                    sets,
                },
            )
        })
        .collect();
    ShowSummary {
        level: engine.level().name.clone(),
        goals: engine.level().goals().to_vec(),
        cuelists: engine.cuesheet().cuelists.clone(),
        cues,
    }
}

/// Server to client messages on the broadcast channel.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Show(ShowSummary),
    Snapshot(StateSnapshot),
    Error { message: String },
}

impl ServerMessage {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages always serialize")
    }
}

