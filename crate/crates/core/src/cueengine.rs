//! The cuesheet and its executor.
//!
//! A cuesheet holds the cast, the device bindings, named cuelists and the
//! cues themselves. Each cue is an ordered list of bypassable Sets; firing a
//! cue applies its live Sets to the [`EngineState`] and yields [`Effect`]s
//! that the runtime carries out (OSC sends, animation triggers, ...).
//!
//! State is always reconstructible: stepping back replays the active cuelist
//! from the initialization state up to the new pointer, using the root poses
//! captured when each cue was fired live.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::devio::{DeviceConfig, DeviceError, RawDevices};
use crate::entries::Entries;
use crate::motionplayer::{SequenceSpec, DEFAULT_BLEND_WINDOW};
use crate::osc::{OscArg, OscMessage};
use crate::scene::{
    AvatarDef, AvatarSource, GoalKind, Level, Pose, PropDef, PropKind, PropMode, SceneError, SocketRef, SocketTable,
};
use crate::stagemath::{self, FadeDirection, OffsetTransform};

pub type CueId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CuesheetError {
    #[error("malformed document at line {line}, column {column}: {message}")]
    MalformedDocument {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("cue key `{0}` is not a positive integer")]
    InvalidCueId(String),
    #[error("duplicate cue id {0}")]
    DuplicateCueId(CueId),
    #[error("duplicate cuelist `{0}`")]
    DuplicateCuelist(String),
    #[error("cuesheet defines no cuelist")]
    NoCuelist,
    #[error("cuelist `{cuelist}` references undefined cue {cue}")]
    UndefinedCueInCuelist { cuelist: String, cue: CueId },
    #[error("{context}: unknown goal `{goal}`")]
    UnknownGoalRef { context: String, goal: String },
    #[error("{context}: goal `{goal}` is a {actual} goal, expected {expected}")]
    GoalKindMismatch {
        context: String,
        goal: String,
        expected: GoalKind,
        actual: GoalKind,
    },
    #[error("{context}: unknown target `{target}`")]
    UnknownTargetRef { context: String, target: String },
    #[error("{context}: unknown socket `{socket}`")]
    UnknownSocket { context: String, socket: String },
    #[error("duplicate cast id `{0}`")]
    DuplicateCastId(String),
    #[error("{context}: {reason}")]
    InvalidSet { context: String, reason: String },
    #[error("{0} gamepads configured, at most 4 are supported")]
    TooManyGamepads(usize),
    #[error("devices: {0}")]
    Device(DeviceError),
    #[error("invalid player settings: {0}")]
    InvalidPlayerSettings(String),
}

impl From<DeviceError> for CuesheetError {
    fn from(e: DeviceError) -> Self {
        match e {
            DeviceError::TooManyGamepads(n) => CuesheetError::TooManyGamepads(n),
            other => CuesheetError::Device(other),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CueError {
    #[error("already at the last cue of the cuelist")]
    EndOfCuelist,
    #[error("already before the first cue")]
    BeforeStart,
    #[error("unknown cuelist `{0}`")]
    UnknownCuelist(String),
    #[error("no set {set} in cue {cue}")]
    UnknownSetRef { cue: CueId, set: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementKind {
    Avatar,
    Prop,
    Camera,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cast {
    pub avatars: Vec<AvatarDef>,
    pub props: Vec<PropDef>,
    pub cameras: Vec<String>,
    pub sockets: SocketTable,
}

impl Cast {
    pub fn avatar(&self, id: &str) -> Option<&AvatarDef> {
        self.avatars.iter().find(|a| a.id == id)
    }

    pub fn prop(&self, id: &str) -> Option<&PropDef> {
        self.props.iter().find(|p| p.id == id)
    }

    pub fn element_kind(&self, id: &str) -> Option<ElementKind> {
        if self.avatar(id).is_some() {
            Some(ElementKind::Avatar)
        } else if self.prop(id).is_some() {
            Some(ElementKind::Prop)
        } else if self.cameras.iter().any(|c| c == id) {
            Some(ElementKind::Camera)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum AvatarAnimation {
    TriggerSalient { salient: String, idle: String },
    SwitchSource(AvatarSource),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LightSetting {
    pub intensity: f64,
    #[serde(default = "white")]
    pub color: [f64; 3],
}

fn white() -> [f64; 3] {
    [1.0, 1.0, 1.0]
}

impl Default for LightSetting {
    fn default() -> Self {
        LightSetting {
            intensity: 1.0,
            color: white(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParticleCommand {
    Restart,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AudioCommand {
    Play,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawAttach", into = "RawAttach")]
pub enum AttachCommand {
    Attach(SocketRef),
    Detach,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum DetachKeyword {
    Detach,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum RawAttach {
    To(SocketRef),
    Keyword(DetachKeyword),
}

impl From<RawAttach> for AttachCommand {
    fn from(raw: RawAttach) -> Self {
        match raw {
            RawAttach::To(s) => AttachCommand::Attach(s),
            RawAttach::Keyword(DetachKeyword::Detach) => AttachCommand::Detach,
        }
    }
}

impl From<AttachCommand> for RawAttach {
    fn from(cmd: AttachCommand) -> Self {
        match cmd {
            AttachCommand::Attach(s) => RawAttach::To(s),
            AttachCommand::Detach => RawAttach::Keyword(DetachKeyword::Detach),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FadeSpec {
    pub direction: FadeDirection,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvatarSet {
    pub target: String,
    pub goal: Option<String>,
    pub visible: Option<bool>,
    pub appearance: Option<String>,
    pub animation: Option<AvatarAnimation>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropSet {
    pub target: String,
    pub goal: Option<String>,
    pub light: Option<LightSetting>,
    pub particles: Option<ParticleCommand>,
    pub audio: Option<AudioCommand>,
    pub visible: Option<bool>,
    pub attach: Option<AttachCommand>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraSet {
    pub target: String,
    pub goal: Option<String>,
    pub fade: Option<FadeSpec>,
    pub attach_to: Option<AttachCommand>,
}

/// What a Set changes. Absent optional fields leave that aspect untouched.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum SetBody {
    Avatar(AvatarSet),
    Prop(PropSet),
    Camera(CameraSet),
    Sequence(SequenceSpec),
    Osc(OscMessage),
}

impl SetBody {
    pub fn kind(&self) -> &'static str {
        match self {
            SetBody::Avatar(_) => "avatar",
            SetBody::Prop(_) => "prop",
            SetBody::Camera(_) => "camera",
            SetBody::Sequence(_) => "sequence",
            SetBody::Osc(_) => "osc",
        }
    }

    /// Short human label for operator displays.
    pub fn summary(&self) -> String {
        match self {
            SetBody::Avatar(s) => format!("avatar {}", s.target),
            SetBody::Prop(s) => format!("prop {}", s.target),
            SetBody::Camera(s) => format!("camera {}", s.target),
            SetBody::Sequence(s) => format!("sequence {} [{}..{}]", s.sequence, s.start_frame, s.end_frame),
            SetBody::Osc(m) => format!("osc {m}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Set {
    pub bypass: bool,
    pub body: SetBody,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cue {
    pub id: CueId,
    pub label: String,
    pub sets: Vec<Set>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cuesheet {
    pub cast: Cast,
    pub devices: DeviceConfig,
    pub cuelists: BTreeMap<String, Vec<CueId>>,
    pub cues: BTreeMap<CueId, Cue>,
    pub blend_window: f64,
}

impl Cuesheet {
    pub fn cuelist(&self, name: &str) -> Option<&[CueId]> {
        self.cuelists.get(name).map(Vec::as_slice)
    }

    /// `Main` when present, otherwise the first cuelist by name.
    pub fn default_cuelist(&self) -> &str {
        if self.cuelists.contains_key("Main") {
            "Main"
        } else {
            self.cuelists.keys().next().map(String::as_str).unwrap_or("")
        }
    }

    pub fn clip_refs(&self) -> impl Iterator<Item = (CueId, usize, &str, &str)> {
        self.cues.values().flat_map(|cue| {
            cue.sets.iter().enumerate().filter_map(move |(i, set)| match &set.body {
                SetBody::Avatar(AvatarSet {
                    animation: Some(AvatarAnimation::TriggerSalient { salient, idle }),
                    ..
                }) => Some((cue.id, i, salient.as_str(), idle.as_str())),
                _ => None,
            })
        })
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCuesheet {
    cast: RawCast,
    #[serde(default)]
    devices: RawDevices,
    #[serde(default)]
    player: Option<RawPlayer>,
    cuelists: Entries<Vec<CueId>>,
    cues: Entries<RawCue>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPlayer {
    blend_window: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCast {
    #[serde(default)]
    avatars: Vec<AvatarDef>,
    #[serde(default)]
    props: Vec<PropDef>,
    #[serde(default)]
    cameras: Vec<String>,
    #[serde(default)]
    sockets: Option<BTreeMap<String, Pose>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCue {
    #[serde(default)]
    label: String,
    #[serde(default)]
    sets: Vec<RawSet>,
}

#[derive(Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
enum RawSet {
    Avatar {
        #[serde(default)]
        bypass: bool,
        target: String,
        goal: Option<String>,
        visible: Option<bool>,
        appearance: Option<String>,
        animation: Option<AvatarAnimation>,
    },
    Prop {
        #[serde(default)]
        bypass: bool,
        target: String,
        goal: Option<String>,
        light: Option<LightSetting>,
        particles: Option<ParticleCommand>,
        audio: Option<AudioCommand>,
        visible: Option<bool>,
        attach: Option<AttachCommand>,
    },
    Camera {
        #[serde(default)]
        bypass: bool,
        target: Option<String>,
        goal: Option<String>,
        fade: Option<FadeSpec>,
        attach_to: Option<AttachCommand>,
    },
    Sequence {
        #[serde(default)]
        bypass: bool,
        sequence: String,
        start_frame: i64,
        end_frame: i64,
        rate: f64,
    },
    Osc {
        #[serde(default)]
        bypass: bool,
        address: String,
        #[serde(default)]
        args: Vec<serde_json::Value>,
    },
}

struct Validator<'a> {
    cast: &'a Cast,
    level: &'a Level,
    errors: Vec<CuesheetError>,
}

impl Validator<'_> {
    fn goal(&mut self, context: &str, goal: &Option<String>, kind: GoalKind) {
        let Some(goal) = goal else { return };
        match self.level.resolve_goal(goal, kind) {
            Ok(_) => {}
            Err(SceneError::GoalKindMismatch { expected, actual, .. }) => {
                self.errors.push(CuesheetError::GoalKindMismatch {
                    context: context.to_string(),
                    goal: goal.clone(),
                    expected,
                    actual,
                })
            }
            Err(_) => self.errors.push(CuesheetError::UnknownGoalRef {
                context: context.to_string(),
                goal: goal.clone(),
            }),
        }
    }

    fn target(&mut self, context: &str, target: &str, kind: ElementKind) -> bool {
        let ok = self.cast.element_kind(target) == Some(kind);
        if !ok {
            self.errors.push(CuesheetError::UnknownTargetRef {
                context: context.to_string(),
                target: target.to_string(),
            });
        }
        ok
    }

    fn socket(&mut self, context: &str, socket: &SocketRef) {
        self.target(context, &socket.avatar, ElementKind::Avatar);
        if !self.cast.sockets.contains(&socket.socket) {
            self.errors.push(CuesheetError::UnknownSocket {
                context: context.to_string(),
                socket: socket.socket.clone(),
            });
        }
    }

    fn invalid(&mut self, context: &str, reason: impl Into<String>) {
        self.errors.push(CuesheetError::InvalidSet {
            context: context.to_string(),
            reason: reason.into(),
        });
    }

    fn set(&mut self, context: &str, raw: RawSet) -> Option<Set> {
        let (bypass, body) = match raw {
            RawSet::Avatar {
                bypass,
                target,
                goal,
                visible,
                appearance,
                animation,
            } => {
                self.target(context, &target, ElementKind::Avatar);
                self.goal(context, &goal, GoalKind::Avatar);
                match &animation {
                    Some(AvatarAnimation::TriggerSalient { salient, idle }) if salient.is_empty() || idle.is_empty() => {
                        self.invalid(context, "salient and idle clip ids must be non-empty")
                    }
                    Some(AvatarAnimation::SwitchSource(AvatarSource::Mocap(s))) if s.is_empty() => {
                        self.invalid(context, "mocap subject must be non-empty")
                    }
                    _ => {}
                }
                let set = AvatarSet {
                    target,
                    goal,
                    visible,
                    appearance,
                    animation,
                };
                (bypass, SetBody::Avatar(set))
            }
            RawSet::Prop {
                bypass,
                target,
                goal,
                light,
                particles,
                audio,
                visible,
                attach,
            } => {
                let kind = self
                    .target(context, &target, ElementKind::Prop)
                    .then(|| self.cast.prop(&target).map(|p| p.kind))
                    .flatten();
                self.goal(context, &goal, GoalKind::Prop);
                if let Some(l) = &light {
                    if kind.is_some() && kind != Some(PropKind::Light) {
                        self.invalid(context, "light settings on a non-light prop");
                    }
                    let in_unit = |v: f64| (0.0..=1.0).contains(&v);
                    if !in_unit(l.intensity) || !l.color.iter().all(|c| in_unit(*c)) {
                        self.invalid(context, "light intensity and color must lie in [0, 1]");
                    }
                }
                if particles.is_some() && kind.is_some() && kind != Some(PropKind::Particles) {
                    self.invalid(context, "particle restart on a non-particle prop");
                }
                if audio.is_some() && kind.is_some() && kind != Some(PropKind::Audio) {
                    self.invalid(context, "audio command on a non-audio prop");
                }
                if let Some(AttachCommand::Attach(s)) = &attach {
                    self.socket(context, s);
                }
                let set = PropSet {
                    target,
                    goal,
                    light,
                    particles,
                    audio,
                    visible,
                    attach,
                };
                (bypass, SetBody::Prop(set))
            }
            RawSet::Camera {
                bypass,
                target,
                goal,
                fade,
                attach_to,
            } => {
                let target = match target.or_else(|| self.cast.cameras.first().cloned()) {
                    Some(t) => t,
                    None => {
                        self.errors.push(CuesheetError::UnknownTargetRef {
                            context: context.to_string(),
                            target: "<camera>".into(),
                        });
                        String::new()
                    }
                };
                if !target.is_empty() {
                    self.target(context, &target, ElementKind::Camera);
                }
                self.goal(context, &goal, GoalKind::Camera);
                if let Some(f) = &fade {
                    if !(f.duration > 0.0 && f.duration.is_finite()) {
                        self.invalid(context, "fade duration must be positive");
                    }
                }
                if let Some(AttachCommand::Attach(s)) = &attach_to {
                    self.socket(context, s);
                }
                let set = CameraSet {
                    target,
                    goal,
                    fade,
                    attach_to,
                };
                (bypass, SetBody::Camera(set))
            }
            RawSet::Sequence {
                bypass,
                sequence,
                start_frame,
                end_frame,
                rate,
            } => {
                let spec = SequenceSpec {
                    sequence,
                    start_frame,
                    end_frame,
                    rate,
                };
                if let Err(e) = spec.validate() {
                    self.invalid(context, e.to_string());
                }
                (bypass, SetBody::Sequence(spec))
            }
            RawSet::Osc { bypass, address, args } => {
                let mut converted = Vec::with_capacity(args.len());
                for (i, v) in args.into_iter().enumerate() {
                    match json_to_osc_arg(&v) {
                        Some(a) => converted.push(a),
                        None => self.invalid(context, format!("OSC argument {i} must be an int32, a float or a string")),
                    }
                }
                let msg = OscMessage {
                    address,
                    args: converted,
                };
                if let Err(e) = msg.validate() {
                    self.invalid(context, e.to_string());
                }
                (bypass, SetBody::Osc(msg))
            }
        };
        Some(Set { bypass, body })
    }
}

fn json_to_osc_arg(v: &serde_json::Value) -> Option<OscArg> {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i32::try_from(i).ok().map(OscArg::Int32)
            } else {
                n.as_f64()
                    .map(|f| f as f32)
                    .filter(|f| f.is_finite())
                    .map(OscArg::Float32)
            }
        }
        serde_json::Value::String(s) => Some(OscArg::Text(s.clone())),
        _ => None,
    }
}

fn build_cast(raw: RawCast, errors: &mut Vec<CuesheetError>) -> Cast {
    let cast = Cast {
        avatars: raw.avatars,
        props: raw.props,
        cameras: raw.cameras,
        sockets: raw.sockets.map(SocketTable::new).unwrap_or_default(),
    };
    let mut seen = BTreeSet::new();
    let ids = cast
        .avatars
        .iter()
        .map(|a| &a.id)
        .chain(cast.props.iter().map(|p| &p.id))
        .chain(cast.cameras.iter());
    for id in ids {
        if id.is_empty() || !seen.insert(id.clone()) {
            errors.push(CuesheetError::DuplicateCastId(id.clone()));
        }
    }
    for avatar in &cast.avatars {
        if matches!(&avatar.source, AvatarSource::Mocap(s) if s.is_empty()) {
            errors.push(CuesheetError::InvalidSet {
                context: format!("avatar {}", avatar.id),
                reason: "mocap subject must be non-empty".into(),
            });
        }
    }
    for prop in &cast.props {
        if let PropMode::Dependent(s) = &prop.mode {
            let context = format!("prop {}", prop.id);
            if cast.avatar(&s.avatar).is_none() {
                errors.push(CuesheetError::UnknownTargetRef {
                    context: context.clone(),
                    target: s.avatar.clone(),
                });
            }
            if s.socket.is_empty() || !cast.sockets.contains(&s.socket) {
                errors.push(CuesheetError::UnknownSocket {
                    context,
                    socket: s.socket.clone(),
                });
            }
        }
    }
    cast
}

/// Parses and fully validates a cuesheet against an already loaded level.
pub fn parse_cuesheet(document: &str, level: &Level) -> Result<Cuesheet, Vec<CuesheetError>> {
    let raw: RawCuesheet = serde_json::from_str(document).map_err(|e| {
        vec![CuesheetError::MalformedDocument {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }]
    })?;
    let mut errors = Vec::new();
    let cast = build_cast(raw.cast, &mut errors);

    let blend_window = match raw.player {
        Some(p) if !(p.blend_window > 0.0 && p.blend_window.is_finite()) => {
            errors.push(CuesheetError::InvalidPlayerSettings(format!(
                "blend_window must be positive, got {}",
                p.blend_window
            )));
            DEFAULT_BLEND_WINDOW
        }
        Some(p) => p.blend_window,
        None => DEFAULT_BLEND_WINDOW,
    };

    let mut validator = Validator {
        cast: &cast,
        level,
        errors: Vec::new(),
    };
    let mut cues = BTreeMap::new();
    for (key, raw_cue) in raw.cues.0 {
        let id = match key.parse::<CueId>() {
            Ok(id) if id > 0 => id,
            _ => {
                validator.errors.push(CuesheetError::InvalidCueId(key));
                continue;
            }
        };
        if cues.contains_key(&id) {
            validator.errors.push(CuesheetError::DuplicateCueId(id));
            continue;
        }
        let sets = raw_cue
            .sets
            .into_iter()
            .enumerate()
            .filter_map(|(i, s)| validator.set(&format!("cue {id} set {i}"), s))
            .collect();
        cues.insert(
            id,
            Cue {
                id,
                label: raw_cue.label,
                sets,
            },
        );
    }
    errors.append(&mut validator.errors);

    let mut cuelists = BTreeMap::new();
    for (name, ids) in raw.cuelists.0 {
        if cuelists.contains_key(&name) {
            errors.push(CuesheetError::DuplicateCuelist(name));
            continue;
        }
        for &cue in &ids {
            if !cues.contains_key(&cue) {
                errors.push(CuesheetError::UndefinedCueInCuelist {
                    cuelist: name.clone(),
                    cue,
                });
            }
        }
        cuelists.insert(name, ids);
    }
    if cuelists.is_empty() {
        errors.push(CuesheetError::NoCuelist);
    }

    let devices = match DeviceConfig::from_raw(raw.devices) {
        Ok(d) => {
            errors.extend(d.validate_against(&cast, &cuelists, &cues).into_iter().map(CuesheetError::from));
            d
        }
        Err(errs) => {
            errors.extend(errs.into_iter().map(CuesheetError::from));
            DeviceConfig::default()
        }
    };

    if errors.is_empty() {
        Ok(Cuesheet {
            cast,
            devices,
            cuelists,
            cues,
            blend_window,
        })
    } else {
        Err(errors)
    }
}

/// Where a prop or camera is: free in the world, or hanging on an avatar socket.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Free(Pose),
    Attached(SocketRef),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlayerBinding {
    pub salient: String,
    pub idle: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvatarState {
    pub offset: OffsetTransform,
    /// Capture-space root the current offset was computed from.
    pub anchor: Option<Pose>,
    pub visible: bool,
    pub source: AvatarSource,
    pub appearance: String,
    pub player: Option<PlayerBinding>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropState {
    pub placement: Placement,
    pub light: Option<LightSetting>,
    pub audio_playing: bool,
    pub visible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FadeProgress {
    pub direction: FadeDirection,
    pub duration: f64,
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CameraState {
    pub placement: Placement,
    pub fade_level: f64,
    pub fade: Option<FadeProgress>,
}

impl CameraState {
    /// Moves a running fade forward; the fade ends once its duration elapses.
    pub fn advance_fade(&mut self, dt: f64) {
        if let Some(f) = &mut self.fade {
            f.elapsed += dt;
            self.fade_level = stagemath::fade_level(f.elapsed, f.duration, f.direction).unwrap_or(self.fade_level);
            if f.elapsed >= f.duration {
                self.fade = None;
            }
        }
    }
}

fn serialize_pointer<S: Serializer>(pointer: &Option<usize>, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_i64(pointer.map_or(-1, |p| p as i64))
}

/// Everything the cue engine owns about the show at one instant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EngineState {
    pub active_cuelist: String,
    #[serde(serialize_with = "serialize_pointer")]
    pub pointer: Option<usize>,
    pub avatars: BTreeMap<String, AvatarState>,
    pub props: BTreeMap<String, PropState>,
    pub cameras: BTreeMap<String, CameraState>,
    pub bypass_overrides: BTreeMap<CueId, BTreeMap<usize, bool>>,
}

impl EngineState {
    /// The initialization state: cast defaults, identity offsets, props
    /// hidden, cameras faded out, pointer on standby.
    pub fn initial(cuesheet: &Cuesheet, cuelist: &str) -> Self {
        let avatars = cuesheet
            .cast
            .avatars
            .iter()
            .map(|a| {
                let state = AvatarState {
                    offset: OffsetTransform::IDENTITY,
                    anchor: None,
                    visible: a.visible,
                    source: a.source.clone(),
                    appearance: a.appearance.clone(),
                    player: None,
                };
                (a.id.clone(), state)
            })
            .collect();
        let props = cuesheet
            .cast
            .props
            .iter()
            .map(|p| {
                let placement = match &p.mode {
                    PropMode::Autonomous => Placement::Free(Pose::IDENTITY),
                    PropMode::Dependent(s) => Placement::Attached(s.clone()),
                };
                let state = PropState {
                    placement,
                    light: None,
                    audio_playing: false,
                    visible: false,
                };
                (p.id.clone(), state)
            })
            .collect();
        let cameras = cuesheet
            .cast
            .cameras
            .iter()
            .map(|c| {
                let state = CameraState {
                    placement: Placement::Free(Pose::IDENTITY),
                    fade_level: 0.0,
                    fade: None,
                };
                (c.clone(), state)
            })
            .collect();
        EngineState {
            active_cuelist: cuelist.to_string(),
            pointer: None,
            avatars,
            props,
            cameras,
            bypass_overrides: BTreeMap::new(),
        }
    }

    /// Pointer as a signed index, `-1` on standby.
    pub fn pointer_index(&self) -> i64 {
        self.pointer.map_or(-1, |p| p as i64)
    }

    pub fn is_bypassed(&self, cue: &Cue, set: usize) -> bool {
        self.bypass_overrides
            .get(&cue.id)
            .and_then(|m| m.get(&set))
            .copied()
            .unwrap_or_else(|| cue.sets.get(set).is_some_and(|s| s.bypass))
    }

    /// Stable byte encoding; equal states encode identically.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("engine state serialization is infallible")
    }

    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// World root of an avatar given its current capture-space root.
    pub fn avatar_world_root(&self, avatar: &str, live_root: &Pose) -> Option<Pose> {
        self.avatars
            .get(avatar)
            .map(|a| stagemath::apply_offset(&a.offset, live_root))
    }

    /// World pose of a placement, following socket attachments.
    pub fn placement_pose(&self, placement: &Placement, sockets: &SocketTable, live_root: impl Fn(&str) -> Pose) -> Pose {
        match placement {
            Placement::Free(p) => *p,
            Placement::Attached(s) => {
                let root = self
                    .avatar_world_root(&s.avatar, &live_root(&s.avatar))
                    .unwrap_or(Pose::IDENTITY);
                sockets.attachment_pose(&root, &s.socket).unwrap_or(root)
            }
        }
    }
}

/// Something the runtime must do as a consequence of a cue.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "effect", rename_all = "snake_case")]
pub enum Effect {
    SendOsc(OscMessage),
    StartSequence(SequenceSpec),
    TriggerSalient {
        avatar: String,
        salient: String,
        idle: String,
    },
    StartFade {
        camera: String,
        direction: FadeDirection,
        duration: f64,
    },
    AudioCommand {
        prop: String,
        command: AudioCommand,
    },
    ParticleRestart {
        prop: String,
    },
}

/// Capture-space root of an avatar for the given source.
fn live_root_for(source: &AvatarSource, avatar: &str, live_roots: &BTreeMap<String, Pose>) -> Pose {
    match source {
        AvatarSource::Mocap(_) => live_roots.get(avatar).copied().unwrap_or(Pose::IDENTITY),
        AvatarSource::Player => Pose::IDENTITY,
    }
}

fn apply_attach(
    state: &EngineState,
    current: &Placement,
    cmd: &AttachCommand,
    cuesheet: &Cuesheet,
    live_roots: &BTreeMap<String, Pose>,
) -> Placement {
    match cmd {
        AttachCommand::Attach(s) => Placement::Attached(s.clone()),
        AttachCommand::Detach => {
            let pose = state.placement_pose(current, &cuesheet.cast.sockets, |avatar| {
                let source = state.avatars.get(avatar).map(|a| &a.source);
                source.map_or(Pose::IDENTITY, |s| live_root_for(s, avatar, live_roots))
            });
            Placement::Free(pose)
        }
    }
}

/// Applies one cue's live Sets, in listed order, to `state`.
///
/// Pure: the same inputs always produce the same state and effects. A
/// bypassed Set contributes nothing. `live_roots` maps each mocap avatar to
/// its current capture-space root, the anchor for goal placement.
pub fn apply_cue(
    state: &EngineState,
    cue: &Cue,
    cuesheet: &Cuesheet,
    level: &Level,
    live_roots: &BTreeMap<String, Pose>,
) -> (EngineState, Vec<Effect>) {
    let mut next = state.clone();
    let mut effects = Vec::new();
    let goal_pose = |id: &str| level.goal(id).map(|g| g.pose());

    for (index, set) in cue.sets.iter().enumerate() {
        if state.is_bypassed(cue, index) {
            continue;
        }
        match &set.body {
            SetBody::Avatar(s) => {
                let Some(avatar) = next.avatars.get_mut(&s.target) else { continue };
                if let Some(v) = s.visible {
                    avatar.visible = v;
                }
                if let Some(a) = &s.appearance {
                    avatar.appearance = a.clone();
                }
                if let Some(AvatarAnimation::SwitchSource(src)) = &s.animation {
                    avatar.source = src.clone();
                }
                if let Some(goal) = s.goal.as_deref().and_then(goal_pose) {
                    let live = live_root_for(&avatar.source, &s.target, live_roots);
                    avatar.offset = stagemath::compute_offset(&live, &goal);
                    avatar.anchor = Some(live);
                }
                if let Some(AvatarAnimation::TriggerSalient { salient, idle }) = &s.animation {
                    avatar.player = Some(PlayerBinding {
                        salient: salient.clone(),
                        idle: idle.clone(),
                    });
                    effects.push(Effect::TriggerSalient {
                        avatar: s.target.clone(),
                        salient: salient.clone(),
                        idle: idle.clone(),
                    });
                }
            }
            SetBody::Prop(s) => {
                let Some(current) = next.props.get(&s.target).map(|p| p.placement.clone()) else { continue };
                let mut placement = current;
                if let Some(goal) = s.goal.as_deref().and_then(goal_pose) {
                    placement = Placement::Free(goal);
                }
                if let Some(cmd) = &s.attach {
                    placement = apply_attach(&next, &placement, cmd, cuesheet, live_roots);
                }
                let prop = next.props.get_mut(&s.target).expect("prop present");
                prop.placement = placement;
                if let Some(v) = s.visible {
                    prop.visible = v;
                }
                if let Some(l) = s.light {
                    prop.light = Some(l);
                }
                if s.particles.is_some() {
                    effects.push(Effect::ParticleRestart { prop: s.target.clone() });
                }
                if let Some(cmd) = s.audio {
                    prop.audio_playing = cmd == AudioCommand::Play;
                    effects.push(Effect::AudioCommand {
                        prop: s.target.clone(),
                        command: cmd,
                    });
                }
            }
            SetBody::Camera(s) => {
                let Some(current) = next.cameras.get(&s.target).map(|c| c.placement.clone()) else { continue };
                let mut placement = current;
                if let Some(goal) = s.goal.as_deref().and_then(goal_pose) {
                    placement = Placement::Free(goal);
                }
                if let Some(cmd) = &s.attach_to {
                    placement = apply_attach(&next, &placement, cmd, cuesheet, live_roots);
                }
                let camera = next.cameras.get_mut(&s.target).expect("camera present");
                camera.placement = placement;
                if let Some(f) = s.fade {
                    camera.fade = Some(FadeProgress {
                        direction: f.direction,
                        duration: f.duration,
                        elapsed: 0.0,
                    });
                    camera.fade_level = stagemath::fade_level(0.0, f.duration, f.direction).unwrap_or(camera.fade_level);
                    effects.push(Effect::StartFade {
                        camera: s.target.clone(),
                        direction: f.direction,
                        duration: f.duration,
                    });
                }
            }
            SetBody::Sequence(spec) => effects.push(Effect::StartSequence(spec.clone())),
            SetBody::Osc(msg) => effects.push(Effect::SendOsc(msg.clone())),
        }
    }
    (next, effects)
}

/// Single-owner executor for one cuesheet on one level.
#[derive(Debug, Clone)]
pub struct Engine {
    cuesheet: Arc<Cuesheet>,
    level: Arc<Level>,
    state: EngineState,
    /// Capture-space roots seen when the cue at each cuelist position was fired.
    captures: Vec<BTreeMap<String, Pose>>,
}

impl Engine {
    pub fn new(cuesheet: Arc<Cuesheet>, level: Arc<Level>) -> Self {
        let state = EngineState::initial(&cuesheet, cuesheet.default_cuelist());
        Engine {
            cuesheet,
            level,
            state,
            captures: Vec::new(),
        }
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn cuesheet(&self) -> &Cuesheet {
        &self.cuesheet
    }

    pub fn level(&self) -> &Level {
        &self.level
    }

    /// Replaces the live state with a transient edit (nudges, faders, fades
    /// advancing). The pointer, cuelist and bypass overrides are kept.
    pub fn update_transient(&mut self, f: impl FnOnce(&EngineState) -> EngineState) {
        let mut next = f(&self.state);
        next.active_cuelist = self.state.active_cuelist.clone();
        next.pointer = self.state.pointer;
        next.bypass_overrides = self.state.bypass_overrides.clone();
        self.state = next;
    }

    pub fn active_cuelist(&self) -> &[CueId] {
        self.cuesheet.cuelist(&self.state.active_cuelist).unwrap_or(&[])
    }

    /// The cue at the pointer.
    pub fn current_cue(&self) -> Option<&Cue> {
        let id = self.active_cuelist().get(self.state.pointer?)?;
        self.cuesheet.cues.get(id)
    }

    pub fn go(&mut self, live_roots: &BTreeMap<String, Pose>) -> Result<Vec<Effect>, CueError> {
        let next = self.state.pointer.map_or(0, |p| p + 1);
        let cue_id = *self.active_cuelist().get(next).ok_or(CueError::EndOfCuelist)?;
        let cue = &self.cuesheet.cues[&cue_id];
        let captured: BTreeMap<String, Pose> = self
            .cuesheet
            .cast
            .avatars
            .iter()
            .filter_map(|a| live_roots.get(&a.id).map(|p| (a.id.clone(), *p)))
            .collect();
        let (mut state, effects) = apply_cue(&self.state, cue, &self.cuesheet, &self.level, &captured);
        state.pointer = Some(next);
        self.captures.truncate(next);
        self.captures.push(captured);
        self.state = state;
        Ok(effects)
    }

    pub fn goback(&mut self) -> Result<Vec<Effect>, CueError> {
        let pointer = self.state.pointer.ok_or(CueError::BeforeStart)?;
        let (state, effects) = self.replay(pointer.checked_sub(1));
        self.state = state;
        Ok(effects)
    }

    /// Rebuilds the state by replaying the active cuelist from the
    /// initialization state through position `upto`, with the current bypass
    /// overrides and captured roots. Returns the effects of the last replayed cue.
    pub fn replay(&self, upto: Option<usize>) -> (EngineState, Vec<Effect>) {
        let mut state = EngineState::initial(&self.cuesheet, &self.state.active_cuelist);
        state.bypass_overrides = self.state.bypass_overrides.clone();
        let mut effects = Vec::new();
        let no_roots = BTreeMap::new();
        if let Some(upto) = upto {
            for (position, cue_id) in self.active_cuelist().iter().enumerate().take(upto + 1) {
                let roots = self.captures.get(position).unwrap_or(&no_roots);
                let cue = &self.cuesheet.cues[cue_id];
                let (next, eff) = apply_cue(&state, cue, &self.cuesheet, &self.level, roots);
                state = next;
                state.pointer = Some(position);
                effects = eff;
            }
        }
        (state, effects)
    }

    pub fn select_cuelist(&mut self, name: &str) -> Result<(), CueError> {
        if !self.cuesheet.cuelists.contains_key(name) {
            return Err(CueError::UnknownCuelist(name.to_string()));
        }
        let overrides = std::mem::take(&mut self.state.bypass_overrides);
        self.state = EngineState::initial(&self.cuesheet, name);
        self.state.bypass_overrides = overrides;
        self.captures.clear();
        Ok(())
    }

    /// Cuelist after the active one, by name, wrapping around.
    pub fn next_cuelist_name(&self) -> String {
        let names: Vec<&String> = self.cuesheet.cuelists.keys().collect();
        let at = names.iter().position(|n| **n == self.state.active_cuelist).unwrap_or(0);
        names[(at + 1) % names.len()].clone()
    }

    pub fn is_bypassed(&self, cue: CueId, set: usize) -> Result<bool, CueError> {
        let c = self
            .cuesheet
            .cues
            .get(&cue)
            .filter(|c| set < c.sets.len())
            .ok_or(CueError::UnknownSetRef { cue, set })?;
        Ok(self.state.is_bypassed(c, set))
    }

    /// Records a bypass override. If the cue has already been fired in the
    /// active cuelist, the state is rebuilt so the change shows immediately.
    pub fn set_bypass(&mut self, cue: CueId, set: usize, flag: bool) -> Result<(), CueError> {
        let authored = self
            .cuesheet
            .cues
            .get(&cue)
            .and_then(|c| c.sets.get(set))
            .ok_or(CueError::UnknownSetRef { cue, set })?
            .bypass;
        let overrides = &mut self.state.bypass_overrides;
        if flag == authored {
            if let Some(m) = overrides.get_mut(&cue) {
                m.remove(&set);
                if m.is_empty() {
                    overrides.remove(&cue);
                }
            }
        } else {
            overrides.entry(cue).or_default().insert(set, flag);
        }
        let fired = self.state.pointer.is_some_and(|p| self.active_cuelist()[..=p].contains(&cue));
        if fired {
            let (state, _) = self.replay(self.state.pointer);
            self.state = state;
        }
        Ok(())
    }

    pub fn toggle_bypass(&mut self, cue: CueId, set: usize) -> Result<bool, CueError> {
        let flag = !self.is_bypassed(cue, set)?;
        self.set_bypass(cue, set, flag)?;
        Ok(flag)
    }

    /// Advances every running camera fade.
    pub fn advance_fades(&mut self, dt: f64) {
        for camera in self.state.cameras.values_mut() {
            camera.advance_fade(dt);
        }
    }
}
