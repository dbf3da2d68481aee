//! Device input: keyboard, gamepad and MIDI events routed to stage actions.
//!
//! Physical adapters stay outside the engine. They only produce
//! [`InputEvent`] values, which land on one of three dispatcher channels by
//! source kind and are resolved against the cuesheet's device bindings.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cueengine::{Cast, Cue, CueId, ElementKind, EngineState, Placement};
use crate::scene::{Pose, PropKind, Vec3};
use crate::stagemath::{self, OffsetTransform};

pub const MAX_GAMEPADS: usize = 4;

/// Radial stick deadzone; a deflection whose norm is at most this is zero.
pub const STICK_DEADZONE: f64 = 0.1;

pub const MIDI_CC: u8 = 0xB0;
pub const NANOK_PLAY: u8 = 41;
pub const NANOK_STOP: u8 = 42;
pub const NANOK_RECORD: u8 = 45;
pub const NANOK_SOLO_BASE: u8 = 32;
pub const NANOK_FADER_BASE: u8 = 0;
pub const NANOK_STRIPS: u8 = 8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("{0} gamepads configured, at most 4 are supported")]
    TooManyGamepads(usize),
    #[error("gamepad index {0} out of range 0..=3")]
    InvalidGamepadIndex(u8),
    #[error("gamepad {0} assigned twice")]
    DuplicateGamepad(u8),
    #[error("gamepad {index}: {reason}")]
    InvalidGamepad { index: u8, reason: String },
    #[error("binding `{key}`: {reason}")]
    InvalidBinding { key: String, reason: String },
    #[error("{context}: unknown target `{target}`")]
    UnknownTarget { context: String, target: String },
    #[error("invalid MIDI message {status:#04x} {data1} {data2}")]
    InvalidMidi { status: u8, data1: u8, data2: u8 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NudgeError {
    #[error("unknown target `{0}`")]
    UnknownTarget(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct GamepadIndex(u8);

impl GamepadIndex {
    pub fn get(self) -> usize {
        self.0 as usize
    }
}

impl TryFrom<u8> for GamepadIndex {
    type Error = DeviceError;
    fn try_from(index: u8) -> Result<Self, DeviceError> {
        if (index as usize) < MAX_GAMEPADS {
            Ok(GamepadIndex(index))
        } else {
            Err(DeviceError::InvalidGamepadIndex(index))
        }
    }
}

impl From<GamepadIndex> for u8 {
    fn from(i: GamepadIndex) -> u8 {
        i.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KeyEdge {
    Down,
    Up,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GamepadControl {
    StickX,
    StickY,
    ButtonA,
    ButtonB,
    ButtonX,
    ButtonY,
    Start,
    Back,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputSource {
    Keyboard {
        key: String,
        edge: KeyEdge,
    },
    Gamepad {
        index: GamepadIndex,
        control: GamepadControl,
        value: f64,
    },
    Midi {
        status: u8,
        data1: u8,
        data2: u8,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputEvent {
    pub timestamp: f64,
    pub source: InputSource,
}

impl InputEvent {
    pub fn key(timestamp: f64, key: impl Into<String>, edge: KeyEdge) -> Self {
        InputEvent {
            timestamp,
            source: InputSource::Keyboard {
                key: key.into(),
                edge,
            },
        }
    }

    pub fn gamepad(timestamp: f64, index: u8, control: GamepadControl, value: f64) -> Result<Self, DeviceError> {
        Ok(InputEvent {
            timestamp,
            source: InputSource::Gamepad {
                index: GamepadIndex::try_from(index)?,
                control,
                value: value.clamp(-1.0, 1.0),
            },
        })
    }

    pub fn midi(timestamp: f64, status: u8, data1: u8, data2: u8) -> Result<Self, DeviceError> {
        if status < 0x80 || data1 > 127 || data2 > 127 {
            return Err(DeviceError::InvalidMidi { status, data1, data2 });
        }
        Ok(InputEvent {
            timestamp,
            source: InputSource::Midi { status, data1, data2 },
        })
    }

    pub fn channel(&self) -> Channel {
        match self.source {
            InputSource::Keyboard { .. } => Channel::Keyboard,
            InputSource::Gamepad { .. } => Channel::Gamepad,
            InputSource::Midi { .. } => Channel::NanoK,
        }
    }
}

/// The three named event dispatchers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Channel {
    Keyboard,
    Gamepad,
    NanoK,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::Keyboard, Channel::Gamepad, Channel::NanoK];

    pub fn name(self) -> &'static str {
        match self {
            Channel::Keyboard => "AKN_Keyboard_Regie",
            Channel::Gamepad => "AKN_Gamepad_Regie",
            Channel::NanoK => "AKN_NanoK_Regie",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CueRef {
    /// The cue at the pointer, or the first cue while on standby.
    Current,
    Id(CueId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BypassMode {
    Set(bool),
    Toggle,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CuelistRef {
    Next,
    Named(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaderTarget {
    LightIntensity(String),
    CameraFade(String),
}

impl fmt::Display for FaderTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaderTarget::LightIntensity(p) => write!(f, "prop/{p}/intensity"),
            FaderTarget::CameraFade(c) => write!(f, "camera/{c}/fade"),
        }
    }
}

impl FromStr for FaderTarget {
    type Err = String;
    fn from_str(path: &str) -> Result<Self, String> {
        match path.split('/').collect::<Vec<_>>().as_slice() {
            ["prop", id, "intensity"] if !id.is_empty() => Ok(FaderTarget::LightIntensity(id.to_string())),
            ["camera", id, "fade"] if !id.is_empty() => Ok(FaderTarget::CameraFade(id.to_string())),
            _ => Err(format!("unknown fader path `{path}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Go,
    GoBack,
    SelectCuelist(CuelistRef),
    Bypass { cue: CueRef, set: usize, mode: BypassMode },
    /// World-frame translation in meters.
    Nudge { target: String, dx: f64, dy: f64 },
    /// Signed turn in degrees about the element's own position.
    Rotate { target: String, degrees: f64 },
    Fader { target: FaderTarget, value: f64 },
}

/// What a key or MIDI control is bound to. Faders take their value from the
/// incoming controller data.
#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    Fixed(Action),
    Fader(FaderTarget),
}

impl Binding {
    fn resolve(&self, controller_value: u8) -> Option<Action> {
        match self {
            // buttons send 0 on release
            Binding::Fixed(action) => (controller_value > 0).then(|| action.clone()),
            Binding::Fader(target) => Some(Action::Fader {
                target: target.clone(),
                value: f64::from(controller_value) / 127.0,
            }),
        }
    }
}

impl FromStr for Binding {
    type Err = String;

    /// Parses the binding mini-language used in the devices block:
    /// `go`, `goback`, `cuelist:next`, `cuelist:<name>`,
    /// `bypass:<current|cue>:<set>[:on|off|toggle]`, `nudge:<target>:<dx>:<dy>`,
    /// `rotate:<target>:<degrees>`, `fader:<prop/ID/intensity|camera/ID/fade>`.
    fn from_str(text: &str) -> Result<Self, String> {
        let parts: Vec<&str> = text.split(':').collect();
        let number = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("`{s}` is not a number"))
        };
        let action = match parts.as_slice() {
            ["go"] => Action::Go,
            ["goback"] => Action::GoBack,
            ["cuelist", "next"] => Action::SelectCuelist(CuelistRef::Next),
            ["cuelist", name] if !name.is_empty() => Action::SelectCuelist(CuelistRef::Named(name.to_string())),
            ["bypass", cue, set, rest @ ..] if rest.len() <= 1 => {
                let cue = match *cue {
                    "current" => CueRef::Current,
                    id => CueRef::Id(id.parse().map_err(|_| format!("bad cue id `{id}`"))?),
                };
                let set = set.parse().map_err(|_| format!("bad set index `{set}`"))?;
                let mode = match rest.first().copied().unwrap_or("toggle") {
                    "toggle" => BypassMode::Toggle,
                    "on" => BypassMode::Set(true),
                    "off" => BypassMode::Set(false),
                    other => return Err(format!("bad bypass mode `{other}`")),
                };
                Action::Bypass { cue, set, mode }
            }
            ["nudge", target, dx, dy] => Action::Nudge {
                target: target.to_string(),
                dx: number(dx)?,
                dy: number(dy)?,
            },
            ["rotate", target, deg] => Action::Rotate {
                target: target.to_string(),
                degrees: number(deg)?,
            },
            ["fader", path] => return Ok(Binding::Fader(path.parse()?)),
            _ => return Err(format!("unrecognized binding `{text}`")),
        };
        Ok(Binding::Fixed(action))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamepadAssignment {
    pub index: GamepadIndex,
    pub target: String,
    /// Meters per second at full deflection.
    pub speed: f64,
    /// Degrees per second while a rotate button is held.
    pub rotate_speed: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MidiConfig {
    pub device: String,
    pub bindings: BTreeMap<(u8, u8), Binding>,
}

impl MidiConfig {
    /// The NanoKontrol transport layout: Play → go, Stop → goback,
    /// Record → next cuelist, solo buttons → bypass toggles of the current
    /// cue's sets 0–7.
    pub fn nanokontrol(device: impl Into<String>) -> Self {
        let mut bindings = BTreeMap::new();
        bindings.insert((MIDI_CC, NANOK_PLAY), Binding::Fixed(Action::Go));
        bindings.insert((MIDI_CC, NANOK_STOP), Binding::Fixed(Action::GoBack));
        bindings.insert(
            (MIDI_CC, NANOK_RECORD),
            Binding::Fixed(Action::SelectCuelist(CuelistRef::Next)),
        );
        for strip in 0..NANOK_STRIPS {
            bindings.insert(
                (MIDI_CC, NANOK_SOLO_BASE + strip),
                Binding::Fixed(Action::Bypass {
                    cue: CueRef::Current,
                    set: strip as usize,
                    mode: BypassMode::Toggle,
                }),
            );
        }
        MidiConfig {
            device: device.into(),
            bindings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeviceConfig {
    pub keyboard: BTreeMap<String, Binding>,
    pub midi: Option<MidiConfig>,
    pub gamepads: Vec<GamepadAssignment>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct RawDevices {
    #[serde(default)]
    midi: Option<RawMidi>,
    #[serde(default)]
    gamepads: Vec<RawGamepad>,
    #[serde(default)]
    keyboard: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMidi {
    device: String,
    #[serde(default)]
    map: BTreeMap<String, String>,
    #[serde(default)]
    faders: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGamepad {
    index: u8,
    target: String,
    speed: f64,
    rotate_speed: f64,
}

fn parse_midi_key(key: &str) -> Option<(u8, u8)> {
    let (status, data1) = key.split_once(':')?;
    let status = match status.strip_prefix("0x").or_else(|| status.strip_prefix("0X")) {
        Some(hex) => u8::from_str_radix(hex, 16).ok()?,
        None if status == "cc" => MIDI_CC,
        None => status.parse().ok()?,
    };
    let data1: u8 = data1.parse().ok()?;
    (status >= 0x80 && data1 <= 127).then_some((status, data1))
}

impl DeviceConfig {
    pub(crate) fn from_raw(raw: RawDevices) -> Result<Self, Vec<DeviceError>> {
        let mut errors = Vec::new();

        let mut keyboard = BTreeMap::new();
        for (key, text) in raw.keyboard {
            match text.parse::<Binding>() {
                Ok(Binding::Fader(_)) => errors.push(DeviceError::InvalidBinding {
                    key,
                    reason: "faders need a continuous controller".into(),
                }),
                Ok(b) => {
                    keyboard.insert(key, b);
                }
                Err(reason) => errors.push(DeviceError::InvalidBinding { key, reason }),
            }
        }

        let midi = raw.midi.map(|m| {
            let mut cfg = MidiConfig::nanokontrol(m.device);
            for (cc, path) in m.faders {
                match (cc.parse::<u8>(), path.parse::<FaderTarget>()) {
                    (Ok(cc), Ok(target)) if cc <= 127 => {
                        cfg.bindings.insert((MIDI_CC, cc), Binding::Fader(target));
                    }
                    (_, Err(reason)) => errors.push(DeviceError::InvalidBinding { key: cc, reason }),
                    _ => errors.push(DeviceError::InvalidBinding {
                        key: cc,
                        reason: "fader key must be a controller number 0..=127".into(),
                    }),
                }
            }
            for (key, text) in m.map {
                let Some(addr) = parse_midi_key(&key) else {
                    errors.push(DeviceError::InvalidBinding {
                        key,
                        reason: "expected `<status>:<data1>`".into(),
                    });
                    continue;
                };
                match text.parse::<Binding>() {
                    Ok(b) => {
                        cfg.bindings.insert(addr, b);
                    }
                    Err(reason) => errors.push(DeviceError::InvalidBinding { key, reason }),
                }
            }
            cfg
        });

        let mut gamepads = Vec::new();
        if raw.gamepads.len() > MAX_GAMEPADS {
            errors.push(DeviceError::TooManyGamepads(raw.gamepads.len()));
        } else {
            let mut seen = [false; MAX_GAMEPADS];
            for pad in raw.gamepads {
                let index = match GamepadIndex::try_from(pad.index) {
                    Ok(i) => i,
                    Err(e) => {
                        errors.push(e);
                        continue;
                    }
                };
                if std::mem::replace(&mut seen[index.get()], true) {
                    errors.push(DeviceError::DuplicateGamepad(pad.index));
                    continue;
                }
                if !(pad.speed > 0.0 && pad.speed.is_finite()) || !(pad.rotate_speed > 0.0 && pad.rotate_speed.is_finite()) {
                    errors.push(DeviceError::InvalidGamepad {
                        index: pad.index,
                        reason: "speed and rotate_speed must be positive".into(),
                    });
                    continue;
                }
                gamepads.push(GamepadAssignment {
                    index,
                    target: pad.target,
                    speed: pad.speed,
                    rotate_speed: pad.rotate_speed,
                });
            }
        }

        if errors.is_empty() {
            Ok(DeviceConfig { keyboard, midi, gamepads })
        } else {
            Err(errors)
        }
    }

    /// Checks that every binding refers to something in the show.
    pub fn validate_against(
        &self,
        cast: &Cast,
        cuelists: &BTreeMap<String, Vec<CueId>>,
        cues: &BTreeMap<CueId, Cue>,
    ) -> Vec<DeviceError> {
        let mut errors = Vec::new();
        if self.gamepads.len() > MAX_GAMEPADS {
            errors.push(DeviceError::TooManyGamepads(self.gamepads.len()));
        }
        for pad in &self.gamepads {
            if cast.element_kind(&pad.target).is_none() {
                errors.push(DeviceError::UnknownTarget {
                    context: format!("gamepad {}", pad.index.get()),
                    target: pad.target.clone(),
                });
            }
        }
        let keyboard = self.keyboard.iter().map(|(k, b)| (format!("key `{k}`"), b));
        let midi = self
            .midi
            .iter()
            .flat_map(|m| m.bindings.iter())
            .map(|((s, d), b)| (format!("midi {s}:{d}"), b));
        for (context, binding) in keyboard.chain(midi) {
            let bad = |target: &str| DeviceError::UnknownTarget {
                context: context.clone(),
                target: target.to_string(),
            };
            match binding {
                Binding::Fixed(Action::Nudge { target, .. } | Action::Rotate { target, .. }) => {
                    if cast.element_kind(target).is_none() {
                        errors.push(bad(target));
                    }
                }
                Binding::Fixed(Action::SelectCuelist(CuelistRef::Named(name))) => {
                    if !cuelists.contains_key(name) {
                        errors.push(bad(name));
                    }
                }
                Binding::Fixed(Action::Bypass {
                    cue: CueRef::Id(id),
                    set,
                    ..
                }) => match cues.get(id) {
                    Some(cue) if *set < cue.sets.len() => {}
                    _ => errors.push(bad(&format!("{id}/{set}"))),
                },
                Binding::Fader(FaderTarget::LightIntensity(prop))
                    if cast.prop(prop).map(|p| p.kind) != Some(PropKind::Light) =>
                {
                    errors.push(bad(prop));
                }
                Binding::Fader(FaderTarget::CameraFade(cam)) if cast.element_kind(cam) != Some(ElementKind::Camera) => {
                    errors.push(bad(cam));
                }
                _ => {}
            }
        }
        errors
    }

    pub fn gamepad(&self, index: GamepadIndex) -> Option<&GamepadAssignment> {
        self.gamepads.iter().find(|g| g.index == index)
    }
}

/// Resolves a single event to the actions it is bound to. Unbound events
/// resolve to nothing. Gamepad events never resolve directly: sticks and
/// rotate buttons are held state, integrated every tick by [`DispatcherBus`].
pub fn dispatch(event: &InputEvent, config: &DeviceConfig) -> Vec<Action> {
    let actions: Vec<Action> = match &event.source {
        InputSource::Keyboard { key, edge } => match edge {
            KeyEdge::Down => config
                .keyboard
                .get(key)
                .and_then(|b| b.resolve(127))
                .into_iter()
                .collect(),
            KeyEdge::Up => return Vec::new(),
        },
        InputSource::Midi { status, data1, data2 } => config
            .midi
            .as_ref()
            .and_then(|m| m.bindings.get(&(*status, *data1)))
            .and_then(|b| b.resolve(*data2))
            .into_iter()
            .collect(),
        InputSource::Gamepad { index, .. } => {
            if config.gamepad(*index).is_none() {
                log::debug!("{}: gamepad {} is not assigned", Channel::Gamepad.name(), index.get());
            }
            return Vec::new();
        }
    };
    if actions.is_empty() && !matches!(&event.source, InputSource::Midi { data2: 0, .. }) {
        log::debug!("{}: unbound event {:?}", event.channel().name(), event.source);
    }
    actions
}

/// Translation for one tick of stick deflection, after the radial deadzone.
pub fn integrate_stick(assignment: &GamepadAssignment, stick: (f64, f64), dt: f64) -> Action {
    let (x, y) = (stick.0.clamp(-1.0, 1.0), stick.1.clamp(-1.0, 1.0));
    let (dx, dy) = if x.hypot(y) <= STICK_DEADZONE {
        (0.0, 0.0)
    } else {
        (x * assignment.speed * dt, y * assignment.speed * dt)
    };
    Action::Nudge {
        target: assignment.target.clone(),
        dx,
        dy,
    }
}

/// Turn for one tick with a rotate button held; `sign` is +1 (CCW) or -1.
pub fn integrate_rotation(assignment: &GamepadAssignment, sign: f64, dt: f64) -> Action {
    Action::Rotate {
        target: assignment.target.clone(),
        degrees: sign.signum() * assignment.rotate_speed * dt,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Routed {
    pub seq: u64,
    pub event: InputEvent,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PadState {
    stick: (f64, f64),
    rotate_ccw: bool,
    rotate_cw: bool,
}

/// The three dispatcher queues plus held gamepad state.
#[derive(Debug, Default)]
pub struct DispatcherBus {
    channels: [VecDeque<Routed>; 3],
    pads: [PadState; MAX_GAMEPADS],
    next_seq: u64,
}

impl DispatcherBus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Routes an event onto its channel and returns that channel.
    pub fn push(&mut self, event: InputEvent, config: &DeviceConfig) -> Channel {
        if let InputSource::Gamepad { index, control, value } = &event.source {
            let pad = &mut self.pads[index.get()];
            match control {
                GamepadControl::StickX => pad.stick.0 = *value,
                GamepadControl::StickY => pad.stick.1 = *value,
                GamepadControl::ButtonA => pad.rotate_ccw = *value > 0.5,
                GamepadControl::ButtonB => pad.rotate_cw = *value > 0.5,
                _ => {}
            }
        }
        let channel = event.channel();
        let actions = dispatch(&event, config);
        let seq = self.next_seq;
        self.next_seq += 1;
        self.channels[channel.slot()].push_back(Routed { seq, event, actions });
        channel
    }

    pub fn pending(&self, channel: Channel) -> impl Iterator<Item = &Routed> {
        self.channels[channel.slot()].iter()
    }

    /// Empties all channels, merging them back into arrival order.
    pub fn drain(&mut self) -> Vec<Routed> {
        let mut all: Vec<Routed> = self.channels.iter_mut().flat_map(|c| c.drain(..)).collect();
        all.sort_by_key(|r| r.seq);
        all
    }

    /// Continuous gamepad motion for the coming `dt`.
    pub fn integrate(&self, config: &DeviceConfig, dt: f64) -> Vec<Action> {
        let mut actions = Vec::new();
        for assignment in &config.gamepads {
            let pad = &self.pads[assignment.index.get()];
            if let nudge @ Action::Nudge { dx, dy, .. } = integrate_stick(assignment, pad.stick, dt) {
                if dx != 0.0 || dy != 0.0 {
                    actions.push(nudge);
                }
            }
            let sign = f64::from(u8::from(pad.rotate_ccw)) - f64::from(u8::from(pad.rotate_cw));
            if sign != 0.0 {
                actions.push(integrate_rotation(assignment, sign, dt));
            }
        }
        actions
    }
}

/// Applies a transient translation or rotation to a cast member.
///
/// Avatars accumulate the nudge into their offset; free props and cameras
/// move their pose. Elements hanging on a socket follow their avatar and
/// ignore nudges. `live_root` is the avatar's current capture-space root.
pub fn apply_nudge(
    state: &EngineState,
    cast: &Cast,
    action: &Action,
    live_root: impl Fn(&str) -> Pose,
) -> Result<EngineState, NudgeError> {
    type MakeOffset = Box<dyn Fn(&Pose) -> OffsetTransform>;
    let (target, make_offset): (&str, MakeOffset) = match action {
        Action::Nudge { target, dx, dy } => {
            let t = OffsetTransform::translation(Vec3::new(*dx, *dy, 0.0));
            (target, Box::new(move |_| t))
        }
        Action::Rotate { target, degrees } => {
            let d = *degrees;
            (target, Box::new(move |at: &Pose| stagemath::rotate_in_place(at, d)))
        }
        _ => return Ok(state.clone()),
    };
    let mut next = state.clone();
    match cast.element_kind(target) {
        None => return Err(NudgeError::UnknownTarget(target.to_string())),
        Some(ElementKind::Avatar) => {
            let avatar = next
                .avatars
                .get_mut(target)
                .ok_or_else(|| NudgeError::UnknownTarget(target.to_string()))?;
            let world = stagemath::apply_offset(&avatar.offset, &live_root(target));
            avatar.offset = stagemath::compose(&make_offset(&world), &avatar.offset);
        }
        Some(kind) => {
            let placement = match kind {
                ElementKind::Prop => next.props.get_mut(target).map(|p| &mut p.placement),
                _ => next.cameras.get_mut(target).map(|c| &mut c.placement),
            }
            .ok_or_else(|| NudgeError::UnknownTarget(target.to_string()))?;
            match placement {
                Placement::Free(pose) => *pose = stagemath::apply_offset(&make_offset(pose), pose),
                Placement::Attached(_) => log::debug!("ignoring nudge on attached `{target}`"),
            }
        }
    }
    Ok(next)
}

/// Writes a fader value straight into the live state.
pub fn apply_fader(state: &EngineState, target: &FaderTarget, value: f64) -> EngineState {
    let mut next = state.clone();
    let value = value.clamp(0.0, 1.0);
    match target {
        FaderTarget::LightIntensity(prop) => {
            if let Some(p) = next.props.get_mut(prop) {
                p.light.get_or_insert_with(Default::default).intensity = value;
            }
        }
        FaderTarget::CameraFade(cam) => {
            if let Some(c) = next.cameras.get_mut(cam) {
                c.fade = None;
                c.fade_level = value;
            }
        }
    }
    next
}
