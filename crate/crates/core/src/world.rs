//! One tick of the show: inputs in, cue engine and players stepped, effects
//! out. The runtime owns a single [`World`] and calls [`World::tick`] at a
//! fixed rate.

use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cueengine::{CueError, CueId, Cuesheet, Effect, Engine};
use crate::devio::{self, Action, BypassMode, CueRef, CuelistRef, DispatcherBus, InputEvent};
use crate::motionplayer::{self, ClipCatalog, PlayerError, PlayerOutput, PlayerState, SequencePlayback, SequenceStep};
use crate::osc::OscMessage;
use crate::scene::{AvatarSource, Level, Pose};
use crate::stagemath::SkeletonFrame;

const EFFECT_LOG_LEN: usize = 32;
const ERROR_LOG_LEN: usize = 16;

/// Operator commands arriving over the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "lowercase", deny_unknown_fields)]
pub enum Command {
    Go,
    GoBack,
    #[serde(rename = "cuelist")]
    SelectCuelist { name: String },
    /// Without `flag` the bypass is toggled.
    Bypass {
        cue: CueId,
        set: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        flag: Option<bool>,
    },
}

/// One entry on the serialized input queue.
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Command(Command),
    Device(InputEvent),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoggedEffect {
    pub tick: u64,
    #[serde(flatten)]
    pub effect: Effect,
}

/// Checks every clip a cuesheet references against the catalog.
pub fn check_clip_refs(cuesheet: &Cuesheet, catalog: &ClipCatalog) -> Vec<PlayerError> {
    let mut errors = Vec::new();
    for (_, _, salient, idle) in cuesheet.clip_refs() {
        if let Err(e) = catalog.get(salient) {
            errors.push(e);
        }
        match catalog.get(idle) {
            Ok(clip) if !clip.loopable => errors.push(PlayerError::NonLoopableIdle(clip.id.clone())),
            Ok(_) => {}
            Err(e) => errors.push(e),
        }
    }
    errors.dedup();
    errors
}

#[derive(Debug)]
pub struct World {
    engine: Engine,
    catalog: Arc<ClipCatalog>,
    bus: DispatcherBus,
    frames: BTreeMap<String, SkeletonFrame>,
    players: BTreeMap<String, PlayerState>,
    outputs: BTreeMap<String, PlayerOutput>,
    sequences: Vec<SequencePlayback>,
    effects: VecDeque<LoggedEffect>,
    errors: VecDeque<String>,
    tick: u64,
}

impl World {
    pub fn new(cuesheet: Arc<Cuesheet>, level: Arc<Level>, catalog: Arc<ClipCatalog>) -> Result<Self, Vec<PlayerError>> {
        let errors = check_clip_refs(&cuesheet, &catalog);
        if !errors.is_empty() {
            return Err(errors);
        }
        Ok(World {
            engine: Engine::new(cuesheet, level),
            catalog,
            bus: DispatcherBus::new(),
            frames: BTreeMap::new(),
            players: BTreeMap::new(),
            outputs: BTreeMap::new(),
            sequences: Vec::new(),
            effects: VecDeque::new(),
            errors: VecDeque::new(),
            tick: 0,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn tick_count(&self) -> u64 {
        self.tick
    }

    pub fn frames(&self) -> &BTreeMap<String, SkeletonFrame> {
        &self.frames
    }

    pub fn player_output(&self, avatar: &str) -> Option<&PlayerOutput> {
        self.outputs.get(avatar)
    }

    pub fn sequences(&self) -> &[SequencePlayback] {
        &self.sequences
    }

    pub fn recent_effects(&self) -> impl Iterator<Item = &LoggedEffect> {
        self.effects.iter()
    }

    pub fn recent_errors(&self) -> impl Iterator<Item = &String> {
        self.errors.iter()
    }

    /// Capture-space root of an avatar: the latest frame root of its mocap
    /// subject, or the origin for player-driven avatars and silent subjects.
    pub fn live_root(&self, avatar: &str) -> Pose {
        let source = self.engine.state().avatars.get(avatar).map(|a| &a.source);
        match source {
            Some(AvatarSource::Mocap(subject)) => self.frames.get(subject).map_or(Pose::IDENTITY, |f| f.root),
            _ => Pose::IDENTITY,
        }
    }

    pub fn live_roots(&self) -> BTreeMap<String, Pose> {
        self.engine
            .state()
            .avatars
            .iter()
            .filter_map(|(id, a)| match &a.source {
                AvatarSource::Mocap(subject) => self.frames.get(subject).map(|f| (id.clone(), f.root)),
                AvatarSource::Player => None,
            })
            .collect()
    }

    /// World root of an avatar right now.
    pub fn avatar_world_root(&self, avatar: &str) -> Option<Pose> {
        self.engine.state().avatar_world_root(avatar, &self.live_root(avatar))
    }

    fn record_error(&mut self, message: String) {
        log::warn!("{message}");
        if self.errors.len() == ERROR_LOG_LEN {
            self.errors.pop_front();
        }
        self.errors.push_back(message);
    }

    /// Advances the show by `dt` seconds and returns the OSC messages to send.
    ///
    /// Inputs are handled in queue order after the newest mocap frames are
    /// latched and the players stepped, so anything queued before this call
    /// is visible in the state it leaves behind.
    pub fn tick(&mut self, inputs: Vec<Input>, frames: Vec<SkeletonFrame>, dt: f64) -> Vec<OscMessage> {
        self.tick += 1;

        let config = &self.engine.cuesheet().devices;
        let mut actions = Vec::new();
        for input in inputs {
            match input {
                Input::Command(cmd) => actions.push(command_action(cmd)),
                Input::Device(event) => {
                    self.bus.push(event, config);
                    actions.extend(self.bus.drain().into_iter().flat_map(|r| r.actions));
                }
            }
        }
        actions.extend(self.bus.integrate(config, dt));

        for frame in frames {
            let newer = self
                .frames
                .get(&frame.subject)
                .is_none_or(|f| frame.timestamp > f.timestamp);
            if newer {
                self.frames.insert(frame.subject.clone(), frame);
            }
        }

        for (avatar, player) in &mut self.players {
            let (next, output) = motionplayer::tick(player, dt);
            *player = next;
            self.outputs.insert(avatar.clone(), output);
        }

        let mut effects = Vec::new();
        for action in actions {
            match self.execute(&action) {
                Ok(mut eff) => effects.append(&mut eff),
                Err(message) => self.record_error(message),
            }
        }

        self.engine.advance_fades(dt);
        self.sequences = std::mem::take(&mut self.sequences)
            .into_iter()
            .filter_map(|p| match motionplayer::sequence_tick(p, dt) {
                SequenceStep::Playing(p) => Some(p),
                SequenceStep::Finished => None,
            })
            .collect();

        let mut outbox = Vec::new();
        for effect in effects {
            if let Err(message) = self.run_effect(&effect, &mut outbox) {
                self.record_error(message);
            }
            if self.effects.len() == EFFECT_LOG_LEN {
                self.effects.pop_front();
            }
            self.effects.push_back(LoggedEffect { tick: self.tick, effect });
        }
        outbox
    }

    fn execute(&mut self, action: &Action) -> Result<Vec<Effect>, String> {
        let cue_err = |e: CueError| e.to_string();
        match action {
            Action::Go => {
                let roots = self.live_roots();
                self.engine.go(&roots).map_err(cue_err)
            }
            Action::GoBack => self.engine.goback().map_err(cue_err),
            Action::SelectCuelist(target) => {
                let name = match target {
                    CuelistRef::Next => self.engine.next_cuelist_name(),
                    CuelistRef::Named(n) => n.clone(),
                };
                self.engine.select_cuelist(&name).map_err(cue_err)?;
                Ok(Vec::new())
            }
            Action::Bypass { cue, set, mode } => {
                let id = match cue {
                    CueRef::Id(id) => *id,
                    CueRef::Current => match self.engine.current_cue() {
                        Some(c) => c.id,
                        None => *self.engine.active_cuelist().first().ok_or("active cuelist is empty")?,
                    },
                };
                match mode {
                    BypassMode::Set(flag) => self.engine.set_bypass(id, *set, *flag),
                    BypassMode::Toggle => self.engine.toggle_bypass(id, *set).map(|_| ()),
                }
                .map_err(cue_err)?;
                Ok(Vec::new())
            }
            Action::Nudge { .. } | Action::Rotate { .. } => {
                let roots = self.live_roots();
                let cast = self.engine.cuesheet().cast.clone();
                let mut result = Ok(());
                self.engine.update_transient(|state| {
                    devio::apply_nudge(state, &cast, action, |id| roots.get(id).copied().unwrap_or(Pose::IDENTITY))
                        .unwrap_or_else(|e| {
                            result = Err(e.to_string());
                            state.clone()
                        })
                });
                result.map(|_| Vec::new())
            }
            Action::Fader { target, value } => {
                self.engine.update_transient(|state| devio::apply_fader(state, target, *value));
                Ok(Vec::new())
            }
        }
    }

    fn run_effect(&mut self, effect: &Effect, outbox: &mut Vec<OscMessage>) -> Result<(), String> {
        match effect {
            Effect::SendOsc(msg) => outbox.push(msg.clone()),
            Effect::StartSequence(spec) => {
                let playback = SequencePlayback::start(spec).map_err(|e| e.to_string())?;
                self.sequences.retain(|p| p.sequence != spec.sequence);
                self.sequences.push(playback);
            }
            Effect::TriggerSalient { avatar, salient, idle } => {
                let salient = self.catalog.get(salient).map_err(|e| e.to_string())?;
                let idle = self.catalog.get(idle).map_err(|e| e.to_string())?;
                let next = match self.players.get(avatar) {
                    Some(p) => motionplayer::trigger_salient(p, salient, idle),
                    None => PlayerState::start_salient(salient.clone(), idle.clone(), self.engine.cuesheet().blend_window),
                }
                .map_err(|e| e.to_string())?;
                self.outputs.insert(avatar.clone(), next.output());
                self.players.insert(avatar.clone(), next);
            }
            // fade state lives in the engine and is advanced every tick
            Effect::StartFade { .. } => {}
            Effect::AudioCommand { prop, command } => log::info!("audio {prop}: {command:?}"),
            Effect::ParticleRestart { prop } => log::info!("particles {prop}: restart"),
        }
        Ok(())
    }
}

fn command_action(cmd: Command) -> Action {
    match cmd {
        Command::Go => Action::Go,
        Command::GoBack => Action::GoBack,
        Command::SelectCuelist { name } => Action::SelectCuelist(CuelistRef::Named(name)),
        Command::Bypass { cue, set, flag } => Action::Bypass {
            cue: CueRef::Id(cue),
            set,
            mode: flag.map_or(BypassMode::Toggle, BypassMode::Set),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_wire_form() {
        let parse = |s: &str| serde_json::from_str::<Command>(s);
        assert_eq!(parse(r#"{"cmd":"go"}"#).unwrap(), Command::Go);
        assert_eq!(parse(r#"{"cmd":"goback"}"#).unwrap(), Command::GoBack);
        assert_eq!(
            parse(r#"{"cmd":"bypass","cue":20,"set":1,"flag":true}"#).unwrap(),
            Command::Bypass {
                cue: 20,
                set: 1,
                flag: Some(true)
            }
        );
        assert_eq!(
            parse(r#"{"cmd":"cuelist","name":"Alt"}"#).unwrap(),
            Command::SelectCuelist { name: "Alt".into() }
        );
        assert!(parse(r#"{"cmd":"fly"}"#).is_err());
        assert_eq!(serde_json::to_string(&Command::GoBack).unwrap(), r#"{"cmd":"goback"}"#);
    }
}
