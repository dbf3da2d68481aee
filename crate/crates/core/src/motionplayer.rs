//! Salient/idle animation player and frame-sequence playback.
//!
//! An avatar driven by the player performs a one-shot salient clip, then
//! eases into a looping idle that it holds until the next trigger. The engine
//! only emits `(clip, phase, weight)` triples; sampling joint curves is the
//! renderer's job.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::SceneError;

pub const DEFAULT_BLEND_WINDOW: f64 = 0.3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlayerError {
    #[error("idle clip `{0}` is not loopable")]
    NonLoopableIdle(String),
    #[error("clip `{id}`: {reason}")]
    InvalidClip { id: String, reason: String },
    #[error("duplicate clip id `{0}`")]
    DuplicateClip(String),
    #[error("unknown clip `{0}`")]
    UnknownClip(String),
    #[error("invalid sequence `{sequence}`: {reason}")]
    InvalidSequence { sequence: String, reason: String },
    #[error(transparent)]
    Malformed(#[from] SceneError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clip {
    pub id: String,
    pub duration: f64,
    pub loopable: bool,
}

impl Clip {
    pub fn new(id: impl Into<String>, duration: f64, loopable: bool) -> Result<Self, PlayerError> {
        let clip = Clip {
            id: id.into(),
            duration,
            loopable,
        };
        clip.validate()?;
        Ok(clip)
    }

    fn validate(&self) -> Result<(), PlayerError> {
        if self.id.is_empty() {
            return Err(PlayerError::InvalidClip {
                id: String::new(),
                reason: "empty id".into(),
            });
        }
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(PlayerError::InvalidClip {
                id: self.id.clone(),
                reason: format!("duration must be finite and positive, got {}", self.duration),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClipCatalog {
    clips: BTreeMap<String, Clip>,
}

impl ClipCatalog {
    pub fn new(clips: Vec<Clip>) -> Result<Self, Vec<PlayerError>> {
        let mut errors = Vec::new();
        let mut map = BTreeMap::new();
        for clip in clips {
            if let Err(e) = clip.validate() {
                errors.push(e);
                continue;
            }
            if map.contains_key(&clip.id) {
                errors.push(PlayerError::DuplicateClip(clip.id));
                continue;
            }
            map.insert(clip.id.clone(), clip);
        }
        if errors.is_empty() {
            Ok(ClipCatalog { clips: map })
        } else {
            Err(errors)
        }
    }

    pub fn get(&self, id: &str) -> Result<&Clip, PlayerError> {
        self.clips
            .get(id)
            .ok_or_else(|| PlayerError::UnknownClip(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

/// Parses a clip catalog: a JSON list of `{ "id", "duration", "loopable" }`.
pub fn load_clip_catalog(document: &str) -> Result<ClipCatalog, Vec<PlayerError>> {
    let clips: Vec<Clip> = serde_json::from_str(document)
        .map_err(|e| vec![PlayerError::Malformed(SceneError::malformed(&e))])?;
    ClipCatalog::new(clips)
}

/// A clip plus a play head.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClipCursor {
    pub clip: Clip,
    pub phase: f64,
    pub looping: bool,
}

impl ClipCursor {
    fn start(clip: Clip, looping: bool) -> Self {
        ClipCursor {
            clip,
            phase: 0.0,
            looping,
        }
    }

    fn advance(&mut self, dt: f64) {
        if self.looping {
            self.phase = (self.phase + dt).rem_euclid(self.clip.duration);
        } else {
            // a one-shot holds its last pose if it outlives a blend
            self.phase = (self.phase + dt).min(self.clip.duration);
        }
    }
}

/// What the incoming clip of a crossfade becomes once the blend completes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AfterBlend {
    Idle,
    Salient { idle: Clip },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayerMode {
    Idle {
        clip: Clip,
        phase: f64,
    },
    Salient {
        clip: Clip,
        elapsed: f64,
        idle: Clip,
    },
    Crossfade {
        from: ClipCursor,
        to: ClipCursor,
        blend_elapsed: f64,
        window: f64,
        then: AfterBlend,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipWeight {
    pub clip: String,
    pub phase: f64,
    pub weight: f64,
}

/// At most two weighted clips summing to one.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PlayerOutput(pub Vec<ClipWeight>);

impl PlayerOutput {
    pub fn weight_sum(&self) -> f64 {
        self.0.iter().map(|c| c.weight).sum()
    }

    pub fn weight_of(&self, clip: &str) -> f64 {
        self.0
            .iter()
            .filter(|c| c.clip == clip)
            .map(|c| c.weight)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlayerState {
    pub mode: PlayerMode,
    pub blend_window: f64,
}

impl PlayerState {
    pub fn idle(clip: Clip) -> Result<Self, PlayerError> {
        Self::idle_with_window(clip, DEFAULT_BLEND_WINDOW)
    }

    pub fn idle_with_window(clip: Clip, blend_window: f64) -> Result<Self, PlayerError> {
        if !clip.loopable {
            return Err(PlayerError::NonLoopableIdle(clip.id));
        }
        Ok(PlayerState {
            mode: PlayerMode::Idle { clip, phase: 0.0 },
            blend_window,
        })
    }

    /// Starts a player straight into a salient clip, as when an avatar is
    /// handed to the player for the first time.
    pub fn start_salient(salient: Clip, idle: Clip, blend_window: f64) -> Result<Self, PlayerError> {
        if !idle.loopable {
            return Err(PlayerError::NonLoopableIdle(idle.id));
        }
        Ok(PlayerState {
            mode: PlayerMode::Salient {
                clip: salient,
                elapsed: 0.0,
                idle,
            },
            blend_window,
        })
    }

    pub fn is_idle(&self) -> bool {
        matches!(self.mode, PlayerMode::Idle { .. })
    }

    pub fn output(&self) -> PlayerOutput {
        let one = |clip: &Clip, phase: f64| {
            PlayerOutput(vec![ClipWeight {
                clip: clip.id.clone(),
                phase,
                weight: 1.0,
            }])
        };
        match &self.mode {
            PlayerMode::Idle { clip, phase } => one(clip, *phase),
            PlayerMode::Salient { clip, elapsed, .. } => one(clip, *elapsed),
            PlayerMode::Crossfade {
                from,
                to,
                blend_elapsed,
                window,
                ..
            } => {
                let progress = (blend_elapsed / window).clamp(0.0, 1.0);
                PlayerOutput(vec![
                    ClipWeight {
                        clip: from.clip.id.clone(),
                        phase: from.phase,
                        weight: 1.0 - progress,
                    },
                    ClipWeight {
                        clip: to.clip.id.clone(),
                        phase: to.phase,
                        weight: progress,
                    },
                ])
            }
        }
    }
}

/// Fires a salient clip. From idle the salient starts immediately; while a
/// salient or a crossfade is running, the new salient blends in over the
/// standard window from whichever clip currently dominates the output.
pub fn trigger_salient(state: &PlayerState, salient: &Clip, idle: &Clip) -> Result<PlayerState, PlayerError> {
    if !idle.loopable {
        return Err(PlayerError::NonLoopableIdle(idle.id.clone()));
    }
    let from = match &state.mode {
        PlayerMode::Idle { .. } => {
            return Ok(PlayerState {
                mode: PlayerMode::Salient {
                    clip: salient.clone(),
                    elapsed: 0.0,
                    idle: idle.clone(),
                },
                blend_window: state.blend_window,
            });
        }
        PlayerMode::Salient { clip, elapsed, .. } => ClipCursor {
            clip: clip.clone(),
            phase: *elapsed,
            looping: false,
        },
        PlayerMode::Crossfade {
            from,
            to,
            blend_elapsed,
            window,
            ..
        } => {
            if blend_elapsed / window >= 0.5 {
                to.clone()
            } else {
                from.clone()
            }
        }
    };
    Ok(PlayerState {
        mode: PlayerMode::Crossfade {
            from,
            to: ClipCursor::start(salient.clone(), false),
            blend_elapsed: 0.0,
            window: state.blend_window.min(salient.duration),
            then: AfterBlend::Salient { idle: idle.clone() },
        },
        blend_window: state.blend_window,
    })
}

/// Advances the player by `dt` seconds, crossing as many mode boundaries as
/// the step spans, and reports the blended output at the new time.
pub fn tick(state: &PlayerState, dt: f64) -> (PlayerState, PlayerOutput) {
    debug_assert!(dt > 0.0, "tick requires dt > 0");
    let blend_window = state.blend_window;
    let mut mode = state.mode.clone();
    let mut remaining = dt.max(0.0);
    loop {
        let (next, done) = match mode {
            PlayerMode::Idle { clip, phase } => {
                let phase = (phase + remaining).rem_euclid(clip.duration);
                (PlayerMode::Idle { clip, phase }, true)
            }
            PlayerMode::Salient { clip, elapsed, idle } => {
                let window = blend_window.min(clip.duration);
                let blend_start = clip.duration - window;
                if elapsed + remaining < blend_start {
                    let elapsed = elapsed + remaining;
                    (PlayerMode::Salient { clip, elapsed, idle }, true)
                } else {
                    let used = (blend_start - elapsed).max(0.0);
                    remaining -= used;
                    let phase = elapsed + used;
                    let crossfade = PlayerMode::Crossfade {
                        blend_elapsed: (phase - blend_start).min(window),
                        from: ClipCursor {
                            clip,
                            phase,
                            looping: false,
                        },
                        to: ClipCursor::start(idle, true),
                        window,
                        then: AfterBlend::Idle,
                    };
                    (crossfade, false)
                }
            }
            PlayerMode::Crossfade {
                mut from,
                mut to,
                blend_elapsed,
                window,
                then,
            } => {
                if blend_elapsed + remaining < window {
                    from.advance(remaining);
                    to.advance(remaining);
                    let crossfade = PlayerMode::Crossfade {
                        from,
                        to,
                        blend_elapsed: blend_elapsed + remaining,
                        window,
                        then,
                    };
                    (crossfade, true)
                } else {
                    let used = (window - blend_elapsed).max(0.0);
                    to.advance(used);
                    remaining -= used;
                    let settled = match then {
                        AfterBlend::Idle => PlayerMode::Idle {
                            clip: to.clip,
                            phase: to.phase,
                        },
                        AfterBlend::Salient { idle } => PlayerMode::Salient {
                            clip: to.clip,
                            elapsed: to.phase,
                            idle,
                        },
                    };
                    (settled, false)
                }
            }
        };
        mode = next;
        if done {
            break;
        }
    }
    let next = PlayerState { mode, blend_window };
    let output = next.output();
    (next, output)
}

/// Frame range playback request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceSpec {
    pub sequence: String,
    pub start_frame: i64,
    pub end_frame: i64,
    pub rate: f64,
}

impl SequenceSpec {
    pub fn validate(&self) -> Result<(), PlayerError> {
        let invalid = |reason: &str| PlayerError::InvalidSequence {
            sequence: self.sequence.clone(),
            reason: reason.to_string(),
        };
        if self.sequence.is_empty() {
            return Err(invalid("empty sequence id"));
        }
        if self.start_frame > self.end_frame {
            return Err(invalid("start_frame is after end_frame"));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(invalid("rate must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SequencePlayback {
    pub sequence: String,
    pub frame: f64,
    pub start: i64,
    pub end: i64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SequenceStep {
    Playing(SequencePlayback),
    Finished,
}

impl SequencePlayback {
    pub fn start(spec: &SequenceSpec) -> Result<Self, PlayerError> {
        spec.validate()?;
        Ok(SequencePlayback {
            sequence: spec.sequence.clone(),
            frame: spec.start_frame as f64,
            start: spec.start_frame,
            end: spec.end_frame,
            rate: spec.rate,
        })
    }
}

/// Advances playback by `rate * dt` frames; reaching the end frame consumes
/// the playback and yields `Finished`.
pub fn sequence_tick(playback: SequencePlayback, dt: f64) -> SequenceStep {
    debug_assert!(dt > 0.0, "sequence_tick requires dt > 0");
    let end = playback.end as f64;
    let frame = (playback.frame + playback.rate * dt).min(end);
    if frame >= end {
        SequenceStep::Finished
    } else {
        SequenceStep::Playing(SequencePlayback { frame, ..playback })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn breathing() -> Clip {
        Clip::new("breathing", 4.0, true).unwrap()
    }

    fn wave() -> Clip {
        Clip::new("wave", 2.0, false).unwrap()
    }

    #[test]
    fn trigger_from_idle_starts_salient() {
        let s = PlayerState::idle(breathing()).unwrap();
        let s = trigger_salient(&s, &wave(), &breathing()).unwrap();
        assert_eq!(
            s.mode,
            PlayerMode::Salient {
                clip: wave(),
                elapsed: 0.0,
                idle: breathing()
            }
        );
    }

    #[test]
    fn non_loopable_idle_rejected() {
        let s = PlayerState::idle(breathing()).unwrap();
        assert_eq!(
            trigger_salient(&s, &wave(), &wave()),
            Err(PlayerError::NonLoopableIdle("wave".into()))
        );
        assert!(PlayerState::idle(wave()).is_err());
    }

    /// Transition table: Salient(old @ 0.5) --trigger(new)--> Crossfade(old@0.5 -> new@0, window 0.3)
    #[test]
    fn retrigger_mid_salient_crossfades() {
        let s = PlayerState::idle(breathing()).unwrap();
        let s = trigger_salient(&s, &wave(), &breathing()).unwrap();
        let (s, _) = tick(&s, 0.5);
        let bow = Clip::new("bow", 3.0, false).unwrap();
        let s = trigger_salient(&s, &bow, &breathing()).unwrap();
        assert_eq!(
            s.mode,
            PlayerMode::Crossfade {
                from: ClipCursor {
                    clip: wave(),
                    phase: 0.5,
                    looping: false
                },
                to: ClipCursor {
                    clip: bow.clone(),
                    phase: 0.0,
                    looping: false
                },
                blend_elapsed: 0.0,
                window: 0.3,
                then: AfterBlend::Salient { idle: breathing() },
            }
        );
        let (s, out) = tick(&s, 0.3);
        assert_eq!(out.weight_of("bow"), 1.0);
        assert!(matches!(s.mode, PlayerMode::Salient { ref clip, .. } if clip.id == "bow"));
    }

    #[test]
    fn idle_loops() {
        let s = PlayerState::idle(breathing()).unwrap();
        let (s, out) = tick(&s, 5.0);
        assert_eq!(
            out,
            PlayerOutput(vec![ClipWeight {
                clip: "breathing".into(),
                phase: 1.0,
                weight: 1.0
            }])
        );
        assert!(s.is_idle());
    }

    #[test]
    fn salient_eases_into_idle() {
        // blend starts at 2.0 - 0.3 = 1.7; at 1.85 progress is 0.15 / 0.3
        let s = PlayerState::start_salient(wave(), breathing(), 0.3).unwrap();
        let (s, out) = tick(&s, 1.85);
        assert!((out.weight_of("wave") - 0.5).abs() < 1e-9);
        assert!((out.weight_of("breathing") - 0.5).abs() < 1e-9);
        assert!((out.0[0].phase - 1.85).abs() < 1e-12);
        assert!((out.0[1].phase - 0.15).abs() < 1e-12);
        let (s, out) = tick(&s, 0.15);
        assert!(s.is_idle());
        assert_eq!(out.weight_of("breathing"), 1.0);
    }

    #[test]
    fn short_salient_uses_its_own_length_as_window() {
        let blink = Clip::new("blink", 0.2, false).unwrap();
        let s = PlayerState::start_salient(blink, breathing(), 0.3).unwrap();
        let (s, out) = tick(&s, 0.1);
        assert!((out.weight_of("breathing") - 0.5).abs() < 1e-12);
        let (s, _) = tick(&s, 0.1);
        assert!(s.is_idle());
    }

    #[test]
    fn sequence_playback() {
        let spec = SequenceSpec {
            sequence: "storm".into(),
            start_frame: 0,
            end_frame: 100,
            rate: 25.0,
        };
        let pb = SequencePlayback::start(&spec).unwrap();
        let pb = match sequence_tick(pb, 1.0) {
            SequenceStep::Playing(pb) => pb,
            SequenceStep::Finished => panic!("finished early"),
        };
        assert_eq!(pb.frame, 25.0);
        assert_eq!(sequence_tick(pb, 10.0), SequenceStep::Finished);

        let bad = SequenceSpec {
            start_frame: 10,
            end_frame: 5,
            ..spec.clone()
        };
        assert!(SequencePlayback::start(&bad).is_err());
        let bad = SequenceSpec { rate: 0.0, ..spec };
        assert!(SequencePlayback::start(&bad).is_err());
    }

    #[test]
    fn catalog_loading() {
        let cat = load_clip_catalog(
            r#"[{"id":"breathing","duration":4.0,"loopable":true},{"id":"wave","duration":2.0,"loopable":false}]"#,
        )
        .unwrap();
        assert_eq!(cat.len(), 2);
        assert_eq!(cat.get("wave").unwrap(), &wave());
        assert_eq!(cat.get("bow"), Err(PlayerError::UnknownClip("bow".into())));

        let errs = load_clip_catalog(r#"[{"id":"a","duration":0,"loopable":true},{"id":"b","duration":1,"loopable":true},{"id":"b","duration":1,"loopable":true}]"#).unwrap_err();
        assert_eq!(errs.len(), 2);
        assert!(load_clip_catalog(r#"[{"id":"a","duration":1,"loopable":true,"fps":30}]"#).is_err());
    }

    #[derive(Debug, Clone)]
    enum Step {
        Tick(f64),
        Trigger(usize),
    }

    fn clips() -> Vec<Clip> {
        vec![
            wave(),
            Clip::new("bow", 3.0, false).unwrap(),
            Clip::new("blink", 0.2, false).unwrap(),
            Clip::new("jump", 1.1, false).unwrap(),
        ]
    }

    fn arb_steps() -> impl Strategy<Value = Vec<Step>> {
        prop::collection::vec(
            prop_oneof![
                3 => (0.001..0.5f64).prop_map(Step::Tick),
                1 => (0usize..4).prop_map(Step::Trigger),
            ],
            1..60,
        )
    }

    proptest! {
        #[test]
        fn weights_sum_to_one_and_blend_is_monotone(steps in arb_steps()) {
            let clips = clips();
            let mut s = PlayerState::idle(breathing()).unwrap();
            let mut last_incoming: Option<(String, f64)> = None;
            for step in steps {
                match step {
                    Step::Trigger(i) => {
                        s = trigger_salient(&s, &clips[i], &breathing()).unwrap();
                        last_incoming = None;
                    }
                    Step::Tick(dt) => {
                        let (next, out) = tick(&s, dt);
                        prop_assert!((out.weight_sum() - 1.0).abs() < 1e-9);
                        prop_assert!(out.0.len() <= 2);
                        if let PlayerMode::Crossfade { to, .. } = &next.mode {
                            let w = out.weight_of(&to.clip.id);
                            if let Some((id, prev)) = &last_incoming {
                                if *id == to.clip.id {
                                    prop_assert!(w + 1e-12 >= *prev);
                                }
                            }
                            last_incoming = Some((to.clip.id.clone(), w));
                        } else {
                            last_incoming = None;
                        }
                        s = next;
                    }
                }
            }
        }

        #[test]
        fn tick_additivity_without_boundaries(a in 0.01..0.5f64, b in 0.01..0.5f64, start in 0.0..0.5f64) {
            // a 3 s salient blends at 2.7: start + a + b < 1.5 never crosses it
            let bow = Clip::new("bow", 3.0, false).unwrap();
            let s = PlayerState::start_salient(bow, breathing(), 0.3).unwrap();
            let (s, _) = tick(&s, start + 0.001);
            let (s1, _) = tick(&s, a);
            let (_, split) = tick(&s1, b);
            let (_, joint) = tick(&s, a + b);
            prop_assert!((split.0[0].phase - joint.0[0].phase).abs() < 1e-9);
            prop_assert!((split.0[0].weight - joint.0[0].weight).abs() < 1e-9);
        }
    }
}
