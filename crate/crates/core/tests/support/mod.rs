//! Oracles and generators shared by integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use regie_core::cueengine::{parse_cuesheet, CueId, Engine};
use regie_core::scene::{load_level, Pose, Vec3};
use regie_core::stagemath::OffsetTransform;
use serde_json::{json, Value};

/// 4x4 homogeneous transforms, computed with plain radians trig.
pub mod matrix {
    use super::*;

    pub type M4 = [[f64; 4]; 4];

    pub fn from_parts(x: f64, y: f64, z: f64, yaw_deg: f64) -> M4 {
        let (s, c) = yaw_deg.to_radians().sin_cos();
        [[c, -s, 0.0, x], [s, c, 0.0, y], [0.0, 0.0, 1.0, z], [0.0, 0.0, 0.0, 1.0]]
    }

    pub fn of_pose(p: &Pose) -> M4 {
        from_parts(p.position.x, p.position.y, p.position.z, p.yaw)
    }

    pub fn of_offset(o: &OffsetTransform) -> M4 {
        from_parts(o.translation.x, o.translation.y, o.translation.z, o.theta)
    }

    pub fn mul(a: &M4, b: &M4) -> M4 {
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        out
    }

    /// Inverse of a rigid transform: transpose the rotation, rotate back the translation.
    pub fn rigid_inverse(m: &M4) -> M4 {
        let mut out = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = m[j][i];
            }
            out[i][3] = -(0..3).map(|k| m[k][i] * m[k][3]).sum::<f64>();
        }
        out[3][3] = 1.0;
        out
    }

    pub fn position(m: &M4) -> Vec3 {
        Vec3::new(m[0][3], m[1][3], m[2][3])
    }

    pub fn yaw(m: &M4) -> f64 {
        m[1][0].atan2(m[0][0]).to_degrees()
    }
}

/// Smallest absolute difference between two headings, in degrees.
pub fn yaw_error(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

pub fn arb_pose() -> impl Strategy<Value = Pose> {
    (-50.0..50.0f64, -50.0..50.0f64, -5.0..5.0f64, -720.0..720.0f64)
        .prop_map(|(x, y, z, yaw)| Pose::new(Vec3::new(x, y, z), yaw))
}

#[derive(Debug, Clone)]
pub enum GenSet {
    Avatar {
        target: usize,
        goal: Option<usize>,
        visible: Option<bool>,
        to_player: bool,
    },
    Prop {
        target: usize,
        goal: Option<usize>,
        visible: Option<bool>,
        attach: Option<Option<(usize, usize)>>,
    },
    Camera {
        goal: Option<usize>,
        fade: Option<(bool, f64)>,
    },
    Osc(i32),
    Sequence(u8),
}

#[derive(Debug, Clone)]
pub struct GenShow {
    pub avatars: usize,
    pub props: usize,
    pub goals: [Vec<Pose>; 3],
    pub cues: Vec<Vec<(bool, GenSet)>>,
    pub order: Vec<usize>,
}

const SOCKETS: [&str; 3] = ["pelvis", "left_arm", "right_hand"];

fn arb_set() -> impl Strategy<Value = GenSet> {
    prop_oneof![
        4 => (any::<usize>(), proptest::option::of(any::<usize>()), proptest::option::of(any::<bool>()), prop::bool::weighted(0.1))
            .prop_map(|(target, goal, visible, to_player)| GenSet::Avatar { target, goal, visible, to_player }),
        3 => (any::<usize>(), proptest::option::of(any::<usize>()), proptest::option::of(any::<bool>()),
              proptest::option::of(proptest::option::of((any::<usize>(), 0..SOCKETS.len()))))
            .prop_map(|(target, goal, visible, attach)| GenSet::Prop { target, goal, visible, attach }),
        2 => (proptest::option::of(any::<usize>()), proptest::option::of((any::<bool>(), 0.1..5.0f64)))
            .prop_map(|(goal, fade)| GenSet::Camera { goal, fade }),
        1 => any::<i32>().prop_map(GenSet::Osc),
        1 => any::<u8>().prop_map(GenSet::Sequence),
    ]
}

pub fn arb_show() -> impl Strategy<Value = GenShow> {
    let goals = [
        prop::collection::vec(arb_pose(), 1..=3),
        prop::collection::vec(arb_pose(), 1..=3),
        prop::collection::vec(arb_pose(), 1..=3),
    ];
    (
        1..=3usize,
        0..=3usize,
        goals,
        prop::collection::vec(prop::collection::vec((prop::bool::weighted(0.2), arb_set()), 0..=4), 1..=6),
    )
        .prop_flat_map(|(avatars, props, goals, cues)| {
            let order: Vec<usize> = (0..cues.len()).collect();
            (Just(avatars), Just(props), Just(goals), Just(cues), Just(order).prop_shuffle())
        })
        .prop_map(|(avatars, props, goals, cues, order)| GenShow {
            avatars,
            props,
            goals,
            cues,
            order,
        })
}

impl GenShow {
    pub fn cue_id(i: usize) -> CueId {
        (i as CueId + 1) * 10
    }

    fn goal_id(kind: usize, i: usize) -> String {
        format!("G{}_{i}", ["A", "P", "C"][kind])
    }

    pub fn level_json(&self) -> String {
        let kinds = ["avatar", "prop", "camera"];
        let goals: Vec<Value> = (0..3)
            .flat_map(|k| {
                self.goals[k].iter().enumerate().map(move |(i, p)| {
                    json!({"id": Self::goal_id(k, i), "kind": kinds[k],
                           "pos": [p.position.x, p.position.y, p.position.z], "yaw": p.yaw})
                })
            })
            .collect();
        json!({"name": "generated", "goals": goals}).to_string()
    }

    pub fn cuesheet_json(&self) -> String {
        let avatars: Vec<Value> = (0..self.avatars)
            .map(|i| json!({"id": format!("A{i}"), "source": {"mocap": format!("s{i}")}}))
            .collect();
        let props: Vec<Value> = (0..self.props)
            .map(|i| {
                if i == 2 {
                    json!({"id": format!("P{i}"), "kind": "mesh", "mode": {"dependent": {"avatar": "A0", "socket": "head"}}})
                } else {
                    json!({"id": format!("P{i}"), "kind": "mesh", "mode": "autonomous"})
                }
            })
            .collect();
        let goal = |k: usize, g: &Option<usize>| g.map(|g| Self::goal_id(k, g % self.goals[k].len()));
        let mut cues = serde_json::Map::new();
        for (ci, sets) in self.cues.iter().enumerate() {
            let sets: Vec<Value> = sets
                .iter()
                .filter_map(|(bypass, set)| {
                    let mut v = match set {
                        GenSet::Avatar {
                            target,
                            goal: g,
                            visible,
                            to_player,
                        } => {
                            let mut v = json!({"type": "avatar", "target": format!("A{}", target % self.avatars)});
                            if let Some(g) = goal(0, g) {
                                v["goal"] = json!(g);
                            }
                            if let Some(vis) = visible {
                                v["visible"] = json!(vis);
                            }
                            if *to_player {
                                v["animation"] = json!({"switch_source": "player"});
                            }
                            v
                        }
                        GenSet::Prop {
                            target,
                            goal: g,
                            visible,
                            attach,
                        } => {
                            if self.props == 0 {
                                return None;
                            }
                            let mut v = json!({"type": "prop", "target": format!("P{}", target % self.props)});
                            if let Some(g) = goal(1, g) {
                                v["goal"] = json!(g);
                            }
                            if let Some(vis) = visible {
                                v["visible"] = json!(vis);
                            }
                            match attach {
                                Some(Some((a, s))) => {
                                    v["attach"] = json!({"avatar": format!("A{}", a % self.avatars), "socket": SOCKETS[*s]})
                                }
                                Some(None) => v["attach"] = json!("detach"),
                                None => {}
                            }
                            v
                        }
                        GenSet::Camera { goal: g, fade } => {
                            let mut v = json!({"type": "camera"});
                            if let Some(g) = goal(2, g) {
                                v["goal"] = json!(g);
                            }
                            if let Some((fade_in, d)) = fade {
                                v["fade"] = json!({"direction": if *fade_in { "in" } else { "out" }, "duration": d});
                            }
                            v
                        }
                        GenSet::Osc(n) => json!({"type": "osc", "address": format!("/gen/{}", n.rem_euclid(7)), "args": [n]}),
                        GenSet::Sequence(n) => {
                            json!({"type": "sequence", "sequence": format!("seq{n}"), "start_frame": 0, "end_frame": *n as i64, "rate": 30.0})
                        }
                    };
                    v["bypass"] = json!(bypass);
                    Some(v)
                })
                .collect();
            cues.insert(Self::cue_id(ci).to_string(), json!({"label": format!("cue {ci}"), "sets": sets}));
        }
        let main: Vec<CueId> = self.order.iter().map(|&i| Self::cue_id(i)).collect();
        json!({
            "cast": {"avatars": avatars, "props": props, "cameras": ["Cam"]},
            "cuelists": {"Main": main},
            "cues": cues,
        })
        .to_string()
    }

    pub fn engine(&self) -> Engine {
        let level = load_level(&self.level_json()).expect("generated level is valid");
        let cuesheet = parse_cuesheet(&self.cuesheet_json(), &level).expect("generated cuesheet is valid");
        Engine::new(Arc::new(cuesheet), Arc::new(level))
    }
}

#[derive(Debug, Clone)]
pub enum Op {
    Go(Vec<Pose>),
    GoBack,
    Bypass { cue: usize, set: usize, flag: Option<bool> },
}

pub fn arb_ops(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<Op>> {
    let op = prop_oneof![
        5 => prop::collection::vec(arb_pose(), 3).prop_map(Op::Go),
        3 => Just(Op::GoBack),
        2 => (any::<usize>(), any::<usize>(), proptest::option::of(any::<bool>()))
            .prop_map(|(cue, set, flag)| Op::Bypass { cue, set, flag }),
    ];
    prop::collection::vec(op, len)
}

fn roots_map(poses: &[Pose]) -> BTreeMap<String, Pose> {
    poses.iter().enumerate().map(|(i, p)| (format!("A{i}"), *p)).collect()
}

/// Drives `engine` through `ops`, returning the live roots in force at each
/// cuelist position (those of the most recent go that reached it).
pub fn run_ops(engine: &mut Engine, show: &GenShow, ops: &[Op], mut after_each: impl FnMut(&Engine, &[BTreeMap<String, Pose>])) {
    let mut roots_at: Vec<BTreeMap<String, Pose>> = Vec::new();
    for op in ops {
        match op {
            Op::Go(poses) => {
                let roots = roots_map(poses);
                let next = engine.state().pointer.map_or(0, |p| p + 1);
                if engine.go(&roots).is_ok() {
                    roots_at.truncate(next);
                    roots_at.push(roots);
                }
            }
            Op::GoBack => {
                let _ = engine.goback();
            }
            Op::Bypass { cue, set, flag } => {
                let ci = cue % show.cues.len();
                let n = engine.cuesheet().cues[&GenShow::cue_id(ci)].sets.len();
                if n == 0 {
                    continue;
                }
                let id = GenShow::cue_id(ci);
                match flag {
                    Some(f) => engine.set_bypass(id, set % n, *f).unwrap(),
                    None => {
                        engine.toggle_bypass(id, set % n).unwrap();
                    }
                }
            }
        }
        after_each(engine, &roots_at);
    }
}

/// Hash of a fresh engine given the same bypass overrides and then `k + 1`
/// straight go calls with the recorded roots.
pub fn straight_hash(show: &GenShow, overrides_from: &Engine, roots_at: &[BTreeMap<String, Pose>]) -> String {
    let mut fresh = show.engine();
    for (cue, sets) in &overrides_from.state().bypass_overrides {
        for (set, flag) in sets {
            fresh.set_bypass(*cue, *set, *flag).unwrap();
        }
    }
    if let Some(k) = overrides_from.state().pointer {
        for roots in &roots_at[..=k] {
            fresh.go(roots).unwrap();
        }
    }
    fresh.state().digest()
}
