//! Level and cast data model.
//!
//! A level is a named, ordered list of typed goal markers (the blocking).
//! Coordinates are meters in a Z-up right-handed world frame; yaw is in
//! degrees, counter-clockwise about +Z seen from above, normalized to
//! `[-180, 180)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stagemath::{self, OffsetTransform};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error("duplicate goal id `{0}`")]
    DuplicateGoalId(String),
    #[error("goal #{0} has an empty id")]
    EmptyGoalId(usize),
    #[error("malformed document at line {line}, column {column}: {message}")]
    MalformedDocument {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("goal `{0}` has a non-finite coordinate")]
    NonFiniteCoordinate(String),
    #[error("unknown goal `{0}`")]
    UnknownGoal(String),
    #[error("goal `{id}` is a {actual} goal, expected a {expected} goal")]
    GoalKindMismatch {
        id: String,
        expected: GoalKind,
        actual: GoalKind,
    },
    #[error("unknown socket `{0}`")]
    UnknownSocket(String),
}

impl SceneError {
    pub(crate) fn malformed(err: &serde_json::Error) -> Self {
        SceneError::MalformedDocument {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 {
        x: 0.0,
        y: 0.0,
        z: 0.0,
    };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Vec3) -> f64 {
        (*self - *other).norm()
    }

    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from([x, y, z]: [f64; 3]) -> Self {
        Vec3 { x, y, z }
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        [v.x, v.y, v.z]
    }
}

impl std::ops::Add for Vec3 {
    type Output = Vec3;
    fn add(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl std::ops::Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, rhs: Vec3) -> Vec3 {
        Vec3::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

/// Planar rigid placement: a position plus a heading about +Z.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    #[serde(rename = "pos")]
    pub position: Vec3,
    pub yaw: f64,
}

impl Pose {
    pub const IDENTITY: Pose = Pose {
        position: Vec3::ZERO,
        yaw: 0.0,
    };

    /// Builds a pose, normalizing `yaw` into `[-180, 180)`.
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Pose {
            position,
            yaw: stagemath::normalize_degrees(yaw),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.yaw.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalKind {
    Avatar,
    Prop,
    Camera,
}

impl GoalKind {
    pub const ALL: [GoalKind; 3] = [GoalKind::Avatar, GoalKind::Prop, GoalKind::Camera];
}

impl fmt::Display for GoalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GoalKind::Avatar => "avatar",
            GoalKind::Prop => "prop",
            GoalKind::Camera => "camera",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Goal {
    pub id: String,
    pub kind: GoalKind,
    #[serde(rename = "pos")]
    pub position: Vec3,
    pub yaw: f64,
}

impl Goal {
    pub fn new(id: impl Into<String>, kind: GoalKind, pose: Pose) -> Self {
        Goal {
            id: id.into(),
            kind,
            position: pose.position,
            yaw: pose.yaw,
        }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.yaw)
    }
}

/// Where an avatar's root motion comes from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum AvatarSource {
    /// Driven live by the named motion-capture subject.
    Mocap(String),
    /// Driven by the salient/idle animation player.
    Player,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AvatarDef {
    pub id: String,
    pub source: AvatarSource,
    #[serde(default)]
    pub appearance: String,
    #[serde(default = "default_true")]
    pub visible: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PropKind {
    Mesh,
    Light,
    Particles,
    Audio,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocketRef {
    pub avatar: String,
    pub socket: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum PropMode {
    Autonomous,
    Dependent(SocketRef),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropDef {
    pub id: String,
    pub kind: PropKind,
    pub mode: PropMode,
}

/// Named attachment points on an avatar, each a fixed offset from its root.
///
/// This is a rigid stand-in for skeletal sockets: a dependent element
/// follows the avatar root, not the animated bone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SocketTable(BTreeMap<String, Pose>);

impl Default for SocketTable {
    fn default() -> Self {
        Self::standard()
    }
}

impl SocketTable {
    pub fn new(entries: impl IntoIterator<Item = (String, Pose)>) -> Self {
        SocketTable(entries.into_iter().collect())
    }

    /// Human-scale defaults for an avatar facing +X (left is +Y).
    pub fn standard() -> Self {
        let p = |x, y, z| Pose::new(Vec3::new(x, y, z), 0.0);
        Self::new([
            ("pelvis".to_string(), p(0.0, 0.0, 1.0)),
            ("head".to_string(), p(0.0, 0.0, 1.7)),
            ("left_arm".to_string(), p(0.0, 0.3, 1.4)),
            ("right_arm".to_string(), p(0.0, -0.3, 1.4)),
            ("left_hand".to_string(), p(0.1, 0.4, 1.0)),
            ("right_hand".to_string(), p(0.1, -0.4, 1.0)),
        ])
    }

    pub fn get(&self, socket: &str) -> Result<&Pose, SceneError> {
        self.0
            .get(socket)
            .ok_or_else(|| SceneError::UnknownSocket(socket.to_string()))
    }

    pub fn contains(&self, socket: &str) -> bool {
        self.0.contains_key(socket)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Pose)> {
        self.0.iter()
    }

    /// World pose of an element hung on `socket` of an avatar whose root is `avatar_root`.
    pub fn attachment_pose(&self, avatar_root: &Pose, socket: &str) -> Result<Pose, SceneError> {
        Ok(attachment_pose(avatar_root, self.get(socket)?))
    }
}

/// Composes a socket offset onto an avatar root: yaws add, the offset
/// position is rotated by the root yaw and then translated by the root position.
pub fn attachment_pose(avatar_root: &Pose, socket_offset: &Pose) -> Pose {
    let root_frame = OffsetTransform::new(avatar_root.yaw, avatar_root.position);
    stagemath::apply_offset(&root_frame, socket_offset)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Level {
    pub name: String,
    goals: Vec<Goal>,
}

impl Level {
    /// Validates and builds a level from already-parsed goals.
    pub fn from_goals(name: impl Into<String>, goals: Vec<Goal>) -> Result<Self, Vec<SceneError>> {
        let mut errors = Vec::new();
        let mut seen = BTreeSet::new();
        let mut reported = BTreeSet::new();
        let mut normalized = Vec::with_capacity(goals.len());
        for (index, goal) in goals.into_iter().enumerate() {
            if goal.id.is_empty() {
                errors.push(SceneError::EmptyGoalId(index));
                continue;
            }
            if !seen.insert(goal.id.clone()) {
                if reported.insert(goal.id.clone()) {
                    errors.push(SceneError::DuplicateGoalId(goal.id.clone()));
                }
                continue;
            }
            if !goal.position.is_finite() || !goal.yaw.is_finite() {
                errors.push(SceneError::NonFiniteCoordinate(goal.id.clone()));
                continue;
            }
            let pose = goal.pose();
            normalized.push(Goal::new(goal.id, goal.kind, pose));
        }
        if errors.is_empty() {
            Ok(Level {
                name: name.into(),
                goals: normalized,
            })
        } else {
            Err(errors)
        }
    }

    pub fn goals(&self) -> &[Goal] {
        &self.goals
    }

    pub fn goal(&self, id: &str) -> Option<&Goal> {
        self.goals.iter().find(|g| g.id == id)
    }

    pub fn resolve_goal(&self, id: &str, expected: GoalKind) -> Result<&Goal, SceneError> {
        let goal = self
            .goal(id)
            .ok_or_else(|| SceneError::UnknownGoal(id.to_string()))?;
        if goal.kind != expected {
            return Err(SceneError::GoalKindMismatch {
                id: id.to_string(),
                expected,
                actual: goal.kind,
            });
        }
        Ok(goal)
    }

    /// Serializes back to the level file format.
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("level serialization is infallible")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LevelDocument {
    name: String,
    #[serde(default)]
    goals: Vec<Goal>,
}

/// Parses and validates a level document.
pub fn load_level(document: &str) -> Result<Level, Vec<SceneError>> {
    let doc: LevelDocument =
        serde_json::from_str(document).map_err(|e| vec![SceneError::malformed(&e)])?;
    Level::from_goals(doc.name, doc.goals)
}

pub fn resolve_goal<'a>(level: &'a Level, id: &str, expected: GoalKind) -> Result<&'a Goal, SceneError> {
    level.resolve_goal(id, expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    const STAGE: &str = r#"{
        "name": "small_stage",
        "goals": [
            {"id": "GC_cam1", "kind": "camera", "pos": [0, -6, 1.7], "yaw": 90},
            {"id": "GA_center", "kind": "avatar", "pos": [0, 0, 0], "yaw": -90},
            {"id": "GP_table", "kind": "prop", "pos": [1.5, 0.5, 0], "yaw": 0}
        ]
    }"#;

    fn yaw_eq(a: f64, b: f64) -> bool {
        stagemath::angle_difference(a, b).abs() < 1e-12
    }

    #[test]
    fn loads_three_goal_kinds() {
        let level = load_level(STAGE).unwrap();
        assert_eq!(level.goals().len(), 3);
        let kinds: Vec<_> = level.goals().iter().map(|g| g.kind).collect();
        assert_eq!(kinds, vec![GoalKind::Camera, GoalKind::Avatar, GoalKind::Prop]);
    }

    #[test]
    fn empty_goal_list_is_legal() {
        let level = load_level(r#"{"name":"bare","goals":[]}"#).unwrap();
        assert!(level.goals().is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let doc = r#"{"name":"x","goals":[
            {"id":"GA_1","kind":"avatar","pos":[0,0,0],"yaw":0},
            {"id":"GA_1","kind":"avatar","pos":[1,0,0],"yaw":0}]}"#;
        assert_eq!(
            load_level(doc).unwrap_err(),
            vec![SceneError::DuplicateGoalId("GA_1".into())]
        );
    }

    #[test]
    fn unknown_keys_rejected() {
        let doc = r#"{"name":"x","goals":[{"id":"GA_1","kind":"avatar","pos":[0,0,0],"yaw":0,"pitch":3}]}"#;
        let errs = load_level(doc).unwrap_err();
        assert!(matches!(errs[0], SceneError::MalformedDocument { line: 1, .. }));
        let doc = r#"{"name":"x","goalz":[]}"#;
        assert!(matches!(
            load_level(doc).unwrap_err()[0],
            SceneError::MalformedDocument { .. }
        ));
    }

    #[test]
    fn non_finite_goal_rejected() {
        let goals = vec![
            Goal::new("GA_ok", GoalKind::Avatar, Pose::IDENTITY),
            Goal {
                id: "GA_bad".into(),
                kind: GoalKind::Avatar,
                position: Vec3::new(f64::NAN, 0.0, 0.0),
                yaw: 0.0,
            },
        ];
        assert_eq!(
            Level::from_goals("x", goals).unwrap_err(),
            vec![SceneError::NonFiniteCoordinate("GA_bad".into())]
        );
    }

    #[test]
    fn yaw_is_normalized_on_load() {
        let doc = r#"{"name":"x","goals":[{"id":"GA_1","kind":"avatar","pos":[0,0,0],"yaw":270}]}"#;
        let level = load_level(doc).unwrap();
        assert_eq!(level.goals()[0].yaw, -90.0);
    }

    #[test]
    fn resolve_goal_checks_kind_and_presence() {
        let level = load_level(STAGE).unwrap();
        assert_eq!(
            resolve_goal(&level, "GA_center", GoalKind::Avatar).unwrap().id,
            "GA_center"
        );
        assert_eq!(
            resolve_goal(&level, "GA_center", GoalKind::Prop).unwrap_err(),
            SceneError::GoalKindMismatch {
                id: "GA_center".into(),
                expected: GoalKind::Prop,
                actual: GoalKind::Avatar
            }
        );
        assert_eq!(
            resolve_goal(&level, "GA_missing", GoalKind::Avatar).unwrap_err(),
            SceneError::UnknownGoal("GA_missing".into())
        );
    }

    #[test]
    fn every_goal_resolves_only_with_its_own_kind() {
        let level = load_level(STAGE).unwrap();
        for goal in level.goals() {
            for kind in GoalKind::ALL {
                let res = level.resolve_goal(&goal.id, kind);
                if kind == goal.kind {
                    assert!(res.is_ok());
                } else {
                    assert!(matches!(res, Err(SceneError::GoalKindMismatch { .. })));
                }
            }
        }
    }

    #[test]
    fn load_is_pure() {
        let a = load_level(STAGE).unwrap();
        let b = load_level(STAGE).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert_eq!(load_level(&a.to_json()).unwrap(), a);
    }

    #[test]
    fn attachment_identity_root() {
        let offset = Pose::new(Vec3::new(0.3, 0.0, 1.4), 0.0);
        let p = attachment_pose(&Pose::IDENTITY, &offset);
        assert_eq!(p, offset);
    }

    #[test]
    fn attachment_half_turn_root() {
        // [cos180 -sin180; sin180 cos180] (0.3, 0) = (-0.3, 0), plus root (1, 0)
        let root = Pose::new(Vec3::new(1.0, 0.0, 0.0), 180.0);
        let offset = Pose::new(Vec3::new(0.3, 0.0, 1.4), 0.0);
        let p = attachment_pose(&root, &offset);
        assert!((p.position - Vec3::new(0.7, 0.0, 1.4)).norm() < 1e-12);
        assert!(yaw_eq(p.yaw, 180.0));
    }

    #[test]
    fn attachment_identity_offset_returns_root() {
        let root = Pose::new(Vec3::new(2.5, -1.25, 0.5), 37.0);
        assert_eq!(attachment_pose(&root, &Pose::IDENTITY), root);
    }

    #[test]
    fn unknown_socket() {
        let table = SocketTable::new([("head".to_string(), Pose::IDENTITY)]);
        assert_eq!(
            table.attachment_pose(&Pose::IDENTITY, "left_arm").unwrap_err(),
            SceneError::UnknownSocket("left_arm".into())
        );
        assert!(SocketTable::standard().contains("left_arm"));
    }
}
