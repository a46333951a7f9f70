//! Kinematic hand description: digits, joints, angle limits and poses.
//!
//! Angles are in degrees with flexion positive. The all-zeros pose is full
//! extension, so opening the hand is a monotone decrease of the flexion
//! angles. The wrist is held by the splint at a fixed extension and is not a
//! degree of freedom.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// Wrist extension imposed by the forearm splint, degrees.
pub const WRIST_EXTENSION_DEG: f64 = 30.0;

/// Index-finger tendon travel over the complete range of motion, mm.
pub const DEFAULT_EXCURSION_TARGET_MM: f64 = 57.0;

/// Starting guess used before the depth calibration runs.
const UNCALIBRATED_DEPTH_MM: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Digit {
    Thumb,
    Index,
    Middle,
    Ring,
    Little,
}

impl Digit {
    pub const ALL: [Digit; 5] = [
        Digit::Thumb,
        Digit::Index,
        Digit::Middle,
        Digit::Ring,
        Digit::Little,
    ];
    pub const FINGERS: [Digit; 4] = [Digit::Index, Digit::Middle, Digit::Ring, Digit::Little];

    pub fn is_finger(self) -> bool {
        self != Digit::Thumb
    }

    fn as_str(self) -> &'static str {
        match self {
            Digit::Thumb => "thumb",
            Digit::Index => "index",
            Digit::Middle => "middle",
            Digit::Ring => "ring",
            Digit::Little => "little",
        }
    }
}

impl fmt::Display for Digit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Digit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Digit::ALL
            .into_iter()
            .find(|d| d.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| invalid(format!("unknown digit '{s}'")))
    }
}

/// Articulation type. `Abduction` is the ab/adduction axis carried by a
/// finger MCP; on the thumb it is the CMC adduction axis (adduction positive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Cmc,
    Mcp,
    Pip,
    Dip,
    Ip,
    Abduction,
}

impl JointKind {
    const ALL: [JointKind; 6] = [
        JointKind::Cmc,
        JointKind::Mcp,
        JointKind::Pip,
        JointKind::Dip,
        JointKind::Ip,
        JointKind::Abduction,
    ];

    fn as_str(self) -> &'static str {
        match self {
            JointKind::Cmc => "cmc",
            JointKind::Mcp => "mcp",
            JointKind::Pip => "pip",
            JointKind::Dip => "dip",
            JointKind::Ip => "ip",
            JointKind::Abduction => "abduction",
        }
    }
}

impl fmt::Display for JointKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Identifies one articulation, written `digit.kind` (e.g. `index.mcp`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JointId {
    pub digit: Digit,
    pub kind: JointKind,
}

impl JointId {
    pub const fn new(digit: Digit, kind: JointKind) -> Self {
        Self { digit, kind }
    }
}

impl fmt::Display for JointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.digit, self.kind)
    }
}

impl FromStr for JointId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (digit, kind) = s
            .split_once('.')
            .ok_or_else(|| invalid(format!("joint '{s}' is not of the form digit.kind")))?;
        let digit = digit.parse()?;
        let kind = JointKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(kind))
            .ok_or_else(|| invalid(format!("unknown joint kind '{kind}'")))?;
        Ok(Self { digit, kind })
    }
}

impl Serialize for JointId {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for JointId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Joint {
    pub id: JointId,
    pub flexion_min: f64,
    pub flexion_max: f64,
}

impl Joint {
    pub fn new(digit: Digit, kind: JointKind, flexion_min: f64, flexion_max: f64) -> Self {
        Self {
            id: JointId::new(digit, kind),
            flexion_min,
            flexion_max,
        }
    }

    pub fn contains(&self, angle: f64) -> bool {
        angle >= self.flexion_min && angle <= self.flexion_max
    }

    pub fn clamp(&self, angle: f64) -> f64 {
        angle.clamp(self.flexion_min, self.flexion_max)
    }
}

/// Joint set, limits and the depth of each rotation axis below the skin.
///
/// The depth is what turns a guide height above the skin into an effective
/// moment arm; it is not published and is solved by
/// [`calibrate_depth`](crate::tendon::calibrate_depth).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HandConfig", into = "HandConfig")]
pub struct HandModel {
    joints: Vec<Joint>,
    joint_center_depth: BTreeMap<JointId, f64>,
}

impl HandModel {
    pub fn new(joints: Vec<Joint>, joint_center_depth: BTreeMap<JointId, f64>) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for j in &joints {
            if !(j.flexion_min < j.flexion_max) {
                return Err(invalid(format!(
                    "joint {}: flexion_min {} must be below flexion_max {}",
                    j.id, j.flexion_min, j.flexion_max
                )));
            }
            if seen.insert(j.id, ()).is_some() {
                return Err(invalid(format!("joint {} listed twice", j.id)));
            }
            match joint_center_depth.get(&j.id) {
                Some(d) if *d > 0.0 && d.is_finite() => {}
                Some(d) => {
                    return Err(invalid(format!(
                        "joint {}: center depth {d} mm must be positive",
                        j.id
                    )))
                }
                None => return Err(invalid(format!("joint {}: missing center depth", j.id))),
            }
        }
        if let Some(extra) = joint_center_depth.keys().find(|k| !seen.contains_key(k)) {
            return Err(Error::UnknownJoint(*extra));
        }
        Ok(Self {
            joints,
            joint_center_depth,
        })
    }

    /// Standard joint set with normative goniometric ranges and one uniform
    /// axis depth.
    pub fn with_uniform_depth(depth_mm: f64) -> Result<Self> {
        let joints = default_joints();
        let depth = joints.iter().map(|j| (j.id, depth_mm)).collect();
        Self::new(joints, depth)
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn joint(&self, id: JointId) -> Option<&Joint> {
        self.joints.iter().find(|j| j.id == id)
    }

    pub fn has_joint(&self, id: JointId) -> bool {
        self.joint(id).is_some()
    }

    pub fn center_depth(&self, id: JointId) -> Option<f64> {
        self.joint_center_depth.get(&id).copied()
    }

    /// Same joints, every axis depth replaced by `depth_mm`.
    pub fn set_uniform_depth(&self, depth_mm: f64) -> Result<Self> {
        let depth = self.joints.iter().map(|j| (j.id, depth_mm)).collect();
        Self::new(self.joints.clone(), depth)
    }

    pub fn wrist_extension(&self) -> f64 {
        WRIST_EXTENSION_DEG
    }

    /// Each joint at 0 clamped into its range; all flexion joints fully extended.
    pub fn zero_pose(&self) -> HandPose {
        HandPose::from_angles(self.joints.iter().map(|j| (j.id, j.clamp(0.0))))
    }

    /// Every flexion joint at `fraction` of its upper limit, ab/adduction at
    /// neutral. `fraction = 1` is the closed fist.
    pub fn flexed_pose(&self, fraction: f64) -> HandPose {
        let f = fraction.clamp(0.0, 1.0);
        HandPose::from_angles(self.joints.iter().map(|j| {
            let angle = if j.id.kind == JointKind::Abduction {
                j.clamp(0.0)
            } else {
                j.clamp(f * j.flexion_max)
            };
            (j.id, angle)
        }))
    }

    pub fn full_flexion_pose(&self) -> HandPose {
        self.flexed_pose(1.0)
    }

    /// Checks completeness, joint limits and the fixed wrist.
    pub fn validate_pose(&self, pose: &HandPose) -> Result<()> {
        if pose.wrist_extension != WRIST_EXTENSION_DEG {
            return Err(invalid(format!(
                "wrist extension {} deg, splint fixes it at {WRIST_EXTENSION_DEG}",
                pose.wrist_extension
            )));
        }
        for j in &self.joints {
            let angle = pose.get(j.id).ok_or(Error::MissingJoint(j.id))?;
            if !j.contains(angle) {
                return Err(Error::PoseOutOfRange {
                    joint: j.id,
                    angle,
                    min: j.flexion_min,
                    max: j.flexion_max,
                });
            }
        }
        if let Some(extra) = pose.angles.keys().find(|k| !self.has_joint(**k)) {
            return Err(Error::UnknownJoint(*extra));
        }
        Ok(())
    }
}

/// The calibrated default hand: normative ranges, axis depth solved so the
/// index extension tendon travels 57 mm over full flexion.
pub fn default_hand() -> HandModel {
    let seed =
        HandModel::with_uniform_depth(UNCALIBRATED_DEPTH_MM).expect("default joint table is valid");
    crate::tendon::calibrate_depth(&seed, DEFAULT_EXCURSION_TARGET_MM)
        .expect("default excursion target is reachable")
}

fn default_joints() -> Vec<Joint> {
    use JointKind::*;
    let mut joints = vec![
        Joint::new(Digit::Thumb, Cmc, 0.0, 50.0),
        Joint::new(Digit::Thumb, Abduction, 0.0, 45.0),
        Joint::new(Digit::Thumb, Mcp, 0.0, 55.0),
        Joint::new(Digit::Thumb, Ip, 0.0, 80.0),
    ];
    for digit in Digit::FINGERS {
        joints.extend([
            Joint::new(digit, Mcp, 0.0, 90.0),
            Joint::new(digit, Abduction, -15.0, 15.0),
            Joint::new(digit, Pip, 0.0, 100.0),
            Joint::new(digit, Dip, 0.0, 70.0),
        ]);
    }
    joints
}

/// Joint angles in degrees, plus the splint-fixed wrist extension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandPose {
    pub angles: BTreeMap<JointId, f64>,
    #[serde(default = "wrist_default")]
    pub wrist_extension: f64,
}

fn wrist_default() -> f64 {
    WRIST_EXTENSION_DEG
}

impl HandPose {
    pub fn from_angles(angles: impl IntoIterator<Item = (JointId, f64)>) -> Self {
        Self {
            angles: angles.into_iter().collect(),
            wrist_extension: WRIST_EXTENSION_DEG,
        }
    }

    pub fn get(&self, id: JointId) -> Option<f64> {
        self.angles.get(&id).copied()
    }

    pub fn set(&mut self, id: JointId, angle: f64) {
        self.angles.insert(id, angle);
    }

    /// MCP + PIP + DIP of one finger, degrees. Missing joints count as 0.
    pub fn finger_flexion(&self, digit: Digit) -> f64 {
        [JointKind::Mcp, JointKind::Pip, JointKind::Dip]
            .into_iter()
            .filter_map(|k| self.get(JointId::new(digit, k)))
            .sum()
    }
}

/// Clamps every angle into its joint's range. Joints absent from the pose are
/// left absent; angles for joints the hand does not have are dropped.
pub fn clamp_pose(hand: &HandModel, pose: &HandPose) -> HandPose {
    let angles = pose
        .angles
        .iter()
        .filter_map(|(id, a)| hand.joint(*id).map(|j| (*id, j.clamp(*a))));
    HandPose::from_angles(angles)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HandConfig {
    joints: Vec<JointEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointEntry {
    joint: JointId,
    flexion_min: f64,
    flexion_max: f64,
    center_depth_mm: f64,
}

impl TryFrom<HandConfig> for HandModel {
    type Error = Error;

    fn try_from(cfg: HandConfig) -> Result<Self> {
        let joints = cfg
            .joints
            .iter()
            .map(|e| Joint {
                id: e.joint,
                flexion_min: e.flexion_min,
                flexion_max: e.flexion_max,
            })
            .collect();
        let depth = cfg
            .joints
            .iter()
            .map(|e| (e.joint, e.center_depth_mm))
            .collect();
        HandModel::new(joints, depth)
    }
}

impl From<HandModel> for HandConfig {
    fn from(hand: HandModel) -> Self {
        let joints = hand
            .joints
            .iter()
            .map(|j| JointEntry {
                joint: j.id,
                flexion_min: j.flexion_min,
                flexion_max: j.flexion_max,
                center_depth_mm: hand.joint_center_depth[&j.id],
            })
            .collect();
        HandConfig { joints }
    }
}
