//! Exotendon routing over the hand and the rigid-bifurcation network.
//!
//! Tendons are inextensible strings. A branch's excursion is the sum over its
//! routing points of `r * theta`, with `r = guide_height + axis depth`; flexion
//! lengthens a dorsal path and shortens a palmar one. All branches hang off a
//! single actuated tendon through rigid junctions, so they share one
//! actuator-side displacement and the actuator sees the sum of their tensions.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::hand::{Digit, HandModel, HandPose, JointId, JointKind};

/// Raised guide height over the MCP joint, mm.
pub const MCP_GUIDE_HEIGHT_MM: f64 = 8.5;
/// Raised guide height over the PIP joint, mm.
pub const PIP_GUIDE_HEIGHT_MM: f64 = 7.5;
/// Height of the middle-phalanx cloth ring above the skin, mm.
pub const RING_PROTRUSION_MM: f64 = 1.5;
/// Residual slack left per branch after fitting, mm.
pub const DEFAULT_BRANCH_SLACK_MM: f64 = 2.0;
/// DIP flexion slaved to PIP flexion when the tendon ends at the middle phalanx.
pub const DIP_PIP_COUPLING: f64 = 0.7;
/// Upper end of the axis-depth search bracket, mm.
pub const DEPTH_SEARCH_MAX_MM: f64 = 30.0;
/// Required agreement between calibrated and target excursion, mm.
pub const DEPTH_CALIBRATION_TOLERANCE_MM: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Dorsal,
    Palmar,
}

impl Side {
    /// Sign of the path-length change per unit flexion.
    pub fn sign(self) -> f64 {
        match self {
            Side::Dorsal => 1.0,
            Side::Palmar => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingPoint {
    pub joint: JointId,
    pub side: Side,
    #[serde(rename = "guide_height_mm")]
    pub guide_height: f64,
}

impl RoutingPoint {
    pub fn new(joint: JointId, side: Side, guide_height: f64) -> Self {
        Self {
            joint,
            side,
            guide_height,
        }
    }

    pub fn moment_arm(&self, hand: &HandModel) -> Result<f64> {
        let depth = hand
            .center_depth(self.joint)
            .ok_or(Error::UnknownJoint(self.joint))?;
        Ok(self.guide_height + depth)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Attachment {
    MiddlePhalanxRing { protrusion_mm: f64 },
    FingertipWrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TendonBranch {
    pub digit: Digit,
    /// Proximal to distal.
    pub routing: Vec<RoutingPoint>,
    pub attachment: Attachment,
    #[serde(rename = "slack_mm")]
    pub branch_slack: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NetworkConfig {
    /// Dorsal routing on all four fingers: whole-hand extension.
    Extension,
    /// Palmar at MCP, dorsal at the IP joints: MCP flexion with IP extension.
    #[serde(rename = "pinch")]
    PinchPattern,
}

impl NetworkConfig {
    pub fn name(self) -> &'static str {
        match self {
            NetworkConfig::Extension => "extension",
            NetworkConfig::PinchPattern => "pinch",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TendonNetwork {
    pub config_id: NetworkConfig,
    pub branches: Vec<TendonBranch>,
}

fn proximal_rank(id: JointId) -> u8 {
    match id.kind {
        JointKind::Cmc => 0,
        JointKind::Abduction if id.digit == Digit::Thumb => 0,
        JointKind::Abduction | JointKind::Mcp => 1,
        JointKind::Pip | JointKind::Ip => 2,
        JointKind::Dip => 3,
    }
}

impl TendonBranch {
    pub fn validate(&self, hand: &HandModel) -> Result<()> {
        if !(self.branch_slack >= 0.0) {
            return Err(invalid(format!(
                "{} branch: slack {} mm must be non-negative",
                self.digit, self.branch_slack
            )));
        }
        let mut last_rank = 0;
        for p in &self.routing {
            if p.joint.digit != self.digit {
                return Err(invalid(format!(
                    "{} branch routed over {} on another digit",
                    self.digit, p.joint
                )));
            }
            if !(p.guide_height >= 0.0) {
                return Err(invalid(format!(
                    "{} guide height {} mm must be non-negative",
                    p.joint, p.guide_height
                )));
            }
            if !(p.moment_arm(hand)? > 0.0) {
                return Err(invalid(format!("{} moment arm must be positive", p.joint)));
            }
            let rank = proximal_rank(p.joint);
            if rank < last_rank {
                return Err(invalid(format!(
                    "{} branch routing is not ordered proximal to distal",
                    self.digit
                )));
            }
            last_rank = rank;
        }
        Ok(())
    }

    /// Whether DIP is carried along with PIP rather than routed directly.
    pub(crate) fn couples_dip(&self) -> bool {
        matches!(self.attachment, Attachment::MiddlePhalanxRing { .. })
            && self.digit.is_finger()
            && !self.routing.iter().any(|p| p.joint.kind == JointKind::Dip)
            && self.routing.iter().any(|p| p.joint.kind == JointKind::Pip)
    }
}

impl TendonNetwork {
    pub fn validate(&self, hand: &HandModel) -> Result<()> {
        if self.branches.is_empty() {
            return Err(invalid("tendon network has no branches"));
        }
        for (i, b) in self.branches.iter().enumerate() {
            b.validate(hand)?;
            if self.branches[..i].iter().any(|o| o.digit == b.digit) {
                return Err(invalid(format!("two branches drive the {} digit", b.digit)));
            }
        }
        Ok(())
    }

    pub fn branch(&self, digit: Digit) -> Option<&TendonBranch> {
        self.branches.iter().find(|b| b.digit == digit)
    }

    pub fn with_uniform_slack(mut self, slack_mm: f64) -> Self {
        for b in &mut self.branches {
            b.branch_slack = slack_mm;
        }
        self
    }

    pub fn preset(config: NetworkConfig, hand: &HandModel) -> Self {
        match config {
            NetworkConfig::Extension => config1_extension(hand),
            NetworkConfig::PinchPattern => config2_pinch(hand),
        }
    }
}

/// Hand-extension network: one dorsal branch per finger over MCP and PIP,
/// ending at the middle-phalanx ring. The thumb is not driven.
pub fn config1_extension(hand: &HandModel) -> TendonNetwork {
    let branches = Digit::FINGERS
        .into_iter()
        .filter(|d| {
            hand.has_joint(JointId::new(*d, JointKind::Mcp))
                && hand.has_joint(JointId::new(*d, JointKind::Pip))
        })
        .map(|digit| TendonBranch {
            digit,
            routing: vec![
                RoutingPoint::new(
                    JointId::new(digit, JointKind::Mcp),
                    Side::Dorsal,
                    MCP_GUIDE_HEIGHT_MM,
                ),
                RoutingPoint::new(
                    JointId::new(digit, JointKind::Pip),
                    Side::Dorsal,
                    PIP_GUIDE_HEIGHT_MM,
                ),
            ],
            attachment: Attachment::MiddlePhalanxRing {
                protrusion_mm: RING_PROTRUSION_MM,
            },
            branch_slack: DEFAULT_BRANCH_SLACK_MM,
        })
        .collect();
    TendonNetwork {
        config_id: NetworkConfig::Extension,
        branches,
    }
}

/// MCP-flexion / IP-extension network on all five digits. Each branch runs
/// flush on the palmar side of the MCP (thumb: CMC adduction axis) and then
/// over raised dorsal guides on the IP joints.
pub fn config2_pinch(hand: &HandModel) -> TendonNetwork {
    use JointKind::*;
    let mut branches = Vec::new();
    for digit in Digit::ALL {
        let routing = if digit == Digit::Thumb {
            vec![
                RoutingPoint::new(JointId::new(digit, Abduction), Side::Palmar, 0.0),
                RoutingPoint::new(JointId::new(digit, Mcp), Side::Dorsal, MCP_GUIDE_HEIGHT_MM),
                RoutingPoint::new(JointId::new(digit, Ip), Side::Dorsal, PIP_GUIDE_HEIGHT_MM),
            ]
        } else {
            vec![
                RoutingPoint::new(JointId::new(digit, Mcp), Side::Palmar, 0.0),
                RoutingPoint::new(JointId::new(digit, Pip), Side::Dorsal, PIP_GUIDE_HEIGHT_MM),
                RoutingPoint::new(JointId::new(digit, Dip), Side::Dorsal, RING_PROTRUSION_MM),
            ]
        };
        if routing.iter().all(|p| hand.has_joint(p.joint)) {
            branches.push(TendonBranch {
                digit,
                routing,
                attachment: Attachment::FingertipWrap,
                branch_slack: DEFAULT_BRANCH_SLACK_MM,
            });
        }
    }
    TendonNetwork {
        config_id: NetworkConfig::PinchPattern,
        branches,
    }
}

/// Path length of a branch relative to the all-zeros pose, mm.
pub fn branch_excursion(hand: &HandModel, branch: &TendonBranch, pose: &HandPose) -> Result<f64> {
    hand.validate_pose(pose)?;
    excursion_of(hand, branch, pose)
}

/// Excursion without the full-pose limit check; routed joints must be present.
pub(crate) fn excursion_of(
    hand: &HandModel,
    branch: &TendonBranch,
    pose: &HandPose,
) -> Result<f64> {
    branch.routing.iter().try_fold(0.0, |acc, p| {
        let angle = pose.get(p.joint).ok_or(Error::MissingJoint(p.joint))?;
        Ok(acc + p.side.sign() * p.moment_arm(hand)? * angle.to_radians())
    })
}

fn index_full_travel(hand: &HandModel, branch: &TendonBranch, depth: f64) -> Result<f64> {
    branch.routing.iter().try_fold(0.0, |acc, p| {
        let joint = hand.joint(p.joint).ok_or(Error::UnknownJoint(p.joint))?;
        let span = (joint.flexion_max - joint.flexion_min).to_radians();
        Ok(acc + p.side.sign() * (p.guide_height + depth) * span)
    })
}

/// Solves for the single axis depth that makes the index extension branch
/// travel `target_mm` between full extension and full flexion, and applies it
/// to every joint of the hand.
pub fn calibrate_depth(hand: &HandModel, target_mm: f64) -> Result<HandModel> {
    if !(target_mm > 0.0) || !target_mm.is_finite() {
        return Err(invalid(format!(
            "target excursion {target_mm} mm must be positive"
        )));
    }
    let net = config1_extension(hand);
    let branch = net
        .branch(Digit::Index)
        .ok_or_else(|| invalid("hand has no index MCP/PIP to calibrate against"))?;

    let travel = |d: f64| index_full_travel(hand, branch, d);
    let (mut lo, mut hi) = (0.0, DEPTH_SEARCH_MAX_MM);
    let (at_lo, at_hi) = (travel(lo)?, travel(hi)?);
    let tol = DEPTH_CALIBRATION_TOLERANCE_MM;
    if target_mm < at_lo - tol || target_mm > at_hi {
        return Err(Error::UnreachableTarget {
            target: target_mm,
            depth_lo: lo,
            depth_hi: hi,
            excursion_lo: at_lo,
            excursion_hi: at_hi,
        });
    }

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if travel(mid)? < target_mm {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-12 {
            break;
        }
    }
    let depth = 0.5 * (lo + hi);
    let solved = hand.set_uniform_depth(depth)?;
    let check = travel(depth)?;
    if (check - target_mm).abs() >= tol {
        return Err(Error::UnreachableTarget {
            target: target_mm,
            depth_lo: 0.0,
            depth_hi: DEPTH_SEARCH_MAX_MM,
            excursion_lo: at_lo,
            excursion_hi: at_hi,
        });
    }
    Ok(solved)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchState {
    pub taut: bool,
    /// Tendon length freed by the hand moving from rest to the evaluated pose.
    pub free_length: f64,
    /// Displacement beyond slack and free length; zero when slack.
    pub elongation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub branches: Vec<BranchState>,
}

impl NetworkState {
    pub fn taut_flags(&self) -> Vec<bool> {
        self.branches.iter().map(|b| b.taut).collect()
    }

    pub fn elongations(&self) -> Vec<f64> {
        self.branches.iter().map(|b| b.elongation).collect()
    }

    pub fn any_taut(&self) -> bool {
        self.branches.iter().any(|b| b.taut)
    }

    /// Actuator-side displacement seen by the aggregate muscle spring: the
    /// branch elongations averaged over all branches, i.e. the common
    /// displacement once every branch is taut.
    pub fn net_elongation(&self) -> f64 {
        if self.branches.is_empty() {
            return 0.0;
        }
        self.branches.iter().map(|b| b.elongation).sum::<f64>() / self.branches.len() as f64
    }

    /// Splits an actuator-side force over the taut branches in proportion to
    /// their elongation.
    pub fn distribute(&self, total: f64) -> TensionSplit {
        let sum: f64 = self.branches.iter().map(|b| b.elongation).sum();
        let branch: Vec<f64> = if sum > 0.0 {
            self.branches
                .iter()
                .map(|b| {
                    if b.taut {
                        total * (b.elongation / sum)
                    } else {
                        0.0
                    }
                })
                .collect()
        } else {
            vec![0.0; self.branches.len()]
        };
        let actuator = branch.iter().sum();
        TensionSplit { branch, actuator }
    }
}

/// Branch tensions and the actuator-side tension they balance.
#[derive(Debug, Clone, PartialEq)]
pub struct TensionSplit {
    pub branch: Vec<f64>,
    pub actuator: f64,
}

/// Taut/slack state of every branch for a held pose and an actuator
/// displacement measured from full extension of the actuator.
pub fn network_state(
    hand: &HandModel,
    net: &TendonNetwork,
    rest: &HandPose,
    pose: &HandPose,
    actuator_displacement: f64,
) -> Result<NetworkState> {
    if !(actuator_displacement >= 0.0) || !actuator_displacement.is_finite() {
        return Err(invalid(format!(
            "actuator displacement {actuator_displacement} mm must be non-negative"
        )));
    }
    let branches = net
        .branches
        .iter()
        .map(|b| {
            let free_length = excursion_of(hand, b, rest)? - excursion_of(hand, b, pose)?;
            let margin = actuator_displacement - b.branch_slack - free_length;
            let taut = margin > 0.0;
            Ok(BranchState {
                taut,
                free_length,
                elongation: if taut { margin } else { 0.0 },
            })
        })
        .collect::<Result<_>>()?;
    Ok(NetworkState { branches })
}
