//! Quasi-static simulation of one trial: the actuator retracts from full
//! extension to full retraction against the subject's hand.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::actuation::{
    actuator_position, measure, update_coupling, ActuatorSpec, CouplingSpec, CouplingState,
    LoadCellSpec,
};
use crate::error::{invalid, Result};
use crate::hand::{Digit, HandModel, HandPose, JointId, JointKind};
use crate::spasticity::{resistance_force, SubjectProfile};
use crate::tendon::{
    excursion_of, network_state, NetworkConfig, Side, TendonNetwork, DIP_PIP_COUPLING,
};
use crate::trace::{TraceMetadata, TracePoint, TraceRecord};

pub const DEFAULT_SAMPLE_RATE_HZ: f64 = 100.0;
/// Largest per-finger MCP+PIP+DIP flexion still counted as an open hand, degrees.
pub const DEFAULT_FUNCTIONAL_THRESHOLD_DEG: f64 = 110.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub hand: HandModel,
    pub network: TendonNetwork,
    pub subject: SubjectProfile,
    pub actuator: ActuatorSpec,
    pub coupling: CouplingSpec,
    pub cell: LoadCellSpec,
    pub sample_rate: f64,
    pub noise_sigma: f64,
    pub functional_threshold: f64,
}

impl TrialConfig {
    /// Default hardware, the subject's usual magnet, 100 Hz, no noise.
    pub fn new(hand: HandModel, network: TendonNetwork, subject: SubjectProfile) -> Self {
        let coupling = subject.magnet.coupling();
        Self {
            hand,
            network,
            subject,
            actuator: ActuatorSpec::default(),
            coupling,
            cell: LoadCellSpec::default(),
            sample_rate: DEFAULT_SAMPLE_RATE_HZ,
            noise_sigma: 0.0,
            functional_threshold: DEFAULT_FUNCTIONAL_THRESHOLD_DEG,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.actuator.validate()?;
        self.coupling.validate(&self.actuator)?;
        self.cell.validate()?;
        self.network.validate(&self.hand)?;
        self.subject.validate(&self.hand)?;
        if !(self.sample_rate > 0.0) || !self.sample_rate.is_finite() {
            return Err(invalid(format!(
                "sample rate {} must be positive",
                self.sample_rate
            )));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(invalid(format!(
                "noise sigma {} must be non-negative",
                self.noise_sigma
            )));
        }
        if !(self.functional_threshold > 0.0) {
            return Err(invalid("functional threshold must be positive"));
        }
        Ok(())
    }

    /// floor(duration * rate) + 1
    pub fn sample_count(&self) -> usize {
        let n = self.actuator.retraction_time() * self.sample_rate;
        (n + 1e-9).floor() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub actuator_position: f64,
    /// Load-cell reading.
    pub measured_force: f64,
    /// Force at the coupling before it is checked against the magnet.
    pub true_force: f64,
    /// Force actually passed to the network (0 once disengaged).
    pub transmitted_force: f64,
    pub engaged: bool,
    /// Retraction applied to the network; 0 once the coupling is open.
    pub tendon_displacement: f64,
    pub taut: Vec<bool>,
    pub elongation: Vec<f64>,
    pub branch_tension: Vec<f64>,
    pub actuator_tension: f64,
    pub pose: HandPose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    pub subject_id: String,
    pub config_id: NetworkConfig,
    pub stroke: f64,
    pub sample_rate: f64,
    pub breakaway_force: f64,
    pub samples: Vec<Sample>,
    pub breakaway_time: Option<f64>,
    pub functional_extension: bool,
    pub most_extended_pose: HandPose,
    pub final_pose: HandPose,
}

impl TrialTrace {
    pub fn breakaway(&self) -> bool {
        self.breakaway_time.is_some()
    }

    /// Largest load-cell reading in the trial.
    pub fn peak_measured_force(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.measured_force)
            .fold(0.0, f64::max)
    }

    /// The `t, position, force` series with its metadata, as logged by the device.
    pub fn to_record(&self) -> TraceRecord {
        TraceRecord {
            points: self
                .samples
                .iter()
                .map(|s| TracePoint {
                    t: s.t,
                    position: s.actuator_position,
                    force: s.measured_force,
                })
                .collect(),
            meta: TraceMetadata {
                subject: Some(self.subject_id.clone()),
                tendon_config: Some(self.config_id.name().to_string()),
                stroke_mm: Some(self.stroke),
                sample_rate_hz: Some(self.sample_rate),
                breakaway_force_n: Some(self.breakaway_force),
                breakaway: Some(self.breakaway()),
                breakaway_time_s: self.breakaway_time,
                functional_extension: Some(self.functional_extension),
                ..TraceMetadata::default()
            },
        }
    }
}

/// Maps actuator displacement to the hand pose reached through one network
/// from a given rest pose.
///
/// Every joint routed by a taut branch moves from its rest angle toward the
/// limit that shortens the tendon path (full extension for dorsal routing,
/// full flexion for palmar routing), all by the same fraction of their travel,
/// until the branch has taken up the displacement past its slack. A ring
/// attachment carries DIP along with PIP at the fixed coupling ratio.
#[derive(Debug, Clone, Copy)]
pub struct PoseResponse<'a> {
    pub hand: &'a HandModel,
    pub network: &'a TendonNetwork,
    pub rest: &'a HandPose,
}

impl PoseResponse<'_> {
    pub fn at(&self, displacement: f64) -> Result<HandPose> {
        let mut pose = self.rest.clone();
        for branch in &self.network.branches {
            let take_up = displacement - branch.branch_slack;
            if !(take_up > 0.0) {
                continue;
            }
            let mut target = self.rest.clone();
            for p in &branch.routing {
                let joint = self
                    .hand
                    .joint(p.joint)
                    .ok_or(crate::Error::UnknownJoint(p.joint))?;
                let end = match p.side {
                    Side::Dorsal => joint.clamp(0.0),
                    Side::Palmar => joint.flexion_max,
                };
                target.set(p.joint, end);
            }
            let span = excursion_of(self.hand, branch, self.rest)?
                - excursion_of(self.hand, branch, &target)?;
            if !(span > 0.0) {
                continue;
            }
            let frac = (take_up / span).min(1.0);
            for p in &branch.routing {
                let from = self.rest.get(p.joint).unwrap_or(0.0);
                let to = target.get(p.joint).unwrap_or(0.0);
                let angle = if frac == 1.0 {
                    to
                } else {
                    from + frac * (to - from)
                };
                pose.set(p.joint, angle);
            }
            if branch.couples_dip() {
                let pip = JointId::new(branch.digit, JointKind::Pip);
                let dip = JointId::new(branch.digit, JointKind::Dip);
                if let (Some(joint), Some(dip_rest), Some(pip_rest), Some(pip_now)) = (
                    self.hand.joint(dip),
                    self.rest.get(dip),
                    self.rest.get(pip),
                    pose.get(pip),
                ) {
                    let moved = dip_rest + DIP_PIP_COUPLING * (pip_now - pip_rest);
                    pose.set(dip, joint.clamp(moved));
                }
            }
        }
        Ok(crate::hand::clamp_pose(self.hand, &pose))
    }
}

pub fn pose_response(
    hand: &HandModel,
    net: &TendonNetwork,
    rest: &HandPose,
    displacement: f64,
) -> Result<HandPose> {
    PoseResponse {
        hand,
        network: net,
        rest,
    }
    .at(displacement)
}

/// Open enough to grasp: every finger's MCP+PIP+DIP at or below `threshold_deg`.
pub fn is_functional_extension(pose: &HandPose, threshold_deg: f64) -> bool {
    Digit::FINGERS
        .into_iter()
        .all(|d| pose.finger_flexion(d) <= threshold_deg)
}

fn total_finger_flexion(pose: &HandPose) -> f64 {
    Digit::FINGERS
        .into_iter()
        .map(|d| pose.finger_flexion(d))
        .sum()
}

/// Runs one full retraction. `seed` drives the force noise only.
pub fn run_trial(cfg: &TrialConfig, seed: u64) -> Result<TrialTrace> {
    cfg.validate()?;
    let noise = if cfg.noise_sigma > 0.0 {
        Some(Normal::new(0.0, cfg.noise_sigma).map_err(|e| invalid(e.to_string()))?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rest = &cfg.subject.rest_pose;
    let response = PoseResponse {
        hand: &cfg.hand,
        network: &cfg.network,
        rest,
    };

    let n = cfg.sample_count();
    let mut samples = Vec::with_capacity(n);
    let mut coupling = CouplingState::default();
    let mut functional = false;
    let mut most_extended = rest.clone();

    for i in 0..n {
        let t = i as f64 / cfg.sample_rate;
        let position = actuator_position(t, &cfg.actuator);
        let displacement = cfg.actuator.stroke - position;

        let mut true_force = 0.0;
        if coupling.engaged {
            let state = network_state(&cfg.hand, &cfg.network, rest, rest, displacement)?;
            if state.any_taut() {
                let spring = resistance_force(&cfg.subject, state.net_elongation());
                let jitter = noise.map_or(0.0, |n| n.sample(&mut rng));
                true_force = (spring + jitter).max(0.0);
            }
        }
        coupling = update_coupling(coupling, true_force, &cfg.coupling, t);

        let tendon_displacement = if coupling.engaged { displacement } else { 0.0 };
        let state = network_state(&cfg.hand, &cfg.network, rest, rest, tendon_displacement)?;
        let transmitted = coupling.transmit(true_force);
        let split = state.distribute(transmitted);
        let pose = response.at(tendon_displacement)?;

        if coupling.engaged {
            if is_functional_extension(&pose, cfg.functional_threshold) {
                functional = true;
            }
            if total_finger_flexion(&pose) < total_finger_flexion(&most_extended) {
                most_extended = pose.clone();
            }
        }

        samples.push(Sample {
            t,
            actuator_position: position,
            measured_force: measure(transmitted, &cfg.cell),
            true_force,
            transmitted_force: transmitted,
            engaged: coupling.engaged,
            tendon_displacement,
            taut: state.taut_flags(),
            elongation: state.elongations(),
            branch_tension: split.branch,
            actuator_tension: split.actuator,
            pose,
        });
    }

    let final_pose = samples
        .last()
        .map(|s| s.pose.clone())
        .unwrap_or_else(|| rest.clone());
    Ok(TrialTrace {
        subject_id: cfg.subject.id.clone(),
        config_id: cfg.network.config_id,
        stroke: cfg.actuator.stroke,
        sample_rate: cfg.sample_rate,
        breakaway_force: cfg.coupling.breakaway_force,
        samples,
        breakaway_time: coupling.disengage_time,
        functional_extension: functional,
        most_extended_pose: most_extended,
        final_pose,
    })
}
