//! Linear actuator, breakaway magnetic coupling and load cell.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActuatorSpec {
    #[serde(rename = "stroke_mm")]
    pub stroke: f64,
    #[serde(rename = "max_speed_mm_s")]
    pub max_speed: f64,
    #[serde(rename = "peak_force_n")]
    pub peak_force: f64,
}

impl Default for ActuatorSpec {
    fn default() -> Self {
        Self {
            stroke: 50.0,
            max_speed: 5.0,
            peak_force: 50.0,
        }
    }
}

impl ActuatorSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("stroke", self.stroke),
            ("max_speed", self.max_speed),
            ("peak_force", self.peak_force),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("actuator {name} {v} must be positive")));
            }
        }
        Ok(())
    }

    /// Time to retract through the full stroke, seconds.
    pub fn retraction_time(&self) -> f64 {
        self.stroke / self.max_speed
    }
}

/// Off-the-shelf magnets for the breakaway coupling.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MagnetChoice {
    /// 34 N pull force.
    Standard,
    /// 41 N pull force.
    Strong,
}

impl MagnetChoice {
    pub fn pull_force(self) -> f64 {
        match self {
            MagnetChoice::Standard => 34.0,
            MagnetChoice::Strong => 41.0,
        }
    }

    pub fn coupling(self) -> CouplingSpec {
        CouplingSpec {
            breakaway_force: self.pull_force(),
        }
    }
}

impl std::str::FromStr for MagnetChoice {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(MagnetChoice::Standard),
            "strong" => Ok(MagnetChoice::Strong),
            _ => Err(invalid(format!("unknown magnet '{s}' (standard|strong)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSpec {
    #[serde(rename = "breakaway_force_n")]
    pub breakaway_force: f64,
}

impl Default for CouplingSpec {
    fn default() -> Self {
        MagnetChoice::Standard.coupling()
    }
}

impl CouplingSpec {
    /// The actuator must be able to pull harder than the magnet holds.
    pub fn validate(&self, actuator: &ActuatorSpec) -> Result<()> {
        if !(self.breakaway_force > 0.0) {
            return Err(invalid(format!(
                "breakaway force {} N must be positive",
                self.breakaway_force
            )));
        }
        if !(self.breakaway_force < actuator.peak_force) {
            return Err(invalid(format!(
                "breakaway force {} N must be below actuator peak force {} N",
                self.breakaway_force, actuator.peak_force
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadCellSpec {
    #[serde(rename = "resolution_n")]
    pub resolution: f64,
    #[serde(rename = "range_max_n")]
    pub range_max: f64,
}

impl Default for LoadCellSpec {
    fn default() -> Self {
        Self {
            resolution: 0.196,
            range_max: 50.0,
        }
    }
}

impl LoadCellSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.resolution > 0.0 && self.resolution < self.range_max) {
            return Err(invalid(format!(
                "load cell needs 0 < resolution ({}) < range_max ({})",
                self.resolution, self.range_max
            )));
        }
        Ok(())
    }
}

/// Latching state of the magnetic coupling within one trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingState {
    pub engaged: bool,
    pub disengage_time: Option<f64>,
}

impl Default for CouplingState {
    fn default() -> Self {
        Self {
            engaged: true,
            disengage_time: None,
        }
    }
}

impl CouplingState {
    /// Force passed from the actuator to the tendon network.
    pub fn transmit(&self, force: f64) -> f64 {
        if self.engaged {
            force
        } else {
            0.0
        }
    }
}

/// Actuator position at `t`: starts at full extension and retracts at
/// constant speed until it reaches 0.
pub fn actuator_position(t: f64, spec: &ActuatorSpec) -> f64 {
    (spec.stroke - spec.max_speed * t.max(0.0)).clamp(0.0, spec.stroke)
}

/// Load-cell reading: nearest multiple of the resolution (ties up), saturated
/// at `range_max`.
pub fn measure(force: f64, cell: &LoadCellSpec) -> f64 {
    let force = force.max(0.0);
    if force >= cell.range_max {
        return cell.range_max;
    }
    let steps = (force / cell.resolution + 0.5).floor();
    (steps * cell.resolution).min(cell.range_max)
}

/// Disengages (permanently) on the first force at or above the breakaway
/// threshold.
pub fn update_coupling(
    state: CouplingState,
    true_force: f64,
    spec: &CouplingSpec,
    t: f64,
) -> CouplingState {
    if state.engaged && true_force >= spec.breakaway_force {
        CouplingState {
            engaged: false,
            disengage_time: Some(t),
        }
    } else {
        state
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn position_examples() {
        let spec = ActuatorSpec::default();
        assert_eq!(actuator_position(0.0, &spec), 50.0);
        assert_eq!(actuator_position(10.0, &spec), 0.0);
        assert_eq!(actuator_position(20.0, &spec), 0.0);
        assert_eq!(actuator_position(4.0, &spec), 30.0);
        assert_eq!(spec.retraction_time(), 10.0);
    }

    #[test]
    fn measure_examples() {
        let cell = LoadCellSpec::default();
        assert_eq!(measure(0.0, &cell), 0.0);
        assert!((measure(0.300, &cell) - 0.392).abs() < 1e-12);
        assert_eq!(measure(60.0, &cell), 50.0);
        assert_eq!(measure(50.0, &cell), 50.0);
        // exact tie rounds up
        let half = LoadCellSpec {
            resolution: 0.5,
            range_max: 50.0,
        };
        assert_eq!(measure(0.25, &half), 0.5);
    }

    #[test]
    fn coupling_examples() {
        let spec = CouplingSpec {
            breakaway_force: 34.0,
        };
        let s = update_coupling(CouplingState::default(), 33.9, &spec, 1.0);
        assert!(s.engaged);
        let s = update_coupling(s, 34.0, &spec, 2.0);
        assert_eq!(
            s,
            CouplingState {
                engaged: false,
                disengage_time: Some(2.0)
            }
        );
        let s = update_coupling(s, 0.0, &spec, 3.0);
        assert_eq!(s.disengage_time, Some(2.0));
        assert!(!s.engaged);
        assert_eq!(s.transmit(20.0), 0.0);
    }

    #[test]
    fn spec_validation() {
        let act = ActuatorSpec::default();
        assert!(MagnetChoice::Strong.coupling().validate(&act).is_ok());
        assert!(CouplingSpec {
            breakaway_force: 55.0
        }
        .validate(&act)
        .is_err());
        assert!(LoadCellSpec {
            resolution: 0.0,
            range_max: 50.0
        }
        .validate()
        .is_err());
        assert!(ActuatorSpec {
            stroke: -1.0,
            ..act
        }
        .validate()
        .is_err());
        assert_eq!("strong".parse::<MagnetChoice>().unwrap().pull_force(), 41.0);
        assert!("weak".parse::<MagnetChoice>().is_err());
    }

    proptest! {
        #[test]
        fn measure_error_bounded(f in 0.0f64..49.9) {
            let cell = LoadCellSpec::default();
            prop_assert!((measure(f, &cell) - f).abs() <= cell.resolution / 2.0 + 1e-12);
        }

        #[test]
        fn measure_idempotent(f in 0.0f64..80.0) {
            let cell = LoadCellSpec::default();
            let once = measure(f, &cell);
            prop_assert_eq!(measure(once, &cell), once);
        }

        #[test]
        fn position_monotone_and_bounded(t1 in 0.0f64..30.0, dt in 0.0f64..30.0) {
            let spec = ActuatorSpec::default();
            let (a, b) = (actuator_position(t1, &spec), actuator_position(t1 + dt, &spec));
            prop_assert!(b <= a);
            prop_assert!((0.0..=spec.stroke).contains(&a));
        }

        #[test]
        fn coupling_latches(forces in proptest::collection::vec(0.0f64..60.0, 1..200)) {
            let spec = CouplingSpec { breakaway_force: 34.0 };
            let mut state = CouplingState::default();
            let mut falls = 0;
            for (i, f) in forces.iter().enumerate() {
                let next = update_coupling(state, *f, &spec, i as f64);
                prop_assert!(!( !state.engaged && next.engaged ));
                if state.engaged && !next.engaged { falls += 1; }
                state = next;
            }
            prop_assert!(falls <= 1);
        }
    }
}
