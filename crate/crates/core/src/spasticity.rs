//! Spastic-muscle resistance: one linear spring seen by the actuated tendon.
//!
//! MAS is carried as metadata only. Observed peak forces are not monotone in
//! MAS, so stiffness is a per-subject parameter calibrated from a peak force.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::actuation::MagnetChoice;
use crate::error::{invalid, Result};
use crate::hand::{default_hand, Digit, HandModel, HandPose};
use crate::tendon::DEFAULT_BRANCH_SLACK_MM;

/// Default actuator travel available past the branch slack, mm (50 - 2).
pub const DEFAULT_EFFECTIVE_TRAVEL_MM: f64 = 50.0 - DEFAULT_BRANCH_SLACK_MM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MasLevel {
    #[serde(rename = "MAS1")]
    Mas1,
    #[serde(rename = "MAS1+")]
    Mas1Plus,
    #[serde(rename = "MAS2")]
    Mas2,
    #[serde(rename = "MAS3")]
    Mas3,
}

impl fmt::Display for MasLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MasLevel::Mas1 => "MAS1",
            MasLevel::Mas1Plus => "MAS1+",
            MasLevel::Mas2 => "MAS2",
            MasLevel::Mas3 => "MAS3",
        })
    }
}

/// Expected peak tendon force range, N. An open upper end means "exceeds".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakBand {
    pub min: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl PeakBand {
    pub fn closed(min: f64, max: f64) -> Self {
        Self {
            min,
            max: Some(max),
        }
    }

    pub fn at_least(min: f64) -> Self {
        Self { min, max: None }
    }

    pub fn contains(&self, force: f64) -> bool {
        match self.max {
            Some(max) => force >= self.min && force <= max,
            None => force > self.min,
        }
    }

    pub fn midpoint(&self) -> Option<f64> {
        self.max.map(|max| 0.5 * (self.min + max))
    }
}

impl fmt::Display for PeakBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.max {
            Some(max) => write!(f, "[{}, {}] N", self.min, max),
            None => write!(f, "> {} N", self.min),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectProfile {
    pub id: String,
    pub mas_level: MasLevel,
    /// Digits rated differently from `mas_level`.
    pub mas_overrides: BTreeMap<Digit, MasLevel>,
    /// N/mm of net tendon elongation.
    pub stiffness: f64,
    pub rest_pose: HandPose,
    /// Elongation taken up before the muscle resists, mm.
    pub engage_slack: f64,
    pub peak_band: PeakBand,
    /// Magnet normally fitted for this subject's trials.
    pub magnet: MagnetChoice,
}

impl SubjectProfile {
    pub fn validate(&self, hand: &HandModel) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(invalid("subject id is empty"));
        }
        if !(self.stiffness >= 0.0) || !self.stiffness.is_finite() {
            return Err(invalid(format!(
                "subject {}: stiffness {} must be non-negative",
                self.id, self.stiffness
            )));
        }
        if !(self.engage_slack >= 0.0) {
            return Err(invalid(format!(
                "subject {}: engage slack {} must be non-negative",
                self.id, self.engage_slack
            )));
        }
        hand.validate_pose(&self.rest_pose)
            .map_err(|e| invalid(format!("subject {} rest pose: {e}", self.id)))
    }

    pub fn mas_for(&self, digit: Digit) -> MasLevel {
        self.mas_overrides
            .get(&digit)
            .copied()
            .unwrap_or(self.mas_level)
    }
}

/// Spring law: zero up to the engage slack, linear beyond it.
pub fn resistance_force(profile: &SubjectProfile, net_elongation: f64) -> f64 {
    if net_elongation <= profile.engage_slack {
        0.0
    } else {
        profile.stiffness * (net_elongation - profile.engage_slack)
    }
}

/// Stiffness that reproduces `peak_force` at `total_elongation`.
pub fn calibrate_stiffness(
    peak_force: f64,
    total_elongation: f64,
    engage_slack: f64,
) -> Result<f64> {
    if !(total_elongation > engage_slack) {
        return Err(invalid(format!(
            "total elongation {total_elongation} mm must exceed engage slack {engage_slack} mm"
        )));
    }
    if !(peak_force >= 0.0) {
        return Err(invalid(format!(
            "peak force {peak_force} N must be non-negative"
        )));
    }
    Ok(peak_force / (total_elongation - engage_slack))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectBank {
    profiles: Vec<SubjectProfile>,
}

impl SubjectBank {
    pub fn new(profiles: Vec<SubjectProfile>) -> Result<Self> {
        for (i, p) in profiles.iter().enumerate() {
            if profiles[..i].iter().any(|o| o.id == p.id) {
                return Err(invalid(format!("duplicate subject id {}", p.id)));
            }
        }
        Ok(Self { profiles })
    }

    pub fn profiles(&self) -> &[SubjectProfile] {
        &self.profiles
    }

    pub fn get(&self, id: &str) -> Option<&SubjectProfile> {
        self.profiles.iter().find(|p| p.id == id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.profiles.iter().map(|p| p.id.as_str()).collect()
    }

    /// The five hand-extension subjects, posed on `hand`, with stiffness
    /// calibrated over `effective_travel` mm of tendon elongation.
    pub fn for_hand(hand: &HandModel, effective_travel: f64) -> Result<Self> {
        let profiles = DEFAULT_SUBJECTS
            .iter()
            .map(|s| {
                Ok(SubjectProfile {
                    id: s.id.to_string(),
                    mas_level: s.mas,
                    mas_overrides: s.mas_overrides.iter().copied().collect(),
                    stiffness: calibrate_stiffness(s.calibration_peak, effective_travel, 0.0)?,
                    rest_pose: hand.flexed_pose(s.rest_fraction),
                    engage_slack: 0.0,
                    peak_band: s.band,
                    magnet: s.magnet,
                })
            })
            .collect::<Result<_>>()?;
        Self::new(profiles)
    }
}

/// Built-in subject set on the default hand.
pub fn default_subject_bank() -> SubjectBank {
    SubjectBank::for_hand(&default_hand(), DEFAULT_EFFECTIVE_TRAVEL_MM)
        .expect("built-in subjects are valid")
}

pub struct SubjectSeed {
    pub id: &'static str,
    pub mas: MasLevel,
    pub mas_overrides: &'static [(Digit, MasLevel)],
    /// Peak force reached at full travel without breakaway; band midpoint for
    /// closed bands.
    pub calibration_peak: f64,
    pub band: PeakBand,
    /// Fraction of each flexion range held at rest.
    pub rest_fraction: f64,
    pub magnet: MagnetChoice,
}

// S4 and S5 peak above 35 N, which only the 41 N magnet can hold. S4 rests
// nearly fully flexed and is stiff enough to break away before the hand opens;
// S5 opens first and breaks away late in the stroke.
pub const DEFAULT_SUBJECTS: [SubjectSeed; 5] = [
    SubjectSeed {
        id: "S1",
        mas: MasLevel::Mas2,
        mas_overrides: &[],
        calibration_peak: 17.5,
        band: PeakBand {
            min: 15.0,
            max: Some(20.0),
        },
        rest_fraction: 0.90,
        magnet: MagnetChoice::Standard,
    },
    SubjectSeed {
        id: "S2",
        mas: MasLevel::Mas1,
        mas_overrides: &[],
        calibration_peak: 27.5,
        band: PeakBand {
            min: 25.0,
            max: Some(30.0),
        },
        rest_fraction: 0.85,
        magnet: MagnetChoice::Standard,
    },
    SubjectSeed {
        id: "S3",
        mas: MasLevel::Mas1,
        mas_overrides: &[(Digit::Index, MasLevel::Mas2)],
        calibration_peak: 17.5,
        band: PeakBand {
            min: 15.0,
            max: Some(20.0),
        },
        rest_fraction: 0.88,
        magnet: MagnetChoice::Standard,
    },
    SubjectSeed {
        id: "S4",
        mas: MasLevel::Mas3,
        mas_overrides: &[],
        calibration_peak: 72.0,
        band: PeakBand {
            min: 35.0,
            max: None,
        },
        rest_fraction: 0.98,
        magnet: MagnetChoice::Strong,
    },
    SubjectSeed {
        id: "S5",
        mas: MasLevel::Mas2,
        mas_overrides: &[],
        calibration_peak: 50.0,
        band: PeakBand {
            min: 35.0,
            max: None,
        },
        rest_fraction: 0.85,
        magnet: MagnetChoice::Strong,
    },
];

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(stiffness: f64, engage_slack: f64) -> SubjectProfile {
        let hand = default_hand();
        SubjectProfile {
            id: "T".into(),
            mas_level: MasLevel::Mas2,
            mas_overrides: BTreeMap::new(),
            stiffness,
            rest_pose: hand.zero_pose(),
            engage_slack,
            peak_band: PeakBand::closed(0.0, 100.0),
            magnet: MagnetChoice::Standard,
        }
    }

    #[test]
    fn resistance_examples() {
        let p = profile(0.4, 2.0);
        assert_eq!(resistance_force(&p, 0.0), 0.0);
        assert!((resistance_force(&p, 47.0) - 18.0).abs() < 1e-12);
        assert_eq!(resistance_force(&p, -3.0), 0.0);
        assert_eq!(resistance_force(&p, 2.0), 0.0);
    }

    #[test]
    fn calibrate_examples() {
        let k1 = calibrate_stiffness(17.5, 50.0, 2.0).unwrap();
        assert!((k1 - 17.5 / 48.0).abs() < 1e-15);
        assert!((k1 - 0.365).abs() < 5e-4);
        let k2 = calibrate_stiffness(27.5, 48.0, 0.0).unwrap();
        assert!((k2 - 0.573).abs() < 5e-4);
        assert_eq!(calibrate_stiffness(0.0, 48.0, 0.0).unwrap(), 0.0);
        assert!(calibrate_stiffness(10.0, 2.0, 2.0).is_err());
        assert!(calibrate_stiffness(-1.0, 48.0, 0.0).is_err());
    }

    #[test]
    fn default_bank_metadata() {
        let bank = default_subject_bank();
        assert_eq!(bank.ids(), ["S1", "S2", "S3", "S4", "S5"]);
        assert_eq!(bank.get("S1").unwrap().mas_level, MasLevel::Mas2);
        assert_eq!(bank.get("S2").unwrap().mas_level, MasLevel::Mas1);
        let s3 = bank.get("S3").unwrap();
        assert_eq!(s3.mas_for(Digit::Index), MasLevel::Mas2);
        assert_eq!(s3.mas_for(Digit::Ring), MasLevel::Mas1);
        assert_eq!(bank.get("S4").unwrap().mas_level, MasLevel::Mas3);
        assert!(bank.get("S6").is_none());
        let hand = default_hand();
        for p in bank.profiles() {
            p.validate(&hand).unwrap();
        }
        // S2 is stiffer than S1 despite the lower MAS rating.
        assert!(bank.get("S2").unwrap().stiffness > bank.get("S1").unwrap().stiffness);
    }

    #[test]
    fn duplicate_ids_rejected() {
        let p = profile(1.0, 0.0);
        assert!(SubjectBank::new(vec![p.clone(), p]).is_err());
    }

    #[test]
    fn band_membership() {
        let b = PeakBand::closed(15.0, 20.0);
        assert!(b.contains(15.0) && b.contains(20.0) && !b.contains(20.1));
        assert_eq!(b.midpoint(), Some(17.5));
        let open = PeakBand::at_least(35.0);
        assert!(open.contains(35.1) && !open.contains(35.0));
        assert_eq!(open.midpoint(), None);
    }

    proptest! {
        #[test]
        fn resistance_monotone_non_negative(k in 0.0f64..3.0, s in 0.0f64..5.0,
                                            a in -10.0f64..60.0, da in 0.0f64..20.0) {
            let p = profile(k, s);
            let (f1, f2) = (resistance_force(&p, a), resistance_force(&p, a + da));
            prop_assert!(f1 >= 0.0);
            prop_assert!(f2 >= f1);
        }

        #[test]
        fn calibrate_round_trip(peak in 0.0f64..80.0, total in 5.0f64..60.0, s in 0.0f64..4.0) {
            let k = calibrate_stiffness(peak, total, s).unwrap();
            let f = resistance_force(&profile(k, s), total);
            prop_assert!((f - peak).abs() <= 1e-9 * peak.max(1e-300));
        }
    }
}
