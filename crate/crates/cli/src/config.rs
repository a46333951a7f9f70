//! TOML run configuration.
//!
//! Resolution order: built-in defaults, then the config file (merged table by
//! table; arrays replace), then `--set key=value` overrides, which is also how
//! the dedicated flags are applied. The hash covers the merged result.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

use exosim_core::actuation::{ActuatorSpec, CouplingSpec, LoadCellSpec, MagnetChoice};
use exosim_core::hand::{default_hand, Digit, HandModel, DEFAULT_EXCURSION_TARGET_MM};
use exosim_core::spasticity::{
    calibrate_stiffness, MasLevel, PeakBand, SubjectBank, SubjectProfile, DEFAULT_SUBJECTS,
};
use exosim_core::tendon::{
    branch_excursion, calibrate_depth, NetworkConfig, TendonNetwork, DEFAULT_BRANCH_SLACK_MM,
};
use exosim_core::trial::{TrialConfig, DEFAULT_FUNCTIONAL_THRESHOLD_DEG, DEFAULT_SAMPLE_RATE_HZ};

pub const DEFAULT_NOISE_SIGMA_N: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub hand: HandSection,
    pub network: NetworkSection,
    pub actuator: ActuatorSpec,
    pub coupling: CouplingSection,
    pub load_cell: LoadCellSpec,
    pub trial: TrialSection,
    pub subjects: Vec<SubjectEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandSection {
    /// Full-flexion excursion the index extension branch must reach.
    pub excursion_target_mm: f64,
    /// Joint centre depth; solved from the excursion target when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_depth_mm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub preset: NetworkConfig,
    pub branch_slack_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    /// Forces one magnet on every subject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub magnet: Option<MagnetChoice>,
    /// Explicit threshold; wins over any magnet.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakaway_force_n: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialSection {
    pub sample_rate_hz: f64,
    pub noise_sigma_n: f64,
    pub functional_threshold_deg: f64,
    pub trim_threshold_n: f64,
    pub trials: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectEntry {
    pub id: String,
    pub mas: MasLevel,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub mas_overrides: BTreeMap<String, MasLevel>,
    /// Used as is when present; otherwise derived from `calibration_peak_n`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stiffness_n_per_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub calibration_peak_n: Option<f64>,
    pub peak_band_n: PeakBand,
    #[serde(default)]
    pub engage_slack_mm: f64,
    pub magnet: MagnetChoice,
    pub rest_flexion_fraction: f64,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            hand: HandSection {
                excursion_target_mm: DEFAULT_EXCURSION_TARGET_MM,
                center_depth_mm: None,
            },
            network: NetworkSection {
                preset: NetworkConfig::Extension,
                branch_slack_mm: DEFAULT_BRANCH_SLACK_MM,
            },
            actuator: ActuatorSpec::default(),
            coupling: CouplingSection {
                magnet: None,
                breakaway_force_n: None,
            },
            load_cell: LoadCellSpec::default(),
            trial: TrialSection {
                sample_rate_hz: DEFAULT_SAMPLE_RATE_HZ,
                noise_sigma_n: DEFAULT_NOISE_SIGMA_N,
                functional_threshold_deg: DEFAULT_FUNCTIONAL_THRESHOLD_DEG,
                trim_threshold_n: exosim_core::analysis::DEFAULT_TRIM_THRESHOLD_N,
                trials: 1,
            },
            subjects: DEFAULT_SUBJECTS
                .iter()
                .map(|s| SubjectEntry {
                    id: s.id.to_string(),
                    mas: s.mas,
                    mas_overrides: s
                        .mas_overrides
                        .iter()
                        .map(|(d, m)| (d.to_string(), *m))
                        .collect(),
                    stiffness_n_per_mm: None,
                    calibration_peak_n: Some(s.calibration_peak),
                    peak_band_n: s.band,
                    engage_slack_mm: 0.0,
                    magnet: s.magnet,
                    rest_flexion_fraction: s.rest_fraction,
                })
                .collect(),
        }
    }
}

impl ConfigFile {
    /// Defaults, then `text` (if any), then the overrides.
    pub fn load(text: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut tree = Table::try_from(ConfigFile::default())?;
        if let Some(text) = text {
            let user: Table = toml::from_str(text).context("parsing config")?;
            merge(&mut tree, user);
        }
        for (key, value) in overrides {
            set_path(&mut tree, key, parse_value(value))
                .with_context(|| format!("override {key}={value}"))?;
        }
        ConfigFile::deserialize(tree).context("invalid config")
    }

    pub fn from_path(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let text = path
            .map(|p| std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())))
            .transpose()?;
        Self::load(text.as_deref(), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let depth_hand = match self.hand.center_depth_mm {
            Some(d) => HandModel::with_uniform_depth(d)?,
            None => calibrate_depth(&default_hand(), self.hand.excursion_target_mm)?,
        };
        self.resolve_on(depth_hand)
    }

    fn resolve_on(&self, hand: HandModel) -> Result<Resolved> {
        let slack = self.network.branch_slack_mm;
        if slack.is_nan() || slack < 0.0 {
            bail!("network.branch_slack_mm {slack} must be non-negative");
        }
        let network = TendonNetwork::preset(self.network.preset, &hand).with_uniform_slack(slack);
        network.validate(&hand)?;
        let travel = self.actuator.stroke - slack;

        let mut profiles = Vec::new();
        for s in &self.subjects {
            if !(0.0..=1.0).contains(&s.rest_flexion_fraction) {
                bail!(
                    "subject {}: rest_flexion_fraction {} must lie in [0, 1]",
                    s.id,
                    s.rest_flexion_fraction
                );
            }
            let stiffness = match (s.stiffness_n_per_mm, s.calibration_peak_n) {
                (Some(k), _) => k,
                (None, Some(peak)) => calibrate_stiffness(peak, travel, s.engage_slack_mm)?,
                (None, None) => bail!(
                    "subject {} needs stiffness_n_per_mm or calibration_peak_n",
                    s.id
                ),
            };
            let mas_overrides = s
                .mas_overrides
                .iter()
                .map(|(d, m)| {
                    d.parse::<Digit>()
                        .map(|d| (d, *m))
                        .map_err(|e| anyhow!("subject {}: {e}", s.id))
                })
                .collect::<Result<_>>()?;
            let profile = SubjectProfile {
                id: s.id.clone(),
                mas_level: s.mas,
                mas_overrides,
                stiffness,
                rest_pose: hand.flexed_pose(s.rest_flexion_fraction),
                engage_slack: s.engage_slack_mm,
                peak_band: s.peak_band_n,
                magnet: s.magnet,
            };
            profile.validate(&hand)?;
            profiles.push(profile);
        }
        let bank = SubjectBank::new(profiles)?;

        let resolved = Resolved {
            file: self.clone(),
            hash: self.hash(),
            hand,
            network,
            bank,
        };
        for p in resolved.bank.profiles() {
            resolved.trial_config(p).validate()?;
        }
        if self.trial.trim_threshold_n.is_nan() || self.trial.trim_threshold_n <= 0.0 {
            bail!("trial.trim_threshold_n must be positive");
        }
        if self.trial.trials == 0 {
            bail!("trial.trials must be at least 1");
        }
        Ok(resolved)
    }
}

/// A validated configuration turned into model objects.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub file: ConfigFile,
    pub hash: String,
    pub hand: HandModel,
    pub network: TendonNetwork,
    pub bank: SubjectBank,
}

impl Resolved {
    pub fn coupling_for(&self, subject: &SubjectProfile) -> CouplingSpec {
        if let Some(f) = self.file.coupling.breakaway_force_n {
            return CouplingSpec { breakaway_force: f };
        }
        self.file
            .coupling
            .magnet
            .unwrap_or(subject.magnet)
            .coupling()
    }

    pub fn trial_config(&self, subject: &SubjectProfile) -> TrialConfig {
        let mut cfg = TrialConfig::new(self.hand.clone(), self.network.clone(), subject.clone());
        cfg.actuator = self.file.actuator;
        cfg.coupling = self.coupling_for(subject);
        cfg.cell = self.file.load_cell;
        cfg.sample_rate = self.file.trial.sample_rate_hz;
        cfg.noise_sigma = self.file.trial.noise_sigma_n;
        cfg.functional_threshold = self.file.trial.functional_threshold_deg;
        cfg
    }

    /// Same subjects on another tendon network.
    pub fn with_network(&self, config: NetworkConfig) -> Resolved {
        let mut out = self.clone();
        out.network = TendonNetwork::preset(config, &self.hand)
            .with_uniform_slack(self.file.network.branch_slack_mm);
        out
    }

    /// Uniform joint centre depth in use.
    pub fn depth(&self) -> f64 {
        self.hand
            .joints()
            .first()
            .and_then(|j| self.hand.center_depth(j.id))
            .unwrap_or(0.0)
    }

    /// Full-flexion excursion of the index extension branch on this hand.
    pub fn index_excursion(&self) -> Result<f64> {
        let net = TendonNetwork::preset(NetworkConfig::Extension, &self.hand);
        let branch = net
            .branch(Digit::Index)
            .ok_or_else(|| anyhow!("hand has no index extension branch"))?;
        Ok(branch_excursion(
            &self.hand,
            branch,
            &self.hand.full_flexion_pose(),
        )?)
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// TOML scalar/array syntax if it parses, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    let doc = format!("v = {raw}");
    toml::from_str::<Table>(&doc)
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

fn set_path(tree: &mut Table, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        bail!("malformed key '{key}'");
    }
    let (last, parents) = parts.split_last().expect("non-empty");
    let mut slot: &mut Value = tree
        .entry(parents.first().copied().unwrap_or(last).to_string())
        .or_insert_with(|| Value::Table(Table::new()));
    if parents.is_empty() {
        *slot = value;
        return Ok(());
    }
    for part in parents[1..].iter().chain(std::iter::once(last)) {
        slot = match slot {
            Value::Table(t) => t
                .entry(part.to_string())
                .or_insert_with(|| Value::Table(Table::new())),
            Value::Array(a) => {
                let i: usize = part
                    .parse()
                    .map_err(|_| anyhow!("'{part}' is not an array index"))?;
                let len = a.len();
                a.get_mut(i)
                    .ok_or_else(|| anyhow!("index {i} out of range (len {len})"))?
            }
            _ => bail!("'{key}' descends into a scalar"),
        };
    }
    *slot = value;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(k: &str, v: &str) -> (String, String) {
        (k.to_string(), v.to_string())
    }

    #[test]
    fn defaults_round_trip() {
        let cfg = ConfigFile::default();
        let again = ConfigFile::load(Some(&cfg.to_toml()), &[]).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 16);
    }

    #[test]
    fn partial_file_merges() {
        let cfg = ConfigFile::load(Some("[actuator]\nstroke_mm = 40.0\n"), &[]).unwrap();
        assert_eq!(cfg.actuator.stroke, 40.0);
        assert_eq!(cfg.actuator.max_speed, 5.0);
        assert_eq!(cfg.subjects.len(), 5);
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = ConfigFile::load(
            None,
            &[
                kv("coupling.magnet", "strong"),
                kv("trial.noise_sigma_n", "0"),
                kv("subjects.1.stiffness_n_per_mm", "0.5"),
                kv("network.preset", "pinch"),
            ],
        )
        .unwrap();
        assert_eq!(cfg.coupling.magnet, Some(MagnetChoice::Strong));
        assert_eq!(cfg.trial.noise_sigma_n, 0.0);
        assert_eq!(cfg.subjects[1].stiffness_n_per_mm, Some(0.5));
        assert_eq!(cfg.network.preset, NetworkConfig::PinchPattern);
        assert_ne!(cfg.hash(), ConfigFile::default().hash());
    }

    #[test]
    fn bad_keys_are_rejected() {
        assert!(ConfigFile::load(None, &[kv("trial.bogus", "1")]).is_err());
        assert!(ConfigFile::load(None, &[kv("subjects.9.id", "x")]).is_err());
        assert!(ConfigFile::load(None, &[kv("trial..x", "1")]).is_err());
        assert!(ConfigFile::load(Some("[hand]\nexcursion_target_mm = \"far\""), &[]).is_err());
    }

    #[test]
    fn resolve_defaults() {
        let r = ConfigFile::default().resolve().unwrap();
        assert!((r.index_excursion().unwrap() - 57.0).abs() <= 0.01);
        assert_eq!(r.bank.ids(), ["S1", "S2", "S3", "S4", "S5"]);
        let s4 = r.bank.get("S4").unwrap();
        assert_eq!(r.coupling_for(s4).breakaway_force, 41.0);
        assert!((s4.stiffness - 1.5).abs() < 1e-12);
    }

    #[test]
    fn resolve_rejects_bad_values() {
        for (k, v) in [
            ("hand.excursion_target_mm", "0"),
            ("coupling.breakaway_force_n", "60"),
            ("subjects.0.rest_flexion_fraction", "1.5"),
            ("trial.sample_rate_hz", "0"),
            ("trial.trials", "0"),
        ] {
            let cfg = ConfigFile::load(None, &[kv(k, v)]).unwrap();
            assert!(cfg.resolve().is_err(), "{k}={v}");
        }
    }
}
