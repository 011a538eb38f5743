//! Experiment configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feedback::{HomLockConfig, PolLockConfig};
use crate::photon::SourceParams;
use crate::qubit::SettingLabel;
use crate::sim::{DriftConfig, Hardware, NodeTopology, Scenario};

pub const PAPER_DEFAULT: &str = include_str!("../configs/paper-default.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    /// Window totals from the exact outcome distribution.
    #[default]
    Aggregate,
    /// Slot-by-slot event simulation.
    Event,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    pub hom_lock: bool,
    pub pol_lock: bool,
    #[serde(default)]
    pub hom: HomLockConfig,
    #[serde(default)]
    pub pol: PolLockConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub resamples: usize,
    #[serde(default)]
    pub mle: bool,
    #[serde(default)]
    pub accidentals_per_flag: Option<f64>,
    /// μ_A level used for tomography and fidelities.
    pub tomography_mu: f64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            resamples: 1000,
            mle: false,
            accidentals_per_flag: None,
            tomography_mu: 0.014,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomScanConfig {
    pub from_ps: f64,
    pub to_ps: f64,
    pub step_ps: f64,
    /// State Alice sends while scanning.
    pub prepared: SettingLabel,
}

impl Default for HomScanConfig {
    fn default() -> Self {
        Self {
            from_ps: -200.0,
            to_ps: 200.0,
            step_ps: 10.0,
            prepared: SettingLabel::Plus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VisibilityScanConfig {
    pub points: u32,
    pub prepared: SettingLabel,
    pub setting: SettingLabel,
    pub mu_a: f64,
    pub duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Integration time per (state, setting, μ_A) cell.
    pub duration_s: f64,
    pub window_s: f64,
    #[serde(default)]
    pub engine: EngineKind,
    /// Expected output states; Alice prepares their σ_y preimages.
    pub targets: Vec<SettingLabel>,
    pub settings: Vec<SettingLabel>,
    /// μ_A levels, vacuum first.
    pub decoy_levels: Vec<f64>,
    pub topology: NodeTopology,
    pub hardware: Hardware,
    pub source: SourceParams,
    pub drift: DriftConfig,
    pub controllers: ControllerConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub homscan: HomScanConfig,
    #[serde(default)]
    pub visibility_scan: Option<VisibilityScanConfig>,
}

fn field(name: &str, reason: impl std::fmt::Display) -> Error {
    Error::Config(format!("`{name}`: {reason}"))
}

impl ExperimentConfig {
    pub fn paper_default() -> Self {
        Self::from_toml(PAPER_DEFAULT).expect("bundled config is valid")
    }

    /// Parses and validates; parse errors carry line and column.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// SHA-256 of the resolved config, ignoring where outputs go.
    pub fn hash(&self) -> String {
        let canonical = ExperimentConfig {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        hex::encode(Sha256::digest(canonical.to_toml().as_bytes()))
    }

    pub fn scenario(&self) -> Scenario {
        Scenario {
            topology: self.topology.clone(),
            hardware: self.hardware,
            source: self.source,
            drift: self.drift,
            window_s: self.window_s,
        }
    }

    pub fn windows_per_cell(&self) -> u32 {
        (self.duration_s / self.window_s).round().max(1.0) as u32
    }

    pub fn prepared_states(&self) -> Vec<SettingLabel> {
        self.targets.iter().map(|t| t.after_teleportation()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario().validate().map_err(|e| Error::Config(e.to_string()))?;
        if !(self.duration_s >= self.window_s) {
            return Err(field("duration_s", "must cover at least one window"));
        }
        if self.targets.is_empty() {
            return Err(field("targets", "empty"));
        }
        if self.settings.is_empty() {
            return Err(field("settings", "empty"));
        }
        if self.decoy_levels.is_empty() {
            return Err(field("decoy_levels", "empty"));
        }
        for &m in &self.decoy_levels {
            if !(0.0..=0.1).contains(&m) {
                return Err(field("decoy_levels", format!("{m} outside [0, 0.1]")));
            }
        }
        let mut sorted = self.decoy_levels.clone();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        if sorted.len() != self.decoy_levels.len() {
            return Err(field("decoy_levels", "duplicate level"));
        }
        self.controllers.hom.validate().map_err(|e| field("controllers.hom", e))?;
        self.controllers.pol.validate().map_err(|e| field("controllers.pol", e))?;
        if self.analysis.resamples < 100 {
            return Err(field("analysis.resamples", "must be ≥ 100"));
        }
        let h = &self.homscan;
        if !(h.step_ps > 0.0) || !(h.to_ps >= h.from_ps) {
            return Err(field("homscan", "need step_ps > 0 and to_ps ≥ from_ps"));
        }
        if h.from_ps.abs().max(h.to_ps.abs()) > 1000.0 {
            return Err(field("homscan", "range limited to ±1000 ps"));
        }
        if let Some(v) = &self.visibility_scan {
            if v.points < 4 {
                return Err(field("visibility_scan.points", "need ≥ 4"));
            }
            if !(v.duration_s >= self.window_s) {
                return Err(field("visibility_scan.duration_s", "must cover at least one window"));
            }
        }
        Ok(())
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.output_dir = o;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_config_parses() {
        let c = ExperimentConfig::paper_default();
        assert_eq!(c.prepared_states().len(), 4);
        assert_eq!(c.settings.len(), 6);
        assert_eq!(c.decoy_levels, vec![0.0, 0.014, 0.028]);
        assert_eq!(c.source.mu_spdc, 0.06);
        // round trip through the resolved form
        let again = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn unknown_keys_rejected_with_location() {
        let text = PAPER_DEFAULT.replacen("seed =", "sede = 3\nseed =", 1);
        let err = ExperimentConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("sede"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn invalid_values_name_the_field() {
        let mut c = ExperimentConfig::paper_default();
        c.decoy_levels = vec![0.0, 0.5];
        assert!(c.validate().unwrap_err().to_string().contains("decoy_levels"));
        let mut c = ExperimentConfig::paper_default();
        c.hardware.snspd_efficiency = 1.5;
        assert!(c.validate().unwrap_err().to_string().contains("snspd_efficiency"));
    }
}
