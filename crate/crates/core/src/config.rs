//! The run configuration: one TOML document with a section per module.
//! Every field has a default and unknown keys are rejected.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controllers::ControllersConfig;
use crate::cumulants::{CumulantKind, SafetyZoneParams};
use crate::env::TrainingPool;
use crate::error::{Error, Result};
use crate::learner::LearnerConfig;
use crate::scenario::{DriverModel, ScenarioSpec, VehicleInit};
use crate::sim::SimConfig;

/// Partial override of a scenario preset; absent fields keep the preset's value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioOverride {
    pub ego_speed: Option<f64>,
    pub lead: Option<VehicleInit>,
    pub rear: Option<VehicleInit>,
    pub lead_driver: Option<DriverModel>,
    pub rear_driver: Option<DriverModel>,
    pub duration: Option<f64>,
    pub zone: Option<SafetyZoneParams>,
    pub v_target: Option<f64>,
}

impl ScenarioOverride {
    pub fn apply(&self, spec: &mut ScenarioSpec) {
        if let Some(v) = self.ego_speed {
            spec.ego_speed = v;
        }
        if let Some(v) = self.lead {
            spec.lead = Some(v);
        }
        if let Some(v) = self.rear {
            spec.rear = Some(v);
        }
        if let Some(v) = &self.lead_driver {
            spec.lead_driver = v.clone();
        }
        if let Some(v) = &self.rear_driver {
            spec.rear_driver = v.clone();
        }
        if let Some(v) = self.duration {
            spec.duration = v;
        }
        if let Some(v) = self.zone {
            spec.zone = v;
        }
        if let Some(v) = self.v_target {
            spec.v_target = v;
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; training and scenario jitter derive from it.
    pub seed: u64,
    pub output_dir: Option<PathBuf>,
    pub sim: SimConfig,
    pub zone: SafetyZoneParams,
    pub learner: LearnerConfig,
    pub pool: TrainingPool,
    pub controllers: ControllersConfig,
    /// Keyed by preset name.
    pub scenarios: BTreeMap<String, ScenarioOverride>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.zone.validate()?;
        self.learner.validate()?;
        self.pool.validate()?;
        self.controllers.validate()?;
        for name in self.scenarios.keys() {
            self.scenario(name)?;
        }
        Ok(())
    }

    /// Preset with this config's overrides applied.
    pub fn scenario(&self, name: &str) -> Result<ScenarioSpec> {
        let mut spec = ScenarioSpec::preset(name)?;
        if let Some(o) = self.scenarios.get(name) {
            o.apply(&mut spec);
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Learner settings for one question, seeded from the master seed.
    pub fn learner_for(&self, kind: CumulantKind, gamma: f64) -> LearnerConfig {
        let question = match kind {
            CumulantKind::FrontSafety => 1,
            CumulantKind::RearSafety => 2,
            CumulantKind::Speed => 3,
        };
        LearnerConfig {
            gamma,
            seed: self.learner.seed ^ self.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (question << 56),
            ..self.learner.clone()
        }
    }

    /// Training pool matched to the question.
    pub fn pool_for(&self, kind: CumulantKind) -> TrainingPool {
        self.pool.for_question(kind)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_all_defaults() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[learner]\nlearning_rat = 0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        assert!(RunConfig::from_toml("bogus = 1\n").is_err());
        assert!(RunConfig::from_toml("[scenarios.nowhere]\nduration = 3.0\n").is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig {
            seed: 7,
            ..RunConfig::default()
        };
        cfg.learner.steps = 1234;
        cfg.scenarios.insert(
            "emergency_stop".into(),
            ScenarioOverride {
                duration: Some(12.5),
                ..ScenarioOverride::default()
            },
        );
        let text = cfg.to_toml().unwrap();
        assert_eq!(RunConfig::from_toml(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply_to_presets() {
        let cfg = RunConfig::from_toml("[scenarios.emergency_stop]\nduration = 5.0\nlead = { gap = 100.0, speed = 0.0 }\n")
            .unwrap();
        let spec = cfg.scenario("emergency_stop").unwrap();
        assert_eq!(spec.duration, 5.0);
        assert_eq!(spec.lead.unwrap().gap, 100.0);
        assert_eq!(cfg.scenario("free_drive").unwrap(), ScenarioSpec::preset("free_drive").unwrap());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml("[sim]\ndt = -1.0\n").is_err());
        assert!(RunConfig::from_toml("[learner]\ngamma = 1.0\n").is_err());
    }

    #[test]
    fn questions_get_distinct_seeds() {
        let cfg = RunConfig::default();
        let a = cfg.learner_for(CumulantKind::FrontSafety, 0.95).seed;
        let b = cfg.learner_for(CumulantKind::RearSafety, 0.95).seed;
        assert_ne!(a, b);
    }
}
