//! Experiment configuration: one TOML document with a section per module.
//!
//! Files only need to name the plant and whatever they change; everything
//! else comes from the plant's defaults. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::discrepancy::QuantileConfig;
use crate::dynamics::{IllustrativeConfig, PlantSpec, SuspensionConfig};
use crate::error::{CcdError, Result};
use crate::lifecycle::LifecycleConfig;
use crate::ppo::{NetworkSpec, PpoConfig};
use crate::pretrain::PretrainConfig;
use crate::profiles::{RoadSpec, SpeedSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub network: NetworkSpec,
    /// Initial policy standard deviation, as a fraction of the action bound.
    pub initial_std_fraction: f64,
    /// Bias of every std-network layer at initialization.
    pub std_bias: f64,
    pub min_std: f64,
}

/// Where training and evaluation episodes start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StartsConfig {
    /// Uniform over the state box.
    Box,
    /// States the constrained controller can bring home with a reduced
    /// share of the input range, at the initial design.
    FeasiblePool { size: usize, input_fraction: f64 },
}

/// Externally supplied profiles replacing the generated ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileFiles {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub road_csv: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speed_csv: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub plant: PlantSpec,
    pub seed: u64,
    pub workers: usize,
    pub agent: AgentConfig,
    pub starts: StartsConfig,
    pub pretrain: PretrainConfig,
    pub ppo: PpoConfig,
    pub discrepancy: QuantileConfig,
    pub lifecycle: LifecycleConfig,
    pub road: RoadSpec,
    pub speed: SpeedSpec,
    #[serde(default)]
    pub profiles: ProfileFiles,
}

impl ExperimentConfig {
    /// Defaults for a plant.
    pub fn for_plant(plant: PlantSpec) -> Self {
        let (agent, starts, samples, lifecycle) = match &plant {
            PlantSpec::Illustrative(_) => (
                AgentConfig {
                    network: NetworkSpec::illustrative(),
                    initial_std_fraction: 0.1,
                    std_bias: 0.01,
                    min_std: 1e-6,
                },
                StartsConfig::FeasiblePool {
                    size: 1000,
                    input_fraction: 0.85,
                },
                300,
                LifecycleConfig::illustrative(),
            ),
            PlantSpec::Suspension(_) => (
                AgentConfig {
                    network: NetworkSpec::suspension(),
                    initial_std_fraction: 0.1,
                    std_bias: 0.01,
                    min_std: 1e-6,
                },
                StartsConfig::Box,
                3000,
                LifecycleConfig::suspension(),
            ),
        };
        Self {
            plant,
            seed: 0,
            workers: 1,
            agent,
            starts,
            pretrain: PretrainConfig {
                samples,
                ..PretrainConfig::default()
            },
            ppo: PpoConfig::default(),
            discrepancy: QuantileConfig::default(),
            lifecycle,
            road: RoadSpec::default(),
            speed: SpeedSpec::default(),
            profiles: ProfileFiles::default(),
        }
    }

    pub fn illustrative() -> Self {
        Self::for_plant(PlantSpec::Illustrative(IllustrativeConfig::default()))
    }

    pub fn suspension() -> Self {
        Self::for_plant(PlantSpec::Suspension(SuspensionConfig::default()))
    }

    /// Parses a TOML document; relative paths resolve against `base_dir`.
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut user: toml::Value =
            toml::from_str(text).map_err(|e| CcdError::Config(format!("config: {e}")))?;
        let table = user
            .as_table_mut()
            .ok_or_else(|| CcdError::Config("config must be a table".into()))?;

        // `plant_file` names a separate document holding the `[plant]` table.
        if let Some(file) = table.remove("plant_file") {
            let file = file
                .as_str()
                .ok_or_else(|| CcdError::Config("plant_file must be a string".into()))?;
            if table.contains_key("plant") {
                return Err(CcdError::Config("give either plant or plant_file, not both".into()));
            }
            let path = base_dir.join(file);
            let text = std::fs::read_to_string(&path).map_err(|e| CcdError::io(&path, e))?;
            let plant: toml::Value = toml::from_str(&text)
                .map_err(|e| CcdError::Config(format!("{}: {e}", path.display())))?;
            let plant = plant.get("plant").cloned().unwrap_or(plant);
            table.insert("plant".into(), plant);
        }

        let kind = table
            .get("plant")
            .and_then(|p| p.get("kind"))
            .and_then(|k| k.as_str())
            .ok_or_else(|| CcdError::Config("config needs plant.kind".into()))?;
        let defaults = match kind {
            "illustrative" => Self::illustrative(),
            "suspension" => Self::suspension(),
            other => return Err(CcdError::Config(format!("unknown plant kind {other:?}"))),
        };
        let mut merged = toml::Value::try_from(&defaults)
            .map_err(|e| CcdError::Config(format!("serializing defaults: {e}")))?;
        merge(&mut merged, user);
        let mut cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| CcdError::Config(format!("config: {e}")))?;
        for p in [&mut cfg.profiles.road_csv, &mut cfg.profiles.speed_csv]
            .into_iter()
            .flatten()
        {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CcdError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| CcdError::Config(format!("serializing config: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.discrepancy.validate()?;
        self.lifecycle.validate()?;
        if self.workers == 0 {
            return Err(CcdError::Config("workers must be at least 1".into()));
        }
        if !(self.agent.initial_std_fraction > 0.0) || !(self.agent.min_std > 0.0) {
            return Err(CcdError::Config("policy std settings must be positive".into()));
        }
        if let StartsConfig::FeasiblePool { size, input_fraction } = self.starts {
            if size == 0 || !(input_fraction > 0.0 && input_fraction <= 1.0) {
                return Err(CcdError::Config(
                    "feasible pool needs size ≥ 1 and input_fraction in (0, 1]".into(),
                ));
            }
        }
        if self.pretrain.samples < 50 {
            return Err(CcdError::Config("pretrain.samples must be at least 50".into()));
        }
        Ok(())
    }
}

/// Recursively overlays `over` onto `base`; tables merge, everything else
/// replaces. A table that switches enum variant (`kind`) replaces wholesale.
fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            let switches = matches!((b.get("kind"), o.get("kind")), (Some(x), Some(y)) if x != y);
            if switches {
                *b = o;
                return;
            }
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_plant_defaults() {
        let cfg = ExperimentConfig::from_toml_str("[plant]\nkind = \"suspension\"\n", Path::new(".")).unwrap();
        assert_eq!(cfg, ExperimentConfig::suspension());
        assert_eq!(cfg.pretrain.samples, 3000);
        let cfg = ExperimentConfig::from_toml_str("[plant]\nkind = \"illustrative\"\n", Path::new(".")).unwrap();
        assert_eq!(cfg.pretrain.samples, 300);
    }

    #[test]
    fn overrides_merge_deeply() {
        let text = "seed = 7\n[plant]\nkind = \"suspension\"\nm_s = 300.0\n[ppo]\nepochs = 5\n[pretrain.mpc]\nhorizon = 10\n";
        let cfg = ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.ppo.epochs, 5);
        assert_eq!(cfg.ppo.lr, PpoConfig::default().lr);
        assert_eq!(cfg.pretrain.mpc.horizon, 10);
        assert_eq!(cfg.pretrain.samples, 3000);
        match &cfg.plant {
            PlantSpec::Suspension(s) => {
                assert_eq!(s.m_s, 300.0);
                assert_eq!(s.k_t, SuspensionConfig::default().k_t);
            }
            _ => panic!("wrong plant"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        for text in [
            "[plant]\nkind = \"illustrative\"\n[ppo]\nepoch = 5\n",
            "[plant]\nkind = \"illustrative\"\nq = 1\n",
            "bogus = 1\n[plant]\nkind = \"illustrative\"\n",
            "[plant]\nkind = \"bicycle\"\n",
            "[ppo]\nepochs = 5\n",
        ] {
            assert!(ExperimentConfig::from_toml_str(text, Path::new(".")).is_err(), "{text}");
        }
    }

    #[test]
    fn round_trips_through_toml() {
        for cfg in [ExperimentConfig::illustrative(), ExperimentConfig::suspension()] {
            let text = cfg.to_toml().unwrap();
            assert_eq!(ExperimentConfig::from_toml_str(&text, Path::new(".")).unwrap(), cfg);
        }
    }

    #[test]
    fn starts_variant_switch() {
        let text = "[plant]\nkind = \"illustrative\"\n[starts]\nkind = \"box\"\n";
        let cfg = ExperimentConfig::from_toml_str(text, Path::new(".")).unwrap();
        assert_eq!(cfg.starts, StartsConfig::Box);
    }

    #[test]
    fn plant_file_is_read_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("car.toml"), "[plant]\nkind = \"suspension\"\nm_us = 50.0\n").unwrap();
        let cfg = ExperimentConfig::from_toml_str("plant_file = \"car.toml\"\n", dir.path()).unwrap();
        match cfg.plant {
            PlantSpec::Suspension(s) => assert_eq!(s.m_us, 50.0),
            _ => panic!("wrong plant"),
        }
    }
}
