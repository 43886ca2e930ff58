//! JSON configuration schema.
//!
//! Unknown keys are rejected everywhere. Relative trace paths resolve
//! against the directory holding the configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{Calendar, CostSpec};
use crate::process::ProcessSpec;
use crate::sim::{PolicySpec, SimConfig, SimError};
use crate::storage::{InflowSet, StorageParams};
use crate::tuning::{TuneMethod, TuneOptions};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("malformed configuration: {0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(#[from] SimError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub horizon: u64,
    /// Defaults to the middle of the level range.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s1: Option<f64>,
    pub seed: u64,
    pub replications: u32,
    pub keep_trajectory: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            horizon: 1000,
            s1: None,
            seed: 0,
            replications: 1,
            keep_trajectory: false,
        }
    }
}

fn default_policies() -> Vec<PolicySpec> {
    vec![
        PolicySpec::omg(TuneMethod::MaxWeight),
        PolicySpec::Greedy { name: None },
        PolicySpec::NoStorage { name: None },
    ]
}

fn plus_one() -> i8 {
    1
}

fn one_step_per_hour() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub storage: StorageParams,
    pub cost: CostSpec,
    #[serde(default)]
    pub inflow: InflowSet,
    pub process: ProcessSpec,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicySpec>,
    #[serde(default)]
    pub sim: SimSection,
    /// `-1` flips the sign of every imbalance draw, for data recorded with
    /// the opposite convention.
    #[serde(default = "plus_one")]
    pub imbalance_sign: i8,
    #[serde(default = "one_step_per_hour")]
    pub steps_per_hour: u32,
    #[serde(default)]
    pub tune: TuneOptions,
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let mut cfg = Self::from_json(&text)?;
        if let Some(dir) = path.parent() {
            cfg.rebase_paths(dir);
        }
        Ok(cfg)
    }

    fn rebase_paths(&mut self, dir: &Path) {
        if let ProcessSpec::Trace { path, .. } = &mut self.process {
            let p = Path::new(path.as_str());
            if p.is_relative() {
                *path = dir.join(p).to_string_lossy().into_owned();
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    /// Validates every section and builds the run configuration. Tuning
    /// happens here too, so every error surfaces before simulation.
    pub fn to_sim_config(&self) -> Result<SimConfig, ConfigError> {
        let storage = self.storage.validate().map_err(SimError::from)?;
        self.cost.validate().map_err(SimError::from)?;
        if self.steps_per_hour == 0 {
            return Err(SimError::Config("steps_per_hour must be positive".into()).into());
        }
        let process = self
            .process
            .clone()
            .resolve(self.cost.needs_price())
            .map_err(SimError::from)?;
        let config = SimConfig {
            storage,
            cost: self.cost.clone(),
            inflow: self.inflow,
            process,
            policies: self.policies.clone(),
            horizon: self.sim.horizon,
            s1: self.sim.s1.unwrap_or(0.5 * (storage.s_min + storage.s_max)),
            seed: self.sim.seed,
            replications: self.sim.replications,
            calendar: Calendar {
                steps_per_hour: self.steps_per_hour,
            },
            imbalance_sign: f64::from(self.imbalance_sign),
            tune: self.tune,
            keep_trajectory: self.sim.keep_trajectory,
        };
        config.prepare()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::storage::StorageError;

    const BASIC: &str = r#"{
        "storage": {"lambda": 1.0, "s_min": 0, "s_max": 100, "u_min": -10, "u_max": 10},
        "cost": {"family": "balancing", "q_plus": 1, "q_minus": 1},
        "process": {"kind": "iid",
                    "delta": {"kind": "laplace", "mean": 0, "sigma": 15},
                    "price": {"kind": "point_mass", "value": 1},
                    "supports": {"delta_min": -150, "delta_max": 150, "price_min": 1, "price_max": 1}},
        "sim": {"horizon": 50, "seed": 3, "replications": 2}
    }"#;

    #[test]
    fn parses_and_defaults() {
        let cfg = ConfigFile::from_json(BASIC).unwrap();
        assert_eq!(cfg.imbalance_sign, 1);
        assert_eq!(cfg.policies.len(), 3);
        let sim = cfg.to_sim_config().unwrap();
        assert_eq!(sim.s1, 50.0);
        let p = sim.tune(TuneMethod::MaxWeight).unwrap();
        assert_eq!((p.gamma, p.w, p.certified_bound), (-50.0, 40.0, 1.25));
    }

    #[test]
    fn round_trips() {
        let cfg = ConfigFile::from_json(BASIC).unwrap();
        assert_eq!(ConfigFile::from_json(&cfg.to_json()).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = BASIC.replace("\"seed\": 3", "\"seed\": 3, \"sed\": 4");
        assert!(matches!(ConfigFile::from_json(&bad), Err(ConfigError::Parse(_))));
        let bad = BASIC.replace("\"lambda\": 1.0", "\"lambda\": 1.0, \"lamda\": 1.0");
        assert!(matches!(ConfigFile::from_json(&bad), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn non_frequent_acting_named() {
        let bad = BASIC.replace("\"u_min\": -10, \"u_max\": 10", "\"u_min\": -60, \"u_max\": 60");
        let err = ConfigFile::from_json(&bad).unwrap().to_sim_config().unwrap_err();
        assert!(matches!(
            err,
            ConfigError::Invalid(SimError::Storage(StorageError::NonFrequentActing { .. }))
        ));
    }

    #[test]
    fn bad_initial_level_and_sign() {
        let bad = BASIC.replace("\"seed\": 3", "\"seed\": 3, \"s1\": 101");
        assert!(ConfigFile::from_json(&bad).unwrap().to_sim_config().is_err());
        let mut cfg = ConfigFile::from_json(BASIC).unwrap();
        cfg.imbalance_sign = 0;
        assert!(cfg.to_sim_config().is_err());
    }
}
