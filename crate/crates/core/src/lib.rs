//! Online control of generalized energy storage.
//!
//! The online modified greedy (OMG) policy picks each step's operation by
//! minimizing the stage cost plus a linear penalty on the shifted storage
//! level. Two offline constants, a shift `gamma` and a weight `w`, are tuned
//! from the storage limits and global bounds on the cost's subgradients, and
//! they certify how far the long-run average cost can be from optimal.
//!
//! Module map:
//! * [`storage`]: storage parameters, validation and dynamics.
//! * [`cost`]: stage cost families and their subgradient bounds.
//! * [`tuning`]: admissible parameters, tuners and certificates.
//! * [`epochs`]: Markov return-time statistics and the Markov certificate.
//! * [`policy`] and [`clairvoyant`]: decision rules.
//! * [`process`]: disturbance generators and trace loading.
//! * [`sim`], [`config`], [`experiments`]: simulation, configuration and presets.

pub mod clairvoyant;
pub mod config;
pub mod cost;
pub mod epochs;
pub mod experiments;
pub mod policy;
pub mod process;
pub mod scalar;
pub mod sim;
pub mod storage;
pub mod tuning;

pub use config::{ConfigError, ConfigFile};
pub use cost::{Calendar, CostSpec, StageContext, StageCost, SubgradientBounds, SupportBounds};
pub use policy::{greedy_step, no_storage_step, omg_step, Decision};
pub use sim::{run, run_with_threads, PolicySpec, SimConfig, SimError, SimResult};
pub use storage::{InflowSet, Storage, StorageParams, StorageState};
pub use tuning::{OmgParams, TuneMethod, TuneOptions};
