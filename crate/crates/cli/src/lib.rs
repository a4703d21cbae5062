//! Configuration parsing and pipeline orchestration behind the `matherkit` binary.

pub mod config;
pub mod run;
pub mod scenarios;

pub use config::{parse_config, parse_config_str, ConfigError, Experiment, ParseError, ScenarioConfig, ValidationError};
pub use run::{run_scenario, RunError, RunManifest};
