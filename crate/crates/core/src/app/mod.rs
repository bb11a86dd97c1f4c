//! Scenario files, the end-to-end pipeline and its on-disk artifacts.

pub mod config;
pub mod export;
pub mod pipeline;
pub mod timemap;

pub use config::{load_scenario, parse_config, ConfigError, Scenario, ScenarioConfig};
pub use pipeline::{plotdata, run, solve, summarize, PipelineError, Solution, Stage, Summary};
