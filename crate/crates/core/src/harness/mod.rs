//! Scenario loading, synthetic data, Monte Carlo experiments and the CLI.

pub mod cli;
pub mod config;
pub mod data;
pub mod experiment;

pub use config::{default_tariff, Scenario, ScenarioConfig};
pub use data::{load_households, synth_generate, Household, LoadOptions, SynthParams};
pub use experiment::{
    experiment_ir_violation, experiment_welfare_gain, ExperimentOptions, IrReport, ReportFormat, WelfareGainReport,
};
