//! Command-line pipeline for haptic localization: `gen`, `train`, `map`,
//! `localize`, `eval`, `sweep` and `bench`.

pub mod cli;
pub mod commands;
pub mod config;

pub use cli::run;
pub use config::{RunConfig, Variant};
