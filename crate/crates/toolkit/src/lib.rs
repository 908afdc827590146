//! Config-driven runner for the `carleman-core` checks and experiments:
//! TOML configs, the field catalog, CSV/JSON/binary outputs and parallel
//! drivers.

pub mod catalog;
pub mod commands;
pub mod config;
pub mod drivers;
pub mod io;
pub mod report;

pub use commands::run;
pub use config::{parse_config, Command, RunConfig};
