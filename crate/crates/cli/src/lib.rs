//! Command-line workflows around `bms-core`: run configuration, the `BMS1`
//! checkpoint container, CSV/SVG output and the subcommands.

pub mod commands;
pub mod config;
pub mod container;
pub mod error;
pub mod output;

pub use config::{Dataset, Profile, RunConfig, Task};
pub use container::{Checkpoint, Container};
pub use error::{CliError, Result};
