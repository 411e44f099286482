//! Scenario files, presets, renders and the run driver behind the
//! `hswarm` binary.

pub mod config;
pub mod presets;
pub mod render;
mod run;

pub use config::{Mode, Scenario};
pub use presets::preset;
pub use run::{run_scenario, Outcome};

/// Exit status for a run that finished but hit a step limit.
pub const EXIT_PARTIAL: i32 = 4;
