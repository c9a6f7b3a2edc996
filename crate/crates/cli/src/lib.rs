//! bforest command line: plan query batches, score them, and compare
//! parallel against sequential coordination.

pub mod commands;
pub mod config;

pub use commands::{
    cmd_bench, cmd_evaluate, cmd_plan, cmd_synth, EXIT_ERROR, EXIT_FAILED, EXIT_OK,
};
pub use config::{RunConfig, Settings};
