//! Command-line harness: identification runs, detector training and signal simulation.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod error;
pub mod pipeline;
