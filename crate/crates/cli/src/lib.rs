//! Library side of the `alphamine` binary, shared with its tests.

pub mod commands;
pub mod config;
pub mod output;
