//! File formats and subcommands of the `blindtrain` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod hexfloat;
pub mod model;
