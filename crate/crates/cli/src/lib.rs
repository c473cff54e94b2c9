//! IO, file formats and subcommands around the core learner. The binary
//! in `main.rs` is a thin argument-parsing wrapper over these modules.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod formats;
