//! Batch evaluation CLI: manifests, the worker-pool runner, and the
//! alignment/sysid/report commands.

pub mod commands;
pub mod manifest;
pub mod runner;
