//! Experiment runner for the hjks engines: configuration parsing, engine
//! dispatch, benchmark presets and run manifests.

pub mod bench;
pub mod config;
pub mod manifest;
pub mod run;
