//! Config-driven front end for `dampwave-core`: TOML run configs, the
//! simulation pipeline and atomic artifact output.

pub mod config;
pub mod output;
pub mod pipeline;
