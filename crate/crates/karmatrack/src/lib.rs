//! File formats, the experiment driver and benchmarks on top of
//! `karmatrack-core`.

pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod experiment;
pub mod io;
pub mod stats;
