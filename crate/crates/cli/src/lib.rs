//! Library surface of the `mtdc` command-line tool: config parsing and the
//! run/analyze/sweep/soundness pipelines.

pub mod config;
pub mod pipeline;
