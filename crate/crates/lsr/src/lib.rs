//! File formats, artifacts, multi-stage pipelines and the `lsr` command line
//! on top of `lsr-core`.

pub mod artifacts;
pub mod cli;
pub mod error;
pub mod formats;
pub mod pipeline;
