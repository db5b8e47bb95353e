//! Radar place recognition with free-space descriptors.
//!
//! Scans are polar intensity images (rows are azimuths, columns range
//! bins). Feature pixels are extracted per row, the remaining free space is
//! summarized into a rotation-invariant range descriptor used for retrieval
//! and a rotation-equivariant angle descriptor used for initial heading.
//! Retrieved loops are verified by ICP and fed to a pose-graph optimizer.

// negated float comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod descriptor;
pub mod error;
pub mod features;
pub mod geometry;
pub mod kdtree;
pub mod metrics;
pub mod pipeline;
pub mod pose_graph;
pub mod registration;
pub mod retrieval;
pub mod scan_io;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, Result};
