//! Object-level mapping backend.
//!
//! Per-frame observations (camera pose, detections, sparse world points and
//! line segments) are associated into global objects, each object is fitted
//! with a gravity-aligned cube or a quadric, maps are matched through
//! random-walk semantic descriptors, and a simulator drives entropy-based
//! next-best-view exploration.

// Validation is written as `!(x > 0.0)` on purpose: NaN fails it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod error;
pub mod exploration;
pub mod geometry;
pub mod parameterization;
pub mod pipeline;
pub mod stats;
pub mod topomap;

pub use error::{GeometryError, ParamError, PipelineError, TopoError};
