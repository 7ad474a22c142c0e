//! RGBD semantic instance labeling.
//!
//! The crate turns a depth/color image pair into an organized point cloud,
//! estimates dense surface normals with integral images, over-segments the
//! cloud on an 8-neighbor voxel graph, merges the resulting regions through
//! an agglomerative histogram hierarchy, and classifies the final regions
//! with a random forest. A synthetic scene generator with exact ground truth
//! and the usual confusion-matrix metrics round out the pipeline so every
//! stage can be verified end to end without external data.

pub mod error;
pub mod evaluate;
pub mod features;
pub mod forest;
pub mod geometry;
pub mod hierarchy;
pub mod io;
pub mod normals;
pub mod oversegment;
pub mod pipeline;
pub mod synthetic;

pub use error::{Error, Result};
