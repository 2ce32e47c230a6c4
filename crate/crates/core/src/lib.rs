//! Graph-induced feature extraction for point-cloud registration.
//!
//! A point cloud is cut into fixed-size patches, each patch becomes a weighted
//! radius graph, and a small topology-adaptive graph-convolutional network maps
//! the graph to three outputs: a per-node saliency value (whose argmax is the
//! patch keypoint), a unit-length 32-d descriptor, and a scalar saliency score.
//! The features drive a RANSAC + SVD + ICP registration pipeline.
//!
//! ```text
//! PointCloud ─► patching ─► graph ─► model ─► (values, descriptor, score)
//!                                              │
//!                     registration ◄───────────┘
//! ```
//!
//! Training happens in two stages: supervised initialization on synthetic
//! primitive corners ([`synthgen`]), then metric learning on posed cloud pairs
//! ([`training`]).
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod cli;
pub mod error;
pub mod graph;
pub mod model;
pub mod nn;
pub mod patching;
pub mod pointcloud;
pub mod registration;
pub mod synthgen;
pub mod training;

pub use error::{Error, Result};
pub use graph::{PatchGraph, ValueLabels};
pub use model::{GraphiteModel, ModelConfig, PatchFeatures};
pub use patching::Patch;
pub use pointcloud::{Point, PointCloud, RigidPose};
