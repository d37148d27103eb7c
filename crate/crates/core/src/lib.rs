//! RGB-D SLAM combining a sparse feature tracker with an online isotropic
//! Gaussian-splatting map.
//!
//! The pipeline tracks every frame against sparse landmarks, promotes
//! keyframes, picks reconstruction viewpoints by covisibility, refines their
//! render pose against reprojection and rendering losses, and optimizes the
//! Gaussian map at those poses. A global bundle adjustment closes the run.

// Negated comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bridge;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod frontend;
pub mod geometry;
pub mod imgbuf;
pub mod mapper;
pub mod pipeline;
pub mod rasterizer;
pub mod splat_map;
pub mod trajectory;

pub use error::{Error, Result};
