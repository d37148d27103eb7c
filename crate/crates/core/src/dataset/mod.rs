//! Input frames: TUM RGB-D sequences, the synthetic ground-truth generator
//! and sensor-noise injection.

mod noise;
mod synthetic;
mod tum;

pub use noise::{add_noise, NoiseParams};
pub use synthetic::{generate_synthetic, SyntheticSpec, TrajectoryKind};
pub use tum::{associate, load_tum_sequence, write_tum_sequence, TumSequence};

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Vec3};
use crate::imgbuf::{RgbImage, ScalarImage};
use crate::splat_map::GaussianMap;
use crate::trajectory::Trajectory;

/// A timestamped RGB-D pair. Depth is in meters, 0 marks invalid pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub color: RgbImage,
    pub depth: ScalarImage,
    pub intrinsics: CameraIntrinsics,
}

impl Frame {
    pub fn new(
        timestamp: f64,
        color: RgbImage,
        depth: ScalarImage,
        intrinsics: CameraIntrinsics,
    ) -> Result<Self> {
        if color.width != depth.width
            || color.height != depth.height
            || color.width != intrinsics.width
            || color.height != intrinsics.height
        {
            return Err(Error::Precondition(
                "color, depth and intrinsics sizes disagree".into(),
            ));
        }
        if depth.data.iter().any(|d| !(*d >= 0.0)) {
            return Err(Error::Precondition("depth must be non-negative".into()));
        }
        Ok(Self {
            timestamp,
            color,
            depth,
            intrinsics,
        })
    }

    pub fn width(&self) -> usize {
        self.color.width
    }

    pub fn height(&self) -> usize {
        self.color.height
    }

    pub fn median_depth(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.depth.data.iter().copied().filter(|d| *d > 0.0).collect();
        if v.is_empty() {
            return None;
        }
        let mid = v.len() / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
        Some(*m)
    }
}

#[derive(Clone, Debug, Default)]
pub struct GroundTruth {
    pub trajectory: Trajectory,
    pub scene: Option<GaussianMap>,
    pub landmarks: Vec<Vec3>,
    /// `visibility[frame][landmark]`.
    pub visibility: Vec<Vec<bool>>,
}

/// Random access to a sequence's frames; TUM sequences decode on demand.
pub trait FrameSource {
    fn len(&self) -> usize;
    fn frame(&self, index: usize) -> Result<Frame>;
    fn ground_truth(&self) -> Option<&GroundTruth>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An in-memory sequence, as produced by the synthetic generator.
#[derive(Clone, Debug)]
pub struct MemorySequence {
    pub frames: Vec<Frame>,
    pub ground_truth: Option<GroundTruth>,
}

impl FrameSource for MemorySequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        Ok(self.frames[index].clone())
    }

    fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }
}
