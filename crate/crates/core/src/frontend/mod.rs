//! Sparse tracking frontend: features, landmarks, keyframes, pose tracking
//! and bundle adjustment over reprojection error.

pub mod bundle;
pub mod features;
pub mod map;
pub mod tracking;

use std::fmt;

pub use bundle::{bundle_adjust, BaObservation, BaProblem, BaResult};
pub use features::{detect_features, hamming, match_features, Descriptor, Feature};
pub use map::{create_landmarks, select_keyframe, Keyframe, Landmark, SparseMap, TrackState};
pub use tracking::{huber_cost, reprojection_jacobians, track_pose, LmConfig, PoseLm, TrackResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LandmarkId(pub u64);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyframeId(pub u64);

impl fmt::Display for LandmarkId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

impl fmt::Display for KeyframeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "K{}", self.0)
    }
}

/// Fewest correspondences a 6-dof pose solve accepts.
pub const MIN_POSE_MATCHES: usize = 6;
