//! Keyframe/landmark graph with covisibility bookkeeping.

use std::collections::{BTreeMap, HashMap};

use super::{Feature, KeyframeId, LandmarkId};
use crate::geometry::{backproject, project_point, CameraIntrinsics, PixelCoord, SE3Pose, Twist, Vec3};

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub id: LandmarkId,
    pub position: Vec3,
    /// `(keyframe, feature index)` pairs.
    pub observations: Vec<(KeyframeId, usize)>,
    pub track_key: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Keyframe {
    pub id: KeyframeId,
    pub frame_index: usize,
    pub pose: SE3Pose,
    pub features: Vec<Feature>,
    pub covisibility: BTreeMap<KeyframeId, usize>,
}

impl Keyframe {
    pub fn new(id: KeyframeId, frame_index: usize, pose: SE3Pose, features: Vec<Feature>) -> Self {
        Self {
            id,
            frame_index,
            pose,
            features,
            covisibility: BTreeMap::new(),
        }
    }

    pub fn landmark_count(&self) -> usize {
        self.features.iter().filter(|f| f.landmark_id.is_some()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackState {
    /// Landmarks matched in the current frame.
    pub matched: usize,
    /// Landmarks observed by the reference keyframe.
    pub previous_total: usize,
    pub last_pose: SE3Pose,
    /// Left twist taking the previous pose to the last one.
    pub velocity: Twist,
    pub frames_since_keyframe: usize,
}

impl Default for TrackState {
    fn default() -> Self {
        Self {
            matched: 0,
            previous_total: 0,
            last_pose: SE3Pose::identity(),
            velocity: Twist::zeros(),
            frames_since_keyframe: 0,
        }
    }
}

impl TrackState {
    pub fn tracked_ratio(&self) -> f64 {
        if self.previous_total == 0 {
            0.0
        } else {
            self.matched as f64 / self.previous_total as f64
        }
    }

    /// Constant-velocity prediction of the next pose.
    pub fn predict(&self) -> SE3Pose {
        self.last_pose.retract(&self.velocity)
    }
}

pub fn select_keyframe(state: &TrackState, min_tracked_ratio: f64, min_frames_gap: usize) -> bool {
    state.tracked_ratio() < min_tracked_ratio && state.frames_since_keyframe >= min_frames_gap
}

/// Back-projects every feature with depth and no landmark, links it, and
/// returns the new landmarks with ids counting up from `first_id`.
pub fn create_landmarks(kf: &mut Keyframe, k: &CameraIntrinsics, first_id: LandmarkId) -> Vec<Landmark> {
    let mut out = Vec::new();
    for (i, f) in kf.features.iter_mut().enumerate() {
        if f.landmark_id.is_some() {
            continue;
        }
        let Some(d) = f.depth else { continue };
        let Ok(position) = backproject(k, &kf.pose, &f.pixel, d) else {
            continue;
        };
        let id = LandmarkId(first_id.0 + out.len() as u64);
        f.landmark_id = Some(id);
        out.push(Landmark {
            id,
            position,
            observations: vec![(kf.id, i)],
            track_key: f.track_key,
        });
    }
    out
}

#[derive(Clone, Debug, Default)]
pub struct SparseMap {
    pub keyframes: Vec<Keyframe>,
    pub landmarks: BTreeMap<LandmarkId, Landmark>,
    by_key: HashMap<u64, LandmarkId>,
    next_landmark: u64,
}

impl SparseMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn keyframe(&self, id: KeyframeId) -> &Keyframe {
        &self.keyframes[id.0 as usize]
    }

    pub fn last_keyframe(&self) -> Option<&Keyframe> {
        self.keyframes.last()
    }

    pub fn landmark_for_key(&self, key: u64) -> Option<LandmarkId> {
        self.by_key.get(&key).copied()
    }

    /// Inserts a keyframe. Features already carrying a landmark id (or a
    /// known track key) become observations; the rest with depth spawn landmarks.
    pub fn add_keyframe(
        &mut self,
        frame_index: usize,
        pose: SE3Pose,
        mut features: Vec<Feature>,
        k: &CameraIntrinsics,
    ) -> KeyframeId {
        let id = KeyframeId(self.keyframes.len() as u64);
        for f in features.iter_mut() {
            if f.landmark_id.is_none() {
                if let Some(key) = f.track_key {
                    f.landmark_id = self.by_key.get(&key).copied();
                }
            }
        }
        // One observation per landmark per keyframe.
        let mut seen = std::collections::HashSet::new();
        for f in features.iter_mut() {
            if let Some(l) = f.landmark_id {
                if !self.landmarks.contains_key(&l) || !seen.insert(l) {
                    f.landmark_id = None;
                    f.track_key = None;
                }
            }
        }
        let mut kf = Keyframe::new(id, frame_index, pose, features);
        let mut shared: BTreeMap<KeyframeId, usize> = BTreeMap::new();
        for (i, f) in kf.features.iter().enumerate() {
            let Some(l) = f.landmark_id else { continue };
            let lm = self.landmarks.get_mut(&l).expect("checked above");
            let mut others: Vec<KeyframeId> = lm.observations.iter().map(|o| o.0).collect();
            others.dedup();
            for o in others {
                *shared.entry(o).or_default() += 1;
            }
            lm.observations.push((id, i));
        }
        for (&other, &n) in &shared {
            *self.keyframes[other.0 as usize].covisibility.entry(id).or_default() += n;
        }
        kf.covisibility = shared;
        let created = create_landmarks(&mut kf, k, LandmarkId(self.next_landmark));
        self.next_landmark += created.len() as u64;
        for l in created {
            if let Some(key) = l.track_key {
                self.by_key.insert(key, l.id);
            }
            self.landmarks.insert(l.id, l);
        }
        self.keyframes.push(kf);
        id
    }

    pub fn covisibility(&self, a: KeyframeId, b: KeyframeId) -> usize {
        self.keyframe(a).covisibility.get(&b).copied().unwrap_or(0)
    }

    pub fn covisibility_is_symmetric(&self) -> bool {
        self.keyframes.iter().all(|kf| {
            kf.covisibility
                .iter()
                .all(|(&o, &n)| self.covisibility(o, kf.id) == n)
        })
    }

    /// Landmarks projecting inside the image at `pose`, with their projections.
    pub fn visible_landmarks(&self, pose: &SE3Pose, k: &CameraIntrinsics) -> Vec<(LandmarkId, PixelCoord)> {
        self.landmarks
            .values()
            .filter_map(|l| match project_point(k, pose, &l.position) {
                Ok((px, d)) if d > 0.0 && k.contains(&px) => Some((l.id, px)),
                _ => None,
            })
            .collect()
    }

    /// Applies new keyframe poses and landmark positions.
    pub fn update(&mut self, poses: &[SE3Pose], points: &BTreeMap<LandmarkId, Vec3>) {
        for (kf, p) in self.keyframes.iter_mut().zip(poses) {
            kf.pose = *p;
        }
        for (id, p) in points {
            if let Some(l) = self.landmarks.get_mut(id) {
                l.position = *p;
            }
        }
    }
}
