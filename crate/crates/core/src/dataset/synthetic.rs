use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Frame, GroundTruth, MemorySequence};
use crate::error::{Error, Result};
use crate::geometry::{project_point, CameraIntrinsics, Mat3, SE3Pose, Vec3};
use crate::rasterizer::{render, RenderOptions};
use crate::splat_map::{Gaussian, GaussianMap};
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryKind {
    /// Circle about the world y axis through the scene center, camera looking at the center.
    Orbit,
    /// Straight pass along world x at fixed distance, looking along +z.
    Line,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub gaussian_count: usize,
    /// Half extents of the box holding Gaussian centers, centered at the origin.
    pub extent: Vec3,
    pub trajectory: TrajectoryKind,
    pub frame_count: usize,
    pub intrinsics: CameraIntrinsics,
    pub seed: u64,
    pub orbit_radius: f64,
    /// Camera height offset along world y (negative is above: y points down).
    pub orbit_height: f64,
    /// Total swept angle of the orbit, degrees.
    pub arc_degrees: f64,
    pub line_length: f64,
    pub frame_rate: f64,
    /// Gaussian radius range as a fraction of the mean half extent.
    pub radius_range: (f64, f64),
    pub opacity_range: (f64, f64),
    /// Depth pixels with accumulated coverage below this are reported invalid.
    pub depth_min_coverage: f64,
    pub render: RenderOptions,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            gaussian_count: 100,
            extent: Vec3::new(1.0, 0.6, 1.0),
            trajectory: TrajectoryKind::Orbit,
            frame_count: 30,
            intrinsics: CameraIntrinsics {
                fx: 64.0,
                fy: 64.0,
                cx: 31.5,
                cy: 31.5,
                width: 64,
                height: 64,
            },
            seed: 0,
            orbit_radius: 2.0,
            orbit_height: -0.4,
            arc_degrees: 60.0,
            line_length: 1.0,
            frame_rate: 30.0,
            radius_range: (0.12, 0.3),
            opacity_range: (0.7, 0.98),
            depth_min_coverage: 0.5,
            render: RenderOptions::default(),
        }
    }
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.gaussian_count < 1 {
            return Err(Error::Config("synthetic scene needs at least one Gaussian".into()));
        }
        if self.frame_count < 2 {
            return Err(Error::Config("synthetic sequence needs at least two frames".into()));
        }
        if !(self.extent.x > 0.0 && self.extent.y > 0.0 && self.extent.z > 0.0) {
            return Err(Error::Config("synthetic scene extent must be positive".into()));
        }
        if self.trajectory == TrajectoryKind::Orbit && !(self.orbit_radius > 0.0) {
            return Err(Error::Config("orbit radius must be positive".into()));
        }
        if self.radius_range.0 <= 0.0 || self.radius_range.1 < self.radius_range.0 {
            return Err(Error::Config("invalid Gaussian radius range".into()));
        }
        self.intrinsics.validate()
    }

    /// Orbit angle of frame `k`, radians.
    pub fn orbit_angle(&self, k: usize) -> f64 {
        let arc = self.arc_degrees.to_radians();
        -arc / 2.0 + arc * k as f64 / (self.frame_count - 1) as f64
    }

    pub fn pose(&self, k: usize) -> SE3Pose {
        match self.trajectory {
            TrajectoryKind::Orbit => {
                let th = self.orbit_angle(k);
                let eye = Vec3::new(
                    self.orbit_radius * th.sin(),
                    self.orbit_height,
                    -self.orbit_radius * th.cos(),
                );
                SE3Pose::look_at(eye, Vec3::zeros(), Vec3::y())
            }
            TrajectoryKind::Line => {
                let s = k as f64 / (self.frame_count - 1) as f64 - 0.5;
                let eye = Vec3::new(s * self.line_length, self.orbit_height, -self.orbit_radius);
                SE3Pose::new(Mat3::identity(), eye)
            }
        }
    }

    pub fn scene(&self) -> GaussianMap {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let scale = (self.extent.x + self.extent.y + self.extent.z) / 3.0;
        let sym = |e: f64, rng: &mut ChaCha8Rng| rng.random_range(-e..=e);
        let gaussians = (0..self.gaussian_count)
            .map(|_| {
                let center = Vec3::new(
                    sym(self.extent.x, &mut rng),
                    sym(self.extent.y, &mut rng),
                    sym(self.extent.z, &mut rng),
                );
                let radius = scale * rng.random_range(self.radius_range.0..=self.radius_range.1);
                let color = [rng.random(), rng.random(), rng.random()];
                let opacity = rng.random_range(self.opacity_range.0..=self.opacity_range.1);
                Gaussian {
                    center,
                    radius,
                    color,
                    opacity,
                }
            })
            .collect();
        GaussianMap::from_gaussians(gaussians)
    }
}

/// Renders a deterministic sequence from a random Gaussian scene. Depth is
/// the rasterizer's depth buffer, so the mapper's model class represents the
/// data exactly where coverage is high.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<MemorySequence> {
    spec.validate()?;
    let scene = spec.scene();
    let k = spec.intrinsics;
    let landmarks: Vec<Vec3> = scene.gaussians().iter().map(|g| g.center).collect();
    let mut frames = Vec::with_capacity(spec.frame_count);
    let mut poses = Vec::with_capacity(spec.frame_count);
    let mut visibility = Vec::with_capacity(spec.frame_count);
    for i in 0..spec.frame_count {
        let pose = spec.pose(i);
        let t = i as f64 / spec.frame_rate;
        let out = render(&scene, &k, &pose, &spec.render);
        let mut depth = out.depth.clone();
        for (d, m) in depth.data.iter_mut().zip(&out.border_mask.data) {
            if *m < spec.depth_min_coverage {
                *d = 0.0;
            }
        }
        frames.push(Frame::new(t, out.color, depth, k)?);
        poses.push((t, pose));
        visibility.push(
            landmarks
                .iter()
                .map(|p| landmark_visible(&k, &pose, p, spec.render.near_clip))
                .collect(),
        );
    }
    Ok(MemorySequence {
        frames,
        ground_truth: Some(GroundTruth {
            trajectory: Trajectory::new(poses)?,
            scene: Some(scene),
            landmarks,
            visibility,
        }),
    })
}

pub fn landmark_visible(k: &CameraIntrinsics, pose: &SE3Pose, p: &Vec3, near: f64) -> bool {
    match project_point(k, pose, p) {
        Ok((px, d)) => d > near && k.contains(&px),
        Err(_) => false,
    }
}
