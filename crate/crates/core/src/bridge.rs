//! Links the sparse tracker to the splatting map: picks reconstruction
//! viewpoints by covisibility, gates unreliable pixels, and refines the
//! render pose against reprojection, color and depth losses.

use nalgebra::{Matrix6, Vector6};

use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::frontend::{LmConfig, PoseLm, MIN_POSE_MATCHES};
use crate::geometry::{project_point, CameraIntrinsics, PixelCoord, SE3Pose, Vec3};
use crate::imgbuf::ScalarImage;
use crate::rasterizer::{pixel_pose_jacobians, render, RenderOptions, RenderOutput};
use crate::splat_map::GaussianMap;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BridgeConfig {
    pub alpha: f64,
    pub beta: usize,
    pub gamma: f64,
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    pub iterations: usize,
    /// Use the frame's sensor depth as the cloud depth; otherwise the
    /// sparse landmark raster.
    pub dense_cloud_depth: bool,
    pub huber_delta: f64,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self {
            alpha: 0.75,
            beta: 20,
            gamma: 0.99,
            w1: 1.5,
            w2: 0.5,
            w3: 1.0,
            iterations: 10,
            dense_cloud_depth: true,
            huber_delta: 2.0,
        }
    }
}

impl BridgeConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha > 0.0
            && self.alpha <= 1.0
            && (0.0..=1.0).contains(&self.gamma)
            && self.w1 >= 0.0
            && self.w2 >= 0.0
            && self.w3 >= 0.0
            && self.iterations >= 1
            && self.huber_delta > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid bridge configuration {self:?}")))
        }
    }
}

/// Covisibility rule: `β ≤ M < α·T`.
pub fn select_viewpoint(matched: usize, total: usize, cfg: &BridgeConfig) -> bool {
    cfg.beta <= matched && (matched as f64) < cfg.alpha * total as f64
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GateMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl GateMask {
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&g| g).count()
    }

    /// Row-major indices of gated pixels.
    pub fn pixels(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &g)| g.then_some(i))
            .collect()
    }
}

pub fn compute_gate(cloud_depth: &ScalarImage, rendered: &RenderOutput, gamma: f64) -> Result<GateMask> {
    let (w, h) = (rendered.width(), rendered.height());
    if cloud_depth.width != w || cloud_depth.height != h {
        return Err(Error::Precondition("cloud depth size differs from render".into()));
    }
    let data = (0..w * h)
        .map(|i| cloud_depth.data[i] > 0.0 && rendered.depth.data[i] > 0.0 && rendered.border_mask.data[i] > gamma)
        .collect();
    Ok(GateMask {
        width: w,
        height: h,
        data,
    })
}

/// Camera depth of each landmark at its nearest pixel, nearest landmark
/// winning; zero elsewhere.
pub fn landmark_depth_raster(points: &[Vec3], pose: &SE3Pose, k: &CameraIntrinsics) -> ScalarImage {
    let mut img = ScalarImage::new(k.width, k.height);
    for p in points {
        let Ok((px, d)) = project_point(k, pose, p) else {
            continue;
        };
        let (x, y) = (px.u.round(), px.v.round());
        if d <= 0.0 || x < 0.0 || y < 0.0 || x >= k.width as f64 || y >= k.height as f64 {
            continue;
        }
        let (x, y) = (x as usize, y as usize);
        let cur = img.get(x, y);
        if cur == 0.0 || d < cur {
            img.set(x, y, d);
        }
    }
    img
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub reprojection: f64,
    pub color: f64,
    pub depth: f64,
    pub gated: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Initial,
    Reprojection,
    Rendering,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub iteration: usize,
    pub stage: Stage,
    pub loss: LossParts,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BridgeResult {
    pub pose: SE3Pose,
    pub initial: LossParts,
    pub best: LossParts,
    pub trace: Vec<TraceEntry>,
    pub no_gated_pixels: bool,
    pub insufficient_matches: bool,
}

struct Evaluation {
    loss: LossParts,
    out: RenderOutput,
    gate: GateMask,
    cloud: ScalarImage,
}

struct Problem<'a> {
    frame: &'a Frame,
    landmarks: Vec<Vec3>,
    map: &'a GaussianMap,
    k: CameraIntrinsics,
    cfg: BridgeConfig,
    opts: RenderOptions,
    use_rendering: bool,
}

const L1_EPS: f64 = 1e-3;

impl Problem<'_> {
    fn cloud_depth(&self, pose: &SE3Pose) -> ScalarImage {
        if self.cfg.dense_cloud_depth {
            self.frame.depth.clone()
        } else {
            landmark_depth_raster(&self.landmarks, pose, &self.k)
        }
    }

    fn evaluate(&self, pose: &SE3Pose, lm: Option<&PoseLm>) -> Result<Evaluation> {
        let out = render(self.map, &self.k, pose, &self.opts);
        let cloud = self.cloud_depth(pose);
        let gate = compute_gate(&cloud, &out, self.cfg.gamma)?;
        let mut loss = LossParts {
            gated: gate.count(),
            ..Default::default()
        };
        if let Some(lm) = lm {
            loss.reprojection = lm.rms_residual(pose);
        }
        if self.use_rendering {
            if loss.gated == 0 {
                // Rendering terms are undefined here; never select this iterate.
                loss.color = f64::INFINITY;
                loss.depth = f64::INFINITY;
            } else {
                let (mut sc, mut sd) = (0.0, 0.0);
                for i in gate.pixels() {
                    let c = out.color.data[i];
                    let f = self.frame.color.data[i];
                    sc += ((c[0] - f[0]).abs() + (c[1] - f[1]).abs() + (c[2] - f[2]).abs()) / 3.0;
                    sd += (out.depth.data[i] - cloud.data[i]).abs();
                }
                loss.color = sc / loss.gated as f64;
                loss.depth = sd / loss.gated as f64;
            }
        }
        let mut total = 0.0;
        if lm.is_some() {
            total += self.cfg.w1 * loss.reprojection;
        }
        if self.use_rendering {
            total += self.cfg.w2 * loss.color + self.cfg.w3 * loss.depth;
        }
        loss.total = total;
        Ok(Evaluation { loss, out, gate, cloud })
    }

    /// Normal equations of the IRLS surrogate of `w2·L_c + w3·L_d` at `ev`.
    fn rendering_system(&self, ev: &Evaluation) -> Result<(Matrix6<f64>, Vector6<f64>)> {
        let pixels = ev.gate.pixels();
        let jac = pixel_pose_jacobians(&ev.out, self.map, &pixels)?;
        let n = pixels.len() as f64;
        let (wc, wd) = (self.cfg.w2 / (3.0 * n), self.cfg.w3 / n);
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (&i, j) in pixels.iter().zip(&jac) {
            let c = ev.out.color.data[i];
            let f = self.frame.color.data[i];
            let mut add = |row: &[f64; 6], r: f64, scale: f64| {
                let w = scale / r.abs().max(L1_EPS);
                let jr = Vector6::from_row_slice(row);
                h += w * jr * jr.transpose();
                g += w * r * jr;
            };
            for ch in 0..3 {
                add(&j[ch], c[ch] - f[ch], wc);
            }
            add(&j[3], ev.out.depth.data[i] - ev.cloud.data[i], wd);
        }
        Ok((h, g))
    }
}

fn rendering_part(l: &LossParts, cfg: &BridgeConfig) -> f64 {
    cfg.w2 * l.color + cfg.w3 * l.depth
}

const MAX_DAMPING: f64 = 1e10;

/// Alternates one reprojection LM step and one damped Gauss–Newton step on
/// the gated rendering loss, `cfg.iterations` times, and returns the iterate
/// with the lowest total loss.
pub fn joint_optimize_pose(
    frame: &Frame,
    visible_landmarks: &[(Vec3, PixelCoord)],
    map: &GaussianMap,
    k: &CameraIntrinsics,
    init: &SE3Pose,
    cfg: &BridgeConfig,
    opts: &RenderOptions,
) -> Result<BridgeResult> {
    cfg.validate()?;
    let lm_cfg = LmConfig {
        huber_delta: cfg.huber_delta,
        ..Default::default()
    };
    let mut lm = if cfg.w1 > 0.0 && visible_landmarks.len() >= MIN_POSE_MATCHES {
        match PoseLm::new(k, visible_landmarks, *init, &lm_cfg) {
            Ok(lm) => Some(lm),
            Err(Error::InsufficientMatches { .. }) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let insufficient_matches = cfg.w1 > 0.0 && lm.is_none();
    let mut problem = Problem {
        frame,
        landmarks: visible_landmarks.iter().map(|(p, _)| *p).collect(),
        map,
        k: *k,
        cfg: *cfg,
        opts: *opts,
        use_rendering: cfg.w2 > 0.0 || cfg.w3 > 0.0,
    };
    let mut current = problem.evaluate(init, lm.as_ref())?;
    let mut no_gated_pixels = false;
    if problem.use_rendering && current.loss.gated == 0 {
        no_gated_pixels = true;
        problem.use_rendering = false;
        current = problem.evaluate(init, lm.as_ref())?;
    }
    let initial = current.loss;
    let mut pose = *init;
    let mut best = (pose, current.loss);
    let mut trace = vec![TraceEntry {
        iteration: 0,
        stage: Stage::Initial,
        loss: current.loss,
    }];
    let mut mu = 1e-3;
    for it in 1..=cfg.iterations {
        if let Some(lm) = lm.as_mut() {
            lm.set_pose(pose);
            if let crate::frontend::tracking::StepOutcome::Accepted { .. } = lm.step()? {
                pose = lm.pose;
                current = problem.evaluate(&pose, Some(lm))?;
                trace.push(TraceEntry {
                    iteration: it,
                    stage: Stage::Reprojection,
                    loss: current.loss,
                });
                if current.loss.total < best.1.total {
                    best = (pose, current.loss);
                }
            }
        }
        if problem.use_rendering && current.loss.gated > 0 {
            let (h, g) = problem.rendering_system(&current)?;
            let before = rendering_part(&current.loss, cfg);
            for _ in 0..6 {
                let mut damped = h;
                for i in 0..6 {
                    damped[(i, i)] += mu * h[(i, i)].max(1e-12);
                }
                let Some(chol) = damped.cholesky() else {
                    mu = (mu * 10.0).min(MAX_DAMPING);
                    continue;
                };
                let candidate = pose.retract(&-chol.solve(&g));
                let ev = problem.evaluate(&candidate, lm.as_ref())?;
                if rendering_part(&ev.loss, cfg) < before {
                    pose = candidate;
                    current = ev;
                    mu = (mu / 10.0).max(1e-9);
                    trace.push(TraceEntry {
                        iteration: it,
                        stage: Stage::Rendering,
                        loss: current.loss,
                    });
                    if current.loss.total < best.1.total {
                        best = (pose, current.loss);
                    }
                    break;
                }
                mu = (mu * 10.0).min(MAX_DAMPING);
            }
        }
    }
    if no_gated_pixels {
        log::warn!("no gated pixels at the initial pose; reprojection-only refinement");
    }
    if insufficient_matches {
        log::warn!("fewer than {MIN_POSE_MATCHES} landmarks; rendering-only refinement");
    }
    Ok(BridgeResult {
        pose: best.0,
        initial,
        best: best.1,
        trace,
        no_gated_pixels,
        insufficient_matches,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, FrameSource, SyntheticSpec};
    use crate::frontend::track_pose;
    use crate::geometry::Twist;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rendered(depth: f64, mask: f64) -> RenderOutput {
        let k = CameraIntrinsics::new(4.0, 4.0, 1.5, 1.5, 4, 4).unwrap();
        let mut out = render(&GaussianMap::new(), &k, &SE3Pose::identity(), &RenderOptions::default());
        out.depth = ScalarImage::filled(4, 4, depth);
        out.border_mask = ScalarImage::filled(4, 4, mask);
        out
    }

    #[test]
    fn viewpoint_rule() {
        let cfg = BridgeConfig::default();
        assert!(select_viewpoint(30, 100, &cfg));
        assert!(!select_viewpoint(80, 100, &cfg));
        assert!(!select_viewpoint(10, 100, &cfg));
        assert!(select_viewpoint(20, 100, &cfg));
        assert!(!select_viewpoint(19, 100, &cfg));
        assert!(select_viewpoint(74, 100, &cfg));
        assert!(!select_viewpoint(75, 100, &cfg));
    }

    #[test]
    fn gate_examples() {
        let zero = compute_gate(&ScalarImage::new(4, 4), &rendered(0.0, 0.0), 0.99).unwrap();
        assert_eq!(zero.count(), 0);
        let all = compute_gate(&ScalarImage::filled(4, 4, 1.0), &rendered(2.0, 0.995), 0.99).unwrap();
        assert_eq!(all.count(), 16);
        let none = compute_gate(&ScalarImage::filled(4, 4, 1.0), &rendered(2.0, 0.95), 0.99).unwrap();
        assert_eq!(none.count(), 0);
    }

    #[test]
    fn gate_truth_table() {
        for bits in 0..8u8 {
            let cloud = if bits & 1 != 0 { 1.0 } else { 0.0 };
            let depth = if bits & 2 != 0 { 2.0 } else { 0.0 };
            let mask = if bits & 4 != 0 { 0.995 } else { 0.5 };
            let g = compute_gate(&ScalarImage::filled(4, 4, cloud), &rendered(depth, mask), 0.99).unwrap();
            assert_eq!(g.get(1, 2), bits == 7, "case {bits}");
        }
    }

    #[test]
    fn sparse_raster_keeps_nearest() {
        let k = CameraIntrinsics::new(10.0, 10.0, 4.5, 4.5, 10, 10).unwrap();
        let pts = [Vec3::new(0.0, 0.0, 3.0), Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 0.0, -1.0)];
        let r = landmark_depth_raster(&pts, &SE3Pose::identity(), &k);
        assert_eq!(r.get(5, 5), 2.0);
        assert_eq!(r.data.iter().filter(|&&d| d > 0.0).count(), 1);
    }

    struct Fixture {
        frame: Frame,
        truth: SE3Pose,
        scene: GaussianMap,
        matches: Vec<(Vec3, PixelCoord)>,
        k: CameraIntrinsics,
        opts: RenderOptions,
    }

    fn fixture(index: usize) -> Fixture {
        let spec = SyntheticSpec {
            frame_count: 8,
            ..Default::default()
        };
        let seq = generate_synthetic(&spec).unwrap();
        let gt = seq.ground_truth().unwrap().clone();
        let truth = gt.trajectory.poses[index].1;
        let matches = gt
            .landmarks
            .iter()
            .zip(&gt.visibility[index])
            .filter(|(_, &v)| v)
            .map(|(p, _)| (*p, project_point(&spec.intrinsics, &truth, p).unwrap().0))
            .collect();
        Fixture {
            frame: seq.frame(index).unwrap(),
            truth,
            scene: gt.scene.unwrap(),
            matches,
            k: spec.intrinsics,
            opts: spec.render,
        }
    }

    fn perturbed(truth: &SE3Pose, seed: u64, norm: f64) -> SE3Pose {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = Twist::from_fn(|_, _| rng.random_range(-1.0..1.0));
        truth.retract(&(t * (norm / t.norm())))
    }

    #[test]
    fn stationary_at_ground_truth() {
        let f = fixture(3);
        let r = joint_optimize_pose(&f.frame, &f.matches, &f.scene, &f.k, &f.truth, &BridgeConfig::default(), &f.opts).unwrap();
        assert!(r.pose.twist_distance(&f.truth) < 1e-6);
        assert!(r.best.total < 1e-9);
    }

    #[test]
    fn recovers_perturbed_pose() {
        let f = fixture(5);
        let init = perturbed(&f.truth, 11, 0.02);
        let r = joint_optimize_pose(&f.frame, &f.matches, &f.scene, &f.k, &init, &BridgeConfig::default(), &f.opts).unwrap();
        assert!(r.pose.twist_distance(&f.truth) < 1e-3);
        assert!(r.best.total < r.initial.total);
        assert!(r.trace.iter().all(|e| e.loss.total >= r.best.total));
    }

    #[test]
    fn rendering_only_recovers_pose() {
        let f = fixture(2);
        let init = perturbed(&f.truth, 12, 0.01);
        let cfg = BridgeConfig {
            w1: 0.0,
            iterations: 30,
            ..Default::default()
        };
        let r = joint_optimize_pose(&f.frame, &f.matches, &f.scene, &f.k, &init, &cfg, &f.opts).unwrap();
        assert!(r.best.total < r.initial.total);
        assert!(r.pose.twist_distance(&f.truth) < init.twist_distance(&f.truth));
    }

    #[test]
    fn zero_render_weights_match_tracker() {
        let f = fixture(4);
        let init = perturbed(&f.truth, 13, 0.02);
        let cfg = BridgeConfig {
            w2: 0.0,
            w3: 0.0,
            ..Default::default()
        };
        let r = joint_optimize_pose(&f.frame, &f.matches, &f.scene, &f.k, &init, &cfg, &f.opts).unwrap();
        let lm_cfg = LmConfig {
            huber_delta: cfg.huber_delta,
            ..Default::default()
        };
        let t = track_pose(&f.matches, &f.k, &init, &lm_cfg).unwrap();
        assert!(r.pose.twist_distance(&t.pose) < 1e-9);
    }

    #[test]
    fn impossible_gate_falls_back_to_reprojection() {
        let f = fixture(1);
        let init = perturbed(&f.truth, 14, 0.02);
        let cfg = BridgeConfig {
            gamma: 1.0,
            ..Default::default()
        };
        let r = joint_optimize_pose(&f.frame, &f.matches, &f.scene, &f.k, &init, &cfg, &f.opts).unwrap();
        assert!(r.no_gated_pixels);
        assert!(r.pose.is_finite());
        assert!(r.pose.twist_distance(&f.truth) < 1e-3);
    }

    #[test]
    fn few_landmarks_use_rendering_only() {
        let f = fixture(2);
        let init = perturbed(&f.truth, 15, 0.01);
        let r = joint_optimize_pose(&f.frame, &f.matches[..4], &f.scene, &f.k, &init, &BridgeConfig::default(), &f.opts).unwrap();
        assert!(r.insufficient_matches);
        assert!(r.best.total <= r.initial.total);
    }

    #[test]
    fn gated_pixels_satisfy_all_conditions() {
        let f = fixture(6);
        let pose = perturbed(&f.truth, 16, 0.01);
        let out = render(&f.scene, &f.k, &pose, &f.opts);
        let gate = compute_gate(&f.frame.depth, &out, 0.99).unwrap();
        assert!(gate.count() > 0);
        for i in gate.pixels() {
            assert!(f.frame.depth.data[i] > 0.0);
            assert!(out.depth.data[i] > 0.0);
            assert!(out.border_mask.data[i] > 0.99);
        }
    }
}
