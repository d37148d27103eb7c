//! Single-pose Levenberg–Marquardt on Huber-robustified reprojection error,
//! with left-multiplicative twist updates.

use nalgebra::{Matrix6, Vector6};

use super::MIN_POSE_MATCHES;
use crate::error::{Error, Result};
use crate::geometry::{camera_point_twist_jacobian, CameraIntrinsics, PixelCoord, SE3Pose, Vec3, MIN_PROJECTION_DEPTH};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmConfig {
    /// Huber threshold in pixels; `f64::INFINITY` gives plain least squares.
    pub huber_delta: f64,
    pub max_iters: usize,
    pub initial_lambda: f64,
    /// Stop once an accepted step lowers the cost by less than this fraction.
    pub min_relative_decrease: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            huber_delta: 2.0,
            max_iters: 50,
            initial_lambda: 1e-3,
            min_relative_decrease: 1e-8,
        }
    }
}

const MAX_LAMBDA: f64 = 1e12;
const MAX_REJECTIONS: usize = 12;

/// `ρ(e)` for a residual of norm `e`.
pub fn huber_cost(e: f64, delta: f64) -> f64 {
    if e <= delta {
        0.5 * e * e
    } else {
        delta * (e - 0.5 * delta)
    }
}

/// IRLS weight `ρ'(e)/e`.
pub fn huber_weight(e: f64, delta: f64) -> f64 {
    if e <= delta {
        1.0
    } else {
        delta / e
    }
}

/// Predicted minus observed pixel, or `None` when the point is behind the camera.
pub fn reprojection_residual(k: &CameraIntrinsics, pose: &SE3Pose, p: &Vec3, obs: &PixelCoord) -> Option<[f64; 2]> {
    let pc = pose.inverse_transform_point(p);
    let px = k.project_camera(&pc)?;
    Some([px.u - obs.u, px.v - obs.v])
}

/// `∂r/∂ξ` (left twist of the pose) and `∂r/∂P` (world point).
pub fn reprojection_jacobians(k: &CameraIntrinsics, pose: &SE3Pose, p: &Vec3) -> ([[f64; 6]; 2], [[f64; 3]; 2]) {
    let pc = pose.inverse_transform_point(p);
    let jp = k.projection_jacobian(&pc);
    let jx = camera_point_twist_jacobian(pose, p);
    let rt = pose.rotation.transpose();
    let mut j_pose = [[0.0; 6]; 2];
    let mut j_point = [[0.0; 3]; 2];
    for r in 0..2 {
        for c in 0..6 {
            j_pose[r][c] = (0..3).map(|i| jp[r][i] * jx[i][c]).sum();
        }
        for c in 0..3 {
            j_point[r][c] = (0..3).map(|i| jp[r][i] * rt[(i, c)]).sum();
        }
    }
    (j_pose, j_point)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrackResult {
    pub pose: SE3Pose,
    /// Residual norm below `2·huber_delta` at the returned pose.
    pub inliers: Vec<bool>,
    pub initial_cost: f64,
    pub cost: f64,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepOutcome {
    Accepted { relative_decrease: f64 },
    Converged,
}

/// Iteration state of the pose solver. One [`PoseLm::step`] is one accepted
/// update (after as many damping increases as it takes) or a convergence report.
#[derive(Clone, Debug)]
pub struct PoseLm<'a> {
    k: CameraIntrinsics,
    matches: &'a [(Vec3, PixelCoord)],
    /// Matches in front of the camera at the initial pose; the rest are ignored.
    active: Vec<bool>,
    delta: f64,
    min_relative_decrease: f64,
    pub pose: SE3Pose,
    pub lambda: f64,
    pub cost: f64,
}

impl<'a> PoseLm<'a> {
    pub fn new(
        k: &CameraIntrinsics,
        matches: &'a [(Vec3, PixelCoord)],
        initial: SE3Pose,
        cfg: &LmConfig,
    ) -> Result<Self> {
        let active: Vec<bool> = matches
            .iter()
            .map(|(p, _)| initial.inverse_transform_point(p).z > MIN_PROJECTION_DEPTH)
            .collect();
        let got = active.iter().filter(|&&a| a).count();
        if got < MIN_POSE_MATCHES {
            return Err(Error::InsufficientMatches {
                need: MIN_POSE_MATCHES,
                got,
            });
        }
        let mut lm = Self {
            k: *k,
            matches,
            active,
            delta: cfg.huber_delta,
            min_relative_decrease: cfg.min_relative_decrease,
            pose: initial,
            lambda: cfg.initial_lambda,
            cost: 0.0,
        };
        lm.cost = lm.cost_at(&initial);
        if !lm.cost.is_finite() {
            return Err(Error::Diverged);
        }
        Ok(lm)
    }

    /// Moves the iterate (e.g. after an external update) and recomputes its cost.
    pub fn set_pose(&mut self, pose: SE3Pose) {
        self.pose = pose;
        self.cost = self.cost_at(&pose);
    }

    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// `sqrt(2·mean ρ)`: the robust RMS residual in pixels (plain RMS when
    /// the Huber threshold is infinite). Monotone in the solver cost.
    pub fn rms_residual(&self, pose: &SE3Pose) -> f64 {
        (2.0 * self.cost_at(pose) / self.active_count() as f64).sqrt()
    }

    pub fn cost_at(&self, pose: &SE3Pose) -> f64 {
        let mut cost = 0.0;
        for ((p, u), _) in self.matches.iter().zip(&self.active).filter(|(_, &a)| a) {
            match reprojection_residual(&self.k, pose, p, u) {
                Some(r) => cost += huber_cost(r[0].hypot(r[1]), self.delta),
                None => return f64::INFINITY,
            }
        }
        cost
    }

    fn normal_equations(&self) -> (Matrix6<f64>, Vector6<f64>) {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for ((p, u), _) in self.matches.iter().zip(&self.active).filter(|(_, &a)| a) {
            let Some(r) = reprojection_residual(&self.k, &self.pose, p, u) else {
                continue;
            };
            let w = huber_weight(r[0].hypot(r[1]), self.delta);
            let (j, _) = reprojection_jacobians(&self.k, &self.pose, p);
            for row in 0..2 {
                let jr = Vector6::from_row_slice(&j[row]);
                h += w * jr * jr.transpose();
                g += w * r[row] * jr;
            }
        }
        (h, g)
    }

    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.cost == 0.0 {
            return Ok(StepOutcome::Converged);
        }
        let (h, g) = self.normal_equations();
        if g.norm() == 0.0 {
            return Ok(StepOutcome::Converged);
        }
        for _ in 0..MAX_REJECTIONS {
            let mut damped = h;
            for i in 0..6 {
                damped[(i, i)] += self.lambda * h[(i, i)].max(1e-12);
            }
            if let Some(chol) = damped.cholesky() {
                let dx = -chol.solve(&g);
                let candidate = self.pose.retract(&dx);
                let c = self.cost_at(&candidate);
                if c.is_nan() {
                    return Err(Error::Diverged);
                }
                if c < self.cost {
                    let rel = (self.cost - c) / self.cost;
                    self.pose = candidate;
                    self.cost = c;
                    self.lambda = (self.lambda / 10.0).max(1e-15);
                    return Ok(StepOutcome::Accepted {
                        relative_decrease: rel,
                    });
                }
            }
            self.lambda *= 10.0;
            if self.lambda > MAX_LAMBDA {
                break;
            }
        }
        Ok(StepOutcome::Converged)
    }

    /// Steps until convergence or `max_iters`; returns the iteration count.
    pub fn run(&mut self, max_iters: usize) -> Result<usize> {
        for it in 0..max_iters {
            match self.step()? {
                StepOutcome::Converged => return Ok(it),
                StepOutcome::Accepted { relative_decrease } if relative_decrease < self.min_relative_decrease => {
                    return Ok(it + 1)
                }
                StepOutcome::Accepted { .. } => {}
            }
        }
        Ok(max_iters)
    }

    pub fn inliers(&self) -> Vec<bool> {
        self.matches
            .iter()
            .zip(&self.active)
            .map(|((p, u), &a)| {
                a && reprojection_residual(&self.k, &self.pose, p, u)
                    .is_some_and(|r| r[0].hypot(r[1]) < 2.0 * self.delta)
            })
            .collect()
    }

    /// Mean residual norm over active matches.
    pub fn mean_residual(&self, pose: &SE3Pose) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for ((p, u), _) in self.matches.iter().zip(&self.active).filter(|(_, &a)| a) {
            match reprojection_residual(&self.k, pose, p, u) {
                Some(r) => sum += r[0].hypot(r[1]),
                None => return f64::INFINITY,
            }
            n += 1;
        }
        sum / n as f64
    }
}

/// Refines `initial` so the landmarks of `matches` reproject onto their pixels.
pub fn track_pose(
    matches: &[(Vec3, PixelCoord)],
    k: &CameraIntrinsics,
    initial: &SE3Pose,
    cfg: &LmConfig,
) -> Result<TrackResult> {
    if matches.len() < MIN_POSE_MATCHES {
        return Err(Error::InsufficientMatches {
            need: MIN_POSE_MATCHES,
            got: matches.len(),
        });
    }
    let mut lm = PoseLm::new(k, matches, *initial, cfg)?;
    let initial_cost = lm.cost;
    let iterations = lm.run(cfg.max_iters)?;
    Ok(TrackResult {
        pose: lm.pose,
        inliers: lm.inliers(),
        initial_cost,
        cost: lm.cost,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_point, se3_exp, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn random_twist(rng: &mut ChaCha8Rng, norm: f64) -> Twist {
        let t = Twist::from_fn(|_, _| rng.random_range(-1.0..1.0));
        t * (norm / t.norm())
    }

    fn scene(rng: &mut ChaCha8Rng, pose: &SE3Pose, n: usize) -> Vec<(Vec3, PixelCoord)> {
        (0..n)
            .map(|_| {
                let pc = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.8..0.8), rng.random_range(2.0..4.0));
                let p = pose.transform_point(&pc);
                let (px, _) = project_point(&k(), pose, &p).unwrap();
                (p, px)
            })
            .collect()
    }

    fn true_pose() -> SE3Pose {
        se3_exp(&Twist::new(0.1, -0.2, 0.05, 0.3, -0.1, 0.5))
    }

    #[test]
    fn zero_residual_at_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = scene(&mut rng, &true_pose(), 30);
        let r = track_pose(&m, &k(), &true_pose(), &LmConfig::default()).unwrap();
        assert_eq!(r.cost, 0.0);
        assert_eq!(r.pose, true_pose());
        assert!(r.inliers.iter().all(|&i| i));
    }

    #[test]
    fn recovers_from_perturbation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = true_pose();
        let m = scene(&mut rng, &truth, 40);
        let init = truth.retract(&random_twist(&mut rng, 0.05));
        let cfg = LmConfig {
            huber_delta: f64::INFINITY,
            ..Default::default()
        };
        let r = track_pose(&m, &k(), &init, &cfg).unwrap();
        assert!(r.pose.twist_distance(&truth) < 1e-6);
        assert!(r.cost <= r.initial_cost);
    }

    #[test]
    fn five_matches_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = scene(&mut rng, &true_pose(), 5);
        let e = track_pose(&m, &k(), &true_pose(), &LmConfig::default()).unwrap_err();
        assert!(matches!(e, Error::InsufficientMatches { need: 6, got: 5 }));
    }

    #[test]
    fn outlier_is_flagged_and_pose_survives() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = true_pose();
        let mut m = scene(&mut rng, &truth, 40);
        m[7].1.u += 60.0;
        let init = truth.retract(&random_twist(&mut rng, 0.01));
        let r = track_pose(&m, &k(), &init, &LmConfig::default()).unwrap();
        assert!(!r.inliers[7]);
        assert_eq!(r.inliers.iter().filter(|&&i| i).count(), 39);
        // The bounded pull of one outlier leaves a small bias along the
        // weakly observed rotation/translation coupling.
        assert!(r.pose.twist_distance(&truth) < 2e-2);
        let clean: Vec<_> = m.iter().enumerate().filter(|(i, _)| *i != 7).map(|(_, x)| *x).collect();
        let lm = PoseLm::new(&k(), &clean, r.pose, &LmConfig::default()).unwrap();
        assert!(lm.mean_residual(&r.pose) < 0.2);
    }

    #[test]
    fn jacobians_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-6;
        for _ in 0..100 {
            let norm = rng.random_range(0.1..1.5);
            let pose = se3_exp(&random_twist(&mut rng, norm));
            let pc = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(1.0..5.0));
            let p = pose.transform_point(&pc);
            let obs = PixelCoord::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let (jx, jp) = reprojection_jacobians(&k(), &pose, &p);
            let res = |pose: &SE3Pose, p: &Vec3| reprojection_residual(&k(), pose, p, &obs).unwrap();
            for c in 0..6 {
                let mut e = Twist::zeros();
                e[c] = h;
                let rp = res(&se3_exp(&e).compose(&pose), &p);
                let rm = res(&se3_exp(&-e).compose(&pose), &p);
                for r in 0..2 {
                    let fd = (rp[r] - rm[r]) / (2.0 * h);
                    let rel = (fd - jx[r][c]).abs() / fd.abs().max(jx[r][c].abs()).max(1.0);
                    assert!(rel < 1e-5, "pose {r},{c}: {fd} vs {}", jx[r][c]);
                }
            }
            for c in 0..3 {
                let mut e = Vec3::zeros();
                e[c] = h;
                let rp = res(&pose, &(p + e));
                let rm = res(&pose, &(p - e));
                for r in 0..2 {
                    let fd = (rp[r] - rm[r]) / (2.0 * h);
                    let rel = (fd - jp[r][c]).abs() / fd.abs().max(jp[r][c].abs()).max(1.0);
                    assert!(rel < 1e-5, "point {r},{c}: {fd} vs {}", jp[r][c]);
                }
            }
        }
    }

    #[test]
    fn result_is_equivariant_under_world_transform() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let truth = true_pose();
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut m = scene(&mut rng, &truth, 50);
        for (_, u) in m.iter_mut() {
            u.u += noise.sample(&mut rng);
            u.v += noise.sample(&mut rng);
        }
        let init = truth.retract(&random_twist(&mut rng, 0.03));
        let g = se3_exp(&Twist::new(0.4, -0.3, 0.2, 1.0, 2.0, -0.5));
        let moved: Vec<_> = m.iter().map(|(p, u)| (g.transform_point(p), *u)).collect();
        let cfg = LmConfig::default();
        let a = track_pose(&m, &k(), &init, &cfg).unwrap();
        let b = track_pose(&moved, &k(), &g.compose(&init), &cfg).unwrap();
        let expected = g.compose(&a.pose);
        assert!(b.pose.twist_distance(&expected) < 1e-9, "{}", b.pose.twist_distance(&expected));
    }
}
