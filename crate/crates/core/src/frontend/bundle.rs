//! Joint pose/point refinement of reprojection error. Levenberg–Marquardt
//! with the point blocks eliminated by Schur complement; the reduced camera
//! system is small at desk scale and solved densely.

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3, Vector6};

use super::tracking::{huber_cost, huber_weight, reprojection_jacobians, reprojection_residual, LmConfig};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, PixelCoord, SE3Pose, Twist, Vec3, MIN_PROJECTION_DEPTH};

type Mat63 = SMatrix<f64, 6, 3>;
/// Per point: C, g_p and the W blocks of its observations.
type PointBlock = (Matrix3<f64>, Vector3<f64>, Vec<(usize, Mat63)>);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaObservation {
    pub pose: usize,
    pub point: usize,
    pub pixel: PixelCoord,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaProblem {
    pub poses: Vec<SE3Pose>,
    pub points: Vec<Vec3>,
    pub observations: Vec<BaObservation>,
    /// Poses held constant. `fix_first` adds pose 0.
    pub fixed: Vec<bool>,
    /// Points held constant.
    pub fixed_points: Vec<bool>,
}

impl BaProblem {
    pub fn new(poses: Vec<SE3Pose>, points: Vec<Vec3>, observations: Vec<BaObservation>) -> Self {
        let fixed = vec![false; poses.len()];
        let fixed_points = vec![false; points.len()];
        Self {
            poses,
            points,
            observations,
            fixed,
            fixed_points,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaResult {
    pub poses: Vec<SE3Pose>,
    pub points: Vec<Vec3>,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after each accepted step, starting with the initial cost.
    pub cost_trace: Vec<f64>,
    pub iterations: usize,
}

struct Solver<'a> {
    k: CameraIntrinsics,
    obs: &'a [BaObservation],
    active: Vec<bool>,
    by_point: Vec<Vec<usize>>,
    /// Column block of each pose in the reduced system, `None` when fixed.
    slot: Vec<Option<usize>>,
    free: usize,
    fixed_points: Vec<bool>,
    delta: f64,
}

impl Solver<'_> {
    fn cost(&self, poses: &[SE3Pose], points: &[Vec3]) -> f64 {
        let mut c = 0.0;
        for (o, _) in self.obs.iter().zip(&self.active).filter(|(_, &a)| a) {
            match reprojection_residual(&self.k, &poses[o.pose], &points[o.point], &o.pixel) {
                Some(r) => c += huber_cost(r[0].hypot(r[1]), self.delta),
                None => return f64::INFINITY,
            }
        }
        c
    }

    /// One damped solve; `None` when the reduced system is not positive definite.
    fn solve(&self, poses: &[SE3Pose], points: &[Vec3], lambda: f64) -> Option<(Vec<Twist>, Vec<Vec3>)> {
        let n = self.free * 6;
        let mut s = DMatrix::<f64>::zeros(n, n);
        let mut rhs = DVector::<f64>::zeros(n);
        let mut gx = vec![Vector6::zeros(); self.free];
        let mut dp = vec![Vec3::zeros(); points.len()];
        let mut point_sys: Vec<PointBlock> = Vec::with_capacity(points.len());
        for (j, list) in self.by_point.iter().enumerate() {
            let point_free = !self.fixed_points[j];
            let mut c = Matrix3::zeros();
            let mut gp = Vector3::zeros();
            let mut ws = Vec::new();
            for &oi in list {
                let o = &self.obs[oi];
                let pose = &poses[o.pose];
                let r = reprojection_residual(&self.k, pose, &points[j], &o.pixel)?;
                let w = huber_weight(r[0].hypot(r[1]), self.delta);
                let (jx, jp) = reprojection_jacobians(&self.k, pose, &points[j]);
                let jx = SMatrix::<f64, 2, 6>::from_fn(|a, b| jx[a][b]);
                let jp = SMatrix::<f64, 2, 3>::from_fn(|a, b| jp[a][b]);
                let rv = nalgebra::Vector2::new(r[0], r[1]);
                c += w * jp.transpose() * jp;
                gp += w * jp.transpose() * rv;
                if let Some(si) = self.slot[o.pose] {
                    let b = w * jx.transpose() * jx;
                    let mut blk = s.view_mut((si * 6, si * 6), (6, 6));
                    blk += b;
                    gx[si] += w * jx.transpose() * rv;
                    if point_free {
                        ws.push((si, w * jx.transpose() * jp));
                    }
                }
            }
            for d in 0..3 {
                c[(d, d)] *= 1.0 + lambda;
            }
            if !point_free {
                c = Matrix3::identity();
                gp = Vector3::zeros();
            }
            point_sys.push((c, gp, ws));
        }
        for si in 0..self.free {
            for d in 0..6 {
                let v = s[(si * 6 + d, si * 6 + d)];
                s[(si * 6 + d, si * 6 + d)] = v + lambda * v.max(1e-12);
            }
            rhs.rows_mut(si * 6, 6).copy_from(&(-gx[si]));
        }
        let mut c_inv = Vec::with_capacity(points.len());
        for (c, gp, ws) in &point_sys {
            let ci = c.try_inverse()?;
            for (a, wa) in ws {
                let wc = wa * ci;
                let mut r = rhs.rows_mut(a * 6, 6);
                r += wc * gp;
                for (b, wb) in ws {
                    let mut blk = s.view_mut((a * 6, b * 6), (6, 6));
                    blk -= wc * wb.transpose();
                }
            }
            c_inv.push(ci);
        }
        let dx = if n > 0 {
            s.cholesky()?.solve(&rhs)
        } else {
            DVector::zeros(0)
        };
        let mut steps = vec![Twist::zeros(); poses.len()];
        for (i, slot) in self.slot.iter().enumerate() {
            if let Some(si) = slot {
                steps[i] = Twist::from_iterator(dx.rows(si * 6, 6).iter().copied());
            }
        }
        for (j, (_, gp, ws)) in point_sys.iter().enumerate() {
            let mut b = -gp;
            for (a, wa) in ws {
                b -= wa.transpose() * Vector6::from_iterator(dx.rows(a * 6, 6).iter().copied());
            }
            dp[j] = c_inv[j] * b;
        }
        Some((steps, dp))
    }
}

/// Minimizes robust reprojection error over poses and points.
pub fn bundle_adjust(problem: &BaProblem, k: &CameraIntrinsics, fix_first: bool, cfg: &LmConfig) -> Result<BaResult> {
    let np = problem.poses.len();
    if np < 2 {
        return Err(Error::Precondition("bundle adjustment needs at least two keyframes".into()));
    }
    let mut fixed = problem.fixed.clone();
    fixed.resize(np, false);
    if fix_first {
        fixed[0] = true;
    }
    if !fixed.iter().any(|&f| f) {
        return Err(Error::GaugeUnfixed);
    }
    let mut by_point = vec![Vec::new(); problem.points.len()];
    let active: Vec<bool> = problem
        .observations
        .iter()
        .map(|o| {
            problem.poses[o.pose]
                .inverse_transform_point(&problem.points[o.point])
                .z
                > MIN_PROJECTION_DEPTH
        })
        .collect();
    for (i, o) in problem.observations.iter().enumerate() {
        if active[i] {
            by_point[o.point].push(i);
        }
    }
    let mut fixed_points = problem.fixed_points.clone();
    fixed_points.resize(problem.points.len(), false);
    if let Some(j) = by_point.iter().position(|l| l.len() < 2) {
        return Err(Error::Precondition(format!(
            "landmark {j} has {} usable observations; at least 2 are required",
            by_point[j].len()
        )));
    }
    let mut slot = vec![None; np];
    let mut free = 0;
    for (i, f) in fixed.iter().enumerate() {
        if !f {
            slot[i] = Some(free);
            free += 1;
        }
    }
    let solver = Solver {
        k: *k,
        obs: &problem.observations,
        active,
        by_point,
        slot,
        free,
        fixed_points,
        delta: cfg.huber_delta,
    };
    let mut poses = problem.poses.clone();
    let mut points = problem.points.clone();
    let mut cost = solver.cost(&poses, &points);
    if !cost.is_finite() {
        return Err(Error::Diverged);
    }
    let initial_cost = cost;
    let mut trace = vec![cost];
    let mut lambda = cfg.initial_lambda;
    let mut iterations = 0;
    'outer: while iterations < cfg.max_iters && cost > 0.0 {
        iterations += 1;
        loop {
            if let Some((dx, dp)) = solver.solve(&poses, &points, lambda) {
                let cand_poses: Vec<SE3Pose> = poses.iter().zip(&dx).map(|(p, d)| p.retract(d)).collect();
                let cand_points: Vec<Vec3> = points.iter().zip(&dp).map(|(p, d)| p + d).collect();
                let c = solver.cost(&cand_poses, &cand_points);
                if c.is_nan() {
                    return Err(Error::Diverged);
                }
                if c < cost {
                    let rel = (cost - c) / cost;
                    poses = cand_poses;
                    points = cand_points;
                    cost = c;
                    trace.push(c);
                    lambda = (lambda / 10.0).max(1e-15);
                    if rel < cfg.min_relative_decrease {
                        break 'outer;
                    }
                    break;
                }
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                break 'outer;
            }
        }
    }
    Ok(BaResult {
        poses,
        points,
        initial_cost,
        final_cost: cost,
        cost_trace: trace,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project_point, se3_exp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> CameraIntrinsics {
        CameraIntrinsics::new(400.0, 400.0, 160.0, 120.0, 320, 240).unwrap()
    }

    fn fixture(seed: u64) -> BaProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses: Vec<SE3Pose> = (0..5)
            .map(|i| {
                let f = i as f64;
                SE3Pose::look_at(Vec3::new(-0.4 + 0.2 * f, -0.1, -3.0 + 0.05 * f), Vec3::zeros(), Vec3::y())
            })
            .collect();
        let points: Vec<Vec3> = (0..60)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.7..0.7), rng.random_range(-0.5..0.5)))
            .collect();
        let mut obs = Vec::new();
        for (i, pose) in poses.iter().enumerate() {
            for (j, p) in points.iter().enumerate() {
                let (px, _) = project_point(&k(), pose, p).unwrap();
                if k().contains(&px) {
                    obs.push(BaObservation {
                        pose: i,
                        point: j,
                        pixel: px,
                    });
                }
            }
        }
        BaProblem::new(poses, points, obs)
    }

    fn l2() -> LmConfig {
        LmConfig {
            huber_delta: f64::INFINITY,
            max_iters: 100,
            ..Default::default()
        }
    }

    #[test]
    fn optimum_is_left_unchanged() {
        let p = fixture(1);
        let r = bundle_adjust(&p, &k(), true, &l2()).unwrap();
        assert!(r.final_cost < 1e-20);
        for (a, b) in r.poses.iter().zip(&p.poses) {
            assert!(a.twist_distance(b) < 1e-12);
        }
    }

    #[test]
    fn recovers_perturbed_poses() {
        let truth = fixture(2);
        let mut p = truth.clone();
        p.fixed_points = vec![true; p.points.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for pose in p.poses.iter_mut().skip(1) {
            let t = Twist::from_fn(|_, _| rng.random_range(-1.0..1.0));
            *pose = pose.retract(&(t * (0.02 / t.norm())));
        }
        let r = bundle_adjust(&p, &k(), true, &l2()).unwrap();
        let mse: f64 = r
            .poses
            .iter()
            .zip(&truth.poses)
            .map(|(a, b)| a.twist_distance(b).powi(2))
            .sum::<f64>()
            / r.poses.len() as f64;
        assert!(mse.sqrt() < 1e-5, "{}", mse.sqrt());
        assert!(r.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn single_observation_landmark_rejected() {
        let mut p = fixture(4);
        p.points.push(Vec3::new(0.0, 0.0, 0.0));
        let (px, _) = project_point(&k(), &p.poses[0], &Vec3::zeros()).unwrap();
        p.observations.push(BaObservation {
            pose: 0,
            point: p.points.len() - 1,
            pixel: px,
        });
        assert!(matches!(bundle_adjust(&p, &k(), true, &l2()), Err(Error::Precondition(_))));
    }

    #[test]
    fn gauge_must_be_fixed() {
        let p = fixture(5);
        assert!(matches!(bundle_adjust(&p, &k(), false, &l2()), Err(Error::GaugeUnfixed)));
        let mut q = p.clone();
        q.fixed[2] = true;
        assert!(bundle_adjust(&q, &k(), false, &l2()).is_ok());
    }

    #[test]
    fn recovers_points_and_poses_with_two_anchors() {
        let truth = fixture(8);
        let mut p = truth.clone();
        p.fixed[4] = true;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for pt in p.points.iter_mut() {
            *pt += Vec3::from_fn(|_, _| rng.random_range(-0.02..0.02));
        }
        for pose in p.poses.iter_mut().take(4).skip(1) {
            let t = Twist::from_fn(|_, _| rng.random_range(-1.0..1.0));
            *pose = pose.retract(&(t * (0.02 / t.norm())));
        }
        let r = bundle_adjust(&p, &k(), true, &l2()).unwrap();
        for (a, b) in r.points.iter().zip(&truth.points) {
            assert!((a - b).norm() < 1e-6);
        }
        for (a, b) in r.poses.iter().zip(&truth.poses) {
            assert!(a.twist_distance(b) < 1e-6);
        }
    }

    #[test]
    fn noisy_points_and_poses_reduce_cost_monotonically() {
        let truth = fixture(6);
        let mut p = truth.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for pt in p.points.iter_mut() {
            *pt += Vec3::from_fn(|_, _| rng.random_range(-0.01..0.01));
        }
        for pose in p.poses.iter_mut().skip(1) {
            *pose = se3_exp(&Twist::from_fn(|_, _| rng.random_range(-0.005..0.005))).compose(pose);
        }
        let r = bundle_adjust(&p, &k(), true, &LmConfig::default()).unwrap();
        assert!(r.final_cost < 1e-6 * r.initial_cost);
        assert!(r.cost_trace.windows(2).all(|w| w[1] <= w[0]));
    }
}
