//! Trajectory and image metrics, frame-rate accounting and the metrics report.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3;

use crate::dataset::associate;
use crate::error::{Error, Result};
use crate::geometry::{SE3Pose, Vec3};
use crate::imgbuf::RgbImage;
use crate::trajectory::Trajectory;

/// Reported PSNR for identical images.
pub const PSNR_CAP: f64 = 99.0;

fn matched_translations(est: &Trajectory, gt: &Trajectory, max_time_diff: f64) -> Vec<(Vec3, Vec3)> {
    associate(&est.timestamps(), &gt.timestamps(), max_time_diff)
        .into_iter()
        .map(|(i, j)| (est.poses[i].1.translation, gt.poses[j].1.translation))
        .collect()
}

/// Rigid transform `G` minimizing `Σ‖G·t_est − t_gt‖²` over associated poses.
pub fn align_rigid(est: &Trajectory, gt: &Trajectory, max_time_diff: f64) -> Result<SE3Pose> {
    let pairs = matched_translations(est, gt, max_time_diff);
    align_points(&pairs)
}

fn align_points(pairs: &[(Vec3, Vec3)]) -> Result<SE3Pose> {
    if pairs.len() < 3 {
        return Err(Error::InsufficientPairs(pairs.len()));
    }
    let n = pairs.len() as f64;
    let me = pairs.iter().map(|p| p.0).sum::<Vec3>() / n;
    let mg = pairs.iter().map(|p| p.1).sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for (e, g) in pairs {
        cov += (g - mg) * (e - me).transpose();
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let mut s = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * vt;
    Ok(SE3Pose::new(r, mg - r * me).renormalized())
}

/// Translation RMSE after rigid alignment, in centimeters.
pub fn ate_rmse(est: &Trajectory, gt: &Trajectory, max_time_diff: f64) -> Result<f64> {
    let pairs = matched_translations(est, gt, max_time_diff);
    let g = align_points(&pairs)?;
    Ok(rmse_cm(&pairs, &g))
}

/// Translation RMSE in centimeters under a given alignment `g`.
pub fn translation_rmse(est: &Trajectory, gt: &Trajectory, max_time_diff: f64, g: &SE3Pose) -> Result<f64> {
    let pairs = matched_translations(est, gt, max_time_diff);
    if pairs.is_empty() {
        return Err(Error::InsufficientPairs(0));
    }
    Ok(rmse_cm(&pairs, g))
}

fn rmse_cm(pairs: &[(Vec3, Vec3)], g: &SE3Pose) -> f64 {
    let sq: f64 = pairs
        .iter()
        .map(|(e, t)| (g.transform_point(e) - t).norm_squared())
        .sum();
    (sq / pairs.len() as f64).sqrt() * 100.0
}

pub fn mse(a: &RgbImage, b: &RgbImage) -> f64 {
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (0..3).map(|c| (x[c] - y[c]).powi(2)).sum::<f64>())
        .sum();
    sum / (3 * a.data.len()) as f64
}

/// Peak signal-to-noise ratio with peak 1, capped at [`PSNR_CAP`].
pub fn psnr(a: &RgbImage, b: &RgbImage) -> f64 {
    let m = mse(a, b);
    if m == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
    }
}

pub const STAGES: [&str; 5] = ["tracking", "bridge", "mapping", "global_ba", "other"];

/// Wall-clock seconds spent per stage for one frame. Global BA time is
/// charged to the last frame.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FrameTiming {
    pub stages: [f64; 5],
    pub wall: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FpsReport {
    pub fps: f64,
    pub frames: usize,
    pub total_seconds: f64,
    pub stage_seconds: [f64; 5],
}

impl FpsReport {
    /// Share of wall time not attributed to any stage.
    pub fn unaccounted_fraction(&self) -> f64 {
        let staged: f64 = self.stage_seconds.iter().sum();
        ((self.total_seconds - staged) / self.total_seconds).abs()
    }
}

pub fn measure_fps(timings: &[FrameTiming]) -> Result<FpsReport> {
    if timings.is_empty() {
        return Err(Error::NoFrames);
    }
    let total: f64 = timings.iter().map(|t| t.wall).sum();
    let mut stage = [0.0; 5];
    for t in timings {
        for (s, v) in stage.iter_mut().zip(&t.stages) {
            *s += v;
        }
    }
    Ok(FpsReport {
        fps: timings.len() as f64 / total,
        frames: timings.len(),
        total_seconds: total,
        stage_seconds: stage,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FrameMetrics {
    pub index: usize,
    pub timestamp: f64,
    pub keyframe: bool,
    pub reconstruction: bool,
    pub psnr: f64,
    pub ssim: f64,
    pub tracked: usize,
    pub bridge_loss: Option<f64>,
    pub map_loss: Option<f64>,
    pub gaussians: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsReport {
    /// Absent when no ground-truth trajectory is available.
    pub ate_rmse_cm: Option<f64>,
    /// Mean of per-frame values over all frames.
    pub psnr: f64,
    pub ssim: f64,
    /// Mean over frames that were never mapped.
    pub psnr_heldout: Option<f64>,
    pub ssim_heldout: Option<f64>,
    pub fps: f64,
    pub frames: usize,
    pub keyframes: usize,
    pub reconstruction_frames: usize,
    pub gaussians: usize,
    pub trajectory_length_m: Option<f64>,
    pub stage_seconds: [f64; 5],
    pub per_frame: Vec<FrameMetrics>,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "absent".into(), |x| x.to_string())
}

impl MetricsReport {
    /// `key = value` lines. Timing keys come last, after `# timing`.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "ate_rmse_cm = {}", opt(self.ate_rmse_cm));
        let _ = writeln!(s, "psnr_db = {}", self.psnr);
        let _ = writeln!(s, "ssim = {}", self.ssim);
        let _ = writeln!(s, "psnr_heldout_db = {}", opt(self.psnr_heldout));
        let _ = writeln!(s, "ssim_heldout = {}", opt(self.ssim_heldout));
        let _ = writeln!(s, "psnr_averaging = per-frame-mean");
        let _ = writeln!(s, "frames = {}", self.frames);
        let _ = writeln!(s, "keyframes = {}", self.keyframes);
        let _ = writeln!(s, "reconstruction_frames = {}", self.reconstruction_frames);
        let _ = writeln!(s, "gaussians = {}", self.gaussians);
        let _ = writeln!(s, "trajectory_length_m = {}", opt(self.trajectory_length_m));
        s.push_str(&self.timing_kv());
        s
    }

    pub fn timing_kv(&self) -> String {
        let mut s = String::from("# timing\n");
        let _ = writeln!(s, "fps = {}", self.fps);
        for (name, v) in STAGES.iter().zip(&self.stage_seconds) {
            let _ = writeln!(s, "seconds_{name} = {v}");
        }
        s
    }

    /// The report without wall-clock dependent lines.
    pub fn deterministic_kv(&self) -> String {
        let full = self.to_kv_string();
        let cut = full.find("# timing").unwrap_or(full.len());
        full[..cut].to_string()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_kv_string())?;
        Ok(())
    }

    pub fn save_frames_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "index",
            "timestamp",
            "keyframe",
            "reconstruction",
            "psnr_db",
            "ssim",
            "tracked",
            "bridge_loss",
            "map_loss",
            "gaussians",
            "seconds",
        ])?;
        let o = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for f in &self.per_frame {
            w.write_record([
                f.index.to_string(),
                format!("{:.6}", f.timestamp),
                (f.keyframe as u8).to_string(),
                (f.reconstruction as u8).to_string(),
                f.psnr.to_string(),
                f.ssim.to_string(),
                f.tracked.to_string(),
                o(f.bridge_loss),
                o(f.map_loss),
                f.gaussians.to_string(),
                f.seconds.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads `key = value` lines into pairs, skipping comments.
pub fn parse_kv(text: &str) -> Vec<(String, String)> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{se3_exp, Twist};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gt_traj(n: usize) -> Trajectory {
        Trajectory::new(
            (0..n)
                .map(|i| {
                    let f = i as f64;
                    (f * 0.1, se3_exp(&Twist::new(0.1 * f, 0.05 * f.sin(), 0.0, f.cos(), 0.3 * f, 0.2 * (0.5 * f).sin())))
                })
                .collect(),
        )
        .unwrap()
    }

    fn moved(t: &Trajectory, g: &SE3Pose) -> Trajectory {
        Trajectory::new(t.poses.iter().map(|(ts, p)| (*ts, g.compose(p))).collect()).unwrap()
    }

    #[test]
    fn identical_trajectories_align_to_identity() {
        let t = gt_traj(10);
        let g = align_rigid(&t, &t, 0.01).unwrap();
        assert!(g.twist_distance(&SE3Pose::identity()) < 1e-12);
        assert!(ate_rmse(&t, &t, 0.01).unwrap() < 1e-12);
    }

    #[test]
    fn recovers_injected_transform() {
        let t = gt_traj(12);
        let g0 = se3_exp(&Twist::new(0.7, -1.2, 0.4, 3.0, -2.0, 0.5));
        let est = moved(&t, &g0);
        let g = align_rigid(&est, &t, 0.01).unwrap();
        assert!(g.twist_distance(&g0.inverse()) < 1e-9);
        assert!(ate_rmse(&est, &t, 0.01).unwrap() < 1e-9);
    }

    #[test]
    fn two_pairs_rejected() {
        let t = gt_traj(2);
        assert!(matches!(align_rigid(&t, &t, 0.01), Err(Error::InsufficientPairs(2))));
    }

    #[test]
    fn ring_with_one_offset_pose() {
        let ring: Vec<Vec3> = vec![
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(-1.0, 0.0, 0.0),
            Vec3::new(0.0, -1.0, 0.0),
        ];
        let gt = Trajectory::new(
            ring.iter()
                .enumerate()
                .map(|(i, p)| (i as f64, SE3Pose::new(Matrix3::identity(), *p)))
                .collect(),
        )
        .unwrap();
        let mut est = gt.clone();
        est.poses[0].1.translation.z += 0.04;
        let rmse = translation_rmse(&est, &gt, 0.01, &SE3Pose::identity()).unwrap();
        assert!((rmse - 2.0).abs() < 1e-12);
        // With alignment the error can only shrink.
        assert!(ate_rmse(&est, &gt, 0.01).unwrap() <= rmse + 1e-12);
    }

    #[test]
    fn psnr_examples() {
        let a = RgbImage::filled(8, 8, [0.3, 0.2, 0.9]);
        assert_eq!(psnr(&a, &a), PSNR_CAP);
        let z = RgbImage::filled(8, 8, [0.0; 3]);
        let h = RgbImage::filled(8, 8, [0.5; 3]);
        assert!((psnr(&z, &h) - 6.020599913279624).abs() < 1e-12);
    }

    #[test]
    fn psnr_matches_brute_force_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = RgbImage::new(13, 7);
        let mut b = RgbImage::new(13, 7);
        for (x, y) in a.data.iter_mut().zip(b.data.iter_mut()) {
            *x = [rng.random(), rng.random(), rng.random()];
            *y = [rng.random(), rng.random(), rng.random()];
        }
        let mut sum = 0.0;
        for y in 0..7 {
            for x in 0..13 {
                for c in 0..3 {
                    sum += (a.get(x, y)[c] - b.get(x, y)[c]).powi(2);
                }
            }
        }
        let expected = -10.0 * (sum / (13.0 * 7.0 * 3.0)).log10();
        assert!((psnr(&a, &b) - expected).abs() < 1e-12);
        assert_eq!(psnr(&a, &b), psnr(&b, &a));
    }

    #[test]
    fn psnr_falls_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = RgbImage::filled(64, 64, [0.5; 3]);
        let noisy = |sigma: f64, rng: &mut ChaCha8Rng| {
            let n = Normal::new(0.0, sigma).unwrap();
            let mut img = base.clone();
            for p in img.data.iter_mut() {
                for c in p.iter_mut() {
                    *c += n.sample(rng);
                }
            }
            img
        };
        let v: Vec<f64> = [0.01, 0.02, 0.05].iter().map(|&s| psnr(&base, &noisy(s, &mut rng))).collect();
        assert!(v[0] > v[1] && v[1] > v[2]);
    }

    #[test]
    fn fps_accounting() {
        let t = vec![
            FrameTiming {
                stages: [0.1, 0.05, 0.0, 0.0, 0.05],
                wall: 0.2,
            };
            100
        ];
        let r = measure_fps(&t).unwrap();
        assert!((r.fps - 5.0).abs() < 1e-9);
        assert!(r.unaccounted_fraction() < 0.05);
        assert!(matches!(measure_fps(&[]), Err(Error::NoFrames)));
    }

    #[test]
    fn report_kv_round_trip() {
        let r = MetricsReport {
            ate_rmse_cm: Some(0.25),
            psnr: 31.5,
            ssim: 0.97,
            fps: 7.0,
            frames: 50,
            ..Default::default()
        };
        let kv = parse_kv(&r.to_kv_string());
        let get = |k: &str| kv.iter().find(|(a, _)| a == k).map(|(_, v)| v.clone()).unwrap();
        assert_eq!(get("ate_rmse_cm"), "0.25");
        assert_eq!(get("psnr_heldout_db"), "absent");
        assert_eq!(get("fps"), "7");
        assert!(!r.deterministic_kv().contains("fps"));
    }

    proptest! {
        #[test]
        fn ate_invariant_under_rigid_motion(w in prop::array::uniform3(-3.0f64..3.0), v in prop::array::uniform3(-5.0f64..5.0)) {
            let t = gt_traj(15);
            let mut est = t.clone();
            for (i, p) in est.poses.iter_mut().enumerate() {
                p.1.translation.x += 0.01 * (i as f64).sin();
            }
            let g = se3_exp(&Twist::new(w[0], w[1], w[2], v[0], v[1], v[2]));
            let a = ate_rmse(&est, &t, 0.01).unwrap();
            let b = ate_rmse(&moved(&est, &g), &t, 0.01).unwrap();
            prop_assert!((a - b).abs() < 1e-9);
        }
    }
}
