//! Online map optimization at fixed camera poses: densify under-covered
//! pixels, descend the depth/color/SSIM loss, prune by opacity.

pub mod ssim;

pub use ssim::{ssim, ssim_value, SsimResult};

use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::geometry::SE3Pose;
use crate::imgbuf::{RgbImage, ScalarImage};
use crate::rasterizer::{backward_gaussians, render, GaussianGrad, RenderOptions, RenderOutput};
use crate::splat_map::{densify, prune_mask, GaussianMap};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapperConfig {
    pub zeta: f64,
    pub w4: f64,
    pub w5: f64,
    pub tau: f64,
    pub max_opacity: f64,
    pub map_iters: usize,
    /// Center step as a fraction of the frame's median depth.
    pub lr_center_per_depth: f64,
    pub lr_radius: f64,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub min_radius: f64,
    /// Decay of the running mean of squared gradients.
    pub rms_decay: f64,
}

impl Default for MapperConfig {
    fn default() -> Self {
        Self {
            zeta: 0.3,
            w4: 0.5,
            w5: 1.0,
            tau: 0.005,
            max_opacity: 0.99,
            map_iters: 60,
            lr_center_per_depth: 1e-4,
            lr_radius: 1e-3,
            lr_color: 2.5e-3,
            lr_opacity: 5e-2,
            min_radius: 1e-4,
            rms_decay: 0.9,
        }
    }
}

impl MapperConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.zeta)
            && self.w4 >= 0.0
            && self.w5 >= 0.0
            && self.tau > 0.0
            && self.tau < self.max_opacity
            && self.max_opacity <= 1.0
            && self.map_iters >= 1
            && self.lr_center_per_depth > 0.0
            && self.lr_radius > 0.0
            && self.lr_color > 0.0
            && self.lr_opacity > 0.0
            && self.min_radius > 0.0
            && (0.0..1.0).contains(&self.rms_decay);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid mapper configuration {self:?}")))
        }
    }
}

/// Loss value and per-Gaussian gradient of the mapping objective.
#[derive(Clone, Debug)]
pub struct MappingLoss {
    pub value: f64,
    pub depth_l1: f64,
    pub color_l1: f64,
    pub ssim: f64,
    pub pixels: usize,
    pub grads: Vec<GaussianGrad>,
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `(1−ζ)(w4·L1_d + w5·L1_c) + ζ(1 − SSIM)` of `out` against `frame`, with
/// L1 terms averaged over pixels with sensor depth and nonzero coverage.
pub fn mapping_loss(out: &RenderOutput, map: &GaussianMap, frame: &Frame, cfg: &MapperConfig) -> Result<MappingLoss> {
    let (w, h) = (out.width(), out.height());
    if frame.width() != w || frame.height() != h {
        return Err(Error::Precondition("frame size differs from render".into()));
    }
    let valid: Vec<usize> = (0..w * h)
        .filter(|&i| frame.depth.data[i] > 0.0 && out.border_mask.data[i] > 0.0)
        .collect();
    if valid.is_empty() {
        return Err(Error::EmptyOverlap);
    }
    let n = valid.len() as f64;
    let mut gc = RgbImage::new(w, h);
    let mut gd = ScalarImage::new(w, h);
    let gm = ScalarImage::new(w, h);
    let (mut ld, mut lc) = (0.0, 0.0);
    let l1 = 1.0 - cfg.zeta;
    for &i in &valid {
        let rd = out.depth.data[i] - frame.depth.data[i];
        ld += rd.abs();
        gd.data[i] = l1 * cfg.w4 * sign(rd) / n;
        let (c, f) = (out.color.data[i], frame.color.data[i]);
        for ch in 0..3 {
            let r = c[ch] - f[ch];
            lc += r.abs() / 3.0;
            gc.data[i][ch] = l1 * cfg.w5 * sign(r) / (3.0 * n);
        }
    }
    ld /= n;
    lc /= n;
    let mut s = 1.0;
    if cfg.zeta > 0.0 {
        let r = ssim(&out.color, &frame.color)?;
        s = r.mean;
        let g = r.gradient.expect("requested");
        for (dst, src) in gc.data.iter_mut().zip(&g.data) {
            for ch in 0..3 {
                dst[ch] -= cfg.zeta * src[ch];
            }
        }
    }
    let value = l1 * (cfg.w4 * ld + cfg.w5 * lc) + cfg.zeta * (1.0 - s);
    let grads = backward_gaussians(out, map, &gc, &gd, &gm)?;
    Ok(MappingLoss {
        value,
        depth_l1: ld,
        color_l1: lc,
        ssim: s,
        pixels: valid.len(),
        grads,
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MapSummary {
    pub added: usize,
    pub pruned: usize,
    pub final_loss: f64,
    pub loss_trace: Vec<f64>,
}

/// Mapping optimizer. Keeps per-parameter running RMS of gradients aligned
/// with the map's Gaussians.
#[derive(Clone, Debug)]
pub struct Mapper {
    pub cfg: MapperConfig,
    pub render: RenderOptions,
    /// `[μx, μy, μz, r, c0, c1, c2, o]` per Gaussian.
    moments: Vec<[f64; 8]>,
}

const RMS_EPS: f64 = 1e-8;

impl Mapper {
    pub fn new(cfg: MapperConfig, render: RenderOptions) -> Self {
        Self {
            cfg,
            render,
            moments: Vec::new(),
        }
    }

    fn sync(&mut self, map: &GaussianMap) {
        self.moments.resize(map.len(), [0.0; 8]);
    }

    /// One descent step at a fixed pose; returns the loss before the step.
    pub fn mapping_step(&mut self, map: &mut GaussianMap, frame: &Frame, pose: &SE3Pose) -> Result<f64> {
        self.sync(map);
        let out = render(map, &frame.intrinsics, pose, &self.render);
        let loss = mapping_loss(&out, map, frame, &self.cfg)?;
        let depth_scale = frame.median_depth().unwrap_or(1.0);
        let c = &self.cfg;
        let lr = [
            c.lr_center_per_depth * depth_scale,
            c.lr_center_per_depth * depth_scale,
            c.lr_center_per_depth * depth_scale,
            c.lr_radius,
            c.lr_color,
            c.lr_color,
            c.lr_color,
            c.lr_opacity,
        ];
        for ((g, gr), m) in map.gaussians_mut().iter_mut().zip(&loss.grads).zip(self.moments.iter_mut()) {
            let flat = [
                gr.center.x,
                gr.center.y,
                gr.center.z,
                gr.radius,
                gr.color[0],
                gr.color[1],
                gr.color[2],
                gr.opacity,
            ];
            if flat.iter().all(|&v| v == 0.0) {
                continue;
            }
            let mut step = [0.0; 8];
            for k in 0..8 {
                m[k] = c.rms_decay * m[k] + (1.0 - c.rms_decay) * flat[k] * flat[k];
                step[k] = lr[k] * flat[k] / (m[k].sqrt() + RMS_EPS);
            }
            for k in 0..3 {
                g.center[k] -= step[k];
            }
            g.radius = (g.radius - step[3]).max(c.min_radius);
            for k in 0..3 {
                g.color[k] = (g.color[k] - step[4 + k]).clamp(0.0, 1.0);
            }
            g.opacity = (g.opacity - step[7]).clamp(0.0, c.max_opacity);
        }
        Ok(loss.value)
    }

    /// Densify, optimize for `map_iters` steps, prune.
    pub fn map_frame(
        &mut self,
        map: &mut GaussianMap,
        frame: &Frame,
        pose: &SE3Pose,
        densify_threshold: f64,
        init_opacity: f64,
    ) -> Result<MapSummary> {
        self.sync(map);
        let out = render(map, &frame.intrinsics, pose, &self.render);
        let added = densify(map, frame, pose, &out.border_mask, densify_threshold, init_opacity)?;
        self.sync(map);
        let mut trace = Vec::with_capacity(self.cfg.map_iters);
        for _ in 0..self.cfg.map_iters {
            trace.push(self.mapping_step(map, frame, pose)?);
        }
        let keep = prune_mask(map, self.cfg.tau, self.cfg.max_opacity);
        let mut kept = keep.iter();
        self.moments.retain(|_| *kept.next().unwrap());
        let pruned = map.retain_mask(&keep);
        Ok(MapSummary {
            added,
            pruned,
            final_loss: *trace.last().unwrap_or(&0.0),
            loss_trace: trace,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, FrameSource, SyntheticSpec};
    use crate::geometry::{CameraIntrinsics, Vec3};
    use crate::splat_map::Gaussian;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_k() -> CameraIntrinsics {
        CameraIntrinsics::new(16.0, 16.0, 7.5, 7.5, 16, 16).unwrap()
    }

    fn random_map(rng: &mut ChaCha8Rng, n: usize) -> GaussianMap {
        GaussianMap::from_gaussians(
            (0..n)
                .map(|_| Gaussian {
                    center: Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(1.5..2.5)),
                    radius: rng.random_range(0.1..0.3),
                    color: [rng.random(), rng.random(), rng.random()],
                    opacity: rng.random_range(0.3..0.9),
                })
                .collect(),
        )
    }

    fn frame_from(map: &GaussianMap, k: &CameraIntrinsics, pose: &SE3Pose, opts: &RenderOptions) -> Frame {
        let out = render(map, k, pose, opts);
        Frame::new(0.0, out.color, out.depth, *k).unwrap()
    }

    #[test]
    fn zero_loss_at_optimum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut map = random_map(&mut rng, 8);
        let opts = RenderOptions::default();
        let frame = frame_from(&map, &small_k(), &SE3Pose::identity(), &opts);
        let before = map.clone();
        let mut m = Mapper::new(
            MapperConfig {
                zeta: 0.0,
                ..Default::default()
            },
            opts,
        );
        let loss = m.mapping_step(&mut map, &frame, &SE3Pose::identity()).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(map, before);
        let mut m = Mapper::new(
            MapperConfig {
                zeta: 1.0,
                ..Default::default()
            },
            opts,
        );
        let loss = m.mapping_step(&mut map, &frame, &SE3Pose::identity()).unwrap();
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn single_gaussian_color_loss_decreases() {
        let k = small_k();
        let target = GaussianMap::from_gaussians(vec![Gaussian {
            center: Vec3::new(0.0, 0.0, 2.0),
            radius: 0.5,
            color: [0.8, 0.3, 0.1],
            opacity: 0.9,
        }]);
        let opts = RenderOptions::default();
        let frame = frame_from(&target, &k, &SE3Pose::identity(), &opts);
        let mut map = target.clone();
        map.gaussians_mut()[0].color = [0.5, 0.1, 0.0];
        let cfg = MapperConfig {
            zeta: 0.0,
            w4: 0.0,
            ..Default::default()
        };
        let mut m = Mapper::new(cfg, opts);
        let trace: Vec<f64> = (0..50)
            .map(|_| m.mapping_step(&mut map, &frame, &SE3Pose::identity()).unwrap())
            .collect();
        assert!(trace.windows(2).all(|w| w[1] <= w[0]), "{trace:?}");
        assert!(trace[49] < trace[0]);
    }

    #[test]
    fn full_loss_gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let k = small_k();
        let opts = RenderOptions::relaxed();
        let target = random_map(&mut rng, 5);
        let frame = frame_from(&target, &k, &SE3Pose::identity(), &opts);
        let mut map = target.clone();
        for g in map.gaussians_mut() {
            g.center += Vec3::new(0.03, -0.02, 0.05);
            g.radius *= 1.1;
            g.color = [rng.random(), rng.random(), rng.random()];
            g.opacity *= 0.8;
        }
        let cfg = MapperConfig::default();
        let pose = SE3Pose::identity();
        let loss_of = |m: &GaussianMap| {
            let out = render(m, &k, &pose, &opts);
            mapping_loss(&out, m, &frame, &cfg).unwrap().value
        };
        let out = render(&map, &k, &pose, &opts);
        let grads = mapping_loss(&out, &map, &frame, &cfg).unwrap().grads;
        let h = 1e-6;
        let check = |an: f64, fd: f64, what: &str| {
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-4);
            assert!(rel < 1e-3, "{what}: {an} vs {fd}");
        };
        for i in 0..map.len() {
            let perturb = |f: &dyn Fn(&mut Gaussian, f64)| {
                let mut p = map.clone();
                f(&mut p.gaussians_mut()[i], h);
                let mut m = map.clone();
                f(&mut m.gaussians_mut()[i], -h);
                (loss_of(&p) - loss_of(&m)) / (2.0 * h)
            };
            for c in 0..3 {
                check(grads[i].center[c], perturb(&|g, d| g.center[c] += d), "center");
                check(grads[i].color[c], perturb(&|g, d| g.color[c] += d), "color");
            }
            check(grads[i].radius, perturb(&|g, d| g.radius += d), "radius");
            check(grads[i].opacity, perturb(&|g, d| g.opacity += d), "opacity");
        }
    }

    #[test]
    fn first_frame_bootstrap() {
        let spec = SyntheticSpec {
            frame_count: 2,
            ..Default::default()
        };
        let seq = generate_synthetic(&spec).unwrap();
        let frame = seq.frame(0).unwrap();
        let pose = seq.ground_truth().unwrap().trajectory.poses[0].1;
        let valid = frame.depth.data.iter().filter(|&&d| d > 0.0).count();
        let mut map = GaussianMap::new();
        let mut m = Mapper::new(
            MapperConfig {
                map_iters: 5,
                ..Default::default()
            },
            spec.render,
        );
        let pose_before = pose;
        let s = m.map_frame(&mut map, &frame, &pose, 0.5, 0.5).unwrap();
        assert_eq!(pose, pose_before);
        assert_eq!(s.added, valid);
        assert!(s.final_loss.is_finite());
        assert_eq!(map.len(), valid - s.pruned);
        assert!(map.gaussians().iter().all(|g| g.opacity >= 0.005 && g.opacity <= 0.99));
    }

    #[test]
    fn invalid_depth_gives_empty_overlap() {
        let k = small_k();
        let frame = Frame::new(0.0, RgbImage::new(16, 16), ScalarImage::new(16, 16), k).unwrap();
        let mut map = GaussianMap::new();
        let mut m = Mapper::new(MapperConfig::default(), RenderOptions::default());
        let e = m.map_frame(&mut map, &frame, &SE3Pose::identity(), 0.5, 0.5).unwrap_err();
        assert!(matches!(e, Error::EmptyOverlap));
        assert!(map.is_empty());
    }
}
