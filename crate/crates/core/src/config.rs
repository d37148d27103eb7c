//! Run configuration: a flat `key = value` file with module-namespaced keys,
//! overridable one key at a time.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::bridge::BridgeConfig;
use crate::dataset::{NoiseParams, SyntheticSpec, TrajectoryKind};
use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, Vec3};
use crate::mapper::MapperConfig;
use crate::rasterizer::RenderOptions;

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic,
    Tum(PathBuf),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrontendConfig {
    /// Associate features through ground-truth landmark ids (synthetic only).
    pub oracle: bool,
    /// Pixel noise standard deviation added to oracle observations.
    pub oracle_pixel_sigma: f64,
    pub min_tracked_ratio: f64,
    pub min_frames_gap: usize,
    pub huber_delta: f64,
    pub track_iters: usize,
    pub ba_iters: usize,
    pub feature_count: usize,
    pub grid: (usize, usize),
    pub max_hamming: u32,
    pub match_ratio: f64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        Self {
            oracle: true,
            oracle_pixel_sigma: 0.0,
            min_tracked_ratio: 0.9,
            min_frames_gap: 1,
            huber_delta: 2.0,
            track_iters: 50,
            ba_iters: 30,
            feature_count: 500,
            grid: (4, 4),
            max_hamming: 64,
            match_ratio: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub synthetic: SyntheticSpec,
    pub noise: NoiseParams,
    pub tum_max_time_diff: f64,
    pub tum_downsample: usize,
    /// Intrinsics used when a TUM directory has no calibration file.
    pub tum_intrinsics: CameraIntrinsics,
    pub max_frames: Option<usize>,
    pub frontend: FrontendConfig,
    pub bridge: BridgeConfig,
    pub mapper: MapperConfig,
    pub densify_threshold: f64,
    pub init_opacity: f64,
    pub render: RenderOptions,
    pub seed: u64,
    pub output: Option<PathBuf>,
    /// Number of evenly spaced frames whose renders are saved.
    pub render_samples: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic,
            synthetic: default_synthetic(),
            noise: NoiseParams::default(),
            tum_max_time_diff: 0.02,
            tum_downsample: 4,
            tum_intrinsics: CameraIntrinsics {
                fx: 517.3,
                fy: 516.5,
                cx: 318.6,
                cy: 255.3,
                width: 640,
                height: 480,
            },
            max_frames: None,
            frontend: FrontendConfig::default(),
            bridge: BridgeConfig::default(),
            mapper: MapperConfig::default(),
            densify_threshold: 0.5,
            init_opacity: 0.5,
            render: RenderOptions::default(),
            seed: 0,
            output: None,
            render_samples: 4,
        }
    }
}

/// The synthetic sequence used by default: 50 frames of a 2 m lateral pass
/// over a 300-Gaussian slab wide enough that landmarks leave the view.
pub fn default_synthetic() -> SyntheticSpec {
    SyntheticSpec {
        gaussian_count: 300,
        extent: Vec3::new(2.5, 0.6, 0.5),
        trajectory: TrajectoryKind::Line,
        frame_count: 50,
        line_length: 2.0,
        ..SyntheticSpec::default()
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("cannot parse '{value}' as a boolean for key '{key}'"))),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str, n: usize) -> Result<Vec<T>> {
    let v: Vec<T> = value
        .split(',')
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if v.len() != n {
        return Err(Error::Config(format!("key '{key}' expects {n} comma-separated values")));
    }
    Ok(v)
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text, &path.display().to_string())?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str, name: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    file: name.into(),
                    line: i + 1,
                    msg: "expected key = value".into(),
                });
            };
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{kv}' is not key=value")))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let s = &mut self.synthetic;
        match key {
            "dataset" => {
                self.dataset = if v == "synthetic" {
                    DatasetSource::Synthetic
                } else {
                    DatasetSource::Tum(PathBuf::from(v))
                }
            }
            "seed" => self.seed = parse(key, v)?,
            "output" => self.output = Some(PathBuf::from(v)),
            "output.render_samples" => self.render_samples = parse(key, v)?,
            "max_frames" => self.max_frames = if v == "all" { None } else { Some(parse(key, v)?) },

            "synthetic.gaussians" => s.gaussian_count = parse(key, v)?,
            "synthetic.extent" => {
                let e: Vec<f64> = parse_list(key, v, 3)?;
                s.extent = Vec3::new(e[0], e[1], e[2]);
            }
            "synthetic.trajectory" => {
                s.trajectory = match v {
                    "orbit" => TrajectoryKind::Orbit,
                    "line" => TrajectoryKind::Line,
                    _ => return Err(Error::Config(format!("unknown trajectory '{v}'"))),
                }
            }
            "synthetic.frames" => s.frame_count = parse(key, v)?,
            "synthetic.width" => s.intrinsics.width = parse(key, v)?,
            "synthetic.height" => s.intrinsics.height = parse(key, v)?,
            "synthetic.fx" => s.intrinsics.fx = parse(key, v)?,
            "synthetic.fy" => s.intrinsics.fy = parse(key, v)?,
            "synthetic.cx" => s.intrinsics.cx = parse(key, v)?,
            "synthetic.cy" => s.intrinsics.cy = parse(key, v)?,
            "synthetic.orbit_radius" => s.orbit_radius = parse(key, v)?,
            "synthetic.orbit_height" => s.orbit_height = parse(key, v)?,
            "synthetic.arc_degrees" => s.arc_degrees = parse(key, v)?,
            "synthetic.line_length" => s.line_length = parse(key, v)?,
            "synthetic.frame_rate" => s.frame_rate = parse(key, v)?,
            "synthetic.radius_range" => {
                let r: Vec<f64> = parse_list(key, v, 2)?;
                s.radius_range = (r[0], r[1]);
            }
            "synthetic.opacity_range" => {
                let r: Vec<f64> = parse_list(key, v, 2)?;
                s.opacity_range = (r[0], r[1]);
            }
            "synthetic.depth_min_coverage" => s.depth_min_coverage = parse(key, v)?,

            "noise.depth_sigma" => self.noise.depth_sigma = parse(key, v)?,
            "noise.depth_dropout" => self.noise.depth_dropout = parse(key, v)?,
            "noise.color_sigma" => self.noise.color_sigma = parse(key, v)?,
            "noise.blur_kernel" => self.noise.blur_kernel = parse(key, v)?,

            "tum.max_time_diff" => self.tum_max_time_diff = parse(key, v)?,
            "tum.downsample" => self.tum_downsample = parse(key, v)?,
            "tum.intrinsics" => {
                let k: Vec<f64> = parse_list(key, v, 6)?;
                self.tum_intrinsics = CameraIntrinsics::new(k[0], k[1], k[2], k[3], k[4] as usize, k[5] as usize)?;
            }

            "frontend.oracle" => self.frontend.oracle = parse_bool(key, v)?,
            "frontend.oracle_pixel_sigma" => self.frontend.oracle_pixel_sigma = parse(key, v)?,
            "frontend.min_tracked_ratio" => self.frontend.min_tracked_ratio = parse(key, v)?,
            "frontend.min_frames_gap" => self.frontend.min_frames_gap = parse(key, v)?,
            "frontend.huber_delta" => self.frontend.huber_delta = parse(key, v)?,
            "frontend.track_iters" => self.frontend.track_iters = parse(key, v)?,
            "frontend.ba_iters" => self.frontend.ba_iters = parse(key, v)?,
            "frontend.feature_count" => self.frontend.feature_count = parse(key, v)?,
            "frontend.grid" => {
                let g: Vec<usize> = parse_list(key, v, 2)?;
                self.frontend.grid = (g[0], g[1]);
            }
            "frontend.max_hamming" => self.frontend.max_hamming = parse(key, v)?,
            "frontend.match_ratio" => self.frontend.match_ratio = parse(key, v)?,

            "bridge.alpha" => self.bridge.alpha = parse(key, v)?,
            "bridge.beta" => self.bridge.beta = parse(key, v)?,
            "bridge.gamma" => self.bridge.gamma = parse(key, v)?,
            "bridge.w1" => self.bridge.w1 = parse(key, v)?,
            "bridge.w2" => self.bridge.w2 = parse(key, v)?,
            "bridge.w3" => self.bridge.w3 = parse(key, v)?,
            "bridge.iterations" => self.bridge.iterations = parse(key, v)?,
            "bridge.huber_delta" => self.bridge.huber_delta = parse(key, v)?,
            "bridge.cloud_depth" => {
                self.bridge.dense_cloud_depth = match v {
                    "dense" => true,
                    "sparse" => false,
                    _ => return Err(Error::Config(format!("bridge.cloud_depth must be dense or sparse, got '{v}'"))),
                }
            }

            "mapper.zeta" => self.mapper.zeta = parse(key, v)?,
            "mapper.w4" => self.mapper.w4 = parse(key, v)?,
            "mapper.w5" => self.mapper.w5 = parse(key, v)?,
            "mapper.tau" => self.mapper.tau = parse(key, v)?,
            "mapper.max_opacity" => self.mapper.max_opacity = parse(key, v)?,
            "mapper.map_iters" => self.mapper.map_iters = parse(key, v)?,
            "mapper.lr_center_per_depth" => self.mapper.lr_center_per_depth = parse(key, v)?,
            "mapper.lr_radius" => self.mapper.lr_radius = parse(key, v)?,
            "mapper.lr_color" => self.mapper.lr_color = parse(key, v)?,
            "mapper.lr_opacity" => self.mapper.lr_opacity = parse(key, v)?,
            "mapper.min_radius" => self.mapper.min_radius = parse(key, v)?,
            "mapper.rms_decay" => self.mapper.rms_decay = parse(key, v)?,

            "splat.densify_threshold" => self.densify_threshold = parse(key, v)?,
            "splat.init_opacity" => self.init_opacity = parse(key, v)?,

            "render.near_clip" => self.render.near_clip = parse(key, v)?,
            "render.alpha_cutoff" => self.render.alpha_cutoff = parse(key, v)?,
            "render.transmittance_stop" => self.render.transmittance_stop = parse(key, v)?,
            "render.sigma_extent" => self.render.sigma_extent = parse(key, v)?,
            "render.min_radius_px" => self.render.min_radius_px = parse(key, v)?,
            "render.max_alpha" => self.render.max_alpha = parse(key, v)?,
            "render.background" => {
                let b: Vec<f64> = parse_list(key, v, 3)?;
                self.render.background = [b[0], b[1], b[2]];
            }
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Every key with its effective value, in a form [`RunConfig::apply_text`] reads back.
    pub fn to_kv_string(&self) -> String {
        let s = &self.synthetic;
        let f = &self.frontend;
        let b = &self.bridge;
        let m = &self.mapper;
        let r = &self.render;
        let k = &self.tum_intrinsics;
        let mut out = String::new();
        let mut put = |key: &str, value: String| {
            let _ = writeln!(out, "{key} = {value}");
        };
        put(
            "dataset",
            match &self.dataset {
                DatasetSource::Synthetic => "synthetic".into(),
                DatasetSource::Tum(p) => p.display().to_string(),
            },
        );
        put("seed", self.seed.to_string());
        put("output.render_samples", self.render_samples.to_string());
        put("max_frames", self.max_frames.map_or("all".into(), |n| n.to_string()));
        put("synthetic.gaussians", s.gaussian_count.to_string());
        put("synthetic.extent", join(&[s.extent.x, s.extent.y, s.extent.z]));
        put(
            "synthetic.trajectory",
            match s.trajectory {
                TrajectoryKind::Orbit => "orbit".into(),
                TrajectoryKind::Line => "line".into(),
            },
        );
        put("synthetic.frames", s.frame_count.to_string());
        put("synthetic.width", s.intrinsics.width.to_string());
        put("synthetic.height", s.intrinsics.height.to_string());
        put("synthetic.fx", s.intrinsics.fx.to_string());
        put("synthetic.fy", s.intrinsics.fy.to_string());
        put("synthetic.cx", s.intrinsics.cx.to_string());
        put("synthetic.cy", s.intrinsics.cy.to_string());
        put("synthetic.orbit_radius", s.orbit_radius.to_string());
        put("synthetic.orbit_height", s.orbit_height.to_string());
        put("synthetic.arc_degrees", s.arc_degrees.to_string());
        put("synthetic.line_length", s.line_length.to_string());
        put("synthetic.frame_rate", s.frame_rate.to_string());
        put("synthetic.radius_range", join(&[s.radius_range.0, s.radius_range.1]));
        put("synthetic.opacity_range", join(&[s.opacity_range.0, s.opacity_range.1]));
        put("synthetic.depth_min_coverage", s.depth_min_coverage.to_string());
        put("noise.depth_sigma", self.noise.depth_sigma.to_string());
        put("noise.depth_dropout", self.noise.depth_dropout.to_string());
        put("noise.color_sigma", self.noise.color_sigma.to_string());
        put("noise.blur_kernel", self.noise.blur_kernel.to_string());
        put("tum.max_time_diff", self.tum_max_time_diff.to_string());
        put("tum.downsample", self.tum_downsample.to_string());
        put("tum.intrinsics", format!("{},{},{},{},{},{}", k.fx, k.fy, k.cx, k.cy, k.width, k.height));
        put("frontend.oracle", f.oracle.to_string());
        put("frontend.oracle_pixel_sigma", f.oracle_pixel_sigma.to_string());
        put("frontend.min_tracked_ratio", f.min_tracked_ratio.to_string());
        put("frontend.min_frames_gap", f.min_frames_gap.to_string());
        put("frontend.huber_delta", f.huber_delta.to_string());
        put("frontend.track_iters", f.track_iters.to_string());
        put("frontend.ba_iters", f.ba_iters.to_string());
        put("frontend.feature_count", f.feature_count.to_string());
        put("frontend.grid", join(&[f.grid.0, f.grid.1]));
        put("frontend.max_hamming", f.max_hamming.to_string());
        put("frontend.match_ratio", f.match_ratio.to_string());
        put("bridge.alpha", b.alpha.to_string());
        put("bridge.beta", b.beta.to_string());
        put("bridge.gamma", b.gamma.to_string());
        put("bridge.w1", b.w1.to_string());
        put("bridge.w2", b.w2.to_string());
        put("bridge.w3", b.w3.to_string());
        put("bridge.iterations", b.iterations.to_string());
        put("bridge.huber_delta", b.huber_delta.to_string());
        put("bridge.cloud_depth", if b.dense_cloud_depth { "dense" } else { "sparse" }.into());
        put("mapper.zeta", m.zeta.to_string());
        put("mapper.w4", m.w4.to_string());
        put("mapper.w5", m.w5.to_string());
        put("mapper.tau", m.tau.to_string());
        put("mapper.max_opacity", m.max_opacity.to_string());
        put("mapper.map_iters", m.map_iters.to_string());
        put("mapper.lr_center_per_depth", m.lr_center_per_depth.to_string());
        put("mapper.lr_radius", m.lr_radius.to_string());
        put("mapper.lr_color", m.lr_color.to_string());
        put("mapper.lr_opacity", m.lr_opacity.to_string());
        put("mapper.min_radius", m.min_radius.to_string());
        put("mapper.rms_decay", m.rms_decay.to_string());
        put("splat.densify_threshold", self.densify_threshold.to_string());
        put("splat.init_opacity", self.init_opacity.to_string());
        put("render.near_clip", r.near_clip.to_string());
        put("render.alpha_cutoff", r.alpha_cutoff.to_string());
        put("render.transmittance_stop", r.transmittance_stop.to_string());
        put("render.sigma_extent", r.sigma_extent.to_string());
        put("render.min_radius_px", r.min_radius_px.to_string());
        put("render.max_alpha", r.max_alpha.to_string());
        put("render.background", join(&r.background));
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.bridge.validate()?;
        self.mapper.validate()?;
        if !(self.densify_threshold >= 0.0 && (0.0..=1.0).contains(&self.init_opacity)) {
            return Err(Error::Config("densify threshold and initial opacity out of range".into()));
        }
        if !(self.frontend.min_tracked_ratio > 0.0 && self.frontend.min_tracked_ratio <= 1.0) {
            return Err(Error::Config("frontend.min_tracked_ratio must be in (0, 1]".into()));
        }
        Ok(())
    }
}
