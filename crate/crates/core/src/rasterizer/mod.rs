//! Tile-based software rasterizer for isotropic Gaussians.
//!
//! Gaussians are projected, sorted front to back by camera-frame depth and
//! alpha-blended per pixel into color, depth and border-mask (accumulated
//! weight) buffers. The per-pixel blend sequence is cached so that the
//! backward passes in [`backward`] can reproduce the exact chain rule.
//!
//! Pixel `(x, y)` is sampled at continuous coordinate `(u, v) = (x, y)`.

mod backward;

use rayon::prelude::*;

pub use backward::{
    backward, backward_gaussians, backward_pose, pixel_pose_jacobians, GaussianGrad, PixelJacobian,
};

use crate::geometry::{CameraIntrinsics, PixelCoord, SE3Pose, Vec3};
use crate::imgbuf::{RgbImage, ScalarImage};
use crate::splat_map::{Gaussian, GaussianMap};

pub const TILE_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderOptions {
    pub near_clip: f64,
    pub alpha_cutoff: f64,
    pub transmittance_stop: f64,
    /// Footprint radius in units of the projected radius.
    pub sigma_extent: f64,
    pub min_radius_px: f64,
    pub max_alpha: f64,
    pub background: [f64; 3],
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            near_clip: 0.01,
            alpha_cutoff: 1.0 / 255.0,
            transmittance_stop: 1e-4,
            sigma_extent: 3.0,
            min_radius_px: 0.3,
            max_alpha: 0.999,
            background: [0.0; 3],
        }
    }
}

impl RenderOptions {
    /// No footprint, alpha or transmittance cutoffs: the rendered image is a
    /// smooth function of every parameter (away from the opacity clamp).
    pub fn relaxed() -> Self {
        Self {
            alpha_cutoff: 0.0,
            transmittance_stop: 0.0,
            sigma_extent: f64::INFINITY,
            min_radius_px: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian {
    /// Index into the map the projection was taken from.
    pub source: usize,
    pub mean2d: PixelCoord,
    pub radius2d: f64,
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Camera-frame center; `depth == cam_point.z`.
    pub cam_point: Vec3,
    /// True when `radius2d` was raised to the minimum and is parameter-independent.
    pub radius_clamped: bool,
}

/// Projects every Gaussian in front of `near_clip` and sorts front to back.
/// Ties keep map order.
pub fn project_gaussians(
    gaussians: &[Gaussian],
    k: &CameraIntrinsics,
    pose: &SE3Pose,
    opts: &RenderOptions,
) -> Vec<ProjectedGaussian> {
    let mut out: Vec<ProjectedGaussian> = gaussians
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let pc = pose.inverse_transform_point(&g.center);
            if !(pc.z > opts.near_clip) {
                return None;
            }
            let mean2d = k.project_camera(&pc)?;
            let raw = k.fx * g.radius / pc.z;
            let radius_clamped = raw < opts.min_radius_px;
            Some(ProjectedGaussian {
                source: i,
                mean2d,
                radius2d: if radius_clamped { opts.min_radius_px } else { raw },
                depth: pc.z,
                color: g.color,
                opacity: g.opacity,
                cam_point: pc,
                radius_clamped,
            })
        })
        .collect();
    out.sort_by(|a, b| a.depth.total_cmp(&b.depth));
    out
}

/// One blended contribution at a pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlendEntry {
    /// Slot in the tile's Gaussian list.
    pub(crate) slot: u32,
    pub alpha: f64,
    /// Transmittance before this contribution.
    pub transmittance: f64,
}

#[derive(Clone, Debug)]
pub(crate) struct TileCache {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
    /// Indices into `RenderOutput::projected`, front to back.
    pub list: Vec<u32>,
    /// `offsets[i]..offsets[i+1]` are the entries of local pixel `i`.
    pub offsets: Vec<u32>,
    pub entries: Vec<BlendEntry>,
    pub final_transmittance: Vec<f64>,
}

impl TileCache {
    fn pixel_entries(&self, local: usize) -> &[BlendEntry] {
        &self.entries[self.offsets[local] as usize..self.offsets[local + 1] as usize]
    }
}

pub struct RenderOutput {
    pub color: RgbImage,
    pub depth: ScalarImage,
    pub border_mask: ScalarImage,
    pub(crate) tiles: Vec<TileCache>,
    pub(crate) tiles_x: usize,
    pub projected: Vec<ProjectedGaussian>,
    pub pose: SE3Pose,
    pub intrinsics: CameraIntrinsics,
    pub options: RenderOptions,
    /// Map generation and size at render time, checked by the backward passes.
    pub generation: u64,
    pub map_len: usize,
}

impl RenderOutput {
    pub fn width(&self) -> usize {
        self.intrinsics.width
    }

    pub fn height(&self) -> usize {
        self.intrinsics.height
    }

    fn locate(&self, x: usize, y: usize) -> (&TileCache, usize) {
        let t = &self.tiles[(y / TILE_SIZE) * self.tiles_x + x / TILE_SIZE];
        (t, (y - t.y0) * t.w + (x - t.x0))
    }

    /// Cached blend sequence at a pixel, front to back, as
    /// `(projected index, alpha, transmittance before)`.
    pub fn blend_sequence(&self, x: usize, y: usize) -> Vec<(usize, f64, f64)> {
        let (t, local) = self.locate(x, y);
        t.pixel_entries(local)
            .iter()
            .map(|e| (t.list[e.slot as usize] as usize, e.alpha, e.transmittance))
            .collect()
    }

    pub fn final_transmittance(&self, x: usize, y: usize) -> f64 {
        let (t, local) = self.locate(x, y);
        t.final_transmittance[local]
    }
}

pub fn render(
    map: &GaussianMap,
    k: &CameraIntrinsics,
    pose: &SE3Pose,
    opts: &RenderOptions,
) -> RenderOutput {
    let projected = project_gaussians(map.gaussians(), k, pose, opts);
    let (w, h) = (k.width, k.height);
    let tiles_x = w.div_ceil(TILE_SIZE);
    let tiles_y = h.div_ceil(TILE_SIZE);

    let mut bins: Vec<Vec<u32>> = vec![Vec::new(); tiles_x * tiles_y];
    for (i, g) in projected.iter().enumerate() {
        let ext = opts.sigma_extent * g.radius2d;
        let lo_u = (g.mean2d.u - ext).floor().max(0.0);
        let hi_u = (g.mean2d.u + ext).ceil().min((w - 1) as f64);
        let lo_v = (g.mean2d.v - ext).floor().max(0.0);
        let hi_v = (g.mean2d.v + ext).ceil().min((h - 1) as f64);
        if !(lo_u <= hi_u && lo_v <= hi_v) {
            continue;
        }
        let (tx0, tx1) = (lo_u as usize / TILE_SIZE, hi_u as usize / TILE_SIZE);
        let (ty0, ty1) = (lo_v as usize / TILE_SIZE, hi_v as usize / TILE_SIZE);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                bins[ty * tiles_x + tx].push(i as u32);
            }
        }
    }

    let tiles: Vec<TileCache> = bins
        .into_par_iter()
        .enumerate()
        .map(|(ti, list)| {
            let (tx, ty) = (ti % tiles_x, ti / tiles_x);
            let x0 = tx * TILE_SIZE;
            let y0 = ty * TILE_SIZE;
            blend_tile(&projected, list, x0, y0, TILE_SIZE.min(w - x0), TILE_SIZE.min(h - y0), opts)
        })
        .collect();

    let mut color = RgbImage::new(w, h);
    let mut depth = ScalarImage::new(w, h);
    let mut border_mask = ScalarImage::new(w, h);
    for t in &tiles {
        for ly in 0..t.h {
            for lx in 0..t.w {
                let local = ly * t.w + lx;
                let (mut c, mut d, mut m) = ([0.0; 3], 0.0, 0.0);
                for e in t.pixel_entries(local) {
                    let g = &projected[t.list[e.slot as usize] as usize];
                    let wgt = e.alpha * e.transmittance;
                    for ch in 0..3 {
                        c[ch] += wgt * g.color[ch];
                    }
                    d += wgt * g.depth;
                    m += wgt;
                }
                let tf = t.final_transmittance[local];
                for ch in 0..3 {
                    c[ch] += tf * opts.background[ch];
                }
                let (x, y) = (t.x0 + lx, t.y0 + ly);
                color.set(x, y, c);
                depth.set(x, y, d);
                border_mask.set(x, y, m);
            }
        }
    }

    RenderOutput {
        color,
        depth,
        border_mask,
        tiles,
        tiles_x,
        projected,
        pose: *pose,
        intrinsics: *k,
        options: *opts,
        generation: map.generation(),
        map_len: map.len(),
    }
}

/// Raw (unclamped) alpha and the Gaussian falloff at a pixel.
#[inline]
pub(crate) fn falloff(g: &ProjectedGaussian, u: f64, v: f64) -> (f64, f64) {
    let du = u - g.mean2d.u;
    let dv = v - g.mean2d.v;
    let q = du * du + dv * dv;
    (q, (-q / (2.0 * g.radius2d * g.radius2d)).exp())
}

fn blend_tile(
    projected: &[ProjectedGaussian],
    list: Vec<u32>,
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
    opts: &RenderOptions,
) -> TileCache {
    let mut offsets = Vec::with_capacity(w * h + 1);
    let mut entries = Vec::new();
    let mut final_transmittance = Vec::with_capacity(w * h);
    offsets.push(0u32);
    for ly in 0..h {
        for lx in 0..w {
            let (u, v) = ((x0 + lx) as f64, (y0 + ly) as f64);
            let mut t = 1.0;
            for (slot, &gi) in list.iter().enumerate() {
                let g = &projected[gi as usize];
                let (q, e) = falloff(g, u, v);
                let ext = opts.sigma_extent * g.radius2d;
                if q > ext * ext {
                    continue;
                }
                let alpha = (g.opacity * e).min(opts.max_alpha);
                if alpha < opts.alpha_cutoff || alpha <= 0.0 {
                    continue;
                }
                entries.push(BlendEntry {
                    slot: slot as u32,
                    alpha,
                    transmittance: t,
                });
                t *= 1.0 - alpha;
                if t < opts.transmittance_stop {
                    break;
                }
            }
            final_transmittance.push(t);
            offsets.push(entries.len() as u32);
        }
    }
    TileCache {
        x0,
        y0,
        w,
        h,
        list,
        offsets,
        entries,
        final_transmittance,
    }
}
