//! Analytic gradients of a scalar image functional
//! `L = Σ_p g_c(p)·C(p) + g_d(p)·D(p) + g_m(p)·M_b(p)`
//! with respect to Gaussian parameters and a left twist of the camera pose.

use rayon::prelude::*;

use super::{falloff, ProjectedGaussian, RenderOutput, TileCache};
use crate::error::{Error, Result};
use crate::geometry::{camera_point_twist_jacobian, Twist, Vec3};
use crate::imgbuf::{RgbImage, ScalarImage};
use crate::splat_map::GaussianMap;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub center: Vec3,
    pub radius: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

/// Gradients with respect to the screen-space quantities of one projected
/// Gaussian: `[μu, μv, r2D, depth, c0, c1, c2, opacity]`.
type ScreenGrad = [f64; 8];

fn check_cache(out: &RenderOutput, map: &GaussianMap) -> Result<()> {
    if out.generation != map.generation() || out.map_len != map.len() {
        return Err(Error::StaleCache {
            rendered: out.generation,
            current: map.generation(),
        });
    }
    Ok(())
}

fn check_dims(out: &RenderOutput, gc: &RgbImage, gd: &ScalarImage, gm: &ScalarImage) -> Result<()> {
    let (w, h) = (out.width(), out.height());
    if !gc.same_size(w, h) || gd.width != w || gd.height != h || gm.width != w || gm.height != h {
        return Err(Error::Precondition("gradient image size differs from render".into()));
    }
    Ok(())
}

/// Partial derivatives of the raw alpha with respect to `(μu, μv, r2D, o)`,
/// or zeros when the alpha was clamped.
#[inline]
fn alpha_partials(g: &ProjectedGaussian, u: f64, v: f64, alpha: f64, max_alpha: f64) -> [f64; 4] {
    let (q, e) = falloff(g, u, v);
    if g.opacity * e > max_alpha {
        return [0.0; 4];
    }
    let r2 = g.radius2d * g.radius2d;
    [
        alpha * (u - g.mean2d.u) / r2,
        alpha * (v - g.mean2d.v) / r2,
        alpha * q / (r2 * g.radius2d),
        e,
    ]
}

fn backward_tile(
    out: &RenderOutput,
    t: &TileCache,
    gc: &RgbImage,
    gd: &ScalarImage,
    gm: &ScalarImage,
) -> Vec<ScreenGrad> {
    let mut partial = vec![[0.0; 8]; t.list.len()];
    let bg = out.options.background;
    for ly in 0..t.h {
        for lx in 0..t.w {
            let (x, y) = (t.x0 + lx, t.y0 + ly);
            let g_c = gc.get(x, y);
            let g_d = gd.get(x, y);
            let g_m = gm.get(x, y);
            if g_c == [0.0; 3] && g_d == 0.0 && g_m == 0.0 {
                continue;
            }
            let local = ly * t.w + lx;
            let entries = t.pixel_entries(local);
            let (u, v) = (x as f64, y as f64);
            let mut behind =
                t.final_transmittance[local] * (g_c[0] * bg[0] + g_c[1] * bg[1] + g_c[2] * bg[2]);
            for e in entries.iter().rev() {
                let g = &out.projected[t.list[e.slot as usize] as usize];
                let wgt = e.alpha * e.transmittance;
                let value =
                    g_c[0] * g.color[0] + g_c[1] * g.color[1] + g_c[2] * g.color[2] + g_d * g.depth + g_m;
                let d_alpha = value * e.transmittance - behind / (1.0 - e.alpha);
                behind += value * wgt;

                let acc = &mut partial[e.slot as usize];
                for ch in 0..3 {
                    acc[4 + ch] += g_c[ch] * wgt;
                }
                acc[3] += g_d * wgt;
                let pa = alpha_partials(g, u, v, e.alpha, out.options.max_alpha);
                acc[0] += d_alpha * pa[0];
                acc[1] += d_alpha * pa[1];
                acc[2] += d_alpha * pa[2];
                acc[7] += d_alpha * pa[3];
            }
        }
    }
    partial
}

/// Screen-space partials summed over tiles in fixed tile order.
fn screen_gradients(
    out: &RenderOutput,
    gc: &RgbImage,
    gd: &ScalarImage,
    gm: &ScalarImage,
) -> Vec<ScreenGrad> {
    let partials: Vec<Vec<ScreenGrad>> = out
        .tiles
        .par_iter()
        .map(|t| backward_tile(out, t, gc, gd, gm))
        .collect();
    let mut total = vec![[0.0; 8]; out.projected.len()];
    for (t, p) in out.tiles.iter().zip(&partials) {
        for (slot, &gi) in t.list.iter().enumerate() {
            let dst = &mut total[gi as usize];
            for k in 0..8 {
                dst[k] += p[slot][k];
            }
        }
    }
    total
}

/// ∂L/∂p_c for one Gaussian from its screen-space gradient.
fn camera_point_grad(out: &RenderOutput, g: &ProjectedGaussian, s: &ScreenGrad) -> Vec3 {
    let k = &out.intrinsics;
    let j = k.projection_jacobian(&g.cam_point);
    let mut d = Vec3::new(
        s[0] * j[0][0] + s[1] * j[1][0],
        s[0] * j[0][1] + s[1] * j[1][1],
        s[0] * j[0][2] + s[1] * j[1][2] + s[3],
    );
    if !g.radius_clamped {
        // r2D = fx·r / z
        d.z -= s[2] * g.radius2d / g.cam_point.z;
    }
    d
}

/// Gradients for every map Gaussian (zero for culled ones) and for the pose twist.
pub fn backward(
    out: &RenderOutput,
    map: &GaussianMap,
    grad_color: &RgbImage,
    grad_depth: &ScalarImage,
    grad_mask: &ScalarImage,
) -> Result<(Vec<GaussianGrad>, Twist)> {
    check_cache(out, map)?;
    check_dims(out, grad_color, grad_depth, grad_mask)?;
    let screen = screen_gradients(out, grad_color, grad_depth, grad_mask);
    let rot = out.pose.rotation;
    let mut grads = vec![GaussianGrad::default(); out.map_len];
    let mut pose_grad = Twist::zeros();
    for (g, s) in out.projected.iter().zip(&screen) {
        if s.iter().all(|&v| v == 0.0) {
            continue;
        }
        let dpc = camera_point_grad(out, g, s);
        let center = map.gaussians()[g.source].center;
        let jx = camera_point_twist_jacobian(&out.pose, &center);
        for c in 0..6 {
            pose_grad[c] += dpc.x * jx[0][c] + dpc.y * jx[1][c] + dpc.z * jx[2][c];
        }
        grads[g.source] = GaussianGrad {
            center: rot * dpc,
            radius: if g.radius_clamped {
                0.0
            } else {
                s[2] * out.intrinsics.fx / g.depth
            },
            color: [s[4], s[5], s[6]],
            opacity: s[7],
        };
    }
    Ok((grads, pose_grad))
}

pub fn backward_gaussians(
    out: &RenderOutput,
    map: &GaussianMap,
    grad_color: &RgbImage,
    grad_depth: &ScalarImage,
    grad_mask: &ScalarImage,
) -> Result<Vec<GaussianGrad>> {
    backward(out, map, grad_color, grad_depth, grad_mask).map(|(g, _)| g)
}

pub fn backward_pose(
    out: &RenderOutput,
    map: &GaussianMap,
    grad_color: &RgbImage,
    grad_depth: &ScalarImage,
    grad_mask: &ScalarImage,
) -> Result<Twist> {
    backward(out, map, grad_color, grad_depth, grad_mask).map(|(_, p)| p)
}

/// Rows `∂(R, G, B, D)/∂ξ` of one pixel.
pub type PixelJacobian = [[f64; 6]; 4];

/// Per-pixel derivatives of the rendered color and depth with respect to a
/// left twist of the render pose, for the listed pixels (row-major indices).
pub fn pixel_pose_jacobians(
    out: &RenderOutput,
    map: &GaussianMap,
    pixels: &[usize],
) -> Result<Vec<PixelJacobian>> {
    check_cache(out, map)?;
    let k = &out.intrinsics;
    // Per projected Gaussian: ∂(μu, μv, r2D, depth)/∂ξ.
    let screen_jac: Vec<[[f64; 6]; 4]> = out
        .projected
        .iter()
        .map(|g| {
            let jp = k.projection_jacobian(&g.cam_point);
            let jx = camera_point_twist_jacobian(&out.pose, &map.gaussians()[g.source].center);
            let mut rows = [[0.0; 6]; 4];
            for c in 0..6 {
                let (dx, dy, dz) = (jx[0][c], jx[1][c], jx[2][c]);
                rows[0][c] = jp[0][0] * dx + jp[0][2] * dz;
                rows[1][c] = jp[1][1] * dy + jp[1][2] * dz;
                rows[2][c] = if g.radius_clamped {
                    0.0
                } else {
                    -g.radius2d / g.cam_point.z * dz
                };
                rows[3][c] = dz;
            }
            rows
        })
        .collect();
    let bg = out.options.background;
    let w = out.width();
    Ok(pixels
        .par_iter()
        .map(|&idx| {
            let (x, y) = (idx % w, idx / w);
            let (t, local) = out.locate(x, y);
            let (u, v) = (x as f64, y as f64);
            let tf = t.final_transmittance[local];
            let mut behind = [tf * bg[0], tf * bg[1], tf * bg[2], 0.0];
            let mut jac = [[0.0; 6]; 4];
            for e in t.pixel_entries(local).iter().rev() {
                let gi = t.list[e.slot as usize] as usize;
                let g = &out.projected[gi];
                let sj = &screen_jac[gi];
                let wgt = e.alpha * e.transmittance;
                let values = [g.color[0], g.color[1], g.color[2], g.depth];
                let pa = alpha_partials(g, u, v, e.alpha, out.options.max_alpha);
                let mut dalpha = [0.0; 6];
                for c in 0..6 {
                    dalpha[c] = pa[0] * sj[0][c] + pa[1] * sj[1][c] + pa[2] * sj[2][c];
                }
                for ch in 0..4 {
                    let d_alpha = values[ch] * e.transmittance - behind[ch] / (1.0 - e.alpha);
                    behind[ch] += values[ch] * wgt;
                    for c in 0..6 {
                        jac[ch][c] += d_alpha * dalpha[c];
                    }
                }
                for c in 0..6 {
                    jac[3][c] += wgt * sj[3][c];
                }
            }
            jac
        })
        .collect())
}
