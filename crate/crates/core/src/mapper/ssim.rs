//! Windowed SSIM (11×11 Gaussian window, σ = 1.5) over valid window
//! positions, averaged over channels, with its gradient in the first image.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::imgbuf::RgbImage;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
const C1: f64 = K1 * K1;
const C2: f64 = K2 * K2;

fn kernel() -> &'static [f64; WINDOW] {
    static K: OnceLock<[f64; WINDOW]> = OnceLock::new();
    K.get_or_init(|| {
        let half = (WINDOW / 2) as f64;
        let mut k = [0.0; WINDOW];
        for (i, v) in k.iter_mut().enumerate() {
            let d = i as f64 - half;
            *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
        }
        let s: f64 = k.iter().sum();
        k.map(|v| v / s)
    })
}

/// Plain single-channel image used for the filter passes.
#[derive(Clone, Debug, PartialEq)]
struct Plane {
    w: usize,
    h: usize,
    d: Vec<f64>,
}

impl Plane {
    fn channel(img: &RgbImage, ch: usize) -> Self {
        Self {
            w: img.width,
            h: img.height,
            d: img.data.iter().map(|p| p[ch]).collect(),
        }
    }

    fn map2(&self, o: &Plane, f: impl Fn(f64, f64) -> f64) -> Plane {
        Plane {
            w: self.w,
            h: self.h,
            d: self.d.iter().zip(&o.d).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Valid-mode separable filter: output is `(w−10)×(h−10)`.
fn filter_valid(p: &Plane) -> Plane {
    let k = kernel();
    let (ow, oh) = (p.w + 1 - WINDOW, p.h + 1 - WINDOW);
    let mut tmp = vec![0.0; ow * p.h];
    for y in 0..p.h {
        let row = &p.d[y * p.w..(y + 1) * p.w];
        for x in 0..ow {
            tmp[y * ow + x] = (0..WINDOW).map(|i| k[i] * row[x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|i| k[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    Plane { w: ow, h: oh, d: out }
}

/// Adjoint of [`filter_valid`]: scatters a window-position map back to full size.
fn filter_adjoint(p: &Plane, w: usize, h: usize) -> Plane {
    let k = kernel();
    let mut tmp = vec![0.0; p.w * h];
    for y in 0..p.h {
        for x in 0..p.w {
            let v = p.d[y * p.w + x];
            for i in 0..WINDOW {
                tmp[(y + i) * p.w + x] += k[i] * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..p.w {
            let v = tmp[y * p.w + x];
            for i in 0..WINDOW {
                out[y * w + x + i] += k[i] * v;
            }
        }
    }
    Plane { w, h, d: out }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsimResult {
    pub mean: f64,
    /// Per window position, averaged over channels; `(w−10)×(h−10)`.
    pub map: Vec<f64>,
    pub map_width: usize,
    pub map_height: usize,
    /// ∂mean/∂a, present when requested.
    pub gradient: Option<RgbImage>,
}

fn check(a: &RgbImage, b: &RgbImage) -> Result<()> {
    if !b.same_size(a.width, a.height) {
        return Err(Error::Precondition("SSIM inputs differ in size".into()));
    }
    if a.width < WINDOW || a.height < WINDOW {
        return Err(Error::Precondition(format!(
            "SSIM needs images of at least {WINDOW}×{WINDOW}, got {}×{}",
            a.width, a.height
        )));
    }
    Ok(())
}

fn compute(a: &RgbImage, b: &RgbImage, with_gradient: bool) -> Result<SsimResult> {
    check(a, b)?;
    let (w, h) = (a.width, a.height);
    let (mw, mh) = (w + 1 - WINDOW, h + 1 - WINDOW);
    let n = (mw * mh * 3) as f64;
    let mut map = vec![0.0; mw * mh];
    let mut grad = with_gradient.then(|| RgbImage::new(w, h));
    for ch in 0..3 {
        let pa = Plane::channel(a, ch);
        let pb = Plane::channel(b, ch);
        let mu_a = filter_valid(&pa);
        let mu_b = filter_valid(&pb);
        let aa = filter_valid(&pa.map2(&pa, |x, y| x * y));
        let bb = filter_valid(&pb.map2(&pb, |x, y| x * y));
        let ab = filter_valid(&pa.map2(&pb, |x, y| x * y));
        let mut m1 = vec![0.0; mw * mh];
        let mut m2 = vec![0.0; mw * mh];
        let mut m3 = vec![0.0; mw * mh];
        for i in 0..mw * mh {
            let (ua, ub) = (mu_a.d[i], mu_b.d[i]);
            let va = aa.d[i] - ua * ua;
            let vb = bb.d[i] - ub * ub;
            let cov = ab.d[i] - ua * ub;
            let a1 = 2.0 * ua * ub + C1;
            let a2 = 2.0 * cov + C2;
            let b1 = ua * ua + ub * ub + C1;
            let b2 = va + vb + C2;
            let s = a1 * a2 / (b1 * b2);
            map[i] += s / 3.0;
            if with_gradient {
                // dS/da_q = w·(m1 + m2·b_q + m3·a_q) summed over windows containing q.
                let c2 = 2.0 * a1 / (b1 * b2);
                let c3 = -2.0 * s / b2;
                m1[i] = 2.0 * ub * a2 / (b1 * b2) - 2.0 * ua * s / b1 - c2 * ub - c3 * ua;
                m2[i] = c2;
                m3[i] = c3;
            }
        }
        if let Some(g) = grad.as_mut() {
            let plane = |m: Vec<f64>| filter_adjoint(&Plane { w: mw, h: mh, d: m }, w, h);
            let (g1, g2, g3) = (plane(m1), plane(m2), plane(m3));
            for q in 0..w * h {
                g.data[q][ch] = (g1.d[q] + g2.d[q] * pb.d[q] + g3.d[q] * pa.d[q]) / n;
            }
        }
    }
    let mean = map.iter().sum::<f64>() / (mw * mh) as f64;
    Ok(SsimResult {
        mean,
        map,
        map_width: mw,
        map_height: mh,
        gradient: grad,
    })
}

pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<SsimResult> {
    compute(a, b, true)
}

pub fn ssim_value(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    compute(a, b, false).map(|r| r.mean)
}
