use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::Frame;
use crate::imgbuf::RgbImage;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseParams {
    pub depth_sigma: f64,
    pub depth_dropout: f64,
    pub color_sigma: f64,
    /// Odd box-blur width applied to color; 0 or 1 disables.
    pub blur_kernel: usize,
    pub seed: u64,
}

/// Sensor-noise model: Gaussian depth and color noise, random depth dropout
/// and a box blur standing in for motion blur.
pub fn add_noise(frame: &Frame, params: &NoiseParams) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut out = frame.clone();

    if params.depth_sigma > 0.0 || params.depth_dropout > 0.0 {
        let normal = Normal::new(0.0, params.depth_sigma.max(0.0)).expect("finite sigma");
        for d in out.depth.data.iter_mut() {
            if *d <= 0.0 {
                continue;
            }
            if params.depth_dropout > 0.0 && rng.random::<f64>() < params.depth_dropout {
                *d = 0.0;
                continue;
            }
            if params.depth_sigma > 0.0 {
                *d = (*d + normal.sample(&mut rng)).max(0.0);
            }
        }
    }

    if params.blur_kernel > 1 {
        out.color = box_blur(&out.color, params.blur_kernel / 2);
    }

    if params.color_sigma > 0.0 {
        let normal = Normal::new(0.0, params.color_sigma).expect("finite sigma");
        for c in out.color.data.iter_mut() {
            for v in c.iter_mut() {
                *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
            }
        }
    }
    out
}

/// Separable box filter with clamped borders.
fn box_blur(img: &RgbImage, half: usize) -> RgbImage {
    let (w, h) = (img.width, img.height);
    let n = (2 * half + 1) as f64;
    let pass = |src: &RgbImage, horizontal: bool| {
        let mut dst = RgbImage::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for o in -(half as isize)..=(half as isize) {
                    let (sx, sy) = if horizontal {
                        ((x as isize + o).clamp(0, w as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + o).clamp(0, h as isize - 1) as usize)
                    };
                    let c = src.get(sx, sy);
                    for k in 0..3 {
                        acc[k] += c[k];
                    }
                }
                dst.set(x, y, acc.map(|v| v / n));
            }
        }
        dst
    };
    pass(&pass(img, true), false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraIntrinsics;
    use crate::imgbuf::ScalarImage;

    fn frame(w: usize, h: usize) -> Frame {
        let k = CameraIntrinsics::new(100.0, 100.0, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        let mut c = RgbImage::new(w, h);
        for (i, p) in c.data.iter_mut().enumerate() {
            *p = [(i % 7) as f64 / 7.0, 0.5, 0.25];
        }
        Frame::new(0.0, c, ScalarImage::filled(w, h, 1.5), k).unwrap()
    }

    #[test]
    fn zero_params_are_identity() {
        let f = frame(16, 12);
        assert_eq!(add_noise(&f, &NoiseParams::default()), f);
    }

    #[test]
    fn total_dropout() {
        let f = frame(16, 12);
        let n = add_noise(&f, &NoiseParams { depth_dropout: 1.0, ..Default::default() });
        assert!(n.depth.data.iter().all(|&d| d == 0.0));
    }

    #[test]
    fn depth_noise_has_requested_sigma() {
        let f = frame(128, 128);
        let n = add_noise(&f, &NoiseParams { depth_sigma: 0.01, seed: 5, ..Default::default() });
        let m = n.depth.data.len() as f64;
        let mean = n.depth.data.iter().sum::<f64>() / m;
        let var = n.depth.data.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (m - 1.0);
        assert!((var.sqrt() - 0.01).abs() < 0.001, "sigma {}", var.sqrt());
        assert!((mean - 1.5).abs() < 1e-3);
    }

    #[test]
    fn blur_preserves_constant_and_is_deterministic() {
        let mut f = frame(10, 10);
        f.color = RgbImage::filled(10, 10, [0.3, 0.6, 0.9]);
        let p = NoiseParams { blur_kernel: 5, color_sigma: 0.05, seed: 9, ..Default::default() };
        let a = add_noise(&f, &p);
        assert_eq!(a, add_noise(&f, &p));
        let b = add_noise(&f, &NoiseParams { blur_kernel: 5, ..Default::default() });
        for c in &b.color.data {
            assert!((c[0] - 0.3).abs() < 1e-12);
        }
    }
}
