//! Harris corners with grid bucketing and 256-bit intensity-comparison
//! descriptors. No scale pyramid and no orientation: inter-frame rotation at
//! desk scale is small.

use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LandmarkId;
use crate::geometry::PixelCoord;
use crate::imgbuf::ScalarImage;

pub type Descriptor = [u64; 4];

/// Half-width of the descriptor sampling patch.
pub const PATCH_RADIUS: i32 = 7;
const HARRIS_K: f64 = 0.04;
const WINDOW_RADIUS: i32 = 2;
/// Corners weaker than this fraction of the strongest response are dropped.
const RELATIVE_THRESHOLD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Feature {
    pub pixel: PixelCoord,
    pub descriptor: Descriptor,
    pub depth: Option<f64>,
    pub landmark_id: Option<LandmarkId>,
    /// Ground-truth association key (synthetic oracle mode only).
    pub track_key: Option<u64>,
    pub score: f64,
}

impl Feature {
    pub fn at(pixel: PixelCoord) -> Self {
        Self {
            pixel,
            descriptor: [0; 4],
            depth: None,
            landmark_id: None,
            track_key: None,
            score: 0.0,
        }
    }
}

pub fn hamming(a: &Descriptor, b: &Descriptor) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

fn pattern() -> &'static [(i32, i32, i32, i32); 256] {
    static PATTERN: OnceLock<[(i32, i32, i32, i32); 256]> = OnceLock::new();
    PATTERN.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_b21e);
        let mut p = [(0, 0, 0, 0); 256];
        for e in p.iter_mut() {
            let mut s = || rng.random_range(-PATCH_RADIUS..=PATCH_RADIUS);
            *e = (s(), s(), s(), s());
        }
        p
    })
}

fn box_smooth(img: &ScalarImage) -> ScalarImage {
    let (w, h) = (img.width as i32, img.height as i32);
    let mut out = ScalarImage::new(img.width, img.height);
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let sx = (x + dx).clamp(0, w - 1) as usize;
                    let sy = (y + dy).clamp(0, h - 1) as usize;
                    s += img.get(sx, sy);
                }
            }
            out.set(x as usize, y as usize, s / 9.0);
        }
    }
    out
}

/// Harris response at every pixel (zero at the image border).
pub fn harris_response(img: &ScalarImage) -> ScalarImage {
    let (w, h) = (img.width, img.height);
    let mut ixx = ScalarImage::new(w, h);
    let mut iyy = ScalarImage::new(w, h);
    let mut ixy = ScalarImage::new(w, h);
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let p = |dx: i32, dy: i32| img.get((x as i32 + dx) as usize, (y as i32 + dy) as usize);
            let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            ixx.set(x, y, gx * gx / 64.0);
            iyy.set(x, y, gy * gy / 64.0);
            ixy.set(x, y, gx * gy / 64.0);
        }
    }
    let mut r = ScalarImage::new(w, h);
    let m = WINDOW_RADIUS + 1;
    for y in m..(h as i32 - m) {
        for x in m..(w as i32 - m) {
            let (mut a, mut b, mut c) = (0.0, 0.0, 0.0);
            for dy in -WINDOW_RADIUS..=WINDOW_RADIUS {
                for dx in -WINDOW_RADIUS..=WINDOW_RADIUS {
                    let (sx, sy) = ((x + dx) as usize, (y + dy) as usize);
                    a += ixx.get(sx, sy);
                    b += iyy.get(sx, sy);
                    c += ixy.get(sx, sy);
                }
            }
            r.set(x as usize, y as usize, a * b - c * c - HARRIS_K * (a + b) * (a + b));
        }
    }
    r
}

fn describe(smooth: &ScalarImage, x: i32, y: i32) -> Descriptor {
    let mut d = [0u64; 4];
    for (bit, &(ax, ay, bx, by)) in pattern().iter().enumerate() {
        let a = smooth.get((x + ax) as usize, (y + ay) as usize);
        let b = smooth.get((x + bx) as usize, (y + by) as usize);
        if a < b {
            d[bit / 64] |= 1 << (bit % 64);
        }
    }
    d
}

/// Detects up to `target_count` corners, spread over a `grid.0 × grid.1`
/// bucket grid, sorted by descending score.
pub fn detect_features(gray: &ScalarImage, target_count: usize, grid: (usize, usize)) -> Vec<Feature> {
    let (w, h) = (gray.width as i32, gray.height as i32);
    let margin = PATCH_RADIUS + 1;
    if target_count == 0 || w <= 2 * margin || h <= 2 * margin {
        return Vec::new();
    }
    let response = harris_response(gray);
    let max_r = response.data.iter().copied().fold(0.0, f64::max);
    if !(max_r > 1e-12) {
        return Vec::new();
    }
    let threshold = max_r * RELATIVE_THRESHOLD;

    let mut corners: Vec<(f64, i32, i32)> = Vec::new();
    for y in margin..h - margin {
        for x in margin..w - margin {
            let r = response.get(x as usize, y as usize);
            if r <= threshold {
                continue;
            }
            let mut is_max = true;
            'nms: for dy in -1..=1 {
                for dx in -1..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let n = response.get((x + dx) as usize, (y + dy) as usize);
                    // Ties go to the earlier pixel in raster order.
                    if n > r || (n == r && (dy < 0 || (dy == 0 && dx < 0))) {
                        is_max = false;
                        break 'nms;
                    }
                }
            }
            if is_max {
                corners.push((r, x, y));
            }
        }
    }

    let (gx, gy) = (grid.0.max(1), grid.1.max(1));
    let cells = gx * gy;
    let quota = target_count.div_ceil(cells);
    let mut buckets: Vec<Vec<(f64, i32, i32)>> = vec![Vec::new(); cells];
    for c in corners {
        let cx = ((c.1 as usize) * gx / w as usize).min(gx - 1);
        let cy = ((c.2 as usize) * gy / h as usize).min(gy - 1);
        buckets[cy * gx + cx].push(c);
    }
    let by_score = |a: &(f64, i32, i32), b: &(f64, i32, i32)| {
        b.0.total_cmp(&a.0).then((a.2, a.1).cmp(&(b.2, b.1)))
    };
    let mut chosen = Vec::new();
    let mut leftover = Vec::new();
    for mut b in buckets {
        b.sort_by(by_score);
        let split = quota.min(b.len());
        leftover.extend_from_slice(&b[split..]);
        b.truncate(split);
        chosen.extend(b);
    }
    chosen.sort_by(by_score);
    if chosen.len() > target_count {
        chosen.truncate(target_count);
    } else {
        leftover.sort_by(by_score);
        let need = target_count - chosen.len();
        chosen.extend(leftover.into_iter().take(need));
        chosen.sort_by(by_score);
    }

    let smooth = box_smooth(gray);
    chosen
        .into_iter()
        .map(|(score, x, y)| Feature {
            pixel: PixelCoord::new(x as f64, y as f64),
            descriptor: describe(&smooth, x, y),
            depth: None,
            landmark_id: None,
            track_key: None,
            score,
        })
        .collect()
}

/// Mutual nearest neighbours under Hamming distance with a distance cap and
/// a best/second-best ratio test.
pub fn match_features(a: &[Feature], b: &[Feature], max_hamming: u32, ratio: f64) -> Vec<(usize, usize)> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let best_in = |from: &[Feature], to: &[Feature]| -> Vec<(usize, u32, u32)> {
        from.iter()
            .map(|f| {
                let (mut bi, mut d1, mut d2) = (0, u32::MAX, u32::MAX);
                for (j, g) in to.iter().enumerate() {
                    let d = hamming(&f.descriptor, &g.descriptor);
                    if d < d1 {
                        d2 = d1;
                        d1 = d;
                        bi = j;
                    } else if d < d2 {
                        d2 = d;
                    }
                }
                (bi, d1, d2)
            })
            .collect()
    };
    let fwd = best_in(a, b);
    let bwd = best_in(b, a);
    fwd.iter()
        .enumerate()
        .filter(|&(i, &(j, d1, d2))| {
            bwd[j].0 == i
                && d1 <= max_hamming
                && (d2 == u32::MAX || d1 as f64 <= ratio * d2 as f64)
        })
        .map(|(i, &(j, _, _))| (i, j))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_features(n: usize, seed: u64) -> Vec<Feature> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Feature {
                descriptor: [rng.random(), rng.random(), rng.random(), rng.random()],
                ..Feature::at(PixelCoord::new(i as f64, 0.0))
            })
            .collect()
    }

    #[test]
    fn constant_image_has_no_features() {
        assert!(detect_features(&ScalarImage::filled(64, 64, 0.4), 100, (4, 4)).is_empty());
    }

    #[test]
    fn white_square_corners_are_found() {
        let mut img = ScalarImage::new(64, 64);
        for y in 20..44 {
            for x in 20..44 {
                img.set(x, y, 1.0);
            }
        }
        let fs = detect_features(&img, 50, (2, 2));
        assert!(fs.len() >= 4);
        // Exhaustive scan: every geometric corner has a detection nearby.
        for (cx, cy) in [(19.5, 19.5), (43.5, 19.5), (19.5, 43.5), (43.5, 43.5)] {
            let near = fs.iter().any(|f| (f.pixel.u - cx).abs() <= 2.5 && (f.pixel.v - cy).abs() <= 2.5);
            assert!(near, "no feature near ({cx}, {cy})");
        }
        for w in fs.windows(2) {
            assert!(w[0].score >= w[1].score);
        }
    }

    #[test]
    fn target_count_and_grid_coverage() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut img = ScalarImage::new(96, 96);
        for v in img.data.iter_mut() {
            *v = rng.random();
        }
        let fs = detect_features(&img, 40, (2, 2));
        assert!(fs.len() <= 40 && fs.len() >= 30);
        for (qx, qy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let n = fs
                .iter()
                .filter(|f| (f.pixel.u as usize * 2 / 96) == qx && (f.pixel.v as usize * 2 / 96) == qy)
                .count();
            assert!(n > 0, "cell ({qx},{qy}) starved");
        }
    }

    #[test]
    fn identical_lists_match_identically() {
        let a = random_features(50, 1);
        let m = match_features(&a, &a, 64, 0.8);
        assert_eq!(m, (0..50).map(|i| (i, i)).collect::<Vec<_>>());
    }

    #[test]
    fn disjoint_descriptors_with_zero_tolerance() {
        let a = random_features(30, 1);
        let b = random_features(30, 2);
        assert!(match_features(&a, &b, 0, 0.8).is_empty());
    }

    #[test]
    fn permutation_is_recovered() {
        let a = random_features(40, 4);
        let mut perm: Vec<usize> = (0..40).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in (1..40).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let b: Vec<Feature> = perm.iter().map(|&i| a[i].clone()).collect();
        // Brute-force oracle: exact descriptor equality.
        let mut expected: Vec<(usize, usize)> = (0..40)
            .map(|i| (i, b.iter().position(|f| f.descriptor == a[i].descriptor).unwrap()))
            .collect();
        expected.sort_unstable();
        assert_eq!(match_features(&a, &b, 40, 0.8), expected);
    }
}
