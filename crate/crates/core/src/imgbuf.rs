//! Floating-point image buffers and their PNG codecs.

use std::path::Path;

use crate::error::{Error, Result};

/// Meters per raw unit in 16-bit depth images.
pub const DEPTH_SCALE: f64 = 5000.0;

#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn filled(width: usize, height: usize, value: [f64; 3]) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: [f64; 3]) {
        self.data[y * self.width + x] = v;
    }

    pub fn same_size(&self, w: usize, h: usize) -> bool {
        self.width == w && self.height == h
    }

    /// Rec. 601 luma.
    pub fn to_gray(&self) -> ScalarImage {
        ScalarImage {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|c| 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2])
                .collect(),
        }
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::RgbImage::new(self.width as u32, self.height as u32);
        for (i, px) in buf.pixels_mut().enumerate() {
            let c = self.data[i];
            *px = image::Rgb(c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data: img
                .pixels()
                .map(|p| p.0.map(|v| v as f64 / 255.0))
                .collect(),
        })
    }

    /// Block-average downsampling by an integer factor.
    pub fn downsample(&self, factor: usize) -> Self {
        if factor <= 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = Self::new(w, h);
        let n = (factor * factor) as f64;
        for y in 0..h {
            for x in 0..w {
                let mut acc = [0.0; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let c = self.get(x * factor + dx, y * factor + dy);
                        for k in 0..3 {
                            acc[k] += c[k];
                        }
                    }
                }
                out.set(x, y, acc.map(|v| v / n));
            }
        }
        out
    }
}

impl ScalarImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Writes a 16-bit depth PNG; meters are scaled by [`DEPTH_SCALE`].
    pub fn save_depth_png(&self, path: &Path) -> Result<()> {
        let mut buf = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
            self.width as u32,
            self.height as u32,
        );
        for (i, px) in buf.pixels_mut().enumerate() {
            *px = image::Luma([encode_depth(self.data[i])]);
        }
        buf.save(path)?;
        Ok(())
    }

    pub fn load_depth_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?;
        let img = match img {
            image::DynamicImage::ImageLuma16(b) => b,
            other => {
                return Err(Error::Precondition(format!(
                    "{} is not a 16-bit depth image ({:?})",
                    path.display(),
                    other.color()
                )))
            }
        };
        let (w, h) = img.dimensions();
        Ok(Self {
            width: w as usize,
            height: h as usize,
            data: img.pixels().map(|p| decode_depth(p.0[0])).collect(),
        })
    }

    /// Depth downsampling: mean of the valid samples in each block.
    pub fn downsample_depth(&self, factor: usize) -> Self {
        if factor <= 1 {
            return self.clone();
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = Self::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let (mut s, mut n) = (0.0, 0usize);
                for dy in 0..factor {
                    for dx in 0..factor {
                        let d = self.get(x * factor + dx, y * factor + dy);
                        if d > 0.0 {
                            s += d;
                            n += 1;
                        }
                    }
                }
                if n > 0 {
                    out.set(x, y, s / n as f64);
                }
            }
        }
        out
    }
}

pub fn encode_depth(meters: f64) -> u16 {
    if !(meters > 0.0) {
        return 0;
    }
    (meters * DEPTH_SCALE).round().clamp(0.0, u16::MAX as f64) as u16
}

pub fn decode_depth(raw: u16) -> f64 {
    raw as f64 / DEPTH_SCALE
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tum_depth_scale() {
        assert_eq!(decode_depth(10000), 2.0);
        assert_eq!(encode_depth(0.0), 0);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = ScalarImage::new(4, 3);
        d.set(1, 2, 1.2345);
        let p = dir.path().join("d.png");
        d.save_depth_png(&p).unwrap();
        let back = ScalarImage::load_depth_png(&p).unwrap();
        assert!((back.get(1, 2) - 1.2345).abs() <= 1.0 / DEPTH_SCALE);
        let mut c = RgbImage::new(2, 2);
        c.set(1, 0, [1.0, 0.0, 0.2]);
        let p = dir.path().join("c.png");
        c.save_png(&p).unwrap();
        let back = RgbImage::load_png(&p).unwrap();
        assert_eq!(back.get(1, 0)[0], 1.0);
    }

    proptest! {
        #[test]
        fn depth_codec_error_bounded(m in 0.0002f64..13.0) {
            let back = decode_depth(encode_depth(m));
            prop_assert!((back - m).abs() <= 1.0 / DEPTH_SCALE);
        }
    }
}
