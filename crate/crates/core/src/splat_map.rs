//! The global store of isotropic Gaussians: creation at under-reconstructed
//! pixels, opacity pruning and the checkpoint format.
//!
//! Checkpoint format (UTF-8 text, one record per line):
//!
//! ```text
//! # gaussian-map v1
//! count <N>
//! generation <G>
//! <mx> <my> <mz> <radius> <r> <g> <b> <opacity>     (N rows)
//! ```
//!
//! Floats are written in shortest round-trip form, so save/load is lossless.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::Frame;
use crate::error::{Error, Result};
use crate::geometry::{backproject, PixelCoord, SE3Pose, Vec3};
use crate::imgbuf::ScalarImage;

const CHECKPOINT_MAGIC: &str = "# gaussian-map v1";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    pub center: Vec3,
    pub radius: f64,
    pub color: [f64; 3],
    pub opacity: f64,
}

impl Gaussian {
    pub fn is_valid(&self) -> bool {
        self.radius > 0.0
            && (0.0..=1.0).contains(&self.opacity)
            && self.color.iter().all(|c| (0.0..=1.0).contains(c))
            && self.center.iter().all(|v| v.is_finite())
    }
}

/// Opacity-weighted isotropic Gaussian evaluated at a world point.
pub fn gaussian_influence(g: &Gaussian, x: &Vec3) -> f64 {
    g.opacity * (-(x - g.center).norm_squared() / (2.0 * g.radius * g.radius)).exp()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianMap {
    gaussians: Vec<Gaussian>,
    generation: u64,
}

impl GaussianMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_gaussians(gaussians: Vec<Gaussian>) -> Self {
        Self {
            gaussians,
            generation: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn gaussians(&self) -> &[Gaussian] {
        &self.gaussians
    }

    /// Parameter access for optimizers. Structural changes go through
    /// [`push`](Self::push) and [`retain_mask`](Self::retain_mask).
    pub fn gaussians_mut(&mut self) -> &mut [Gaussian] {
        &mut self.gaussians
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn push(&mut self, g: Gaussian) {
        self.gaussians.push(g);
        self.generation += 1;
    }

    pub fn extend(&mut self, gs: impl IntoIterator<Item = Gaussian>) -> usize {
        let before = self.gaussians.len();
        self.gaussians.extend(gs);
        let added = self.gaussians.len() - before;
        if added > 0 {
            self.generation += 1;
        }
        added
    }

    /// Keeps Gaussians whose mask entry is true, preserving order.
    pub fn retain_mask(&mut self, keep: &[bool]) -> usize {
        assert_eq!(keep.len(), self.gaussians.len());
        let before = self.gaussians.len();
        let mut i = 0;
        self.gaussians.retain(|_| {
            let k = keep[i];
            i += 1;
            k
        });
        let removed = before - self.gaussians.len();
        if removed > 0 {
            self.generation += 1;
        }
        removed
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_checkpoint_str(&text, &path.display().to_string())
    }

    pub fn to_checkpoint_string(&self) -> String {
        let mut s = String::with_capacity(64 * (self.len() + 3));
        let _ = writeln!(s, "{CHECKPOINT_MAGIC}");
        let _ = writeln!(s, "count {}", self.len());
        let _ = writeln!(s, "generation {}", self.generation);
        for g in &self.gaussians {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {}",
                g.center.x, g.center.y, g.center.z, g.radius, g.color[0], g.color[1], g.color[2], g.opacity
            );
        }
        s
    }

    pub fn from_checkpoint_str(text: &str, name: &str) -> Result<Self> {
        let err = |line: usize, msg: &str| Error::Parse {
            file: name.to_string(),
            line,
            msg: msg.to_string(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, l)) if l.trim() == CHECKPOINT_MAGIC => {}
            _ => return Err(err(1, "missing checkpoint header")),
        }
        let mut header = |key: &str| -> Result<u64> {
            let (i, l) = lines.next().ok_or_else(|| err(0, "truncated header"))?;
            l.strip_prefix(key)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| err(i + 1, &format!("expected '{key} <n>'")))
        };
        let count = header("count")? as usize;
        let generation = header("generation")?;
        let mut gaussians = Vec::with_capacity(count);
        for (i, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let v: Vec<f64> = l
                .split_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| err(i + 1, "bad number"))?;
            if v.len() != 8 {
                return Err(err(i + 1, "expected 8 columns"));
            }
            let g = Gaussian {
                center: Vec3::new(v[0], v[1], v[2]),
                radius: v[3],
                color: [v[4], v[5], v[6]],
                opacity: v[7],
            };
            if !g.is_valid() {
                return Err(err(i + 1, "gaussian violates parameter bounds"));
            }
            gaussians.push(g);
        }
        if gaussians.len() != count {
            return Err(err(0, "row count does not match header"));
        }
        Ok(Self {
            gaussians,
            generation,
        })
    }
}

/// Appends one Gaussian per valid-depth pixel whose border mask is below
/// `threshold`. The radius makes the new splat one pixel wide at its own
/// depth (`r = d / fx`).
pub fn densify(
    map: &mut GaussianMap,
    frame: &Frame,
    pose: &SE3Pose,
    border_mask: &ScalarImage,
    threshold: f64,
    init_opacity: f64,
) -> Result<usize> {
    let k = &frame.intrinsics;
    if border_mask.width != frame.width() || border_mask.height != frame.height() {
        return Err(Error::Precondition(
            "border mask and frame dimensions differ".into(),
        ));
    }
    let mut fresh = Vec::new();
    for y in 0..frame.height() {
        for x in 0..frame.width() {
            let d = frame.depth.get(x, y);
            if !(d > 0.0) || border_mask.get(x, y) >= threshold {
                continue;
            }
            let center = backproject(k, pose, &PixelCoord::new(x as f64, y as f64), d)?;
            fresh.push(Gaussian {
                center,
                radius: d / k.fx,
                color: frame.color.get(x, y).map(|c| c.clamp(0.0, 1.0)),
                opacity: init_opacity,
            });
        }
    }
    Ok(map.extend(fresh))
}

/// Removes Gaussians with opacity outside `[tau, max_opacity]`.
pub fn prune(map: &mut GaussianMap, tau: f64, max_opacity: f64) -> usize {
    let keep = prune_mask(map, tau, max_opacity);
    map.retain_mask(&keep)
}

pub fn prune_mask(map: &GaussianMap, tau: f64, max_opacity: f64) -> Vec<bool> {
    map.gaussians
        .iter()
        .map(|g| g.opacity >= tau && g.opacity <= max_opacity)
        .collect()
}
