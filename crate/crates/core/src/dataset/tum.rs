use std::path::{Path, PathBuf};

use log::info;

use super::{Frame, FrameSource, GroundTruth};
use crate::error::{Error, Result};
use crate::geometry::CameraIntrinsics;
use crate::imgbuf::{RgbImage, ScalarImage};
use crate::trajectory::Trajectory;

/// Optional file with `fx fy cx cy width height`, written by the synthetic exporter.
pub const CALIBRATION_FILE: &str = "calibration.txt";

/// Greedy nearest-timestamp association. Candidate pairs within `max_diff`
/// are gathered with a sorted two-pointer sweep and accepted in order of
/// increasing time difference; no entry is used twice. Output is sorted by
/// the index into `a`.
pub fn associate(a: &[f64], b: &[f64], max_diff: f64) -> Vec<(usize, usize)> {
    let mut ia: Vec<usize> = (0..a.len()).collect();
    let mut ib: Vec<usize> = (0..b.len()).collect();
    ia.sort_by(|&x, &y| a[x].total_cmp(&a[y]));
    ib.sort_by(|&x, &y| b[x].total_cmp(&b[y]));

    let mut candidates = Vec::new();
    let mut lo = 0;
    for &i in &ia {
        while lo < ib.len() && b[ib[lo]] < a[i] - max_diff {
            lo += 1;
        }
        let mut j = lo;
        while j < ib.len() && b[ib[j]] <= a[i] + max_diff {
            let k = ib[j];
            let diff = (a[i] - b[k]).abs();
            candidates.push((diff, a[i].min(b[k]), a[i].max(b[k]), i, k));
            j += 1;
        }
    }
    candidates.sort_by(|x, y| {
        x.0.total_cmp(&y.0)
            .then(x.1.total_cmp(&y.1))
            .then(x.2.total_cmp(&y.2))
    });
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, _, _, i, k) in candidates {
        if !used_a[i] && !used_b[k] {
            used_a[i] = true;
            used_b[k] = true;
            pairs.push((i, k));
        }
    }
    pairs.sort_unstable();
    pairs
}

fn read_index(path: &Path) -> Result<Vec<(f64, String)>> {
    if !path.exists() {
        return Err(Error::MissingIndexFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let parse_err = |msg: &str| Error::Parse {
            file: path.display().to_string(),
            line: i + 1,
            msg: msg.into(),
        };
        let t: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| parse_err("bad timestamp"))?;
        let file = it.next().ok_or_else(|| parse_err("missing file name"))?;
        out.push((t, file.to_string()));
    }
    Ok(out)
}

fn read_calibration(path: &Path) -> Result<CameraIntrinsics> {
    let text = std::fs::read_to_string(path)?;
    let v: Vec<f64> = text
        .split_whitespace()
        .filter(|s| !s.starts_with('#'))
        .filter_map(|s| s.parse().ok())
        .collect();
    if v.len() != 6 {
        return Err(Error::Parse {
            file: path.display().to_string(),
            line: 1,
            msg: "expected fx fy cx cy width height".into(),
        });
    }
    CameraIntrinsics::new(v[0], v[1], v[2], v[3], v[4] as usize, v[5] as usize)
}

/// A TUM-layout sequence whose images are decoded on demand.
#[derive(Clone, Debug)]
pub struct TumSequence {
    pub root: PathBuf,
    /// `(rgb timestamp, rgb file, depth file)` per associated frame.
    pub entries: Vec<(f64, String, String)>,
    /// Full-resolution intrinsics before downsampling.
    pub intrinsics: CameraIntrinsics,
    pub downsample: usize,
    pub ground_truth: Option<GroundTruth>,
    pub dropped_rgb: usize,
    pub dropped_depth: usize,
    pub dropped_groundtruth: usize,
}

impl FrameSource for TumSequence {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let (t, rgb, depth) = &self.entries[index];
        let color = RgbImage::load_png(&self.root.join(rgb))?;
        let depth = ScalarImage::load_depth_png(&self.root.join(depth))?;
        let k = self.intrinsics.downsampled(self.downsample);
        Frame::new(
            *t,
            color.downsample(self.downsample),
            depth.downsample_depth(self.downsample),
            k,
        )
    }

    fn ground_truth(&self) -> Option<&GroundTruth> {
        self.ground_truth.as_ref()
    }
}

/// Reads `rgb.txt`, `depth.txt` and, when present, `groundtruth.txt` and
/// `calibration.txt`. Frames without a ground-truth match are dropped when
/// ground truth exists.
pub fn load_tum_sequence(
    dir: &Path,
    max_time_diff: f64,
    default_intrinsics: CameraIntrinsics,
    downsample: usize,
) -> Result<TumSequence> {
    let rgb = read_index(&dir.join("rgb.txt"))?;
    let depth = read_index(&dir.join("depth.txt"))?;
    let rgb_t: Vec<f64> = rgb.iter().map(|e| e.0).collect();
    let depth_t: Vec<f64> = depth.iter().map(|e| e.0).collect();
    let pairs = associate(&rgb_t, &depth_t, max_time_diff);
    let dropped_rgb = rgb.len() - pairs.len();
    let dropped_depth = depth.len() - pairs.len();

    let mut entries: Vec<(f64, String, String)> = pairs
        .iter()
        .map(|&(i, j)| (rgb[i].0, rgb[i].1.clone(), depth[j].1.clone()))
        .collect();

    let gt_path = dir.join("groundtruth.txt");
    let mut dropped_groundtruth = 0;
    let ground_truth = if gt_path.exists() {
        let gt = Trajectory::load_tum(&gt_path)?;
        let frame_t: Vec<f64> = entries.iter().map(|e| e.0).collect();
        let gt_t = gt.timestamps();
        let matched = associate(&frame_t, &gt_t, max_time_diff);
        dropped_groundtruth = entries.len() - matched.len();
        let kept: Vec<_> = matched.iter().map(|&(i, _)| entries[i].clone()).collect();
        let poses = matched.iter().map(|&(_, j)| gt.poses[j]).collect();
        entries = kept;
        Some(GroundTruth {
            trajectory: Trajectory::new(poses)?,
            ..Default::default()
        })
    } else {
        None
    };

    if entries.is_empty() {
        return Err(Error::NoPairs);
    }
    let cal = dir.join(CALIBRATION_FILE);
    let intrinsics = if cal.exists() {
        read_calibration(&cal)?
    } else {
        default_intrinsics
    };
    info!(
        "loaded {} frames from {} (dropped rgb {}, depth {}, unmatched ground truth {})",
        entries.len(),
        dir.display(),
        dropped_rgb,
        dropped_depth,
        dropped_groundtruth
    );
    Ok(TumSequence {
        root: dir.to_path_buf(),
        entries,
        intrinsics,
        downsample: downsample.max(1),
        ground_truth,
        dropped_rgb,
        dropped_depth,
        dropped_groundtruth,
    })
}

/// Writes frames in TUM layout: `rgb/`, `depth/` (16-bit PNG, scale 5000),
/// the three index files and `calibration.txt`.
pub fn write_tum_sequence(dir: &Path, frames: &[Frame], ground_truth: Option<&Trajectory>) -> Result<()> {
    std::fs::create_dir_all(dir.join("rgb"))?;
    std::fs::create_dir_all(dir.join("depth"))?;
    let mut rgb_txt = String::from("# color images\n# timestamp filename\n");
    let mut depth_txt = String::from("# depth maps\n# timestamp filename\n");
    for f in frames {
        let name = format!("{:.6}.png", f.timestamp);
        f.color.save_png(&dir.join("rgb").join(&name))?;
        f.depth.save_depth_png(&dir.join("depth").join(&name))?;
        rgb_txt.push_str(&format!("{:.6} rgb/{name}\n", f.timestamp));
        depth_txt.push_str(&format!("{:.6} depth/{name}\n", f.timestamp));
    }
    std::fs::write(dir.join("rgb.txt"), rgb_txt)?;
    std::fs::write(dir.join("depth.txt"), depth_txt)?;
    if let Some(gt) = ground_truth {
        gt.save_tum(&dir.join("groundtruth.txt"))?;
    }
    if let Some(f) = frames.first() {
        let k = f.intrinsics;
        std::fs::write(
            dir.join(CALIBRATION_FILE),
            format!("# fx fy cx cy width height\n{} {} {} {} {} {}\n", k.fx, k.fy, k.cx, k.cy, k.width, k.height),
        )?;
    }
    Ok(())
}
