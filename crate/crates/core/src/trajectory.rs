//! Timestamped pose sequences and the TUM trajectory text format
//! (`timestamp tx ty tz qx qy qz qw`, `#` comments).

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{SE3Pose, Vec3};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    pub poses: Vec<(f64, SE3Pose)>,
}

impl Trajectory {
    pub fn new(poses: Vec<(f64, SE3Pose)>) -> Result<Self> {
        if poses.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::Precondition(
                "trajectory timestamps must be strictly increasing".into(),
            ));
        }
        Ok(Self { poses })
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.poses.iter().map(|p| p.0).collect()
    }

    /// Sum of consecutive translation distances.
    pub fn path_length(&self) -> f64 {
        self.poses
            .windows(2)
            .map(|w| (w[1].1.translation - w[0].1.translation).norm())
            .sum()
    }

    pub fn to_tum_string(&self) -> String {
        let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
        for (t, p) in &self.poses {
            let q = p.quaternion();
            let tr = p.translation;
            let _ = writeln!(
                s,
                "{t:.6} {} {} {} {} {} {} {}",
                tr.x, tr.y, tr.z, q.i, q.j, q.k, q.w
            );
        }
        s
    }

    pub fn save_tum(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_tum_string())?;
        Ok(())
    }

    pub fn load_tum(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_tum(&text, &path.display().to_string())
    }

    pub fn parse_tum(text: &str, name: &str) -> Result<Self> {
        let mut poses = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: Vec<f64> = line
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    file: name.into(),
                    line: i + 1,
                    msg: format!("{e}"),
                })?;
            if v.len() != 8 {
                return Err(Error::Parse {
                    file: name.into(),
                    line: i + 1,
                    msg: format!("expected 8 columns, found {}", v.len()),
                });
            }
            poses.push((
                v[0],
                SE3Pose::from_quaternion(Vec3::new(v[1], v[2], v[3]), v[4], v[5], v[6], v[7]),
            ));
        }
        Self::new(poses)
    }
}
