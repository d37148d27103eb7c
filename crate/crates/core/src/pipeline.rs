//! The full run: track every frame, promote keyframes, select reconstruction
//! viewpoints, refine their render pose, map them, then a global bundle
//! adjustment and an offline evaluation pass.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use log::{debug, info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::bridge::{joint_optimize_pose, select_viewpoint, BridgeConfig};
use crate::config::{DatasetSource, RunConfig};
use crate::dataset::{add_noise, generate_synthetic, load_tum_sequence, Frame, FrameSource, GroundTruth};
use crate::error::{Error, Result};
use crate::eval::{ate_rmse, measure_fps, psnr, FrameMetrics, FrameTiming, MetricsReport};
use crate::frontend::{
    bundle_adjust, detect_features, match_features, select_keyframe, track_pose, BaObservation, BaProblem, Feature,
    KeyframeId, LandmarkId, LmConfig, SparseMap, TrackState,
};
use crate::geometry::{project_point, se3_log, CameraIntrinsics, PixelCoord, SE3Pose, Vec3};
use crate::imgbuf::RgbImage;
use crate::mapper::{ssim_value, Mapper};
use crate::rasterizer::render;
use crate::splat_map::GaussianMap;
use crate::trajectory::Trajectory;

/// One viewpoint-selection decision, written to the reconstruction log.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewpointRecord {
    pub frame: usize,
    pub keyframe: KeyframeId,
    pub reference: KeyframeId,
    pub matched: usize,
    pub total: usize,
    pub alpha: f64,
    pub beta: usize,
    pub selected: bool,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trajectory: Trajectory,
    pub map: GaussianMap,
    pub sparse: SparseMap,
    pub viewpoints: Vec<ViewpointRecord>,
    pub timings: Vec<FrameTiming>,
    pub intrinsics: CameraIntrinsics,
}

/// Opens the configured dataset. Synthetic sequences take their seed from the run.
pub fn load_source(cfg: &RunConfig) -> Result<Box<dyn FrameSource + Sync>> {
    match &cfg.dataset {
        DatasetSource::Synthetic => {
            let mut spec = cfg.synthetic.clone();
            spec.seed = cfg.seed;
            let mut seq = generate_synthetic(&spec)?;
            let n = &cfg.noise;
            if n.depth_sigma > 0.0 || n.depth_dropout > 0.0 || n.color_sigma > 0.0 || n.blur_kernel > 1 {
                for (i, f) in seq.frames.iter_mut().enumerate() {
                    let mut p = cfg.noise;
                    p.seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
                    *f = add_noise(f, &p);
                }
            }
            Ok(Box::new(seq) as Box<dyn FrameSource + Sync>)
        }
        DatasetSource::Tum(dir) => Ok(Box::new(load_tum_sequence(
            dir,
            cfg.tum_max_time_diff,
            cfg.tum_intrinsics,
            cfg.tum_downsample,
        )?)),
    }
}

/// Loads the dataset and runs the pipeline.
pub fn run(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let source = load_source(cfg)?;
    run_sequence(source.as_ref(), cfg)
}

/// Association source for the frontend.
enum Associations<'a> {
    /// Ground-truth landmark ids with exact projections.
    Oracle(&'a GroundTruth),
    Descriptors,
}

fn oracle_features(gt: &GroundTruth, index: usize, k: &CameraIntrinsics, sigma: f64, seed: u64) -> Vec<Feature> {
    let pose = gt.trajectory.poses[index].1;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let mut out = Vec::new();
    for (j, p) in gt.landmarks.iter().enumerate() {
        if !gt.visibility[index][j] {
            continue;
        }
        let Ok((px, d)) = project_point(k, &pose, p) else {
            continue;
        };
        let mut pixel = px;
        if sigma > 0.0 {
            pixel.u += noise.sample(&mut rng);
            pixel.v += noise.sample(&mut rng);
            if !k.contains(&pixel) {
                continue;
            }
        }
        let mut f = Feature::at(pixel);
        f.depth = Some(d);
        f.track_key = Some(j as u64);
        out.push(f);
    }
    out
}

fn descriptor_features(frame: &Frame, cfg: &RunConfig) -> Vec<Feature> {
    let mut feats = detect_features(&frame.color.to_gray(), cfg.frontend.feature_count, cfg.frontend.grid);
    for f in feats.iter_mut() {
        let (x, y) = (f.pixel.u.round() as usize, f.pixel.v.round() as usize);
        let d = frame.depth.get(x.min(frame.width() - 1), y.min(frame.height() - 1));
        f.depth = (d > 0.0).then_some(d);
    }
    feats
}

/// Landmark correspondences for the current features: `(feature index, landmark)`.
fn associate(features: &[Feature], sparse: &SparseMap, mode: &Associations, cfg: &RunConfig) -> Vec<(usize, LandmarkId)> {
    match mode {
        Associations::Oracle(_) => features
            .iter()
            .enumerate()
            .filter_map(|(i, f)| f.track_key.and_then(|key| sparse.landmark_for_key(key)).map(|l| (i, l)))
            .collect(),
        Associations::Descriptors => {
            let Some(kf) = sparse.last_keyframe() else {
                return Vec::new();
            };
            let pairs = match_features(&kf.features, features, cfg.frontend.max_hamming, cfg.frontend.match_ratio);
            pairs
                .into_iter()
                .filter_map(|(a, b)| kf.features[a].landmark_id.map(|l| (b, l)))
                .collect()
        }
    }
}

/// Global bundle adjustment over all keyframes and landmarks seen at least twice.
fn global_bundle_adjust(sparse: &mut SparseMap, k: &CameraIntrinsics, cfg: &RunConfig) -> Result<bool> {
    if sparse.keyframes.len() < 2 {
        return Ok(false);
    }
    let mut index: BTreeMap<LandmarkId, usize> = BTreeMap::new();
    let mut points = Vec::new();
    for (id, l) in &sparse.landmarks {
        if l.observations.len() >= 2 {
            index.insert(*id, points.len());
            points.push(l.position);
        }
    }
    if points.is_empty() {
        return Ok(false);
    }
    let mut observations = Vec::new();
    for (pi, kf) in sparse.keyframes.iter().enumerate() {
        for f in &kf.features {
            if let Some(&point) = f.landmark_id.as_ref().and_then(|l| index.get(l)) {
                observations.push(BaObservation {
                    pose: pi,
                    point,
                    pixel: f.pixel,
                });
            }
        }
    }
    let problem = BaProblem::new(sparse.keyframes.iter().map(|kf| kf.pose).collect(), points, observations);
    let lm = LmConfig {
        huber_delta: cfg.frontend.huber_delta,
        max_iters: cfg.frontend.ba_iters,
        ..Default::default()
    };
    let res = match bundle_adjust(&problem, k, true, &lm) {
        Ok(r) => r,
        Err(e @ (Error::Precondition(_) | Error::Diverged)) => {
            warn!("global bundle adjustment skipped: {e}");
            return Ok(false);
        }
        Err(e) => return Err(e),
    };
    info!(
        "global BA: cost {:.4e} -> {:.4e} in {} iterations",
        res.initial_cost, res.final_cost, res.iterations
    );
    let points: BTreeMap<LandmarkId, Vec3> = index.iter().map(|(id, &i)| (*id, res.points[i])).collect();
    sparse.update(&res.poses, &points);
    Ok(true)
}

struct FrameState {
    pose: SE3Pose,
    reference: KeyframeId,
    keyframe: bool,
    reconstruction: bool,
    tracked: usize,
    bridge_loss: Option<f64>,
    map_loss: Option<f64>,
    gaussians: usize,
}

pub fn run_sequence(source: &(dyn FrameSource + Sync), cfg: &RunConfig) -> Result<RunOutput> {
    cfg.validate()?;
    let n = cfg.max_frames.map_or(source.len(), |m| m.min(source.len()));
    if n == 0 {
        return Err(Error::NoFrames);
    }
    let mode = match source.ground_truth() {
        Some(gt) if cfg.frontend.oracle && !gt.landmarks.is_empty() => Associations::Oracle(gt),
        _ => Associations::Descriptors,
    };
    let lm_cfg = LmConfig {
        huber_delta: cfg.frontend.huber_delta,
        max_iters: cfg.frontend.track_iters,
        ..Default::default()
    };
    let bridge_cfg: BridgeConfig = cfg.bridge;
    let mut sparse = SparseMap::new();
    let mut map = GaussianMap::new();
    let mut mapper = Mapper::new(cfg.mapper, cfg.render);
    let mut state = TrackState::default();
    let mut frames: Vec<FrameState> = Vec::with_capacity(n);
    let mut timings: Vec<FrameTiming> = Vec::with_capacity(n);
    let mut viewpoints = Vec::new();
    let mut last_reconstruction: Option<KeyframeId> = None;
    let mut timestamps = Vec::with_capacity(n);
    let mut intrinsics = None;

    for i in 0..n {
        let wall = Instant::now();
        let mut t = FrameTiming::default();
        let frame = source.frame(i)?;
        let k = frame.intrinsics;
        intrinsics.get_or_insert(k);
        timestamps.push(frame.timestamp);
        t.stages[4] += wall.elapsed().as_secs_f64();

        let tic = Instant::now();
        let mut features = match &mode {
            Associations::Oracle(gt) => oracle_features(
                gt,
                i,
                &k,
                cfg.frontend.oracle_pixel_sigma,
                cfg.seed.wrapping_mul(7919).wrapping_add(i as u64),
            ),
            Associations::Descriptors => descriptor_features(&frame, cfg),
        };
        let mut fs = FrameState {
            pose: SE3Pose::identity(),
            reference: KeyframeId(0),
            keyframe: false,
            reconstruction: false,
            tracked: 0,
            bridge_loss: None,
            map_loss: None,
            gaussians: map.len(),
        };
        let mut inlier_matches: Vec<(Vec3, PixelCoord)> = Vec::new();
        if i == 0 {
            fs.keyframe = true;
        } else {
            let assoc = associate(&features, &sparse, &mode, cfg);
            let matches: Vec<(Vec3, PixelCoord)> = assoc
                .iter()
                .map(|&(fi, l)| (sparse.landmarks[&l].position, features[fi].pixel))
                .collect();
            let predicted = state.predict();
            let (pose, inliers) = match track_pose(&matches, &k, &predicted, &lm_cfg) {
                Ok(r) => (r.pose, r.inliers),
                Err(e @ (Error::InsufficientMatches { .. } | Error::Diverged)) => {
                    warn!("frame {i}: tracking failed ({e}); using the constant-velocity prediction");
                    (predicted, vec![false; matches.len()])
                }
                Err(e) => return Err(e),
            };
            for (&(fi, l), &ok) in assoc.iter().zip(&inliers) {
                if ok {
                    features[fi].landmark_id = Some(l);
                    inlier_matches.push((sparse.landmarks[&l].position, features[fi].pixel));
                } else {
                    // Outliers must not spawn a duplicate landmark for the same key.
                    features[fi].track_key = None;
                    features[fi].depth = None;
                }
            }
            fs.pose = pose;
            fs.tracked = inlier_matches.len();
            let reference = sparse.last_keyframe().expect("frame 0 is a keyframe");
            fs.reference = reference.id;
            state.velocity = se3_log(&pose.compose(&state.last_pose.inverse()));
            state.last_pose = pose;
            state.matched = fs.tracked;
            state.previous_total = reference.landmark_count();
            state.frames_since_keyframe += 1;
            fs.keyframe = select_keyframe(&state, cfg.frontend.min_tracked_ratio, cfg.frontend.min_frames_gap);
            debug!("frame {i}: tracked {}/{} keyframe {}", state.matched, state.previous_total, fs.keyframe);
        }
        let mut new_kf = None;
        if fs.keyframe {
            let id = sparse.add_keyframe(i, fs.pose, features, &k);
            fs.reference = id;
            new_kf = Some(id);
            state.frames_since_keyframe = 0;
        }
        t.stages[0] += tic.elapsed().as_secs_f64();

        if let Some(id) = new_kf {
            let select = match last_reconstruction {
                None => true,
                Some(r) => {
                    let m = sparse.covisibility(id, r);
                    let total = sparse.keyframe(r).landmark_count();
                    let selected = select_viewpoint(m, total, &bridge_cfg);
                    debug!("frame {i}: keyframe {id} covisibility {m}/{total} with {r}, selected {selected}");
                    viewpoints.push(ViewpointRecord {
                        frame: i,
                        keyframe: id,
                        reference: r,
                        matched: m,
                        total,
                        alpha: bridge_cfg.alpha,
                        beta: bridge_cfg.beta,
                        selected,
                    });
                    selected
                }
            };
            if select {
                let mut render_pose = sparse.keyframe(id).pose;
                if !map.is_empty() {
                    let tic = Instant::now();
                    let res = joint_optimize_pose(&frame, &inlier_matches, &map, &k, &render_pose, &bridge_cfg, &cfg.render)?;
                    if res.no_gated_pixels {
                        warn!("frame {i}: bridge found no gated pixels");
                    }
                    render_pose = res.pose;
                    fs.bridge_loss = Some(res.best.total);
                    t.stages[1] += tic.elapsed().as_secs_f64();
                }
                let tic = Instant::now();
                match mapper.map_frame(&mut map, &frame, &render_pose, cfg.densify_threshold, cfg.init_opacity) {
                    Ok(s) => {
                        fs.map_loss = Some(s.final_loss);
                        fs.reconstruction = true;
                        last_reconstruction = Some(id);
                    }
                    Err(Error::EmptyOverlap) => warn!("frame {i}: no pixel to map"),
                    Err(e) => return Err(e),
                }
                t.stages[2] += tic.elapsed().as_secs_f64();
            }
        }
        fs.gaussians = map.len();
        frames.push(fs);
        t.wall = wall.elapsed().as_secs_f64();
        timings.push(t);
    }

    // The bootstrap keyframe is mapped unconditionally; a run counts only if
    // some later keyframe passed viewpoint selection.
    if !viewpoints.iter().any(|v| v.selected) {
        return Err(Error::NoReconstructionFrames);
    }

    let k = intrinsics.expect("at least one frame");
    let tic = Instant::now();
    let before: Vec<SE3Pose> = sparse.keyframes.iter().map(|kf| kf.pose).collect();
    global_bundle_adjust(&mut sparse, &k, cfg)?;
    // Non-keyframes follow their reference keyframe rigidly.
    for f in frames.iter_mut() {
        let r = f.reference.0 as usize;
        let after = sparse.keyframes[r].pose;
        f.pose = after.compose(&before[r].inverse()).compose(&f.pose);
        if f.keyframe {
            f.pose = after;
        }
    }
    let ba_seconds = tic.elapsed().as_secs_f64();
    if let Some(last) = timings.last_mut() {
        last.stages[3] += ba_seconds;
        last.wall += ba_seconds;
    }

    let trajectory = Trajectory::new(timestamps.iter().zip(&frames).map(|(&t, f)| (t, f.pose)).collect())?;
    let reconstruction: BTreeSet<usize> = frames
        .iter()
        .enumerate()
        .filter(|(_, f)| f.reconstruction)
        .map(|(i, _)| i)
        .collect();
    let mut report = evaluate(source, &trajectory, &map, &reconstruction, cfg)?;
    let fps = measure_fps(&timings)?;
    report.fps = fps.fps;
    report.stage_seconds = fps.stage_seconds;
    report.keyframes = sparse.keyframes.len();
    for (m, (f, t)) in report.per_frame.iter_mut().zip(frames.iter().zip(&timings)) {
        m.keyframe = f.keyframe;
        m.tracked = f.tracked;
        m.bridge_loss = f.bridge_loss;
        m.map_loss = f.map_loss;
        m.gaussians = f.gaussians;
        m.seconds = t.wall;
    }
    info!(
        "run finished: {} frames, {} keyframes, {} reconstruction frames, {} Gaussians, {:.2} FPS",
        report.frames, report.keyframes, report.reconstruction_frames, report.gaussians, report.fps
    );
    Ok(RunOutput {
        report,
        trajectory,
        map,
        sparse,
        viewpoints,
        timings,
        intrinsics: k,
    })
}

/// Renders every trajectory frame from `map` and scores it against its input;
/// ATE is added when the source carries ground truth.
pub fn evaluate(
    source: &(dyn FrameSource + Sync),
    trajectory: &Trajectory,
    map: &GaussianMap,
    reconstruction: &BTreeSet<usize>,
    cfg: &RunConfig,
) -> Result<MetricsReport> {
    if trajectory.is_empty() {
        return Err(Error::NoFrames);
    }
    let n = trajectory.len().min(source.len());
    let per_frame: Vec<FrameMetrics> = (0..n)
        .into_par_iter()
        .map(|i| -> Result<FrameMetrics> {
            let frame = source.frame(i)?;
            let pose = trajectory.poses[i].1;
            let out = render(map, &frame.intrinsics, &pose, &cfg.render);
            Ok(FrameMetrics {
                index: i,
                timestamp: frame.timestamp,
                reconstruction: reconstruction.contains(&i),
                psnr: psnr(&out.color, &frame.color),
                ssim: ssim_value(&out.color, &frame.color)?,
                gaussians: map.len(),
                ..Default::default()
            })
        })
        .collect::<Result<_>>()?;
    let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let held: Vec<&FrameMetrics> = per_frame.iter().filter(|f| !f.reconstruction).collect();
    let (ate_rmse_cm, trajectory_length_m) = match source.ground_truth() {
        Some(gt) if gt.trajectory.len() >= 3 => {
            let gt_traj = &gt.trajectory;
            let ate = match ate_rmse(trajectory, gt_traj, cfg.tum_max_time_diff) {
                Ok(v) => Some(v),
                Err(e @ (Error::InsufficientPairs(_) | Error::Precondition(_))) => {
                    warn!("ATE unavailable: {e}");
                    None
                }
                Err(e) => return Err(e),
            };
            (ate, Some(gt_traj.path_length()))
        }
        _ => (None, None),
    };
    Ok(MetricsReport {
        ate_rmse_cm,
        psnr: mean(per_frame.iter().map(|f| f.psnr).collect()).unwrap_or(0.0),
        ssim: mean(per_frame.iter().map(|f| f.ssim).collect()).unwrap_or(0.0),
        psnr_heldout: mean(held.iter().map(|f| f.psnr).collect()),
        ssim_heldout: mean(held.iter().map(|f| f.ssim).collect()),
        frames: n,
        reconstruction_frames: reconstruction.len(),
        gaussians: map.len(),
        trajectory_length_m,
        per_frame,
        ..Default::default()
    })
}

/// Frame indices whose renders are saved: `count` evenly spaced over `n`.
pub fn sample_indices(n: usize, count: usize) -> Vec<usize> {
    if n == 0 || count == 0 {
        return Vec::new();
    }
    if count >= n {
        return (0..n).collect();
    }
    let mut v: Vec<usize> = (0..count).map(|j| j * (n - 1) / (count - 1).max(1)).collect();
    v.dedup();
    v
}

pub fn render_frame(map: &GaussianMap, k: &CameraIntrinsics, pose: &SE3Pose, cfg: &RunConfig) -> RgbImage {
    render(map, k, pose, &cfg.render).color
}

/// Writes trajectory, metrics, per-frame CSV, checkpoint, viewpoint log,
/// effective configuration and sampled renders into `dir`.
pub fn write_artifacts(out: &RunOutput, cfg: &RunConfig, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir.join("renders"))?;
    out.trajectory.save_tum(&dir.join("trajectory.txt"))?;
    out.report.save(&dir.join("metrics.txt"))?;
    out.report.save_frames_csv(&dir.join("frames.csv"))?;
    out.map.save(&dir.join("map.ckpt"))?;
    std::fs::write(dir.join("config.txt"), cfg.to_kv_string())?;
    let mut w = csv::Writer::from_path(dir.join("viewpoints.csv"))?;
    w.write_record(["frame", "keyframe", "reference", "matched", "total", "alpha", "beta", "selected"])?;
    for v in &out.viewpoints {
        w.write_record([
            v.frame.to_string(),
            v.keyframe.0.to_string(),
            v.reference.0.to_string(),
            v.matched.to_string(),
            v.total.to_string(),
            v.alpha.to_string(),
            v.beta.to_string(),
            (v.selected as u8).to_string(),
        ])?;
    }
    w.flush()?;
    for i in sample_indices(out.trajectory.len(), cfg.render_samples) {
        let img = render_frame(&out.map, &out.intrinsics, &out.trajectory.poses[i].1, cfg);
        img.save_png(&dir.join("renders").join(format!("frame_{i:05}.png")))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub t: usize,
    pub alpha: f64,
    pub fps: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub rmse_cm: Option<f64>,
    /// `ok` or `failed: <error code>`.
    pub status: String,
}

/// Runs the pipeline at every `(t, α)` grid point, `t` outermost. Failures
/// are recorded in their row and the sweep continues. Each point runs
/// `repeats` times and reports its fastest run; every other output is
/// identical across repeats.
pub fn sweep(cfg: &RunConfig, ts: &[usize], alphas: &[f64], repeats: usize) -> Result<Vec<SweepRow>> {
    if ts.is_empty() || alphas.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if repeats == 0 {
        return Err(Error::Config("sweep needs at least one repeat".into()));
    }
    let source = load_source(cfg);
    let grid: Vec<(usize, f64)> = ts.iter().flat_map(|&t| alphas.iter().map(move |&a| (t, a))).collect();
    // Repeats go round-robin over the grid so slow periods on a shared
    // machine do not land on a single point.
    let mut best: Vec<Result<Option<RunOutput>>> = grid.iter().map(|_| Ok(None)).collect();
    for _ in 0..repeats {
        for (slot, &(t, alpha)) in best.iter_mut().zip(&grid) {
            let Ok(current) = slot else { continue };
            let mut c = cfg.clone();
            c.bridge.iterations = t;
            c.bridge.alpha = alpha;
            let res = match &source {
                Ok(s) => run_sequence(s.as_ref(), &c),
                Err(e) => Err(Error::Config(format!("{}: {e}", e.code()))),
            };
            match res {
                Ok(o) => {
                    if current.as_ref().is_none_or(|b| o.report.fps > b.report.fps) {
                        *current = Some(o);
                    }
                }
                Err(e) => *slot = Err(e),
            }
        }
    }
    let mut rows = Vec::with_capacity(grid.len());
    for (res, &(t, alpha)) in best.into_iter().zip(&grid) {
        let row = match res {
            Ok(o) => {
                let o = o.expect("at least one repeat");
                SweepRow {
                    t,
                    alpha,
                    fps: Some(o.report.fps),
                    psnr: Some(o.report.psnr),
                    ssim: Some(o.report.ssim),
                    rmse_cm: o.report.ate_rmse_cm,
                    status: "ok".into(),
                }
            }
            Err(e) => {
                warn!("sweep point t={t} alpha={alpha} failed: {e}");
                let code = match (&source, &e) {
                    (Err(src), _) => src.code(),
                    _ => e.code(),
                };
                SweepRow {
                    t,
                    alpha,
                    fps: None,
                    psnr: None,
                    ssim: None,
                    rmse_cm: None,
                    status: format!("failed: {code}"),
                }
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["t", "alpha", "fps", "psnr", "ssim", "lpips", "rmse", "status"])?;
    let o = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
    for r in rows {
        w.write_record([
            r.t.to_string(),
            r.alpha.to_string(),
            o(r.fps),
            o(r.psnr),
            o(r.ssim),
            "NA".into(),
            o(r.rmse_cm),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
