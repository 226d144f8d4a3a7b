//! End-to-end orchestration: scene bundles on disk, the full calibration
//! pipeline (match -> lift -> pairwise -> graph), ratio sweeps, and point
//! cloud merging.

use crate::camera::{backproject, DepthMap, Intrinsics};
use crate::error::{Error, Result};
use crate::graph::{
    chain_initialize, closure_residual, mean_node_error, optimize, read_graph, write_nodes,
    PoseEdge, PoseGraph,
};
use crate::lie::Pose;
use crate::matching::{
    build_correspondences, filter_by_min_distance, match_descriptors, read_keypoints,
    restrict_to_overlap, write_keypoints, MatchFilterConfig,
};
use crate::pairwise::{estimate_pose, pose_error, SolverConfig};
use crate::rigsim::{build_rig, default_intrinsics, overlap_region, CameraFrame, NoiseSpec, RigSpec, SyntheticScene};
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

/// Quantization step of depth files, meters (1 mm, covers 0..65.5 m in u16).
pub const DEPTH_SCALE: f32 = 0.001;

/// Scene generation parameters as stored in `scene.json`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SceneConfig {
    #[serde(default)]
    pub rig: RigSpec,
    #[serde(default = "default_noise")]
    pub noise: NoiseSpec,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_room_size")]
    pub room_size: f64,
}

fn default_noise() -> NoiseSpec {
    NoiseSpec::kinect_like(0)
}

fn default_density() -> f64 {
    crate::rigsim::DEFAULT_DENSITY
}

fn default_room_size() -> f64 {
    crate::rigsim::DEFAULT_ROOM_SIZE
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            rig: RigSpec::default(),
            noise: default_noise(),
            density: default_density(),
            room_size: default_room_size(),
        }
    }
}

/// Everything the calibration stage needs; ground truth is optional and only
/// used for reporting.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub rig: RigSpec,
    pub intrinsics: Intrinsics,
    pub room_size: f64,
    pub frames: Vec<CameraFrame>,
    pub truth: Option<Vec<Pose>>,
}

impl From<&SyntheticScene> for SceneInput {
    fn from(s: &SyntheticScene) -> Self {
        Self {
            rig: s.spec,
            intrinsics: s.intrinsics,
            room_size: s.room_size,
            frames: s.frames.clone(),
            truth: Some(s.truth_poses.clone()),
        }
    }
}

/// Per-pair diagnostics of one calibration run.
#[derive(Debug, Clone)]
pub struct PairSummary {
    pub from: usize,
    pub to: usize,
    pub n_matches: usize,
    pub n_correspondences: usize,
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Error against ground truth, when available.
    pub truth_error: Option<(f64, f64)>,
}

/// Output of the full pipeline.
#[derive(Debug, Clone)]
pub struct CalibrationResult {
    pub pairs: Vec<PairSummary>,
    pub initial: PoseGraph,
    pub optimized: PoseGraph,
    /// Loop closure residual (rot deg, trans cm) before / after optimization.
    pub initial_closure: (f64, f64),
    pub optimized_closure: (f64, f64),
    /// Mean per-node error against ground truth, when available.
    pub initial_error: Option<(f64, f64)>,
    pub optimized_error: Option<(f64, f64)>,
}

/// Runs matching, pairwise estimation, and graph optimization on a scene.
///
/// Keypoints of each pair are first restricted to the overlap rectangles
/// predicted by the nominal rig design; `ratio` is the min-distance-ratio
/// filter threshold. Pairs run in parallel, results are order-stable.
pub fn calibrate(input: &SceneInput, ratio: f64, solver: &SolverConfig) -> Result<CalibrationResult> {
    let n = input.rig.n_cameras as usize;
    if input.frames.len() != n {
        return Err(Error::Config(format!(
            "expected {n} frames, got {}",
            input.frames.len()
        )));
    }
    let nominal = build_rig(&input.rig);
    let k = input.intrinsics;
    let eval_distance = input.room_size / 2.0 - input.rig.ring_radius;
    let filter = MatchFilterConfig { ratio };

    let pair_ids: Vec<(usize, usize)> = (1..=n).map(|i| (i, i % n + 1)).collect();
    let results: Vec<Result<(PoseEdge, PairSummary)>> = pair_ids
        .par_iter()
        .map(|&(from, to)| {
            let region_a = overlap_region(&nominal[from - 1], &nominal[to - 1], &k, eval_distance)?;
            let region_b = overlap_region(&nominal[to - 1], &nominal[from - 1], &k, eval_distance)?;
            let kps_a = restrict_to_overlap(&input.frames[from - 1].keypoints, &region_a);
            let kps_b = restrict_to_overlap(&input.frames[to - 1].keypoints, &region_b);
            let matches = filter_by_min_distance(&match_descriptors(&kps_a, &kps_b)?, &filter)?;
            let corr = build_correspondences(
                &matches,
                &kps_a,
                &kps_b,
                &input.frames[from - 1].depth,
                &input.frames[to - 1].depth,
                &k,
            )?;
            let est = estimate_pose(&corr, solver)?;
            let truth_error = input.truth.as_ref().map(|truth| {
                let rel = truth[to - 1].inverse().compose(&truth[from - 1]);
                pose_error(&est.pose, &rel)
            });
            let summary = PairSummary {
                from,
                to,
                n_matches: matches.len(),
                n_correspondences: corr.len(),
                rmse: est.rmse,
                iterations: est.iterations,
                converged: est.converged,
                truth_error,
            };
            let edge = PoseEdge::new(from, to, est.pose, est.inlier_count as f64);
            Ok((edge, summary))
        })
        .collect();

    let mut edges = Vec::with_capacity(n);
    let mut pairs = Vec::with_capacity(n);
    for r in results {
        let (edge, summary) = r?;
        edges.push(edge);
        pairs.push(summary);
    }

    let initial = chain_initialize(&edges, n)?;
    let initial_closure = closure_residual(&initial)?;
    let optimized = optimize(&initial, solver)?;
    let optimized_closure = closure_residual(&optimized)?;
    let (initial_error, optimized_error) = match &input.truth {
        Some(truth) => (
            Some(mean_node_error(&initial, truth)),
            Some(mean_node_error(&optimized, truth)),
        ),
        None => (None, None),
    };

    Ok(CalibrationResult {
        pairs,
        initial,
        optimized,
        initial_closure,
        optimized_closure,
        initial_error,
        optimized_error,
    })
}

/// One row of a ratio sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub ratio: f64,
    pub mean_correspondences: f64,
    pub initial_rot_deg: f64,
    pub initial_trans_cm: f64,
    pub optimized_rot_deg: f64,
    pub optimized_trans_cm: f64,
    pub closure_rot_deg: f64,
    pub closure_trans_cm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
}

/// Re-runs calibration on one scene for every ratio; the scene (and thus its
/// noise) is fixed so rows differ only through the match filter.
pub fn sweep(input: &SceneInput, ratios: &[f64], solver: &SolverConfig) -> Result<SweepReport> {
    if input.truth.is_none() {
        return Err(Error::Config("sweep requires ground truth".into()));
    }
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let r = calibrate(input, ratio, solver)?;
        let mean_corr = r.pairs.iter().map(|p| p.n_correspondences).sum::<usize>() as f64
            / r.pairs.len() as f64;
        let (ir, it) = r.initial_error.expect("truth checked above");
        let (or, ot) = r.optimized_error.expect("truth checked above");
        rows.push(SweepRow {
            ratio,
            mean_correspondences: mean_corr,
            initial_rot_deg: ir,
            initial_trans_cm: it,
            optimized_rot_deg: or,
            optimized_trans_cm: ot,
            closure_rot_deg: r.optimized_closure.0,
            closure_trans_cm: r.optimized_closure.1,
        });
    }
    Ok(SweepReport { rows })
}

const SWEEP_HEADER: &str = "ratio,mean_correspondences,initial_rot_deg,initial_trans_cm,optimized_rot_deg,optimized_trans_cm,closure_rot_deg,closure_trans_cm";

/// Writes the sweep CSV; floats use shortest round-trip formatting so the
/// file parses back bit-identically.
pub fn write_sweep_csv<W: Write>(mut w: W, report: &SweepReport) -> Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in &report.rows {
        writeln!(
            w,
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.ratio,
            r.mean_correspondences,
            r.initial_rot_deg,
            r.initial_trans_cm,
            r.optimized_rot_deg,
            r.optimized_trans_cm,
            r.closure_rot_deg,
            r.closure_trans_cm
        )?;
    }
    Ok(())
}

pub fn read_sweep_csv<R: BufRead>(r: R, path: &Path) -> Result<SweepReport> {
    let bad = |line: usize, reason: &str| Error::Parse {
        path: path.display().to_string(),
        reason: format!("line {}: {}", line + 1, reason),
    };
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, Ok(h))) if h == SWEEP_HEADER => {}
        Some((i, Ok(_))) => return Err(bad(i, "unexpected header")),
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(bad(0, "empty file")),
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<f64> = line
            .split(',')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad(i, "bad number")))
            .collect::<Result<_>>()?;
        if f.len() != 8 {
            return Err(bad(i, "expected 8 columns"));
        }
        rows.push(SweepRow {
            ratio: f[0],
            mean_correspondences: f[1],
            initial_rot_deg: f[2],
            initial_trans_cm: f[3],
            optimized_rot_deg: f[4],
            optimized_trans_cm: f[5],
            closure_rot_deg: f[6],
            closure_trans_cm: f[7],
        });
    }
    Ok(SweepReport { rows })
}

/// Merges every camera's valid depth pixels into one cloud in the reference
/// frame using the calibrated node poses. `stride` subsamples the pixel grid.
pub fn merge_cloud(
    frames: &[CameraFrame],
    graph: &PoseGraph,
    k: &Intrinsics,
    stride: u32,
) -> Vec<Vector3<f64>> {
    assert!(stride >= 1);
    let mut cloud = Vec::new();
    for (frame, node) in frames.iter().zip(&graph.nodes) {
        for px in frame.depth.valid_pixels() {
            if !(px.u as u32).is_multiple_of(stride) || !(px.v as u32).is_multiple_of(stride) {
                continue;
            }
            // valid pixels always have positive depth
            let p = backproject(&px, k).expect("positive depth");
            cloud.push(node.pose.transform_point(&p));
        }
    }
    cloud
}

/// Writes a binary little-endian PLY with float32 x y z.
pub fn write_ply<W: Write>(mut w: W, points: &[Vector3<f64>]) -> Result<()> {
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        points.len()
    )?;
    for p in points {
        for c in [p.x, p.y, p.z] {
            w.write_all(&(c as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

/// Writes `bytes` to `path` via a temporary file in the same directory plus
/// an atomic rename, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn cam_stem(i: usize) -> String {
    format!("cam{i:02}")
}

/// Saves a scene bundle: `scene.json`, per-camera `camNN.keypoints.txt` and
/// `camNN.depth.prdm`, and `truth_poses.txt`.
pub fn save_scene(dir: &Path, scene: &SyntheticScene) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let config = SceneConfig {
        rig: scene.spec,
        noise: scene.noise,
        density: scene.density,
        room_size: scene.room_size,
    };
    let json = serde_json::to_vec_pretty(&config)
        .map_err(|e| Error::Config(format!("serializing scene.json: {e}")))?;
    write_atomic(&dir.join("scene.json"), &json)?;

    for (i, frame) in scene.frames.iter().enumerate() {
        let stem = cam_stem(i + 1);
        let mut kp_buf = Vec::new();
        write_keypoints(&mut kp_buf, &frame.keypoints)?;
        write_atomic(&dir.join(format!("{stem}.keypoints.txt")), &kp_buf)?;
        let mut dm_buf = Vec::new();
        frame.depth.write_binary(&mut dm_buf, DEPTH_SCALE)?;
        write_atomic(&dir.join(format!("{stem}.depth.prdm")), &dm_buf)?;
    }

    let mut truth_buf = Vec::new();
    write_nodes(&mut truth_buf, &scene.truth_poses)?;
    write_atomic(&dir.join("truth_poses.txt"), &truth_buf)?;
    Ok(())
}

/// Loads a bundle written by [`save_scene`]. Depth values round-trip through
/// the millimeter quantization of the binary format.
pub fn load_scene(dir: &Path) -> Result<(SceneConfig, SceneInput)> {
    let config_path = dir.join("scene.json");
    let json = std::fs::read(&config_path)?;
    let config: SceneConfig = serde_json::from_slice(&json).map_err(|e| Error::Parse {
        path: config_path.display().to_string(),
        reason: e.to_string(),
    })?;
    config.rig.validate()?;
    let k = default_intrinsics(&config.rig);

    let mut frames = Vec::with_capacity(config.rig.n_cameras as usize);
    for i in 1..=config.rig.n_cameras as usize {
        let stem = cam_stem(i);
        let kp_path = dir.join(format!("{stem}.keypoints.txt"));
        let f = std::fs::File::open(&kp_path)?;
        let keypoints = read_keypoints(std::io::BufReader::new(f), &kp_path)?;
        let depth = DepthMap::load(&dir.join(format!("{stem}.depth.prdm")), k)?;
        frames.push(CameraFrame { keypoints, depth });
    }

    let truth_path = dir.join("truth_poses.txt");
    let truth = if truth_path.exists() {
        let f = std::fs::File::open(&truth_path)?;
        let g = read_graph(std::io::BufReader::new(f), &truth_path)?;
        Some(g.nodes.into_iter().map(|n| n.pose).collect())
    } else {
        None
    };

    let input = SceneInput {
        rig: config.rig,
        intrinsics: k,
        room_size: config.room_size,
        frames,
        truth,
    };
    Ok((config, input))
}

/// Saves the calibration outputs next to each other: `initial_graph.txt`,
/// `optimized_graph.txt`, and `report.txt` with the per-pair table.
pub fn save_calibration(dir: &Path, result: &CalibrationResult) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    crate::graph::write_graph(&mut buf, &result.initial)?;
    write_atomic(&dir.join("initial_graph.txt"), &buf)?;
    let mut buf = Vec::new();
    crate::graph::write_graph(&mut buf, &result.optimized)?;
    write_atomic(&dir.join("optimized_graph.txt"), &buf)?;

    let mut report = Vec::new();
    for p in &result.pairs {
        write!(
            report,
            "pair {}->{}: matches {} correspondences {} rmse {:.6} iters {}{}",
            p.from,
            p.to,
            p.n_matches,
            p.n_correspondences,
            p.rmse,
            p.iterations,
            if p.converged { "" } else { " (budget)" }
        )?;
        if let Some((r, t)) = p.truth_error {
            write!(report, " err {r:.3}deg {t:.3}cm")?;
        }
        writeln!(report)?;
    }
    writeln!(
        report,
        "closure before: {:.4} deg {:.4} cm",
        result.initial_closure.0, result.initial_closure.1
    )?;
    writeln!(
        report,
        "closure after:  {:.4} deg {:.4} cm",
        result.optimized_closure.0, result.optimized_closure.1
    )?;
    if let (Some((ir, it)), Some((or, ot))) = (result.initial_error, result.optimized_error) {
        writeln!(report, "mean node error before: {ir:.4} deg {it:.4} cm")?;
        writeln!(report, "mean node error after:  {or:.4} deg {ot:.4} cm")?;
    }
    write_atomic(&dir.join("report.txt"), &report)?;
    Ok(())
}
