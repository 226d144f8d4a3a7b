//! Synthetic panoramic rig: a ground-truth camera ring inside a square room
//! whose walls carry descriptor landmarks, rendered to noisy keypoint frames
//! and depth maps with known geometry throughout.

use crate::camera::{backproject, project, DepthMap, DepthPixel, Intrinsics};
use crate::error::{Error, Result};
use crate::lie::{exp_map, Pose, Twist};
use crate::matching::{Keypoint, OverlapRegion, OUTLIER_ID};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Length of the simulated descriptors.
pub const DESCRIPTOR_DIM: usize = 32;

/// Landmarks per steradian of the wall band, used when no density is given.
pub const DEFAULT_DENSITY: f64 = 2000.0;

/// Square room side length in meters, used when no room size is given.
pub const DEFAULT_ROOM_SIZE: f64 = 3.2;

/// Geometry of the camera ring.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RigSpec {
    pub n_cameras: u32,
    /// Angular field of view along the ring direction, degrees.
    pub fov_deg: f64,
    /// Distance of the camera centers from the rig axis, meters.
    pub ring_radius: f64,
    /// Target pairwise overlap fraction; informational, the geometry is
    /// fully determined by `n_cameras` and `fov_deg`.
    pub overlap_fraction: f64,
}

impl Default for RigSpec {
    fn default() -> Self {
        Self { n_cameras: 12, fov_deg: 43.0, ring_radius: 0.15, overlap_fraction: 0.30 }
    }
}

impl RigSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_cameras < 3 {
            return Err(Error::Config("need at least 3 cameras".into()));
        }
        if self.fov_deg <= 0.0 || self.fov_deg >= 180.0 {
            return Err(Error::Config("fov_deg must be in (0, 180)".into()));
        }
        if self.overlap_fraction <= 0.0 || self.overlap_fraction >= 1.0 {
            return Err(Error::Config("overlap_fraction must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Observation noise model. `depth_sigma` is the depth standard deviation at
/// 2 m range and grows quadratically with range.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub pixel_sigma: f64,
    pub depth_sigma: f64,
    pub descriptor_sigma: f64,
    pub outlier_rate: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless(seed: u64) -> Self {
        Self { pixel_sigma: 0.0, depth_sigma: 0.0, descriptor_sigma: 0.0, outlier_rate: 0.0, seed }
    }

    /// Preset tuned to land pairwise errors in the magnitude band of a
    /// consumer structured-light sensor.
    pub fn kinect_like(seed: u64) -> Self {
        Self {
            pixel_sigma: 0.5,
            depth_sigma: 0.01,
            descriptor_sigma: 0.05,
            outlier_rate: 0.1,
            seed,
        }
    }

    fn depth_noise_sigma(&self, range: f64) -> f64 {
        self.depth_sigma * (range / 2.0) * (range / 2.0)
    }
}

/// A wall point with its reference descriptor.
#[derive(Debug, Clone)]
pub struct Landmark {
    pub position: Vector3<f64>,
    pub descriptor: Vec<f64>,
}

/// What one camera sees: keypoints plus its depth map.
#[derive(Debug, Clone)]
pub struct CameraFrame {
    pub keypoints: Vec<Keypoint>,
    pub depth: DepthMap,
}

/// A fully generated scene with ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub spec: RigSpec,
    pub noise: NoiseSpec,
    pub density: f64,
    pub room_size: f64,
    pub intrinsics: Intrinsics,
    pub landmarks: Vec<Landmark>,
    /// Camera-to-world pose per camera.
    pub truth_poses: Vec<Pose>,
    pub frames: Vec<CameraFrame>,
}

/// VGA intrinsics with the focal length set by the ring-direction FoV.
pub fn default_intrinsics(spec: &RigSpec) -> Intrinsics {
    let width = 640u32;
    let height = 480u32;
    let f = width as f64 / 2.0 / (spec.fov_deg.to_radians() / 2.0).tan();
    Intrinsics::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
}

/// Camera-to-world poses of the ring: camera i yawed by `2*pi*(i-1)/n` about
/// the rig axis (world z), centers at `ring_radius`, optical axes pointing
/// radially outward.
pub fn build_rig(spec: &RigSpec) -> Vec<Pose> {
    // camera 1 looks along world +x: camera x -> -world y (image u runs
    // against the ring direction), camera y -> -world z, camera z -> world x
    let base = Matrix3::new(
        0.0, 0.0, 1.0,
        -1.0, 0.0, 0.0,
        0.0, -1.0, 0.0,
    );
    (0..spec.n_cameras)
        .map(|i| {
            let yaw = 2.0 * std::f64::consts::PI * i as f64 / spec.n_cameras as f64;
            let rz = exp_map(&Twist::new(Vector3::zeros(), Vector3::new(0.0, 0.0, yaw))).rotation;
            Pose::new(rz * base, rz * Vector3::new(spec.ring_radius, 0.0, 0.0))
        })
        .collect()
}

/// First intersection of a ray from `origin` along `dir` with the four walls
/// of a square room of side `room_size` (walls span `|z| <= room_size / 4`).
fn wall_hit(origin: &Vector3<f64>, dir: &Vector3<f64>, room_size: f64) -> Option<f64> {
    let half = room_size / 2.0;
    let half_height = room_size / 4.0;
    let mut best: Option<f64> = None;
    let planes = [
        (0usize, half),
        (0, -half),
        (1, half),
        (1, -half),
    ];
    for (axis, coord) in planes {
        if dir[axis].abs() < 1e-12 {
            continue;
        }
        let t = (coord - origin[axis]) / dir[axis];
        if t <= 1e-9 {
            continue;
        }
        let p = origin + dir * t;
        let other = 1 - axis;
        if p[other].abs() <= half + 1e-9 && p.z.abs() <= half_height {
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    best
}

/// Scatters landmarks on the walls by sampling directions uniformly over the
/// elevation band covered by the cameras' vertical FoV; deterministic for a
/// fixed seed.
pub fn scatter_landmarks(
    spec: &RigSpec,
    density: f64,
    room_size: f64,
    noise: &NoiseSpec,
) -> Vec<Landmark> {
    assert!(density > 0.0);
    let k = default_intrinsics(spec);
    let elev_half = (k.height as f64 / 2.0 / k.fy).atan();
    let solid_angle = 4.0 * std::f64::consts::PI * elev_half.sin();
    let count = (density * solid_angle).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ 0x6c61_6e64);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let az = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
        let sin_e = rng.gen_range(-elev_half.sin()..elev_half.sin());
        let cos_e = (1.0 - sin_e * sin_e).sqrt();
        let dir = Vector3::new(cos_e * az.cos(), cos_e * az.sin(), sin_e);
        let Some(t) = wall_hit(&Vector3::zeros(), &dir, room_size) else {
            continue;
        };
        let descriptor = (0..DESCRIPTOR_DIM).map(|_| rng.sample(StandardNormal)).collect();
        out.push(Landmark { position: dir * t, descriptor });
    }
    out
}

/// Kinect v1 depth range in meters.
const RANGE_MIN: f64 = 0.5;
const RANGE_MAX: f64 = 5.0;

/// Renders what one camera observes: a dense wall depth map plus one noisy
/// keypoint per visible landmark, with spurious keypoints injected at
/// `outlier_rate`.
///
/// `stream` decorrelates the noise of different cameras of one scene.
pub fn render_observations(
    landmarks: &[Landmark],
    room_size: f64,
    camera: &Pose,
    k: &Intrinsics,
    noise: &NoiseSpec,
    stream: u64,
) -> (Vec<Keypoint>, DepthMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(noise.seed ^ (stream.wrapping_mul(0x9e37_79b9)) ^ 0x6f62_7376);
    let world_to_cam = camera.inverse();
    let mut depth = DepthMap::zeros(*k);

    // dense wall depth, one ray per pixel center
    for v in 0..k.height {
        for u in 0..k.width {
            let dir_cam = Vector3::new((u as f64 - k.u0) / k.fx, (v as f64 - k.v0) / k.fy, 1.0);
            let dir_world = camera.rotation * dir_cam;
            if let Some(t) = wall_hit(&camera.translation, &dir_world, room_size) {
                if (RANGE_MIN..=RANGE_MAX).contains(&t) {
                    let z = t + noise.depth_noise_sigma(t) * rng.sample::<f64, _>(StandardNormal);
                    depth.set(u, v, z.max(1e-3));
                }
            }
        }
    }

    // landmark projections with a z-buffer: a keypoint is emitted only when
    // it owns its depth cell, so occluded detections are culled
    struct Proj {
        u: f64,
        v: f64,
        z: f64,
        index: usize,
    }
    let mut projs: Vec<Proj> = Vec::new();
    for (index, lm) in landmarks.iter().enumerate() {
        let p_cam = world_to_cam.transform_point(&lm.position);
        if p_cam.z < RANGE_MIN || p_cam.z > RANGE_MAX {
            continue;
        }
        let Ok((u, v, z)) = project(&p_cam, k) else { continue };
        if !k.contains(u, v) {
            continue;
        }
        projs.push(Proj { u, v, z, index });
    }
    // mirrors the rounding of keypoint lifting so round trips stay exact
    let cell = |u: f64, v: f64| {
        (
            u.round().min(k.width as f64 - 1.0) as u32,
            v.round().min(k.height as f64 - 1.0) as u32,
        )
    };
    use std::collections::HashMap;
    let mut owner: HashMap<(u32, u32), (f64, usize)> = HashMap::new();
    for p in &projs {
        let key = cell(p.u, p.v);
        let entry = owner.entry(key).or_insert((p.z, p.index));
        if p.z < entry.0 {
            *entry = (p.z, p.index);
        }
    }

    let mut keypoints = Vec::new();
    for p in &projs {
        let key = cell(p.u, p.v);
        if owner[&key].1 != p.index {
            continue; // lost the cell to a nearer landmark
        }
        // a nearer wall in front of the landmark occludes it
        if depth.get(key.0, key.1) > 0.0 && depth.get(key.0, key.1) < p.z - 0.02 && noise.depth_sigma == 0.0 {
            continue;
        }
        let z_noisy = p.z + noise.depth_noise_sigma(p.z) * rng.sample::<f64, _>(StandardNormal);
        depth.set(key.0, key.1, z_noisy.max(1e-3));
        let u = p.u + noise.pixel_sigma * rng.sample::<f64, _>(StandardNormal);
        let v = p.v + noise.pixel_sigma * rng.sample::<f64, _>(StandardNormal);
        if !k.contains(u, v) {
            continue;
        }
        let descriptor = landmarks[p.index]
            .descriptor
            .iter()
            .map(|d| d + noise.descriptor_sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        keypoints.push(Keypoint { u, v, descriptor, id: Some(p.index as i64) });
    }

    let n_outliers = (noise.outlier_rate * keypoints.len() as f64).round() as usize;
    for _ in 0..n_outliers {
        let u = rng.gen_range(0.0..k.width as f64);
        let v = rng.gen_range(0.0..k.height as f64);
        let descriptor = (0..DESCRIPTOR_DIM).map(|_| rng.sample(StandardNormal)).collect();
        keypoints.push(Keypoint { u, v, descriptor, id: Some(OUTLIER_ID) });
    }

    (keypoints, depth)
}

/// Bounding rectangle, in camera a's image, of the pixels whose rays at
/// `eval_distance` are also seen by camera b.
pub fn overlap_region(
    cam_a: &Pose,
    cam_b: &Pose,
    k: &Intrinsics,
    eval_distance: f64,
) -> Result<OverlapRegion> {
    let b_inv = cam_b.inverse();
    let stride = 2u32;
    let mut bounds: Option<(f64, f64, f64, f64)> = None;
    for v in (0..k.height).step_by(stride as usize) {
        for u in (0..k.width).step_by(stride as usize) {
            let px = DepthPixel { u: u as f64, v: v as f64, z: eval_distance };
            let p_world = cam_a.transform_point(&backproject(&px, k).expect("positive depth"));
            let p_b = b_inv.transform_point(&p_world);
            let Ok((ub, vb, _)) = project(&p_b, k) else { continue };
            if !k.contains(ub, vb) {
                continue;
            }
            let (u, v) = (u as f64, v as f64);
            bounds = Some(match bounds {
                None => (u, v, u, v),
                Some((u0, v0, u1, v1)) => (u0.min(u), v0.min(v), u1.max(u), v1.max(v)),
            });
        }
    }
    let (u_min, v_min, u_max, v_max) = bounds.ok_or(Error::NoOverlap)?;
    Ok(OverlapRegion {
        u_min,
        v_min,
        u_max: (u_max + stride as f64).min(k.width as f64),
        v_max: (v_max + stride as f64).min(k.height as f64),
    })
}

impl SyntheticScene {
    /// Generates the whole scene; a pure function of its arguments.
    pub fn generate(spec: RigSpec, noise: NoiseSpec, density: f64, room_size: f64) -> Result<Self> {
        spec.validate()?;
        let intrinsics = default_intrinsics(&spec);
        let truth_poses = build_rig(&spec);
        let landmarks = scatter_landmarks(&spec, density, room_size, &noise);
        let frames = truth_poses
            .iter()
            .enumerate()
            .map(|(i, pose)| {
                let (keypoints, depth) =
                    render_observations(&landmarks, room_size, pose, &intrinsics, &noise, i as u64 + 1);
                CameraFrame { keypoints, depth }
            })
            .collect();
        Ok(Self { spec, noise, density, room_size, intrinsics, landmarks, truth_poses, frames })
    }

    /// Nominal distance from a camera to the facing wall, used to evaluate
    /// overlap rectangles.
    pub fn wall_distance(&self) -> f64 {
        self.room_size / 2.0 - self.spec.ring_radius
    }

    /// Ground-truth relative pose mapping camera `i` points into camera `j`
    /// points (1-based ids).
    pub fn truth_relative(&self, i: usize, j: usize) -> Pose {
        self.truth_poses[j - 1].inverse().compose(&self.truth_poses[i - 1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::lift_keypoint;
    use crate::pairwise::pose_error;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ring_of_12_has_30_degree_steps() {
        let spec = RigSpec::default();
        let poses = build_rig(&spec);
        assert_eq!(poses.len(), 12);
        for i in 0..12 {
            let j = (i + 1) % 12;
            let rel = poses[j].inverse().compose(&poses[i]);
            let (rot, _) = pose_error(&rel, &Pose::identity());
            assert_abs_diff_eq!(rot, 30.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn zero_radius_ring_is_pure_rotation() {
        let spec = RigSpec { n_cameras: 4, ring_radius: 0.0, ..RigSpec::default() };
        let poses = build_rig(&spec);
        for i in 0..4 {
            let rel = poses[(i + 1) % 4].inverse().compose(&poses[i]);
            assert!(rel.translation.norm() < 1e-12);
        }
    }

    #[test]
    fn ring_composes_to_identity() {
        let poses = build_rig(&RigSpec::default());
        let mut acc = Pose::identity();
        for i in 0..12 {
            let j = (i + 1) % 12;
            // T_{i,j} maps camera i into camera j; the ring product closes
            acc = poses[j].inverse().compose(&poses[i]).compose(&acc);
        }
        assert!((acc.rotation - Matrix3::identity()).norm() < 1e-12);
        assert!(acc.translation.norm() < 1e-12);
    }

    #[test]
    fn scatter_is_deterministic_and_scales_with_density() {
        let spec = RigSpec::default();
        let noise = NoiseSpec::noiseless(5);
        let a = scatter_landmarks(&spec, 500.0, 3.2, &noise);
        let b = scatter_landmarks(&spec, 500.0, 3.2, &noise);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.position, y.position);
            assert_eq!(x.descriptor, y.descriptor);
        }
        let doubled = scatter_landmarks(&spec, 1000.0, 3.2, &noise);
        let ratio = doubled.len() as f64 / a.len() as f64;
        assert!((ratio - 2.0).abs() < 0.01, "ratio {ratio}");
    }

    #[test]
    fn landmarks_lie_on_walls() {
        let spec = RigSpec::default();
        let lms = scatter_landmarks(&spec, 300.0, 3.0, &NoiseSpec::noiseless(1));
        assert!(!lms.is_empty());
        for lm in &lms {
            let p = lm.position;
            let on_x = (p.x.abs() - 1.5).abs() < 1e-9 && p.y.abs() <= 1.5 + 1e-9;
            let on_y = (p.y.abs() - 1.5).abs() < 1e-9 && p.x.abs() <= 1.5 + 1e-9;
            assert!(on_x || on_y, "landmark off the walls: {p:?}");
        }
    }

    #[test]
    fn axis_landmark_hits_principal_point() {
        let spec = RigSpec { ring_radius: 0.0, ..RigSpec::default() };
        let k = default_intrinsics(&spec);
        let cam = build_rig(&spec)[0];
        let lm = Landmark {
            position: Vector3::new(2.0, 0.0, 0.0), // on camera 1's optical axis
            descriptor: vec![0.0; DESCRIPTOR_DIM],
        };
        let (kps, depth) =
            render_observations(&[lm], 6.0, &cam, &k, &NoiseSpec::noiseless(0), 1);
        assert_eq!(kps.len(), 1);
        assert_abs_diff_eq!(kps[0].u, k.u0, epsilon = 1e-9);
        assert_abs_diff_eq!(kps[0].v, k.v0, epsilon = 1e-9);
        assert_abs_diff_eq!(depth.get(k.u0 as u32, k.v0 as u32), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_noise_observation_round_trip() {
        let spec = RigSpec::default();
        let scene =
            SyntheticScene::generate(spec, NoiseSpec::noiseless(3), 400.0, 3.2).unwrap();
        let mut checked = 0;
        for (frame, pose) in scene.frames.iter().zip(&scene.truth_poses) {
            for kp in &frame.keypoints {
                let id = kp.id.unwrap();
                if id == OUTLIER_ID {
                    continue;
                }
                let p_cam = lift_keypoint(kp.u, kp.v, &frame.depth, &scene.intrinsics).unwrap();
                let p_world = pose.transform_point(&p_cam);
                let err = (p_world - scene.landmarks[id as usize].position).norm();
                assert!(err < 1e-6, "round-trip error {err}");
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn range_culling_excludes_near_and_far_landmarks() {
        let spec = RigSpec { ring_radius: 0.0, ..RigSpec::default() };
        let k = default_intrinsics(&spec);
        let cam = build_rig(&spec)[0];
        let lms = vec![
            Landmark { position: Vector3::new(0.4, 0.0, 0.0), descriptor: vec![0.0; DESCRIPTOR_DIM] },
            Landmark { position: Vector3::new(5.5, 0.0, 0.1), descriptor: vec![0.0; DESCRIPTOR_DIM] },
            Landmark { position: Vector3::new(2.0, 0.1, 0.0), descriptor: vec![0.0; DESCRIPTOR_DIM] },
        ];
        let (kps, _) = render_observations(&lms, 12.0, &cam, &k, &NoiseSpec::noiseless(0), 1);
        assert_eq!(kps.len(), 1);
        assert_eq!(kps[0].id, Some(2));
    }

    #[test]
    fn overlap_region_identity_and_disjoint_cases() {
        let spec = RigSpec::default();
        let k = default_intrinsics(&spec);
        let poses = build_rig(&spec);
        let full = overlap_region(&poses[0], &poses[0], &k, 2.0).unwrap();
        assert_eq!(full, OverlapRegion::full_image(&k));
        // cameras 1 and 7 of a 12-ring face opposite directions
        assert!(matches!(
            overlap_region(&poses[0], &poses[6], &k, 2.0),
            Err(Error::NoOverlap)
        ));
    }

    #[test]
    fn adjacent_overlap_spans_about_thirty_percent() {
        let spec = RigSpec::default();
        let k = default_intrinsics(&spec);
        let poses = build_rig(&spec);
        let region = overlap_region(&poses[0], &poses[1], &k, 1.45).unwrap();
        let frac = region.width() / k.width as f64;
        assert!((0.2..0.4).contains(&frac), "overlap fraction {frac}");
    }

    #[test]
    fn default_density_gives_enough_shared_landmarks() {
        let scene = SyntheticScene::generate(
            RigSpec::default(),
            NoiseSpec::noiseless(7),
            DEFAULT_DENSITY,
            3.3,
        )
        .unwrap();
        let k = scene.intrinsics;
        for i in 0..scene.spec.n_cameras as usize {
            let j = (i + 1) % scene.spec.n_cameras as usize;
            let region =
                overlap_region(&scene.truth_poses[i], &scene.truth_poses[j], &k, scene.wall_distance())
                    .unwrap();
            let ids_i: std::collections::HashSet<i64> = scene.frames[i]
                .keypoints
                .iter()
                .filter(|kp| region.contains(kp.u, kp.v))
                .filter_map(|kp| kp.id)
                .collect();
            let shared = scene.frames[j]
                .keypoints
                .iter()
                .filter_map(|kp| kp.id)
                .filter(|id| *id != OUTLIER_ID && ids_i.contains(id))
                .count();
            assert!(shared >= 50, "pair ({},{}) shares only {shared}", i + 1, j + 1);
        }
    }

    #[test]
    fn scene_generation_is_deterministic() {
        let args = (RigSpec::default(), NoiseSpec::kinect_like(11), 600.0, 3.2);
        let a = SyntheticScene::generate(args.0, args.1, args.2, args.3).unwrap();
        let b = SyntheticScene::generate(args.0, args.1, args.2, args.3).unwrap();
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.keypoints, fb.keypoints);
            assert_eq!(fa.depth, fb.depth);
        }
    }
}
