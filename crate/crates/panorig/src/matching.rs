//! Descriptor keypoints, overlap-region restriction, nearest-descriptor
//! matching, and the min-distance-multiple acceptance filter producing 3D
//! correspondence sets.

use crate::camera::{lift_keypoint, DepthMap, Intrinsics};
use crate::error::{Error, Result};
use nalgebra::Vector3;
use std::io::{BufRead, Write};
use std::path::Path;

/// Ground-truth id carried by simulated spurious keypoints.
pub const OUTLIER_ID: i64 = -1;

/// An image keypoint with a real-valued descriptor. `id` is a ground-truth
/// landmark tag available only in simulation (`OUTLIER_ID` marks injected
/// spurious detections).
#[derive(Debug, Clone, PartialEq)]
pub struct Keypoint {
    pub u: f64,
    pub v: f64,
    pub descriptor: Vec<f64>,
    pub id: Option<i64>,
}

/// Axis-aligned pixel rectangle, `u_min <= u < u_max` and likewise for v.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapRegion {
    pub u_min: f64,
    pub v_min: f64,
    pub u_max: f64,
    pub v_max: f64,
}

impl OverlapRegion {
    pub fn full_image(k: &Intrinsics) -> Self {
        Self { u_min: 0.0, v_min: 0.0, u_max: k.width as f64, v_max: k.height as f64 }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u_min && u < self.u_max && v >= self.v_min && v < self.v_max
    }

    pub fn width(&self) -> f64 {
        self.u_max - self.u_min
    }
}

/// Acceptance rule: keep matches with distance below `ratio` times the
/// minimum distance of the frame pair.
#[derive(Debug, Clone, Copy)]
pub struct MatchFilterConfig {
    pub ratio: f64,
}

impl Default for MatchFilterConfig {
    fn default() -> Self {
        Self { ratio: 3.0 }
    }
}

/// Candidate match: indices into the two keypoint lists plus descriptor
/// distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub index_a: usize,
    pub index_b: usize,
    pub distance: f64,
}

/// Paired 3D point sets `{p_i}`, `{p'_i}` in the two camera frames.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrespondenceSet {
    pub points_a: Vec<Vector3<f64>>,
    pub points_b: Vec<Vector3<f64>>,
}

impl CorrespondenceSet {
    pub fn len(&self) -> usize {
        self.points_a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points_a.is_empty()
    }
}

/// Exact nearest-neighbor matching: for each keypoint in `a`, the
/// Euclidean-nearest descriptor in `b`.
pub fn match_descriptors(a: &[Keypoint], b: &[Keypoint]) -> Result<Vec<Match>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyFrame);
    }
    let dim = a[0].descriptor.len();
    for kp in a.iter().chain(b.iter()) {
        if kp.descriptor.len() != dim {
            return Err(Error::DimensionMismatch(dim, kp.descriptor.len()));
        }
    }
    let mut out = Vec::with_capacity(a.len());
    for (ia, ka) in a.iter().enumerate() {
        let mut best = (0usize, f64::INFINITY);
        for (ib, kb) in b.iter().enumerate() {
            let d2: f64 = ka
                .descriptor
                .iter()
                .zip(&kb.descriptor)
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            if d2 < best.1 {
                best = (ib, d2);
            }
        }
        out.push(Match { index_a: ia, index_b: best.0, distance: best.1.sqrt() });
    }
    Ok(out)
}

/// Keeps matches with distance strictly less than `ratio` times the minimum
/// distance. When the minimum is zero the rule degenerates; exactly the
/// zero-distance matches are kept.
pub fn filter_by_min_distance(matches: &[Match], cfg: &MatchFilterConfig) -> Result<Vec<Match>> {
    if matches.is_empty() {
        return Err(Error::EmptyFrame);
    }
    let min = matches.iter().map(|m| m.distance).fold(f64::INFINITY, f64::min);
    let kept = if min == 0.0 {
        matches.iter().filter(|m| m.distance == 0.0).copied().collect()
    } else {
        matches.iter().filter(|m| m.distance < cfg.ratio * min).copied().collect()
    };
    Ok(kept)
}

/// Keypoints inside the rectangle, order preserved.
pub fn restrict_to_overlap(kps: &[Keypoint], region: &OverlapRegion) -> Vec<Keypoint> {
    kps.iter().filter(|kp| region.contains(kp.u, kp.v)).cloned().collect()
}

/// Lifts both endpoints of every match through the aligned depth maps; pairs
/// with a depth hole on either side are dropped.
pub fn build_correspondences(
    matches: &[Match],
    kps_a: &[Keypoint],
    kps_b: &[Keypoint],
    aligned_a: &DepthMap,
    aligned_b: &DepthMap,
    k_color: &Intrinsics,
) -> Result<CorrespondenceSet> {
    let mut points_a = Vec::with_capacity(matches.len());
    let mut points_b = Vec::with_capacity(matches.len());
    for m in matches {
        let ka = &kps_a[m.index_a];
        let kb = &kps_b[m.index_b];
        let pa = match lift_keypoint(ka.u, ka.v, aligned_a, k_color) {
            Ok(p) => p,
            Err(Error::MissingDepth(..)) => continue,
            Err(e) => return Err(e),
        };
        let pb = match lift_keypoint(kb.u, kb.v, aligned_b, k_color) {
            Ok(p) => p,
            Err(Error::MissingDepth(..)) => continue,
            Err(e) => return Err(e),
        };
        points_a.push(pa);
        points_b.push(pb);
    }
    if points_a.len() < 3 {
        return Err(Error::TooFewPoints(points_a.len()));
    }
    Ok(CorrespondenceSet { points_a, points_b })
}

/// Writes keypoints as text lines `u v d0 d1 ... dk [id]`. Descriptor values
/// always carry a decimal point so a trailing integer is unambiguously the id.
pub fn write_keypoints<W: Write>(mut w: W, kps: &[Keypoint]) -> Result<()> {
    for kp in kps {
        write!(w, "{:?} {:?}", kp.u, kp.v)?;
        for d in &kp.descriptor {
            write!(w, " {:?}", d)?;
        }
        if let Some(id) = kp.id {
            write!(w, " {id}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parses the keypoint text format.
pub fn read_keypoints<R: BufRead>(r: R, path: &Path) -> Result<Vec<Keypoint>> {
    let bad = |line: usize, reason: &str| Error::Parse {
        path: path.display().to_string(),
        reason: format!("line {}: {}", line + 1, reason),
    };
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if tokens.len() < 2 {
            return Err(bad(i, "expected at least u and v"));
        }
        let is_int = |t: &str| !t.contains('.') && !t.contains(['e', 'E']) && t.parse::<i64>().is_ok();
        let (desc_tokens, id) = if is_int(tokens[tokens.len() - 1]) {
            (&tokens[2..tokens.len() - 1], Some(tokens[tokens.len() - 1].parse::<i64>().unwrap()))
        } else {
            (&tokens[2..], None)
        };
        let parse = |t: &str| t.parse::<f64>().map_err(|_| bad(i, "bad number"));
        let u = parse(tokens[0])?;
        let v = parse(tokens[1])?;
        let descriptor = desc_tokens.iter().map(|t| parse(t)).collect::<Result<Vec<_>>>()?;
        out.push(Keypoint { u, v, descriptor, id });
    }
    Ok(out)
}

/// Debug dump: one `ax ay az bx by bz` line per correspondence.
pub fn write_correspondences<W: Write>(mut w: W, c: &CorrespondenceSet) -> Result<()> {
    for (a, b) in c.points_a.iter().zip(&c.points_b) {
        writeln!(w, "{:?} {:?} {:?} {:?} {:?} {:?}", a.x, a.y, a.z, b.x, b.y, b.z)?;
    }
    Ok(())
}
