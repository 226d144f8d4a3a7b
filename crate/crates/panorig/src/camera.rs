//! Pinhole camera model: back-projection of depth pixels, depth-to-color
//! extrinsic transfer, projection into the color frame, and whole depth-map
//! alignment. A depth of zero encodes "no measurement" throughout.

use crate::error::{Error, Result};
use crate::lie::Pose;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Pinhole intrinsic parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub u0: f64,
    pub v0: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, u0: f64, v0: f64, width: u32, height: u32) -> Self {
        debug_assert!(fx > 0.0 && fy > 0.0);
        debug_assert!(u0 >= 0.0 && u0 < width as f64);
        debug_assert!(v0 >= 0.0 && v0 < height as f64);
        Self { fx, fy, u0, v0, width, height }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// A depth-map sample: pixel coordinates plus the measured depth in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthPixel {
    pub u: f64,
    pub v: f64,
    pub z: f64,
}

/// Row-major grid of depth values in meters; zero marks missing data.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub intrinsics: Intrinsics,
    data: Vec<f64>,
}

/// Magic bytes of the binary depth-map file format.
const DEPTH_MAGIC: &[u8; 4] = b"PRDM";

impl DepthMap {
    pub fn zeros(intrinsics: Intrinsics) -> Self {
        let n = intrinsics.width as usize * intrinsics.height as usize;
        Self { intrinsics, data: vec![0.0; n] }
    }

    pub fn from_data(intrinsics: Intrinsics, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), intrinsics.width as usize * intrinsics.height as usize);
        debug_assert!(data.iter().all(|&z| z >= 0.0));
        Self { intrinsics, data }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, u: u32, v: u32) -> f64 {
        self.data[v as usize * self.intrinsics.width as usize + u as usize]
    }

    pub fn set(&mut self, u: u32, v: u32, z: f64) {
        self.data[v as usize * self.intrinsics.width as usize + u as usize] = z;
    }

    /// All pixels with a valid (nonzero) depth.
    pub fn valid_pixels(&self) -> impl Iterator<Item = DepthPixel> + '_ {
        let w = self.intrinsics.width;
        self.data.iter().enumerate().filter(|(_, &z)| z > 0.0).map(move |(i, &z)| DepthPixel {
            u: (i as u32 % w) as f64,
            v: (i as u32 / w) as f64,
            z,
        })
    }

    /// Writes the binary format: magic "PRDM", u32 width, u32 height,
    /// f32 depth_scale, then width*height little-endian u16 raw values with
    /// depth_meters = raw * depth_scale.
    pub fn write_binary<W: Write>(&self, mut w: W, depth_scale: f32) -> Result<()> {
        w.write_all(DEPTH_MAGIC)?;
        w.write_all(&self.intrinsics.width.to_le_bytes())?;
        w.write_all(&self.intrinsics.height.to_le_bytes())?;
        w.write_all(&depth_scale.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 2);
        for &z in &self.data {
            let raw = (z / depth_scale as f64).round().clamp(0.0, u16::MAX as f64) as u16;
            buf.extend_from_slice(&raw.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    /// Reads the binary format; intrinsics other than image size must be
    /// supplied by the caller (the file stores geometry only).
    pub fn read_binary<R: Read>(mut r: R, path: &Path, mut intrinsics: Intrinsics) -> Result<Self> {
        let bad = |reason: &str| Error::Parse {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DEPTH_MAGIC {
            return Err(bad("bad magic"));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let width = u32::from_le_bytes(b4);
        r.read_exact(&mut b4)?;
        let height = u32::from_le_bytes(b4);
        r.read_exact(&mut b4)?;
        let scale = f32::from_le_bytes(b4) as f64;
        if scale <= 0.0 {
            return Err(bad("non-positive depth scale"));
        }
        intrinsics.width = width;
        intrinsics.height = height;
        let n = width as usize * height as usize;
        let mut raw = vec![0u8; n * 2];
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64 * scale)
            .collect();
        Ok(Self { intrinsics, data })
    }

    pub fn save(&self, path: &Path, depth_scale: f32) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_binary(std::io::BufWriter::new(f), depth_scale)
    }

    pub fn load(path: &Path, intrinsics: Intrinsics) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(f), path, intrinsics)
    }
}

/// Depth sensor, color sensor, and the extrinsic transform between them.
#[derive(Debug, Clone, Copy)]
pub struct RgbdRig {
    pub depth_intrinsics: Intrinsics,
    pub color_intrinsics: Intrinsics,
    /// Depth camera frame into color camera frame.
    pub depth_to_color: Pose,
}

/// Pinhole back-projection of a depth pixel into the camera frame.
pub fn backproject(px: &DepthPixel, k: &Intrinsics) -> Result<Vector3<f64>> {
    if px.z <= 0.0 {
        return Err(Error::InvalidDepth(px.z));
    }
    Ok(Vector3::new(
        (px.u - k.u0) * px.z / k.fx,
        (px.v - k.v0) * px.z / k.fy,
        px.z,
    ))
}

/// Applies a rigid transform to a point: `R p + t`.
pub fn transform_point(t: &Pose, p: &Vector3<f64>) -> Vector3<f64> {
    t.transform_point(p)
}

/// Pinhole projection; returns `(u', v', z')`.
pub fn project(p: &Vector3<f64>, k: &Intrinsics) -> Result<(f64, f64, f64)> {
    if p.z <= 1e-9 {
        return Err(Error::BehindCamera(p.z));
    }
    Ok((p.x / p.z * k.fx + k.u0, p.y / p.z * k.fy + k.v0, p.z))
}

/// Re-renders a depth map into the color camera geometry.
///
/// Every valid pixel is back-projected, moved by the depth-to-color
/// extrinsics, projected with the color intrinsics, and splatted to the
/// nearest integer pixel. On collision the smaller depth wins; uncovered
/// pixels stay zero.
pub fn align_depth_to_color(dm: &DepthMap, rig: &RgbdRig) -> DepthMap {
    assert_eq!(dm.intrinsics.width, rig.depth_intrinsics.width);
    assert_eq!(dm.intrinsics.height, rig.depth_intrinsics.height);
    let mut out = DepthMap::zeros(rig.color_intrinsics);
    for px in dm.valid_pixels() {
        let p = match backproject(&px, &rig.depth_intrinsics) {
            Ok(p) => p,
            Err(_) => continue,
        };
        let q = rig.depth_to_color.transform_point(&p);
        let (u, v, z) = match project(&q, &rig.color_intrinsics) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let (ui, vi) = (u.round(), v.round());
        if !rig.color_intrinsics.contains(ui, vi) {
            continue;
        }
        let (ui, vi) = (ui as u32, vi as u32);
        let old = out.get(ui, vi);
        if old == 0.0 || z < old {
            out.set(ui, vi, z);
        }
    }
    out
}

/// Lifts a sub-pixel keypoint to 3D using the depth at its nearest pixel.
pub fn lift_keypoint(
    u: f64,
    v: f64,
    aligned: &DepthMap,
    k_color: &Intrinsics,
) -> Result<Vector3<f64>> {
    assert!(k_color.contains(u, v), "keypoint outside image bounds");
    let ui = u.round().min(k_color.width as f64 - 1.0) as u32;
    let vi = v.round().min(k_color.height as f64 - 1.0) as u32;
    let z = aligned.get(ui, vi);
    if z == 0.0 {
        return Err(Error::MissingDepth(ui, vi));
    }
    backproject(&DepthPixel { u, v, z }, k_color)
}
