//! Simulated distributed capture plane: N senders chunk RGB-D frames into
//! datagrams toward one aggregator over an in-process lossy channel with a
//! deterministic virtual clock. No retransmission by default, matching plain
//! datagram semantics; a per-set retry knob is available.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Bytes per pixel: 2 for depth plus 3 for color.
pub const BYTES_PER_PIXEL: u64 = 5;

/// Fixed datagram header size in bytes.
pub const HEADER_LEN: usize = 11;

/// Wire header, little-endian:
/// `[u8 camera_id][u32 frame_id][u16 chunk_index][u16 chunk_count][u16 payload_len]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub camera_id: u8,
    pub frame_id: u32,
    pub chunk_index: u16,
    pub chunk_count: u16,
    pub payload_len: u16,
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0] = self.camera_id;
        b[1..5].copy_from_slice(&self.frame_id.to_le_bytes());
        b[5..7].copy_from_slice(&self.chunk_index.to_le_bytes());
        b[7..9].copy_from_slice(&self.chunk_count.to_le_bytes());
        b[9..11].copy_from_slice(&self.payload_len.to_le_bytes());
        b
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < HEADER_LEN {
            return None;
        }
        Some(Self {
            camera_id: b[0],
            frame_id: u32::from_le_bytes([b[1], b[2], b[3], b[4]]),
            chunk_index: u16::from_le_bytes([b[5], b[6]]),
            chunk_count: u16::from_le_bytes([b[7], b[8]]),
            payload_len: u16::from_le_bytes([b[9], b[10]]),
        })
    }
}

/// Channel model for the in-process link.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub bandwidth_bps: f64,
    pub loss_rate: f64,
    /// One-way latency in seconds.
    pub latency: f64,
    pub mtu: usize,
    pub seed: u64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        Self { bandwidth_bps: 1e9, loss_rate: 0.0, latency: 5e-4, mtu: 1500, seed: 0 }
    }
}

/// Outcome of a simulated capture session.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSetStats {
    pub bytes_per_set: u64,
    pub max_fps: f64,
    /// Frame sets for which every chunk of every camera arrived.
    pub delivered: u64,
    pub dropped_sets: u64,
    pub achieved_fps: f64,
}

/// Session knobs beyond the channel itself.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct SessionConfig {
    /// How many times missing chunks of a frame set are re-sent.
    pub retries_per_set: u32,
}

/// Raw bytes of one synchronized frame set: depth (2 B) + color (3 B) per
/// pixel per camera.
pub fn frame_set_bytes(width: u32, height: u32, n_cameras: u32) -> u64 {
    width as u64 * height as u64 * BYTES_PER_PIXEL * n_cameras as u64
}

/// Bandwidth-bound frame rate, ignoring header overhead.
pub fn max_frame_rate(bytes_per_set: u64, channel: &ChannelSpec) -> f64 {
    channel.bandwidth_bps / (bytes_per_set as f64 * 8.0)
}

/// Splits a frame into header-prefixed datagrams. Payloads partition the
/// input in order; all but the last are maximal for the MTU.
pub fn chunk_frame(frame: &[u8], camera_id: u8, frame_id: u32, mtu: usize) -> Vec<Vec<u8>> {
    assert!(!frame.is_empty(), "cannot chunk an empty frame");
    assert!(mtu > HEADER_LEN, "mtu must exceed the header size");
    let payload_max = mtu - HEADER_LEN;
    let chunk_count = frame.len().div_ceil(payload_max);
    assert!(chunk_count <= u16::MAX as usize, "frame too large for u16 chunk index");
    frame
        .chunks(payload_max)
        .enumerate()
        .map(|(i, payload)| {
            let header = FrameHeader {
                camera_id,
                frame_id,
                chunk_index: i as u16,
                chunk_count: chunk_count as u16,
                payload_len: payload.len() as u16,
            };
            let mut dg = Vec::with_capacity(HEADER_LEN + payload.len());
            dg.extend_from_slice(&header.encode());
            dg.extend_from_slice(payload);
            dg
        })
        .collect()
}

/// Reassembles datagrams of a single frame back into its byte sequence.
/// Returns `None` when chunks are missing or inconsistent.
pub fn reassemble(datagrams: &[Vec<u8>]) -> Option<Vec<u8>> {
    let first = FrameHeader::decode(datagrams.first()?)?;
    let count = first.chunk_count as usize;
    let mut parts: Vec<Option<&[u8]>> = vec![None; count];
    for dg in datagrams {
        let h = FrameHeader::decode(dg)?;
        if h.camera_id != first.camera_id
            || h.frame_id != first.frame_id
            || h.chunk_count != first.chunk_count
            || h.chunk_index >= h.chunk_count
            || dg.len() != HEADER_LEN + h.payload_len as usize
        {
            return None;
        }
        parts[h.chunk_index as usize] = Some(&dg[HEADER_LEN..]);
    }
    let mut out = Vec::new();
    for p in parts {
        out.extend_from_slice(p?);
    }
    Some(out)
}

/// Runs a seeded capture session on a virtual clock. A frame set counts as
/// delivered only if every chunk of every camera's frame for that frame id
/// arrives (after any configured retries).
pub fn simulate_session(
    n_cameras: u32,
    frames_per_camera: u32,
    frame_bytes: u64,
    channel: &ChannelSpec,
) -> FrameSetStats {
    simulate_session_with(n_cameras, frames_per_camera, frame_bytes, channel, &SessionConfig::default())
}

pub fn simulate_session_with(
    n_cameras: u32,
    frames_per_camera: u32,
    frame_bytes: u64,
    channel: &ChannelSpec,
    session: &SessionConfig,
) -> FrameSetStats {
    assert!(channel.mtu > HEADER_LEN);
    let mut rng = ChaCha8Rng::seed_from_u64(channel.seed);
    let payload_max = (channel.mtu - HEADER_LEN) as u64;
    let chunks_per_frame = frame_bytes.div_ceil(payload_max);
    let last_payload = frame_bytes - payload_max * (chunks_per_frame - 1);

    let mut bits_sent: f64 = 0.0;
    let mut delivered = 0u64;
    for _frame_id in 0..frames_per_camera {
        // per camera, the set of chunk indices still missing
        let mut missing: Vec<Vec<u64>> =
            (0..n_cameras).map(|_| (0..chunks_per_frame).collect()).collect();
        for attempt in 0..=session.retries_per_set {
            for cam_missing in missing.iter_mut() {
                cam_missing.retain(|&chunk| {
                    let payload = if chunk == chunks_per_frame - 1 { last_payload } else { payload_max };
                    bits_sent += ((HEADER_LEN as u64 + payload) * 8) as f64;
                    rng.gen::<f64>() < channel.loss_rate // dropped chunks stay missing
                });
            }
            if missing.iter().all(|m| m.is_empty()) {
                break;
            }
            let _ = attempt;
        }
        if missing.iter().all(|m| m.is_empty()) {
            delivered += 1;
        }
    }

    let bytes_per_set = frame_bytes * n_cameras as u64;
    let elapsed = bits_sent / channel.bandwidth_bps + channel.latency;
    FrameSetStats {
        bytes_per_set,
        max_fps: max_frame_rate(bytes_per_set, channel),
        delivered,
        dropped_sets: frames_per_camera as u64 - delivered,
        achieved_fps: delivered as f64 / elapsed,
    }
}
