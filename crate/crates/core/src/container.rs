//! Binary containers: 8-byte magic, little-endian `u32` manifest length,
//! UTF-8 JSON manifest, then a little-endian `f32` payload.
//!
//! Trajectories use magic `V2SGTRJ1`; toy generator checkpoints reuse the
//! same framing with `V2SGGEN1`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::latent::{LatentTrajectory, LatentWPlus, LATENT_DIM};

pub const TRAJECTORY_MAGIC: &[u8; 8] = b"V2SGTRJ1";
pub const TRAJECTORY_VERSION: u64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TrajectoryManifest {
    version: u64,
    frame_count: usize,
    layer_count: usize,
    dim: usize,
    dtype: String,
    fps: f64,
    source_id: String,
}

/// Write framing + payload. Returns total bytes written.
pub(crate) fn write_framed<W: Write>(
    sink: &mut W,
    magic: &[u8; 8],
    manifest: &[u8],
    payload: impl Iterator<Item = f32>,
) -> Result<u64> {
    let header_len = u32::try_from(manifest.len())
        .map_err(|_| invalid("manifest", "manifest exceeds 4 GiB"))?;
    sink.write_all(magic)?;
    sink.write_all(&header_len.to_le_bytes())?;
    sink.write_all(manifest)?;
    let mut written = 12 + manifest.len() as u64;
    let mut buf = Vec::with_capacity(4 * 4096);
    for v in payload {
        buf.extend_from_slice(&v.to_le_bytes());
        if buf.len() >= 4 * 4096 {
            sink.write_all(&buf)?;
            written += buf.len() as u64;
            buf.clear();
        }
    }
    sink.write_all(&buf)?;
    written += buf.len() as u64;
    sink.flush()?;
    Ok(written)
}

/// Read framing; returns the manifest bytes and the raw payload bytes.
pub(crate) fn read_framed<R: Read>(source: &mut R, magic: &[u8; 8]) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut got = [0u8; 8];
    source
        .read_exact(&mut got)
        .map_err(|_| Error::Format("stream shorter than the 8-byte magic".into()))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&got),
            String::from_utf8_lossy(magic)
        )));
    }
    let mut len = [0u8; 4];
    source
        .read_exact(&mut len)
        .map_err(|_| Error::Corruption("missing manifest length".into()))?;
    let len = u32::from_le_bytes(len) as usize;
    let mut manifest = vec![0u8; len];
    source
        .read_exact(&mut manifest)
        .map_err(|_| Error::Corruption(format!("manifest truncated (declared {len} bytes)")))?;
    let mut payload = Vec::new();
    source.read_to_end(&mut payload)?;
    Ok((manifest, payload))
}

pub(crate) fn decode_f32le(bytes: &[u8]) -> impl Iterator<Item = f32> + '_ {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
}

/// Serialize a trajectory. Values are narrowed to `f32`.
pub fn write_trajectory<W: Write>(traj: &LatentTrajectory, sink: &mut W) -> Result<u64> {
    for (j, frame) in traj.frames().iter().enumerate() {
        if let Some(i) = frame.as_slice().iter().position(|v| !(*v as f32).is_finite()) {
            return Err(invalid(
                "trajectory",
                format!("frame {j} value {i} is not representable as a finite f32"),
            ));
        }
    }
    let manifest = TrajectoryManifest {
        version: TRAJECTORY_VERSION,
        frame_count: traj.len(),
        layer_count: traj.layer_count(),
        dim: LATENT_DIM,
        dtype: "f32le".into(),
        fps: traj.fps(),
        source_id: traj.source_id().to_string(),
    };
    let manifest = serde_json::to_vec(&manifest)?;
    let payload = traj
        .frames()
        .iter()
        .flat_map(|f| f.as_slice().iter().map(|&v| v as f32));
    write_framed(sink, TRAJECTORY_MAGIC, &manifest, payload)
}

pub fn read_trajectory<R: Read>(source: &mut R) -> Result<LatentTrajectory> {
    let (manifest, payload) = read_framed(source, TRAJECTORY_MAGIC)?;
    let value: serde_json::Value = serde_json::from_slice(&manifest)
        .map_err(|e| Error::Corruption(format!("manifest is not valid JSON: {e}")))?;
    match value.get("version").and_then(serde_json::Value::as_u64) {
        Some(TRAJECTORY_VERSION) => {}
        Some(v) => return Err(Error::UnsupportedVersion(v)),
        None => return Err(Error::Corruption("manifest lacks a numeric version".into())),
    }
    let m: TrajectoryManifest = serde_json::from_value(value)
        .map_err(|e| Error::Corruption(format!("malformed manifest: {e}")))?;
    if m.dim != LATENT_DIM || m.dtype != "f32le" {
        return Err(Error::Format(format!(
            "unsupported layout dim={} dtype={}",
            m.dim, m.dtype
        )));
    }
    if m.frame_count == 0 || m.layer_count == 0 {
        return Err(Error::Corruption("manifest declares an empty trajectory".into()));
    }
    let per_frame = m.layer_count * LATENT_DIM;
    let expected = m.frame_count * per_frame * 4;
    if payload.len() != expected {
        return Err(Error::Corruption(format!(
            "payload is {} bytes, manifest implies {expected}",
            payload.len()
        )));
    }
    let values: Vec<f64> = decode_f32le(&payload).map(f64::from).collect();
    let frames = values
        .chunks_exact(per_frame)
        .map(|chunk| LatentWPlus::new(m.layer_count, chunk.to_vec()))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::Corruption(format!("payload rejected: {e}")))?;
    LatentTrajectory::new(frames, m.source_id, m.fps)
        .map_err(|e| Error::Corruption(format!("manifest rejected: {e}")))
}

pub fn save_trajectory(traj: &LatentTrajectory, path: &std::path::Path) -> Result<u64> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_trajectory(traj, &mut file)
}

pub fn load_trajectory(path: &std::path::Path) -> Result<LatentTrajectory> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    read_trajectory(&mut file)
}

/// True when the file starts with the trajectory magic.
pub fn is_trajectory_file(path: &std::path::Path) -> bool {
    let mut magic = [0u8; 8];
    std::fs::File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map(|_| &magic == TRAJECTORY_MAGIC)
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(frames: usize, layers: usize) -> LatentTrajectory {
        let frames = (0..frames)
            .map(|j| {
                let code = (0..layers * LATENT_DIM)
                    .map(|i| ((i as f64 * 0.37 + j as f64).sin() * 2.0) as f32 as f64)
                    .collect();
                LatentWPlus::new(layers, code).unwrap()
            })
            .collect();
        LatentTrajectory::new(frames, "sample", 25.0).unwrap()
    }

    #[test]
    fn file_size_matches_layout() {
        let t = sample(1, 16);
        let mut buf = Vec::new();
        let n = write_trajectory(&t, &mut buf).unwrap();
        let header = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        assert_eq!(n as usize, buf.len());
        assert_eq!(buf.len(), 12 + header + 16 * 512 * 4);
    }

    #[test]
    fn round_trip_is_exact() {
        let t = sample(3, 2);
        let mut buf = Vec::new();
        write_trajectory(&t, &mut buf).unwrap();
        let back = read_trajectory(&mut buf.as_slice()).unwrap();
        assert_eq!(back, t);
        let mut again = Vec::new();
        write_trajectory(&back, &mut again).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_version() {
        let t = sample(2, 2);
        let mut buf = Vec::new();
        write_trajectory(&t, &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[..8].copy_from_slice(b"XXXXXXXX");
        assert!(matches!(read_trajectory(&mut bad.as_slice()), Err(Error::Format(_))));

        let truncated = &buf[..buf.len() - 5];
        assert!(matches!(
            read_trajectory(&mut &truncated[..]),
            Err(Error::Corruption(_))
        ));

        let header = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        let manifest = std::str::from_utf8(&buf[12..12 + header]).unwrap();
        let bumped = manifest.replace("\"version\":1", "\"version\":7");
        let mut v2 = Vec::new();
        write_framed(
            &mut v2,
            TRAJECTORY_MAGIC,
            bumped.as_bytes(),
            decode_f32le(&buf[12 + header..]),
        )
        .unwrap();
        assert!(matches!(
            read_trajectory(&mut v2.as_slice()),
            Err(Error::UnsupportedVersion(7))
        ));
    }

    #[test]
    fn rejects_values_overflowing_f32() {
        let mut code = vec![0.0; 512];
        code[3] = 1e300;
        let t = LatentTrajectory::new(vec![LatentWPlus::new(1, code).unwrap()], "big", 1.0).unwrap();
        assert!(write_trajectory(&t, &mut Vec::new()).is_err());
    }
}
