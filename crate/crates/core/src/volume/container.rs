//! `COROVOL1` volume container.
//!
//! Layout (little-endian): 8-byte magic, `u32` header length, JSON header
//! `{dims, voxel_scale, dtype}`, then `S·H·W` `f32` values in slice-major,
//! row-major order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::OctVolume;
use crate::error::{Error, Result};

pub const VOLUME_MAGIC: &[u8; 8] = b"COROVOL1";

const CANONICAL_AXES: [&str; 3] = ["slice", "row", "column"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub voxel_scale: [f64; 3],
    pub dtype: String,
    /// Axis names in on-disk order. Absent means `slice, row, column`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<[String; 3]>,
}

pub fn save_volume(vol: &OctVolume, path: impl AsRef<Path>) -> Result<()> {
    let header = VolumeHeader {
        dims: vol.dims(),
        voxel_scale: vol.voxel_scale,
        dtype: "f32".into(),
        axes: None,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(12 + json.len() + vol.len() * 4);
    buf.extend_from_slice(VOLUME_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for v in vol.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

fn split_header(bytes: &[u8]) -> Result<(VolumeHeader, &[u8])> {
    if bytes.len() < 12 || &bytes[..8] != VOLUME_MAGIC {
        return Err(Error::BadFormat("missing COROVOL1 magic".into()));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let json = bytes
        .get(12..12 + len)
        .ok_or_else(|| Error::BadFormat("truncated header".into()))?;
    let header: VolumeHeader =
        serde_json::from_slice(json).map_err(|e| Error::BadFormat(format!("header: {e}")))?;
    if header.dtype != "f32" {
        return Err(Error::BadFormat(format!("unsupported dtype {}", header.dtype)));
    }
    Ok((header, &bytes[12 + len..]))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    Ok(fs::read(path)?)
}

/// Parse only the header of a container file.
pub fn read_header(path: impl AsRef<Path>) -> Result<VolumeHeader> {
    let bytes = read_file(path.as_ref())?;
    Ok(split_header(&bytes)?.0)
}

/// Position of each canonical axis within the on-disk order.
fn axis_permutation(axes: &Option<[String; 3]>) -> Result<[usize; 3]> {
    let Some(axes) = axes else { return Ok([0, 1, 2]) };
    let mut perm = [0; 3];
    for (slot, name) in CANONICAL_AXES.iter().enumerate() {
        perm[slot] = axes
            .iter()
            .position(|a| a == name)
            .ok_or_else(|| Error::BadFormat(format!("axes {axes:?} must name slice, row and column")))?;
    }
    Ok(perm)
}

pub fn load_volume(path: impl AsRef<Path>) -> Result<OctVolume> {
    let bytes = read_file(path.as_ref())?;
    let (header, payload) = split_header(&bytes)?;
    let expected: usize = header.dims.iter().product();
    if payload.len() % 4 != 0 || payload.len() / 4 != expected {
        return Err(Error::PayloadMismatch { expected, actual: payload.len() / 4 });
    }
    let raw: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    if let Some(index) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { index });
    }
    let perm = axis_permutation(&header.axes)?;
    if perm == [0, 1, 2] {
        return OctVolume::new(header.dims, header.voxel_scale, raw);
    }
    let disk = header.dims;
    let dims = [disk[perm[0]], disk[perm[1]], disk[perm[2]]];
    let mut data = vec![0.0f32; expected];
    let mut idx = [0usize; 3];
    for (flat, v) in raw.iter().enumerate() {
        idx[0] = flat / (disk[1] * disk[2]);
        idx[1] = (flat / disk[2]) % disk[1];
        idx[2] = flat % disk[2];
        let (s, z, x) = (idx[perm[0]], idx[perm[1]], idx[perm[2]]);
        data[(s * dims[1] + z) * dims[2] + x] = *v;
    }
    OctVolume::new(dims, header.voxel_scale, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> OctVolume {
        let data = (0..64).map(|i| i as f32 / 63.0).collect();
        OctVolume::new([2, 8, 4], [1.0, 2.0, 3.0], data).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.corovol");
        let v = small();
        save_volume(&v, &p).unwrap();
        let back = load_volume(&p).unwrap();
        assert_eq!(back, v);
        assert_eq!(read_header(&p).unwrap().dims, [2, 8, 4]);
    }

    #[test]
    fn short_payload_is_a_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("v.corovol");
        save_volume(&small(), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        bytes.truncate(bytes.len() - 4);
        fs::write(&p, &bytes).unwrap();
        match load_volume(&p) {
            Err(Error::PayloadMismatch { expected: 64, actual: 63 }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn error_kinds_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_volume(dir.path().join("nope")), Err(Error::FileNotFound(_))));

        let p = dir.path().join("nan.corovol");
        save_volume(&small(), &p).unwrap();
        let mut bytes = fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_volume(&p), Err(Error::NonFinite { index: 63 })));

        fs::write(&p, b"NOTAVOL!\0\0\0\0").unwrap();
        assert!(matches!(load_volume(&p), Err(Error::BadFormat(_))));
    }

    #[test]
    fn foreign_axis_order_is_permuted_on_load() {
        // on disk: column, slice, row
        let v = small();
        let [s, h, w] = v.dims();
        let mut payload = Vec::new();
        for x in 0..w {
            for si in 0..s {
                for z in 0..h {
                    payload.extend_from_slice(&v.at(si, z, x).to_le_bytes());
                }
            }
        }
        let header = serde_json::json!({
            "dims": [w, s, h], "voxel_scale": [1.0, 2.0, 3.0], "dtype": "f32",
            "axes": ["column", "slice", "row"],
        });
        let json = serde_json::to_vec(&header).unwrap();
        let mut bytes = VOLUME_MAGIC.to_vec();
        bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(&json);
        bytes.extend_from_slice(&payload);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("perm.corovol");
        fs::write(&p, bytes).unwrap();
        assert_eq!(load_volume(&p).unwrap(), v);
    }
}
