use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::OctVolume;

/// Per-A-scan cyclic shifts that map a reference boundary onto one row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlattenRecord {
    pub num_slices: usize,
    pub num_rows: usize,
    pub num_cols: usize,
    /// `[S × W]`; flattened row = original row + shift (mod rows).
    pub shifts: Vec<i64>,
    pub target_row: usize,
    /// Surface the reference tracks (0: strongest-gradient boundary).
    pub reference_surface: usize,
}

impl FlattenRecord {
    #[inline]
    pub fn shift(&self, s: usize, x: usize) -> i64 {
        self.shifts[s * self.num_cols + x]
    }

    #[inline]
    pub fn flatten_row(&self, s: usize, x: usize, row: usize) -> usize {
        (row as i64 + self.shift(s, x)).rem_euclid(self.num_rows as i64) as usize
    }

    #[inline]
    pub fn unflatten_row(&self, s: usize, x: usize, row: usize) -> usize {
        (row as i64 - self.shift(s, x)).rem_euclid(self.num_rows as i64) as usize
    }
}

fn lower_median(values: &mut [usize]) -> usize {
    values.sort_unstable();
    values[(values.len() - 1) / 2]
}

/// Row of largest backward intensity difference per A-scan, searched over
/// `[1, H-2]` with ties going to the smaller row, then median-filtered with a
/// window of 5 along columns. Near the image edges the window slides inward
/// so it still holds 5 columns (fewer only when the image is narrower).
pub fn estimate_reference_surface(vol: &OctVolume) -> Result<Vec<usize>> {
    let [ns, nh, nw] = vol.dims();
    if nh < 4 {
        return Err(Error::Dimension(format!("reference estimation needs H >= 4, got {nh}")));
    }
    let mut raw = vec![0usize; ns * nw];
    for s in 0..ns {
        for x in 0..nw {
            let mut best = -1.0f32;
            let mut arg = 1;
            for z in 1..nh - 1 {
                let g = (vol.at(s, z, x) - vol.at(s, z - 1, x)).abs();
                if g > best {
                    best = g;
                    arg = z;
                }
            }
            raw[s * nw + x] = arg;
        }
    }
    let mut out = vec![0usize; ns * nw];
    let mut window = Vec::with_capacity(5);
    for s in 0..ns {
        for x in 0..nw {
            window.clear();
            let start = x.saturating_sub(2).min(nw.saturating_sub(5));
            window.extend((start..(start + 5).min(nw)).map(|c| raw[s * nw + c]));
            out[s * nw + x] = lower_median(&mut window);
        }
    }
    Ok(out)
}

/// Cyclically shift each A-scan so `reference` lands on its median row.
pub fn flatten(vol: &OctVolume, reference: &[usize]) -> Result<(OctVolume, FlattenRecord)> {
    let [ns, nh, nw] = vol.dims();
    if reference.len() != ns * nw {
        return Err(Error::Shape(format!("{} reference rows for {ns}x{nw} A-scans", reference.len())));
    }
    if let Some(r) = reference.iter().find(|&&r| r >= nh) {
        return Err(Error::Dimension(format!("reference row {r} outside 0..{nh}")));
    }
    let target_row = lower_median(&mut reference.to_vec());
    let shifts: Vec<i64> = reference.iter().map(|&r| target_row as i64 - r as i64).collect();
    let record = FlattenRecord {
        num_slices: ns,
        num_rows: nh,
        num_cols: nw,
        shifts,
        target_row,
        reference_surface: 0,
    };
    Ok((apply_shifts(vol, &record, 1), record))
}

/// Inverse of [`flatten`].
pub fn unflatten(vol: &OctVolume, record: &FlattenRecord) -> Result<OctVolume> {
    if vol.dims() != [record.num_slices, record.num_rows, record.num_cols] {
        return Err(Error::Shape(format!("volume {:?} does not match flatten record", vol.dims())));
    }
    Ok(apply_shifts(vol, record, -1))
}

fn apply_shifts(vol: &OctVolume, record: &FlattenRecord, direction: i64) -> OctVolume {
    let [ns, nh, nw] = vol.dims();
    let mut data = vec![0.0f32; vol.len()];
    for s in 0..ns {
        for x in 0..nw {
            let shift = direction * record.shift(s, x);
            for z in 0..nh {
                let dest = (z as i64 + shift).rem_euclid(nh as i64) as usize;
                data[(s * nh + dest) * nw + x] = vol.at(s, z, x);
            }
        }
    }
    OctVolume::from_parts_unchecked(vol.dims(), vol.voxel_scale, data)
}
