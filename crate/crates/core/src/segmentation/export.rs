//! Surface export: one `surface_<k>.csv` (`slice,column,row`) per surface
//! plus a `surfaces.json` sidecar with dimensions and configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlattenRecord, SegmentationConfig, SurfaceConstraints, SurfaceSet};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceSidecar {
    pub num_surfaces: usize,
    pub dims: [usize; 3],
    pub constraints: Option<SurfaceConstraints>,
    pub config: Option<SegmentationConfig>,
    pub flatten: Option<FlattenRecord>,
}

pub fn write_surfaces(set: &SurfaceSet, config: Option<&SegmentationConfig>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for k in 0..set.num_surfaces() {
        let mut csv = String::from("slice,column,row\n");
        for s in 0..set.num_slices() {
            for x in 0..set.num_cols() {
                writeln!(csv, "{s},{x},{}", set.row(k, s, x)).expect("string write");
            }
        }
        fs::write(dir.join(format!("surface_{k}.csv")), csv)?;
    }
    let sidecar = SurfaceSidecar {
        num_surfaces: set.num_surfaces(),
        dims: [set.num_slices(), set.num_rows(), set.num_cols()],
        constraints: set.constraints,
        config: config.cloned(),
        flatten: set.flatten.clone(),
    };
    fs::write(dir.join("surfaces.json"), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

pub fn read_surfaces(dir: impl AsRef<Path>) -> Result<SurfaceSet> {
    let dir = dir.as_ref();
    let sidecar_path = dir.join("surfaces.json");
    if !sidecar_path.exists() {
        return Err(Error::FileNotFound(sidecar_path));
    }
    let sidecar: SurfaceSidecar = serde_json::from_slice(&fs::read(&sidecar_path)?)?;
    let [ns, nh, nw] = sidecar.dims;
    let mut rows = vec![usize::MAX; sidecar.num_surfaces * ns * nw];
    for k in 0..sidecar.num_surfaces {
        let path = dir.join(format!("surface_{k}.csv"));
        if !path.exists() {
            return Err(Error::FileNotFound(path));
        }
        let text = fs::read_to_string(&path)?;
        for (n, line) in text.lines().enumerate().skip(1) {
            let fields: Vec<usize> = line
                .split(',')
                .map(|f| f.trim().parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::BadFormat(format!("{}:{}: {e}", path.display(), n + 1)))?;
            let [s, x, r] = fields[..] else {
                return Err(Error::BadFormat(format!("{}:{}: expected 3 fields", path.display(), n + 1)));
            };
            if s >= ns || x >= nw {
                return Err(Error::BadFormat(format!("{}:{}: index out of range", path.display(), n + 1)));
            }
            rows[(k * ns + s) * nw + x] = r;
        }
    }
    if rows.contains(&usize::MAX) {
        return Err(Error::BadFormat("surface CSVs do not cover every (slice, column)".into()));
    }
    let mut set = SurfaceSet::new(sidecar.num_surfaces, ns, nh, nw, rows)?;
    set.constraints = sidecar.constraints;
    set.flatten = sidecar.flatten;
    Ok(set)
}
