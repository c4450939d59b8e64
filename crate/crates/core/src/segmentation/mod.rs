//! Retinal surface segmentation.
//!
//! Each B-scan is flattened against a reference boundary, then surfaces are
//! extracted top to bottom as minimum-cost paths with a hard column-to-column
//! smoothness limit. Surface `k + 1` is searched only at or below surface
//! `k` plus the minimum gap.

mod dp;
mod export;
mod flatten;

pub use dp::{brute_force_surface, extract_surface_dp, path_cost, BRUTE_FORCE_LIMIT};
pub use export::{read_surfaces, write_surfaces, SurfaceSidecar};
pub use flatten::{estimate_reference_surface, flatten, unflatten, FlattenRecord};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::OctVolume;

/// Cost assigned to the first and last row so paths stay off them.
pub const BOUNDARY_COST: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    DarkToBright,
    BrightToDark,
}

impl Polarity {
    fn sign(self) -> f64 {
        match self {
            Polarity::DarkToBright => 1.0,
            Polarity::BrightToDark => -1.0,
        }
    }
}

/// Per-pixel cost of placing a surface, row-major `[rows × cols]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostField {
    pub rows: usize,
    pub cols: usize,
    pub cost: Vec<f64>,
    pub polarity: Polarity,
}

impl CostField {
    pub fn new(rows: usize, cols: usize, cost: Vec<f64>, polarity: Polarity) -> Result<Self> {
        if cost.len() != rows * cols {
            return Err(Error::Shape(format!("{} costs for a {rows}x{cols} field", cost.len())));
        }
        if cost.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric("cost field must be finite".into()));
        }
        Ok(CostField { rows, cols, cost, polarity })
    }

    #[inline]
    pub fn at(&self, z: usize, x: usize) -> f64 {
        self.cost[z * self.cols + x]
    }
}

/// Signed central-difference edge cost for one B-scan (`[rows × cols]`, row-major).
///
/// `cost(z, x) = -sign * (I(z+1, x) - I(z-1, x)) / 2`, with `sign = +1` for
/// dark-to-bright edges. Rows 0 and `rows - 1` get [`BOUNDARY_COST`].
pub fn surface_cost(slice: &[f32], rows: usize, cols: usize, polarity: Polarity) -> Result<CostField> {
    surface_cost_with_boundary(slice, rows, cols, polarity, BOUNDARY_COST)
}

pub fn surface_cost_with_boundary(
    slice: &[f32],
    rows: usize,
    cols: usize,
    polarity: Polarity,
    boundary: f64,
) -> Result<CostField> {
    if rows < 3 {
        return Err(Error::Dimension(format!("cost needs at least 3 rows, got {rows}")));
    }
    if slice.len() != rows * cols {
        return Err(Error::Shape(format!("{} intensities for a {rows}x{cols} slice", slice.len())));
    }
    let sign = polarity.sign();
    let mut cost = vec![boundary; rows * cols];
    for z in 1..rows - 1 {
        for x in 0..cols {
            let below = f64::from(slice[(z + 1) * cols + x]);
            let above = f64::from(slice[(z - 1) * cols + x]);
            cost[z * cols + x] = -sign * (below - above) / 2.0;
        }
    }
    CostField::new(rows, cols, cost, polarity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurfaceConstraints {
    /// Maximum row change between adjacent columns (in the flattened frame).
    pub smoothness: usize,
    /// Minimum row distance between consecutive surfaces.
    pub min_gap: usize,
}

/// Integer surface rows `[K × S × W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSet {
    num_surfaces: usize,
    num_slices: usize,
    num_rows: usize,
    num_cols: usize,
    rows: Vec<usize>,
    pub constraints: Option<SurfaceConstraints>,
    pub flatten: Option<FlattenRecord>,
}

impl SurfaceSet {
    pub fn new(k: usize, s: usize, h: usize, w: usize, rows: Vec<usize>) -> Result<Self> {
        if rows.len() != k * s * w {
            return Err(Error::Shape(format!("{} rows for {k} surfaces of {s}x{w}", rows.len())));
        }
        if let Some(r) = rows.iter().find(|&&r| r >= h) {
            return Err(Error::Dimension(format!("surface row {r} outside 0..{h}")));
        }
        Ok(SurfaceSet {
            num_surfaces: k,
            num_slices: s,
            num_rows: h,
            num_cols: w,
            rows,
            constraints: None,
            flatten: None,
        })
    }

    pub fn num_surfaces(&self) -> usize {
        self.num_surfaces
    }
    pub fn num_slices(&self) -> usize {
        self.num_slices
    }
    pub fn num_rows(&self) -> usize {
        self.num_rows
    }
    pub fn num_cols(&self) -> usize {
        self.num_cols
    }
    pub fn rows(&self) -> &[usize] {
        &self.rows
    }

    #[inline]
    pub fn row(&self, k: usize, s: usize, x: usize) -> usize {
        self.rows[(k * self.num_slices + s) * self.num_cols + x]
    }

    /// Rows of surface `k` on slice `s`.
    pub fn line(&self, k: usize, s: usize) -> &[usize] {
        let start = (k * self.num_slices + s) * self.num_cols;
        &self.rows[start..start + self.num_cols]
    }

    /// `row(k+1) >= row(k) + gap` everywhere.
    pub fn check_ordering(&self, gap: usize) -> Result<()> {
        for k in 1..self.num_surfaces {
            for s in 0..self.num_slices {
                for x in 0..self.num_cols {
                    if self.row(k, s, x) < self.row(k - 1, s, x) + gap {
                        return Err(Error::InvalidArgument(format!(
                            "surfaces {} and {k} closer than {gap} at slice {s}, column {x}",
                            k - 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Adjacent-column row change bounded by `delta`, measured in the
    /// flattened frame when a flatten record is attached.
    pub fn check_smoothness(&self, delta: usize) -> Result<()> {
        for k in 0..self.num_surfaces {
            for s in 0..self.num_slices {
                for x in 1..self.num_cols {
                    let (a, b) = match &self.flatten {
                        Some(f) => (
                            f.flatten_row(s, x - 1, self.row(k, s, x - 1)),
                            f.flatten_row(s, x, self.row(k, s, x)),
                        ),
                        None => (self.row(k, s, x - 1), self.row(k, s, x)),
                    };
                    if a.abs_diff(b) > delta {
                        return Err(Error::InvalidArgument(format!(
                            "surface {k} jumps {} rows at slice {s}, column {x}",
                            a.abs_diff(b)
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Check the recorded constraints, if any.
    pub fn validate(&self) -> Result<()> {
        match self.constraints {
            Some(c) => {
                self.check_ordering(c.min_gap)?;
                self.check_smoothness(c.smoothness)
            }
            None => self.check_ordering(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmentationConfig {
    pub polarities: Vec<Polarity>,
    pub smoothness: usize,
    pub min_gap: usize,
    pub boundary_cost: f64,
    /// Flatten against an estimated reference boundary before extraction.
    pub flatten: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        use Polarity::*;
        SegmentationConfig {
            polarities: vec![DarkToBright, BrightToDark, DarkToBright, BrightToDark],
            smoothness: 2,
            min_gap: 2,
            boundary_cost: BOUNDARY_COST,
            flatten: true,
        }
    }
}

impl SegmentationConfig {
    pub fn num_surfaces(&self) -> usize {
        self.polarities.len()
    }
}

/// In the flattened frame, give the sentinel cost to every row that is a
/// boundary row of the original frame or lies across the wrap seam, so
/// extracted surfaces unflatten without wrapping and keep their order.
fn mask_wrapped_rows(cost: &mut CostField, record: &FlattenRecord, s: usize, boundary: f64) {
    let h = cost.rows as i64;
    for x in 0..cost.cols {
        let shift = record.shift(s, x);
        for z in 0..cost.rows {
            let original = z as i64 - shift;
            if original < 1 || original > h - 2 {
                cost.cost[z * cost.cols + x] = boundary;
            }
        }
    }
}

fn segment_slice(
    slice: &[f32],
    rows: usize,
    cols: usize,
    s: usize,
    cfg: &SegmentationConfig,
    record: Option<&FlattenRecord>,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(cfg.num_surfaces() * cols);
    let mut lower = vec![0usize; cols];
    for (k, &pol) in cfg.polarities.iter().enumerate() {
        let mut cost = surface_cost_with_boundary(slice, rows, cols, pol, cfg.boundary_cost)?;
        if let Some(rec) = record {
            mask_wrapped_rows(&mut cost, rec, s, cfg.boundary_cost);
        }
        let line = extract_surface_dp(&cost, cfg.smoothness, &lower).map_err(|e| match e {
            Error::Infeasible(msg) => Error::Infeasible(format!("surface {k}, slice {s}: {msg}")),
            other => other,
        })?;
        lower = line.iter().map(|r| r + cfg.min_gap).collect();
        out.extend_from_slice(&line);
    }
    Ok(out)
}

/// Segment `K = cfg.polarities.len()` surfaces in every slice.
pub fn segment_layers(vol: &OctVolume, cfg: &SegmentationConfig) -> Result<SurfaceSet> {
    let k = cfg.num_surfaces();
    if k == 0 {
        return Err(Error::InvalidArgument("at least one surface polarity is required".into()));
    }
    let [ns, nh, nw] = vol.dims();
    let (work, record) = if cfg.flatten {
        let reference = estimate_reference_surface(vol)?;
        let (flat, rec) = flatten(vol, &reference)?;
        (flat, Some(rec))
    } else {
        (vol.clone(), None)
    };
    let per_slice: Vec<Vec<usize>> = (0..ns)
        .into_par_iter()
        .map(|s| segment_slice(work.slice(s), nh, nw, s, cfg, record.as_ref()))
        .collect::<Result<_>>()?;

    let mut rows = vec![0usize; k * ns * nw];
    for (s, lines) in per_slice.iter().enumerate() {
        for kk in 0..k {
            for x in 0..nw {
                let r = lines[kk * nw + x];
                rows[(kk * ns + s) * nw + x] = match &record {
                    Some(rec) => rec.unflatten_row(s, x, r),
                    None => r,
                };
            }
        }
    }
    let mut set = SurfaceSet::new(k, ns, nh, nw, rows)?;
    set.constraints = Some(SurfaceConstraints { smoothness: cfg.smoothness, min_gap: cfg.min_gap });
    set.flatten = record;
    set.validate()?;
    Ok(set)
}
