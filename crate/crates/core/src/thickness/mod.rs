//! Thickness maps: layer thickness, turbo color mapping, en-face projection
//! of selected layers and the final overlay.

mod turbo_lut;

pub use turbo_lut::TURBO_LUT;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, StageExt};
use crate::image::{quantize, Rgb8};
use crate::segmentation::{segment_layers, SegmentationConfig, SurfaceSet};
use crate::volume::OctVolume;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThicknessUnits {
    Voxels,
    Micrometers,
}

/// Axial distance between two surfaces, `[S × W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThicknessGrid {
    pub slices: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub pair: (usize, usize),
    pub units: ThicknessUnits,
}

impl ThicknessGrid {
    pub fn to_micrometers(&self, axial_um_per_voxel: f64) -> ThicknessGrid {
        let factor = match self.units {
            ThicknessUnits::Voxels => axial_um_per_voxel,
            ThicknessUnits::Micrometers => 1.0,
        };
        ThicknessGrid {
            values: self.values.iter().map(|v| v * factor).collect(),
            units: ThicknessUnits::Micrometers,
            ..self.clone()
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

pub fn layer_thickness(surfaces: &SurfaceSet, i: usize, j: usize) -> Result<ThicknessGrid> {
    if i >= j || j >= surfaces.num_surfaces() {
        return Err(Error::InvalidArgument(format!(
            "thickness pair ({i}, {j}) needs i < j < {}",
            surfaces.num_surfaces()
        )));
    }
    let (ns, nw) = (surfaces.num_slices(), surfaces.num_cols());
    let mut values = Vec::with_capacity(ns * nw);
    for s in 0..ns {
        for x in 0..nw {
            values.push(surfaces.row(j, s, x) as f64 - surfaces.row(i, s, x) as f64);
        }
    }
    Ok(ThicknessGrid { slices: ns, cols: nw, values, pair: (i, j), units: ThicknessUnits::Voxels })
}

/// Exact at both ends and on constant inputs.
#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Bilinear resize with corner-aligned sampling of a row-major grid.
pub fn resize_bilinear(grid: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Result<Vec<f64>> {
    if rows < 2 || cols < 2 {
        return Err(Error::Dimension(format!("resize source must be at least 2x2, got {rows}x{cols}")));
    }
    resize_plane(grid, rows, cols, out_rows, out_cols)
}

pub(crate) fn resize_plane(grid: &[f64], rows: usize, cols: usize, out_rows: usize, out_cols: usize) -> Result<Vec<f64>> {
    if out_rows < 1 || out_cols < 1 {
        return Err(Error::Dimension(format!("resize target {out_rows}x{out_cols} is empty")));
    }
    if grid.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::Shape(format!("{} values for a {rows}x{cols} grid", grid.len())));
    }
    if (rows, cols) == (out_rows, out_cols) {
        return Ok(grid.to_vec());
    }
    let coord = |i: usize, n_out: usize, n_in: usize| -> (usize, usize, f64) {
        if n_out == 1 || n_in == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
        let lo = (pos.floor() as usize).min(n_in - 1);
        let hi = (lo + 1).min(n_in - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(out_rows * out_cols);
    for y in 0..out_rows {
        let (y0, y1, fy) = coord(y, out_rows, rows);
        for x in 0..out_cols {
            let (x0, x1, fx) = coord(x, out_cols, cols);
            let top = lerp(grid[y0 * cols + x0], grid[y0 * cols + x1], fx);
            let bottom = lerp(grid[y1 * cols + x0], grid[y1 * cols + x1], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    Ok(out)
}

/// Turbo color for a normalized position in [0, 1], linearly interpolated
/// between adjacent LUT entries.
pub fn turbo_color(t: f64) -> [f64; 3] {
    let pos = t.clamp(0.0, 1.0) * 255.0;
    let k = (pos.floor() as usize).min(255);
    if k == 255 {
        return TURBO_LUT[255];
    }
    let f = pos - k as f64;
    let (a, b) = (TURBO_LUT[k], TURBO_LUT[k + 1]);
    [0, 1, 2].map(|c| lerp(a[c], b[c], f))
}

pub fn turbo_map(grid: &[f64], rows: usize, cols: usize, t_lo: f64, t_hi: f64) -> Result<Rgb8> {
    if !(t_lo < t_hi) {
        return Err(Error::InvalidArgument(format!("turbo range needs t_lo < t_hi, got [{t_lo}, {t_hi}]")));
    }
    if grid.len() != rows * cols {
        return Err(Error::Shape(format!("{} values for a {rows}x{cols} grid", grid.len())));
    }
    let mut img = Rgb8::new(rows, cols);
    for y in 0..rows {
        for x in 0..cols {
            let t = (grid[y * cols + x].clamp(t_lo, t_hi) - t_lo) / (t_hi - t_lo);
            img.put(y, x, turbo_color(t).map(quantize));
        }
    }
    Ok(img)
}

/// Mean intensity over the rows spanned by the named layers. Layer `l`
/// covers rows `[row(l), row(l+1))`; A-scans with an empty span give 0.
pub fn enface_projection(vol: &OctVolume, surfaces: &SurfaceSet, layer_ids: &[usize]) -> Result<Vec<f64>> {
    let k = surfaces.num_surfaces();
    if layer_ids.is_empty() {
        return Err(Error::InvalidArgument("no projection layers named".into()));
    }
    if let Some(l) = layer_ids.iter().find(|&&l| l + 1 >= k) {
        return Err(Error::InvalidArgument(format!("layer {l} needs surfaces {l} and {} of {k}", l + 1)));
    }
    let [ns, nh, nw] = vol.dims();
    if [surfaces.num_slices(), surfaces.num_rows(), surfaces.num_cols()] != [ns, nh, nw] {
        return Err(Error::Shape("surfaces and volume dimensions differ".into()));
    }
    let mut layers = layer_ids.to_vec();
    layers.sort_unstable();
    layers.dedup();
    let mut out = vec![0.0; ns * nw];
    let mut empty = 0usize;
    for s in 0..ns {
        for x in 0..nw {
            let mut sum = 0.0;
            let mut count = 0usize;
            for &l in &layers {
                for z in surfaces.row(l, s, x)..surfaces.row(l + 1, s, x) {
                    sum += f64::from(vol.at(s, z, x));
                    count += 1;
                }
            }
            if count == 0 {
                empty += 1;
            } else {
                out[s * nw + x] = sum / count as f64;
            }
        }
    }
    if empty > 0 {
        log::warn!("en-face projection: {empty} A-scans have an empty layer span");
    }
    Ok(out)
}

/// `(1 - alpha) * rgb + alpha * gray` per channel, rounded half up.
pub fn overlay(rgb: &Rgb8, gray: &[f64], alpha: f64) -> Result<Rgb8> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!("alpha {alpha} outside [0, 1]")));
    }
    if gray.len() != rgb.height * rgb.width {
        return Err(Error::Shape(format!(
            "gray grid has {} values, image is {}x{}",
            gray.len(),
            rgb.height,
            rgb.width
        )));
    }
    let mut out = rgb.clone();
    for (i, px) in out.data.chunks_exact_mut(3).enumerate() {
        let g = gray[i].clamp(0.0, 1.0) * 255.0;
        for c in px.iter_mut() {
            let v = (1.0 - alpha) * f64::from(*c) + alpha * g;
            *c = (v + 0.5).floor().clamp(0.0, 255.0) as u8;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ThicknessConfig {
    pub segmentation: SegmentationConfig,
    pub thickness_pair: (usize, usize),
    pub projection_layers: Vec<usize>,
    /// Fixed normalization range in `units`.
    pub t_lo: f64,
    pub t_hi: f64,
    pub units: ThicknessUnits,
    pub alpha: f64,
    pub output_size: usize,
}

impl Default for ThicknessConfig {
    fn default() -> Self {
        ThicknessConfig {
            segmentation: SegmentationConfig::default(),
            thickness_pair: (0, 1),
            projection_layers: vec![0, 1],
            t_lo: 0.0,
            t_hi: 150.0,
            units: ThicknessUnits::Voxels,
            alpha: 0.35,
            output_size: 512,
        }
    }
}

impl ThicknessConfig {
    pub fn surface_config_hash(&self) -> String {
        let json = serde_json::to_vec(&self.segmentation).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThicknessMap {
    pub rgb: Rgb8,
    pub range: (f64, f64),
    pub thickness: ThicknessGrid,
    pub surfaces: SurfaceSet,
}

/// Sidecar written next to a rendered map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThicknessSidecar {
    pub config: ThicknessConfig,
    pub range: (f64, f64),
    pub alpha: f64,
    pub surface_config_hash: String,
    pub mean_thickness: f64,
}

impl ThicknessMap {
    pub fn sidecar(&self, config: &ThicknessConfig) -> ThicknessSidecar {
        ThicknessSidecar {
            config: config.clone(),
            range: self.range,
            alpha: config.alpha,
            surface_config_hash: config.surface_config_hash(),
            mean_thickness: self.thickness.mean(),
        }
    }
}

/// Segment, measure, color, project and overlay.
pub fn generate_thickness_map(vol: &OctVolume, cfg: &ThicknessConfig) -> Result<ThicknessMap> {
    let surfaces = segment_layers(vol, &cfg.segmentation).stage("segmentation")?;
    let (i, j) = cfg.thickness_pair;
    let mut thickness = layer_thickness(&surfaces, i, j).stage("thickness")?;
    if cfg.units == ThicknessUnits::Micrometers {
        thickness = thickness.to_micrometers(vol.voxel_scale[0]);
    }
    let n = cfg.output_size;
    let resized = resize_bilinear(&thickness.values, thickness.slices, thickness.cols, n, n).stage("resize")?;
    let colored = turbo_map(&resized, n, n, cfg.t_lo, cfg.t_hi).stage("turbo")?;
    let gray = enface_projection(vol, &surfaces, &cfg.projection_layers).stage("projection")?;
    let gray = resize_bilinear(&gray, thickness.slices, thickness.cols, n, n).stage("resize")?;
    let rgb = overlay(&colored, &gray, cfg.alpha).stage("overlay")?;
    Ok(ThicknessMap { rgb, range: (cfg.t_lo, cfg.t_hi), thickness, surfaces })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn offset_surfaces(offset: usize) -> SurfaceSet {
        let (s, w) = (3, 5);
        let mut rows = Vec::new();
        for k in 0..2 {
            for si in 0..s {
                for x in 0..w {
                    rows.push(4 + si + x % 2 + k * offset);
                }
            }
        }
        SurfaceSet::new(2, s, 40, w, rows).unwrap()
    }

    #[test]
    fn constant_offset_thickness() {
        let t = layer_thickness(&offset_surfaces(17), 0, 1).unwrap();
        assert!(t.values.iter().all(|&v| v == 17.0));
        assert_eq!(t.to_micrometers(2.0).values[0], 34.0);
        assert!(layer_thickness(&offset_surfaces(17), 1, 1).is_err());
        assert!(layer_thickness(&offset_surfaces(17), 1, 0).is_err());
    }

    #[test]
    fn bilinear_cases() {
        let g = [0.0, 1.0, 1.0, 2.0];
        let r = resize_bilinear(&g, 2, 2, 3, 3).unwrap();
        assert_eq!(r[4], 1.0);
        assert_eq!(r, vec![0.0, 0.5, 1.0, 0.5, 1.0, 1.5, 1.0, 1.5, 2.0]);
        assert_eq!(resize_bilinear(&g, 2, 2, 2, 2).unwrap(), g.to_vec());
        assert!(resize_bilinear(&[3.5; 6], 2, 3, 7, 11).unwrap().iter().all(|&v| v == 3.5));
        assert!(resize_bilinear(&g, 2, 2, 0, 3).is_err());
    }

    #[test]
    fn turbo_endpoints_and_knots() {
        // first and last entries of the published table
        assert_eq!(TURBO_LUT[0], [0.18995, 0.07176, 0.23217]);
        assert_eq!(TURBO_LUT[255], [0.4796, 0.01583, 0.01055]);
        let img = turbo_map(&[0.0, 150.0, -20.0, 400.0], 1, 4, 0.0, 150.0).unwrap();
        assert_eq!(img.pixel(0, 0), [48, 18, 59]);
        assert_eq!(img.pixel(0, 1), [122, 4, 3]);
        assert_eq!(img.pixel(0, 2), img.pixel(0, 0));
        assert_eq!(img.pixel(0, 3), img.pixel(0, 1));
        for k in 0..256 {
            assert_eq!(turbo_color(k as f64 / 255.0).map(quantize), TURBO_LUT[k].map(quantize), "knot {k}");
        }
        assert!(turbo_map(&[1.0], 1, 1, 2.0, 2.0).is_err());
    }

    #[test]
    fn equal_colors_only_for_close_values() {
        // exhaustive over a fine grid: pixels sharing a color are less than one LUT step apart
        let n = 25_500;
        let mut by_color = std::collections::HashMap::<[u8; 3], (usize, usize)>::new();
        for i in 0..=n {
            let c = turbo_color(i as f64 / n as f64).map(quantize);
            let e = by_color.entry(c).or_insert((i, i));
            e.0 = e.0.min(i);
            e.1 = e.1.max(i);
        }
        for (c, (lo, hi)) in by_color {
            assert!(((hi - lo) as f64) < n as f64 / 255.0, "{c:?} spans {lo}..{hi}");
        }
    }

    fn two_layer_volume() -> (OctVolume, SurfaceSet) {
        let (s, h, w) = (2, 20, 3);
        let mut data = vec![0.0f32; s * h * w];
        for si in 0..s {
            for z in 0..h {
                for x in 0..w {
                    data[(si * h + z) * w + x] = match z {
                        4..=7 => 0.2,
                        8..=11 => 0.6,
                        _ => 0.9,
                    };
                }
            }
        }
        let rows = [4usize, 8, 12].iter().flat_map(|&r| vec![r; s * w]).collect();
        (OctVolume::new([s, h, w], [1.0; 3], data).unwrap(), SurfaceSet::new(3, s, h, w, rows).unwrap())
    }

    #[test]
    fn projection_means() {
        let (vol, surf) = two_layer_volume();
        let single = enface_projection(&vol, &surf, &[1]).unwrap();
        assert!(single.iter().all(|&v| (v - 0.6).abs() < 1e-7));
        let joint = enface_projection(&vol, &surf, &[0, 1]).unwrap();
        assert!(joint.iter().all(|&v| (v - 0.4).abs() < 1e-7));
        assert!(enface_projection(&vol, &surf, &[2]).is_err());
    }

    #[test]
    fn empty_span_projects_to_zero() {
        let (vol, _) = two_layer_volume();
        let rows = [4usize, 4, 12].iter().flat_map(|&r| vec![r; 6]).collect();
        let surf = SurfaceSet::new(3, 2, 20, 3, rows).unwrap();
        assert!(enface_projection(&vol, &surf, &[0]).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn overlay_blend() {
        let mut rgb = Rgb8::new(1, 2);
        rgb.put(0, 0, [100, 0, 200]);
        rgb.put(0, 1, [7, 8, 9]);
        let gray = [0.2, 1.0];
        assert_eq!(overlay(&rgb, &gray, 0.0).unwrap(), rgb);
        let full = overlay(&rgb, &gray, 1.0).unwrap();
        assert_eq!(full.pixel(0, 0), [51, 51, 51]);
        assert_eq!(full.pixel(0, 1), [255, 255, 255]);
        assert_eq!(overlay(&rgb, &gray, 0.5).unwrap().pixel(0, 0), [76, 26, 126]);
        assert!(overlay(&rgb, &[0.1], 0.5).is_err());
        assert!(overlay(&rgb, &gray, 1.5).is_err());
    }
}
