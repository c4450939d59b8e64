use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{check_grade, FundusImage, Grade, GroundTruth, OctVolume};
use crate::error::{Error, Result};
use crate::rng;
use crate::segmentation::SurfaceSet;

/// Parameters of the layered phantom generator.
///
/// Surface 0 sits at `base_depths[0]` plus a seeded undulation. Every later
/// surface is the previous one plus the nominal layer thickness
/// `base_depths[k + 1] - base_depths[k]`. The target layer's thickness is
/// additionally scaled by `thinning^grade` and modulated by a Gaussian bump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    /// (slices, rows, columns).
    pub dims: [usize; 3],
    pub voxel_scale: [f64; 3],
    pub base_depths: Vec<f64>,
    /// Peak-to-zero undulation of the top surface, in rows.
    pub undulation_amplitude: f64,
    /// Cycles per image width of the dominant undulation component.
    pub undulation_frequency: f64,
    /// Relative height of the Gaussian bump on the target layer thickness.
    pub bump_amplitude: f64,
    /// Mean intensity per region: above surface 0, each layer, below the last surface.
    pub layer_intensities: Vec<f64>,
    pub noise_sigma: f64,
    pub thinning: f64,
    /// Layer index (between surfaces `t` and `t + 1`) that thins with grade.
    pub target_layer: usize,
    /// Relative per-case variation of all layer thicknesses.
    pub thickness_jitter: f64,
    pub fundus_size: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            dims: [32, 64, 64],
            voxel_scale: [2.0, 11.7, 23.4],
            base_depths: vec![12.0, 28.0, 38.0, 48.0],
            undulation_amplitude: 3.0,
            undulation_frequency: 1.0,
            bump_amplitude: 0.25,
            layer_intensities: vec![0.1, 0.9, 0.4, 0.7, 0.3],
            noise_sigma: 0.05,
            thinning: 0.7,
            target_layer: 0,
            thickness_jitter: 0.1,
            fundus_size: 64,
        }
    }
}

impl PhantomSpec {
    /// Same layer model at the faithful 256 × 992 × 512 geometry.
    pub fn full_scale() -> Self {
        let scale = OctVolume::FULL_SCALE_DIMS[1] as f64 / 64.0;
        let d = PhantomSpec::default();
        PhantomSpec {
            dims: OctVolume::FULL_SCALE_DIMS,
            base_depths: d.base_depths.iter().map(|b| b * scale).collect(),
            undulation_amplitude: d.undulation_amplitude * scale,
            fundus_size: 1024,
            ..d
        }
    }

    pub fn num_surfaces(&self) -> usize {
        self.base_depths.len()
    }

    pub fn validate(&self) -> Result<()> {
        let [s, h, w] = self.dims;
        if s < 1 || h < 4 || w < 2 {
            return Err(Error::InvalidSpec(format!("dims {s}x{h}x{w} too small")));
        }
        let k = self.base_depths.len();
        if k == 0 {
            return Err(Error::InvalidSpec("at least one surface is required".into()));
        }
        if self.base_depths.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::InvalidSpec("base_depths must be strictly increasing".into()));
        }
        if self.layer_intensities.len() != k + 1 {
            return Err(Error::InvalidSpec(format!(
                "{} surfaces need {} region intensities, got {}",
                k,
                k + 1,
                self.layer_intensities.len()
            )));
        }
        if self.layer_intensities.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidSpec("region intensities must lie in [0, 1]".into()));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::InvalidSpec("noise_sigma must be >= 0".into()));
        }
        if !(self.thinning > 0.0 && self.thinning <= 1.0) {
            return Err(Error::InvalidSpec("thinning must lie in (0, 1]".into()));
        }
        if k >= 2 && self.target_layer >= k - 1 {
            return Err(Error::InvalidSpec(format!(
                "target_layer {} has no lower surface",
                self.target_layer
            )));
        }
        if !(0.0..1.0).contains(&self.thickness_jitter) || !(self.bump_amplitude > -1.0) {
            return Err(Error::InvalidSpec("jitter must be in [0, 1) and bump > -1".into()));
        }
        if self.undulation_amplitude < 0.0 || self.fundus_size < 8 {
            return Err(Error::InvalidSpec("negative amplitude or fundus smaller than 8".into()));
        }
        Ok(())
    }
}

/// Seeded geometry shared by all grades of one seed.
struct Geometry {
    /// (amplitude, cycles per width, phase, phase drift per slice)
    waves: Vec<(f64, f64, f64, f64)>,
    bump_center: (f64, f64),
    bump_width: (f64, f64),
    thickness_scale: f64,
}

impl Geometry {
    fn draw(spec: &PhantomSpec, seed: u64) -> Geometry {
        let mut r = rng::stream(seed, &[0]);
        let n_waves = r.random_range(1..=3usize);
        // amplitudes sum to the configured amplitude, dominant first
        let mut weights: Vec<f64> = (0..n_waves).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let waves = weights
            .iter()
            .enumerate()
            .map(|(i, wgt)| {
                let freq = spec.undulation_frequency * (i as f64 + 1.0) * r.random_range(0.8..1.2);
                let phase = r.random_range(0.0..2.0 * PI);
                let drift = r.random_range(-0.5..0.5);
                (spec.undulation_amplitude * wgt, freq, phase, drift)
            })
            .collect();
        let [s, _, w] = spec.dims;
        let bump_center = (
            r.random_range(0.3..0.7) * s as f64,
            r.random_range(0.3..0.7) * w as f64,
        );
        let bump_width = (0.25 * s.max(2) as f64, 0.2 * w as f64);
        let thickness_scale = 1.0 + spec.thickness_jitter * r.random_range(-1.0..=1.0);
        Geometry { waves, bump_center, bump_width, thickness_scale }
    }
}

/// Continuous surface depths `[K × S × W]` for the given case.
pub fn analytic_surfaces(spec: &PhantomSpec, grade: Grade, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    check_grade(grade)?;
    let geo = Geometry::draw(spec, seed);
    Ok(surfaces_from_geometry(spec, &geo, grade))
}

fn surfaces_from_geometry(spec: &PhantomSpec, geo: &Geometry, grade: Grade) -> Vec<f64> {
    let [ns, _, nw] = spec.dims;
    let k = spec.num_surfaces();
    let thin = spec.thinning.powi(grade as i32);
    let mut out = vec![0.0; k * ns * nw];
    for s in 0..ns {
        for x in 0..nw {
            let u: f64 = geo
                .waves
                .iter()
                .map(|&(a, f, ph, dr)| a * (2.0 * PI * f * x as f64 / nw as f64 + ph + dr * s as f64).sin())
                .sum();
            let ds = (s as f64 - geo.bump_center.0) / geo.bump_width.0;
            let dx = (x as f64 - geo.bump_center.1) / geo.bump_width.1;
            let bump = (-0.5 * (ds * ds + dx * dx)).exp();
            let mut depth = spec.base_depths[0] + u;
            out[s * nw + x] = depth;
            for layer in 0..k - 1 {
                let mut t = (spec.base_depths[layer + 1] - spec.base_depths[layer]) * geo.thickness_scale;
                if layer == spec.target_layer {
                    t *= thin * (1.0 + spec.bump_amplitude * bump);
                }
                depth += t;
                out[((layer + 1) * ns + s) * nw + x] = depth;
            }
        }
    }
    out
}

/// Generate one labeled case. A pure function of `(spec, grade, seed)`.
pub fn synth_case(spec: &PhantomSpec, grade: Grade, seed: u64) -> Result<(OctVolume, FundusImage, GroundTruth)> {
    spec.validate()?;
    check_grade(grade)?;
    let [ns, nh, nw] = spec.dims;
    let k = spec.num_surfaces();
    let geo = Geometry::draw(spec, seed);
    let analytic = surfaces_from_geometry(spec, &geo, grade);

    for (i, d) in analytic.iter().enumerate() {
        let d = d.round();
        if d < 1.0 || d > (nh - 2) as f64 {
            let (kk, s, x) = (i / (ns * nw), (i / nw) % ns, i % nw);
            return Err(Error::InvalidSpec(format!(
                "surface {kk} leaves the image at slice {s}, column {x} (row {d})"
            )));
        }
    }
    let rows: Vec<usize> = analytic.iter().map(|d| d.round() as usize).collect();
    for kk in 1..k {
        for i in 0..ns * nw {
            if rows[kk * ns * nw + i] <= rows[(kk - 1) * ns * nw + i] {
                return Err(Error::InvalidSpec(format!(
                    "surfaces {} and {kk} cross at slice {}, column {}",
                    kk - 1,
                    i / nw,
                    i % nw
                )));
            }
        }
    }
    let surfaces = SurfaceSet::new(k, ns, nh, nw, rows)?;

    let mut noise_rng = rng::stream(seed, &[1, grade as u64]);
    let normal = Normal::new(0.0, spec.noise_sigma.max(0.0)).map_err(|e| Error::InvalidSpec(e.to_string()))?;
    let mut data = Vec::with_capacity(ns * nh * nw);
    let means = &spec.layer_intensities;
    for s in 0..ns {
        for z in 0..nh {
            for x in 0..nw {
                let v = region_intensity(means, &surfaces, s, z, x);
                let v = if spec.noise_sigma > 0.0 { v + normal.sample(&mut noise_rng) } else { v };
                data.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    let volume = OctVolume::new(spec.dims, spec.voxel_scale, data)?;
    let fundus = super::fundus::render_fundus(spec.fundus_size, grade, seed)?;
    Ok((volume, fundus, GroundTruth { surfaces, grade }))
}

/// Noise-free intensity at a voxel. A voxel lying on a surface takes the mean
/// of the regions it separates.
fn region_intensity(means: &[f64], surfaces: &SurfaceSet, s: usize, z: usize, x: usize) -> f64 {
    let mut region = 0;
    for kk in 0..surfaces.num_surfaces() {
        let r = surfaces.row(kk, s, x);
        if z == r {
            return 0.5 * (means[kk] + means[kk + 1]);
        }
        if z > r {
            region = kk + 1;
        }
    }
    means[region]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zero_noise() -> PhantomSpec {
        PhantomSpec { noise_sigma: 0.0, ..PhantomSpec::default() }
    }

    #[test]
    fn zero_noise_surfaces_match_analytic_grid() {
        let spec = zero_noise();
        let (vol, _, gt) = synth_case(&spec, 0, 7).unwrap();
        let analytic = analytic_surfaces(&spec, 0, 7).unwrap();
        assert_eq!(gt.surfaces.num_surfaces(), 4);
        for (r, a) in gt.surfaces.rows().iter().zip(&analytic) {
            assert_eq!(*r as f64, a.round());
        }
        // voxels strictly inside the target layer carry its mean exactly
        let (s, x) = (3, 5);
        let (top, bottom) = (gt.surfaces.row(0, s, x), gt.surfaces.row(1, s, x));
        for z in top + 1..bottom {
            assert_eq!(vol.at(s, z, x), 0.9f32);
        }
        assert_eq!(vol.at(s, top, x), 0.5f32);
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = PhantomSpec::default();
        let a = synth_case(&spec, 1, 7).unwrap();
        let b = synth_case(&spec, 1, 7).unwrap();
        let bytes = |v: &OctVolume| v.data().iter().flat_map(|f| f.to_le_bytes()).collect::<Vec<_>>();
        assert_eq!(bytes(&a.0), bytes(&b.0));
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
        let c = synth_case(&spec, 1, 8).unwrap();
        assert_ne!(bytes(&a.0), bytes(&c.0));
    }

    #[test]
    fn thinning_scales_target_layer_mean() {
        let spec = PhantomSpec { thinning: 0.7, ..zero_noise() };
        let mean_thickness = |grade| {
            let (_, _, gt) = synth_case(&spec, grade, 11).unwrap();
            let n = gt.surfaces.num_slices() * gt.surfaces.num_cols();
            let mut sum = 0.0;
            for s in 0..gt.surfaces.num_slices() {
                for x in 0..gt.surfaces.num_cols() {
                    sum += (gt.surfaces.row(1, s, x) - gt.surfaces.row(0, s, x)) as f64;
                }
            }
            sum / n as f64
        };
        let (g0, g2) = (mean_thickness(0), mean_thickness(2));
        assert!((g2 - 0.49 * g0).abs() <= 1.0, "g0={g0} g2={g2}");
    }

    #[test]
    fn surfaces_never_cross_and_thickness_falls_with_grade() {
        let spec = PhantomSpec::default();
        for seed in 0..20 {
            let mut means = Vec::new();
            for grade in 0..3 {
                let (_, _, gt) = synth_case(&spec, grade, seed).unwrap();
                gt.surfaces.check_ordering(1).unwrap();
                let t: usize = (0..spec.dims[0])
                    .flat_map(|s| (0..spec.dims[2]).map(move |x| (s, x)))
                    .map(|(s, x)| gt.surfaces.row(1, s, x) - gt.surfaces.row(0, s, x))
                    .sum();
                means.push(t);
            }
            assert!(means[0] > means[1] && means[1] > means[2], "seed {seed}: {means:?}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let bad_depths = PhantomSpec { base_depths: vec![10.0, 10.0, 20.0, 30.0], ..PhantomSpec::default() };
        assert!(matches!(synth_case(&bad_depths, 0, 1), Err(Error::InvalidSpec(_))));
        let crossing = PhantomSpec {
            base_depths: vec![10.0, 10.5, 11.0, 11.5],
            thinning: 0.5,
            ..PhantomSpec::default()
        };
        assert!(matches!(synth_case(&crossing, 2, 1), Err(Error::InvalidSpec(_))));
        let off_image = PhantomSpec { undulation_amplitude: 40.0, ..PhantomSpec::default() };
        assert!(matches!(synth_case(&off_image, 0, 1), Err(Error::InvalidSpec(_))));
        assert!(matches!(synth_case(&PhantomSpec::default(), 3, 1), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn full_scale_spec_uses_faithful_dims() {
        assert_eq!(PhantomSpec::full_scale().dims, [256, 992, 512]);
        PhantomSpec::full_scale().validate().unwrap();
    }
}
