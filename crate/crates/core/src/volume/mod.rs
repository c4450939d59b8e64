//! OCT volumes, paired fundus images and labeled synthetic cases.

mod container;
mod fundus;
mod phantom;

pub use container::{load_volume, read_header, save_volume, VolumeHeader, VOLUME_MAGIC};
pub use fundus::{cup_disc_ratio, render_fundus};
pub use phantom::{analytic_surfaces, synth_case, PhantomSpec};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::segmentation::SurfaceSet;

/// Glaucoma grade: 0 = None, 1 = Early, 2 = Mid-Advanced.
pub type Grade = u8;
pub const NUM_GRADES: usize = 3;

/// Intensity grid `[slices × rows × columns]` with voxel size metadata.
///
/// Rows are the axial (depth) direction. Storage is slice-major, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OctVolume {
    dims: [usize; 3],
    /// (axial, lateral, slice) in µm per voxel.
    pub voxel_scale: [f64; 3],
    data: Vec<f32>,
}

impl OctVolume {
    /// Faithful-scale dimensions: 256 slices × 992 axial rows × 512 columns.
    pub const FULL_SCALE_DIMS: [usize; 3] = [256, 992, 512];

    pub fn new(dims: [usize; 3], voxel_scale: [f64; 3], data: Vec<f32>) -> Result<Self> {
        let [s, h, w] = dims;
        if s < 1 || h < 4 || w < 2 {
            return Err(Error::Dimension(format!(
                "volume needs S >= 1, H >= 4, W >= 2; got {s}x{h}x{w}"
            )));
        }
        let expected = s * h * w;
        if data.len() != expected {
            return Err(Error::PayloadMismatch { expected, actual: data.len() });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::BadFormat(format!("intensity {} at index {i} outside [0, 1]", data[i])));
        }
        Ok(OctVolume { dims, voxel_scale, data })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }
    pub fn slices(&self) -> usize {
        self.dims[0]
    }
    pub fn rows(&self) -> usize {
        self.dims[1]
    }
    pub fn cols(&self) -> usize {
        self.dims[2]
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, s: usize, z: usize, x: usize) -> f32 {
        self.data[(s * self.dims[1] + z) * self.dims[2] + x]
    }

    /// One B-scan as a row-major `[rows × cols]` grid.
    pub fn slice(&self, s: usize) -> &[f32] {
        let n = self.dims[1] * self.dims[2];
        &self.data[s * n..(s + 1) * n]
    }

    pub(crate) fn from_parts_unchecked(dims: [usize; 3], voxel_scale: [f64; 3], data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), dims.iter().product::<usize>());
        OctVolume { dims, voxel_scale, data }
    }
}

/// Square RGB fundus photograph.
#[derive(Debug, Clone, PartialEq)]
pub struct FundusImage(pub Image);

impl FundusImage {
    pub fn new(image: Image) -> Result<Self> {
        if image.height != image.width {
            return Err(Error::Dimension(format!(
                "fundus image must be square, got {}x{}",
                image.height, image.width
            )));
        }
        if !image.is_valid() {
            return Err(Error::InvalidArgument("fundus values must be finite and in [0, 1]".into()));
        }
        Ok(FundusImage(image))
    }

    /// Bilinear resize to `size × size`.
    pub fn ingest(image: &Image, size: usize) -> Result<Self> {
        FundusImage::new(image.resize(size, size)?)
    }

    pub fn size(&self) -> usize {
        self.0.height
    }
}

/// True surfaces and grade for a generated case.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub surfaces: SurfaceSet,
    pub grade: Grade,
}

pub fn check_grade(grade: Grade) -> Result<()> {
    if (grade as usize) < NUM_GRADES {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("grade {grade} outside 0..=2")))
    }
}
