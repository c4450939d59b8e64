//! Stochastic view generation. Draws happen in a fixed order (three jitter
//! gains, grayscale, crop scale, flip) whether or not a step is active, so the
//! RNG stream advances identically for every spec.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::Pcg32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Fundus,
    Thickness,
}

impl Branch {
    pub const ALL: [Branch; 2] = [Branch::Fundus, Branch::Thickness];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Fundus => "fundus",
            Branch::Thickness => "thickness",
        }
    }

    pub fn tag(self) -> u64 {
        match self {
            Branch::Fundus => 0,
            Branch::Thickness => 1,
        }
    }
}

/// Colour jitter and grayscale apply to fundus images only; thickness maps
/// encode values in their hue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentationSpec {
    pub branch: Branch,
    pub jitter: f64,
    pub grayscale_p: f64,
    pub crop_scale: (f64, f64),
    pub flip_p: f64,
}

impl Default for AugmentationSpec {
    fn default() -> Self {
        AugmentationSpec { branch: Branch::Fundus, jitter: 0.2, grayscale_p: 0.1, crop_scale: (0.8, 1.0), flip_p: 0.5 }
    }
}

impl AugmentationSpec {
    pub fn for_branch(branch: Branch) -> Self {
        AugmentationSpec { branch, ..Default::default() }
    }

    /// Every step disabled.
    pub fn identity(branch: Branch) -> Self {
        AugmentationSpec { branch, jitter: 0.0, grayscale_p: 0.0, crop_scale: (1.0, 1.0), flip_p: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale;
        let probability = |p: f64| (0.0..=1.0).contains(&p);
        if !(0.0..1.0).contains(&self.jitter)
            || !probability(self.grayscale_p)
            || !probability(self.flip_p)
            || !(lo > 0.0 && lo <= hi && hi <= 1.0)
        {
            return Err(Error::InvalidArgument(format!("invalid augmentation spec {self:?}")));
        }
        Ok(())
    }
}

pub fn augment(image: &Image, spec: &AugmentationSpec, rng: &mut Pcg32) -> Result<Image> {
    spec.validate()?;
    let gains: [f64; 3] = std::array::from_fn(|_| 1.0 + spec.jitter * (2.0 * rng.random::<f64>() - 1.0));
    let gray = rng.random::<f64>() < spec.grayscale_p;
    let (lo, hi) = spec.crop_scale;
    let scale = lo + (hi - lo) * rng.random::<f64>();
    let flip = rng.random::<f64>() < spec.flip_p;

    let mut out = image.clone();
    if spec.branch == Branch::Fundus {
        let plane = out.height * out.width;
        if spec.jitter > 0.0 {
            for (c, gain) in gains.iter().enumerate() {
                for v in &mut out.data[c * plane..(c + 1) * plane] {
                    *v = (*v * gain).clamp(0.0, 1.0);
                }
            }
        }
        if gray {
            for i in 0..plane {
                let y = 0.299 * out.data[i] + 0.587 * out.data[plane + i] + 0.114 * out.data[2 * plane + i];
                for c in 0..3 {
                    out.data[c * plane + i] = y;
                }
            }
        }
    }
    let ch = ((scale * out.height as f64).round() as usize).clamp(2, out.height);
    let cw = ((scale * out.width as f64).round() as usize).clamp(2, out.width);
    if ch != out.height || cw != out.width {
        let crop = out.crop((out.height - ch) / 2, (out.width - cw) / 2, ch, cw);
        out = crop.resize(out.height, out.width)?;
    }
    if flip {
        out = out.flip_horizontal();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn ramp() -> Image {
        let mut img = Image::filled(16, 16, [0.0; 3]);
        for c in 0..3 {
            for y in 0..16 {
                for x in 0..16 {
                    img.set(c, y, x, (x + 2 * y + 5 * c) as f64 / 80.0);
                }
            }
        }
        img
    }

    #[test]
    fn disabled_spec_is_identity() {
        let img = ramp();
        for branch in Branch::ALL {
            let out = augment(&img, &AugmentationSpec::identity(branch), &mut stream(3, &[0])).unwrap();
            assert_eq!(out, img);
        }
    }

    #[test]
    fn same_stream_same_view() {
        let img = ramp();
        let spec = AugmentationSpec::default();
        let a = augment(&img, &spec, &mut stream(9, &[1])).unwrap();
        let b = augment(&img, &spec, &mut stream(9, &[1])).unwrap();
        assert_eq!(a, b);
        assert!(a.is_valid());
    }

    #[test]
    fn forced_flip_and_grayscale() {
        let img = ramp();
        let spec = AugmentationSpec { flip_p: 1.0, grayscale_p: 1.0, ..AugmentationSpec::identity(Branch::Fundus) };
        let out = augment(&img, &spec, &mut stream(0, &[])).unwrap();
        let y = |x: usize| 0.299 * img.get(0, 4, x) + 0.587 * img.get(1, 4, x) + 0.114 * img.get(2, 4, x);
        for c in 0..3 {
            assert!((out.get(c, 4, 0) - y(15)).abs() < 1e-12);
        }
    }

    #[test]
    fn thickness_branch_keeps_colours() {
        let img = Image::filled(8, 8, [0.2, 0.5, 0.9]);
        let spec = AugmentationSpec { jitter: 0.5, grayscale_p: 1.0, ..AugmentationSpec::identity(Branch::Thickness) };
        assert_eq!(augment(&img, &spec, &mut stream(0, &[])).unwrap(), img);
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            AugmentationSpec { flip_p: 1.5, ..Default::default() },
            AugmentationSpec { crop_scale: (0.9, 0.5), ..Default::default() },
            AugmentationSpec { crop_scale: (0.0, 1.0), ..Default::default() },
            AugmentationSpec { jitter: -0.1, ..Default::default() },
        ];
        for spec in bad {
            assert!(spec.validate().is_err());
        }
    }
}
