//! Fundus phantom: a bright optic disc with an inner cup, seeded vessel
//! curves and a vignetted orange background.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{check_grade, FundusImage, Grade};
use crate::error::Result;
use crate::image::Image;
use crate::rng;

const BACKGROUND: [f64; 3] = [0.72, 0.33, 0.16];
const DISC: [f64; 3] = [0.95, 0.78, 0.52];
const CUP: [f64; 3] = [1.0, 0.95, 0.84];
const VESSEL: [f64; 3] = [0.45, 0.08, 0.06];

/// Cup diameter as a fraction of disc diameter.
pub fn cup_disc_ratio(grade: Grade) -> f64 {
    0.3 + 0.2 * grade as f64
}

fn smoothstep(edge0: f64, edge1: f64, x: f64) -> f64 {
    let t = ((x - edge0) / (edge1 - edge0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn blend(dst: &mut [f64; 3], src: [f64; 3], a: f64) {
    for c in 0..3 {
        dst[c] = dst[c] * (1.0 - a) + src[c] * a;
    }
}

struct Vessel {
    p0: (f64, f64),
    p1: (f64, f64),
    p2: (f64, f64),
    width: f64,
}

impl Vessel {
    fn distance(&self, y: f64, x: f64) -> f64 {
        // sampled polyline distance to the quadratic Bezier
        const STEPS: usize = 24;
        let mut best = f64::INFINITY;
        for i in 0..=STEPS {
            let t = i as f64 / STEPS as f64;
            let u = 1.0 - t;
            let py = u * u * self.p0.0 + 2.0 * u * t * self.p1.0 + t * t * self.p2.0;
            let px = u * u * self.p0.1 + 2.0 * u * t * self.p1.1 + t * t * self.p2.1;
            best = best.min(((py - y).powi(2) + (px - x).powi(2)).sqrt());
        }
        best
    }
}

pub fn render_fundus(size: usize, grade: Grade, seed: u64) -> Result<FundusImage> {
    check_grade(grade)?;
    let n = size as f64;
    let mut r = rng::stream(seed, &[2]);
    let center = (n * r.random_range(0.42..0.58), n * r.random_range(0.42..0.58));
    let disc_r = n * 0.17 * r.random_range(0.9..1.1);
    let cup_r = disc_r * cup_disc_ratio(grade);
    let gain = r.random_range(0.85..1.1);
    let n_vessels = r.random_range(4..=6usize);
    let vessels: Vec<Vessel> = (0..n_vessels)
        .map(|i| {
            let angle = 2.0 * PI * (i as f64 + r.random_range(0.0..0.6)) / n_vessels as f64;
            let bend = r.random_range(-0.6..0.6);
            let reach = n * r.random_range(0.45..0.7);
            let dir = (angle.sin(), angle.cos());
            let p0 = (center.0 + disc_r * dir.0, center.1 + disc_r * dir.1);
            let mid_angle = angle + bend;
            let p1 = (
                center.0 + 0.5 * reach * mid_angle.sin(),
                center.1 + 0.5 * reach * mid_angle.cos(),
            );
            let p2 = (center.0 + reach * dir.0, center.1 + reach * dir.1);
            Vessel { p0, p1, p2, width: n / 64.0 * r.random_range(0.7..1.3) }
        })
        .collect();
    let noise = Normal::new(0.0, 0.015).expect("constant sigma");
    let mut noise_rng = rng::stream(seed, &[3, grade as u64]);

    let aa = n / 128.0 + 0.5;
    let mut img = Image::filled(size, size, [0.0; 3]);
    for y in 0..size {
        for x in 0..size {
            let (fy, fx) = (y as f64 + 0.5, x as f64 + 0.5);
            let rim = ((fy - n / 2.0).powi(2) + (fx - n / 2.0).powi(2)).sqrt() / (n / 2.0);
            let vignette = 1.0 - 0.35 * rim.powi(2);
            let mut px = BACKGROUND.map(|v| v * vignette);
            let d = ((fy - center.0).powi(2) + (fx - center.1).powi(2)).sqrt();
            blend(&mut px, DISC, 1.0 - smoothstep(disc_r - aa, disc_r + aa, d));
            blend(&mut px, CUP, 1.0 - smoothstep(cup_r - aa, cup_r + aa, d));
            for v in &vessels {
                let dv = v.distance(fy, fx);
                blend(&mut px, VESSEL, 0.85 * (1.0 - smoothstep(v.width * 0.5, v.width * 0.5 + aa, dv)));
            }
            for (c, v) in px.iter().enumerate() {
                let value = v * gain + noise.sample(&mut noise_rng);
                img.set(c, y, x, value.clamp(0.0, 1.0));
            }
        }
    }
    FundusImage::new(img)
}
