//! Float RGB images (channel-major, values in [0, 1]) and 8-bit PNG I/O.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};

/// Three-channel float image stored channel-major: `data[c * h * w + y * w + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

/// 8-bit RGB image stored interleaved row-major: `data[(y * w + x) * 3 + c]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rgb8 {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        let plane = height * width;
        let mut data = vec![0.0; 3 * plane];
        for (c, v) in rgb.iter().enumerate() {
            data[c * plane..(c + 1) * plane].fill(*v);
        }
        Image { height, width, data }
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn is_valid(&self) -> bool {
        self.data.len() == 3 * self.height * self.width
            && self.data.iter().all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }

    /// Bilinear resize with corner-aligned sampling.
    pub fn resize(&self, out_h: usize, out_w: usize) -> Result<Image> {
        let plane = self.height * self.width;
        let mut data = Vec::with_capacity(3 * out_h * out_w);
        for c in 0..3 {
            let src = &self.data[c * plane..(c + 1) * plane];
            data.extend(crate::thickness::resize_plane(src, self.height, self.width, out_h, out_w)?);
        }
        Ok(Image { height: out_h, width: out_w, data })
    }

    /// Crop the rectangle `[y0, y0 + h) × [x0, x0 + w)`.
    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        let mut out = Image::filled(h, w, [0.0; 3]);
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, self.get(c, y0 + y, x0 + x));
                }
            }
        }
        out
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..3 {
            for y in 0..self.height {
                for x in 0..self.width {
                    out.set(c, y, x, self.get(c, y, self.width - 1 - x));
                }
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> Rgb8 {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in 0..self.width {
                for c in 0..3 {
                    data.push(quantize(self.get(c, y, x)));
                }
            }
        }
        Rgb8 { height: self.height, width: self.width, data }
    }
}

/// Map [0, 1] to 0..=255, rounding half up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

impl Rgb8 {
    pub fn new(height: usize, width: usize) -> Self {
        Rgb8 { height, width, data: vec![0; height * width * 3] }
    }

    #[inline]
    pub fn pixel(&self, y: usize, x: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn put(&mut self, y: usize, x: usize, px: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&px);
    }

    pub fn to_image(&self) -> Image {
        let mut img = Image::filled(self.height, self.width, [0.0; 3]);
        for y in 0..self.height {
            for x in 0..self.width {
                let px = self.pixel(y, x);
                for (c, v) in px.iter().enumerate() {
                    img.set(c, y, x, f64::from(*v) / 255.0);
                }
            }
        }
        img
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut buf, self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| Error::Png(e.to_string()))?;
            writer.write_image_data(&self.data).map_err(|e| Error::Png(e.to_string()))?;
        }
        Ok(buf)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.encode_png()?;
        let mut f = BufWriter::new(File::create(path)?);
        std::io::Write::write_all(&mut f, &bytes)?;
        Ok(())
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Rgb8> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        let mut decoder = png::Decoder::new(std::io::BufReader::new(File::open(path)?));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| Error::Png(e.to_string()))?;
        let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Png(e.to_string()))?;
        let (h, w) = (info.height as usize, info.width as usize);
        let bytes = &buf[..info.buffer_size()];
        let data = match info.color_type {
            png::ColorType::Rgb => bytes.to_vec(),
            png::ColorType::Rgba => bytes.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => bytes.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => bytes.chunks(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            png::ColorType::Indexed => return Err(Error::Png("unexpanded palette image".into())),
        };
        Ok(Rgb8 { height: h, width: w, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_half_up() {
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5 / 255.0), 1);
        assert_eq!(quantize(2.0), 255);
    }

    #[test]
    fn png_round_trip() {
        let mut img = Rgb8::new(3, 5);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i * 17 % 256) as u8;
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        img.save_png(&p).unwrap();
        assert_eq!(Rgb8::load_png(&p).unwrap(), img);
    }

    #[test]
    fn double_flip_is_identity() {
        let mut img = Image::filled(4, 6, [0.0; 3]);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = i as f64 / 72.0;
        }
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
    }
}
