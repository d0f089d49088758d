use crate::{Error, Result};
use std::path::Path;

/// Linear RGB image in [0,1], row-major, top row first.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![[0.0; 3]; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }

    pub fn mse(&self, other: &RgbImage) -> Result<f64> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(Error::ShapeMismatch {
                expected: (self.width, self.height),
                found: (other.width, other.height),
            });
        }
        let total: f64 = self
            .pixels
            .iter()
            .zip(&other.pixels)
            .map(|(a, b)| (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>())
            .sum();
        Ok(total / (3 * self.pixels.len()) as f64)
    }

    /// Values after an 8-bit quantization round trip.
    pub fn quantized(&self) -> Self {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0;
        Self {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| [q(p[0]), q(p[1]), q(p[2])]).collect(),
        }
    }
}

pub fn write_rgb_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (i, p) in img.pixels.iter().enumerate() {
        let px = image::Rgb(p.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
        buf.put_pixel((i % img.width) as u32, (i / img.width) as u32, px);
    }
    buf.save(path)?;
    Ok(())
}

pub fn read_rgb_png(path: &Path) -> Result<RgbImage> {
    let buf = image::open(path)?.to_rgb8();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let pixels = buf
        .pixels()
        .map(|p| p.0.map(|c| c as f64 / 255.0))
        .collect();
    Ok(RgbImage {
        width: w,
        height: h,
        pixels,
    })
}
