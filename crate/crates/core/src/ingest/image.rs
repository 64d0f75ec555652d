use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;

/// RGB image, row-major HWC, `f32` values (pixels in `[0, 1]`, spectrogram
/// images hold log-mel values).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

pub const CHANNELS: usize = 3;

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * CHANNELS {
            return Err(Error::shape(format!(
                "image data length {} does not match {height}x{width}x3",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width * CHANNELS],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * CHANNELS + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * CHANNELS + c] = v;
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)?.to_rgb8();
        let (w, h) = img.dimensions();
        let data = img.as_raw().iter().map(|&b| f32::from(b) / 255.0).collect();
        Image::new(h as usize, w as usize, data)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, bytes)
            .ok_or_else(|| Error::shape("png buffer size"))?;
        buf.save(path)?;
        Ok(())
    }

    /// Bilinear resize (pixel centers aligned).
    pub fn resize(&self, height: usize, width: usize) -> Image {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let mut out = Image::filled(height, width, 0.0);
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = (fy - y0 as f64) as f32;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = (fx - x0 as f64) as f32;
                for c in 0..CHANNELS {
                    let top = self.get(y0, x0, c) * (1.0 - wx) + self.get(y0, x1, c) * wx;
                    let bot = self.get(y1, x0, c) * (1.0 - wx) + self.get(y1, x1, c) * wx;
                    out.set(y, x, c, top * (1.0 - wy) + bot * wy);
                }
            }
        }
        out
    }

    /// Flattens non-overlapping `patch x patch` tiles into rows (raster order
    /// over tiles, HWC order within a tile) after per-channel
    /// `(v - mean) / std` normalization.
    pub fn patch_matrix(&self, patch: usize, mean: [f32; 3], std: [f32; 3]) -> Result<Mat> {
        if patch == 0 || self.height % patch != 0 || self.width % patch != 0 {
            return Err(Error::shape(format!(
                "{}x{} image is not divisible into {patch}x{patch} patches",
                self.height, self.width
            )));
        }
        let gh = self.height / patch;
        let gw = self.width / patch;
        let dim = patch * patch * CHANNELS;
        let mut out = Mat::zeros(gh * gw, dim);
        for py in 0..gh {
            for px in 0..gw {
                let row = out.row_mut(py * gw + px);
                let mut k = 0;
                for y in 0..patch {
                    for x in 0..patch {
                        for c in 0..CHANNELS {
                            let v = self.get(py * patch + y, px * patch + x, c);
                            row[k] = f64::from((v - mean[c]) / std[c]);
                            k += 1;
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resize_constant_image_stays_constant() {
        let img = Image::filled(5, 7, 0.25);
        let r = img.resize(224, 224);
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
    }

    #[test]
    fn patch_matrix_layout() {
        let data: Vec<f32> = (0..4 * 4 * 3).map(|v| v as f32).collect();
        let img = Image::new(4, 4, data).unwrap();
        let m = img.patch_matrix(2, [0.0; 3], [1.0; 3]).unwrap();
        assert_eq!(m.shape(), (4, 12));
        // second tile starts at pixel (0, 2)
        assert_eq!(m.get(1, 0), f64::from(img.get(0, 2, 0)));
        assert_eq!(m.get(2, 3), f64::from(img.get(2, 1, 0)));
        assert!(img.patch_matrix(3, [0.0; 3], [1.0; 3]).is_err());
    }
}
