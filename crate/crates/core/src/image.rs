//! In-memory stimulus images and binary PGM/PPM IO.

use crate::error::{data_err, Result, SalError};
use crate::grid::{Grid, GridKind};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{DynamicImage, ExtendedColorType, ImageEncoder};
use std::path::Path;

/// Pixel data in `[0, 1]`, interleaved, with 1 (gray) or 3 (RGB) channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(data_err!("unsupported channel count {channels}"));
        }
        if data.len() != width * height * channels {
            return Err(data_err!("image buffer size mismatch"));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn is_color(&self) -> bool {
        self.channels == 3
    }

    /// One color plane as a grid (plane 0 for grayscale).
    pub fn plane(&self, ch: usize) -> Grid {
        Grid::from_fn(self.height, self.width, GridKind::Feature, |r, c| {
            self.data[(r * self.width + c) * self.channels + ch]
        })
    }

    pub fn planes(&self) -> Vec<Grid> {
        (0..self.channels).map(|c| self.plane(c)).collect()
    }

    pub fn from_planes(planes: &[Grid]) -> Result<Self> {
        let first = planes.first().ok_or_else(|| data_err!("no planes"))?;
        let (h, w) = first.shape();
        let ch = planes.len();
        let mut data = vec![0.0; h * w * ch];
        for (k, p) in planes.iter().enumerate() {
            first.ensure_same_shape(p)?;
            for (i, &v) in p.values().iter().enumerate() {
                data[i * ch + k] = v;
            }
        }
        Image::new(w, h, ch, data)
    }

    pub fn gray(&self) -> Grid {
        if self.channels == 1 {
            return self.plane(0);
        }
        Grid::from_fn(self.height, self.width, GridKind::Feature, |r, c| {
            let i = (r * self.width + c) * 3;
            0.299 * self.data[i] + 0.587 * self.data[i + 1] + 0.114 * self.data[i + 2]
        })
    }

    /// Writes binary PGM (gray) or PPM (color), 8-bit.
    pub fn save_pnm(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        let (subtype, color) = if self.channels == 1 {
            (PnmSubtype::Graymap(SampleEncoding::Binary), ExtendedColorType::L8)
        } else {
            (PnmSubtype::Pixmap(SampleEncoding::Binary), ExtendedColorType::Rgb8)
        };
        let mut buf = Vec::new();
        PnmEncoder::new(&mut buf)
            .with_subtype(subtype)
            .write_image(&bytes, self.width as u32, self.height as u32, color)
            .map_err(|e| SalError::Image {
                path: path.to_path_buf(),
                source: e,
            })?;
        crate::io::write_atomic(path, &buf)
    }

    pub fn load_pnm(path: &Path) -> Result<Self> {
        let img = image::ImageReader::open(path)
            .map_err(|e| SalError::io(path, e))?
            .with_guessed_format()
            .map_err(|e| SalError::io(path, e))?
            .decode()
            .map_err(|e| SalError::Image {
                path: path.to_path_buf(),
                source: e,
            })?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            DynamicImage::ImageLuma8(buf) => {
                Image::new(w, h, 1, buf.into_raw().into_iter().map(|b| b as f64 / 255.0).collect())
            }
            other => {
                let rgb = other.to_rgb8();
                Image::new(w, h, 3, rgb.into_raw().into_iter().map(|b| b as f64 / 255.0).collect())
            }
        }
    }

    /// Bilinear resize of every plane.
    pub fn resized(&self, out_w: usize, out_h: usize) -> Image {
        let planes: Vec<Grid> = self
            .planes()
            .iter()
            .map(|p| crate::grid::bilinear_resize(p, out_h, out_w))
            .collect();
        Image::from_planes(&planes).expect("planes share a shape")
    }
}
