//! Image ingestion and the [`Plane`] raster every other module works on.
//!
//! Decoding keeps the stored 8-bit values as-is (no color management) and
//! drops alpha. Grayscale conversion uses BT.601 luma weights and keeps the
//! result as unquantized `f64`.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, ImageReader};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Container format an image was decoded from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Png,
    Jpeg,
}

/// 8-bit RGB raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[u8; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!("empty image {width}x{height}")));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(Self { width, height, pixels })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        self.pixels[y * self.width + x]
    }

    pub(crate) fn to_image_buffer(&self) -> image::RgbImage {
        let raw: Vec<u8> = self.pixels.iter().flatten().copied().collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer length matches dimensions")
    }

    pub(crate) fn from_image_buffer(buf: &image::RgbImage) -> Self {
        let pixels = buf.pixels().map(|p| p.0).collect();
        Self {
            width: buf.width() as usize,
            height: buf.height() as usize,
            pixels,
        }
    }
}

/// A 2D real-valued raster, row-major. Values are always finite.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidRaster(format!("empty plane {width}x{height}")));
        }
        if values.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "{} values for a {width}x{height} plane",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidRaster(format!("non-finite value at index {i}")));
        }
        Ok(Self { width, height, values })
    }

    /// Builds a plane by evaluating `f(x, y)` at every pixel.
    ///
    /// Panics if the dimensions are zero or `f` yields a non-finite value.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                values.push(f(x, y));
            }
        }
        Self::new(width, height, values).expect("from_fn produced an invalid plane")
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    /// Crate-internal constructor for results whose finiteness follows from the inputs.
    pub(crate) fn from_parts(width: usize, height: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), width * height);
        debug_assert!(values.iter().all(|v| v.is_finite()));
        Self { width, height, values }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// Value at `(x, y)` with coordinates clamped to the raster (replicate padding).
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.values[cy * self.width + cx]
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.values[y * self.width..(y + 1) * self.width]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(self.width, self.height, self.values.iter().map(|&v| f(v)).collect())
            .expect("map produced a non-finite value")
    }

    /// Pointwise combination of two equally sized planes.
    pub fn zip_with(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.dims() != other.dims() {
            return Err(Error::InvalidRaster(format!(
                "dimension mismatch: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Self::new(self.width, self.height, values)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.height, self.width, |x, y| self.get(y, x))
    }

    /// Sub-plane with top-left corner `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 || x0 + width > self.width || y0 + height > self.height {
            return Err(Error::InvalidRaster(format!(
                "crop {width}x{height}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut values = Vec::with_capacity(width * height);
        for y in y0..y0 + height {
            values.extend_from_slice(&self.row(y)[x0..x0 + width]);
        }
        Ok(Self::from_parts(width, height, values))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Reads and decodes a PNG or JPEG file.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    load_image_with_format(path).map(|(img, _)| img)
}

/// Like [`load_image`], also reporting which container was decoded.
pub fn load_image_with_format(path: impl AsRef<Path>) -> Result<(RgbImage, SourceFormat)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
        _ => Error::CorruptData {
            path: path.to_path_buf(),
            reason: e.to_string(),
        },
    })?;
    decode_image(&bytes, path)
}

/// Decodes PNG or JPEG bytes. `path` is used only for error messages.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<(RgbImage, SourceFormat)> {
    let format = sniff_format(bytes, path)?;
    let reader = ImageReader::with_format(
        Cursor::new(bytes),
        match format {
            SourceFormat::Png => ImageFormat::Png,
            SourceFormat::Jpeg => ImageFormat::Jpeg,
        },
    );
    let decoded = reader.decode().map_err(|e| Error::CorruptData {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    Ok((RgbImage::from_image_buffer(&decoded.to_rgb8()), format))
}

fn sniff_format(bytes: &[u8], path: &Path) -> Result<SourceFormat> {
    match image::guess_format(bytes) {
        Ok(ImageFormat::Png) => Ok(SourceFormat::Png),
        Ok(ImageFormat::Jpeg) => Ok(SourceFormat::Jpeg),
        Ok(other) => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: format!("{other:?} is not PNG or JPEG"),
        }),
        // Too short to carry a signature at all: treat as truncated.
        Err(_) if bytes.len() < 8 => Err(Error::CorruptData {
            path: path.to_path_buf(),
            reason: format!("only {} bytes", bytes.len()),
        }),
        Err(e) => Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: e.to_string(),
        }),
    }
}

/// BT.601 luma, kept as real values in [0, 255].
pub fn to_grayscale(img: &RgbImage) -> Plane {
    let values = img
        .pixels
        .iter()
        .map(|&[r, g, b]| 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
        .collect();
    Plane::from_parts(img.width, img.height, values)
}

/// Centered `s x s` crop with `s` the largest even integer `<= min(width, height)`.
///
/// An odd margin leaves the extra row/column at the bottom/right.
pub fn center_crop_even_square(p: &Plane) -> Result<Plane> {
    let min_dim = p.width.min(p.height);
    if min_dim < 2 {
        return Err(Error::TooSmall {
            width: p.width,
            height: p.height,
            min: 2,
        });
    }
    let side = min_dim & !1;
    let x0 = (p.width - side) / 2;
    let y0 = (p.height - side) / 2;
    p.crop(x0, y0, side, side)
}

/// Min-max rescale into [0, 1]; a constant plane maps to all zeros.
pub fn normalize_unit(p: &Plane) -> Plane {
    let (lo, hi) = p.min_max();
    if hi <= lo {
        return Plane::from_parts(p.width, p.height, vec![0.0; p.values.len()]);
    }
    let span = hi - lo;
    let values = p.values.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect();
    Plane::from_parts(p.width, p.height, values)
}
