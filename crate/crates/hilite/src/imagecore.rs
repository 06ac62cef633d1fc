//! Pixel containers, color conversion and raster file I/O.
//!
//! All pixel data is kept as `f32` in the unit interval; quantization
//! happens only at file boundaries. Supported formats are PNG (8/16-bit,
//! gray and RGB) and binary PGM/PPM.

use std::io;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageFormat};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImageError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),
    #[error("corrupt image data in {path}: {detail}")]
    CorruptData { path: PathBuf, detail: String },
    #[error("cannot write {path}: {source}")]
    Unwritable {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid bit depth {0}, expected 8 or 16")]
    InvalidBitDepth(u32),
}

/// H×W×C raster, row-major, `channels` interleaved per pixel.
///
/// Data loaded from or saved to disk is always in `[0, 1]`; intermediate
/// arithmetic (pyramid residuals, diffusion states) may leave that range.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Self {
        assert!(width >= 1 && height >= 1);
        assert!(channels == 1 || channels == 3);
        assert_eq!(data.len(), width * height * channels);
        Self {
            width,
            height,
            channels,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize, channels: usize) -> Self {
        Self::new(width, height, channels, vec![0.0; width * height * channels])
    }

    pub fn constant(width: usize, height: usize, channels: usize, value: f32) -> Self {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    /// Clamp every sample into `[0, 1]`.
    pub fn clamped(&self) -> Self {
        let data = self.data.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Self {
            data,
            ..self.clone()
        }
    }
}

/// Single-channel raster in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn sample(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    pub fn to_buffer(&self) -> ImageBuffer {
        ImageBuffer::new(self.width, self.height, 1, self.data.clone())
    }
}

/// Load an 8- or 16-bit PNG or PGM/PPM, scaling samples to `[0, 1]`.
/// Alpha channels are dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer, ImageError> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(ImageError::MissingFile(path.to_path_buf()));
    }
    let reader = image::ImageReader::open(path).map_err(|e| ImageError::CorruptData {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let reader = reader
        .with_guessed_format()
        .map_err(|e| ImageError::CorruptData {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(ImageError::UnsupportedFormat(format!("{other:?}"))),
        None => {
            return Err(ImageError::UnsupportedFormat(format!(
                "unrecognized header in {}",
                path.display()
            )))
        }
    }
    let dynimg = reader.decode().map_err(|e| ImageError::CorruptData {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(from_dynamic(dynimg))
}

fn from_dynamic(img: DynamicImage) -> ImageBuffer {
    let width = img.width() as usize;
    let height = img.height() as usize;
    match img {
        DynamicImage::ImageLuma8(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            ImageBuffer::new(width, height, 1, data)
        }
        DynamicImage::ImageLuma16(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f32 / 65535.0).collect();
            ImageBuffer::new(width, height, 1, data)
        }
        DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => {
            let gray = img.into_luma16();
            let data = gray.into_raw().iter().map(|&v| v as f32 / 65535.0).collect();
            ImageBuffer::new(width, height, 1, data)
        }
        DynamicImage::ImageRgb8(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f32 / 255.0).collect();
            ImageBuffer::new(width, height, 3, data)
        }
        DynamicImage::ImageRgb16(buf) => {
            let data = buf.into_raw().iter().map(|&v| v as f32 / 65535.0).collect();
            ImageBuffer::new(width, height, 3, data)
        }
        other => {
            // remaining variants carry alpha or float samples; normalize through rgb16
            let rgb = other.into_rgb16();
            let data = rgb.into_raw().iter().map(|&v| v as f32 / 65535.0).collect();
            ImageBuffer::new(width, height, 3, data)
        }
    }
}

fn quantize(v: f32, max: u32) -> u32 {
    // round-half-up on the [0,1] sample scaled to the integer range
    let scaled = (v.clamp(0.0, 1.0) as f64) * (max as f64);
    let q = (scaled + 0.5).floor();
    (q as u32).min(max)
}

/// Save as PNG or PGM/PPM (chosen by extension) at the requested bit depth.
pub fn save_image(
    img: &ImageBuffer,
    path: impl AsRef<Path>,
    bit_depth: u32,
) -> Result<(), ImageError> {
    let path = path.as_ref();
    if bit_depth != 8 && bit_depth != 16 {
        return Err(ImageError::InvalidBitDepth(bit_depth));
    }
    let dynimg = to_dynamic(img, bit_depth);
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => ImageFormat::Png,
        Some("pgm") | Some("ppm") | Some("pnm") => ImageFormat::Pnm,
        other => {
            return Err(ImageError::UnsupportedFormat(format!(
                "extension {other:?} (use png, pgm or ppm)"
            )))
        }
    };
    dynimg.save_with_format(path, format).map_err(|e| match e {
        image::ImageError::IoError(io) => ImageError::Unwritable {
            path: path.to_path_buf(),
            source: io,
        },
        other => ImageError::Unwritable {
            path: path.to_path_buf(),
            source: io::Error::other(other.to_string()),
        },
    })
}

fn to_dynamic(img: &ImageBuffer, bit_depth: u32) -> DynamicImage {
    let w = img.width as u32;
    let h = img.height as u32;
    match (img.channels, bit_depth) {
        (1, 8) => {
            let raw: Vec<u8> = img.data.iter().map(|&v| quantize(v, 255) as u8).collect();
            DynamicImage::ImageLuma8(image::GrayImage::from_raw(w, h, raw).unwrap())
        }
        (1, 16) => {
            let raw: Vec<u16> = img.data.iter().map(|&v| quantize(v, 65535) as u16).collect();
            DynamicImage::ImageLuma16(image::ImageBuffer::from_raw(w, h, raw).unwrap())
        }
        (3, 8) => {
            let raw: Vec<u8> = img.data.iter().map(|&v| quantize(v, 255) as u8).collect();
            DynamicImage::ImageRgb8(image::RgbImage::from_raw(w, h, raw).unwrap())
        }
        (3, 16) => {
            let raw: Vec<u16> = img.data.iter().map(|&v| quantize(v, 65535) as u16).collect();
            DynamicImage::ImageRgb16(image::ImageBuffer::from_raw(w, h, raw).unwrap())
        }
        _ => unreachable!("channels is validated at construction"),
    }
}

/// BT.601 luma conversion. Single-channel input is returned unchanged.
pub fn to_grayscale(img: &ImageBuffer) -> GrayImage {
    match img.channels {
        1 => GrayImage::new(img.width, img.height, img.data.clone()),
        3 => {
            let data = img
                .data
                .chunks_exact(3)
                .map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2])
                .collect();
            GrayImage::new(img.width, img.height, data)
        }
        _ => unreachable!("channels is validated at construction"),
    }
}
