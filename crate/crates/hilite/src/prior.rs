//! Highlight location prior: positive residual map, percentile contrast
//! stretching, and Otsu binarization.
//!
//! The soft mask is meant as training supervision; the binary mask is
//! the evaluation form. Both are derived without any learned model.

use thiserror::Error;

use crate::imagecore::{to_grayscale, GrayImage, ImageBuffer};

#[derive(Debug, Error)]
pub enum PriorError {
    #[error("dimension mismatch: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("empty mask")]
    EmptyMask,
    #[error("alpha percentile {0} out of [0, 100)")]
    InvalidAlpha(f64),
}

/// Per-pixel highlight prior, continuous in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl SoftMask {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::new(self.width, self.height, self.data.clone())
    }
}

/// Thresholded prior; samples are strictly 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), width * height);
        assert!(data.iter().all(|&v| v <= 1));
        Self {
            width,
            height,
            data,
        }
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PriorConfig {
    pub alpha_percentile: f64,
    pub apply_stretch: bool,
    pub bins: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            alpha_percentile: 80.0,
            apply_stretch: true,
            bins: 256,
        }
    }
}

/// `m = max(highlight - gt, 0)`, elementwise.
pub fn residual_map(highlight: &GrayImage, gt: &GrayImage) -> Result<SoftMask, PriorError> {
    if highlight.width != gt.width || highlight.height != gt.height {
        return Err(PriorError::DimensionMismatch(
            highlight.width,
            highlight.height,
            gt.width,
            gt.height,
        ));
    }
    let data = highlight
        .data
        .iter()
        .zip(&gt.data)
        .map(|(h, g)| (h - g).max(0.0))
        .collect();
    Ok(SoftMask::new(highlight.width, highlight.height, data))
}

/// Nearest-rank percentile: sorted value at index `ceil(alpha/100 * n)`,
/// clamped into the valid range.
fn percentile(values: &[f32], alpha: f64) -> f32 {
    let n = values.len();
    let mut sorted: Vec<f32> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let idx = ((alpha / 100.0 * n as f64).ceil() as usize).min(n - 1);
    sorted[idx]
}

/// Clip below the alpha-th percentile and rescale the remainder to
/// `[0, 1]`. Degenerate masks (max equals the percentile) come back
/// all-zero.
pub fn contrast_stretch(mask: &SoftMask, alpha_percentile: f64) -> Result<SoftMask, PriorError> {
    if mask.data.is_empty() {
        return Err(PriorError::EmptyMask);
    }
    if !(0.0..100.0).contains(&alpha_percentile) {
        return Err(PriorError::InvalidAlpha(alpha_percentile));
    }
    let p = percentile(&mask.data, alpha_percentile);
    let max = mask.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let data = if max > p {
        mask.data
            .iter()
            .map(|v| ((v - p) / (max - p)).clamp(0.0, 1.0))
            .collect()
    } else {
        vec![0.0; mask.data.len()]
    };
    Ok(SoftMask::new(mask.width, mask.height, data))
}

#[inline]
fn bin_of(v: f32, bins: usize) -> usize {
    (((v.clamp(0.0, 1.0)) * bins as f32) as usize).min(bins - 1)
}

/// Otsu's method over `bins` equal-width buckets on `[0, 1]`: pick the
/// separator maximizing between-class variance, smallest threshold on
/// ties. Pixels strictly above the threshold are set.
///
/// A constant mask yields the constant as threshold and an all-zero mask.
pub fn otsu_threshold(mask: &SoftMask, bins: usize) -> Result<(f32, BinaryMask), PriorError> {
    if mask.data.is_empty() {
        return Err(PriorError::EmptyMask);
    }
    let min = mask.data.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = mask.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if min == max {
        let zeros = BinaryMask::new(mask.width, mask.height, vec![0; mask.data.len()]);
        return Ok((min, zeros));
    }

    let mut hist = vec![0u64; bins];
    for &v in &mask.data {
        hist[bin_of(v, bins)] += 1;
    }
    let total = mask.data.len() as f64;
    let sum_total: f64 = hist
        .iter()
        .enumerate()
        .map(|(i, &h)| i as f64 * h as f64)
        .sum();

    let mut best_k = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    let mut w0 = 0.0f64;
    let mut sum0 = 0.0f64;
    for (k, &h) in hist.iter().enumerate().take(bins - 1) {
        w0 += h as f64;
        sum0 += k as f64 * h as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let mu0 = sum0 / w0;
        let mu1 = (sum_total - sum0) / w1;
        let var = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_k = k;
        }
    }
    let threshold = (best_k + 1) as f32 / bins as f32;
    let data = mask.data.iter().map(|&v| u8::from(v > threshold)).collect();
    Ok((threshold, BinaryMask::new(mask.width, mask.height, data)))
}

#[derive(Debug, Clone)]
pub struct PriorResult {
    pub soft: SoftMask,
    pub binary: BinaryMask,
    pub threshold: f32,
}

/// Full prior pipeline: grayscale, positive residual, optional stretch,
/// Otsu. Returns the soft mask (supervision), binary mask (evaluation)
/// and the chosen threshold.
pub fn generate_prior(
    highlight: &ImageBuffer,
    gt: &ImageBuffer,
    cfg: &PriorConfig,
) -> Result<PriorResult, PriorError> {
    let hl_gray = to_grayscale(highlight);
    let gt_gray = to_grayscale(gt);
    let residual = residual_map(&hl_gray, &gt_gray)?;
    let soft = if cfg.apply_stretch {
        contrast_stretch(&residual, cfg.alpha_percentile)?
    } else {
        residual
    };
    let (threshold, binary) = otsu_threshold(&soft, cfg.bins)?;
    Ok(PriorResult {
        soft,
        binary,
        threshold,
    })
}
