//! Full-reference image metrics, mask metrics and loss arithmetic.
//!
//! PSNR/SSIM/RMSE follow the usual reference parameterizations (SSIM:
//! 11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, dynamic
//! range 1). Mask quality is reported as accuracy and balanced error
//! rate over pixel confusion counts.

use thiserror::Error;

use crate::imagecore::{GrayImage, ImageBuffer};
use crate::prior::{BinaryMask, SoftMask};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dimension mismatch: {0}x{1}x{2} vs {3}x{4}x{5}")]
    DimensionMismatch(usize, usize, usize, usize, usize, usize),
    #[error("image {0}x{1} smaller than the {2}x{2} window")]
    TooSmall(usize, usize, usize),
    #[error("ber undefined: no {0} pixels in ground truth")]
    UndefinedClass(&'static str),
    #[error("non-finite loss component: {0}")]
    NonFinite(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Loss balance weights; defaults are the published values.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub beta1: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 0.4,
            lambda2: 1.0,
            lambda3: 0.1,
            lambda4: 0.5,
            beta1: 0.00005,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmseScale {
    Unit,
    Scale255,
}

fn check_shape(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), MetricError> {
    if !a.same_shape(b) {
        return Err(MetricError::DimensionMismatch(
            a.width, a.height, a.channels, b.width, b.height, b.channels,
        ));
    }
    Ok(())
}

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    check_shape(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum();
    Ok(sum / a.data.len() as f64)
}

/// Root mean squared error over all samples jointly; `Scale255` reports
/// on the 0-255 convention.
pub fn rmse(a: &ImageBuffer, b: &ImageBuffer, scale: RmseScale) -> Result<f64, MetricError> {
    let value = mse(a, b)?.sqrt();
    Ok(match scale {
        RmseScale::Unit => value,
        RmseScale::Scale255 => value * 255.0,
    })
}

/// Peak signal-to-noise ratio with peak 1.0. Identical images return
/// `f64::INFINITY` rather than an error.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64, MetricError> {
    let mse = mse(a, b)?;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dx = x as f64 - half;
            let dy = y as f64 - half;
            w.push((-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Mean local SSIM over all positions where the full window fits.
pub fn ssim(a: &GrayImage, b: &GrayImage) -> Result<f64, MetricError> {
    if a.width != b.width || a.height != b.height {
        return Err(MetricError::DimensionMismatch(
            a.width, a.height, 1, b.width, b.height, 1,
        ));
    }
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(MetricError::TooSmall(a.width, a.height, SSIM_WINDOW));
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let mut total = 0.0f64;
    let mut count = 0usize;
    for y0 in 0..=(a.height - SSIM_WINDOW) {
        for x0 in 0..=(a.width - SSIM_WINDOW) {
            let mut mu_a = 0.0;
            let mut mu_b = 0.0;
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let w = window[wy * SSIM_WINDOW + wx];
                    mu_a += w * a.sample(x0 + wx, y0 + wy) as f64;
                    mu_b += w * b.sample(x0 + wx, y0 + wy) as f64;
                }
            }
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let w = window[wy * SSIM_WINDOW + wx];
                    let da = a.sample(x0 + wx, y0 + wy) as f64 - mu_a;
                    let db = b.sample(x0 + wx, y0 + wy) as f64 - mu_b;
                    var_a += w * da * da;
                    var_b += w * db * db;
                    cov += w * da * db;
                }
            }
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-pixel confusion counts; positive = highlight.
pub fn mask_confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts, MetricError> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(MetricError::DimensionMismatch(
            pred.width,
            pred.height,
            1,
            gt.width,
            gt.height,
            1,
        ));
    }
    let mut c = ConfusionCounts {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, 0) => c.fp += 1,
            (0, 0) => c.tn += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn accuracy(c: &ConfusionCounts) -> f64 {
    (c.tp + c.tn) as f64 / c.total() as f64
}

/// Balanced error rate in percent: `100 * (fnr + fpr) / 2`. Errors when
/// either class is absent from the ground truth.
pub fn ber(c: &ConfusionCounts) -> Result<f64, MetricError> {
    let pos = c.tp + c.fn_;
    let neg = c.tn + c.fp;
    if pos == 0 {
        return Err(MetricError::UndefinedClass("positive"));
    }
    if neg == 0 {
        return Err(MetricError::UndefinedClass("negative"));
    }
    let fnr = c.fn_ as f64 / pos as f64;
    let fpr = c.fp as f64 / neg as f64;
    Ok(100.0 * 0.5 * (fnr + fpr))
}

/// Anisotropic total variation: each directional sum of absolute forward
/// differences is divided by its own count, then the two are added.
pub fn tv(mask: &SoftMask) -> Result<f64, MetricError> {
    let (w, h) = (mask.width, mask.height);
    if w < 2 || h < 2 {
        return Err(MetricError::TooSmall(w, h, 2));
    }
    let mut sum_x = 0.0f64;
    let mut sum_y = 0.0f64;
    for y in 0..h {
        for x in 0..w {
            let v = mask.data[y * w + x] as f64;
            if x + 1 < w {
                sum_x += (mask.data[y * w + x + 1] as f64 - v).abs();
            }
            if y + 1 < h {
                sum_y += (mask.data[(y + 1) * w + x] as f64 - v).abs();
            }
        }
    }
    let count_x = (h * (w - 1)) as f64;
    let count_y = ((h - 1) * w) as f64;
    Ok(sum_x / count_x + sum_y / count_y)
}

/// `L_mask = mean |pred - target| + beta1 * tv(pred)`.
pub fn mask_loss(pred: &SoftMask, target: &SoftMask, beta1: f64) -> Result<f64, MetricError> {
    if pred.width != target.width || pred.height != target.height {
        return Err(MetricError::DimensionMismatch(
            pred.width,
            pred.height,
            1,
            target.width,
            target.height,
            1,
        ));
    }
    let l1: f64 = pred
        .data
        .iter()
        .zip(&target.data)
        .map(|(p, t)| (*p - *t).abs() as f64)
        .sum::<f64>()
        / pred.data.len() as f64;
    Ok(l1 + beta1 * tv(pred)?)
}

/// Weighted total: `mse + l1*ssim + l2*dm + l3*structure + l4*mask`.
/// The structure component is caller-supplied.
pub fn total_loss(
    mse: f64,
    ssim_loss: f64,
    dm: f64,
    structure: f64,
    mask: f64,
    w: &LossWeights,
) -> Result<f64, MetricError> {
    for (name, v) in [
        ("mse", mse),
        ("ssim", ssim_loss),
        ("dm", dm),
        ("structure", structure),
        ("mask", mask),
    ] {
        if !v.is_finite() {
            return Err(MetricError::NonFinite(name));
        }
    }
    Ok(mse + w.lambda1 * ssim_loss + w.lambda2 * dm + w.lambda3 * structure + w.lambda4 * mask)
}
