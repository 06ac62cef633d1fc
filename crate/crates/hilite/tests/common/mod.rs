//! Independent reference implementations used to cross-check the
//! library. Everything here is written from the defining formulas,
//! deliberately sharing no code with the optimized paths.

// shared across test targets; not every target uses every helper
#![allow(dead_code)]

use hilite::imagecore::{GrayImage, ImageBuffer};
use hilite::prior::{BinaryMask, SoftMask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_image(w: usize, h: usize, c: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h * c).map(|_| rng.gen::<f32>()).collect();
    ImageBuffer::new(w, h, c, data)
}

pub fn random_mask(w: usize, h: usize, seed: u64) -> SoftMask {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..w * h).map(|_| rng.gen::<f32>()).collect();
    SoftMask::new(w, h, data)
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f32, f32::max)
}

/// Exhaustive Otsu search: for every candidate separator recompute both
/// class populations and means from the raw histogram.
pub fn otsu_brute_force(mask: &SoftMask, bins: usize) -> (f32, BinaryMask) {
    let min = mask.data.iter().cloned().fold(f32::INFINITY, f32::min);
    let max = mask.data.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    if min == max {
        return (
            min,
            BinaryMask::new(mask.width, mask.height, vec![0; mask.data.len()]),
        );
    }
    let mut hist = vec![0u64; bins];
    for &v in &mask.data {
        let b = ((v.clamp(0.0, 1.0) * bins as f32) as usize).min(bins - 1);
        hist[b] += 1;
    }
    let mut best_k = 0usize;
    let mut best_var = f64::NEG_INFINITY;
    for k in 0..bins - 1 {
        let n0: u64 = hist[..=k].iter().sum();
        let n1: u64 = hist[k + 1..].iter().sum();
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let mu0: f64 = hist[..=k]
            .iter()
            .enumerate()
            .map(|(i, &h)| i as f64 * h as f64)
            .sum::<f64>()
            / n0 as f64;
        let mu1: f64 = hist[k + 1..]
            .iter()
            .enumerate()
            .map(|(i, &h)| (k + 1 + i) as f64 * h as f64)
            .sum::<f64>()
            / n1 as f64;
        let var = n0 as f64 * n1 as f64 * (mu0 - mu1) * (mu0 - mu1);
        if var > best_var {
            best_var = var;
            best_k = k;
        }
    }
    let threshold = (best_k + 1) as f32 / bins as f32;
    let data = mask.data.iter().map(|&v| u8::from(v > threshold)).collect();
    (threshold, BinaryMask::new(mask.width, mask.height, data))
}

pub fn rmse_direct(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let mut sum = 0.0f64;
    for i in 0..a.data.len() {
        let d = a.data[i] as f64 - b.data[i] as f64;
        sum += d * d;
    }
    (sum / a.data.len() as f64).sqrt()
}

pub fn psnr_direct(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let mut sum = 0.0f64;
    for i in 0..a.data.len() {
        let d = a.data[i] as f64 - b.data[i] as f64;
        sum += d * d;
    }
    let mse = sum / a.data.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// SSIM via uncentered windowed statistics (E[ab] - E[a]E[b] form),
/// separately from the centered-sum implementation in the library.
pub fn ssim_direct(a: &GrayImage, b: &GrayImage) -> f64 {
    const WIN: usize = 11;
    const SIGMA: f64 = 1.5;
    let mut weights = [[0.0f64; WIN]; WIN];
    let mut wsum = 0.0;
    for (y, row) in weights.iter_mut().enumerate() {
        for (x, w) in row.iter_mut().enumerate() {
            let dx = x as f64 - 5.0;
            let dy = y as f64 - 5.0;
            *w = (-(dx * dx + dy * dy) / (2.0 * SIGMA * SIGMA)).exp();
            wsum += *w;
        }
    }
    for row in weights.iter_mut() {
        for w in row.iter_mut() {
            *w /= wsum;
        }
    }
    let c1 = 0.01f64 * 0.01;
    let c2 = 0.03f64 * 0.03;

    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=(a.height - WIN) {
        for x0 in 0..=(a.width - WIN) {
            let (mut ea, mut eb, mut eaa, mut ebb, mut eab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (wy, row) in weights.iter().enumerate() {
                for (wx, &w) in row.iter().enumerate() {
                    let va = a.sample(x0 + wx, y0 + wy) as f64;
                    let vb = b.sample(x0 + wx, y0 + wy) as f64;
                    ea += w * va;
                    eb += w * vb;
                    eaa += w * va * va;
                    ebb += w * vb * vb;
                    eab += w * va * vb;
                }
            }
            let var_a = eaa - ea * ea;
            let var_b = ebb - eb * eb;
            let cov = eab - ea * eb;
            let s = ((2.0 * ea * eb + c1) * (2.0 * cov + c2))
                / ((ea * ea + eb * eb + c1) * (var_a + var_b + c2));
            total += s;
            count += 1;
        }
    }
    total / count as f64
}

/// Naive per-pixel loop for ACC/BER, bypassing `ConfusionCounts`.
pub fn acc_ber_naive(pred: &BinaryMask, gt: &BinaryMask) -> (f64, Option<f64>) {
    let mut correct = 0u64;
    let mut pos_total = 0u64;
    let mut neg_total = 0u64;
    let mut pos_missed = 0u64;
    let mut neg_hit = 0u64;
    for i in 0..pred.data.len() {
        if pred.data[i] == gt.data[i] {
            correct += 1;
        }
        if gt.data[i] == 1 {
            pos_total += 1;
            if pred.data[i] == 0 {
                pos_missed += 1;
            }
        } else {
            neg_total += 1;
            if pred.data[i] == 1 {
                neg_hit += 1;
            }
        }
    }
    let acc = correct as f64 / pred.data.len() as f64;
    let ber = if pos_total > 0 && neg_total > 0 {
        Some(
            100.0
                * 0.5
                * (pos_missed as f64 / pos_total as f64 + neg_hit as f64 / neg_total as f64),
        )
    } else {
        None
    };
    (acc, ber)
}

/// Direct-sum anisotropic TV with per-direction normalization.
pub fn tv_direct(mask: &SoftMask) -> f64 {
    let (w, h) = (mask.width, mask.height);
    let mut sx = 0.0f64;
    let mut sy = 0.0f64;
    for y in 0..h {
        for x in 0..w - 1 {
            sx += (mask.data[y * w + x + 1] as f64 - mask.data[y * w + x] as f64).abs();
        }
    }
    for y in 0..h - 1 {
        for x in 0..w {
            sy += (mask.data[(y + 1) * w + x] as f64 - mask.data[y * w + x] as f64).abs();
        }
    }
    sx / ((w - 1) * h) as f64 + sy / (w * (h - 1)) as f64
}


/// Document-like texture: dark strokes over a mid-dark ground, plus
/// mild per-pixel variation. The ground is kept at 0.25 so an additive
/// blob with peak up to 0.7 does not saturate.
pub fn document_texture(w: usize, h: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let base = if (y % 9) < 2 && (x / 4 + y / 9) % 5 != 0 {
                0.05
            } else {
                0.25
            };
            data[y * w + x] = (base + rng.gen_range(-0.02..0.02f32)).clamp(0.0, 1.0);
        }
    }
    ImageBuffer::new(w, h, 1, data)
}

/// Additive Gaussian bright blob; returns the corrupted image and the
/// blob's half-max support mask.
pub fn add_gaussian_blob(
    img: &ImageBuffer,
    cx: f64,
    cy: f64,
    sigma: f64,
    peak: f64,
) -> (ImageBuffer, BinaryMask) {
    assert_eq!(img.channels, 1);
    let (w, h) = (img.width, img.height);
    let mut data = img.data.clone();
    let mut support = vec![0u8; w * h];
    for y in 0..h {
        for x in 0..w {
            let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
            let g = peak * (-d2 / (2.0 * sigma * sigma)).exp();
            data[y * w + x] = (data[y * w + x] + g as f32).min(1.0);
            if g >= peak / 2.0 {
                support[y * w + x] = 1;
            }
        }
    }
    (
        ImageBuffer::new(w, h, 1, data),
        BinaryMask::new(w, h, support),
    )
}
