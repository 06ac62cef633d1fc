//! Laplacian-pyramid decomposition and exact reconstruction.
//!
//! Decomposition splits an image into band-pass high-frequency layers
//! `h_0..h_{D-1}` and a low-frequency base. Reconstruction inverts it
//! exactly (up to float rounding) by iterated expand-and-add, including
//! odd dimensions via ceiling halving and expand-to-target.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imagecore::{self, ImageBuffer, ImageError};

/// Burt–Adelson 5-tap kernel (a = 0.375), normalized by 16.
const KERNEL: [f32; 5] = [1.0, 4.0, 6.0, 4.0, 1.0];

#[derive(Debug, Error)]
pub enum PyramidError {
    #[error("image {width}x{height} is smaller than 2x2")]
    TooSmall { width: usize, height: usize },
    #[error("depth {depth} too large for {width}x{height} image")]
    DepthTooLarge {
        depth: usize,
        width: usize,
        height: usize,
    },
    #[error("target dimension is zero")]
    ZeroTarget,
    #[error("dimension mismatch at level {level}: expected {expected_w}x{expected_h}, got {got_w}x{got_h}")]
    DimensionMismatch {
        level: usize,
        expected_w: usize,
        expected_h: usize,
        got_w: usize,
        got_h: usize,
    },
    #[error("pyramid export/import failed: {0}")]
    Io(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

/// High-frequency layers `h_0..h_{D-1}` (signed residuals) plus the
/// low-frequency base. Level `i` has the input dimensions ceiling-halved
/// `i` times; the base is halved `D` times.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub highs: Vec<ImageBuffer>,
    pub base: ImageBuffer,
}

impl Pyramid {
    pub fn depth(&self) -> usize {
        self.highs.len()
    }
}

#[inline]
fn ceil_half(n: usize) -> usize {
    n.div_ceil(2)
}

/// reflect-101 index fold: ...2 1 | 0 1 2 ... n-1 | n-2 n-3...
#[inline]
fn reflect(mut i: i64, n: i64) -> usize {
    debug_assert!(n >= 1);
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

/// Blur with the separable 5-tap kernel (reflect-101 borders) and
/// decimate at even indices. Output is `ceil(W/2) x ceil(H/2)`.
pub fn gaussian_down(img: &ImageBuffer) -> Result<ImageBuffer, PyramidError> {
    if img.width < 2 || img.height < 2 {
        return Err(PyramidError::TooSmall {
            width: img.width,
            height: img.height,
        });
    }
    let (w, h, c) = (img.width, img.height, img.channels);
    let cw = ceil_half(w);
    let ch = ceil_half(h);

    // horizontal blur + decimate
    let mut tmp = vec![0.0f32; ch * cw * c];
    let mut tmp_rows = vec![0.0f32; h * cw * c];
    for y in 0..h {
        for ox in 0..cw {
            for ci in 0..c {
                let mut acc = 0.0;
                for (k, wk) in KERNEL.iter().enumerate() {
                    let sx = reflect(2 * ox as i64 + k as i64 - 2, w as i64);
                    acc += wk * img.data[(y * w + sx) * c + ci];
                }
                tmp_rows[(y * cw + ox) * c + ci] = acc / 16.0;
            }
        }
    }
    // vertical blur + decimate
    for oy in 0..ch {
        for x in 0..cw {
            for ci in 0..c {
                let mut acc = 0.0;
                for (k, wk) in KERNEL.iter().enumerate() {
                    let sy = reflect(2 * oy as i64 + k as i64 - 2, h as i64);
                    acc += wk * tmp_rows[(sy * cw + x) * c + ci];
                }
                tmp[(oy * cw + x) * c + ci] = acc / 16.0;
            }
        }
    }
    Ok(ImageBuffer::new(cw, ch, c, tmp))
}

/// Zero-insertion upsample followed by the 5-tap kernel scaled x2 per
/// axis (the classical expand), evaluated directly on the target grid.
pub fn upsample_to(
    img: &ImageBuffer,
    target_w: usize,
    target_h: usize,
) -> Result<ImageBuffer, PyramidError> {
    if target_w == 0 || target_h == 0 {
        return Err(PyramidError::ZeroTarget);
    }
    let (w, h, c) = (img.width, img.height, img.channels);

    // horizontal expand to target_w
    let mut rows = vec![0.0f32; h * target_w * c];
    for y in 0..h {
        for x in 0..target_w {
            for ci in 0..c {
                let mut acc = 0.0;
                for (k, wk) in KERNEL.iter().enumerate() {
                    let j = x as i64 + k as i64 - 2;
                    if j.rem_euclid(2) == 0 {
                        let sx = reflect(j.div_euclid(2), w as i64);
                        acc += wk * img.data[(y * w + sx) * c + ci];
                    }
                }
                rows[(y * target_w + x) * c + ci] = acc * 2.0 / 16.0;
            }
        }
    }
    // vertical expand to target_h
    let mut out = vec![0.0f32; target_h * target_w * c];
    for y in 0..target_h {
        for x in 0..target_w {
            for ci in 0..c {
                let mut acc = 0.0;
                for (k, wk) in KERNEL.iter().enumerate() {
                    let j = y as i64 + k as i64 - 2;
                    if j.rem_euclid(2) == 0 {
                        let sy = reflect(j.div_euclid(2), h as i64);
                        acc += wk * rows[(sy * target_w + x) * c + ci];
                    }
                }
                out[(y * target_w + x) * c + ci] = acc * 2.0 / 16.0;
            }
        }
    }
    Ok(ImageBuffer::new(target_w, target_h, c, out))
}

/// Decompose into `depth` high-frequency layers plus a base:
/// `g_{i+1} = down(g_i)`, `h_i = g_i - up(g_{i+1})`, base `= g_D`.
pub fn decompose(img: &ImageBuffer, depth: usize) -> Result<Pyramid, PyramidError> {
    let min_dim = img.width.min(img.height);
    if depth < 1 || min_dim.div_ceil(1 << depth) < 2 {
        return Err(PyramidError::DepthTooLarge {
            depth,
            width: img.width,
            height: img.height,
        });
    }
    let mut current = img.clone();
    let mut highs = Vec::with_capacity(depth);
    for _ in 0..depth {
        let next = gaussian_down(&current)?;
        let up = upsample_to(&next, current.width, current.height)?;
        let residual: Vec<f32> = current
            .data
            .iter()
            .zip(&up.data)
            .map(|(g, u)| g - u)
            .collect();
        highs.push(ImageBuffer::new(
            current.width,
            current.height,
            current.channels,
            residual,
        ));
        current = next;
    }
    Ok(Pyramid {
        highs,
        base: current,
    })
}

/// Invert [`decompose`]: `g_i = h_i + up(g_{i+1})`, returning `g_0`
/// unclamped.
pub fn reconstruct(pyr: &Pyramid) -> Result<ImageBuffer, PyramidError> {
    let mut current = pyr.base.clone();
    // validate the dimension chain before doing any work
    let mut expected_w = pyr.base.width;
    let mut expected_h = pyr.base.height;
    for (level, high) in pyr.highs.iter().enumerate().rev() {
        if ceil_half(high.width) != expected_w || ceil_half(high.height) != expected_h {
            return Err(PyramidError::DimensionMismatch {
                level,
                expected_w,
                expected_h,
                got_w: high.width,
                got_h: high.height,
            });
        }
        expected_w = high.width;
        expected_h = high.height;
    }
    for high in pyr.highs.iter().rev() {
        let up = upsample_to(&current, high.width, high.height)?;
        let data: Vec<f32> = high.data.iter().zip(&up.data).map(|(h, u)| h + u).collect();
        current = ImageBuffer::new(high.width, high.height, high.channels, data);
    }
    Ok(current)
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    depth: usize,
    channels: usize,
    levels: Vec<(usize, usize)>,
    base: (usize, usize),
}

/// Export as a directory of 16-bit PNGs plus a JSON sidecar. Highs are
/// remapped `(h+1)/2` into `[0,1]`; the path is lossy, the lossless
/// representation is in-memory only.
pub fn export_pyramid(pyr: &Pyramid, dir: impl AsRef<Path>) -> Result<(), PyramidError> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| PyramidError::Io(e.to_string()))?;
    for (i, high) in pyr.highs.iter().enumerate() {
        let remapped: Vec<f32> = high.data.iter().map(|v| (v + 1.0) / 2.0).collect();
        let img = ImageBuffer::new(high.width, high.height, high.channels, remapped);
        imagecore::save_image(&img, dir.join(format!("high_{i}.png")), 16)?;
    }
    imagecore::save_image(&pyr.base.clamped(), dir.join("base.png"), 16)?;
    let sidecar = Sidecar {
        depth: pyr.depth(),
        channels: pyr.base.channels,
        levels: pyr.highs.iter().map(|h| (h.width, h.height)).collect(),
        base: (pyr.base.width, pyr.base.height),
    };
    let json =
        serde_json::to_string_pretty(&sidecar).map_err(|e| PyramidError::Io(e.to_string()))?;
    std::fs::write(dir.join("pyramid.json"), json).map_err(|e| PyramidError::Io(e.to_string()))?;
    Ok(())
}

/// Load a pyramid previously written by [`export_pyramid`].
pub fn import_pyramid(dir: impl AsRef<Path>) -> Result<Pyramid, PyramidError> {
    let dir = dir.as_ref();
    let json = std::fs::read_to_string(dir.join("pyramid.json"))
        .map_err(|e| PyramidError::Io(e.to_string()))?;
    let sidecar: Sidecar =
        serde_json::from_str(&json).map_err(|e| PyramidError::Io(e.to_string()))?;
    let mut highs = Vec::with_capacity(sidecar.depth);
    for (i, &(w, h)) in sidecar.levels.iter().enumerate() {
        let img = imagecore::load_image(dir.join(format!("high_{i}.png")))?;
        if img.width != w || img.height != h {
            return Err(PyramidError::DimensionMismatch {
                level: i,
                expected_w: w,
                expected_h: h,
                got_w: img.width,
                got_h: img.height,
            });
        }
        let data: Vec<f32> = img.data.iter().map(|v| v * 2.0 - 1.0).collect();
        highs.push(ImageBuffer::new(img.width, img.height, img.channels, data));
    }
    let base = imagecore::load_image(dir.join("base.png"))?;
    Ok(Pyramid { highs, base })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn random_image(w: usize, h: usize, c: usize, seed: u64) -> ImageBuffer {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * c).map(|_| rng.gen::<f32>()).collect();
        ImageBuffer::new(w, h, c, data)
    }

    #[test]
    fn down_preserves_constant() {
        let img = ImageBuffer::constant(7, 5, 3, 0.42);
        let out = gaussian_down(&img).unwrap();
        assert_eq!((out.width, out.height), (4, 3));
        for v in &out.data {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn down_size_rules() {
        let out = gaussian_down(&ImageBuffer::zeros(4, 4, 1)).unwrap();
        assert_eq!((out.width, out.height), (2, 2));
        let out = gaussian_down(&ImageBuffer::zeros(5, 5, 1)).unwrap();
        assert_eq!((out.width, out.height), (3, 3));
    }

    #[test]
    fn down_rejects_tiny() {
        assert!(matches!(
            gaussian_down(&ImageBuffer::zeros(1, 4, 1)),
            Err(PyramidError::TooSmall { .. })
        ));
    }

    #[test]
    fn upsample_preserves_constant() {
        let img = ImageBuffer::constant(3, 2, 1, 0.7);
        let out = upsample_to(&img, 5, 4).unwrap();
        assert_eq!((out.width, out.height), (5, 4));
        for v in &out.data {
            assert!((v - 0.7).abs() < 1e-6);
        }
    }

    #[test]
    fn upsample_rejects_zero_target() {
        assert!(matches!(
            upsample_to(&ImageBuffer::zeros(2, 2, 1), 0, 4),
            Err(PyramidError::ZeroTarget)
        ));
    }

    #[test]
    fn decompose_constant_gives_zero_highs() {
        let img = ImageBuffer::constant(8, 8, 1, 0.3);
        let pyr = decompose(&img, 2).unwrap();
        for high in &pyr.highs {
            for v in &high.data {
                assert!(v.abs() < 1e-6);
            }
        }
        for v in &pyr.base.data {
            assert!((v - 0.3).abs() < 1e-6);
        }
    }

    #[test]
    fn decompose_size_rule() {
        let pyr = decompose(&ImageBuffer::zeros(8, 8, 1), 2).unwrap();
        assert_eq!((pyr.highs[0].width, pyr.highs[0].height), (8, 8));
        assert_eq!((pyr.highs[1].width, pyr.highs[1].height), (4, 4));
        assert_eq!((pyr.base.width, pyr.base.height), (2, 2));
    }

    #[test]
    fn depth_too_large() {
        assert!(matches!(
            decompose(&ImageBuffer::zeros(8, 8, 1), 4),
            Err(PyramidError::DepthTooLarge { .. })
        ));
    }

    #[test]
    fn reconstruction_identity() {
        let img = random_image(16, 16, 1, 7);
        let pyr = decompose(&img, 3).unwrap();
        let back = reconstruct(&pyr).unwrap();
        let max_err = img
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 1e-6, "max err {max_err}");
    }

    #[test]
    fn reconstruction_identity_odd_dims() {
        let img = random_image(13, 11, 3, 99);
        let pyr = decompose(&img, 2).unwrap();
        let back = reconstruct(&pyr).unwrap();
        let max_err = img
            .data
            .iter()
            .zip(&back.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f32, f32::max);
        assert!(max_err <= 1e-6, "max err {max_err}");
    }

    #[test]
    fn tampered_level_dims_rejected() {
        let img = random_image(16, 16, 1, 1);
        let mut pyr = decompose(&img, 2).unwrap();
        pyr.highs[1] = ImageBuffer::zeros(5, 5, 1);
        assert!(matches!(
            reconstruct(&pyr),
            Err(PyramidError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn impulse_support_is_local() {
        let mut data = vec![0.0f32; 64 * 64];
        data[32 * 64 + 32] = 1.0;
        let img = ImageBuffer::new(64, 64, 1, data);
        let pyr = decompose(&img, 2).unwrap();
        for (i, high) in pyr.highs.iter().enumerate() {
            let radius = 4 * (1usize << i);
            let (cx, cy) = (32 >> i, 32 >> i);
            for y in 0..high.height {
                for x in 0..high.width {
                    if high.sample(x, y, 0).abs() > 1e-7 {
                        assert!(
                            x.abs_diff(cx) <= radius && y.abs_diff(cy) <= radius,
                            "level {i} has energy at ({x},{y})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn determinism() {
        let img = random_image(17, 9, 3, 3);
        let a = reconstruct(&decompose(&img, 2).unwrap()).unwrap();
        let b = reconstruct(&decompose(&img, 2).unwrap()).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn export_import_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let img = random_image(16, 12, 3, 5);
        let pyr = decompose(&img, 2).unwrap();
        export_pyramid(&pyr, dir.path()).unwrap();
        let back = import_pyramid(dir.path()).unwrap();
        assert_eq!(back.depth(), 2);
        // lossy path: 16-bit quantization on the (h+1)/2 remap
        for (a, b) in pyr.highs[0].data.iter().zip(&back.highs[0].data) {
            assert!((a - b).abs() < 2.0 / 65535.0 + 1e-6);
        }
    }
}
