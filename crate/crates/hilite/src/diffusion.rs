//! Deterministic diffusion mathematics: noise schedule, forward
//! sampling, target-residual and conditioning construction, loss value,
//! and a plain x0-prediction sampler driven by a caller-supplied
//! denoiser.
//!
//! The denoiser itself (a learned network in practice) is an interface
//! here; everything around it is exact arithmetic.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::imagecore::ImageBuffer;
use crate::pyramid::{self, PyramidError};

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("invalid beta range [{0}, {1}]")]
    InvalidBetaRange(f64, f64),
    #[error("timestep {t} out of range 1..={steps}")]
    TimestepOutOfRange { t: usize, steps: usize },
    #[error("dimension mismatch: {0}x{1}x{2} vs {3}x{4}x{5}")]
    DimensionMismatch(usize, usize, usize, usize, usize, usize),
    #[error("base {0}x{1} is not one halving below {2}x{3}")]
    IncompatibleLevel(usize, usize, usize, usize),
    #[error("n_steps {0} out of range 1..={1}")]
    StepCountOutOfRange(usize, usize),
    #[error(transparent)]
    Pyramid(#[from] PyramidError),
}

/// Per-step noise tables: `beta_t`, `alpha_t = 1 - beta_t` and the
/// running product `alpha_bar_t`.
#[derive(Debug, Clone)]
pub struct DiffusionSchedule {
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl DiffusionSchedule {
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `alpha_bar` at 1-based timestep `t`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64, DiffusionError> {
        if t < 1 || t > self.steps() {
            return Err(DiffusionError::TimestepOutOfRange {
                t,
                steps: self.steps(),
            });
        }
        Ok(self.alpha_bars[t - 1])
    }
}

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Linearly spaced betas (inclusive endpoints) with alphas and the
/// cumulative products derived exactly as stored.
pub fn linear_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<DiffusionSchedule, DiffusionError> {
    if steps < 1 || beta_start <= 0.0 || beta_end >= 1.0 || beta_start > beta_end {
        return Err(DiffusionError::InvalidBetaRange(beta_start, beta_end));
    }
    let betas: Vec<f64> = if steps == 1 {
        vec![beta_start]
    } else {
        (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for a in &alphas {
        prod *= a;
        alpha_bars.push(prod);
    }
    Ok(DiffusionSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

/// Seeded standard-normal raster; bitwise reproducible for a fixed
/// (seed, shape).
pub fn standard_normal_image(
    width: usize,
    height: usize,
    channels: usize,
    seed: u64,
) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..width * height * channels)
        .map(|_| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v as f32
        })
        .collect();
    ImageBuffer::new(width, height, channels, data)
}

fn check_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<(), DiffusionError> {
    if !a.same_shape(b) {
        return Err(DiffusionError::DimensionMismatch(
            a.width, a.height, a.channels, b.width, b.height, b.channels,
        ));
    }
    Ok(())
}

/// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`, unclamped.
pub fn forward_sample(
    x0: &ImageBuffer,
    t: usize,
    eps: &ImageBuffer,
    sched: &DiffusionSchedule,
) -> Result<ImageBuffer, DiffusionError> {
    check_dims(x0, eps)?;
    let ab = sched.alpha_bar(t)?;
    let signal = ab.sqrt() as f32;
    let noise = (1.0 - ab).sqrt() as f32;
    let data = x0
        .data
        .iter()
        .zip(&eps.data)
        .map(|(x, e)| signal * x + noise * e)
        .collect();
    Ok(ImageBuffer::new(x0.width, x0.height, x0.channels, data))
}

/// Target residual `x0 = h_gt - h_in`, elementwise and unclamped.
pub fn build_target(h_gt: &ImageBuffer, h_in: &ImageBuffer) -> Result<ImageBuffer, DiffusionError> {
    check_dims(h_gt, h_in)?;
    let data = h_gt.data.iter().zip(&h_in.data).map(|(g, i)| g - i).collect();
    Ok(ImageBuffer::new(h_gt.width, h_gt.height, h_gt.channels, data))
}

/// Channel-concatenated conditioning input for the denoiser, in the
/// fixed order `[h, Up(base_in), Up(base_out)]`.
#[derive(Debug, Clone)]
pub struct ConditioningStack {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    /// channel count of the residual the denoiser predicts
    pub residual_channels: usize,
    pub data: Vec<f32>,
}

/// Assemble the conditioning stack from the high-frequency layer and
/// the two base images one pyramid level below it.
pub fn build_conditioning(
    h: &ImageBuffer,
    base_in: &ImageBuffer,
    base_out: &ImageBuffer,
) -> Result<ConditioningStack, DiffusionError> {
    for base in [base_in, base_out] {
        if base.width != h.width.div_ceil(2) || base.height != h.height.div_ceil(2) {
            return Err(DiffusionError::IncompatibleLevel(
                base.width, base.height, h.width, h.height,
            ));
        }
    }
    let up_in = pyramid::upsample_to(base_in, h.width, h.height)?;
    let up_out = pyramid::upsample_to(base_out, h.width, h.height)?;
    let channels = h.channels + up_in.channels + up_out.channels;
    let n = h.width * h.height;
    let mut data = Vec::with_capacity(n * channels);
    for px in 0..n {
        for c in 0..h.channels {
            data.push(h.data[px * h.channels + c]);
        }
        for c in 0..up_in.channels {
            data.push(up_in.data[px * up_in.channels + c]);
        }
        for c in 0..up_out.channels {
            data.push(up_out.data[px * up_out.channels + c]);
        }
    }
    Ok(ConditioningStack {
        width: h.width,
        height: h.height,
        channels,
        residual_channels: h.channels,
        data,
    })
}

/// `L_DM` for one draw: mean squared difference between the true and
/// predicted residual.
pub fn dm_loss(x0: &ImageBuffer, predicted_x0: &ImageBuffer) -> Result<f64, DiffusionError> {
    check_dims(x0, predicted_x0)?;
    let sum: f64 = x0
        .data
        .iter()
        .zip(&predicted_x0.data)
        .map(|(a, b)| {
            let d = (*a - *b) as f64;
            d * d
        })
        .sum();
    Ok(sum / x0.data.len() as f64)
}

/// Caller-supplied pure mapping `(x_t, t, y) -> predicted x0`.
pub trait Denoiser {
    fn predict_x0(&self, x_t: &ImageBuffer, t: usize, y: &ConditioningStack) -> ImageBuffer;
}

impl<F> Denoiser for F
where
    F: Fn(&ImageBuffer, usize, &ConditioningStack) -> ImageBuffer,
{
    fn predict_x0(&self, x_t: &ImageBuffer, t: usize, y: &ConditioningStack) -> ImageBuffer {
        self(x_t, t, y)
    }
}

/// Uniformly strided descending timesteps, `n_steps` of them ending
/// near 1.
fn stride_timesteps(steps: usize, n_steps: usize) -> Vec<usize> {
    (0..n_steps)
        .map(|i| {
            let t = (steps as f64 * (n_steps - i) as f64 / n_steps as f64).round() as usize;
            t.max(1)
        })
        .collect()
}

/// Deterministic x0-prediction sampling loop. Starts from seeded
/// standard normal noise at `t = T`, re-noises the current prediction to
/// each next timestep, and returns the final predicted x0.
pub fn sample<D: Denoiser>(
    denoiser: &D,
    y: &ConditioningStack,
    sched: &DiffusionSchedule,
    n_steps: usize,
    seed: u64,
) -> Result<ImageBuffer, DiffusionError> {
    if n_steps < 1 || n_steps > sched.steps() {
        return Err(DiffusionError::StepCountOutOfRange(n_steps, sched.steps()));
    }
    let ts = stride_timesteps(sched.steps(), n_steps);
    let mut x = standard_normal_image(y.width, y.height, y.residual_channels, seed);
    let mut prediction = None;
    for (i, &t) in ts.iter().enumerate() {
        let x0_hat = denoiser.predict_x0(&x, t, y);
        if i + 1 < ts.len() {
            let t_next = ts[i + 1];
            let ab_t = sched.alpha_bar(t)?;
            let ab_next = sched.alpha_bar(t_next)?;
            let s_t = ab_t.sqrt() as f32;
            let n_t = (1.0 - ab_t).sqrt() as f32;
            let s_next = ab_next.sqrt() as f32;
            let n_next = (1.0 - ab_next).sqrt() as f32;
            let data: Vec<f32> = x
                .data
                .iter()
                .zip(&x0_hat.data)
                .map(|(xt, x0)| {
                    let eps = (xt - s_t * x0) / n_t;
                    s_next * x0 + n_next * eps
                })
                .collect();
            x = ImageBuffer::new(x.width, x.height, x.channels, data);
        }
        prediction = Some(x0_hat);
    }
    Ok(prediction.expect("n_steps >= 1"))
}
