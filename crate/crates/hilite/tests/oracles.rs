//! Cross-checks against the independent reference implementations in
//! `common`.

mod common;

use common::*;
use hilite::imagecore::{to_grayscale, ImageBuffer};
use hilite::metrics::{self, RmseScale};
use hilite::prior::{self, PriorConfig, SoftMask};
use hilite::{diffusion, pyramid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn otsu_matches_brute_force_on_random_masks() {
    for seed in 0..50 {
        let mask = random_mask(23, 17, seed);
        let (t, b) = prior::otsu_threshold(&mask, 256).unwrap();
        let (t_ref, b_ref) = otsu_brute_force(&mask, 256);
        assert_eq!(t, t_ref, "seed {seed}");
        assert_eq!(b.data, b_ref.data, "seed {seed}");
    }
}

#[test]
fn otsu_matches_brute_force_on_adversarial_masks() {
    let cases = vec![
        SoftMask::new(4, 1, vec![0.5; 4]),
        SoftMask::new(4, 2, vec![0.1, 0.1, 0.1, 0.1, 0.9, 0.9, 0.9, 0.9]),
        SoftMask::new(5, 1, vec![0.0, 0.0, 0.0, 0.0, 1.0]),
        SoftMask::new(3, 1, vec![0.0, 1.0 / 512.0, 1.0]),
        SoftMask::new(2, 2, vec![0.999, 1.0, 0.0, 0.001]),
    ];
    for (i, mask) in cases.iter().enumerate() {
        let (t, b) = prior::otsu_threshold(mask, 256).unwrap();
        let (t_ref, b_ref) = otsu_brute_force(mask, 256);
        assert_eq!(t, t_ref, "case {i}");
        assert_eq!(b.data, b_ref.data, "case {i}");
    }
}

#[test]
fn otsu_invariant_under_affine_remap_on_bin_centers() {
    // values on bin centers so the remap cannot straddle a bin edge
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let data: Vec<f32> = (0..64)
            .map(|_| (rng.gen_range(0..128) as f32 + 0.5) / 256.0)
            .collect();
        let mask = SoftMask::new(8, 8, data);
        let (_, baseline) = prior::otsu_threshold(&mask, 256).unwrap();
        // strictly increasing affine map aligned to bin widths: v -> 2v
        let remapped = SoftMask::new(8, 8, mask.data.iter().map(|v| v * 2.0).collect());
        let (_, after) = prior::otsu_threshold(&remapped, 256).unwrap();
        assert_eq!(baseline.data, after.data);
    }
}

#[test]
fn rmse_psnr_match_direct_formulas() {
    for seed in 0..30 {
        let a = random_image(19, 13, 3, seed);
        let b = random_image(19, 13, 3, seed + 1000);
        let r = metrics::rmse(&a, &b, RmseScale::Unit).unwrap();
        assert!((r - rmse_direct(&a, &b)).abs() < 1e-9);
        let p = metrics::psnr(&a, &b).unwrap();
        assert!((p - psnr_direct(&a, &b)).abs() < 1e-9);
    }
}

#[test]
fn rmse_squared_identity() {
    let a = random_image(11, 7, 1, 5);
    let b = random_image(11, 7, 1, 6);
    let r = metrics::rmse(&a, &b, RmseScale::Unit).unwrap();
    let sum_sq: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = (*x - *y) as f64;
            d * d
        })
        .sum();
    assert!((r * r * a.data.len() as f64 - sum_sq).abs() < 1e-9);
}

#[test]
fn ssim_matches_direct_implementation() {
    for seed in 0..20 {
        let a = to_grayscale(&random_image(24, 18, 1, seed));
        let b = to_grayscale(&random_image(24, 18, 1, seed + 500));
        let s = metrics::ssim(&a, &b).unwrap();
        assert!((s - ssim_direct(&a, &b)).abs() < 1e-6, "seed {seed}");
    }
}

#[test]
fn ssim_symmetry() {
    let a = to_grayscale(&random_image(16, 16, 1, 42));
    let b = to_grayscale(&random_image(16, 16, 1, 43));
    let ab = metrics::ssim(&a, &b).unwrap();
    let ba = metrics::ssim(&b, &a).unwrap();
    assert!((ab - ba).abs() < 1e-9);
}

#[test]
fn acc_ber_match_naive_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let pred = hilite::BinaryMask::new(8, 8, (0..64).map(|_| rng.gen_range(0..2u8)).collect());
        let gt = hilite::BinaryMask::new(8, 8, (0..64).map(|_| rng.gen_range(0..2u8)).collect());
        let c = metrics::mask_confusion(&pred, &gt).unwrap();
        let (acc_ref, ber_ref) = acc_ber_naive(&pred, &gt);
        assert!((metrics::accuracy(&c) - acc_ref).abs() < 1e-12);
        match ber_ref {
            Some(b) => assert!((metrics::ber(&c).unwrap() - b).abs() < 1e-12),
            None => assert!(metrics::ber(&c).is_err()),
        }
    }
}

#[test]
fn tv_matches_direct_sum() {
    for seed in 0..20 {
        let m = random_mask(9, 6, seed);
        assert!((metrics::tv(&m).unwrap() - tv_direct(&m)).abs() < 1e-9);
    }
}

#[test]
fn dm_loss_equals_squared_unit_rmse() {
    let a = random_image(10, 10, 1, 1);
    let b = random_image(10, 10, 1, 2);
    let dm = diffusion::dm_loss(&a, &b).unwrap();
    let r = metrics::rmse(&a, &b, RmseScale::Unit).unwrap();
    assert!((dm - r * r).abs() < 1e-9);
}

#[test]
fn save_16bit_half_rounds_up() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.png");
    let img = ImageBuffer::constant(1, 1, 1, 0.5);
    hilite::imagecore::save_image(&img, &path, 16).unwrap();
    let back = hilite::imagecore::load_image(&path).unwrap();
    assert!((back.data[0] - 32768.0 / 65535.0).abs() < 1e-7);
}

#[test]
fn synthetic_blob_prior_has_high_iou() {
    let gt = document_texture(128, 128, 11);
    let (hl, support) = add_gaussian_blob(&gt, 64.0, 64.0, 20.0, 0.6);
    let out = prior::generate_prior(&hl, &gt, &PriorConfig::default()).unwrap();
    let mut inter = 0usize;
    let mut union = 0usize;
    for i in 0..support.data.len() {
        let p = out.binary.data[i] == 1;
        let g = support.data[i] == 1;
        if p && g {
            inter += 1;
        }
        if p || g {
            union += 1;
        }
    }
    let iou = inter as f64 / union as f64;
    assert!(iou >= 0.8, "IoU {iou}");
}

#[test]
fn forward_sample_moments_small() {
    let sched = diffusion::linear_schedule(100, 1e-4, 0.02).unwrap();
    let x0 = ImageBuffer::constant(2, 2, 1, 0.4);
    let t = 50;
    let ab = sched.alpha_bar(t).unwrap();
    let n = 20_000usize;
    let mut mean = vec![0.0f64; 4];
    let mut sq = vec![0.0f64; 4];
    for draw in 0..n {
        let eps = diffusion::standard_normal_image(2, 2, 1, draw as u64);
        let xt = diffusion::forward_sample(&x0, t, &eps, &sched).unwrap();
        for i in 0..4 {
            let centered = xt.data[i] as f64 - ab.sqrt() * 0.4;
            mean[i] += centered;
            sq[i] += centered * centered;
        }
    }
    let sigma = (1.0 - ab).sqrt();
    for i in 0..4 {
        let m = mean[i] / n as f64;
        let v = sq[i] / n as f64;
        assert!(m.abs() < 4.0 * sigma / (n as f64).sqrt(), "mean {m}");
        assert!((v / (1.0 - ab) - 1.0).abs() < 0.05, "variance ratio");
    }
}

#[test]
fn perfect_oracle_denoiser_recovers_target() {
    let sched = diffusion::linear_schedule(100, 1e-4, 0.02).unwrap();
    let h = random_image(8, 8, 1, 77);
    let base = pyramid::gaussian_down(&h).unwrap();
    let y = diffusion::build_conditioning(&h, &base, &base).unwrap();
    let truth = random_image(8, 8, 1, 78);
    let truth_clone = truth.clone();
    let oracle = move |_: &ImageBuffer, _: usize, _: &diffusion::ConditioningStack| {
        truth_clone.clone()
    };
    for n_steps in [1usize, 10, 100] {
        let out = diffusion::sample(&oracle, &y, &sched, n_steps, 5).unwrap();
        assert!(max_abs_diff(&out.data, &truth.data) <= 1e-6, "{n_steps} steps");
    }
}
