//! Metrics against a direct sliding-window implementation.

#![allow(clippy::needless_range_loop)]

use meshsplat::core::PixelMask;
use meshsplat::scene_io::{metric_mae, metric_psnr, metric_ssim};
use meshsplat::Image;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Image {
    Image::from_pixels(
        w,
        h,
        (0..w * h).map(|_| [0; 3].map(|_| rng.random_range(0.0..1.0))).collect(),
    )
    .unwrap()
}

/// Two-dimensional window, one window at a time, no separability.
fn direct_ssim(a: &Image, b: &Image, mask: Option<&PixelMask>) -> f64 {
    let mut win = [[0.0f64; 11]; 11];
    let mut sum = 0.0;
    for (i, row) in win.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            sum += *v;
        }
    }
    let c1 = 6.5025;
    let c2 = 58.5225;
    let (mut total, mut count) = (0.0, 0usize);
    for cy in 5..a.height() - 5 {
        for cx in 5..a.width() - 5 {
            if mask.is_some_and(|m| !m.get(cx, cy)) {
                continue;
            }
            for c in 0..3 {
                let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (i, row) in win.iter().enumerate() {
                    for (j, w) in row.iter().enumerate() {
                        let w = w / sum;
                        let x = a.get(cx + j - 5, cy + i - 5)[c] * 255.0;
                        let y = b.get(cx + j - 5, cy + i - 5)[c] * 255.0;
                        mx += w * x;
                        my += w * y;
                        xx += w * x * x;
                        yy += w * y * y;
                        xy += w * x * y;
                    }
                }
                let (vx, vy, cov) = (xx - mx * mx, yy - my * my, xy - mx * my);
                total += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_direct_windows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..8 {
        let (w, h) = (11 + rng.random_range(0..20), 11 + rng.random_range(0..20));
        let a = random_image(&mut rng, w, h);
        let mut b = random_image(&mut rng, w, h);
        // correlated pairs too, not only independent noise
        if k % 2 == 0 {
            for (q, p) in b.pixels_mut().iter_mut().zip(a.pixels()) {
                *q = [0, 1, 2].map(|c| (0.8 * p[c] + 0.2 * q[c]).min(1.0));
            }
        }
        let mask = if k % 3 == 0 {
            Some(PixelMask::new(w, h, (0..w * h).map(|_| rng.random_bool(0.6)).collect()).unwrap())
        } else {
            None
        };
        let fast = metric_ssim(&a, &b, mask.as_ref()).unwrap();
        let slow = direct_ssim(&a, &b, mask.as_ref());
        assert!((fast - slow).abs() < 1e-6, "{w}x{h}: {fast} vs {slow}");
        assert!(fast <= 1.0);
    }
}

#[test]
fn masked_mae_and_psnr_only_see_selected_pixels() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = random_image(&mut rng, 16, 16);
    let mut b = a.clone();
    let mut bits = vec![true; 256];
    for p in 0..128 {
        bits[p] = false;
        b.pixels_mut()[p] = [1.0 - a.pixels()[p][0], 0.0, 1.0];
    }
    let m = PixelMask::new(16, 16, bits).unwrap();
    assert_eq!(metric_mae(&a, &b, Some(&m)).unwrap(), 0.0);
    assert_eq!(metric_psnr(&a, &b, Some(&m)).unwrap(), 100.0);
    assert!(metric_ssim(&a, &b, None).unwrap() < 1.0);
}
