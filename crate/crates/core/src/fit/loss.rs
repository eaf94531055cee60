//! Photometric loss and the scene regularizers, each with its gradient.

use crate::core::{Gaussian, Image, Mesh, PixelMask};
use crate::error::{Error, Result};

/// Scale bounds, floor and translation bound of the regularizers, in mm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerBounds {
    pub scale_lo: f64,
    pub scale_hi: f64,
    pub scale_floor: f64,
    pub translation_max: f64,
}

impl Default for RegularizerBounds {
    fn default() -> Self {
        Self {
            scale_lo: 0.1,
            scale_hi: 10.0,
            scale_floor: 1e-7,
            translation_max: 10.0,
        }
    }
}

fn check_mask(mask: Option<&PixelMask>, width: usize, height: usize) -> Result<usize> {
    match mask {
        None => Ok(width * height),
        Some(m) => {
            if m.width() != width || m.height() != height {
                return Err(Error::Dimension {
                    what: "mask pixels",
                    expected: width * height,
                    found: m.width() * m.height(),
                });
            }
            match m.count() {
                0 => Err(Error::InvalidArgument("mask selects no pixels".into())),
                n => Ok(n),
            }
        }
    }
}

fn check_images(a: &Image, b: &Image) -> Result<()> {
    if a.same_dims(b) {
        Ok(())
    } else {
        Err(Error::Dimension {
            what: "image pixels",
            expected: a.len(),
            found: b.len(),
        })
    }
}

/// Mean squared error over the (masked) pixels and all channels.
pub fn photometric_loss(rendered: &Image, target: &Image, mask: Option<&PixelMask>) -> Result<f64> {
    check_images(rendered, target)?;
    let n = check_mask(mask, rendered.width(), rendered.height())?;
    let mut sum = 0.0;
    for (p, (a, b)) in rendered.pixels().iter().zip(target.pixels()).enumerate() {
        if mask.is_some_and(|m| !m.bits()[p]) {
            continue;
        }
        for c in 0..3 {
            sum += (a[c] - b[c]).powi(2);
        }
    }
    Ok(sum / (3 * n) as f64)
}

/// Gradient of [`photometric_loss`] with respect to the rendered image.
pub fn photometric_grad(rendered: &Image, target: &Image, mask: Option<&PixelMask>) -> Result<Vec<[f64; 3]>> {
    check_images(rendered, target)?;
    let n = check_mask(mask, rendered.width(), rendered.height())?;
    let k = 2.0 / (3 * n) as f64;
    Ok(rendered
        .pixels()
        .iter()
        .zip(target.pixels())
        .enumerate()
        .map(|(p, (a, b))| {
            if mask.is_some_and(|m| !m.bits()[p]) {
                [0.0; 3]
            } else {
                [0, 1, 2].map(|c| k * (a[c] - b[c]))
            }
        })
        .collect())
}

/// Penalty for one scale component and its derivative with respect to `s`.
pub fn scale_penalty(s: f64, b: &RegularizerBounds) -> (f64, f64) {
    if s < b.scale_lo {
        if s > b.scale_floor {
            (1.0 / s, -1.0 / (s * s))
        } else {
            (1.0 / b.scale_floor, 0.0)
        }
    } else if s > b.scale_hi {
        let d = s - b.scale_hi;
        (d * d, 2.0 * d)
    } else {
        (0.0, 0.0)
    }
}

/// Mean scale penalty over every component of every Gaussian, and its
/// gradient with respect to each stored log-scale.
pub fn scale_loss(gaussians: &[Gaussian], b: &RegularizerBounds) -> (f64, Vec<[f64; 3]>) {
    if gaussians.is_empty() {
        return (0.0, Vec::new());
    }
    let n = (3 * gaussians.len()) as f64;
    let mut total = 0.0;
    let grads = gaussians
        .iter()
        .map(|g| {
            let s = g.scale();
            [0, 1, 2].map(|i| {
                let (l, d) = scale_penalty(s[i], b);
                total += l;
                d * s[i] / n
            })
        })
        .collect();
    (total / n, grads)
}

/// Mean hinge `max(0, |t| - t_max)` over Gaussian offsets, and its gradient.
pub fn translation_loss(gaussians: &[Gaussian], b: &RegularizerBounds) -> (f64, Vec<[f64; 3]>) {
    if gaussians.is_empty() {
        return (0.0, Vec::new());
    }
    let n = gaussians.len() as f64;
    let mut total = 0.0;
    let grads = gaussians
        .iter()
        .map(|g| {
            let t = g.offset_vec();
            let len = t.norm();
            if len > b.translation_max {
                total += len - b.translation_max;
                [t.x / (len * n), t.y / (len * n), t.z / (len * n)]
            } else {
                [0.0; 3]
            }
        })
        .collect();
    (total / n, grads)
}

/// Offset of each vertex from its one-ring centroid; zero for isolated vertices.
pub fn laplacian_residuals(mesh: &Mesh) -> Vec<[f64; 3]> {
    (0..mesh.vertex_count())
        .map(|i| {
            let ring = mesh.one_ring(i);
            if ring.is_empty() {
                return [0.0; 3];
            }
            let mut mean = [0.0; 3];
            for &j in ring {
                let v = mesh.vertices[j as usize];
                for c in 0..3 {
                    mean[c] += v[c] as f64;
                }
            }
            let x = mesh.vertices[i];
            [0, 1, 2].map(|c| x[c] as f64 - mean[c] / ring.len() as f64)
        })
        .collect()
}

/// Mean over vertices of the squared distance to the one-ring centroid,
/// and its gradient.
pub fn laplacian_loss(mesh: &Mesh) -> (f64, Vec<[f64; 3]>) {
    let n = mesh.vertex_count();
    if n == 0 {
        return (0.0, Vec::new());
    }
    let residual = laplacian_residuals(mesh);
    let loss = residual
        .iter()
        .map(|r| r[0] * r[0] + r[1] * r[1] + r[2] * r[2])
        .sum::<f64>()
        / n as f64;
    let k = 2.0 / n as f64;
    let mut grad: Vec<[f64; 3]> = residual.iter().map(|r| r.map(|v| k * v)).collect();
    for (i, r) in residual.iter().enumerate() {
        let ring = mesh.one_ring(i);
        if ring.is_empty() {
            continue;
        }
        let w = k / ring.len() as f64;
        for &j in ring {
            for c in 0..3 {
                grad[j as usize][c] -= w * r[c];
            }
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with_scale(s: f32) -> Gaussian {
        Gaussian::new(0, [0.0; 3], [1.0, 0.0, 0.0, 0.0], [s, 1.0, 1.0], 0.5, [0.5; 3])
    }

    #[test]
    fn photometric_cases() {
        let a = Image::filled(4, 4, [0.25; 3]);
        let b = Image::filled(4, 4, [0.75; 3]);
        assert_eq!(photometric_loss(&a, &a, None).unwrap(), 0.0);
        assert_eq!(photometric_loss(&a, &b, None).unwrap(), 0.25);
        let mut c = b.clone();
        for x in 0..4 {
            for y in 0..2 {
                c.set(x, y, [0.25; 3]);
            }
        }
        let bits: Vec<bool> = (0..16).map(|p| p >= 8).collect();
        let mask = PixelMask::new(4, 4, bits).unwrap();
        assert_eq!(photometric_loss(&a, &c, Some(&mask)).unwrap(), 0.25);
        assert!(photometric_loss(&a, &Image::new(3, 4), None).is_err());
        let empty = PixelMask::new(4, 4, vec![false; 16]).unwrap();
        assert!(photometric_loss(&a, &b, Some(&empty)).is_err());
    }

    #[test]
    fn scale_penalty_values() {
        let b = RegularizerBounds::default();
        assert_eq!(scale_penalty(1.0, &b).0, 0.0);
        assert_eq!(scale_penalty(0.05, &b).0, 20.0);
        assert_eq!(scale_penalty(12.0, &b).0, 4.0);
        assert_eq!(scale_penalty(0.0, &b).0, 1e7);
        assert_eq!(scale_penalty(1e-9, &b).0, 1e7);
    }

    #[test]
    fn scale_loss_is_mean_over_components() {
        let b = RegularizerBounds::default();
        let (l, _) = scale_loss(&[with_scale(1.0)], &b);
        assert_eq!(l, 0.0);
        let (l, _) = scale_loss(&[with_scale(12.0)], &b);
        // stored as log-scale in f32, so the realized scale is not exactly 12
        assert!((l - 4.0 / 3.0).abs() < 1e-5);
    }

    #[test]
    fn translation_hinge() {
        let b = RegularizerBounds::default();
        let at = |t: [f32; 3]| {
            let mut g = with_scale(1.0);
            g.offset = t;
            translation_loss(&[g], &b).0
        };
        assert_eq!(at([0.0; 3]), 0.0);
        assert_eq!(at([3.0, 4.0, 0.0]), 0.0);
        assert_eq!(at([0.0, 0.0, 12.0]), 2.0);
    }

    #[test]
    fn flat_grid_has_zero_interior_laplacian() {
        let mesh = Mesh::flat_grid(5, 1.0, 10.0, 2, [0.5; 3], 1.0).unwrap();
        let res = laplacian_residuals(&mesh);
        for r in 1..4 {
            for c in 1..4 {
                assert_eq!(res[r * 5 + c], [0.0; 3]);
            }
        }
        assert_ne!(res[0], [0.0; 3]);
    }

    #[test]
    fn displaced_vertex_closed_form() {
        let base = Mesh::flat_grid(5, 1.0, 10.0, 2, [0.5; 3], 1.0).unwrap();
        let (l0, _) = laplacian_loss(&base);
        let mut v = base.vertices.clone();
        let center = 12;
        v[center][2] += 0.5;
        let mesh = base.with_vertices(v).unwrap();
        let (l1, _) = laplacian_loss(&mesh);
        let ring = mesh.one_ring(center);
        let neighbors: f64 = ring
            .iter()
            .map(|&j| 0.25 / (mesh.one_ring(j as usize).len() as f64).powi(2))
            .sum();
        let expect = (0.25 + neighbors) / 25.0;
        assert!((l1 - l0 - expect).abs() < 1e-9, "{l1} {l0} {expect}");
    }

    proptest! {
        #[test]
        fn laplacian_translation_invariant(seed in 0u64..1000, shift in prop::array::uniform3(-50i32..50)) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let base = Mesh::flat_grid(4, 2.0, 10.0, 2, [0.5; 3], 1.0).unwrap();
            // multiples of 1/1024 so the shifted coordinates stay exact in f32
            let v: Vec<[f32; 3]> = base
                .vertices
                .iter()
                .map(|p| p.map(|x| x + rng.random_range(-1024i32..1024) as f32 / 1024.0))
                .collect();
            let a = laplacian_loss(&base.with_vertices(v.clone()).unwrap()).0;
            let moved: Vec<[f32; 3]> = v.iter().map(|p| [0, 1, 2].map(|c| p[c] + shift[c] as f32)).collect();
            let b = laplacian_loss(&base.with_vertices(moved).unwrap()).0;
            prop_assert!((a - b).abs() < 1e-9);
        }

        #[test]
        fn regularizers_vanish_in_range(s in prop::array::uniform3(0.11f32..9.9), t in prop::array::uniform3(-5.7f32..5.7)) {
            let b = RegularizerBounds::default();
            let mut g = Gaussian::new(0, t, [1.0, 0.0, 0.0, 0.0], s, 0.5, [0.5; 3]);
            g.offset = t;
            prop_assert_eq!(scale_loss(&[g], &b).0, 0.0);
            prop_assert_eq!(translation_loss(&[g], &b).0, 0.0);
        }
    }
}
