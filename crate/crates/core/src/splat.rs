//! Gaussian half of the hybrid renderer: EWA projection to screen space,
//! global depth sort, tile binning, per-pixel alpha, and the reverse pass
//! from screen-space gradients back to the 3D Gaussian parameters.

use std::cmp::Ordering;

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::config::RenderConfig;
use crate::core::{resolve_position, Camera, Scene};
use crate::error::{Error, Result};

/// A Gaussian projected into one camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectedGaussian {
    /// Index into `Scene::gaussians`.
    pub source: u32,
    /// Screen-space mean, pixels.
    pub mean: [f64; 2],
    /// 2D covariance `(xx, xy, yy)` including the low-pass dilation, px².
    pub cov: [f64; 3],
    /// Inverse of `cov`, same layout.
    pub conic: [f64; 3],
    /// Camera-space z of the center, mm.
    pub depth: f64,
    pub color: [f64; 3],
    pub opacity: f64,
    /// Footprint radius along the major axis, pixels.
    pub radius: f64,
    /// Inclusive pixel bounds `[x0, y0, x1, y1]` of the footprint.
    pub rect: [usize; 4],
}

impl ProjectedGaussian {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.rect[0] && x <= self.rect[2] && y >= self.rect[1] && y <= self.rect[3]
    }
}

/// Alpha of one Gaussian at one pixel, with what the reverse pass needs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlphaEval {
    pub alpha: f64,
    /// `exp(power)`, the unweighted Gaussian falloff.
    pub falloff: f64,
    pub delta: [f64; 2],
    pub clamped: bool,
}

/// Evaluates a Gaussian at `pixel`. `None` means the fragment is skipped.
#[inline]
pub fn eval_alpha(pg: &ProjectedGaussian, pixel: [f64; 2], cfg: &RenderConfig) -> Option<AlphaEval> {
    let dx = pixel[0] - pg.mean[0];
    let dy = pixel[1] - pg.mean[1];
    let power = -0.5 * (pg.conic[0] * dx * dx + pg.conic[2] * dy * dy) - pg.conic[1] * dx * dy;
    let falloff = power.exp();
    let raw = pg.opacity * falloff;
    let (alpha, clamped) = match cfg.alpha_clamp {
        Some(max) if raw > max => (max, true),
        _ => (raw, false),
    };
    if alpha < cfg.min_alpha || (cfg.min_alpha == 0.0 && alpha == 0.0) {
        return None;
    }
    Some(AlphaEval {
        alpha,
        falloff,
        delta: [dx, dy],
        clamped,
    })
}

/// `min(clamp, o * exp(-1/2 d^T conic d))`, or 0 when below the skip threshold.
pub fn alpha_at(pg: &ProjectedGaussian, pixel: [f64; 2], cfg: &RenderConfig) -> f64 {
    eval_alpha(pg, pixel, cfg).map_or(0.0, |e| e.alpha)
}

fn pixel_range(lo: f64, hi: f64, count: usize) -> Option<(usize, usize)> {
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(count as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

/// `J W` for a camera-space point: the linearized projection composed with
/// the camera rotation.
fn projection_jacobian(cam: &Camera, t: &Vector3<f64>) -> Matrix2x3<f64> {
    let inv_z = 1.0 / t.z;
    let j = Matrix2x3::new(
        cam.fx * inv_z,
        0.0,
        -cam.fx * t.x * inv_z * inv_z,
        0.0,
        cam.fy * inv_z,
        -cam.fy * t.y * inv_z * inv_z,
    );
    j * cam.rotation()
}

fn project_one(scene: &Scene, cam: &Camera, index: usize, cfg: &RenderConfig) -> Option<ProjectedGaussian> {
    let g = &scene.gaussians[index];
    let world = resolve_position(g, &scene.mesh).ok()?;
    let t = cam.to_camera(&world);
    if !(t.z >= cam.near) {
        return None;
    }
    let m = projection_jacobian(cam, &t);
    let cov2 = m * g.covariance3d() * m.transpose();
    let a = cov2[(0, 0)] + cfg.low_pass;
    let b = 0.5 * (cov2[(0, 1)] + cov2[(1, 0)]);
    let c = cov2[(1, 1)] + cfg.low_pass;
    let det = a * c - b * b;
    if !(det > 0.0) {
        return None;
    }
    let opacity = g.opacity();
    let floor = cfg.footprint_alpha();
    if !(opacity > floor) {
        return None;
    }
    // alpha >= floor exactly inside the ellipse d^T conic d <= k2
    let k2 = 2.0 * (opacity / floor).ln();
    let mean = [cam.fx * t.x / t.z + cam.cx, cam.fy * t.y / t.z + cam.cy];
    let hx = (k2 * a).sqrt();
    let hy = (k2 * c).sqrt();
    let (x0, x1) = pixel_range(mean[0] - hx, mean[0] + hx, cam.width)?;
    let (y0, y1) = pixel_range(mean[1] - hy, mean[1] + hy, cam.height)?;
    let mid = 0.5 * (a + c);
    let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
    Some(ProjectedGaussian {
        source: index as u32,
        mean,
        cov: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: t.z,
        color: g.color_f64(),
        opacity,
        radius: (k2 * lambda_max).sqrt(),
        rect: [x0, y0, x1, y1],
    })
}

/// Total order used everywhere Gaussians are sorted: depth, then source index.
pub fn depth_order(a: &ProjectedGaussian, b: &ProjectedGaussian) -> Ordering {
    a.depth.total_cmp(&b.depth).then(a.source.cmp(&b.source))
}

/// Projects every visible Gaussian and sorts the survivors front to back.
///
/// Culled: centers closer than the near plane, and footprints that miss the
/// image entirely.
pub fn project(scene: &Scene, cam: &Camera, cfg: &RenderConfig) -> Result<Vec<ProjectedGaussian>> {
    scene.validate()?;
    let mut out: Vec<ProjectedGaussian> = (0..scene.gaussians.len())
        .into_par_iter()
        .filter_map(|i| project_one(scene, cam, i, cfg))
        .collect();
    out.sort_by(depth_order);
    Ok(out)
}

/// Per-tile, depth-ordered lists of projected Gaussians (CSR layout).
#[derive(Clone, Debug, PartialEq)]
pub struct TileBins {
    pub tile_size: usize,
    pub tiles_x: usize,
    pub tiles_y: usize,
    offsets: Vec<usize>,
    entries: Vec<u32>,
}

impl TileBins {
    pub fn tile_count(&self) -> usize {
        self.tiles_x * self.tiles_y
    }

    /// Indices into the projected list, in depth order.
    pub fn tile(&self, tile: usize) -> &[u32] {
        &self.entries[self.offsets[tile]..self.offsets[tile + 1]]
    }

    pub fn tile_of(&self, x: usize, y: usize) -> usize {
        (y / self.tile_size) * self.tiles_x + x / self.tile_size
    }

    pub fn total_entries(&self) -> usize {
        self.entries.len()
    }

    /// Pixel bounds `[x0, y0, x1, y1)` of a tile, clipped to the image.
    pub fn tile_pixels(&self, tile: usize, width: usize, height: usize) -> [usize; 4] {
        let tx = tile % self.tiles_x;
        let ty = tile / self.tiles_x;
        let x0 = tx * self.tile_size;
        let y0 = ty * self.tile_size;
        [
            x0,
            y0,
            (x0 + self.tile_size).min(width),
            (y0 + self.tile_size).min(height),
        ]
    }
}

/// Assigns each projected Gaussian to every tile its footprint rectangle
/// touches. `projected` must already be depth sorted; each tile list keeps
/// that order.
pub fn bin_tiles(projected: &[ProjectedGaussian], width: usize, height: usize, tile_size: usize) -> TileBins {
    let tile_size = tile_size.max(1);
    let tiles_x = width.div_ceil(tile_size);
    let tiles_y = height.div_ceil(tile_size);
    let tile_rect = |pg: &ProjectedGaussian| {
        [
            pg.rect[0] / tile_size,
            pg.rect[1] / tile_size,
            pg.rect[2] / tile_size,
            pg.rect[3] / tile_size,
        ]
    };
    let mut counts = vec![0usize; tiles_x * tiles_y];
    for pg in projected {
        let [tx0, ty0, tx1, ty1] = tile_rect(pg);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                counts[ty * tiles_x + tx] += 1;
            }
        }
    }
    let mut offsets = Vec::with_capacity(counts.len() + 1);
    offsets.push(0);
    for c in &counts {
        offsets.push(offsets.last().unwrap() + c);
    }
    let mut cursor = offsets[..counts.len()].to_vec();
    let mut entries = vec![0u32; *offsets.last().unwrap()];
    for (i, pg) in projected.iter().enumerate() {
        let [tx0, ty0, tx1, ty1] = tile_rect(pg);
        for ty in ty0..=ty1 {
            for tx in tx0..=tx1 {
                let t = ty * tiles_x + tx;
                entries[cursor[t]] = i as u32;
                cursor[t] += 1;
            }
        }
    }
    TileBins {
        tile_size,
        tiles_x,
        tiles_y,
        offsets,
        entries,
    }
}

/// Loss gradient with respect to a projected Gaussian's screen-space inputs.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScreenGrad {
    pub mean: [f64; 2],
    /// With respect to `(conic xx, conic xy, conic yy)`, off-diagonal counted once.
    pub conic: [f64; 3],
    pub opacity: f64,
    pub color: [f64; 3],
}

impl ScreenGrad {
    pub fn add(&mut self, other: &ScreenGrad) {
        for i in 0..2 {
            self.mean[i] += other.mean[i];
        }
        for i in 0..3 {
            self.conic[i] += other.conic[i];
            self.color[i] += other.color[i];
        }
        self.opacity += other.opacity;
    }
}

/// Chains `dL/d alpha` at one pixel into `out`.
#[inline]
pub fn alpha_backward(pg: &ProjectedGaussian, eval: &AlphaEval, d_alpha: f64, out: &mut ScreenGrad) {
    if eval.clamped {
        return;
    }
    let [dx, dy] = eval.delta;
    out.opacity += d_alpha * eval.falloff;
    let g = d_alpha * eval.alpha;
    out.conic[0] += -0.5 * dx * dx * g;
    out.conic[1] += -dx * dy * g;
    out.conic[2] += -0.5 * dy * dy * g;
    out.mean[0] += (pg.conic[0] * dx + pg.conic[1] * dy) * g;
    out.mean[1] += (pg.conic[1] * dx + pg.conic[2] * dy) * g;
}

/// Loss gradient with respect to one Gaussian's stored parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GaussianGrad {
    pub offset: [f64; 3],
    pub rotation: [f64; 4],
    pub log_scale: [f64; 3],
    pub opacity_logit: f64,
    pub color: [f64; 3],
}

impl GaussianGrad {
    pub fn add_scaled(&mut self, other: &GaussianGrad, s: f64) {
        for i in 0..3 {
            self.offset[i] += s * other.offset[i];
            self.log_scale[i] += s * other.log_scale[i];
            self.color[i] += s * other.color[i];
        }
        for i in 0..4 {
            self.rotation[i] += s * other.rotation[i];
        }
        self.opacity_logit += s * other.opacity_logit;
    }
}

/// Per-Gaussian parameter gradients plus what flows into anchor vertices.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGradients {
    pub gaussians: Vec<GaussianGrad>,
    pub vertices: Vec<[f64; 3]>,
}

fn quat_backward(q: [f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let [w, x, y, z] = q;
    let g = |i: usize, j: usize| d_r[(i, j)];
    [
        2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1)),
        2.0 * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2)),
        2.0 * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2)),
        2.0 * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1)
            + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1)),
    ]
}

fn gaussian_backward(scene: &Scene, cam: &Camera, pg: &ProjectedGaussian, sg: &ScreenGrad) -> GaussianGrad {
    let g = &scene.gaussians[pg.source as usize];
    let world = resolve_position(g, &scene.mesh).expect("validated during projection");
    let t = cam.to_camera(&world);
    let m = projection_jacobian(cam, &t);
    let sigma = g.covariance3d();

    // conic -> covariance (b is the shared off-diagonal)
    let [a, b, c] = pg.cov;
    let det = a * c - b * b;
    let det2 = det * det;
    let [ga, gb, gc] = sg.conic;
    let d_a = (-c * c * ga + b * c * gb - b * b * gc) / det2;
    let d_b = (2.0 * b * c * ga - (a * c + b * b) * gb + 2.0 * a * b * gc) / det2;
    let d_c = (-b * b * ga + a * b * gb - a * a * gc) / det2;
    let g_cov = Matrix2::new(d_a, 0.5 * d_b, 0.5 * d_b, d_c);

    // cov2 = M Sigma M^T with M = J W
    let g_sigma = m.transpose() * g_cov * m;
    let g_m = 2.0 * g_cov * m * sigma;
    let g_j = g_m * cam.rotation().transpose();

    let (fx, fy) = (cam.fx, cam.fy);
    let inv_z = 1.0 / t.z;
    let inv_z2 = inv_z * inv_z;
    let inv_z3 = inv_z2 * inv_z;
    let mut d_t = Vector3::new(
        -fx * inv_z2 * g_j[(0, 2)],
        -fy * inv_z2 * g_j[(1, 2)],
        -fx * inv_z2 * g_j[(0, 0)] + 2.0 * fx * t.x * inv_z3 * g_j[(0, 2)] - fy * inv_z2 * g_j[(1, 1)]
            + 2.0 * fy * t.y * inv_z3 * g_j[(1, 2)],
    );
    d_t.x += sg.mean[0] * fx * inv_z;
    d_t.y += sg.mean[1] * fy * inv_z;
    d_t.z += -sg.mean[0] * fx * t.x * inv_z2 - sg.mean[1] * fy * t.y * inv_z2;
    let d_world = cam.rotation().transpose() * d_t;

    // Sigma = R diag(s^2) R^T
    let q = g.unit_quaternion();
    let r = crate::core::quat_to_matrix(q);
    let s = g.scale();
    let s2 = s.component_mul(&s);
    let g_r = 2.0 * g_sigma * r * Matrix3::from_diagonal(&s2);
    let mut log_scale = [0.0; 3];
    for i in 0..3 {
        let col = r.column(i);
        log_scale[i] = 2.0 * s2[i] * (col.transpose() * g_sigma * col)[(0, 0)];
    }
    let d_qhat = quat_backward(q, &g_r);
    let raw = g.rotation.map(|v| v as f64);
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    let dot: f64 = (0..4).map(|i| q[i] * d_qhat[i]).sum();
    let rotation = if norm > 0.0 {
        [0, 1, 2, 3].map(|i| (d_qhat[i] - q[i] * dot) / norm)
    } else {
        [0.0; 4]
    };

    let o = pg.opacity;
    GaussianGrad {
        offset: [d_world.x, d_world.y, d_world.z],
        rotation,
        log_scale,
        opacity_logit: sg.opacity * o * (1.0 - o),
        color: sg.color,
    }
}

/// Reverse pass of [`project`]: screen-space gradients (one per projected
/// Gaussian, same order) to stored Gaussian parameters and anchor vertices.
/// Depth gets no gradient.
pub fn splat_backward(
    scene: &Scene,
    cam: &Camera,
    projected: &[ProjectedGaussian],
    screen: &[ScreenGrad],
) -> Result<SplatGradients> {
    if projected.len() != screen.len() {
        return Err(Error::MissingState(
            "screen-space gradients do not match the projected Gaussians",
        ));
    }
    let per: Vec<GaussianGrad> = projected
        .par_iter()
        .zip(screen.par_iter())
        .map(|(pg, sg)| gaussian_backward(scene, cam, pg, sg))
        .collect();
    let mut out = SplatGradients {
        gaussians: vec![GaussianGrad::default(); scene.gaussians.len()],
        vertices: vec![[0.0; 3]; scene.mesh.vertex_count()],
    };
    for (pg, grad) in projected.iter().zip(&per) {
        out.gaussians[pg.source as usize] = *grad;
        let anchor = scene.gaussians[pg.source as usize].anchor as usize;
        for c in 0..3 {
            out.vertices[anchor][c] += grad.offset[c];
        }
    }
    Ok(out)
}
