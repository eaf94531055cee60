//! First pass of the hybrid pipeline: the textured mesh rendered as an opaque
//! surface (z-buffer, no blending) into per-pixel color, opacity, and depth.
//!
//! Triangles are clipped against the near plane in camera space, then
//! scan-converted at pixel centers with perspective-correct barycentrics.
//! The backward pass differentiates the ray/plane intersection that those
//! barycentrics equal, so vertex gradients cover interior pixels only;
//! coverage changes at silhouettes contribute nothing.

use nalgebra::{Matrix3, Vector2, Vector3};
use rayon::prelude::*;

use crate::core::{Camera, Mesh};
use crate::error::{check_len, Result};

/// Depth stored for pixels no triangle covers.
pub const SENTINEL_FAR: f64 = f64::INFINITY;

const BAND_ROWS: usize = 16;

/// Per-pixel mesh samples.
#[derive(Clone, Debug, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub color: Vec<[f64; 3]>,
    pub opacity: Vec<f64>,
    /// Camera-space z, or [`SENTINEL_FAR`].
    pub depth: Vec<f64>,
    pub triangle: Vec<Option<u32>>,
    /// Weights of the winning triangle's three vertices.
    pub barycentric: Vec<[f64; 3]>,
    pub uv: Vec<[f64; 2]>,
}

impl GBuffer {
    pub fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            color: vec![[0.0; 3]; n],
            opacity: vec![0.0; n],
            depth: vec![SENTINEL_FAR; n],
            triangle: vec![None; n],
            barycentric: vec![[0.0; 3]; n],
            uv: vec![[0.0; 2]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn covered(&self, pixel: usize) -> bool {
        self.triangle[pixel].is_some()
    }
}

/// A near-clipped, projected (sub-)triangle ready for scan conversion.
struct ScreenTri {
    id: u32,
    screen: [Vector2<f64>; 3],
    inv_z: [f64; 3],
    /// Weights of the source triangle's vertices at each corner.
    bary: [[f64; 3]; 3],
    inv_area: f64,
    x_range: (usize, usize),
    y_range: (usize, usize),
}

fn edge(a: &Vector2<f64>, b: &Vector2<f64>, p: &Vector2<f64>) -> f64 {
    (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x)
}

/// Sutherland-Hodgman against `z >= near`. Returns up to four corners.
fn clip_near(corners: [(Vector3<f64>, [f64; 3]); 3], near: f64) -> Vec<(Vector3<f64>, [f64; 3])> {
    if corners.iter().all(|(p, _)| p.z >= near) {
        return corners.to_vec();
    }
    let mut out = Vec::with_capacity(4);
    for k in 0..3 {
        let (a, ba) = corners[k];
        let (b, bb) = corners[(k + 1) % 3];
        let (a_in, b_in) = (a.z >= near, b.z >= near);
        if a_in {
            out.push((a, ba));
        }
        if a_in != b_in {
            let t = (near - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = near;
            let w = [0, 1, 2].map(|i| ba[i] + (bb[i] - ba[i]) * t);
            out.push((p, w));
        }
    }
    out
}

fn pixel_range(lo: f64, hi: f64, count: usize) -> Option<(usize, usize)> {
    // pixel i is sampled at i + 0.5
    let first = (lo - 0.5).ceil().max(0.0);
    let last = (hi - 0.5).floor().min(count as f64 - 1.0);
    (first <= last).then_some((first as usize, last as usize))
}

fn setup(mesh: &Mesh, cam: &Camera, cam_verts: &[Vector3<f64>]) -> Vec<ScreenTri> {
    let mut prims = Vec::new();
    for (id, tri) in mesh.triangles().iter().enumerate() {
        let corners = [0, 1, 2].map(|k| {
            let mut w = [0.0; 3];
            w[k] = 1.0;
            (cam_verts[tri[k] as usize], w)
        });
        let poly = clip_near(corners, cam.near);
        for fan in 1..poly.len().saturating_sub(1) {
            let pick = [poly[0], poly[fan], poly[fan + 1]];
            let screen = pick.map(|(p, _)| Vector2::new(cam.fx * p.x / p.z + cam.cx, cam.fy * p.y / p.z + cam.cy));
            let area = edge(&screen[0], &screen[1], &screen[2]);
            if !area.is_finite() || area.abs() < 1e-12 {
                continue;
            }
            let xs = screen.map(|s| s.x);
            let ys = screen.map(|s| s.y);
            let x_range = pixel_range(
                xs.iter().copied().fold(f64::INFINITY, f64::min),
                xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                cam.width,
            );
            let y_range = pixel_range(
                ys.iter().copied().fold(f64::INFINITY, f64::min),
                ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                cam.height,
            );
            if let (Some(x_range), Some(y_range)) = (x_range, y_range) {
                prims.push(ScreenTri {
                    id: id as u32,
                    screen,
                    inv_z: pick.map(|(p, _)| 1.0 / p.z),
                    bary: pick.map(|(_, w)| w),
                    inv_area: 1.0 / area,
                    x_range,
                    y_range,
                });
            }
        }
    }
    prims
}

/// Z-buffered rasterization of `mesh` seen from `cam`.
///
/// The nearest triangle covering a pixel center wins; at equal depth the
/// lower triangle index wins. Color and opacity are bilinear texture samples
/// at the perspective-correct UV.
pub fn rasterize(mesh: &Mesh, cam: &Camera) -> GBuffer {
    let (width, height) = (cam.width, cam.height);
    let cam_verts: Vec<Vector3<f64>> = (0..mesh.vertex_count())
        .map(|i| cam.to_camera(&mesh.vertex(i)))
        .collect();
    let prims = setup(mesh, cam, &cam_verts);

    let mut gbuf = GBuffer::empty(width, height);
    let band_len = BAND_ROWS * width;
    gbuf.depth
        .par_chunks_mut(band_len)
        .zip(gbuf.triangle.par_chunks_mut(band_len))
        .zip(gbuf.barycentric.par_chunks_mut(band_len))
        .enumerate()
        .for_each(|(band, ((depth, triangle), bary))| {
            let y0 = band * BAND_ROWS;
            let y1 = (y0 + BAND_ROWS).min(height) - 1;
            for prim in &prims {
                if prim.y_range.1 < y0 || prim.y_range.0 > y1 {
                    continue;
                }
                for y in prim.y_range.0.max(y0)..=prim.y_range.1.min(y1) {
                    for x in prim.x_range.0..=prim.x_range.1 {
                        let p = Camera::pixel_center(x, y);
                        let l0 = edge(&prim.screen[1], &prim.screen[2], &p) * prim.inv_area;
                        let l1 = edge(&prim.screen[2], &prim.screen[0], &p) * prim.inv_area;
                        let l2 = edge(&prim.screen[0], &prim.screen[1], &p) * prim.inv_area;
                        if l0 < 0.0 || l1 < 0.0 || l2 < 0.0 {
                            continue;
                        }
                        let w = [l0 * prim.inv_z[0], l1 * prim.inv_z[1], l2 * prim.inv_z[2]];
                        let z = 1.0 / (w[0] + w[1] + w[2]);
                        let local = (y - y0) * width + x;
                        if z < depth[local] {
                            depth[local] = z;
                            triangle[local] = Some(prim.id);
                            bary[local] = [0, 1, 2].map(|i| {
                                z * (w[0] * prim.bary[0][i] + w[1] * prim.bary[1][i] + w[2] * prim.bary[2][i])
                            });
                        }
                    }
                }
            }
        });

    let uvs: Vec<[f64; 2]> = (0..mesh.vertex_count()).map(|i| mesh.vertex_uv(i)).collect();
    let tris = mesh.triangles();
    gbuf.color
        .par_iter_mut()
        .zip(gbuf.opacity.par_iter_mut())
        .zip(gbuf.uv.par_iter_mut())
        .zip(gbuf.triangle.par_iter().zip(gbuf.barycentric.par_iter()))
        .for_each(|(((color, opacity), uv), (tri, bary))| {
            if let Some(t) = tri {
                let t = tris[*t as usize];
                *uv = [0, 1].map(|c| (0..3).map(|k| bary[k] * uvs[t[k] as usize][c]).sum());
                let taps = mesh.color.taps(*uv);
                *color = [0, 1, 2].map(|c| mesh.color.sample_channel(&taps, c));
                *opacity = mesh.opacity.sample_channel(&mesh.opacity.taps(*uv), 0);
            }
        });
    gbuf
}

/// Gradients of a loss with respect to mesh parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct MeshGradients {
    /// Per vertex, world space.
    pub vertices: Vec<[f64; 3]>,
    /// Per texel and channel, same layout as the color texture.
    pub color: Vec<f64>,
    /// Per texel.
    pub opacity: Vec<f64>,
}

impl MeshGradients {
    pub fn zeros(mesh: &Mesh) -> Self {
        Self {
            vertices: vec![[0.0; 3]; mesh.vertex_count()],
            color: vec![0.0; mesh.color.texel_count() * 3],
            opacity: vec![0.0; mesh.opacity.texel_count()],
        }
    }
}

struct PixelGrad {
    tri: [u32; 3],
    d_vert: [[f64; 3]; 3],
    color_taps: crate::core::BilinearTaps,
    opacity_taps: crate::core::BilinearTaps,
    d_color: [f64; 3],
    d_opacity: f64,
}

fn pixel_grad(
    mesh: &Mesh,
    cam: &Camera,
    cam_verts: &[Vector3<f64>],
    gbuf: &GBuffer,
    pixel: usize,
    d_color: [f64; 3],
    d_opacity: f64,
    d_depth: f64,
) -> Option<PixelGrad> {
    let tri = mesh.triangles()[gbuf.triangle[pixel]? as usize];
    let uv = gbuf.uv[pixel];
    let color_taps = mesh.color.taps(uv);
    let opacity_taps = mesh.opacity.taps(uv);

    let mut d_uv = [0.0; 2];
    for k in 0..4 {
        let mut g = d_opacity * mesh.opacity.texel(opacity_taps.texels[k], 0);
        let gu = opacity_taps.d_du[k] * g;
        let gv = opacity_taps.d_dv[k] * g;
        d_uv[0] += gu;
        d_uv[1] += gv;
        g = (0..3)
            .map(|c| d_color[c] * mesh.color.texel(color_taps.texels[k], c))
            .sum();
        d_uv[0] += color_taps.d_du[k] * g;
        d_uv[1] += color_taps.d_dv[k] * g;
    }

    // Barycentrics (1-u-v, u, v) and depth t solve P0 + u e1 + v e2 = t r.
    let uv0 = mesh.vertex_uv(tri[0] as usize);
    let uv1 = mesh.vertex_uv(tri[1] as usize);
    let uv2 = mesh.vertex_uv(tri[2] as usize);
    let g = Vector3::new(
        d_uv[0] * (uv1[0] - uv0[0]) + d_uv[1] * (uv1[1] - uv0[1]),
        d_uv[0] * (uv2[0] - uv0[0]) + d_uv[1] * (uv2[1] - uv0[1]),
        d_depth,
    );
    let p = tri.map(|i| cam_verts[i as usize]);
    let (x, y) = (pixel % gbuf.width, pixel / gbuf.width);
    let ray = cam.ray_direction(&Camera::pixel_center(x, y));
    let m = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], -ray]);
    let mut d_vert = [[0.0; 3]; 3];
    if g != Vector3::zeros() {
        if let Some(m_inv) = m.try_inverse() {
            let lambda = m_inv.transpose() * g;
            let rt = cam.rotation().transpose();
            let w = gbuf.barycentric[pixel];
            for k in 0..3 {
                let d = rt * (-lambda * w[k]);
                d_vert[k] = [d.x, d.y, d.z];
            }
        }
    }
    Some(PixelGrad {
        tri,
        d_vert,
        color_taps,
        opacity_taps,
        d_color,
        d_opacity,
    })
}

/// Reverse pass of [`rasterize`].
///
/// Texture gradients scatter through the bilinear weights; vertex gradients
/// flow through the barycentrics and depth of each covered pixel.
pub fn rasterize_backward(
    mesh: &Mesh,
    cam: &Camera,
    gbuf: &GBuffer,
    d_color: &[[f64; 3]],
    d_opacity: &[f64],
    d_depth: &[f64],
) -> Result<MeshGradients> {
    let n = cam.pixel_count();
    check_len("g-buffer pixels", n, gbuf.len())?;
    check_len("color gradient pixels", n, d_color.len())?;
    check_len("opacity gradient pixels", n, d_opacity.len())?;
    check_len("depth gradient pixels", n, d_depth.len())?;

    let cam_verts: Vec<Vector3<f64>> = (0..mesh.vertex_count())
        .map(|i| cam.to_camera(&mesh.vertex(i)))
        .collect();
    let mut grads = MeshGradients::zeros(mesh);
    let chunk = 64 * gbuf.width.max(1);
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let records: Vec<Option<PixelGrad>> = (start..end)
            .into_par_iter()
            .map(|p| pixel_grad(mesh, cam, &cam_verts, gbuf, p, d_color[p], d_opacity[p], d_depth[p]))
            .collect();
        // ordered scatter keeps the sums bitwise reproducible
        for rec in records.into_iter().flatten() {
            for k in 0..3 {
                let v = &mut grads.vertices[rec.tri[k] as usize];
                for c in 0..3 {
                    v[c] += rec.d_vert[k][c];
                }
            }
            for k in 0..4 {
                let t = rec.color_taps.texels[k];
                for c in 0..3 {
                    grads.color[t * 3 + c] += rec.color_taps.weights[k] * rec.d_color[c];
                }
                grads.opacity[rec.opacity_taps.texels[k]] += rec.opacity_taps.weights[k] * rec.d_opacity;
            }
        }
        start = end;
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Texture;

    fn camera() -> Camera {
        Camera::new(
            Matrix3::identity(),
            Vector3::zeros(),
            (32.0, 32.0),
            (8.0, 8.0),
            (16, 16),
            1.0,
        )
        .unwrap()
    }

    /// Screen-parallel mesh at depth `z` made of the given triangles over a
    /// 2x2 grid spanning [-5, 5]^2 in camera x/y.
    fn quad(z: f32, tris: Vec<[u32; 3]>, color: f32, opacity: f32) -> Mesh {
        let vertices = vec![[-5.0, -5.0, z], [5.0, -5.0, z], [-5.0, 5.0, z], [5.0, 5.0, z]];
        Mesh::new(
            2,
            vertices,
            tris,
            Texture::filled(4, &[color; 3]).unwrap(),
            Texture::filled(4, &[opacity]).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn empty_mesh_covers_nothing() {
        let mesh = quad(10.0, vec![], 0.5, 1.0);
        let g = rasterize(&mesh, &camera());
        assert!(g.opacity.iter().all(|&a| a == 0.0));
        assert!(g.depth.iter().all(|&d| d == SENTINEL_FAR));
        assert!(g.triangle.iter().all(Option::is_none));
    }

    #[test]
    fn constant_textures_interpolate_exactly() {
        let mesh = quad(10.0, vec![[0, 2, 1], [1, 2, 3]], 0.5, 1.0);
        let g = rasterize(&mesh, &camera());
        let q = 8 * 16 + 8;
        assert!(g.covered(q));
        assert_eq!(g.color[q], [0.5; 3]);
        assert_eq!(g.opacity[q], 1.0);
        assert!((g.depth[q] - 10.0).abs() < 1e-12);
        let b = g.barycentric[q];
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearer_triangle_wins() {
        let mut vertices = vec![[0.0f32; 3]; 9];
        vertices[..3].copy_from_slice(&[[-5.0, -5.0, 10.0], [5.0, -5.0, 10.0], [0.0, 5.0, 10.0]]);
        vertices[3..6].copy_from_slice(&[[-5.0, -5.0, 5.0], [5.0, -5.0, 5.0], [0.0, 5.0, 5.0]]);
        let make = |tris: Vec<[u32; 3]>| {
            Mesh::new(
                3,
                vertices.clone(),
                tris,
                Texture::filled(2, &[0.5; 3]).unwrap(),
                Texture::filled(2, &[1.0]).unwrap(),
            )
            .unwrap()
        };
        let q = 8 * 16 + 8;
        for (tris, winner) in [(vec![[0, 1, 2], [3, 4, 5]], 1), (vec![[3, 4, 5], [0, 1, 2]], 0)] {
            let g = rasterize(&make(tris), &camera());
            assert_eq!(g.triangle[q], Some(winner));
            assert!((g.depth[q] - 5.0).abs() < 1e-12);
        }
        // equal depth: lower index wins
        let g = rasterize(&make(vec![[3, 4, 5], [5, 3, 4]]), &camera());
        assert_eq!(g.triangle[q], Some(0));
    }

    #[test]
    fn zero_gradient_in_zero_out() {
        let mesh = quad(10.0, vec![[0, 2, 1], [1, 2, 3]], 0.5, 0.7);
        let cam = camera();
        let g = rasterize(&mesh, &cam);
        let n = cam.pixel_count();
        let grads = rasterize_backward(&mesh, &cam, &g, &vec![[0.0; 3]; n], &vec![0.0; n], &vec![0.0; n]).unwrap();
        assert!(grads.vertices.iter().flatten().all(|&v| v == 0.0));
        assert!(grads.color.iter().chain(&grads.opacity).all(|&v| v == 0.0));
    }

    #[test]
    fn texel_center_gradient_passes_through() {
        // 2x2 grid with 2x2 texture: vertex UVs sit exactly on texel centers.
        let mesh = quad(10.0, vec![[0, 2, 1], [1, 2, 3]], 0.5, 0.7);
        let cam = camera();
        let mut g = rasterize(&mesh, &cam);
        let n = cam.pixel_count();
        let q = 8 * 16 + 8;
        // force the sample onto texel (1, 2) of the 4x4 texture
        g.uv[q] = [1.5 / 4.0, 2.5 / 4.0];
        let mut d_color = vec![[0.0; 3]; n];
        d_color[q] = [0.25, -1.0, 2.0];
        let mut d_opacity = vec![0.0; n];
        d_opacity[q] = 0.5;
        let grads = rasterize_backward(&mesh, &cam, &g, &d_color, &d_opacity, &vec![0.0; n]).unwrap();
        let texel = 2 * 4 + 1;
        assert_eq!(&grads.color[texel * 3..texel * 3 + 3], &[0.25, -1.0, 2.0]);
        assert_eq!(grads.opacity[texel], 0.5);
        assert_eq!(grads.color.iter().filter(|&&v| v != 0.0).count(), 3);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mesh = quad(10.0, vec![[0, 2, 1]], 0.5, 1.0);
        let cam = camera();
        let g = rasterize(&mesh, &cam);
        let err = rasterize_backward(&mesh, &cam, &g, &[[0.0; 3]; 3], &[0.0; 256], &[0.0; 256]);
        assert!(matches!(err, Err(crate::Error::Dimension { .. })));
    }

    #[test]
    fn near_clipped_triangle_keeps_depth_above_near() {
        let color = Texture::filled(2, &[0.5; 3]).unwrap();
        let opacity = Texture::filled(2, &[1.0]).unwrap();
        let vertices = vec![[-3.0, -3.0, -4.0], [3.0, -3.0, 6.0], [0.0, 4.0, 6.0], [0.0; 3]];
        let mesh = Mesh::new(2, vertices, vec![[0, 1, 2]], color, opacity).unwrap();
        let g = rasterize(&mesh, &camera());
        assert!(g.triangle.iter().any(Option::is_some));
        for p in 0..g.len() {
            if g.covered(p) {
                assert!(g.depth[p] >= 1.0 - 1e-9 && g.depth[p] <= 6.0 + 1e-9);
                let s: f64 = g.barycentric[p].iter().sum();
                assert!((s - 1.0).abs() < 1e-9);
                assert!(g.barycentric[p].iter().all(|&b| b >= -1e-12));
            }
        }
    }
}
