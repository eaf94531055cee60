//! Brute-force references for verification. Nothing here is tiled, culled
//! by footprint, or shared with the main pipeline's arithmetic: Gaussians are
//! evaluated at every pixel, the mesh is ray cast triangle by triangle, and
//! the merged fragment list is composited with the plain over operator.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use nalgebra::{Matrix2, Matrix3, Quaternion, UnitQuaternion, Vector2, Vector3};
use rayon::prelude::*;

use crate::config::RenderConfig;
use crate::core::{Camera, Image, Scene, Texture};
use crate::error::{Error, Result};
use crate::render::{render, render_backward, Frame, RenderMode, SceneGradients};

pub const MAX_PIXELS_PER_SIDE: usize = 128;
pub const MAX_GAUSSIANS: usize = 500;
pub const MAX_TRIANGLES: usize = 1000;

/// A Gaussian as seen by the oracle camera.
#[derive(Clone, Copy, Debug)]
pub struct ReferenceSplat {
    pub index: usize,
    pub depth: f64,
    pub mean: Vector2<f64>,
    pub inv_cov: Matrix2<f64>,
    pub opacity: f64,
    pub color: [f64; 3],
}

/// Projects Gaussian `index`, or `None` when its center is closer than the
/// near plane.
pub fn reference_splat(scene: &Scene, cam: &Camera, index: usize, low_pass: f64) -> Option<ReferenceSplat> {
    let g = &scene.gaussians[index];
    let anchor = scene.mesh.vertices[g.anchor as usize];
    let world = Vector3::from_fn(|i, _| anchor[i] as f64 + g.offset[i] as f64);
    let p = cam.rotation() * world + cam.translation();
    if p.z < cam.near {
        return None;
    }
    let q = g.rotation.map(|v| v as f64);
    let rot = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    let r = rot.to_rotation_matrix().into_inner();
    let s = Matrix3::from_diagonal(&Vector3::from_fn(|i, _| (g.log_scale[i] as f64).exp()));
    let m = r * s;
    let sigma = m * m.transpose();
    let (fx, fy) = (cam.fx, cam.fy);
    let j = nalgebra::Matrix2x3::new(
        fx / p.z,
        0.0,
        -fx * p.x / (p.z * p.z),
        0.0,
        fy / p.z,
        -fy * p.y / (p.z * p.z),
    );
    let jw = j * cam.rotation();
    let cov = jw * sigma * jw.transpose() + Matrix2::identity() * low_pass;
    let inv_cov = cov.try_inverse()?;
    Some(ReferenceSplat {
        index,
        depth: p.z,
        mean: Vector2::new(fx * p.x / p.z + cam.cx, fy * p.y / p.z + cam.cy),
        inv_cov,
        opacity: 1.0 / (1.0 + (-(g.opacity_logit as f64)).exp()),
        color: g.color.map(|c| c as f64),
    })
}

/// Alpha of a reference splat at a pixel, honoring the clamp and skip in
/// `cfg`. Skipped fragments return 0.
pub fn reference_alpha(s: &ReferenceSplat, pixel: Vector2<f64>, cfg: &RenderConfig) -> f64 {
    let d = pixel - s.mean;
    let mut a = s.opacity * (-0.5 * (d.transpose() * s.inv_cov * d)[(0, 0)]).exp();
    if let Some(c) = cfg.alpha_clamp {
        a = a.min(c);
    }
    if a < cfg.min_alpha {
        0.0
    } else {
        a
    }
}

/// Nearest ray hit: `(triangle, depth, u, v)` with barycentrics of vertices 1 and 2.
fn ray_cast(
    cam_verts: &[Vector3<f64>],
    triangles: &[[u32; 3]],
    dir: &Vector3<f64>,
    near: f64,
) -> Option<(usize, f64, f64, f64)> {
    let mut best: Option<(usize, f64, f64, f64)> = None;
    for (ti, t) in triangles.iter().enumerate() {
        let (p0, p1, p2) = (
            cam_verts[t[0] as usize],
            cam_verts[t[1] as usize],
            cam_verts[t[2] as usize],
        );
        let e1 = p1 - p0;
        let e2 = p2 - p0;
        let h = dir.cross(&e2);
        let det = e1.dot(&h);
        if det.abs() < 1e-14 {
            continue;
        }
        let inv = 1.0 / det;
        let u = p0.dot(&h) * -inv;
        let qv = (-p0).cross(&e1);
        let v = dir.dot(&qv) * inv;
        if u < 0.0 || v < 0.0 || u + v > 1.0 {
            continue;
        }
        let dist = e2.dot(&qv) * inv;
        let depth = dist * dir.z;
        if !(depth >= near) {
            continue;
        }
        if best.is_none_or(|b| depth < b.1) {
            best = Some((ti, depth, u, v));
        }
    }
    best
}

fn bilinear(tex: &Texture, uv: [f64; 2], c: usize) -> f64 {
    let n = tex.size() as isize;
    let fetch = |i: isize, j: isize| tex.texel((j.clamp(0, n - 1) * n + i.clamp(0, n - 1)) as usize, c);
    let x = uv[0] * n as f64 - 0.5;
    let y = uv[1] * n as f64 - 0.5;
    let (i, j) = (x.floor() as isize, y.floor() as isize);
    let (a, b) = (x - x.floor(), y - y.floor());
    let top = fetch(i, j) + a * (fetch(i + 1, j) - fetch(i, j));
    let bottom = fetch(i, j + 1) + a * (fetch(i + 1, j + 1) - fetch(i, j + 1));
    top + b * (bottom - top)
}

/// The mesh as seen through one pixel: `(depth, color, opacity)`.
fn reference_mesh_sample(
    scene: &Scene,
    cam: &Camera,
    cam_verts: &[Vector3<f64>],
    dir: &Vector3<f64>,
) -> Option<(f64, [f64; 3], f64)> {
    let mesh = &scene.mesh;
    let (ti, depth, u, v) = ray_cast(cam_verts, mesh.triangles(), dir, cam.near)?;
    let t = mesh.triangles()[ti];
    let w = [1.0 - u - v, u, v];
    let mut uv = [0.0; 2];
    for k in 0..3 {
        let tuv = mesh.vertex_uv(t[k] as usize);
        uv[0] += w[k] * tuv[0];
        uv[1] += w[k] * tuv[1];
    }
    let color = [0, 1, 2].map(|c| bilinear(&mesh.color, uv, c));
    Some((depth, color, bilinear(&mesh.opacity, uv, 0)))
}

fn check_limits(scene: &Scene, cam: &Camera) -> Result<()> {
    if cam.width > MAX_PIXELS_PER_SIDE || cam.height > MAX_PIXELS_PER_SIDE {
        return Err(Error::OverLimit(format!("{}x{} image", cam.width, cam.height)));
    }
    if scene.gaussians.len() > MAX_GAUSSIANS {
        return Err(Error::OverLimit(format!("{} gaussians", scene.gaussians.len())));
    }
    if scene.mesh.triangles().len() > MAX_TRIANGLES {
        return Err(Error::OverLimit(format!("{} triangles", scene.mesh.triangles().len())));
    }
    Ok(())
}

/// Renders by evaluating every Gaussian at every pixel and ray casting the
/// mesh, then compositing the merged list front to back. Early termination
/// is never applied; the clamp and skip in `cfg` are.
pub fn reference_render(scene: &Scene, cam: &Camera, mode: RenderMode, cfg: &RenderConfig) -> Result<Image> {
    check_limits(scene, cam)?;
    scene.validate()?;
    let use_mesh = mode != RenderMode::GaussianOnly;
    let mut splats: Vec<ReferenceSplat> = if mode == RenderMode::MeshOnly {
        Vec::new()
    } else {
        (0..scene.gaussians.len())
            .filter_map(|i| reference_splat(scene, cam, i, cfg.low_pass))
            .collect()
    };
    splats.sort_by(|a, b| a.depth.partial_cmp(&b.depth).unwrap().then(a.index.cmp(&b.index)));
    let cam_verts: Vec<Vector3<f64>> = (0..scene.mesh.vertex_count())
        .map(|i| cam.to_camera(&scene.mesh.vertex(i)))
        .collect();
    let rows: Vec<Vec<[f64; 3]>> = (0..cam.height)
        .into_par_iter()
        .map(|y| {
            (0..cam.width)
                .map(|x| {
                    let pixel = Vector2::new(x as f64 + 0.5, y as f64 + 0.5);
                    let dir = Vector3::new((pixel.x - cam.cx) / cam.fx, (pixel.y - cam.cy) / cam.fy, 1.0);
                    let mesh = if use_mesh {
                        reference_mesh_sample(scene, cam, &cam_verts, &dir)
                    } else {
                        None
                    };
                    // merged list: (color, alpha); mesh goes before any Gaussian at equal depth
                    let mut list: Vec<([f64; 3], f64)> = Vec::with_capacity(splats.len() + 1);
                    let mut mesh_pending = mesh;
                    for s in &splats {
                        if let Some((d, c, a)) = mesh_pending {
                            if s.depth >= d {
                                let a = if mode == RenderMode::OpaqueMesh { 1.0 } else { a };
                                list.push((c, a));
                                mesh_pending = None;
                            }
                        }
                        let a = reference_alpha(s, pixel, cfg);
                        if a > 0.0 {
                            list.push((s.color, a));
                        }
                    }
                    if let Some((_, c, a)) = mesh_pending {
                        let a = if mode == RenderMode::OpaqueMesh { 1.0 } else { a };
                        list.push((c, a));
                    }
                    let mut out = [0.0; 3];
                    let mut t = 1.0;
                    for (c, a) in list {
                        for k in 0..3 {
                            out[k] += t * a * c[k];
                        }
                        t *= 1.0 - a;
                    }
                    for k in 0..3 {
                        out[k] += t * scene.background[k];
                    }
                    out
                })
                .collect()
        })
        .collect();
    Image::from_pixels(cam.width, cam.height, rows.concat())
}

/// Central differences `(f(x + h) - f(x - h)) / 2h` per coordinate. `h` is
/// either one step for every coordinate or one per coordinate.
pub fn finite_diff_grad<F>(mut f: F, params: &[f64], h: &[f64]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if h.len() != 1 && h.len() != params.len() {
        return Err(Error::Dimension {
            what: "finite difference steps",
            expected: params.len(),
            found: h.len(),
        });
    }
    let mut x = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let step = if h.len() == 1 { h[0] } else { h[i] };
        x[i] = params[i] + step;
        let plus = f(&x);
        x[i] = params[i] - step;
        let minus = f(&x);
        x[i] = params[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        out.push((plus - minus) / (2.0 * step));
    }
    Ok(out)
}

/// Parameter groups reported separately by gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    Vertex,
    ColorTexture,
    OpacityTexture,
    Offset,
    Rotation,
    LogScale,
    OpacityLogit,
    Color,
    Background,
}

/// One scalar scene parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRef {
    Vertex(usize, usize),
    /// Flat index into the color texture data.
    ColorTexel(usize),
    OpacityTexel(usize),
    Offset(usize, usize),
    Rotation(usize, usize),
    LogScale(usize, usize),
    OpacityLogit(usize),
    Color(usize, usize),
    Background(usize),
}

impl ParamRef {
    pub fn class(&self) -> ParamClass {
        match self {
            ParamRef::Vertex(..) => ParamClass::Vertex,
            ParamRef::ColorTexel(_) => ParamClass::ColorTexture,
            ParamRef::OpacityTexel(_) => ParamClass::OpacityTexture,
            ParamRef::Offset(..) => ParamClass::Offset,
            ParamRef::Rotation(..) => ParamClass::Rotation,
            ParamRef::LogScale(..) => ParamClass::LogScale,
            ParamRef::OpacityLogit(_) => ParamClass::OpacityLogit,
            ParamRef::Color(..) => ParamClass::Color,
            ParamRef::Background(_) => ParamClass::Background,
        }
    }

    /// Central-difference step, in the parameter's own units.
    pub fn default_step(&self) -> f64 {
        match self.class() {
            ParamClass::Vertex | ParamClass::Offset => 1e-4,
            _ => 1e-3,
        }
    }

    pub fn get(&self, scene: &Scene) -> f64 {
        let g = &scene.gaussians;
        match *self {
            ParamRef::Vertex(i, c) => scene.mesh.vertices[i][c] as f64,
            ParamRef::ColorTexel(i) => scene.mesh.color.data()[i] as f64,
            ParamRef::OpacityTexel(i) => scene.mesh.opacity.data()[i] as f64,
            ParamRef::Offset(i, c) => g[i].offset[c] as f64,
            ParamRef::Rotation(i, c) => g[i].rotation[c] as f64,
            ParamRef::LogScale(i, c) => g[i].log_scale[c] as f64,
            ParamRef::OpacityLogit(i) => g[i].opacity_logit as f64,
            ParamRef::Color(i, c) => g[i].color[c] as f64,
            ParamRef::Background(c) => scene.background[c],
        }
    }

    /// Stores `value` (rounded to the parameter's storage precision) and
    /// returns what was actually stored.
    pub fn set(&self, scene: &mut Scene, value: f64) -> f64 {
        let v = value as f32;
        let g = &mut scene.gaussians;
        match *self {
            ParamRef::Vertex(i, c) => scene.mesh.vertices[i][c] = v,
            ParamRef::ColorTexel(i) => scene.mesh.color.data_mut()[i] = v,
            ParamRef::OpacityTexel(i) => scene.mesh.opacity.data_mut()[i] = v,
            ParamRef::Offset(i, c) => g[i].offset[c] = v,
            ParamRef::Rotation(i, c) => g[i].rotation[c] = v,
            ParamRef::LogScale(i, c) => g[i].log_scale[c] = v,
            ParamRef::OpacityLogit(i) => g[i].opacity_logit = v,
            ParamRef::Color(i, c) => g[i].color[c] = v,
            ParamRef::Background(c) => {
                scene.background[c] = value;
                return value;
            }
        }
        v as f64
    }

    pub fn analytic(&self, grads: &SceneGradients) -> f64 {
        let g = &grads.gaussians;
        match *self {
            ParamRef::Vertex(i, c) => grads.vertices[i][c],
            ParamRef::ColorTexel(i) => grads.color_texture[i],
            ParamRef::OpacityTexel(i) => grads.opacity_texture[i],
            ParamRef::Offset(i, c) => g[i].offset[c],
            ParamRef::Rotation(i, c) => g[i].rotation[c],
            ParamRef::LogScale(i, c) => g[i].log_scale[c],
            ParamRef::OpacityLogit(i) => g[i].opacity_logit,
            ParamRef::Color(i, c) => g[i].color[c],
            ParamRef::Background(c) => grads.background[c],
        }
    }
}

/// Every scalar parameter of a scene.
pub fn all_param_refs(scene: &Scene) -> Vec<ParamRef> {
    let mut out = Vec::new();
    for i in 0..scene.mesh.vertex_count() {
        out.extend((0..3).map(|c| ParamRef::Vertex(i, c)));
    }
    out.extend((0..scene.mesh.color.data().len()).map(ParamRef::ColorTexel));
    out.extend((0..scene.mesh.opacity.data().len()).map(ParamRef::OpacityTexel));
    for i in 0..scene.gaussians.len() {
        out.extend((0..3).map(|c| ParamRef::Offset(i, c)));
        out.extend((0..4).map(|c| ParamRef::Rotation(i, c)));
        out.extend((0..3).map(|c| ParamRef::LogScale(i, c)));
        out.push(ParamRef::OpacityLogit(i));
        out.extend((0..3).map(|c| ParamRef::Color(i, c)));
    }
    out.extend((0..3).map(ParamRef::Background));
    out
}

/// Hash of every discrete choice a render makes that the analytic gradient
/// treats as fixed: winning triangles, texel cells, the global Gaussian
/// order, and which Gaussians sit in front of the mesh at each pixel.
pub fn configuration_signature(scene: &Scene, frame: &Frame) -> u64 {
    let mut h = DefaultHasher::new();
    frame.projected.iter().for_each(|p| p.source.hash(&mut h));
    if let Some(gb) = &frame.gbuffer {
        gb.triangle.hash(&mut h);
        for p in 0..gb.len() {
            if gb.triangle[p].is_some() {
                scene.mesh.color.taps(gb.uv[p]).texels.hash(&mut h);
                frame
                    .projected
                    .iter()
                    .filter(|g| g.depth < gb.depth[p])
                    .count()
                    .hash(&mut h);
            }
        }
    }
    h.finish()
}

/// Analytic against numerical gradients for one parameter class.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub class: ParamClass,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Coordinates whose perturbation changed the render configuration.
    pub skipped: usize,
}

impl GradCheck {
    /// `|a - n| / max(|a|, |n|, floor)` over the class as a vector.
    pub fn relative_error(&self, floor: f64) -> f64 {
        let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
        let diff = norm(&mut self.analytic.iter().zip(&self.numeric).map(|(a, n)| a - n));
        let a = norm(&mut self.analytic.iter().copied());
        let n = norm(&mut self.numeric.iter().copied());
        diff / a.max(n).max(floor)
    }
}

/// Compares [`render_backward`] with central differences of the linear loss
/// `sum_p weights[p] . C_p` for the listed parameters, grouped by class.
pub fn check_gradients(
    scene: &Scene,
    cam: &Camera,
    mode: RenderMode,
    cfg: &RenderConfig,
    weights: &[[f64; 3]],
    refs: &[ParamRef],
) -> Result<Vec<GradCheck>> {
    let loss = |s: &Scene| -> Result<(f64, u64)> {
        let f = render(s, cam, mode, cfg)?;
        let l = f
            .image
            .pixels()
            .iter()
            .zip(weights)
            .map(|(c, w)| c[0] * w[0] + c[1] * w[1] + c[2] * w[2])
            .sum::<f64>();
        Ok((l, configuration_signature(s, &f)))
    };
    let frame = render(scene, cam, mode, cfg)?;
    let base_sig = configuration_signature(scene, &frame);
    let grads = render_backward(scene, cam, &frame, weights)?;
    let mut checks: Vec<GradCheck> = Vec::new();
    let mut work = scene.clone();
    for r in refs {
        let x = r.get(scene);
        let h = r.default_step();
        let hi = r.set(&mut work, x + h);
        let (lp, sp) = loss(&work)?;
        let lo = r.set(&mut work, x - h);
        let (lm, sm) = loss(&work)?;
        r.set(&mut work, x);
        if !lp.is_finite() || !lm.is_finite() {
            return Err(Error::NonFinite(format!("loss while perturbing {r:?}")));
        }
        let class = r.class();
        let idx = match checks.iter().position(|c| c.class == class) {
            Some(i) => i,
            None => {
                checks.push(GradCheck {
                    class,
                    analytic: Vec::new(),
                    numeric: Vec::new(),
                    skipped: 0,
                });
                checks.len() - 1
            }
        };
        let entry = &mut checks[idx];
        if sp != base_sig || sm != base_sig {
            entry.skipped += 1;
            continue;
        }
        entry.analytic.push(r.analytic(&grads));
        entry.numeric.push((lp - lm) / (hi - lo));
    }
    checks.sort_by_key(|c| c.class);
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::Mesh;

    #[test]
    fn quadratic_gradient() {
        let g = finite_diff_grad(|x| x[0] * x[0] + x[1] * x[1], &[1.0, 2.0], &[1e-3]).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6 && (g[1] - 4.0).abs() < 1e-6);
    }

    #[test]
    fn constant_gradient_is_zero() {
        let g = finite_diff_grad(|_| 3.0, &[1.0, 2.0, 3.0], &[1e-3]).unwrap();
        assert_eq!(g, vec![0.0; 3]);
    }

    #[test]
    fn non_finite_loss_is_an_error() {
        assert!(finite_diff_grad(|x| 1.0 / (x[0] - x[0]), &[1.0], &[1e-3]).is_err());
    }

    fn camera(size: usize) -> Camera {
        let c = size as f64 / 2.0;
        Camera::new(
            Matrix3::identity(),
            Vector3::zeros(),
            (size as f64, size as f64),
            (c, c),
            (size, size),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn empty_scene_is_background() {
        let mesh = Mesh::new(
            1,
            vec![[0.0; 3]],
            vec![],
            Texture::filled(1, &[0.0; 3]).unwrap(),
            Texture::filled(1, &[0.0]).unwrap(),
        )
        .unwrap();
        let scene = Scene::new(mesh, vec![], [0.3, 0.2, 0.1]).unwrap();
        let img = reference_render(&scene, &camera(16), RenderMode::Hybrid, &RenderConfig::exact()).unwrap();
        assert!(img.pixels().iter().all(|p| *p == [0.3, 0.2, 0.1]));
    }

    #[test]
    fn opaque_quad_is_flat_rectangle() {
        let mesh = Mesh::flat_grid(2, 8.0, 16.0, 2, [0.25, 0.5, 0.75], 1.0).unwrap();
        let scene = Scene::new(mesh, vec![], [0.0; 3]).unwrap();
        let img = reference_render(&scene, &camera(16), RenderMode::Hybrid, &RenderConfig::exact()).unwrap();
        // the quad spans x, y in [-4, 4] at z 16: pixels 4..12
        for y in 0..16 {
            for x in 0..16 {
                let inside = (4..12).contains(&x) && (4..12).contains(&y);
                let expect = if inside { [0.25, 0.5, 0.75] } else { [0.0; 3] };
                let got = img.get(x, y);
                for c in 0..3 {
                    assert!((got[c] - expect[c]).abs() < 1e-7, "{x},{y}");
                }
            }
        }
    }

    #[test]
    fn refuses_large_inputs() {
        let mesh = Mesh::flat_grid(2, 8.0, 16.0, 2, [0.5; 3], 1.0).unwrap();
        let scene = Scene::new(mesh, vec![], [0.0; 3]).unwrap();
        assert!(matches!(
            reference_render(&scene, &camera(129), RenderMode::Hybrid, &RenderConfig::exact()),
            Err(Error::OverLimit(_))
        ));
    }
}
