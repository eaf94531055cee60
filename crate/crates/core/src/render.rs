//! The full two-pass pipeline: rasterize the mesh, splat the Gaussians,
//! composite, and the matching reverse pass down to scene parameters.

use crate::compositor::{composite_image, composite_image_backward, CompositeState, MeshSample};
use crate::config::RenderConfig;
use crate::core::{Camera, Image, Scene};
use crate::error::{check_len, Error, Result};
use crate::mesh_raster::{rasterize, rasterize_backward, GBuffer};
use crate::splat::{bin_tiles, project, splat_backward, GaussianGrad, ProjectedGaussian, TileBins};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RenderMode {
    /// Semi-transparent mesh composited inside the Gaussian stream.
    Hybrid,
    /// Same, but every covered pixel's mesh opacity is forced to 1.
    OpaqueMesh,
    /// Gaussians over the background; the mesh is ignored.
    GaussianOnly,
    /// Mesh over the background; Gaussians are ignored.
    MeshOnly,
}

impl RenderMode {
    fn uses_mesh(self) -> bool {
        self != RenderMode::GaussianOnly
    }

    fn uses_gaussians(self) -> bool {
        self != RenderMode::MeshOnly
    }
}

/// A rendered view plus what the reverse pass needs.
#[derive(Clone, Debug)]
pub struct Frame {
    pub image: Image,
    pub mode: RenderMode,
    pub gbuffer: Option<GBuffer>,
    pub projected: Vec<ProjectedGaussian>,
    pub bins: TileBins,
    pub mesh_samples: Option<Vec<Option<MeshSample>>>,
    pub state: CompositeState,
    pub config: RenderConfig,
}

fn mesh_samples(gbuf: &GBuffer, opaque: bool) -> Vec<Option<MeshSample>> {
    (0..gbuf.len())
        .map(|p| {
            gbuf.triangle[p].map(|_| MeshSample {
                depth: gbuf.depth[p],
                color: gbuf.color[p],
                alpha: if opaque { 1.0 } else { gbuf.opacity[p] },
            })
        })
        .collect()
}

pub fn render(scene: &Scene, cam: &Camera, mode: RenderMode, cfg: &RenderConfig) -> Result<Frame> {
    scene.validate()?;
    let gbuffer = mode.uses_mesh().then(|| rasterize(&scene.mesh, cam));
    let samples = gbuffer
        .as_ref()
        .map(|g| mesh_samples(g, mode == RenderMode::OpaqueMesh));
    let projected = if mode.uses_gaussians() {
        project(scene, cam, cfg)?
    } else {
        Vec::new()
    };
    let bins = bin_tiles(&projected, cam.width, cam.height, cfg.tile_size);
    let (image, state) = composite_image(
        &projected,
        &bins,
        samples.as_deref(),
        scene.background,
        cam.width,
        cam.height,
        cfg,
    )?;
    Ok(Frame {
        image,
        mode,
        gbuffer,
        projected,
        bins,
        mesh_samples: samples,
        state,
        config: *cfg,
    })
}

/// Gradients of a scalar loss with respect to every scene parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneGradients {
    /// Mesh vertex positions, including what flows in through Gaussian anchors.
    pub vertices: Vec<[f64; 3]>,
    pub color_texture: Vec<f64>,
    pub opacity_texture: Vec<f64>,
    pub gaussians: Vec<GaussianGrad>,
    pub background: [f64; 3],
}

impl SceneGradients {
    pub fn zeros(scene: &Scene) -> Self {
        Self {
            vertices: vec![[0.0; 3]; scene.mesh.vertex_count()],
            color_texture: vec![0.0; scene.mesh.color.data().len()],
            opacity_texture: vec![0.0; scene.mesh.opacity.data().len()],
            gaussians: vec![GaussianGrad::default(); scene.gaussians.len()],
            background: [0.0; 3],
        }
    }

    /// `self += s * other`, in a fixed order.
    pub fn add_scaled(&mut self, other: &SceneGradients, s: f64) {
        for (a, b) in self.vertices.iter_mut().zip(&other.vertices) {
            for c in 0..3 {
                a[c] += s * b[c];
            }
        }
        for (a, b) in self.color_texture.iter_mut().zip(&other.color_texture) {
            *a += s * b;
        }
        for (a, b) in self.opacity_texture.iter_mut().zip(&other.opacity_texture) {
            *a += s * b;
        }
        for (a, b) in self.gaussians.iter_mut().zip(&other.gaussians) {
            a.add_scaled(b, s);
        }
        for c in 0..3 {
            self.background[c] += s * other.background[c];
        }
    }
}

/// Reverse pass of [`render`] for `dL/d(image)`.
pub fn render_backward(scene: &Scene, cam: &Camera, frame: &Frame, d_image: &[[f64; 3]]) -> Result<SceneGradients> {
    check_len("image gradient", cam.pixel_count(), d_image.len())?;
    if frame.image.width() != cam.width || frame.image.height() != cam.height {
        return Err(Error::MissingState("frame was rendered with a different camera"));
    }
    if frame.mode.uses_mesh() && (frame.gbuffer.is_none() || frame.mesh_samples.is_none()) {
        return Err(Error::MissingState("frame is missing its mesh layer"));
    }
    let comp = composite_image_backward(
        &frame.projected,
        &frame.bins,
        frame.mesh_samples.as_deref(),
        scene.background,
        &frame.config,
        &frame.state,
        d_image,
    )?;
    let mut out = SceneGradients::zeros(scene);
    out.background = comp.background;
    if let Some(gbuf) = &frame.gbuffer {
        let mut d_alpha = comp.mesh_alpha;
        if frame.mode == RenderMode::OpaqueMesh {
            d_alpha.iter_mut().for_each(|v| *v = 0.0);
        }
        let zeros = vec![0.0; d_alpha.len()];
        let mg = rasterize_backward(&scene.mesh, cam, gbuf, &comp.mesh_color, &d_alpha, &zeros)?;
        out.vertices = mg.vertices;
        out.color_texture = mg.color;
        out.opacity_texture = mg.opacity;
    }
    if frame.mode.uses_gaussians() {
        let sg = splat_backward(scene, cam, &frame.projected, &comp.screen)?;
        out.gaussians = sg.gaussians;
        for (v, g) in out.vertices.iter_mut().zip(&sg.vertices) {
            for c in 0..3 {
                v[c] += g[c];
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::core::{Gaussian, Mesh};
    use nalgebra::{Matrix3, Vector3};

    fn camera() -> Camera {
        Camera::new(
            Matrix3::identity(),
            Vector3::zeros(),
            (40.0, 40.0),
            (16.0, 16.0),
            (32, 32),
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn empty_scene_renders_background() {
        let mesh = Mesh::new(
            2,
            vec![[0.0; 3]; 4],
            vec![],
            crate::core::Texture::filled(2, &[0.0; 3]).unwrap(),
            crate::core::Texture::filled(2, &[0.0]).unwrap(),
        )
        .unwrap();
        let scene = Scene::new(mesh, vec![], [0.1, 0.2, 0.3]).unwrap();
        for mode in [
            RenderMode::Hybrid,
            RenderMode::OpaqueMesh,
            RenderMode::GaussianOnly,
            RenderMode::MeshOnly,
        ] {
            let f = render(&scene, &camera(), mode, &RenderConfig::default()).unwrap();
            assert!(f.image.pixels().iter().all(|p| *p == [0.1, 0.2, 0.3]));
        }
    }

    #[test]
    fn transparent_gaussians_leave_mesh_over_background() {
        let mesh = Mesh::flat_grid(3, 10.0, 20.0, 4, [0.8, 0.4, 0.2], 0.6).unwrap();
        let g = Gaussian::new(4, [0.0, 0.0, -5.0], [1.0, 0.0, 0.0, 0.0], [1.0; 3], 0.0, [1.0; 3]);
        let bg = [0.0, 0.0, 1.0];
        let scene = Scene::new(mesh, vec![g], bg).unwrap();
        let f = render(&scene, &camera(), RenderMode::Hybrid, &RenderConfig::default()).unwrap();
        let gb = f.gbuffer.as_ref().unwrap();
        for p in 0..gb.len() {
            let a = gb.opacity[p];
            let expect: Vec<f64> = (0..3).map(|c| gb.color[p][c] * a + (1.0 - a) * bg[c]).collect();
            for c in 0..3 {
                assert!((f.image.pixels()[p][c] - expect[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn backward_rejects_mismatched_gradient() {
        let mesh = Mesh::flat_grid(2, 10.0, 20.0, 2, [0.5; 3], 1.0).unwrap();
        let scene = Scene::new(mesh, vec![], [0.0; 3]).unwrap();
        let f = render(&scene, &camera(), RenderMode::Hybrid, &RenderConfig::default()).unwrap();
        assert!(render_backward(&scene, &camera(), &f, &[[0.0; 3]; 3]).is_err());
    }
}
