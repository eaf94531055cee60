//! Domain types shared by every stage: cameras, Gaussians, the UV-grid mesh,
//! float images, and the static Gaussian sampling mask.

mod camera;
mod gaussian;
mod image;
mod mask;
mod mesh;

pub use camera::{Camera, PointProjection};
pub use gaussian::{quat_to_matrix, sigmoid, Gaussian};
pub use image::{Image, PixelMask};
pub use mask::{build_sampling_mask, texel_anchor, SamplingMask};
pub use mesh::{BilinearTaps, Mesh, Texture};

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// A renderable and fittable scene: one mesh, its anchored Gaussians, and a
/// background color.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    pub mesh: Mesh,
    pub gaussians: Vec<Gaussian>,
    /// Linear RGB.
    pub background: [f64; 3],
}

impl Scene {
    pub fn new(mesh: Mesh, gaussians: Vec<Gaussian>, background: [f64; 3]) -> Result<Self> {
        let scene = Self {
            mesh,
            gaussians,
            background,
        };
        scene.validate()?;
        Ok(scene)
    }

    /// Checks that every Gaussian anchor addresses a mesh vertex.
    pub fn validate(&self) -> Result<()> {
        let vertex_count = self.mesh.vertex_count();
        for (i, g) in self.gaussians.iter().enumerate() {
            if g.anchor as usize >= vertex_count {
                return Err(Error::InvalidAnchor {
                    anchor: g.anchor,
                    vertex_count,
                });
            }
            let values = g.offset.iter().chain(&g.rotation).chain(&g.log_scale).chain(&g.color);
            if !values.chain([&g.opacity_logit]).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("gaussian {i}")));
            }
        }
        if !self.mesh.vertices.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("mesh vertices".into()));
        }
        if !self.background.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("background".into()));
        }
        Ok(())
    }
}

/// World position of a Gaussian: its anchor vertex plus its offset.
pub fn resolve_position(g: &Gaussian, mesh: &Mesh) -> Result<Vector3<f64>> {
    let vertex = mesh.vertices.get(g.anchor as usize).ok_or(Error::InvalidAnchor {
        anchor: g.anchor,
        vertex_count: mesh.vertex_count(),
    })?;
    Ok(Vector3::new(
        vertex[0] as f64 + g.offset[0] as f64,
        vertex[1] as f64 + g.offset[1] as f64,
        vertex[2] as f64 + g.offset[2] as f64,
    ))
}
