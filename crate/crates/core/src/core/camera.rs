use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

/// Pinhole camera with a rigid world-to-camera transform.
///
/// Camera space is x right, y down, z forward; scene units are millimeters.
/// Pixel `(i, j)` covers `[i, i+1) x [j, j+1)` and is sampled at its center.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub near: f64,
}

/// Result of projecting a world point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointProjection {
    pub pixel: Vector2<f64>,
    /// Camera-space z.
    pub depth: f64,
    /// False when the point lies closer than the near plane.
    pub in_front: bool,
}

impl Camera {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        focal: (f64, f64),
        principal: (f64, f64),
        size: (usize, usize),
        near: f64,
    ) -> Result<Self> {
        let orth = rotation * rotation.transpose() - Matrix3::identity();
        if orth.amax() > 1e-6 || (rotation.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidCamera(
                "rotation must be orthonormal with determinant +1".into(),
            ));
        }
        if !(focal.0 > 0.0 && focal.1 > 0.0) {
            return Err(Error::InvalidCamera("focal lengths must be positive".into()));
        }
        if !(near > 0.0) {
            return Err(Error::InvalidCamera("near plane must be positive".into()));
        }
        if size.0 == 0 || size.1 == 0 {
            return Err(Error::InvalidCamera("image size must be at least 1x1".into()));
        }
        if !translation.iter().all(|v| v.is_finite()) || !principal.0.is_finite() || !principal.1.is_finite() {
            return Err(Error::InvalidCamera("non-finite parameters".into()));
        }
        Ok(Self {
            rotation,
            translation,
            fx: focal.0,
            fy: focal.1,
            cx: principal.0,
            cy: principal.1,
            width: size.0,
            height: size.1,
            near,
        })
    }

    /// Camera at `eye` looking at `target`, principal point at the image
    /// center, square pixels with focal length `focal` in pixels.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        size: (usize, usize),
        near: f64,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("eye and target coincide".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| Error::InvalidCamera("up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(
            rotation,
            translation,
            (focal, focal),
            (size.0 as f64 * 0.5, size.1 as f64 * 0.5),
            size,
            near,
        )
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn to_world(&self, p_cam: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p_cam - self.translation)
    }

    pub fn project_point(&self, p: &Vector3<f64>) -> PointProjection {
        let c = self.to_camera(p);
        PointProjection {
            pixel: Vector2::new(self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy),
            depth: c.z,
            in_front: c.z >= self.near,
        }
    }

    /// World point seen at `pixel` with camera-space depth `depth`.
    pub fn unproject(&self, pixel: &Vector2<f64>, depth: f64) -> Vector3<f64> {
        self.to_world(&(self.ray_direction(pixel) * depth))
    }

    /// Camera-space ray through `pixel`, scaled so that its z component is 1.
    pub fn ray_direction(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    /// Center of pixel `(x, y)`.
    pub fn pixel_center(x: usize, y: usize) -> Vector2<f64> {
        Vector2::new(x as f64 + 0.5, y as f64 + 0.5)
    }
}
