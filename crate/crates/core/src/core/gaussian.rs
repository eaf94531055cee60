use nalgebra::{Matrix3, Vector3};

/// One anisotropic 3D Gaussian anchored to a mesh vertex.
///
/// Parameters are stored unconstrained (log-scale, pre-sigmoid opacity, raw
/// quaternion) so any optimizer step keeps the realized values valid. The
/// field order matches the on-disk blob record.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian {
    /// Index of the UV-grid vertex this Gaussian follows.
    pub anchor: u32,
    /// Offset from the anchor vertex, mm.
    pub offset: [f32; 3],
    /// Rotation quaternion, `w` first.
    pub rotation: [f32; 4],
    /// Natural log of the per-axis standard deviations (mm).
    pub log_scale: [f32; 3],
    /// Opacity before the sigmoid.
    pub opacity_logit: f32,
    /// Linear RGB.
    pub color: [f32; 3],
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub fn quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

impl Gaussian {
    /// Builds a Gaussian from realized values. The quaternion is normalized.
    pub fn new(
        anchor: u32,
        offset: [f32; 3],
        rotation: [f32; 4],
        scale: [f32; 3],
        opacity: f32,
        color: [f32; 3],
    ) -> Self {
        let o = (opacity as f64).clamp(1e-6, 1.0 - 1e-6);
        let mut g = Self {
            anchor,
            offset,
            rotation,
            log_scale: scale.map(|s| (s as f64).ln() as f32),
            opacity_logit: (o / (1.0 - o)).ln() as f32,
            color,
        };
        g.normalize_rotation();
        g
    }

    pub fn scale(&self) -> Vector3<f64> {
        Vector3::new(
            (self.log_scale[0] as f64).exp(),
            (self.log_scale[1] as f64).exp(),
            (self.log_scale[2] as f64).exp(),
        )
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit as f64)
    }

    pub fn offset_vec(&self) -> Vector3<f64> {
        Vector3::new(self.offset[0] as f64, self.offset[1] as f64, self.offset[2] as f64)
    }

    pub fn color_f64(&self) -> [f64; 3] {
        self.color.map(|c| c as f64)
    }

    /// Quaternion normalized in f64; the stored value may drift by f32 rounding.
    pub fn unit_quaternion(&self) -> [f64; 4] {
        let q = self.rotation.map(|v| v as f64);
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if n == 0.0 {
            [1.0, 0.0, 0.0, 0.0]
        } else {
            q.map(|v| v / n)
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(self.unit_quaternion())
    }

    /// `R diag(s)^2 R^T`.
    pub fn covariance3d(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let s = self.scale();
        let rs = r * Matrix3::from_diagonal(&s);
        let cov = rs * rs.transpose();
        // symmetric to the last bit
        Matrix3::from_fn(|i, j| if i <= j { cov[(i, j)] } else { cov[(j, i)] })
    }

    /// Renormalizes the stored quaternion when its norm has drifted past f32
    /// rounding. A zero quaternion resets to identity.
    pub fn normalize_rotation(&mut self) {
        let q = self.rotation.map(|v| v as f64);
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        if n == 0.0 || !n.is_finite() {
            self.rotation = [1.0, 0.0, 0.0, 0.0];
        } else if (n - 1.0).abs() > 5e-7 {
            self.rotation = q.map(|v| (v / n) as f32);
        }
    }

    pub fn quaternion_norm(&self) -> f64 {
        self.rotation
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}
