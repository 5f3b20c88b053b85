use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::{self, Mat3, Vec3};
use crate::scalar::Real;

/// Pinhole camera (OpenCV convention: x right, y down, z forward).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera<T> {
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
    pub width: usize,
    pub height: usize,
    /// World-to-camera rotation.
    pub rotation: Mat3<T>,
    pub translation: Vec3<T>,
    pub near: T,
    pub far: T,
}

impl<T: Real> Camera<T> {
    pub fn validate(&self, tol: T) -> Result<()> {
        let finite = [self.fx, self.fy, self.cx, self.cy, self.near, self.far]
            .iter()
            .chain(self.rotation.iter().flatten())
            .chain(&self.translation)
            .all(|v| v.is_finite());
        if !finite {
            return Err(invalid("camera", "non-finite value"));
        }
        if self.fx <= T::zero() || self.fy <= T::zero() {
            return Err(invalid("camera", "focal lengths must be positive"));
        }
        if !(self.near < self.far) || self.near <= T::zero() {
            return Err(invalid("camera", "need 0 < near < far"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(invalid("camera", "empty image"));
        }
        let res = linalg::orthonormality_residual(&self.rotation);
        if res > tol || linalg::determinant(&self.rotation) < T::zero() {
            return Err(invalid("camera", format!("rotation is not orthonormal (residual {res})")));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`, with `up` roughly world-up.
    #[allow(clippy::too_many_arguments)]
    pub fn look_at(
        eye: Vec3<T>,
        target: Vec3<T>,
        up: Vec3<T>,
        width: usize,
        height: usize,
        focal: T,
        near: T,
        far: T,
    ) -> Self {
        let eps = T::lit(1e-12);
        let fwd = linalg::normalize(linalg::sub(target, eye), eps).expect("eye != target");
        let right = linalg::normalize(linalg::cross(fwd, up), eps).expect("up not parallel to view");
        let down = linalg::cross(fwd, right);
        let rotation = [right, down, fwd];
        let translation = linalg::scale(linalg::mat_vec(&rotation, eye), -T::one());
        let half = T::lit(0.5);
        Self {
            fx: focal,
            fy: focal,
            cx: T::from_usize_exact(width) * half,
            cy: T::from_usize_exact(height) * half,
            width,
            height,
            rotation,
            translation,
            near,
            far,
        }
    }

    #[inline]
    pub fn world_to_camera(&self, p: Vec3<T>) -> Vec3<T> {
        linalg::add(linalg::mat_vec(&self.rotation, p), self.translation)
    }

    /// Camera center in world coordinates.
    pub fn position(&self) -> Vec3<T> {
        linalg::scale(linalg::mat_t_vec(&self.rotation, self.translation), -T::one())
    }

    /// Camera-space ray direction through pixel center `(col + ½, row + ½)`, with `z = 1`.
    #[inline]
    pub fn ray(&self, px: T, py: T) -> Vec3<T> {
        [(px - self.cx) / self.fx, (py - self.cy) / self.fy, T::one()]
    }

    /// Row-major 4×4 world-to-camera matrix.
    pub fn world_to_cam_matrix(&self) -> [T; 16] {
        let r = &self.rotation;
        let t = &self.translation;
        let (z, o) = (T::zero(), T::one());
        [
            r[0][0], r[0][1], r[0][2], t[0], r[1][0], r[1][1], r[1][2], t[1], r[2][0], r[2][1], r[2][2], t[2], z, z,
            z, o,
        ]
    }

    pub fn cast<U: Real>(&self) -> Camera<U> {
        let c = |x: T| U::from_f64(x.to_f64_lossy()).unwrap_or_else(U::nan);
        Camera {
            fx: c(self.fx),
            fy: c(self.fy),
            cx: c(self.cx),
            cy: c(self.cy),
            width: self.width,
            height: self.height,
            rotation: self.rotation.map(|r| r.map(c)),
            translation: self.translation.map(c),
            near: c(self.near),
            far: c(self.far),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_front_camera_is_opencv_oriented() {
        let cam = Camera::<f64>::look_at([0.0, 0.0, 1.0], [0.0; 3], [0.0, 1.0, 0.0], 64, 64, 100.0, 0.01, 10.0);
        cam.validate(1e-9).unwrap();
        let pc = cam.world_to_camera([0.0; 3]);
        assert!((pc[2] - 1.0).abs() < 1e-12);
        // world +y projects upward, i.e. to negative camera y
        assert!(cam.world_to_camera([0.0, 0.1, 0.0])[1] < 0.0);
        assert!(cam.world_to_camera([0.1, 0.0, 0.0])[0] > 0.0);
        let p = cam.position();
        assert!((p[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let mut cam = Camera::<f64>::look_at([0.0, 0.0, 1.0], [0.0; 3], [0.0, 1.0, 0.0], 8, 8, 10.0, 0.01, 10.0);
        cam.rotation[0][0] = 1.01;
        assert!(cam.validate(1e-4).is_err());
    }
}
