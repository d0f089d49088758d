//! Pinhole cameras in the OpenCV convention: x right, y down, z forward.
//! Pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.

use crate::{Error, Result};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub width: usize,
    pub height: usize,
    pub intrinsics: Intrinsics,
    /// Camera-to-world rotation; columns are the camera axes in world space.
    pub rotation: Matrix3<f64>,
    pub center: Vector3<f64>,
}

impl Camera {
    /// Camera at `eye` looking at `target`, with `up` roughly opposite to
    /// the image y axis.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        width: usize,
        height: usize,
        fov_x_deg: f64,
    ) -> Result<Self> {
        let z = target - eye;
        if z.norm() < 1e-12 {
            return Err(Error::Generation("camera eye coincides with its target".into()));
        }
        let z = z.normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(Error::Generation("camera view direction is parallel to up".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let f = 0.5 * width as f64 / (0.5 * fov_x_deg.to_radians()).tan();
        Ok(Self {
            width,
            height,
            intrinsics: Intrinsics {
                fx: f,
                fy: f,
                cx: 0.5 * width as f64,
                cy: 0.5 * height as f64,
            },
            rotation: Matrix3::from_columns(&[x, y, z]),
            center: eye,
        })
    }

    pub fn from_pose(width: usize, height: usize, intrinsics: Intrinsics, pose: &[f64; 16]) -> Result<Self> {
        let rotation = Matrix3::new(pose[0], pose[1], pose[2], pose[4], pose[5], pose[6], pose[8], pose[9], pose[10]);
        let orth = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if orth > 1e-6 {
            return Err(Error::input(format!("pose rotation is not orthonormal (error {orth:e})")));
        }
        Ok(Self {
            width,
            height,
            intrinsics,
            rotation,
            center: Vector3::new(pose[3], pose[7], pose[11]),
        })
    }

    /// Camera-to-world matrix, row-major.
    pub fn pose(&self) -> [f64; 16] {
        let r = &self.rotation;
        let c = &self.center;
        [
            r[(0, 0)], r[(0, 1)], r[(0, 2)], c.x,
            r[(1, 0)], r[(1, 1)], r[(1, 2)], c.y,
            r[(2, 0)], r[(2, 1)], r[(2, 2)], c.z,
            0.0, 0.0, 0.0, 1.0,
        ]
    }

    pub fn forward(&self) -> Vector3<f64> {
        self.rotation.column(2).into()
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    /// Unit ray through image coordinates `(u, v)`.
    pub fn ray_at(&self, u: f64, v: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        let local = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        (self.rotation * local).normalize()
    }

    /// Origin and unit direction of the ray through the center of pixel
    /// `(x, y)`.
    pub fn pixel_ray(&self, x: usize, y: usize) -> (Vector3<f64>, Vector3<f64>) {
        (self.center, self.ray_at(x as f64 + 0.5, y as f64 + 0.5))
    }

    /// `cos` between a pixel ray and the optical axis: converts ray
    /// distance to z-depth (`z = t · cos`).
    pub fn pixel_cos(&self, x: usize, y: usize) -> f64 {
        self.pixel_ray(x, y).1.dot(&self.forward())
    }

    /// Image coordinates and z-depth of a world point, `None` behind the
    /// camera.
    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64, f64)> {
        let local = self.rotation.transpose() * (p - self.center);
        if local.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * local.x / local.z + k.cx, k.fy * local.y / local.z + k.cy, local.z))
    }

    pub fn unproject(&self, u: f64, v: f64, z: f64) -> Vector3<f64> {
        let k = &self.intrinsics;
        let local = Vector3::new((u - k.cx) / k.fx * z, (v - k.cy) / k.fy * z, z);
        self.rotation * local + self.center
    }
}
