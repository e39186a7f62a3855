use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::kinematics::Pose;

use super::RenderError;

/// Points closer than this (camera z, meters) are behind the image plane.
pub const Z_NEAR: f64 = 0.01;

/// Pinhole camera. `extrinsic` maps world coordinates into the camera frame
/// (x right, y down, z forward).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CameraRecord", into = "CameraRecord")]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub extrinsic: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    Pixel { u: f64, v: f64, depth: f64 },
    Behind,
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        extrinsic: Pose,
    ) -> Result<Self, RenderError> {
        let cam = Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            extrinsic,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy)
            && self.extrinsic.is_rigid(1e-6);
        if ok {
            Ok(())
        } else {
            Err(RenderError::InvalidCamera(format!("{self:?}")))
        }
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll and points
    /// towards the top of the image. `fov_x` is the horizontal field of view.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        fov_x: f64,
        width: usize,
        height: usize,
    ) -> Result<Self, RenderError> {
        let z = (target - eye).normalize();
        let x = z.cross(&up);
        if x.norm() < 1e-9 {
            return Err(RenderError::InvalidCamera("up vector parallel to view direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        let extrinsic = Pose::new(r, -(r * eye));
        let f = (width as f64 / 2.0) / (fov_x / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height, extrinsic)
    }

    pub fn to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.extrinsic.transform_point(p_world)
    }

    /// Continuous pixel coordinates of a camera-frame point.
    pub fn project_camera(&self, p: &Vector3<f64>) -> Projection {
        if p.z <= Z_NEAR {
            return Projection::Behind;
        }
        Projection::Pixel {
            u: self.fx * p.x / p.z + self.cx,
            v: self.fy * p.y / p.z + self.cy,
            depth: p.z,
        }
    }

    /// Optical center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.extrinsic.inverse().translation
    }

    /// World-frame direction of the ray through continuous pixel `(u, v)`.
    pub fn ray_world(&self, u: f64, v: f64) -> Vector3<f64> {
        let d = Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        self.extrinsic.rotation.transpose() * d
    }
}

pub fn project_point(cam: &CameraModel, p_world: &Vector3<f64>) -> Projection {
    cam.project_camera(&cam.to_camera(p_world))
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
    extrinsic: Pose,
}

impl TryFrom<CameraRecord> for CameraModel {
    type Error = RenderError;
    fn try_from(r: CameraRecord) -> Result<Self, RenderError> {
        CameraModel::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height, r.extrinsic)
    }
}

impl From<CameraModel> for CameraRecord {
    fn from(c: CameraModel) -> Self {
        CameraRecord {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            extrinsic: c.extrinsic,
        }
    }
}
