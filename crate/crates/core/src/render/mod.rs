//! Pinhole projection and triangle rasterization of embodiment masks and
//! oracle RGB frames.

mod camera;
mod frame;
mod mesh;
mod raster;
mod scene;

pub use camera::{project_point, CameraModel, Projection, Z_NEAR};
pub use frame::{MaskFrame, MaskVideo, RgbFrame, RgbVideo};
pub use mesh::{tessellate, tessellate_posed, Triangle, CYLINDER_SIDES, SPHERE_SLICES, SPHERE_STACKS};
pub use raster::{Raster, NO_OWNER};
pub use scene::{
    is_arm_color, render_arms_mask, render_embodiment_mask, render_scene, ArmView, Attachment, SceneObject,
    SceneSpec, ARM_COLOR, ARM_KEY_TOLERANCE,
};

use crate::kinematics::KinematicsError;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("'{0}' uses a color reserved for the arm")]
    ReservedColor(String),
    #[error("object '{object}' is attached to arm {arm}, which is not in the scene")]
    UnknownArm { object: String, arm: usize },
    #[error("resolution mismatch: {0}")]
    ResolutionMismatch(String),
    #[error("image format: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
