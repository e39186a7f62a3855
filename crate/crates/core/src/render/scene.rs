use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::kinematics::{JointState, KinematicChain, Pose, Primitive};

use super::camera::CameraModel;
use super::frame::{MaskFrame, RgbFrame};
use super::mesh::{tessellate_posed, Triangle};
use super::raster::{face_normal, Raster, NO_OWNER};
use super::RenderError;

/// Flat color of every arm pixel in oracle renders.
pub const ARM_COLOR: [u8; 3] = [255, 32, 32];
/// Euclidean RGB distance within which a color counts as the arm color.
pub const ARM_KEY_TOLERANCE: u8 = 40;

const SHADE_MIN: f64 = 0.6;

pub fn is_arm_color(c: [u8; 3]) -> bool {
    let d2: u32 = c.iter().zip(ARM_COLOR).map(|(&a, b)| (a.abs_diff(b) as u32).pow(2)).sum();
    d2 <= ARM_KEY_TOLERANCE as u32 * ARM_KEY_TOLERANCE as u32
}

/// A posed robot: chain, joint values, gripper opening and world placement.
#[derive(Debug, Clone, Copy)]
pub struct ArmView<'a> {
    pub chain: &'a KinematicChain,
    pub q: &'a JointState,
    /// 1 = fully open, 0 = closed.
    pub gripper: f64,
    pub base: Pose,
}

impl<'a> ArmView<'a> {
    pub fn new(chain: &'a KinematicChain, q: &'a JointState, gripper: f64) -> Self {
        Self {
            chain,
            q,
            gripper,
            base: Pose::identity(),
        }
    }

    pub fn with_base(mut self, base: Pose) -> Self {
        self.base = base;
        self
    }

    /// World pose of the primary tool frame.
    pub fn tool_pose(&self) -> Pose {
        let poses = self.chain.fk_unchecked(self.q);
        self.base.compose(&self.chain.tool_pose(&poses, &self.chain.end_effector()))
    }

    /// World-frame triangles of every link and gripper finger.
    pub fn triangles(&self) -> Result<Vec<Triangle>, RenderError> {
        self.chain.check_limits(self.q)?;
        let poses = self.chain.fk_unchecked(self.q);
        let mut tris = Vec::new();
        for (link, pose) in self.chain.links.iter().zip(&poses.poses) {
            let world = self.base.compose(pose);
            for g in &link.geometry {
                tris.extend(tessellate_posed(&g.primitive, &world.compose(&g.origin)));
            }
        }
        let g = self.gripper.clamp(0.0, 1.0);
        for ee in &self.chain.end_effectors {
            let Some(spec) = ee.gripper else { continue };
            let tool = self.base.compose(&self.chain.tool_pose(&poses, ee));
            let finger = Primitive::Box {
                half_extents: Vector3::new(spec.finger_depth, spec.finger_width, spec.finger_length) * 0.5,
            };
            let offset = 0.5 * (g * spec.max_gap + spec.finger_width);
            for side in [-1.0, 1.0] {
                let local = Pose::from_translation(Vector3::new(0.0, side * offset, -0.5 * spec.finger_length));
                tris.extend(tessellate_posed(&finger, &tool.compose(&local)));
            }
        }
        Ok(tris)
    }
}

/// Object rigidly welded to an arm's tool frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    /// Index into the arm list passed to [`render_scene`].
    pub arm: usize,
    /// Object pose in the tool frame.
    pub offset: Pose,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub name: String,
    pub primitive: Primitive,
    pub pose: Pose,
    pub color: [u8; 3],
    #[serde(default)]
    pub attached: Option<Attachment>,
}

/// Colored rigid primitives rendered around the arm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub background: [u8; 3],
    pub objects: Vec<SceneObject>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            background: [200, 200, 200],
            objects: Vec::new(),
        }
    }
}

impl SceneSpec {
    /// Rejects colors that a shaded render could key as arm pixels.
    pub fn validate(&self) -> Result<(), RenderError> {
        if is_arm_color(self.background) {
            return Err(RenderError::ReservedColor("background".into()));
        }
        for obj in &self.objects {
            let clash = (0..=8).any(|k| {
                let s = SHADE_MIN + (1.0 - SHADE_MIN) * k as f64 / 8.0;
                is_arm_color(shade(obj.color, s))
            });
            if clash {
                return Err(RenderError::ReservedColor(obj.name.clone()));
            }
        }
        Ok(())
    }

    /// World pose of an object given the arms it may be attached to.
    pub fn object_pose(&self, index: usize, arms: &[ArmView]) -> Result<Pose, RenderError> {
        let obj = &self.objects[index];
        match obj.attached {
            None => Ok(obj.pose),
            Some(a) => {
                let arm = arms.get(a.arm).ok_or_else(|| RenderError::UnknownArm {
                    object: obj.name.clone(),
                    arm: a.arm,
                })?;
                Ok(arm.tool_pose().compose(&a.offset))
            }
        }
    }
}

fn shade(c: [u8; 3], s: f64) -> [u8; 3] {
    c.map(|v| (v as f64 * s).round().clamp(0.0, 255.0) as u8)
}

fn light_dir() -> Vector3<f64> {
    Vector3::new(0.3, 0.2, 1.0).normalize()
}

/// Silhouette of one arm at identity base with the gripper open.
pub fn render_embodiment_mask(
    chain: &KinematicChain,
    q: &JointState,
    cam: &CameraModel,
) -> Result<MaskFrame, RenderError> {
    render_arms_mask(&[ArmView::new(chain, q, 1.0)], cam)
}

/// Union of the silhouettes of all `arms`.
pub fn render_arms_mask(arms: &[ArmView], cam: &CameraModel) -> Result<MaskFrame, RenderError> {
    let mut raster = Raster::new(cam.width, cam.height);
    for arm in arms {
        for tri in arm.triangles()? {
            raster.draw(cam, &tri, 0);
        }
    }
    Ok(mask_of(&raster, |o| o != NO_OWNER))
}

fn mask_of(raster: &Raster, keep: impl Fn(u32) -> bool) -> MaskFrame {
    MaskFrame {
        width: raster.width,
        height: raster.height,
        bits: raster.owner.iter().map(|&o| keep(o)).collect(),
    }
}

/// Oracle RGB render with a z-buffer. Arm pixels are [`ARM_COLOR`]; objects
/// are flat-shaded per face. The returned mask holds the visible arm pixels.
pub fn render_scene(
    scene: &SceneSpec,
    arms: &[ArmView],
    cam: &CameraModel,
) -> Result<(RgbFrame, MaskFrame), RenderError> {
    scene.validate()?;
    let mut raster = Raster::new(cam.width, cam.height);
    // id 0 is the arm; objects use per-triangle ids from 1 so each face keeps its shade
    let mut palette = vec![ARM_COLOR];
    for arm in arms {
        for tri in arm.triangles()? {
            raster.draw(cam, &tri, 0);
        }
    }
    let light = light_dir();
    for (i, obj) in scene.objects.iter().enumerate() {
        let pose = scene.object_pose(i, arms)?;
        for tri in tessellate_posed(&obj.primitive, &pose) {
            let s = SHADE_MIN + (1.0 - SHADE_MIN) * face_normal(&tri).dot(&light).abs();
            let id = palette.len() as u32;
            palette.push(shade(obj.color, s));
            raster.draw(cam, &tri, id);
        }
    }
    let mut rgb = RgbFrame::filled(cam.width, cam.height, scene.background);
    for (i, &o) in raster.owner.iter().enumerate() {
        if o != NO_OWNER {
            rgb.pixels[3 * i..3 * i + 3].copy_from_slice(&palette[o as usize]);
        }
    }
    Ok((rgb, mask_of(&raster, |o| o == 0)))
}
