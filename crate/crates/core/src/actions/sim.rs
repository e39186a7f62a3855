use serde::{Deserialize, Serialize};

use crate::kinematics::{JointState, KinematicChain, Pose};
use crate::render::{render_scene, ArmView, Attachment, CameraModel, MaskFrame, RenderError, RgbFrame, SceneSpec};

/// Contact rules of the oracle simulator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    /// A closing gripper picks the nearest movable object whose center lies
    /// within this distance of the tool.
    pub grasp_radius: f64,
    /// An open tool within this distance of a movable object drags it along
    /// with its next displacement.
    pub push_radius: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            grasp_radius: 0.05,
            push_radius: 0.05,
        }
    }
}

const CLOSED: f64 = 0.5;

/// Kinematic world state: arm configurations plus object poses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub scene: SceneSpec,
    /// `movable[i]` marks `scene.objects[i]` as pushable and graspable.
    pub movable: Vec<bool>,
    pub qs: Vec<JointState>,
    pub grippers: Vec<f64>,
}

impl SimState {
    pub fn new(scene: SceneSpec, movable: Vec<bool>, qs: Vec<JointState>, grippers: Vec<f64>) -> Self {
        Self {
            scene,
            movable,
            qs,
            grippers,
        }
    }

    pub fn arms<'a>(&'a self, chains: &'a [KinematicChain]) -> Vec<ArmView<'a>> {
        chains
            .iter()
            .zip(&self.qs)
            .zip(&self.grippers)
            .map(|((c, q), &g)| ArmView::new(c, q, g))
            .collect()
    }

    fn tools(&self, chains: &[KinematicChain]) -> Vec<Pose> {
        self.arms(chains).iter().map(|a| a.tool_pose()).collect()
    }

    fn held_by(&self, arm: usize) -> Option<usize> {
        self.scene
            .objects
            .iter()
            .position(|o| o.attached.is_some_and(|a| a.arm == arm))
    }

    /// Moves the arms to `qs`/`grippers` and applies push, release and grasp
    /// in that order.
    pub fn step(
        &mut self,
        chains: &[KinematicChain],
        qs: Vec<JointState>,
        grippers: Vec<f64>,
        cfg: &SimConfig,
    ) -> Result<(), RenderError> {
        let before = self.tools(chains);
        let open_before: Vec<bool> = self.grippers.iter().map(|&g| g >= CLOSED).collect();
        self.qs = qs;
        self.grippers = grippers;
        let after = self.tools(chains);

        for (n, (b, a)) in before.iter().zip(&after).enumerate() {
            if !(open_before[n] && self.grippers[n] >= CLOSED) {
                continue;
            }
            let delta = a.translation - b.translation;
            for (i, obj) in self.scene.objects.iter_mut().enumerate() {
                if !self.movable[i] || obj.attached.is_some() {
                    continue;
                }
                let mut d = obj.pose.translation - b.translation;
                d.z = 0.0;
                if d.norm() <= cfg.push_radius {
                    obj.pose.translation.x += delta.x;
                    obj.pose.translation.y += delta.y;
                }
            }
        }

        for n in 0..chains.len() {
            if self.grippers[n] >= CLOSED {
                if let Some(i) = self.held_by(n) {
                    let arms = self.arms(chains);
                    let pose = self.scene.object_pose(i, &arms)?;
                    let obj = &mut self.scene.objects[i];
                    obj.pose = pose;
                    obj.attached = None;
                }
            } else if self.held_by(n).is_none() {
                let tool = after[n];
                let nearest = self
                    .scene
                    .objects
                    .iter()
                    .enumerate()
                    .filter(|(i, o)| self.movable[*i] && o.attached.is_none())
                    .map(|(i, o)| (i, (o.pose.translation - tool.translation).norm()))
                    .filter(|&(_, d)| d <= cfg.grasp_radius)
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((i, _)) = nearest {
                    let obj = &mut self.scene.objects[i];
                    obj.attached = Some(Attachment {
                        arm: n,
                        offset: tool.inverse().compose(&obj.pose),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn render(&self, chains: &[KinematicChain], cam: &CameraModel) -> Result<(RgbFrame, MaskFrame), RenderError> {
        render_scene(&self.scene, &self.arms(chains), cam)
    }

    /// World pose of every object, resolving attachments.
    pub fn object_poses(&self, chains: &[KinematicChain]) -> Result<Vec<Pose>, RenderError> {
        let arms = self.arms(chains);
        (0..self.scene.objects.len())
            .map(|i| self.scene.object_pose(i, &arms))
            .collect()
    }
}
