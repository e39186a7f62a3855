use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::kinematics::{rotation_log, axis_angle, JointState, KinematicChain, Pose, Primitive};
use crate::render::{SceneObject, SceneSpec};

use super::{ActionSequence, ManipulatorAction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Move the tool to a marker.
    Reach,
    /// Grasp a cube, carry it to a marker, release.
    PickPlace,
    /// Drive through a cube with the gripper open, dragging it to a marker.
    Push,
    /// One of the three above, drawn per trajectory.
    Mixed,
}

/// A scripted behavior plus a noise level. The noise is a per-episode
/// horizontal offset of every target, so one scene yields a family of
/// policies of graded quality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedPolicy {
    pub kind: PolicyKind,
    /// Standard deviation (m) of the target offset.
    #[serde(default)]
    pub noise: f64,
}

impl ScriptedPolicy {
    pub fn new(kind: PolicyKind, noise: f64) -> Self {
        Self { kind, noise }
    }

    /// Resolves `Mixed` into a concrete kind.
    pub fn resolve(&self, rng: &mut ChaCha8Rng) -> PolicyKind {
        match self.kind {
            PolicyKind::Mixed => [PolicyKind::Reach, PolicyKind::PickPlace, PolicyKind::Push][rng.random_range(0..3)],
            k => k,
        }
    }

    /// Commands for `steps` frames. Step 0 is the start pose; every waypoint
    /// is reached by straight-line interpolation of the tool position and
    /// geodesic interpolation of its orientation.
    pub fn actions(
        &self,
        sample: &SceneSample,
        chains: &[KinematicChain],
        steps: usize,
        rng: &mut ChaCha8Rng,
    ) -> ActionSequence {
        let offset = self.offset(rng);
        let last = steps.saturating_sub(1).max(1);
        let mid = last.div_ceil(2);
        let per_arm: Vec<Vec<ManipulatorAction>> = sample
            .tasks
            .iter()
            .zip(chains)
            .map(|(task, chain)| {
                let start = task.start;
                let goal = perturb(chain, &task.goal, offset);
                let object = task.object.map(|p| perturb(chain, &p, offset));
                (0..steps)
                    .map(|t| match (sample.kind, object) {
                        (PolicyKind::PickPlace, Some(obj)) => {
                            let g = if t >= mid && t < last { 0.0 } else { 1.0 };
                            let pose = if t <= mid {
                                interpolate(&start, &obj, t as f64 / mid as f64)
                            } else {
                                interpolate(&obj, &goal, (t - mid) as f64 / (last - mid) as f64)
                            };
                            ManipulatorAction::from_pose(&pose, g)
                        }
                        _ => ManipulatorAction::from_pose(&interpolate(&start, &goal, t as f64 / last as f64), 1.0),
                    })
                    .collect()
            })
            .collect();
        let steps = (0..steps).map(|t| per_arm.iter().map(|a| a[t].clone()).collect()).collect();
        ActionSequence { steps }
    }

    fn offset(&self, rng: &mut ChaCha8Rng) -> Vector3<f64> {
        if self.noise <= 0.0 {
            return Vector3::zeros();
        }
        let n = Normal::new(0.0, self.noise).expect("finite noise");
        Vector3::new(n.sample(rng), n.sample(rng), 0.0)
    }
}

/// Shifts a target horizontally and pulls it back inside the reachable shell.
fn perturb(chain: &KinematicChain, target: &Pose, offset: Vector3<f64>) -> Pose {
    if offset == Vector3::zeros() {
        return *target;
    }
    let shoulder = chain.shoulder();
    let reach = chain.reach();
    let mut p = target.translation + offset;
    let mut rel = p - shoulder;
    let r = rel.norm();
    let (lo, hi) = (0.3 * reach, 0.95 * reach);
    if r > hi || r < lo {
        if r < 1e-9 {
            rel = Vector3::x();
        }
        rel = rel.normalize() * r.clamp(lo, hi);
        p = shoulder + rel;
    }
    Pose::new(target.rotation, p)
}

pub fn interpolate(a: &Pose, b: &Pose, s: f64) -> Pose {
    if s <= 0.0 {
        return *a;
    }
    if s >= 1.0 {
        return *b;
    }
    let w = rotation_log(&(a.rotation.transpose() * b.rotation));
    let angle = w.norm();
    let rot = if angle < 1e-12 {
        a.rotation
    } else {
        a.rotation * axis_angle(&(w / angle), angle * s)
    };
    Pose::new(rot, a.translation + (b.translation - a.translation) * s)
}

/// Sampler for scenes around any chain: targets are forward kinematics of
/// random in-limit configurations, so they are reachable by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSampler {
    pub background: [u8; 3],
    pub table_color: [u8; 3],
    /// Height of the table top (m).
    pub table_top: f64,
    pub table_half_extent: f64,
    pub object_half_size: f64,
    pub object_color: [u8; 3],
    pub marker_radius: f64,
    pub marker_color: [u8; 3],
    /// Fraction of each joint range excluded at both ends when sampling.
    pub joint_margin: f64,
    /// Minimum tool travel (m) from start to goal.
    pub min_travel: f64,
    /// Minimum distance (m) between the tool start and the cube.
    pub min_object_distance: f64,
    pub max_retries: usize,
}

impl Default for SceneSampler {
    fn default() -> Self {
        Self {
            background: [110, 110, 110],
            table_color: [170, 170, 170],
            table_top: -0.06,
            table_half_extent: 4.0,
            object_half_size: 0.12,
            object_color: [40, 80, 220],
            marker_radius: 0.16,
            marker_color: [40, 170, 70],
            joint_margin: 0.1,
            min_travel: 0.8,
            min_object_distance: 0.5,
            max_retries: 64,
        }
    }
}

/// Targets for one manipulator. Poses are tool-frame poses in the world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmTask {
    pub start: Pose,
    pub goal: Pose,
    /// Cube pose for pick-place and push.
    pub object: Option<Pose>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSample {
    pub kind: PolicyKind,
    pub q0: Vec<JointState>,
    pub scene: SceneSpec,
    pub movable: Vec<bool>,
    pub tasks: Vec<ArmTask>,
}

impl SceneSampler {
    pub fn random_q(&self, chain: &KinematicChain, rng: &mut ChaCha8Rng) -> JointState {
        let m = self.joint_margin.clamp(0.0, 0.49);
        JointState::new(
            chain
                .limits()
                .iter()
                .map(|&(lo, hi)| {
                    let (lo, hi) = (lo.max(-std::f64::consts::PI), hi.min(std::f64::consts::PI));
                    lo + (hi - lo) * rng.random_range(m..1.0 - m)
                })
                .collect(),
        )
    }

    fn tool(chain: &KinematicChain, q: &JointState) -> Pose {
        chain.tool_pose(&chain.fk_unchecked(q), &chain.end_effector())
    }

    /// One candidate scene. Feasibility of the resulting trajectory is
    /// checked by the caller.
    pub fn sample(&self, chains: &[KinematicChain], kind: PolicyKind, rng: &mut ChaCha8Rng) -> Option<SceneSample> {
        let mut q0 = Vec::new();
        let mut tasks = Vec::new();
        let table = SceneObject {
            name: "table".into(),
            primitive: Primitive::Box {
                half_extents: Vector3::new(self.table_half_extent, self.table_half_extent, 0.05),
            },
            pose: Pose::from_translation(Vector3::new(0.0, 0.0, self.table_top - 0.05)),
            color: self.table_color,
            attached: None,
        };
        let mut objects = vec![table];
        let mut movable = vec![false];
        for (n, chain) in chains.iter().enumerate() {
            let q = self.random_q(chain, rng);
            let start = Self::tool(chain, &q);
            let goal = Self::tool(chain, &self.random_q(chain, rng));
            if (goal.translation - start.translation).norm() < self.min_travel {
                return None;
            }
            let object = match kind {
                PolicyKind::PickPlace => {
                    let o = Self::tool(chain, &self.random_q(chain, rng));
                    if (o.translation - start.translation).norm() < self.min_object_distance
                        || (o.translation - goal.translation).norm() < self.min_travel
                    {
                        return None;
                    }
                    Some(o)
                }
                // the cube sits where the tool will be halfway along its path
                PolicyKind::Push => Some(interpolate(&start, &goal, 0.5)),
                _ => None,
            };
            let marker_top = self.table_top + 0.005;
            objects.push(SceneObject {
                name: format!("marker{n}"),
                primitive: Primitive::Cylinder {
                    radius: self.marker_radius,
                    length: 0.01,
                },
                pose: Pose::from_translation(Vector3::new(goal.translation.x, goal.translation.y, marker_top - 0.005)),
                color: self.marker_color,
                attached: None,
            });
            movable.push(false);
            if let Some(o) = object {
                let h = self.object_half_size;
                objects.push(SceneObject {
                    name: format!("cube{n}"),
                    primitive: Primitive::Box {
                        half_extents: Vector3::new(h, h, h),
                    },
                    pose: Pose::from_translation(o.translation),
                    color: self.object_color,
                    attached: None,
                });
                movable.push(true);
            }
            q0.push(q);
            tasks.push(ArmTask { start, goal, object });
        }
        Some(SceneSample {
            kind,
            q0,
            scene: SceneSpec {
                background: self.background,
                objects,
            },
            movable,
            tasks,
        })
    }
}
