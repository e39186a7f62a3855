use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::pose::{axis_angle, Pose};
use super::KinematicsError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    /// Joint frame relative to the parent link frame.
    pub origin: Pose,
    pub lower: f64,
    pub upper: f64,
    pub parent_link: String,
    pub child_link: String,
}

impl JointSpec {
    /// Transform contributed by the joint at value `q`.
    pub fn motion(&self, q: f64) -> Pose {
        match self.kind {
            JointKind::Revolute => Pose::new(axis_angle(&self.axis, q), Vector3::zeros()),
            JointKind::Prismatic => Pose::from_translation(self.axis * q),
            JointKind::Fixed => Pose::identity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Primitive {
    Box { half_extents: Vector3<f64> },
    Cylinder { radius: f64, length: f64 },
    Sphere { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkGeometry {
    pub primitive: Primitive,
    pub origin: Pose,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub geometry: Vec<LinkGeometry>,
}

/// Two-finger parallel gripper rendered as a pair of boxes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperSpec {
    pub max_gap: f64,
    pub finger_length: f64,
    pub finger_width: f64,
    pub finger_depth: f64,
}

/// Tool frame attached to a link; the Cartesian action target.
#[derive(Debug, Clone, PartialEq)]
pub struct EndEffector {
    pub name: String,
    pub link: String,
    pub offset: Pose,
    pub gripper: Option<GripperSpec>,
}

/// A link tree with joints sorted so every parent precedes its children.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    pub name: String,
    pub links: Vec<Link>,
    pub joints: Vec<JointSpec>,
    pub end_effectors: Vec<EndEffector>,
    pub(crate) root: usize,
    /// For each joint: (parent link index, child link index).
    pub(crate) joint_links: Vec<(usize, usize)>,
    /// Indices into `joints` of the actuated (non-fixed) joints, in order.
    pub(crate) actuated: Vec<usize>,
}

/// Joint values for the actuated joints of a chain, in chain order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub values: Vec<f64>,
}

impl JointState {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n: usize) -> Self {
        Self { values: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl From<Vec<f64>> for JointState {
    fn from(values: Vec<f64>) -> Self {
        Self { values }
    }
}

/// World-frame pose of every link, indexed like `KinematicChain::links`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkPoses {
    pub poses: Vec<Pose>,
}

impl LinkPoses {
    pub fn get(&self, link: usize) -> &Pose {
        &self.poses[link]
    }
}

const LIMIT_SLACK: f64 = 1e-12;

impl KinematicChain {
    /// Number of actuated joints `d_n`.
    pub fn dof(&self) -> usize {
        self.actuated.len()
    }

    pub fn root_link(&self) -> &Link {
        &self.links[self.root]
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn actuated_joints(&self) -> impl Iterator<Item = &JointSpec> {
        self.actuated.iter().map(move |&j| &self.joints[j])
    }

    pub fn limits(&self) -> Vec<(f64, f64)> {
        self.actuated_joints().map(|j| (j.lower, j.upper)).collect()
    }

    /// Primary end effector (the first declared, or the last link).
    pub fn end_effector(&self) -> EndEffector {
        self.end_effectors.first().cloned().unwrap_or_else(|| {
            let link = self
                .joint_links
                .last()
                .map(|&(_, c)| c)
                .unwrap_or(self.root);
            EndEffector {
                name: "tool".into(),
                link: self.links[link].name.clone(),
                offset: Pose::identity(),
                gripper: None,
            }
        })
    }

    pub fn check_limits(&self, q: &JointState) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        for (i, (v, (lo, hi))) in q.values.iter().zip(self.limits()).enumerate() {
            if !v.is_finite() || *v < lo - LIMIT_SLACK || *v > hi + LIMIT_SLACK {
                return Err(KinematicsError::JointLimitViolation { index: i, value: *v });
            }
        }
        Ok(())
    }

    pub fn clamp(&self, q: &mut JointState) {
        for (v, (lo, hi)) in q.values.iter_mut().zip(self.limits()) {
            *v = v.clamp(lo, hi);
        }
    }

    /// Forward kinematics without the limit check.
    pub fn fk_unchecked(&self, q: &JointState) -> LinkPoses {
        let mut poses = vec![Pose::identity(); self.links.len()];
        let mut qi = 0;
        for (j, joint) in self.joints.iter().enumerate() {
            let (parent, child) = self.joint_links[j];
            let value = if joint.kind == JointKind::Fixed {
                0.0
            } else {
                let v = q.values[qi];
                qi += 1;
                v
            };
            poses[child] = poses[parent].compose(&joint.origin).compose(&joint.motion(value));
        }
        LinkPoses { poses }
    }

    /// World pose of an end effector's tool frame.
    pub fn tool_pose(&self, poses: &LinkPoses, ee: &EndEffector) -> Pose {
        let link = self.link_index(&ee.link).unwrap_or(self.root);
        poses.get(link).compose(&ee.offset)
    }

    /// Upper bound on the distance the primary tool can reach from the root.
    pub fn reach(&self) -> f64 {
        let ee = self.end_effector();
        let Some(mut link) = self.link_index(&ee.link) else {
            return 0.0;
        };
        let mut total = ee.offset.translation.norm();
        while link != self.root {
            let Some(j) = self.joint_links.iter().position(|&(_, c)| c == link) else {
                break;
            };
            let joint = &self.joints[j];
            total += joint.origin.translation.norm();
            if joint.kind == JointKind::Prismatic {
                total += joint.lower.abs().max(joint.upper.abs());
            }
            link = self.joint_links[j].0;
        }
        total
    }

    /// Position of the first actuated joint; reach is measured from here.
    pub fn shoulder(&self) -> Vector3<f64> {
        let poses = self.fk_unchecked(&JointState::zeros(self.dof()));
        match self.actuated.first() {
            Some(&j) => {
                let (parent, _) = self.joint_links[j];
                poses.get(parent).compose(&self.joints[j].origin).translation
            }
            None => poses.get(self.root).translation,
        }
    }

    /// Splits a multi-end-effector tree into one serial chain per end effector.
    ///
    /// Each returned chain keeps the root-to-tool path plus every link hanging
    /// off the tool link through fixed joints; shared base links appear in all
    /// of them.
    pub fn manipulators(&self) -> Vec<KinematicChain> {
        if self.end_effectors.len() <= 1 {
            return vec![self.clone()];
        }
        self.end_effectors
            .iter()
            .map(|ee| self.branch(ee))
            .collect()
    }

    fn branch(&self, ee: &EndEffector) -> KinematicChain {
        let tool = self.link_index(&ee.link).unwrap_or(self.root);
        let mut keep = vec![false; self.links.len()];
        keep[self.root] = true;
        let mut link = tool;
        while link != self.root {
            keep[link] = true;
            match self.joint_links.iter().position(|&(_, c)| c == link) {
                Some(j) => link = self.joint_links[j].0,
                None => break,
            }
        }
        // fixed descendants of the tool, and fixed children of the root (the base body)
        for (j, &(p, c)) in self.joint_links.iter().enumerate() {
            let fixed = self.joints[j].kind == JointKind::Fixed;
            if fixed && keep[p] && (p == self.root || p == tool || self.is_descendant(p, tool)) {
                keep[c] = true;
            }
        }
        let new_index: Vec<Option<usize>> = {
            let mut next = 0;
            keep.iter()
                .map(|&k| {
                    k.then(|| {
                        next += 1;
                        next - 1
                    })
                })
                .collect()
        };
        let links = self
            .links
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(l, _)| l.clone())
            .collect();
        let mut joints = Vec::new();
        let mut joint_links = Vec::new();
        let mut actuated = Vec::new();
        for (j, &(p, c)) in self.joint_links.iter().enumerate() {
            if keep[p] && keep[c] {
                if self.joints[j].kind != JointKind::Fixed {
                    actuated.push(joints.len());
                }
                joints.push(self.joints[j].clone());
                joint_links.push((new_index[p].unwrap(), new_index[c].unwrap()));
            }
        }
        KinematicChain {
            name: format!("{}/{}", self.name, ee.name),
            links,
            joints,
            end_effectors: vec![ee.clone()],
            root: new_index[self.root].unwrap(),
            joint_links,
            actuated,
        }
    }

    fn is_descendant(&self, link: usize, ancestor: usize) -> bool {
        let mut cur = link;
        loop {
            if cur == ancestor {
                return true;
            }
            match self.joint_links.iter().position(|&(_, c)| c == cur) {
                Some(j) => cur = self.joint_links[j].0,
                None => return false,
            }
        }
    }
}

/// Forward kinematics: world pose of every link, base link at the identity.
pub fn forward_kinematics(chain: &KinematicChain, q: &JointState) -> Result<LinkPoses, KinematicsError> {
    chain.check_limits(q)?;
    Ok(chain.fk_unchecked(q))
}
