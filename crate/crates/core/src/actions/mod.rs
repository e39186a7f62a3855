//! Embodiment-agnostic action sequences, their mask videos, the oracle
//! simulator and the scripted-policy dataset generator.

mod dataset;
mod policy;
mod sim;

pub use dataset::{
    generate_dataset, generate_dataset_with, load_dataset, read_manifest, simulate, write_dataset, Dataset, DatasetConfig, ManifestRecord,
    TrainingTuple, MANIFEST_VERSION,
};
pub use policy::{PolicyKind, SceneSample, SceneSampler, ScriptedPolicy};
pub use sim::{SimConfig, SimState};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::kinematics::{
    inverse_kinematics_for, rotation_to_rpy, IkConfig, JointState, KinematicChain, KinematicsError, Pose,
};
use crate::render::{render_arms_mask, ArmView, CameraModel, MaskFrame, MaskVideo, RenderError};

#[derive(Debug, thiserror::Error)]
pub enum ActionError {
    #[error("step {step}, manipulator {arm}: {source}")]
    Kinematics {
        step: usize,
        arm: usize,
        #[source]
        source: KinematicsError,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("invalid action sequence: {0}")]
    InvalidSequence(String),
    #[error("scene sampling for trajectory {index} failed after {retries} attempts")]
    SceneSamplingFailed { index: usize, retries: usize },
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// One manipulator's command for one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ManipulatorAction {
    /// Tool-frame target: position (m), roll-pitch-yaw (rad), gripper opening.
    Cartesian {
        position: Vector3<f64>,
        rpy: [f64; 3],
        gripper: f64,
    },
    /// Joint-space command; `gripper` only affects rendering.
    Joint { q: Vec<f64>, gripper: f64 },
}

impl ManipulatorAction {
    pub fn from_pose(pose: &Pose, gripper: f64) -> Self {
        let (r, p, y) = rotation_to_rpy(&pose.rotation);
        ManipulatorAction::Cartesian {
            position: pose.translation,
            rpy: [r, p, y],
            gripper,
        }
    }

    pub fn gripper(&self) -> f64 {
        match self {
            ManipulatorAction::Cartesian { gripper, .. } | ManipulatorAction::Joint { gripper, .. } => *gripper,
        }
    }

    pub fn with_gripper(&self, g: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ManipulatorAction::Cartesian { gripper, .. } | ManipulatorAction::Joint { gripper, .. } => *gripper = g,
        }
        out
    }

    pub fn pose(&self) -> Option<Pose> {
        match self {
            ManipulatorAction::Cartesian { position, rpy, .. } => {
                Some(Pose::from_xyz_rpy([position.x, position.y, position.z], *rpy))
            }
            ManipulatorAction::Joint { .. } => None,
        }
    }

    /// `[x, y, z, roll, pitch, yaw, gripper]` for Cartesian actions.
    pub fn to_row(&self) -> Option<[f64; 7]> {
        match self {
            ManipulatorAction::Cartesian { position, rpy, gripper } => Some([
                position.x, position.y, position.z, rpy[0], rpy[1], rpy[2], *gripper,
            ]),
            ManipulatorAction::Joint { .. } => None,
        }
    }

    pub fn from_row(row: &[f64]) -> Self {
        ManipulatorAction::Cartesian {
            position: Vector3::new(row[0], row[1], row[2]),
            rpy: [row[3], row[4], row[5]],
            gripper: row[6],
        }
    }
}

/// `steps[t][n]` is manipulator `n`'s command at step `t`; step `t` is the
/// state shown in frame `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionSequence {
    pub steps: Vec<Vec<ManipulatorAction>>,
}

impl ActionSequence {
    pub fn new(steps: Vec<Vec<ManipulatorAction>>) -> Result<Self, ActionError> {
        let seq = Self { steps };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<(), ActionError> {
        let Some(first) = self.steps.first() else {
            return Err(ActionError::InvalidSequence("sequence is empty".into()));
        };
        let n = first.len();
        if n == 0 {
            return Err(ActionError::InvalidSequence("no manipulators".into()));
        }
        for (t, step) in self.steps.iter().enumerate() {
            if step.len() != n {
                return Err(ActionError::InvalidSequence(format!(
                    "step {t} has {} manipulators, expected {n}",
                    step.len()
                )));
            }
            for a in step {
                let g = a.gripper();
                if !(0.0..=1.0).contains(&g) {
                    return Err(ActionError::InvalidSequence(format!("step {t}: gripper {g} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn manipulators(&self) -> usize {
        self.steps.first().map_or(0, |s| s.len())
    }

    /// Row-major `[x, y, z, r, p, y, g]` per manipulator, concatenated per step.
    pub fn to_rows(&self) -> Result<Vec<Vec<f64>>, ActionError> {
        self.steps
            .iter()
            .map(|step| {
                let mut row = Vec::with_capacity(7 * step.len());
                for a in step {
                    let r = a.to_row().ok_or_else(|| {
                        ActionError::InvalidSequence("joint-space actions have no row form".into())
                    })?;
                    row.extend_from_slice(&r);
                }
                Ok(row)
            })
            .collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ActionError> {
        let steps = rows
            .iter()
            .enumerate()
            .map(|(t, row)| {
                if row.is_empty() || row.len() % 7 != 0 {
                    return Err(ActionError::InvalidSequence(format!(
                        "row {t} has {} values, expected a multiple of 7",
                        row.len()
                    )));
                }
                Ok(row.chunks(7).map(ManipulatorAction::from_row).collect())
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(steps)
    }

    /// Extends to `len` steps by repeating the final step.
    pub fn padded(&self, len: usize) -> Self {
        let mut steps = self.steps.clone();
        if let Some(last) = steps.last().cloned() {
            while steps.len() < len {
                steps.push(last.clone());
            }
        }
        Self { steps }
    }
}

/// Solves every step, seeding step `t` with step `t − 1`'s solution.
pub fn actions_to_joint_states(
    seq: &ActionSequence,
    chains: &[KinematicChain],
    seeds: &[JointState],
    ik: &IkConfig,
) -> Result<Vec<Vec<JointState>>, ActionError> {
    seq.validate()?;
    if chains.len() != seq.manipulators() || seeds.len() != chains.len() {
        return Err(ActionError::InvalidSequence(format!(
            "{} manipulators, {} chains, {} seeds",
            seq.manipulators(),
            chains.len(),
            seeds.len()
        )));
    }
    let mut prev: Vec<JointState> = seeds.to_vec();
    let mut out = Vec::with_capacity(seq.len());
    for (t, step) in seq.steps.iter().enumerate() {
        let mut qs = Vec::with_capacity(chains.len());
        for (n, (action, chain)) in step.iter().zip(chains).enumerate() {
            let err = |source| ActionError::Kinematics { step: t, arm: n, source };
            let q = match action {
                ManipulatorAction::Joint { q, .. } => {
                    let q = JointState::new(q.clone());
                    chain.check_limits(&q).map_err(err)?;
                    q
                }
                ManipulatorAction::Cartesian { .. } => {
                    let target = action.pose().expect("cartesian action has a pose");
                    inverse_kinematics_for(chain, &chain.end_effector(), &target, &prev[n], ik).map_err(err)?
                }
            };
            qs.push(q);
        }
        prev.clone_from(&qs);
        out.push(qs);
    }
    Ok(out)
}

pub fn grippers(seq: &ActionSequence) -> Vec<Vec<f64>> {
    seq.steps.iter().map(|s| s.iter().map(|a| a.gripper()).collect()).collect()
}

/// Silhouette of every manipulator at one step.
pub fn mask_for_step(
    chains: &[KinematicChain],
    qs: &[JointState],
    grippers: &[f64],
    cam: &CameraModel,
) -> Result<MaskFrame, RenderError> {
    let arms: Vec<ArmView> = chains
        .iter()
        .zip(qs)
        .zip(grippers)
        .map(|((c, q), &g)| ArmView::new(c, q, g))
        .collect();
    render_arms_mask(&arms, cam)
}

pub fn masks_from_actions(
    seq: &ActionSequence,
    chains: &[KinematicChain],
    seeds: &[JointState],
    ik: &IkConfig,
    cam: &CameraModel,
) -> Result<MaskVideo, ActionError> {
    masks_from_actions_with(Exec::default(), seq, chains, seeds, ik, cam)
}

/// Frame `t` is the union over manipulators of their silhouettes at step `t`.
pub fn masks_from_actions_with(
    exec: Exec,
    seq: &ActionSequence,
    chains: &[KinematicChain],
    seeds: &[JointState],
    ik: &IkConfig,
    cam: &CameraModel,
) -> Result<MaskVideo, ActionError> {
    let states = actions_to_joint_states(seq, chains, seeds, ik)?;
    let grips = grippers(seq);
    let frames = exec.try_map_range(states.len(), |t| mask_for_step(chains, &states[t], &grips[t], cam))?;
    Ok(MaskVideo::new(frames)?)
}
