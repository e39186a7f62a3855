//! Bundled planning fixtures.

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use super::mpc::{OracleEnv, Success};
use super::{PlanConfig, PlanError, DOF};
use crate::actions::{DatasetConfig, SceneSampler, SimConfig, SimState};
use crate::exec::stream_rng;
use crate::kinematics::{axis_angle, fixtures, inverse_kinematics, IkConfig, JointState, Pose, Primitive};
use crate::render::{Attachment, CameraModel, RgbFrame, SceneObject, SceneSpec};
use crate::world_model::WorldModelError;

/// A scene, its goal images and the test that decides success.
#[derive(Debug, Clone)]
pub struct Task {
    pub env: OracleEnv,
    pub goals: Vec<RgbFrame>,
    pub success: Success,
    /// Search settings suited to the task.
    pub plan: PlanConfig,
}

/// Tool-position tolerance of the planar reach task: 4% of the arm's reach.
pub const REACH_TOLERANCE: f64 = 0.08;

/// Planar two-link arm over a table, seen from above by the toy camera.
/// The goal image shows the arm at a configuration whose tool lies
/// 0.2 to 0.35 m from the start.
pub fn reach_task(seed: u64) -> Task {
    let chain = fixtures::planar2();
    let toy = DatasetConfig::toy();
    let sampler = SceneSampler::default();
    let mut rng = stream_rng(seed, 0);
    let tool = |q: &JointState| chain.tool_pose(&chain.fk_unchecked(q), &chain.end_effector());
    let (q0, goal_q) = loop {
        let q0 = sampler.random_q(&chain, &mut rng);
        let dq: Vec<f64> = (0..2).map(|_| rng.random_range(-0.4..0.4)).collect();
        let goal_q = JointState::new(q0.values.iter().zip(&dq).map(|(a, b)| a + b).collect());
        let d = (tool(&goal_q).translation - tool(&q0).translation).norm();
        if chain.check_limits(&goal_q).is_ok() && (0.2..=0.35).contains(&d) && q0.values[1].abs() > 0.3 {
            break (q0, goal_q);
        }
    };
    let scene = SceneSpec {
        background: sampler.background,
        objects: vec![table(&sampler)],
    };
    let state = SimState::new(scene, vec![false], vec![q0], vec![1.0]);
    let mut at_goal = state.clone();
    at_goal.qs = vec![goal_q.clone()];
    let chains = vec![chain.clone()];
    let goal = at_goal.render(&chains, &toy.camera).expect("toy scene renders").0;
    let mut active = [false; DOF];
    active[0] = true;
    active[1] = true;
    Task {
        env: OracleEnv {
            chains,
            camera: toy.camera,
            ik: toy.ik,
            sim: toy.sim,
            state,
        },
        goals: vec![goal],
        success: Success::ToolNear {
            arm: 0,
            target: tool(&goal_q).translation,
            tol: REACH_TOLERANCE,
        },
        plan: PlanConfig {
            active,
            ..PlanConfig::default()
        },
    }
}

fn table(sampler: &SceneSampler) -> SceneObject {
    SceneObject {
        name: "table".into(),
        primitive: Primitive::Box {
            half_extents: Vector3::new(sampler.table_half_extent, sampler.table_half_extent, 0.05),
        },
        pose: Pose::from_translation(Vector3::new(0.0, 0.0, sampler.table_top - 0.05)),
        color: sampler.table_color,
        attached: None,
    }
}

/// Position and orientation tolerances of the cuboid flip.
pub const FLIP_TOL_POS: f64 = 0.03;
pub const FLIP_TOL_ROT: f64 = 0.25;

/// 7-DoF arm holding an elongated cuboid that must be turned in place by
/// 90° about the tool's approach or lateral axis. The cuboid has a square
/// cross section, so success is judged up to its symmetries.
pub fn flip_task(seed: u64) -> Result<Task, PlanError> {
    let chain = fixtures::franka_toy();
    let chains = vec![chain.clone()];
    let ik = IkConfig::default();
    let mut rng = stream_rng(seed, 1);
    let base = [0.0, -0.4, 0.0, -2.2, 0.0, 1.9, 0.8];
    let mut last = String::new();
    let (q0, start, target_q) = 'draw: {
        for _ in 0..32 {
            let q0 = JointState::new(base.iter().map(|b| b + rng.random_range(-0.15..0.15)).collect());
            let start = chain.tool_pose(&chain.fk_unchecked(&q0), &chain.end_effector());
            let axis = if rng.random::<bool>() { Vector3::z() } else { Vector3::y() };
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let turn = axis_angle(&axis, sign * std::f64::consts::FRAC_PI_2);
            let goal_pose = Pose::new(start.rotation * turn, start.translation);
            match inverse_kinematics(&chain, &goal_pose, &q0, &ik) {
                Ok(q) => break 'draw (q0, start, q),
                Err(e) => last = e.to_string(),
            }
        }
        return Err(PlanError::Config(format!("no reachable flip goal: {last}")));
    };

    let held = Pose::new(Matrix3::identity(), Vector3::new(0.0, 0.0, 0.05));
    let cuboid = SceneObject {
        name: "cuboid".into(),
        primitive: Primitive::Box {
            half_extents: Vector3::new(0.12, 0.03, 0.03),
        },
        pose: start.compose(&held),
        color: [40, 80, 220],
        attached: Some(Attachment { arm: 0, offset: held }),
    };
    let scene = SceneSpec {
        background: [110, 110, 110],
        objects: vec![cuboid],
    };
    let state = SimState::new(scene, vec![true], vec![q0.clone()], vec![0.0]);
    let mut at_goal = state.clone();
    at_goal.qs = vec![target_q];
    let camera = CameraModel::look_at(
        start.translation + Vector3::new(0.45, -0.3, 0.3),
        start.translation,
        Vector3::z(),
        0.7,
        128,
        128,
    )
    .map_err(WorldModelError::from)?;
    let goal = at_goal.render(&chains, &camera).map_err(WorldModelError::from)?.0;
    let object_target = at_goal.object_poses(&chains).map_err(WorldModelError::from)?[0];
    Ok(Task {
        env: OracleEnv {
            chains,
            camera,
            ik,
            sim: SimConfig::default(),
            state,
        },
        goals: vec![goal],
        success: Success::ObjectPose {
            object: 0,
            target: object_target,
            tol_pos: FLIP_TOL_POS,
            tol_rot: FLIP_TOL_ROT,
            symmetric: true,
        },
        plan: PlanConfig {
            horizon: 3,
            iterations: 4,
            samples: 32,
            elites: 6,
            active: [false, false, false, true, true, true],
            ..PlanConfig::default()
        },
    })
}
