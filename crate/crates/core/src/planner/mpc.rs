use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    frame_latent, latent_l1, plan_latent, plan_to_actions, score_candidate, IterationLog, Observation, PlanConfig,
    PlanError, PlanStep,
};
use crate::actions::{actions_to_joint_states, grippers, ActionSequence, ManipulatorAction, SimConfig, SimState};
use crate::codec::{self, FloatVideo};
use crate::exec::Exec;
use crate::kinematics::{rotation_distance, IkConfig, KinematicChain, Pose, Primitive};
use crate::render::{CameraModel, RgbFrame, RgbVideo};
use crate::world_model::{OracleWorld, WorldModel, WorldModelError};

/// Geometric task-completion test on the true scene state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Success {
    ToolNear {
        arm: usize,
        target: Vector3<f64>,
        tol: f64,
    },
    /// With `symmetric`, orientations that a box's symmetries map onto each
    /// other count as equal.
    ObjectPose {
        object: usize,
        target: Pose,
        tol_pos: f64,
        tol_rot: f64,
        #[serde(default)]
        symmetric: bool,
    },
}

impl Success {
    pub fn check(&self, state: &SimState, chains: &[KinematicChain]) -> Result<bool, PlanError> {
        match *self {
            Success::ToolNear { arm, target, tol } => {
                let tool = state.arms(chains)[arm].tool_pose();
                Ok((tool.translation - target).norm() <= tol)
            }
            Success::ObjectPose {
                object,
                target,
                tol_pos,
                tol_rot,
                symmetric,
            } => {
                let poses = state.object_poses(chains).map_err(WorldModelError::from)?;
                let p = poses[object];
                let syms = match (symmetric, &state.scene.objects[object].primitive) {
                    (true, Primitive::Box { half_extents }) => box_symmetries(half_extents),
                    _ => vec![Matrix3::identity()],
                };
                let rot = syms
                    .iter()
                    .map(|s| rotation_distance(&p.rotation, &(target.rotation * s)))
                    .fold(f64::INFINITY, f64::min);
                Ok((p.translation - target.translation).norm() <= tol_pos && rot <= tol_rot)
            }
        }
    }
}

/// Proper rotations among signed axis permutations that map a box with the
/// given half extents onto itself.
pub fn box_symmetries(half: &Vector3<f64>) -> Vec<Matrix3<f64>> {
    const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
    let mut out = Vec::new();
    for perm in PERMS {
        if (0..3).any(|i| (half[perm[i]] - half[i]).abs() > 1e-12) {
            continue;
        }
        for signs in 0..8u8 {
            let mut m = Matrix3::zeros();
            for i in 0..3 {
                m[(i, perm[i])] = if signs >> i & 1 == 1 { -1.0 } else { 1.0 };
            }
            if m.determinant() > 0.0 {
                out.push(m);
            }
        }
    }
    out
}

/// The kinematic scene the planner acts in.
#[derive(Debug, Clone)]
pub struct OracleEnv {
    pub chains: Vec<KinematicChain>,
    pub camera: CameraModel,
    pub ik: IkConfig,
    pub sim: SimConfig,
    pub state: SimState,
}

impl OracleEnv {
    pub fn observe(&self) -> Result<Observation, PlanError> {
        let (frame, _) = self.state.render(&self.chains, &self.camera).map_err(WorldModelError::from)?;
        Ok(Observation {
            frame,
            q: self.state.qs.clone(),
            grippers: self.state.grippers.clone(),
        })
    }

    /// Executes one command per arm.
    pub fn step(&mut self, row: &[ManipulatorAction]) -> Result<(), PlanError> {
        let hold: Vec<ManipulatorAction> = self
            .state
            .qs
            .iter()
            .zip(&self.state.grippers)
            .map(|(q, &g)| ManipulatorAction::Joint { q: q.values.clone(), gripper: g })
            .collect();
        let seq = ActionSequence::new(vec![hold, row.to_vec()]).map_err(WorldModelError::from)?;
        let states = actions_to_joint_states(&seq, &self.chains, &self.state.qs, &self.ik).map_err(WorldModelError::from)?;
        let grips = grippers(&seq);
        self.state
            .step(&self.chains, states[1].clone(), grips[1].clone(), &self.sim)
            .map_err(WorldModelError::from)?;
        Ok(())
    }

    /// The oracle world model for the current scene.
    pub fn world(&self) -> OracleWorld {
        OracleWorld {
            chains: self.chains.clone(),
            camera: self.camera,
            ik: self.ik,
            sim: self.sim,
            state: self.state.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MpcConfig {
    pub max_cycles: usize,
    /// Subgoal switch threshold; `None` uses 1.5× the codec floor of the
    /// first goal.
    pub switch_threshold: Option<f64>,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            max_cycles: 20,
            switch_threshold: None,
        }
    }
}

/// Latent loss of a goal against its own codec round trip, times 1.5.
pub fn switch_threshold(goal: &RgbFrame) -> Result<f64, PlanError> {
    let video = RgbVideo::new(vec![goal.clone()]).map_err(WorldModelError::from)?;
    let z = codec::encode_with(Exec::Sequential, &FloatVideo::from_rgb(&video))?;
    let back = codec::decode_with(Exec::Sequential, &z)?.to_rgb_frame(0);
    Ok(1.5 * latent_l1(&z, &frame_latent(&back)?))
}

/// Where the candidate action sequences come from.
pub enum Proposal<'a> {
    Cem(PlanConfig),
    /// Externally proposed delta plans, reranked by the world model.
    Rerank(&'a (dyn Fn(&Observation, usize) -> Vec<Vec<PlanStep>> + Sync)),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpcOutcome {
    pub success: bool,
    /// Cycles run before termination.
    pub cycles: usize,
    pub executed: Vec<PlanStep>,
    /// Observed frames, starting with the initial one.
    pub frames: Vec<RgbFrame>,
    /// Cycle at which the loop moved to the next subgoal.
    pub switches: Vec<usize>,
    pub telemetry: Vec<Vec<IterationLog>>,
}

fn cycle_seed(seed: u64, cycle: usize) -> u64 {
    seed ^ (cycle as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Receding-horizon CEM. With `world = None` the planner uses the oracle
/// world synced to the environment every cycle.
#[allow(clippy::too_many_arguments)]
pub fn mpc_loop(
    exec: Exec,
    world: Option<&dyn WorldModel>,
    env: &mut OracleEnv,
    goals: &[RgbFrame],
    success: &Success,
    cfg: &PlanConfig,
    mpc: &MpcConfig,
    seed: u64,
) -> Result<MpcOutcome, PlanError> {
    mpc_loop_with(exec, world, env, goals, success, Proposal::Cem(*cfg), mpc, seed)
}

/// [`mpc_loop`] with any proposal source.
#[allow(clippy::too_many_arguments)]
pub fn mpc_loop_with(
    exec: Exec,
    world: Option<&dyn WorldModel>,
    env: &mut OracleEnv,
    goals: &[RgbFrame],
    success: &Success,
    proposal: Proposal<'_>,
    mpc: &MpcConfig,
    seed: u64,
) -> Result<MpcOutcome, PlanError> {
    if goals.is_empty() {
        return Err(PlanError::Config("at least one goal image is required".into()));
    }
    if let Proposal::Cem(cfg) = &proposal {
        cfg.validate()?;
    }
    let mut out = MpcOutcome {
        success: false,
        cycles: 0,
        executed: Vec::new(),
        frames: Vec::new(),
        switches: Vec::new(),
        telemetry: Vec::new(),
    };
    if mpc.max_cycles == 0 {
        return Ok(out);
    }
    let latents = goals.iter().map(frame_latent).collect::<Result<Vec<_>, _>>()?;
    let thresholds = goals
        .iter()
        .map(|g| mpc.switch_threshold.map_or_else(|| switch_threshold(g), Ok))
        .collect::<Result<Vec<_>, _>>()?;
    let mut sub = 0;
    let mut obs = env.observe()?;
    out.frames.push(obs.frame.clone());
    for cycle in 0..mpc.max_cycles {
        if success.check(&env.state, &env.chains)? {
            out.success = true;
            out.cycles = cycle;
            return Ok(out);
        }
        if sub + 1 < goals.len() && latent_l1(&frame_latent(&obs.frame)?, &latents[sub]) < thresholds[sub] {
            sub += 1;
            out.switches.push(cycle);
        }
        let synced;
        let w: &dyn WorldModel = match world {
            Some(w) => w,
            None => {
                synced = env.world();
                &synced
            }
        };
        let first = match &proposal {
            Proposal::Cem(cfg) => {
                let r = plan_latent(exec, w, &obs, &latents[sub], cfg, cycle_seed(seed, cycle))?;
                out.telemetry.push(r.telemetry);
                r.first
            }
            Proposal::Rerank(propose) => {
                let plans = propose(&obs, cycle);
                let losses = exec.map(&plans, |p| {
                    let steps: Vec<_> = p.iter().map(|s| (s.delta(), s.open())).collect();
                    score_candidate(w, &obs, &plan_to_actions(&env.chains, &obs, &steps), &latents[sub])
                });
                let best = losses
                    .iter()
                    .enumerate()
                    .filter_map(|(i, l)| l.as_ref().ok().filter(|v| v.is_finite()).map(|&v| (i, v)))
                    .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
                let Some((i, _)) = best else {
                    return Err(PlanError::InfeasiblePlan {
                        iteration: cycle,
                        last: "no proposal could be scored".into(),
                    });
                };
                plans[i][0]
            }
        };
        let row = plan_to_actions(&env.chains, &obs, &[(first.delta(), first.open())]).steps[1].clone();
        env.step(&row)?;
        out.executed.push(first);
        obs = env.observe()?;
        out.frames.push(obs.frame.clone());
        out.cycles = cycle + 1;
    }
    out.success = success.check(&env.state, &env.chains)?;
    Ok(out)
}
