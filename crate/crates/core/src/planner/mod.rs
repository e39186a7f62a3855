//! Cross-entropy-method MPC over tool-pose deltas, scored by latent
//! similarity to a goal image.

pub mod mpc;
pub mod policy_eval;
pub mod tasks;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::actions::{ActionSequence, ManipulatorAction};
use crate::codec::{self, CodecError, FloatVideo, LatentVideo};
use crate::exec::{stream_rng, Exec};
use crate::kinematics::{rpy_to_rotation, JointState, KinematicChain, Pose};
use crate::render::{RgbFrame, RgbVideo};
use crate::world_model::{WorldModel, WorldModelError};

pub use mpc::{box_symmetries, mpc_loop, mpc_loop_with, switch_threshold, MpcConfig, MpcOutcome, OracleEnv, Proposal, Success};
pub use policy_eval::{evaluate_family, policy_eval_rollout, success_table, Episode, FamilyConfig, PolicyRollout, PolicySpec};

/// Search dimensions: Δx, Δy, Δz (m), Δroll, Δpitch, Δyaw (rad).
pub const DOF: usize = 6;
pub const PLAN_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum PlanError {
    #[error(transparent)]
    World(#[from] WorldModelError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("config: {0}")]
    Config(String),
    #[error("every candidate failed in iteration {iteration}: {last}")]
    InfeasiblePlan { iteration: usize, last: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Joint,
    RotationFirst,
    Reallocated,
    AxisWise,
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "joint" => Ok(Strategy::Joint),
            "rotation_first" => Ok(Strategy::RotationFirst),
            "reallocated" => Ok(Strategy::Reallocated),
            "axis_wise" => Ok(Strategy::AxisWise),
            _ => Err(format!("unknown strategy {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlanConfig {
    pub horizon: usize,
    pub iterations: usize,
    pub samples: usize,
    pub elites: usize,
    pub strategy: Strategy,
    /// Initial standard deviation of the translation deltas (m).
    pub translation_step: f64,
    /// Initial standard deviation of the rotation deltas (rad).
    pub rotation_step: f64,
    /// Searched dimensions; inactive ones stay at zero.
    pub active: [bool; DOF],
    /// σ never drops below this fraction of the initial step.
    pub floor_fraction: f64,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            iterations: 5,
            samples: 64,
            elites: 8,
            strategy: Strategy::Joint,
            translation_step: 0.05,
            rotation_step: 20f64.to_radians(),
            active: [true; DOF],
            floor_fraction: 0.1,
        }
    }
}

impl PlanConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::Config(m.into()));
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be at least 1");
        }
        if self.elites == 0 || self.elites > self.samples {
            return bad("elites must lie in 1..=samples");
        }
        if !(self.translation_step > 0.0 && self.rotation_step > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.floor_fraction > 0.0 && self.floor_fraction <= 1.0) {
            return bad("floor_fraction must lie in (0, 1]");
        }
        Ok(())
    }

    fn steps(&self) -> [f64; DOF] {
        let (t, r) = (self.translation_step, self.rotation_step);
        [t, t, t, r, r, r]
    }
}

/// One sampled action sequence in delta form.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub deltas: Vec<[f64; DOF]>,
    /// `true` means open.
    pub grips: Vec<bool>,
}

/// Per-step diagonal Gaussian over deltas and Bernoulli over the gripper.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemState {
    pub mu: Vec<[f64; DOF]>,
    pub sigma: Vec<[f64; DOF]>,
    pub pi: Vec<f64>,
    pub floor: [f64; DOF],
}

impl CemState {
    pub fn new(cfg: &PlanConfig) -> Self {
        let steps = cfg.steps();
        let mut sigma = [0.0; DOF];
        let mut floor = [0.0; DOF];
        for d in 0..DOF {
            if cfg.active[d] {
                sigma[d] = steps[d];
                floor[d] = cfg.floor_fraction * steps[d];
            }
        }
        Self {
            mu: vec![[0.0; DOF]; cfg.horizon],
            sigma: vec![sigma; cfg.horizon],
            pi: vec![0.5; cfg.horizon],
            floor,
        }
    }

    pub fn horizon(&self) -> usize {
        self.mu.len()
    }

    /// Frozen dimensions are set to `mu` but still consume their draws.
    pub fn sample(&self, rng: &mut ChaCha8Rng, frozen: &[bool; DOF]) -> Candidate {
        let mut deltas = Vec::with_capacity(self.horizon());
        let mut grips = Vec::with_capacity(self.horizon());
        for h in 0..self.horizon() {
            let mut d = [0.0; DOF];
            for k in 0..DOF {
                let n: f64 = rng.sample(StandardNormal);
                d[k] = if frozen[k] { self.mu[h][k] } else { self.mu[h][k] + self.sigma[h][k] * n };
            }
            deltas.push(d);
            grips.push(rng.random::<f64>() < self.pi[h]);
        }
        Candidate { deltas, grips }
    }

    /// Refits mean, spread and gripper frequency to `elites`. Frozen and
    /// inactive dimensions keep their current values.
    pub fn refit(&mut self, elites: &[&Candidate], frozen: &[bool; DOF]) {
        if elites.is_empty() {
            return;
        }
        let n = elites.len() as f64;
        for h in 0..self.horizon() {
            for k in 0..DOF {
                if frozen[k] || self.floor[k] == 0.0 {
                    continue;
                }
                let mean = elites.iter().map(|c| c.deltas[h][k]).sum::<f64>() / n;
                let var = elites.iter().map(|c| (c.deltas[h][k] - mean).powi(2)).sum::<f64>() / n;
                self.mu[h][k] = mean;
                self.sigma[h][k] = var.sqrt().max(self.floor[k]);
            }
            self.pi[h] = elites.iter().filter(|c| c.grips[h]).count() as f64 / n;
        }
        debug_assert!(self.check_refit(elites, frozen));
    }

    fn check_refit(&self, elites: &[&Candidate], frozen: &[bool; DOF]) -> bool {
        let n = elites.len() as f64;
        (0..self.horizon()).all(|h| {
            let pi = elites.iter().map(|c| if c.grips[h] { 1.0 } else { 0.0 }).sum::<f64>() / n;
            (0..DOF).all(|k| {
                let mut mean = 0.0;
                for c in elites {
                    mean += c.deltas[h][k] / n;
                }
                frozen[k] || self.floor[k] == 0.0 || (self.mu[h][k] - mean).abs() <= 1e-9 * (1.0 + mean.abs())
            }) && (self.pi[h] - pi).abs() <= 1e-12
                && self.sigma[h].iter().zip(&self.floor).all(|(s, f)| s >= f)
        })
    }

    /// Plan read off the current distribution.
    pub fn plan(&self) -> Vec<PlanStep> {
        (0..self.horizon())
            .map(|h| PlanStep::from_delta(&self.mu[h], self.pi[h] >= 0.5))
            .collect()
    }
}

/// One step of a serialized plan; `g` is 1 for open, 0 for closed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanStep {
    pub dx: f64,
    pub dy: f64,
    pub dz: f64,
    pub dr: f64,
    pub dp: f64,
    pub dyaw: f64,
    pub g: f64,
}

impl PlanStep {
    pub fn from_delta(d: &[f64; DOF], open: bool) -> Self {
        Self {
            dx: d[0],
            dy: d[1],
            dz: d[2],
            dr: d[3],
            dp: d[4],
            dyaw: d[5],
            g: if open { 1.0 } else { 0.0 },
        }
    }

    pub fn delta(&self) -> [f64; DOF] {
        [self.dx, self.dy, self.dz, self.dr, self.dp, self.dyaw]
    }

    pub fn open(&self) -> bool {
        self.g >= 0.5
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub version: u32,
    pub steps: Vec<PlanStep>,
}

pub fn write_plan<W: std::io::Write>(steps: &[PlanStep], w: W) -> Result<(), PlanError> {
    let file = PlanFile {
        version: PLAN_VERSION,
        steps: steps.to_vec(),
    };
    serde_json::to_writer_pretty(w, &file)?;
    Ok(())
}

pub fn read_plan<R: std::io::Read>(r: R) -> Result<Vec<PlanStep>, PlanError> {
    let file: PlanFile = serde_json::from_reader(r)?;
    if file.version != PLAN_VERSION {
        return Err(PlanError::Config(format!("unsupported plan version {}", file.version)));
    }
    Ok(file.steps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iter: usize,
    pub best_loss: f64,
    pub mean_elite_loss: f64,
}

pub fn write_telemetry_csv<W: std::io::Write>(log: &[IterationLog], mut w: W) -> std::io::Result<()> {
    writeln!(w, "iter,best_loss,mean_elite_loss")?;
    for l in log {
        writeln!(w, "{},{},{}", l.iter, l.best_loss, l.mean_elite_loss)?;
    }
    Ok(())
}

/// What the planner sees of the robot.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub frame: RgbFrame,
    pub q: Vec<JointState>,
    pub grippers: Vec<f64>,
}

impl Observation {
    pub fn tool_poses(&self, chains: &[KinematicChain]) -> Vec<Pose> {
        chains
            .iter()
            .zip(&self.q)
            .map(|(c, q)| c.tool_pose(&c.fk_unchecked(q), &c.end_effector()))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanResult {
    pub first: PlanStep,
    pub plan: Vec<PlanStep>,
    pub telemetry: Vec<IterationLog>,
    pub state: CemState,
}

/// Applies `delta` to a tool pose: translation in the world frame, rotation
/// premultiplied.
pub fn apply_delta(pose: &Pose, d: &[f64; DOF]) -> Pose {
    Pose::new(
        rpy_to_rotation(d[3], d[4], d[5]) * pose.rotation,
        pose.translation + nalgebra::Vector3::new(d[0], d[1], d[2]),
    )
}

/// Absolute commands for arm 0 following `steps` from the observed pose.
/// Step 0 repeats the current state; other arms hold still.
pub fn plan_to_actions(chains: &[KinematicChain], obs: &Observation, steps: &[([f64; DOF], bool)]) -> ActionSequence {
    let tools = obs.tool_poses(chains);
    let hold: Vec<ManipulatorAction> = tools
        .iter()
        .zip(&obs.grippers)
        .map(|(p, &g)| ManipulatorAction::from_pose(p, g))
        .collect();
    let mut out = vec![hold.clone()];
    let mut pose = tools[0];
    for (d, open) in steps {
        pose = apply_delta(&pose, d);
        let mut row = hold.clone();
        row[0] = ManipulatorAction::from_pose(&pose, if *open { 1.0 } else { 0.0 });
        out.push(row);
    }
    ActionSequence { steps: out }
}

fn candidate_actions(chains: &[KinematicChain], obs: &Observation, c: &Candidate) -> ActionSequence {
    let steps: Vec<_> = c.deltas.iter().copied().zip(c.grips.iter().copied()).collect();
    plan_to_actions(chains, obs, &steps)
}

/// Latent of a single frame.
pub fn frame_latent(frame: &RgbFrame) -> Result<LatentVideo, PlanError> {
    let video = RgbVideo::new(vec![frame.clone()]).map_err(WorldModelError::from)?;
    Ok(codec::encode_with(Exec::Sequential, &FloatVideo::from_rgb(&video))?)
}

/// Mean absolute latent difference.
pub fn latent_l1(a: &LatentVideo, b: &LatentVideo) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data.len().max(1) as f64
}

/// Mean latent L1 between the last predicted frame and the goal.
pub fn score_candidate(
    world: &dyn WorldModel,
    obs: &Observation,
    actions: &ActionSequence,
    goal: &LatentVideo,
) -> Result<f64, PlanError> {
    let video = world.predict(&obs.frame, &obs.q, actions)?;
    let last = video.frames.last().ok_or_else(|| PlanError::Config("empty prediction".into()))?;
    let z = frame_latent(last)?;
    if z.shape() != goal.shape() {
        return Err(PlanError::Config("goal image does not match the camera resolution".into()));
    }
    Ok(latent_l1(&z, goal))
}

/// One CEM refinement: how many samples, which dimensions are frozen for
/// which samples.
#[derive(Debug, Clone, Copy)]
struct IterSpec {
    samples: usize,
    frozen: [bool; DOF],
    /// Samples from this index on also freeze translation.
    split: usize,
}

const TRANSLATION: [bool; DOF] = [true, true, true, false, false, false];

fn schedule(cfg: &PlanConfig) -> Vec<IterSpec> {
    let t = cfg.iterations;
    let s = cfg.samples;
    let plain = IterSpec {
        samples: s,
        frozen: [false; DOF],
        split: usize::MAX,
    };
    match cfg.strategy {
        Strategy::Joint => vec![plain; t],
        Strategy::RotationFirst => (0..t)
            .map(|i| if i < t.div_ceil(2) { IterSpec { frozen: TRANSLATION, ..plain } } else { plain })
            .collect(),
        Strategy::Reallocated => vec![IterSpec { samples: 2 * s, frozen: [false; DOF], split: s }; t],
        Strategy::AxisWise => [5, 4, 3]
            .iter()
            .flat_map(|&free| {
                let mut frozen = [false, false, false, true, true, true];
                frozen[free] = false;
                vec![IterSpec { frozen, ..plain }; t]
            })
            .collect(),
    }
}

/// Joint-strategy CEM.
pub fn cem_plan(
    exec: Exec,
    world: &dyn WorldModel,
    obs: &Observation,
    goal: &RgbFrame,
    cfg: &PlanConfig,
    seed: u64,
) -> Result<PlanResult, PlanError> {
    plan_with_strategy(exec, world, obs, goal, &PlanConfig { strategy: Strategy::Joint, ..*cfg }, seed)
}

pub fn plan_with_strategy(
    exec: Exec,
    world: &dyn WorldModel,
    obs: &Observation,
    goal: &RgbFrame,
    cfg: &PlanConfig,
    seed: u64,
) -> Result<PlanResult, PlanError> {
    let goal = frame_latent(goal)?;
    plan_latent(exec, world, obs, &goal, cfg, seed)
}

/// CEM against a precomputed goal latent.
pub fn plan_latent(
    exec: Exec,
    world: &dyn WorldModel,
    obs: &Observation,
    goal: &LatentVideo,
    cfg: &PlanConfig,
    seed: u64,
) -> Result<PlanResult, PlanError> {
    cfg.validate()?;
    let mut state = CemState::new(cfg);
    if cfg.strategy == Strategy::Reallocated {
        for s in state.sigma.iter_mut() {
            for x in &mut s[3..] {
                *x *= 2.0;
            }
        }
    }
    let chains = world.chains();
    let mut telemetry = Vec::new();
    for (iter, spec) in schedule(cfg).into_iter().enumerate() {
        let mut rng = stream_rng(seed, iter as u64);
        let candidates: Vec<Candidate> = (0..spec.samples)
            .map(|i| {
                let mut frozen = spec.frozen;
                if i >= spec.split {
                    for (f, t) in frozen.iter_mut().zip(TRANSLATION) {
                        *f |= t;
                    }
                }
                state.sample(&mut rng, &frozen)
            })
            .collect();
        let losses = exec.map(&candidates, |c| score_candidate(world, obs, &candidate_actions(chains, obs, c), goal));
        let mut order: Vec<(usize, f64)> = Vec::new();
        let mut last_err = None;
        for (i, l) in losses.into_iter().enumerate() {
            match l {
                Ok(v) if v.is_finite() => order.push((i, v)),
                Ok(v) => last_err = Some(format!("non-finite loss {v}")),
                Err(e) => last_err = Some(e.to_string()),
            }
        }
        if order.is_empty() {
            return Err(PlanError::InfeasiblePlan {
                iteration: iter,
                last: last_err.unwrap_or_default(),
            });
        }
        order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        order.truncate(cfg.elites);
        let elites: Vec<&Candidate> = order.iter().map(|&(i, _)| &candidates[i]).collect();
        state.refit(&elites, &spec.frozen);
        telemetry.push(IterationLog {
            iter,
            best_loss: order[0].1,
            mean_elite_loss: order.iter().map(|o| o.1).sum::<f64>() / order.len() as f64,
        });
    }
    let plan = state.plan();
    Ok(PlanResult {
        first: plan[0],
        plan,
        telemetry,
        state,
    })
}
