use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PlanError;
use crate::actions::{
    actions_to_joint_states, grippers, mask_for_step, ActionSequence, PolicyKind, SceneSample, SceneSampler, ScriptedPolicy,
    SimState,
};
use crate::exec::{stream_rng, Exec};
use crate::kinematics::{IkConfig, JointState, KinematicChain};
use crate::metrics::{key_arm, MetricsError, SuccessTable};
use crate::render::{CameraModel, RgbFrame};
use crate::world_model::{WorldModel, WorldModelError};

/// A scripted policy emitting action chunks of `chunk` frames.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub policy: ScriptedPolicy,
    pub chunk: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyRollout {
    /// The initial frame followed by the last frame of every chunk.
    pub frames: Vec<RgbFrame>,
    pub q: Vec<JointState>,
    pub success: bool,
}

/// Splits `actions` into chunks of `k` frames that overlap by one, so each
/// chunk starts where the previous one ended.
pub fn chunks(actions: &ActionSequence, k: usize) -> Vec<ActionSequence> {
    let n = actions.len();
    if n <= 1 {
        return vec![actions.clone()];
    }
    let stride = k.saturating_sub(1).max(1);
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < n {
        let end = (start + k.max(2)).min(n);
        out.push(ActionSequence {
            steps: actions.steps[start..end].to_vec(),
        });
        start += stride;
    }
    out
}

/// Feeds the policy's chunks through `world` autoregressively: each chunk
/// is padded to `t_wm` frames by repeating its final action and the last
/// generated frame becomes the next input. `judge` decides success on the
/// final frame.
#[allow(clippy::too_many_arguments)]
pub fn policy_eval_rollout(
    world: &dyn WorldModel,
    spec: &PolicySpec,
    sample: &SceneSample,
    initial: &RgbFrame,
    horizon: usize,
    t_wm: usize,
    ik: &IkConfig,
    judge: &dyn Fn(&RgbFrame) -> bool,
    rng: &mut ChaCha8Rng,
) -> Result<PolicyRollout, PlanError> {
    if spec.chunk == 0 || spec.chunk > t_wm {
        return Err(PlanError::Config(format!("chunk length {} must lie in 1..={t_wm}", spec.chunk)));
    }
    let chains = world.chains();
    let actions = spec.policy.actions(sample, chains, horizon, rng);
    let mut frames = vec![initial.clone()];
    let mut q = sample.q0.clone();
    for chunk in chunks(&actions, spec.chunk) {
        let padded = chunk.padded(t_wm);
        let video = world.predict(frames.last().expect("initial frame"), &q, &padded)?;
        q = actions_to_joint_states(&padded, chains, &q, ik)
            .map_err(WorldModelError::from)?
            .pop()
            .expect("non-empty chunk");
        frames.push(video.frames.last().expect("non-empty prediction").clone());
    }
    let success = judge(frames.last().expect("initial frame"));
    Ok(PolicyRollout { frames, q, success })
}

/// Monte Carlo settings for scoring a policy family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    pub episodes: usize,
    /// Frames per episode.
    pub horizon: usize,
    /// Native clip length of the world model.
    pub t_wm: usize,
    /// Tool-to-goal distance (m) counted as real success. The default is
    /// about one codec block at the toy camera, the finest offset a
    /// generated frame resolves.
    pub tolerance: f64,
    /// Arm-mask IoU against the goal silhouette counted as proxy success.
    pub iou_threshold: f64,
    pub seed: u64,
    pub sampler: SceneSampler,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            episodes: 20,
            horizon: 9,
            t_wm: 5,
            tolerance: 0.32,
            iou_threshold: 0.5,
            seed: 0,
            sampler: SceneSampler::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub real: bool,
    pub proxy: bool,
    /// Final tool-to-goal distance (m) of the real rollout.
    pub distance: f64,
    /// Arm-mask IoU of the final generated frame against the goal silhouette.
    pub score: f64,
}

/// Real and proxy success of every policy over the same episode scenes.
/// Real success runs the policy open loop through the kinematics and
/// checks the tool against the task goal; proxy success rolls the policy
/// through `world` and compares the keyed arm of the final generated frame
/// with the silhouette of the arm at the goal.
pub fn evaluate_family(
    exec: Exec,
    world: &dyn WorldModel,
    specs: &[PolicySpec],
    camera: &CameraModel,
    ik: &IkConfig,
    cfg: &FamilyConfig,
) -> Result<Vec<Vec<Episode>>, PlanError> {
    let chains = world.chains();
    let scenes = exec.try_map_range(cfg.episodes, |e| episode_scene(chains, camera, ik, cfg, e))?;
    specs
        .iter()
        .map(|spec| {
            exec.try_map(&scenes, |scene| {
                let mut rng = stream_rng(cfg.seed, 1 << 32 | scene.index as u64);
                let actions = spec.policy.actions(&scene.sample, chains, cfg.horizon, &mut rng.clone());
                let end = actions_to_joint_states(&actions, chains, &scene.sample.q0, ik).map_err(WorldModelError::from)?;
                let end = end.last().expect("non-empty episode");
                let tool = chains[0].tool_pose(&chains[0].fk_unchecked(&end[0]), &chains[0].end_effector());
                let distance = (tool.translation - scene.sample.tasks[0].goal.translation).norm();
                let judge = |f: &RgbFrame| iou(&key_arm(f), &scene.goal_mask) >= cfg.iou_threshold;
                let out =
                    policy_eval_rollout(world, spec, &scene.sample, &scene.initial, cfg.horizon, cfg.t_wm, ik, &judge, &mut rng)?;
                Ok(Episode {
                    real: distance <= cfg.tolerance,
                    proxy: out.success,
                    distance,
                    score: iou(&key_arm(out.frames.last().expect("initial frame")), &scene.goal_mask),
                })
            })
        })
        .collect()
}

/// Success rates of `evaluate_family` output as a table.
pub fn success_table(episodes: &[Vec<Episode>]) -> Result<SuccessTable, MetricsError> {
    let rate = |v: &[Episode], f: fn(&Episode) -> bool| v.iter().filter(|e| f(e)).count() as f64 / v.len().max(1) as f64;
    SuccessTable::new(
        episodes.iter().map(|v| rate(v, |e| e.real)).collect(),
        episodes.iter().map(|v| rate(v, |e| e.proxy)).collect(),
    )
}

struct EpisodeScene {
    index: usize,
    sample: SceneSample,
    initial: RgbFrame,
    goal_mask: Vec<bool>,
}

fn episode_scene(
    chains: &[KinematicChain],
    camera: &CameraModel,
    ik: &IkConfig,
    cfg: &FamilyConfig,
    index: usize,
) -> Result<EpisodeScene, PlanError> {
    let mut rng = stream_rng(cfg.seed, index as u64);
    let expert = ScriptedPolicy::new(PolicyKind::Reach, 0.0);
    for _ in 0..cfg.sampler.max_retries {
        let Some(sample) = cfg.sampler.sample(chains, PolicyKind::Reach, &mut rng) else {
            continue;
        };
        let actions = expert.actions(&sample, chains, cfg.horizon, &mut rng.clone());
        let Ok(states) = actions_to_joint_states(&actions, chains, &sample.q0, ik) else {
            continue;
        };
        let grips = grippers(&actions);
        let state = SimState::new(sample.scene.clone(), sample.movable.clone(), sample.q0.clone(), grips[0].clone());
        let initial = state.render(chains, camera).map_err(WorldModelError::from)?.0;
        let goal = mask_for_step(chains, states.last().expect("non-empty"), grips.last().expect("non-empty"), camera)
            .map_err(WorldModelError::from)?;
        return Ok(EpisodeScene {
            index,
            sample,
            initial,
            goal_mask: goal.bits,
        });
    }
    Err(PlanError::Config(format!("episode {index}: no feasible reach scene")))
}

fn iou(a: &[bool], b: &[bool]) -> f64 {
    let inter = a.iter().zip(b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(b).filter(|(x, y)| **x || **y).count();
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

