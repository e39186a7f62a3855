//! World models: the kinematic oracle and the learned latent predictor.

pub mod predictor;
pub mod train;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::actions::{
    actions_to_joint_states, grippers, mask_for_step, simulate, ActionError, ActionSequence, SimConfig, SimState,
};
use crate::codec::{self, CodecError, FloatVideo, LatentVideo, Provenance};
use crate::exec::{stream_rng, Exec};
use crate::kinematics::{IkConfig, JointState, KinematicChain};
use crate::objectives::{NoiseSchedule, ObjectiveError};
use crate::render::{CameraModel, MaskVideo, RenderError, RgbFrame, RgbVideo};

pub use predictor::{predictor_forward, Cond, Conditioning, PredictorConfig, PredictorParams};
pub use train::{train, EpochLoss, LatentScales, LossLog, TrainConfig};

#[derive(Debug, thiserror::Error)]
pub enum WorldModelError {
    #[error(transparent)]
    Action(#[from] ActionError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error("shape: {0}")]
    Shape(String),
    #[error("config: {0}")]
    Config(String),
    #[error("parameters: {0}")]
    Params(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFiniteLoss { epoch: usize, step: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Maps an initial frame and an action sequence to the video of its
/// consequences. `q` is the robot's current joint state, used to seed
/// inverse kinematics.
pub trait WorldModel: Sync {
    fn predict(&self, initial: &RgbFrame, q: &[JointState], actions: &ActionSequence) -> Result<RgbVideo, WorldModelError>;

    fn camera(&self) -> &CameraModel;

    fn chains(&self) -> &[KinematicChain];
}

/// Rolls the kinematic scene forward under `actions` and renders every
/// frame, together with the embodiment masks.
pub fn oracle_predict(
    state: &SimState,
    chains: &[KinematicChain],
    cam: &CameraModel,
    actions: &ActionSequence,
    ik: &IkConfig,
    sim: &SimConfig,
) -> Result<(RgbVideo, MaskVideo), WorldModelError> {
    let states = actions_to_joint_states(actions, chains, &state.qs, ik)?;
    let grips = grippers(actions);
    let mut initial = state.clone();
    initial.qs = states[0].clone();
    initial.grippers = grips[0].clone();
    let video = simulate(&initial, chains, &states, &grips, sim, cam)?;
    let masks = (0..states.len())
        .map(|t| mask_for_step(chains, &states[t], &grips[t], cam))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((video, MaskVideo::new(masks)?))
}

/// The oracle as a world model over a fixed scene. The initial frame is
/// ignored: the scene state is authoritative.
#[derive(Debug, Clone)]
pub struct OracleWorld {
    pub chains: Vec<KinematicChain>,
    pub camera: CameraModel,
    pub ik: IkConfig,
    pub sim: SimConfig,
    pub state: SimState,
}

impl WorldModel for OracleWorld {
    fn predict(&self, _initial: &RgbFrame, q: &[JointState], actions: &ActionSequence) -> Result<RgbVideo, WorldModelError> {
        let mut state = self.state.clone();
        state.qs = q.to_vec();
        Ok(oracle_predict(&state, &self.chains, &self.camera, actions, &self.ik, &self.sim)?.0)
    }

    fn camera(&self) -> &CameraModel {
        &self.camera
    }

    fn chains(&self) -> &[KinematicChain] {
        &self.chains
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub steps: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { steps: 10, seed: 0 }
    }
}

/// Everything sampling needs besides the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub scales: LatentScales,
    pub tau_max: usize,
    pub sampler: SamplerConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            scales: LatentScales::default(),
            tau_max: 1000,
            sampler: SamplerConfig::default(),
        }
    }
}

impl ModelSettings {
    pub fn from_train(cfg: &TrainConfig, sampler: SamplerConfig) -> Self {
        Self {
            scales: cfg.scales,
            tau_max: cfg.tau_max,
            sampler,
        }
    }
}

/// Deterministic reverse iteration in model space. The first latent frame
/// is pinned to `z_init` in every clean estimate.
pub fn ddim_sample(
    params: &PredictorParams,
    z_init: &LatentVideo,
    cond: Cond<'_>,
    shape: [usize; 4],
    schedule: &NoiseSchedule,
    sampler: &SamplerConfig,
) -> Result<LatentVideo, WorldModelError> {
    if sampler.steps == 0 {
        return Err(WorldModelError::Config("sampler needs at least one step".into()));
    }
    let [t, h, w, _] = shape;
    let mut rng = stream_rng(sampler.seed, 0);
    let mut z = LatentVideo::zeros(t, h, w);
    for v in z.data.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let top = schedule.len() - 1;
    let taus: Vec<usize> = (0..sampler.steps).map(|i| top * (sampler.steps - i) / sampler.steps).collect();
    let first = z_init.frame_len();
    let mut x0 = z.clone();
    for (i, &tau) in taus.iter().enumerate() {
        let alpha = schedule.alpha(tau);
        x0 = predictor::forward_x0(params, z_init, cond, &z, alpha)?.0;
        x0.data[..first].copy_from_slice(&z_init.data);
        let next = taus.get(i + 1).map_or(1.0, |&t| schedule.alpha(t));
        let (a, b) = (alpha.sqrt(), (1.0 - alpha).sqrt());
        let (an, bn) = (next.sqrt(), (1.0 - next).sqrt());
        for j in 0..z.data.len() {
            let eps = if b > 0.0 { (z.data[j] - a * x0.data[j]) / b } else { 0.0 };
            z.data[j] = an * x0.data[j] + bn * eps;
        }
    }
    Ok(x0.with_provenance(Provenance::Predicted))
}

/// Renders masks from `actions`, samples the video latent and decodes it.
/// Frame 0 of the output is `initial` itself.
#[allow(clippy::too_many_arguments)]
pub fn learned_predict(
    params: &PredictorParams,
    settings: &ModelSettings,
    initial: &RgbFrame,
    actions: &ActionSequence,
    chains: &[KinematicChain],
    q: &[JointState],
    ik: &IkConfig,
    cam: &CameraModel,
) -> Result<RgbVideo, WorldModelError> {
    let states = actions_to_joint_states(actions, chains, q, ik)?;
    let grips = grippers(actions);
    let masks = (0..states.len())
        .map(|t| mask_for_step(chains, &states[t], &grips[t], cam))
        .collect::<Result<Vec<_>, _>>()?;
    let masks = MaskVideo::new(masks)?;
    if (initial.width, initial.height) != ({ cam.width }, { cam.height }) {
        return Err(WorldModelError::Shape("initial frame does not match the camera resolution".into()));
    }
    let shape = codec::latent_shape(actions.len(), initial.height, initial.width)?;
    let s = settings.scales;
    let z_init = train::scale(&codec::encode(&FloatVideo::from_rgb(&RgbVideo::new(vec![initial.clone()])?))?, s.video);
    let mask = train::scale(&codec::encode_masks(&masks)?, s.mask);
    let action_vec = actions.to_rows()?.concat();
    let cond = match params.config.conditioning {
        Conditioning::Mask => Cond::Mask(&mask),
        Conditioning::Coordinates { .. } => Cond::Coordinates(&action_vec),
        Conditioning::None => Cond::None,
    };
    let schedule = NoiseSchedule::cosine(settings.tau_max);
    let z = ddim_sample(params, &z_init, cond, shape, &schedule, &settings.sampler)?;
    let video = codec::decode_with(Exec::Sequential, &train::scale(&z, 1.0 / s.video))?;
    let mut out = video.to_rgb();
    out.frames[0] = initial.clone();
    Ok(out)
}

/// The learned predictor as a world model.
#[derive(Debug, Clone)]
pub struct LearnedWorld {
    pub params: PredictorParams,
    pub settings: ModelSettings,
    pub chains: Vec<KinematicChain>,
    pub camera: CameraModel,
    pub ik: IkConfig,
}

impl WorldModel for LearnedWorld {
    fn predict(&self, initial: &RgbFrame, q: &[JointState], actions: &ActionSequence) -> Result<RgbVideo, WorldModelError> {
        learned_predict(&self.params, &self.settings, initial, actions, &self.chains, q, &self.ik, &self.camera)
    }

    fn camera(&self) -> &CameraModel {
        &self.camera
    }

    fn chains(&self) -> &[KinematicChain] {
        &self.chains
    }
}
