use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{stream_rng, Exec};
use crate::kinematics::{load_urdf, IkConfig, JointState, KinematicChain, Pose};
use crate::render::{CameraModel, MaskVideo, RgbFrame, RgbVideo};

use super::policy::{PolicyKind, SceneSampler, ScriptedPolicy};
use super::sim::{SimConfig, SimState};
use super::{actions_to_joint_states, grippers, masks_from_actions_with, ActionError, ActionSequence};

pub const MANIFEST_VERSION: u32 = 1;

/// Everything that determines a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Bundled fixture name (`planar2.urdf`) or a path.
    pub urdf: String,
    pub camera: CameraModel,
    /// Frames per trajectory.
    pub steps: usize,
    pub count: usize,
    pub seed: u64,
    pub policy: ScriptedPolicy,
    #[serde(default)]
    pub sampler: SceneSampler,
    #[serde(default)]
    pub ik: IkConfig,
    #[serde(default)]
    pub sim: SimConfig,
    /// Each trajectory's camera is turned about the world z axis by a
    /// uniform angle in ±this (rad).
    #[serde(default)]
    pub camera_yaw_jitter: f64,
}

impl DatasetConfig {
    /// Planar two-link arm seen from above: 128×128, 5 frames, 50 trajectories.
    pub fn toy() -> Self {
        let r = Matrix3::new(1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, -1.0);
        let eye = nalgebra::Vector3::new(0.0, 0.0, 5.0);
        let camera = CameraModel::new(145.0, 145.0, 64.0, 64.0, 128, 128, Pose::new(r, -(r * eye)))
            .expect("valid toy camera");
        Self {
            urdf: "planar2.urdf".into(),
            camera,
            steps: 5,
            count: 50,
            seed: 7,
            policy: ScriptedPolicy::new(PolicyKind::Mixed, 0.0),
            sampler: SceneSampler::default(),
            ik: IkConfig::default(),
            sim: SimConfig {
                grasp_radius: 0.15,
                push_radius: 0.15,
            },
            camera_yaw_jitter: 0.0,
        }
    }
}

/// One generated trajectory: initial frame, conditioning masks and the
/// oracle video, plus what is needed to regenerate or re-simulate it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTuple {
    pub id: usize,
    pub seed: u64,
    pub kind: PolicyKind,
    pub camera: CameraModel,
    pub actions: ActionSequence,
    /// Initial world state (joint values, grippers, objects).
    pub initial: SimState,
    pub masks: MaskVideo,
    pub video: RgbVideo,
}

impl TrainingTuple {
    pub fn initial_frame(&self) -> &RgbFrame {
        &self.video.frames[0]
    }

    pub fn q0(&self) -> &[JointState] {
        &self.initial.qs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub urdf: String,
    pub chains: Vec<KinematicChain>,
    pub ik: IkConfig,
    pub sim: SimConfig,
    pub tuples: Vec<TrainingTuple>,
}

pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset, ActionError> {
    generate_dataset_with(Exec::default(), cfg, None)
}

/// Trajectory `i` draws from its own stream of `cfg.seed`, so the output
/// does not depend on `exec`. `base_dir` resolves a relative `urdf` path.
pub fn generate_dataset_with(exec: Exec, cfg: &DatasetConfig, base_dir: Option<&Path>) -> Result<Dataset, ActionError> {
    if cfg.steps == 0 {
        return Err(ActionError::InvalidSequence("steps must be positive".into()));
    }
    let chain = load_urdf(&cfg.urdf, base_dir).map_err(|e| ActionError::Manifest(e.to_string()))?;
    let chains = chain.manipulators();
    let tuples = exec.try_map_range(cfg.count, |i| generate_one(cfg, &chains, i))?;
    Ok(Dataset {
        urdf: cfg.urdf.clone(),
        chains,
        ik: cfg.ik,
        sim: cfg.sim,
        tuples,
    })
}

fn generate_one(cfg: &DatasetConfig, chains: &[KinematicChain], index: usize) -> Result<TrainingTuple, ActionError> {
    let mut rng = stream_rng(cfg.seed, index as u64);
    let kind = cfg.policy.resolve(&mut rng);
    let yaw = if cfg.camera_yaw_jitter > 0.0 {
        rng.random_range(-cfg.camera_yaw_jitter..=cfg.camera_yaw_jitter)
    } else {
        0.0
    };
    let camera = CameraModel {
        extrinsic: cfg
            .camera
            .extrinsic
            .compose(&Pose::from_xyz_rpy([0.0; 3], [0.0, 0.0, yaw]).inverse()),
        ..cfg.camera
    };
    for _ in 0..cfg.sampler.max_retries {
        let Some(sample) = cfg.sampler.sample(chains, kind, &mut rng) else {
            continue;
        };
        let actions = cfg.policy.actions(&sample, chains, cfg.steps, &mut rng);
        let Ok(states) = actions_to_joint_states(&actions, chains, &sample.q0, &cfg.ik) else {
            continue;
        };
        let masks = masks_from_actions_with(Exec::Sequential, &actions, chains, &sample.q0, &cfg.ik, &camera)?;
        let grips = grippers(&actions);
        let initial = SimState::new(sample.scene, sample.movable, states[0].clone(), grips[0].clone());
        let video = simulate(&initial, chains, &states, &grips, &cfg.sim, &camera)?;
        return Ok(TrainingTuple {
            id: index,
            seed: cfg.seed,
            kind,
            camera,
            actions,
            initial,
            masks,
            video,
        });
    }
    Err(ActionError::SceneSamplingFailed {
        index,
        retries: cfg.sampler.max_retries,
    })
}

/// Oracle video: frame 0 renders `initial`, frame `t` the state after step `t`.
pub fn simulate(
    initial: &SimState,
    chains: &[KinematicChain],
    states: &[Vec<JointState>],
    grips: &[Vec<f64>],
    sim: &SimConfig,
    cam: &CameraModel,
) -> Result<RgbVideo, ActionError> {
    let mut state = initial.clone();
    let mut frames = Vec::with_capacity(states.len());
    for t in 0..states.len() {
        if t > 0 {
            state.step(chains, states[t].clone(), grips[t].clone(), sim)?;
        }
        frames.push(state.render(chains, cam)?.0);
    }
    Ok(RgbVideo::new(frames)?)
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub version: u32,
    pub id: usize,
    pub urdf: String,
    pub camera: CameraModel,
    pub actions: Vec<Vec<f64>>,
    pub frame_dir: String,
    pub mask_dir: String,
    pub seed: u64,
    pub policy: PolicyKind,
    pub initial: SimState,
}

fn tuple_dir(id: usize) -> String {
    format!("tuple_{id:04}")
}

/// Writes `manifest.jsonl` plus PPM frames and PBM masks per tuple.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<(), ActionError> {
    fs::create_dir_all(dir)?;
    let mut manifest = BufWriter::new(fs::File::create(dir.join("manifest.jsonl"))?);
    for t in &data.tuples {
        let frame_dir = format!("{}/frames", tuple_dir(t.id));
        let mask_dir = format!("{}/masks", tuple_dir(t.id));
        t.video.save_dir(&dir.join(&frame_dir))?;
        t.masks.save_dir(&dir.join(&mask_dir))?;
        let record = ManifestRecord {
            version: MANIFEST_VERSION,
            id: t.id,
            urdf: data.urdf.clone(),
            camera: t.camera,
            actions: t.actions.to_rows()?,
            frame_dir,
            mask_dir,
            seed: t.seed,
            policy: t.kind,
            initial: t.initial.clone(),
        };
        serde_json::to_writer(&mut manifest, &record)?;
        manifest.write_all(b"\n")?;
    }
    manifest.flush()?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRecord>, ActionError> {
    let file = fs::File::open(dir.join("manifest.jsonl"))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(&line).map_err(|e| ActionError::Manifest(format!("line {}: {e}", n + 1)))?;
        if rec.version != MANIFEST_VERSION {
            return Err(ActionError::Manifest(format!(
                "line {}: version {} is not supported",
                n + 1,
                rec.version
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

/// Reads a dataset written by [`write_dataset`].
pub fn load_dataset(dir: &Path, ik: IkConfig, sim: SimConfig) -> Result<Dataset, ActionError> {
    let records = read_manifest(dir)?;
    let urdf = records.first().map(|r| r.urdf.clone()).unwrap_or_default();
    if let Some(bad) = records.iter().find(|r| r.urdf != urdf) {
        return Err(ActionError::Manifest(format!("tuple {} uses a different URDF", bad.id)));
    }
    let chains = if records.is_empty() {
        Vec::new()
    } else {
        load_urdf(&urdf, Some(dir))
            .map_err(|e| ActionError::Manifest(e.to_string()))?
            .manipulators()
    };
    let mut tuples = Vec::with_capacity(records.len());
    for r in records {
        let actions = ActionSequence::from_rows(&r.actions)?;
        let masks = MaskVideo::load_dir(&dir.join(&r.mask_dir))?;
        let video = RgbVideo::load_dir(&dir.join(&r.frame_dir))?;
        if masks.len() != actions.len() || video.len() != actions.len() {
            return Err(ActionError::Manifest(format!(
                "tuple {}: {} actions, {} masks, {} frames",
                r.id,
                actions.len(),
                masks.len(),
                video.len()
            )));
        }
        tuples.push(TrainingTuple {
            id: r.id,
            seed: r.seed,
            kind: r.policy,
            camera: r.camera,
            actions,
            initial: r.initial,
            masks,
            video,
        });
    }
    Ok(Dataset {
        urdf,
        chains,
        ik,
        sim,
        tuples,
    })
}
