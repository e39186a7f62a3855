//! Versioned interchange files and the output lock.

use std::fs;
use std::path::{Path, PathBuf};

use embodied_wm::actions::{ActionSequence, DatasetConfig, ManipulatorAction, ScriptedPolicy};
use embodied_wm::planner::PolicySpec;
use embodied_wm::render::CameraModel;
use embodied_wm::world_model::ModelSettings;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::{run_err, CliError};

pub const FORMAT_VERSION: u32 = 1;

/// Held for the lifetime of a run; refuses a second process writing the
/// same output.
pub struct Lock(PathBuf);

impl Lock {
    pub fn acquire(out: &Path) -> Result<Self, CliError> {
        let mut name = out.file_name().unwrap_or_default().to_os_string();
        name.push(".lock");
        let path = out.with_file_name(name);
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(run_err)?;
        }
        fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| CliError::Run(format!("{} is locked by another run ({e})", out.display())))?;
        Ok(Self(path))
    }
}

impl Drop for Lock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

/// `<out stem>.<suffix>` next to `out`.
pub fn beside(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Serialize, Deserialize)]
struct Versioned<T> {
    version: u32,
    #[serde(flatten)]
    body: T,
}

pub fn read_versioned<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    let v: Versioned<T> =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if v.version != FORMAT_VERSION {
        return Err(CliError::Config(format!("{}: version {} is not supported", path.display(), v.version)));
    }
    Ok(v.body)
}

pub fn write_versioned<T: Serialize>(path: &Path, body: &T) -> Result<(), CliError> {
    let v = Versioned {
        version: FORMAT_VERSION,
        body,
    };
    let text = serde_json::to_string_pretty(&v).map_err(run_err)?;
    fs::write(path, text + "\n").map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionsFile {
    /// One row of per-manipulator commands per frame.
    pub steps: Vec<Vec<ManipulatorAction>>,
    /// IK seeds per manipulator; zeros when omitted.
    #[serde(default)]
    pub q0: Option<Vec<Vec<f64>>>,
}

impl ActionsFile {
    pub fn sequence(&self) -> Result<ActionSequence, CliError> {
        ActionSequence::new(self.steps.clone()).map_err(|e| CliError::Config(e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraFile {
    pub camera: CameraModel,
}

pub fn load_camera(spec: &str) -> Result<CameraModel, CliError> {
    if spec == "toy" {
        return Ok(DatasetConfig::toy().camera);
    }
    let cam = read_versioned::<CameraFile>(Path::new(spec))?.camera;
    cam.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cam)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NamedPolicy {
    pub name: String,
    pub policy: ScriptedPolicy,
    /// Action chunk length.
    pub chunk: usize,
}

impl NamedPolicy {
    pub fn spec(&self) -> PolicySpec {
        PolicySpec {
            policy: self.policy,
            chunk: self.chunk,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoliciesFile {
    pub policies: Vec<NamedPolicy>,
}

/// Sampling settings stored beside trained parameters.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SettingsFile {
    pub settings: ModelSettings,
    /// URDF document of the training data, so the model is usable
    /// without the dataset.
    pub urdf: String,
    pub camera: CameraModel,
}

/// `dir/frames` and `dir/masks` when present, else `dir` itself.
pub fn frames_dir(dir: &Path) -> PathBuf {
    let sub = dir.join("frames");
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}

pub fn masks_dir(dir: &Path) -> PathBuf {
    let sub = dir.join("masks");
    if sub.is_dir() {
        sub
    } else {
        dir.to_path_buf()
    }
}
