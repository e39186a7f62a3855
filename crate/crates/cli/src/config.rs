//! Run configuration: defaults, a TOML file and `--set` overrides, merged in
//! that order and checked against the schema.

use std::path::Path;

use embodied_wm::actions::DatasetConfig;
use embodied_wm::planner::{FamilyConfig, MpcConfig, PlanConfig};
use embodied_wm::world_model::{SamplerConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::CliError;

pub const CONFIG_VERSION: u32 = 1;

/// Name of the resolved config written next to every output.
pub const RESOLVED: &str = "config.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    /// Seed of planning runs.
    pub plan_seed: u64,
    pub data: DatasetConfig,
    pub train: TrainConfig,
    /// Tuples at the end of the dataset kept out of training.
    pub holdout: usize,
    pub sampler: SamplerConfig,
    pub plan: PlanConfig,
    pub mpc: MpcConfig,
    pub policy_eval: FamilyConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            plan_seed: 0,
            data: DatasetConfig::toy(),
            train: TrainConfig::toy(),
            holdout: 10,
            sampler: SamplerConfig::default(),
            plan: PlanConfig::default(),
            mpc: MpcConfig::default(),
            policy_eval: FamilyConfig::default(),
        }
    }
}

fn to_table<T: Serialize>(v: &T) -> Table {
    match Value::try_from(v).expect("config types serialize to TOML") {
        Value::Table(t) => t,
        _ => unreachable!("structs serialize to tables"),
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parses `a.b.c=value`; the value is read as a TOML literal, falling back
/// on a bare string.
fn parse_set(entry: &str) -> Result<(Vec<String>, Value), CliError> {
    let (key, raw) = entry
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--set {entry:?} is not of the form key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_owned).collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Config(format!("--set {entry:?} has an empty key segment")));
    }
    let value = match format!("v = {raw}").parse::<Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => Value::String(raw.to_owned()),
    };
    Ok((path, value))
}

fn set_path(table: &mut Table, path: &[String], value: Value) -> Result<(), CliError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        cur = match cur.entry(p.clone()).or_insert_with(|| Value::Table(Table::new())) {
            Value::Table(t) => t,
            _ => return Err(CliError::Config(format!("--set: {p} is not a table"))),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Resolves the run config. `plan` replaces the default search settings
/// before the file and overrides apply.
pub fn resolve(file: Option<&Path>, sets: &[String], plan: Option<&PlanConfig>) -> Result<RunConfig, CliError> {
    let mut table = to_table(&RunConfig::default());
    if let Some(p) = plan {
        table.insert("plan".into(), Value::Table(to_table(p)));
    }
    if let Some(path) = file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let user: Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("{}: {}", path.display(), e.message())))?;
        merge(&mut table, user);
    }
    for entry in sets {
        let (path, value) = parse_set(entry)?;
        set_path(&mut table, &path, value)?;
    }
    let cfg: RunConfig = Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_owned()))?;
    if cfg.version != CONFIG_VERSION {
        return Err(CliError::Config(format!("config version {} is not supported", cfg.version)));
    }
    cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.plan.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

pub fn write_resolved(cfg: &RunConfig, path: &Path) -> Result<(), CliError> {
    let text = toml::to_string(cfg).map_err(|e| CliError::Run(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = resolve(None, &[], None).unwrap();
        assert_eq!(cfg, RunConfig::default());
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = resolve(None, &["train.epochs=3".into(), "plan.strategy=axis_wise".into()], None).unwrap();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.plan.strategy, embodied_wm::planner::Strategy::AxisWise);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(resolve(None, &["train.epoch=3".into()], None), Err(CliError::Config(_))));
        assert!(matches!(resolve(None, &["colour=1".into()], None), Err(CliError::Config(_))));
        assert!(matches!(resolve(None, &["train.epochs".into()], None), Err(CliError::Config(_))));
        assert!(matches!(resolve(None, &["train.epochs=0".into()], None), Err(CliError::Config(_))));
    }
}
