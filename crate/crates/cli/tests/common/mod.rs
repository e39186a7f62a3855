#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn ewm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ewm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn ewm")
}

pub fn ok(dir: &Path, args: &[&str]) {
    let out = ewm(dir, args);
    assert!(
        out.status.success(),
        "ewm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

pub fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("ewm-cli-{name}-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();
    dir
}

/// Relative path to contents of every file under `root`.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn zero_actions(dir: &Path, frames: usize) {
    let steps: Vec<_> = (0..frames)
        .map(|_| serde_json::json!([{ "joint": { "q": [0.0, 0.0], "gripper": 1.0 } }]))
        .collect();
    let file = serde_json::json!({ "version": 1, "steps": steps });
    fs::write(dir.join("zero.json"), file.to_string()).unwrap();
}

pub const SMALL_DATA: [&str; 4] = ["--set", "data.count=4", "--set", "data.policy.kind=\"reach\""];

pub const FAMILY: &str = r#"{"version":1,"policies":[
    {"name":"expert","policy":{"kind":"reach","noise":0.0},"chunk":3},
    {"name":"shaky","policy":{"kind":"reach","noise":0.1},"chunk":3}]}"#;

/// Runs every subcommand once under `dir/tag` and returns the output tree.
pub fn run_every_subcommand(dir: &Path, tag: &str) -> BTreeMap<PathBuf, Vec<u8>> {
    let root = dir.join(tag);
    fs::create_dir_all(&root).unwrap();
    zero_actions(&root, 5);
    fs::write(root.join("family.json"), FAMILY).unwrap();
    ok(&root, &["render-mask", "--urdf", "planar2", "--camera", "toy", "--actions", "zero.json", "--out", "masks"]);
    let mut gen = vec!["gen-data", "--out", "data"];
    gen.extend(SMALL_DATA);
    ok(&root, &gen);
    ok(&root, &["train", "--data", "data", "--out", "model/p.params", "--set", "holdout=1", "--set", "train.epochs=1"]);
    ok(&root, &["rollout", "--model", "model/p.params", "--data", "data", "--tuple", "3", "--out", "pred/tuple_0003"]);
    ok(&root, &["rollout", "--oracle", "--data", "data", "--tuple", "2", "--out", "oracle/tuple_0002"]);
    let small = ["--set", "plan.samples=8", "--set", "plan.elites=2", "--set", "plan.iterations=2"];
    let mut plan = vec!["plan", "--task", "reach", "--strategy", "axis_wise", "--out", "plan/p.json"];
    plan.extend(small);
    ok(&root, &plan);
    let mut mpc = vec!["plan", "--task", "reach", "--mpc", "--out", "mpc/p.json", "--set", "mpc.max_cycles=2"];
    mpc.extend(small);
    ok(&root, &mpc);
    let mut learned = vec![
        "plan", "--data", "data", "--tuple", "0", "--model", "model/p.params", "--out", "lplan/p.json", "--set",
        "plan.horizon=4",
    ];
    learned.extend(small);
    ok(&root, &learned);
    ok(&root, &[
        "policy-eval", "--policies", "family.json", "--model", "model/p.params", "--out", "pe/report.csv", "--set",
        "policy_eval.episodes=2",
    ]);
    ok(&root, &["eval", "--pred", "pred", "--truth", "data", "--out", "eval/report.csv"]);
    tree(&root)
}

/// First difference between two output trees, if any.
pub fn tree_difference(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>) -> Option<String> {
    if a.keys().ne(b.keys()) {
        return Some("the runs wrote different file sets".into());
    }
    a.iter().find(|(p, bytes)| b[*p] != **bytes).map(|(p, _)| format!("{} differs between runs", p.display()))
}
