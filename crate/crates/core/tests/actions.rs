use std::path::PathBuf;

use embodied_wm::actions::{
    actions_to_joint_states, generate_dataset, generate_dataset_with, load_dataset, masks_from_actions,
    write_dataset, ActionError, ActionSequence, DatasetConfig, ManipulatorAction, PolicyKind, ScriptedPolicy,
};
use embodied_wm::exec::Exec;
use embodied_wm::kinematics::{fixtures, IkConfig, JointState, KinematicChain, KinematicsError};
use embodied_wm::render::{render_arms_mask, render_embodiment_mask, ArmView, CameraModel, MaskFrame};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn oblique(eye: Vector3<f64>, width: usize) -> CameraModel {
    CameraModel::look_at(eye, Vector3::new(0.0, 0.0, 0.4), Vector3::z(), 1.2, width, width).unwrap()
}

fn tool_action(chain: &KinematicChain, q: &JointState, g: f64) -> ManipulatorAction {
    let pose = chain.tool_pose(&chain.fk_unchecked(q), &chain.end_effector());
    ManipulatorAction::from_pose(&pose, g)
}

#[test]
fn joint_actions_pass_through() {
    let chain = fixtures::franka_toy();
    let qs = [vec![0.1, -0.2, 0.3, -1.5, 0.2, 1.2, 0.4], vec![0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0]];
    let seq = ActionSequence::new(
        qs.iter()
            .map(|q| vec![ManipulatorAction::Joint { q: q.clone(), gripper: 1.0 }])
            .collect(),
    )
    .unwrap();
    let out = actions_to_joint_states(&seq, &[chain], &[JointState::zeros(7)], &IkConfig::default()).unwrap();
    for (o, q) in out.iter().zip(&qs) {
        assert_eq!(&o[0].values, q);
    }
}

#[test]
fn joint_actions_outside_limits_are_rejected() {
    let chain = fixtures::planar2();
    let seq = ActionSequence::new(vec![vec![ManipulatorAction::Joint { q: vec![9.0, 0.0], gripper: 1.0 }]]).unwrap();
    let err = actions_to_joint_states(&seq, &[chain], &[JointState::zeros(2)], &IkConfig::default()).unwrap_err();
    assert!(matches!(
        err,
        ActionError::Kinematics { step: 0, source: KinematicsError::JointLimitViolation { .. }, .. }
    ));
}

#[test]
fn cartesian_actions_recover_fk_trajectory() {
    let chain = fixtures::franka_toy();
    let ik = IkConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let start = [0.2, -0.3, 0.1, -1.8, 0.1, 1.5, 0.3];
    let dir: Vec<f64> = (0..7).map(|_| rng.random_range(-0.05..0.05)).collect();
    let traj: Vec<JointState> = (0..8)
        .map(|t| JointState::new(start.iter().zip(&dir).map(|(s, d)| s + d * t as f64).collect()))
        .collect();
    let seq = ActionSequence::new(traj.iter().map(|q| vec![tool_action(&chain, q, 1.0)]).collect()).unwrap();
    let out = actions_to_joint_states(&seq, std::slice::from_ref(&chain), &[traj[0].clone()], &ik).unwrap();
    for (t, (o, q)) in out.iter().zip(&traj).enumerate() {
        let a = chain.tool_pose(&chain.fk_unchecked(&o[0]), &chain.end_effector());
        let b = chain.tool_pose(&chain.fk_unchecked(q), &chain.end_effector());
        assert!((a.translation - b.translation).norm() <= ik.tol_pos, "step {t}");
    }
}

#[test]
fn unreachable_step_is_named() {
    let chain = fixtures::planar2();
    let q = JointState::new(vec![0.3, 0.5]);
    let mut steps = vec![vec![tool_action(&chain, &q, 1.0)]; 4];
    steps[2] = vec![ManipulatorAction::Cartesian {
        position: Vector3::new(5.0, 0.0, 0.0),
        rpy: [0.0; 3],
        gripper: 1.0,
    }];
    let seq = ActionSequence::new(steps).unwrap();
    let err = actions_to_joint_states(&seq, &[chain], &[q], &IkConfig::default()).unwrap_err();
    assert!(matches!(
        err,
        ActionError::Kinematics { step: 2, source: KinematicsError::UnreachableTarget { .. }, .. }
    ));
    assert!(err.to_string().starts_with("step 2"));
}

#[test]
fn invalid_gripper_rejected() {
    let bad = ManipulatorAction::Joint { q: vec![0.0, 0.0], gripper: 1.5 };
    assert!(ActionSequence::new(vec![vec![bad]]).is_err());
    assert!(ActionSequence::new(vec![]).is_err());
}

#[test]
fn rows_round_trip() {
    let chain = fixtures::franka_toy();
    let q = JointState::new(vec![0.2, -0.3, 0.1, -1.8, 0.1, 1.5, 0.3]);
    let seq = ActionSequence::new(vec![vec![tool_action(&chain, &q, 0.25)]; 3]).unwrap();
    let rows = seq.to_rows().unwrap();
    assert_eq!(rows[0].len(), 7);
    assert_eq!(ActionSequence::from_rows(&rows).unwrap(), seq);
}

#[test]
fn single_step_mask_equals_direct_render() {
    let chain = fixtures::franka_toy();
    let q = JointState::new(vec![0.2, -0.3, 0.1, -1.8, 0.1, 1.5, 0.3]);
    let cam = oblique(Vector3::new(2.0, -1.5, 1.5), 96);
    let seq = ActionSequence::new(vec![vec![tool_action(&chain, &q, 1.0)]]).unwrap();
    let video = masks_from_actions(&seq, std::slice::from_ref(&chain), std::slice::from_ref(&q), &IkConfig::default(), &cam).unwrap();
    assert_eq!(video.len(), 1);
    assert_eq!(video.frames[0], render_embodiment_mask(&chain, &q, &cam).unwrap());
}

#[test]
fn dual_arm_mask_is_union_of_arms() {
    let chains = fixtures::dualarm_toy().manipulators();
    assert_eq!(chains.len(), 2);
    let qs = [JointState::new(vec![0.6, 0.4, 0.8, 0.0]), JointState::new(vec![-0.6, 0.4, 0.8, 0.0])];
    let cam = CameraModel::look_at(Vector3::new(3.0, 0.0, 1.5), Vector3::new(0.0, 0.0, 0.9), Vector3::z(), 1.3, 128, 128)
        .unwrap();
    let seq = ActionSequence::new(vec![chains.iter().zip(&qs).map(|(c, q)| tool_action(c, q, 0.5)).collect()]).unwrap();
    let video = masks_from_actions(&seq, &chains, &qs, &IkConfig::default(), &cam).unwrap();
    let left = render_arms_mask(&[ArmView::new(&chains[0], &qs[0], 0.5)], &cam).unwrap();
    let right = render_arms_mask(&[ArmView::new(&chains[1], &qs[1], 0.5)], &cam).unwrap();
    let mut union = left.clone();
    union.union_with(&right);
    assert_eq!(video.frames[0], union);
    assert!(left != right);
}

fn iou(a: &MaskFrame, b: &MaskFrame) -> f64 {
    let inter = a.bits.iter().zip(&b.bits).filter(|(x, y)| **x && **y).count();
    let union = a.bits.iter().zip(&b.bits).filter(|(x, y)| **x || **y).count();
    inter as f64 / union.max(1) as f64
}

#[test]
fn masks_are_view_specific() {
    let chain = fixtures::franka_toy();
    let q = JointState::new(vec![0.2, -0.3, 0.1, -1.8, 0.1, 1.5, 0.3]);
    let seq = ActionSequence::new(vec![vec![tool_action(&chain, &q, 1.0)]]).unwrap();
    let ik = IkConfig::default();
    let a = masks_from_actions(&seq, std::slice::from_ref(&chain), std::slice::from_ref(&q), &ik, &oblique(Vector3::new(2.0, -1.5, 1.5), 96))
        .unwrap();
    let b = masks_from_actions(&seq, std::slice::from_ref(&chain), std::slice::from_ref(&q), &ik, &oblique(Vector3::new(-1.0, 2.2, 1.0), 96))
        .unwrap();
    assert!(iou(&a.frames[0], &b.frames[0]) < 1.0);
}

fn small_config(count: usize) -> DatasetConfig {
    DatasetConfig {
        count,
        ..DatasetConfig::toy()
    }
}

#[test]
fn empty_dataset_has_valid_manifest() {
    let data = generate_dataset(&small_config(0)).unwrap();
    assert!(data.tuples.is_empty());
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data).unwrap();
    assert_eq!(std::fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap(), "");
    let back = load_dataset(dir.path(), data.ik, data.sim).unwrap();
    assert!(back.tuples.is_empty());
}

#[test]
fn generated_tuples_are_consistent() {
    let cfg = small_config(6);
    let data = generate_dataset(&cfg).unwrap();
    let kinds: std::collections::HashSet<_> = data.tuples.iter().map(|t| t.kind).collect();
    assert!(kinds.len() >= 2);
    for t in &data.tuples {
        assert_eq!(t.video.len(), cfg.steps);
        assert_eq!(t.masks.len(), cfg.steps);
        let again = masks_from_actions(&t.actions, &data.chains, t.q0(), &data.ik, &t.camera).unwrap();
        assert_eq!(again, t.masks, "tuple {}: masks differ from their actions", t.id);
        assert!(t.masks.frames.iter().all(|m| m.count() > 100));
        assert!(t.video.frames[0] != t.video.frames[cfg.steps - 1]);
    }
}

#[test]
fn pick_place_moves_the_cube() {
    let cfg = DatasetConfig {
        count: 3,
        policy: ScriptedPolicy::new(PolicyKind::PickPlace, 0.0),
        ..DatasetConfig::toy()
    };
    let data = generate_dataset(&cfg).unwrap();
    for t in &data.tuples {
        let cube = t.initial.scene.objects.iter().position(|o| o.name == "cube0").unwrap();
        let mut state = t.initial.clone();
        let states = actions_to_joint_states(&t.actions, &data.chains, t.q0(), &data.ik).unwrap();
        for (s, step) in states.iter().zip(&t.actions.steps).skip(1) {
            state
                .step(&data.chains, s.clone(), step.iter().map(|a| a.gripper()).collect(), &data.sim)
                .unwrap();
        }
        let end = state.scene.objects[cube].pose.translation;
        let goal = t.actions.steps.last().unwrap()[0].pose().unwrap().translation;
        assert!(state.scene.objects[cube].attached.is_none());
        assert!((end - goal).xy().norm() < 0.2, "tuple {}: cube ended {:?} from goal {:?}", t.id, end, goal);
    }
}

#[test]
fn generation_is_deterministic_and_order_free() {
    let cfg = small_config(4);
    let a = generate_dataset_with(Exec::Parallel, &cfg, None).unwrap();
    let b = generate_dataset_with(Exec::Sequential, &cfg, None).unwrap();
    assert_eq!(a, b);
    let da = tempfile::tempdir().unwrap();
    let db = tempfile::tempdir().unwrap();
    write_dataset(da.path(), &a).unwrap();
    write_dataset(db.path(), &b).unwrap();
    let read = |d: &std::path::Path, f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read(da.path(), "manifest.jsonl"), read(db.path(), "manifest.jsonl"));
    assert_eq!(read(da.path(), "tuple_0003/frames/frame_0004.ppm"), read(db.path(), "tuple_0003/frames/frame_0004.ppm"));
}

#[test]
fn dataset_round_trips_through_disk() {
    let data = generate_dataset(&small_config(3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data).unwrap();
    let back = load_dataset(dir.path(), data.ik, data.sim).unwrap();
    assert_eq!(back, data);
    for t in &back.tuples {
        let again = masks_from_actions(&t.actions, &back.chains, t.q0(), &back.ik, &t.camera).unwrap();
        assert_eq!(again, t.masks);
    }
}

#[test]
fn golden_tuple() {
    let cfg = DatasetConfig {
        count: 1,
        seed: 1234,
        ..DatasetConfig::toy()
    };
    let data = generate_dataset(&cfg).unwrap();
    let golden = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/toy_tuple");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        let _ = std::fs::remove_dir_all(&golden);
        write_dataset(&golden, &data).unwrap();
    }
    let stored = load_dataset(&golden, data.ik, data.sim).unwrap();
    assert_eq!(stored.tuples, data.tuples);
}
