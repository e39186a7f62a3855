use embodied_wm::actions::{
    actions_to_joint_states, generate_dataset_with, grippers, ActionSequence, Dataset, DatasetConfig, ManipulatorAction,
    SimConfig, SimState,
};
use embodied_wm::codec::LatentVideo;
use embodied_wm::exec::Exec;
use embodied_wm::kinematics::{fixtures, IkConfig, JointState, Pose, Primitive};
use embodied_wm::objectives::diffusion_loss;
use embodied_wm::render::{CameraModel, SceneObject, SceneSpec};
use embodied_wm::world_model::predictor::{backward_x0, forward_x0, velocity_from_x0};
use embodied_wm::world_model::{
    learned_predict, oracle_predict, predictor_forward, train, Cond, Conditioning, LearnedWorld, ModelSettings,
    OracleWorld, PredictorConfig, PredictorParams, SamplerConfig, TrainConfig, WorldModel, WorldModelError,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_latent(t: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> LatentVideo {
    let mut z = LatentVideo::zeros(t, h, w);
    for v in z.data.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    z
}

fn small_dataset(count: usize) -> Dataset {
    let cfg = DatasetConfig {
        count,
        ..DatasetConfig::toy()
    };
    generate_dataset_with(Exec::Sequential, &cfg, None).unwrap()
}

fn small_train_config() -> TrainConfig {
    let mut cfg = TrainConfig::toy();
    cfg.epochs = 2;
    cfg.batch_size = 2;
    cfg.model.blocks = 1;
    cfg.model.width = 8;
    cfg.weights.e_switch = 1;
    cfg
}

#[test]
fn zero_fuse_makes_conditioning_inert() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let params = PredictorParams::init(PredictorConfig { blocks: 2, width: 8, conditioning: Conditioning::Mask }, &mut rng);
    let z_init = random_latent(1, 3, 3, &mut rng);
    let z = random_latent(2, 3, 3, &mut rng);
    let reference = predictor_forward(&params, &z_init, Cond::Mask(&LatentVideo::zeros(2, 3, 3)), &z, 0.4).unwrap();
    for _ in 0..100 {
        let mask = random_latent(2, 3, 3, &mut rng);
        let v = predictor_forward(&params, &z_init, Cond::Mask(&mask), &z, 0.4).unwrap();
        assert_eq!(v.data, reference.data);
    }
}

#[test]
fn nonzero_fuse_makes_conditioning_live() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut params =
        PredictorParams::init(PredictorConfig { blocks: 2, width: 8, conditioning: Conditioning::Mask }, &mut rng);
    for f in params.fuse.iter_mut() {
        *f = rng.random_range(-0.3..0.3);
    }
    let z_init = random_latent(1, 3, 3, &mut rng);
    let z = random_latent(2, 3, 3, &mut rng);
    let a = predictor_forward(&params, &z_init, Cond::Mask(&random_latent(2, 3, 3, &mut rng)), &z, 0.4).unwrap();
    let b = predictor_forward(&params, &z_init, Cond::Mask(&random_latent(2, 3, 3, &mut rng)), &z, 0.4).unwrap();
    assert_ne!(a.data, b.data);
}

fn diffusion_objective(
    params: &PredictorParams,
    z_init: &LatentVideo,
    cond: Cond<'_>,
    z0: &LatentVideo,
    z_noisy: &LatentVideo,
    alpha: f64,
) -> f64 {
    let v = predictor_forward(params, z_init, cond, z_noisy, alpha).unwrap();
    diffusion_loss(z0, z_noisy, &v, alpha).unwrap().0
}

fn check_param_gradient(conditioning: Conditioning, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = PredictorParams::init(PredictorConfig { blocks: 2, width: 5, conditioning }, &mut rng);
    for f in params.fuse.iter_mut() {
        *f = rng.random_range(-0.3..0.3);
    }
    for p in params.iter_mut() {
        *p += rng.random_range(-0.05..0.05);
    }
    let alpha = 0.6;
    let z_init = random_latent(1, 2, 2, &mut rng);
    let z0 = random_latent(2, 2, 2, &mut rng);
    let z_noisy = random_latent(2, 2, 2, &mut rng);
    let mask = random_latent(2, 2, 2, &mut rng);
    let coords: Vec<f64> = (0..conditioning.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cond = match conditioning {
        Conditioning::Mask => Cond::Mask(&mask),
        Conditioning::Coordinates { .. } => Cond::Coordinates(&coords),
        Conditioning::None => Cond::None,
    };

    let (x0, cache) = forward_x0(&params, &z_init, cond, &z_noisy, alpha).unwrap();
    let v = velocity_from_x0(&z_noisy, &x0, alpha);
    let (_, g_v) = diffusion_loss(&z0, &z_noisy, &v, alpha).unwrap();
    let b = (1.0 - alpha).sqrt();
    let mut g_x0 = g_v.clone();
    for g in g_x0.data.iter_mut() {
        *g = -*g / b;
    }
    let analytic: Vec<f64> = backward_x0(&params, &cache, &g_x0).iter().copied().collect();
    assert_eq!(analytic.len(), params.len());

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..params.len() {
        let mut plus = params.clone();
        let mut minus = params.clone();
        *plus.iter_mut().nth(i).unwrap() += h;
        *minus.iter_mut().nth(i).unwrap() -= h;
        let fd = (diffusion_objective(&plus, &z_init, cond, &z0, &z_noisy, alpha)
            - diffusion_objective(&minus, &z_init, cond, &z0, &z_noisy, alpha))
            / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-4);
        worst = worst.max(rel);
    }
    assert!(worst <= 1e-4, "{conditioning:?}: worst relative error {worst}");
}

#[test]
fn parameter_gradients_match_finite_differences_with_mask() {
    check_param_gradient(Conditioning::Mask, 11);
}

#[test]
fn parameter_gradients_match_finite_differences_with_coordinates() {
    check_param_gradient(Conditioning::Coordinates { dim: 6 }, 12);
}

#[test]
fn parameter_gradients_match_finite_differences_without_control() {
    check_param_gradient(Conditioning::None, 13);
}

#[test]
fn oracle_without_motion_repeats_the_first_frame() {
    let data = small_dataset(1);
    let t = &data.tuples[0];
    let q0 = t.q0()[0].clone();
    let seq = ActionSequence::new(vec![vec![ManipulatorAction::Joint { q: q0.values.clone(), gripper: 1.0 }]; 5]).unwrap();
    let (video, masks) = oracle_predict(&t.initial, &data.chains, &t.camera, &seq, &data.ik, &data.sim).unwrap();
    assert_eq!(video.frames.len(), 5);
    for f in &video.frames[1..] {
        assert_eq!(f, &video.frames[0]);
    }
    for m in &masks.frames[1..] {
        assert_eq!(m, &masks.frames[0]);
    }
}

#[test]
fn oracle_reproduces_generated_videos() {
    let data = small_dataset(3);
    for t in &data.tuples {
        let (video, masks) = oracle_predict(&t.initial, &data.chains, &t.camera, &t.actions, &data.ik, &data.sim).unwrap();
        assert_eq!(video, t.video, "tuple {}", t.id);
        assert_eq!(masks, t.masks, "tuple {}", t.id);
    }
}

#[test]
fn grasp_and_lift_raises_the_object() {
    let chain = fixtures::franka_toy();
    let chains = vec![chain.clone()];
    let q0 = JointState::new(vec![0.1, -0.3, 0.0, -2.0, 0.0, 1.8, 0.6]);
    let start = chain.tool_pose(&chain.fk_unchecked(&q0), &chain.end_effector());
    let mut scene = SceneSpec::default();
    scene.objects.push(SceneObject {
        name: "cube".into(),
        primitive: Primitive::Box { half_extents: Vector3::repeat(0.02) },
        pose: Pose::new(nalgebra::Matrix3::identity(), start.translation),
        color: [40, 90, 220],
        attached: None,
    });
    let state = SimState::new(scene, vec![true], vec![q0.clone()], vec![1.0]);
    let mut lifted = start;
    lifted.translation.z += 0.1;
    let seq = ActionSequence::new(vec![
        vec![ManipulatorAction::Joint { q: q0.values.clone(), gripper: 1.0 }],
        vec![ManipulatorAction::Joint { q: q0.values.clone(), gripper: 0.0 }],
        vec![ManipulatorAction::from_pose(&lifted, 0.0)],
    ])
    .unwrap();
    let ik = IkConfig {
        tol_pos: 1e-8,
        tol_rot: 1e-7,
        max_iters: 2000,
        ..IkConfig::default()
    };
    let sim = SimConfig::default();
    let states = actions_to_joint_states(&seq, &chains, &[q0], &ik).unwrap();
    let grips = grippers(&seq);
    let mut s = state.clone();
    for t in 1..states.len() {
        s.step(&chains, states[t].clone(), grips[t].clone(), &sim).unwrap();
    }
    let z0 = state.object_poses(&chains).unwrap()[0].translation.z;
    let z1 = s.object_poses(&chains).unwrap()[0].translation.z;
    assert!(((z1 - z0) - 0.1).abs() <= 1e-6, "lift {}", z1 - z0);

    let cam = CameraModel::look_at(start.translation + Vector3::new(1.2, 0.8, 0.6), start.translation, Vector3::z(), 1.0, 64, 64)
        .unwrap();
    let (video, _) = oracle_predict(&state, &chains, &cam, &seq, &ik, &sim).unwrap();
    assert_ne!(video.frames[2], video.frames[1]);
}

#[test]
fn zero_epochs_are_rejected() {
    let data = small_dataset(2);
    let tuples: Vec<_> = data.tuples.iter().collect();
    let cfg = TrainConfig { epochs: 0, ..small_train_config() };
    assert!(matches!(train(Exec::Sequential, &tuples, &cfg), Err(WorldModelError::Config(_))));
}

#[test]
fn training_is_deterministic_across_executors() {
    let data = small_dataset(4);
    let tuples: Vec<_> = data.tuples.iter().collect();
    let cfg = small_train_config();
    let (p1, log1) = train(Exec::Sequential, &tuples, &cfg).unwrap();
    let (p2, log2) = train(Exec::Sequential, &tuples, &cfg).unwrap();
    let (p3, log3) = train(Exec::Parallel, &tuples, &cfg).unwrap();
    assert_eq!(log1, log2);
    assert_eq!(log1, log3);
    assert_eq!(p1, p2);
    assert_eq!(p1, p3);
    assert_eq!(log1.epochs.len(), 2);
    assert!(log1.epochs.iter().all(|e| e.total.is_finite()));
    assert!(log1.epochs[1].flow > 0.0);
}

#[test]
fn params_round_trip_through_f32() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for conditioning in [Conditioning::Mask, Conditioning::Coordinates { dim: 14 }, Conditioning::None] {
        let mut params = PredictorParams::init(PredictorConfig { blocks: 2, width: 6, conditioning }, &mut rng);
        for f in params.fuse.iter_mut() {
            *f = rng.random_range(-1.0..1.0);
        }
        let mut buf = Vec::new();
        params.write_params(&mut buf).unwrap();
        let back = PredictorParams::read_params(buf.as_slice()).unwrap();
        assert_eq!(back, params.quantized());
        assert!(PredictorParams::read_params(&buf[..buf.len() - 4]).is_err());
    }
}

fn learned_world(data: &Dataset, steps: usize) -> LearnedWorld {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut params = PredictorParams::init(PredictorConfig { blocks: 1, width: 8, conditioning: Conditioning::Mask }, &mut rng);
    for f in params.fuse.iter_mut() {
        *f = rng.random_range(-0.2..0.2);
    }
    LearnedWorld {
        params,
        settings: ModelSettings {
            sampler: SamplerConfig { steps, seed: 1 },
            ..ModelSettings::default()
        },
        chains: data.chains.clone(),
        camera: data.tuples[0].camera,
        ik: data.ik,
    }
}

#[test]
fn single_step_sampler_gives_a_full_video() {
    let data = small_dataset(1);
    let t = &data.tuples[0];
    let world = learned_world(&data, 1);
    let video = world.predict(t.initial_frame(), t.q0(), &t.actions).unwrap();
    assert_eq!(video.frames.len(), t.actions.len());
    assert_eq!(&video.frames[0], t.initial_frame());
    assert!(video.frames.iter().all(|f| (f.width, f.height) == (128, 128)));
}

#[test]
fn learned_prediction_is_deterministic() {
    let data = small_dataset(1);
    let t = &data.tuples[0];
    let world = learned_world(&data, 3);
    let a = learned_predict(&world.params, &world.settings, t.initial_frame(), &t.actions, &world.chains, t.q0(), &world.ik, &world.camera)
        .unwrap();
    let b = world.predict(t.initial_frame(), t.q0(), &t.actions).unwrap();
    assert_eq!(a, b);
    let zero = LearnedWorld {
        settings: ModelSettings { sampler: SamplerConfig { steps: 0, seed: 1 }, ..world.settings },
        ..world
    };
    assert!(matches!(zero.predict(t.initial_frame(), t.q0(), &t.actions), Err(WorldModelError::Config(_))));
}

fn frames_of(world: &dyn WorldModel, data: &Dataset) -> usize {
    let t = &data.tuples[0];
    world.predict(t.initial_frame(), t.q0(), &t.actions).unwrap().frames.len()
}

#[test]
fn world_models_are_interchangeable() {
    let data = small_dataset(1);
    let t = &data.tuples[0];
    let oracle = OracleWorld {
        chains: data.chains.clone(),
        camera: t.camera,
        ik: data.ik,
        sim: data.sim,
        state: t.initial.clone(),
    };
    let learned = learned_world(&data, 2);
    let worlds: [&dyn WorldModel; 2] = [&oracle, &learned];
    for w in worlds {
        assert_eq!(frames_of(w, &data), t.actions.len());
        assert_eq!(w.camera(), &t.camera);
    }
    assert_eq!(oracle.predict(t.initial_frame(), t.q0(), &t.actions).unwrap(), t.video);
}
