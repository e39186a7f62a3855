use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use embodied_wm::actions::{
    actions_to_joint_states, generate_dataset_with, load_dataset, masks_from_actions_with, read_manifest, write_dataset,
    Dataset, TrainingTuple,
};
use embodied_wm::codec::GROUP;
use embodied_wm::exec::Exec;
use embodied_wm::kinematics::{load_urdf, parse_urdf, JointState, KinematicChain};
use embodied_wm::metrics::{mean_row, mmrv, pearson_r, write_eval_csv, write_eval_markdown, EvalRow, MetricsError};
use embodied_wm::planner::tasks::{flip_task, reach_task, Task, REACH_TOLERANCE};
use embodied_wm::planner::{
    evaluate_family, mpc_loop, plan_with_strategy, success_table, write_plan, write_telemetry_csv, MpcConfig,
    OracleEnv, PlanError, Strategy, Success,
};
use embodied_wm::render::{MaskVideo, RgbFrame, RgbVideo};
use embodied_wm::world_model::{
    train as fit, train::split, LearnedWorld, ModelSettings, OracleWorld, PredictorParams, WorldModel, WorldModelError,
};

use crate::config::{resolve, write_resolved, RunConfig, RESOLVED};
use crate::files::{
    beside, frames_dir, load_camera, masks_dir, read_versioned, write_versioned, ActionsFile, Lock, PoliciesFile,
    SettingsFile,
};
use crate::{run_err, CliError, Common};

fn config(common: &Common) -> Result<RunConfig, CliError> {
    resolve(common.config.as_deref(), &common.sets, None)
}

fn plan_err(e: PlanError) -> CliError {
    match e {
        PlanError::Config(m) => CliError::Config(m),
        PlanError::World(WorldModelError::Config(m)) => CliError::Config(m),
        e => run_err(e),
    }
}

fn world_err(e: WorldModelError) -> CliError {
    match e {
        WorldModelError::Config(m) => CliError::Config(m),
        e => run_err(e),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

fn read_frame(path: &Path) -> Result<RgbFrame, CliError> {
    let f = fs::File::open(path).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
    RgbFrame::read_ppm(std::io::BufReader::new(f)).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))
}

pub fn render_mask(common: &Common, urdf: &str, camera: &str, actions: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = config(common)?;
    let _lock = Lock::acquire(out)?;
    let chains = load_urdf(urdf, None).map_err(|e| CliError::Config(e.to_string()))?.manipulators();
    let cam = load_camera(camera)?;
    let file: ActionsFile = read_versioned(actions)?;
    let seq = file.sequence()?;
    let seeds: Vec<JointState> = match &file.q0 {
        Some(q) => q.iter().cloned().map(JointState::new).collect(),
        None => chains.iter().map(|c| JointState::zeros(c.dof())).collect(),
    };
    if seeds.len() != chains.len() || seq.manipulators() != chains.len() {
        return Err(CliError::Config(format!(
            "{} manipulators in the URDF, {} in the actions, {} seeds",
            chains.len(),
            seq.manipulators(),
            seeds.len()
        )));
    }
    let masks = masks_from_actions_with(Exec::default(), &seq, &chains, &seeds, &cfg.data.ik, &cam).map_err(run_err)?;
    masks.save_dir(out).map_err(run_err)?;
    write_resolved(&cfg, &out.join(RESOLVED))
}

pub fn gen_data(common: &Common, out: &Path) -> Result<(), CliError> {
    let mut cfg = config(common)?;
    let _lock = Lock::acquire(out)?;
    fs::create_dir_all(out).map_err(run_err)?;
    // a URDF file travels with the dataset so the manifest stays self-contained
    let base = common.config.as_deref().and_then(Path::parent).unwrap_or(Path::new("."));
    let source = base.join(&cfg.data.urdf);
    if source.is_file() {
        let name = source.file_name().expect("file path").to_string_lossy().into_owned();
        fs::copy(&source, out.join(&name)).map_err(run_err)?;
        cfg.data.urdf = name;
    }
    let data = generate_dataset_with(Exec::default(), &cfg.data, Some(out)).map_err(run_err)?;
    write_dataset(out, &data).map_err(run_err)?;
    write_resolved(&cfg, &out.join(RESOLVED))
}

fn dataset(cfg: &RunConfig, dir: &Path) -> Result<Dataset, CliError> {
    load_dataset(dir, cfg.data.ik, cfg.data.sim).map_err(run_err)
}

fn urdf_document(data: &Dataset, dir: &Path) -> Result<String, CliError> {
    match fs::read_to_string(dir.join(&data.urdf)) {
        Ok(text) => Ok(text),
        Err(_) => embodied_wm::kinematics::fixtures::by_name(&data.urdf)
            .map(str::to_owned)
            .ok_or_else(|| CliError::Run(format!("URDF {} not found", data.urdf))),
    }
}

pub fn train(common: &Common, data_dir: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = config(common)?;
    let _lock = Lock::acquire(out)?;
    let data = dataset(&cfg, data_dir)?;
    let (train_set, _) = split(&data, cfg.holdout);
    if train_set.is_empty() {
        return Err(CliError::Config(format!(
            "holdout {} leaves no training tuples out of {}",
            cfg.holdout,
            data.tuples.len()
        )));
    }
    let (params, log) = fit(Exec::default(), &train_set, &cfg.train).map_err(world_err)?;
    params.write_params(create(out)?).map_err(run_err)?;
    log.write_csv(create(&beside(out, "loss.csv"))?).map_err(run_err)?;
    let settings = SettingsFile {
        settings: ModelSettings::from_train(&cfg.train, cfg.sampler),
        urdf: urdf_document(&data, data_dir)?,
        camera: train_set[0].camera,
    };
    write_versioned(&beside(out, "settings.json"), &settings)?;
    write_resolved(&cfg, &beside(out, RESOLVED))
}

struct Model {
    params: PredictorParams,
    file: SettingsFile,
}

impl Model {
    fn load(path: &Path) -> Result<Self, CliError> {
        let f = fs::File::open(path).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
        let params = PredictorParams::read_params(std::io::BufReader::new(f)).map_err(run_err)?;
        let file: SettingsFile = read_versioned(&beside(path, "settings.json"))?;
        Ok(Self { params, file })
    }

    fn chains(&self) -> Result<Vec<KinematicChain>, CliError> {
        Ok(parse_urdf(&self.file.urdf).map_err(run_err)?.manipulators())
    }

    /// The run config's sampler replaces the one recorded at training time.
    fn world(&self, cfg: &RunConfig, chains: Vec<KinematicChain>) -> LearnedWorld {
        LearnedWorld {
            params: self.params.clone(),
            settings: ModelSettings {
                sampler: cfg.sampler,
                ..self.file.settings
            },
            chains,
            camera: self.file.camera,
            ik: cfg.data.ik,
        }
    }
}

fn find_tuple(data: &Dataset, id: usize) -> Result<&TrainingTuple, CliError> {
    data.tuples
        .iter()
        .find(|t| t.id == id)
        .ok_or_else(|| CliError::Config(format!("dataset has no tuple {id}")))
}

pub fn rollout(
    common: &Common,
    model: Option<&Path>,
    oracle: bool,
    data_dir: &Path,
    id: usize,
    out: &Path,
) -> Result<(), CliError> {
    let cfg = config(common)?;
    let model = match (oracle, model) {
        (true, None) => None,
        (false, Some(m)) => Some(Model::load(m)?),
        _ => return Err(CliError::Config("pass exactly one of --model and --oracle".into())),
    };
    let _lock = Lock::acquire(out)?;
    let data = dataset(&cfg, data_dir)?;
    let t = find_tuple(&data, id)?;
    let world: Box<dyn WorldModel> = match model {
        None => Box::new(OracleWorld {
            chains: data.chains.clone(),
            camera: t.camera,
            ik: cfg.data.ik,
            sim: cfg.data.sim,
            state: t.initial.clone(),
        }),
        Some(m) => Box::new(LearnedWorld {
            camera: t.camera,
            ..m.world(&cfg, data.chains.clone())
        }),
    };
    let pred = world.predict(t.initial_frame(), t.q0(), &t.actions).map_err(world_err)?;
    pred.save_dir(&out.join("frames")).map_err(run_err)?;
    t.masks.save_dir(&out.join("masks")).map_err(run_err)?;
    let row = EvalRow::compute(&format!("tuple_{id:04}"), &pred, &t.video, &t.masks).map_err(run_err)?;
    write_eval_csv(&[row], create(&out.join("metrics.csv"))?).map_err(run_err)?;
    write_resolved(&cfg, &out.join(RESOLVED))
}

pub struct PlanArgs {
    pub goal: Option<PathBuf>,
    pub goal2: Option<PathBuf>,
    pub strategy: Option<String>,
    pub task: Option<String>,
    pub task_seed: u64,
    pub data: Option<PathBuf>,
    pub tuple: Option<usize>,
    pub model: Option<PathBuf>,
    pub mpc: bool,
    pub out: PathBuf,
}

/// Start scene of a dataset tuple; success is the tool reaching where the
/// tuple's own trajectory ends.
fn tuple_task(cfg: &RunConfig, dir: &Path, id: usize) -> Result<Task, CliError> {
    let data = dataset(cfg, dir)?;
    let t = find_tuple(&data, id)?;
    let states = actions_to_joint_states(&t.actions, &data.chains, t.q0(), &cfg.data.ik).map_err(run_err)?;
    let end = states.last().expect("non-empty tuple");
    let chain = &data.chains[0];
    let target = chain.tool_pose(&chain.fk_unchecked(&end[0]), &chain.end_effector()).translation;
    Ok(Task {
        env: OracleEnv {
            chains: data.chains.clone(),
            camera: t.camera,
            ik: cfg.data.ik,
            sim: cfg.data.sim,
            state: t.initial.clone(),
        },
        goals: vec![t.video.frames.last().expect("non-empty video").clone()],
        success: Success::ToolNear {
            arm: 0,
            target,
            tol: REACH_TOLERANCE,
        },
        plan: cfg.plan,
    })
}

pub fn plan(common: &Common, a: &PlanArgs) -> Result<(), CliError> {
    let task = match (&a.task, &a.data) {
        (Some(name), None) => Some(match name.as_str() {
            "reach" => reach_task(a.task_seed),
            "flip" => flip_task(a.task_seed).map_err(plan_err)?,
            other => return Err(CliError::Config(format!("unknown task {other:?}; expected reach or flip"))),
        }),
        (None, Some(_)) => None,
        _ => return Err(CliError::Config("pass exactly one of --task and --data".into())),
    };
    // dataset scenes use the planar arm, so they share the reach search settings
    let base = match &task {
        Some(t) => t.plan,
        None => reach_task(0).plan,
    };
    let mut cfg = resolve(common.config.as_deref(), &common.sets, Some(&base))?;
    if let Some(s) = &a.strategy {
        cfg.plan.strategy = s.parse::<Strategy>().map_err(|e| CliError::Config(e.to_string()))?;
    }
    if a.goal2.is_some() && !a.mpc {
        return Err(CliError::Config("--goal2 needs --mpc".into()));
    }
    if a.model.is_some() && cfg.plan.horizon % GROUP != 0 {
        return Err(CliError::Config(format!(
            "plan.horizon {} must be a multiple of {GROUP} with a learned model",
            cfg.plan.horizon
        )));
    }
    let model = a.model.as_deref().map(Model::load).transpose()?;
    let _lock = Lock::acquire(&a.out)?;
    let mut task = match task {
        Some(t) => t,
        None => tuple_task(&cfg, a.data.as_deref().expect("checked"), a.tuple.expect("required by clap"))?,
    };
    if let Some(g) = &a.goal {
        task.goals = vec![read_frame(g)?];
    }
    if let Some(g) = &a.goal2 {
        task.goals.push(read_frame(g)?);
    }
    let learned = model.map(|m| LearnedWorld {
        camera: task.env.camera,
        ..m.world(&cfg, task.env.chains.clone())
    });
    let exec = Exec::default();
    if a.mpc {
        let world = learned.as_ref().map(|w| w as &dyn WorldModel);
        let mpc = MpcConfig { ..cfg.mpc };
        let outcome = mpc_loop(exec, world, &mut task.env, &task.goals, &task.success, &cfg.plan, &mpc, cfg.plan_seed)
            .map_err(plan_err)?;
        write_plan(&outcome.executed, create(&a.out)?).map_err(plan_err)?;
        let mut w = create(&beside(&a.out, "telemetry.csv"))?;
        use std::io::Write;
        writeln!(w, "cycle,iter,best_loss,mean_elite_loss").map_err(run_err)?;
        for (c, log) in outcome.telemetry.iter().enumerate() {
            for l in log {
                writeln!(w, "{c},{},{},{}", l.iter, l.best_loss, l.mean_elite_loss).map_err(run_err)?;
            }
        }
        w.flush().map_err(run_err)?;
        let summary = serde_json::json!({
            "success": outcome.success,
            "cycles": outcome.cycles,
            "switches": outcome.switches,
        });
        write_versioned(&beside(&a.out, "outcome.json"), &summary)?;
        RgbVideo::new(outcome.frames)
            .map_err(run_err)?
            .save_dir(&beside(&a.out, "frames"))
            .map_err(run_err)?;
    } else {
        let obs = task.env.observe().map_err(plan_err)?;
        let oracle = task.env.world();
        let world: &dyn WorldModel = match &learned {
            Some(w) => w,
            None => &oracle,
        };
        let r = plan_with_strategy(exec, world, &obs, &task.goals[0], &cfg.plan, cfg.plan_seed).map_err(plan_err)?;
        write_plan(&r.plan, create(&a.out)?).map_err(plan_err)?;
        write_telemetry_csv(&r.telemetry, create(&beside(&a.out, "telemetry.csv"))?).map_err(run_err)?;
    }
    write_resolved(&cfg, &beside(&a.out, RESOLVED))
}

pub fn policy_eval(common: &Common, policies: &Path, model: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = config(common)?;
    let family: PoliciesFile = read_versioned(policies)?;
    if family.policies.len() < 2 {
        return Err(CliError::Config("policy family needs at least two policies".into()));
    }
    let model = Model::load(model)?;
    let _lock = Lock::acquire(out)?;
    let world = model.world(&cfg, model.chains()?);
    let specs: Vec<_> = family.policies.iter().map(|p| p.spec()).collect();
    let episodes = evaluate_family(Exec::default(), &world, &specs, &world.camera, &cfg.data.ik, &cfg.policy_eval)
        .map_err(plan_err)?;
    let table = success_table(&episodes).map_err(run_err)?;
    use std::io::Write;
    let mut w = create(out)?;
    writeln!(w, "name,kind,noise,chunk,real,proxy").map_err(run_err)?;
    for (i, p) in family.policies.iter().enumerate() {
        let kind = serde_json::to_value(p.policy.kind).map_err(run_err)?;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.name,
            kind.as_str().unwrap_or_default(),
            p.policy.noise,
            p.chunk,
            table.real[i],
            table.proxy[i]
        )
        .map_err(run_err)?;
    }
    w.flush().map_err(run_err)?;
    let fmt = |r: Result<f64, MetricsError>| match r {
        Ok(v) => format!("{v}"),
        Err(MetricsError::ZeroVariance) => "undefined".into(),
        Err(e) => e.to_string(),
    };
    let mut s = create(&beside(out, "summary.csv"))?;
    writeln!(s, "metric,value\nmmrv,{}\npearson_r,{}", fmt(mmrv(&table)), fmt(pearson_r(&table))).map_err(run_err)?;
    s.flush().map_err(run_err)?;
    write_resolved(&cfg, &beside(out, RESOLVED))
}

fn eval_pair(name: &str, pred: &Path, truth: &Path) -> Result<EvalRow, CliError> {
    let p = RgbVideo::load_dir(&frames_dir(pred)).map_err(|e| CliError::Run(format!("{}: {e}", pred.display())))?;
    let t = RgbVideo::load_dir(&frames_dir(truth)).map_err(|e| CliError::Run(format!("{}: {e}", truth.display())))?;
    let m = MaskVideo::load_dir(&masks_dir(truth)).map_err(|e| CliError::Run(format!("{}: {e}", truth.display())))?;
    EvalRow::compute(name, &p, &t, &m).map_err(run_err)
}

pub fn eval(common: &Common, pred: &Path, truth: &Path, out: &Path) -> Result<(), CliError> {
    let cfg = config(common)?;
    let _lock = Lock::acquire(out)?;
    let mut rows = Vec::new();
    if truth.join("manifest.jsonl").is_file() {
        for r in read_manifest(truth).map_err(run_err)? {
            let dir = Path::new(&r.frame_dir).parent().map(Path::to_path_buf).unwrap_or_default();
            let name = dir.to_string_lossy().into_owned();
            if pred.join(&dir).is_dir() {
                rows.push(eval_pair(&name, &pred.join(&dir), &truth.join(&dir))?);
            }
        }
        if rows.is_empty() {
            return Err(CliError::Run(format!("{} has no rollout matching a tuple of {}", pred.display(), truth.display())));
        }
    } else {
        let name = truth.file_name().unwrap_or_default().to_string_lossy().into_owned();
        rows.push(eval_pair(&name, pred, truth)?);
    }
    if rows.len() > 1 {
        rows.extend(mean_row("mean", &rows));
    }
    write_eval_csv(&rows, create(out)?).map_err(run_err)?;
    write_eval_markdown(&rows, create(&beside(out, "md"))?).map_err(run_err)?;
    write_resolved(&cfg, &beside(out, RESOLVED))
}
