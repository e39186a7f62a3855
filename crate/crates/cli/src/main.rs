mod commands;
mod config;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Action-to-mask world model pipeline.
#[derive(Debug, Parser)]
#[command(name = "ewm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand.
#[derive(Debug, Args)]
struct Common {
    /// TOML run config; omitted keys take their defaults.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Overrides one config key, e.g. `--set train.epochs=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render the embodiment masks of an action sequence as PBM frames.
    RenderMask {
        /// URDF path or bundled fixture name.
        #[arg(long)]
        urdf: String,
        /// Camera JSON file, or `toy` for the bundled top-down camera.
        #[arg(long)]
        camera: String,
        /// Action sequence JSON.
        #[arg(long, value_name = "FILE")]
        actions: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a dataset of oracle rollouts from `[data]`.
    GenData {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Train the predictor from `[train]` on a generated dataset.
    Train {
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        /// Parameter file; the loss log and settings are written beside it.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Predict one dataset tuple and score it against the oracle video.
    Rollout {
        /// Trained parameters; required unless `--oracle`.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Use the kinematic oracle as the world model.
        #[arg(long)]
        oracle: bool,
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long)]
        tuple: usize,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// CEM planning toward goal images; with `--mpc` runs the MPC loop.
    Plan {
        /// Goal image (PPM). Defaults to the task's goal with `--task`.
        #[arg(long, value_name = "FILE")]
        goal: Option<PathBuf>,
        /// Second subgoal image (PPM); requires `--mpc`.
        #[arg(long, value_name = "FILE")]
        goal2: Option<PathBuf>,
        /// joint, rotation_first, reallocated or axis_wise; overrides `plan.strategy`.
        #[arg(long)]
        strategy: Option<String>,
        /// Bundled scene: `reach` or `flip`.
        #[arg(long, conflicts_with = "data")]
        task: Option<String>,
        /// Seed of the bundled scene.
        #[arg(long, default_value_t = 0)]
        task_seed: u64,
        /// Dataset whose tuple supplies the start scene.
        #[arg(long, value_name = "DIR", requires = "tuple")]
        data: Option<PathBuf>,
        #[arg(long)]
        tuple: Option<usize>,
        /// Trained parameters; the oracle world is used when omitted.
        #[arg(long, value_name = "FILE")]
        model: Option<PathBuf>,
        /// Run the receding-horizon loop for up to `mpc.max_cycles` cycles
        /// instead of planning once.
        #[arg(long)]
        mpc: bool,
        /// Plan JSON; telemetry is written beside it.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score a policy family in the learned world model against the oracle.
    PolicyEval {
        /// Policy family JSON.
        #[arg(long, value_name = "FILE")]
        policies: PathBuf,
        #[arg(long, value_name = "FILE")]
        model: PathBuf,
        /// Success table CSV; MMRV and Pearson r are written beside it.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// PSNR, SSIM and Mask-IoU of predicted against true videos.
    Eval {
        /// Predicted frames, a rollout directory, or a directory of tuple_* rollouts.
        #[arg(long, value_name = "DIR")]
        pred: PathBuf,
        /// True frames and masks, a tuple directory, or a dataset.
        #[arg(long, value_name = "DIR")]
        truth: PathBuf,
        /// CSV report; a Markdown table is written beside it.
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or arguments; exit code 2.
    Config(String),
    /// Anything else; exit code 1.
    Run(String),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Run(_) => "run",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Run(m) => m,
        }
    }
}

pub fn run_err(e: impl std::fmt::Display) -> CliError {
    CliError::Run(e.to_string())
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    use commands as c;
    match cli.command {
        Command::RenderMask {
            urdf,
            camera,
            actions,
            out,
            common,
        } => c::render_mask(&common, &urdf, &camera, &actions, &out),
        Command::GenData { out, common } => c::gen_data(&common, &out),
        Command::Train { data, out, common } => c::train(&common, &data, &out),
        Command::Rollout {
            model,
            oracle,
            data,
            tuple,
            out,
            common,
        } => c::rollout(&common, model.as_deref(), oracle, &data, tuple, &out),
        Command::Plan {
            goal,
            goal2,
            strategy,
            task,
            task_seed,
            data,
            tuple,
            model,
            mpc,
            out,
            common,
        } => c::plan(
            &common,
            &c::PlanArgs {
                goal,
                goal2,
                strategy,
                task,
                task_seed,
                data,
                tuple,
                model,
                mpc,
                out,
            },
        ),
        Command::PolicyEval {
            policies,
            model,
            out,
            common,
        } => c::policy_eval(&common, &policies, &model, &out),
        Command::Eval { pred, truth, out, common } => c::eval(&common, &pred, &truth, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": e.kind(), "message": e.message().replace('\n', " ") });
            eprintln!("{line}");
            ExitCode::from(match e {
                CliError::Config(_) => 2,
                CliError::Run(_) => 1,
            })
        }
    }
}
