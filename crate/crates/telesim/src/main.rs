use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use telesim::config::ExperimentConfig;
use telesim::experiments::{
    run_closed_loop_study, run_demo_replay, run_open_loop_study, run_refit_study, StudyPlan,
};
use telesim::trajectory::Axis;

/// Deterministic teleoperation force-feedback studies.
#[derive(Parser)]
#[command(name = "telesim", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Experiment config file (TOML); defaults are built in.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for independent cells (1 = serial).
    #[arg(long, default_value_t = 1)]
    parallel: usize,
}

#[derive(Args)]
struct PlanArgs {
    /// Comma-separated estimator preset names (default: all but `unstable`).
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// Comma-separated axes (default: x,y,z).
    #[arg(long, value_delimiter = ',')]
    axes: Option<Vec<Axis>>,
    /// Passivity conditions to run.
    #[arg(long, value_enum, default_value_t = PopcArg::Both)]
    popc: PopcArg,
}

#[derive(Clone, Copy, ValueEnum)]
enum PopcArg {
    On,
    Off,
    Both,
}

impl PopcArg {
    fn conditions(self) -> Vec<bool> {
        match self {
            PopcArg::On => vec![true],
            PopcArg::Off => vec![false],
            PopcArg::Both => vec![false, true],
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Stiffness estimation during open-loop palpation and retraction.
    OpenLoop {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Closed-loop force-feedback manipulation with the operator model.
    ClosedLoop {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        plan: PlanArgs,
    },
    /// Train the base network and refit it with data from each feedback
    /// condition, then compare all models in closed loop.
    Refit {
        #[command(flatten)]
        common: CommonArgs,
        /// Axis the refitting study runs on.
        #[arg(long, default_value = "z")]
        axis: Axis,
    },
    /// Replay the scripted 35 s demonstration with a trained network.
    DemoReplay {
        #[command(flatten)]
        common: CommonArgs,
        /// Model checkpoint (defaults to the refit study's ef model under --out).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn load_config(common: &CommonArgs) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)
            .with_context(|| format!("loading config {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.sim.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_plan(cfg: &ExperimentConfig, plan_args: &PlanArgs) -> StudyPlan {
    let mut plan = StudyPlan::from_config(cfg);
    if let Some(estimators) = &plan_args.estimators {
        plan.estimators = estimators.clone();
    }
    if let Some(axes) = &plan_args.axes {
        plan.axes = axes.clone();
    }
    plan.popc_conditions = plan_args.popc.conditions();
    plan
}

fn main() -> ExitCode {
    match run() {
        Ok(clean) => {
            if clean {
                ExitCode::SUCCESS
            } else {
                eprintln!("some cells diverged; see the metrics tables");
                ExitCode::FAILURE
            }
        }
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> anyhow::Result<bool> {
    let cli = Cli::parse();
    match cli.command {
        Command::OpenLoop { common, plan } => {
            let cfg = load_config(&common)?;
            let plan = build_plan(&cfg, &plan);
            let report =
                run_open_loop_study(&cfg, &plan, &common.out.join("open_loop"), common.parallel)?;
            println!(
                "open-loop study: {} cells, {} diverged",
                report.cell_names.len(),
                report.diverged.len()
            );
            Ok(report.diverged.is_empty())
        }
        Command::ClosedLoop { common, plan } => {
            let cfg = load_config(&common)?;
            let plan = build_plan(&cfg, &plan);
            let report = run_closed_loop_study(
                &cfg,
                &plan,
                &common.out.join("closed_loop"),
                common.parallel,
            )?;
            let diverged = report.metrics.iter().filter(|m| m.diverged).count();
            println!(
                "closed-loop study: {} cells, {} diverged",
                report.metrics.len(),
                diverged
            );
            Ok(diverged == 0)
        }
        Command::Refit { common, axis } => {
            let cfg = load_config(&common)?;
            let report = run_refit_study(&cfg, axis, &common.out.join("refit"), common.parallel)?;
            for (model, rmse) in &report.rmse_on_ef_validation {
                println!("validation rmse on feedback-condition data, {model}: {rmse:.4} N");
            }
            let diverged = report.comparison.iter().filter(|m| m.diverged).count();
            println!(
                "refit comparison: {} cells, {} diverged",
                report.comparison.len(),
                diverged
            );
            Ok(diverged == 0)
        }
        Command::DemoReplay { common, checkpoint } => {
            let cfg = load_config(&common)?;
            let checkpoint = checkpoint
                .unwrap_or_else(|| common.out.join("refit/checkpoints/ef.model.toml"));
            anyhow::ensure!(
                checkpoint.exists(),
                "model checkpoint {} not found; run the refit study first or pass --checkpoint",
                checkpoint.display()
            );
            let log = run_demo_replay(&cfg, &checkpoint, &common.out.join("demo_replay"))?;
            println!(
                "demo replay: {} samples over {:.1} s",
                log.records.len(),
                log.records.last().map_or(0.0, |r| r.t)
            );
            Ok(true)
        }
    }
}
