use std::path::PathBuf;
use std::process::ExitCode;

use afford_core::envs;
use afford_core::predictor::checkpoint;
use afford_core::rng::{self, tags};
use afford_core::trainer::{evaluate, mean_and_info, EvalStreams, GroundTruthOracle, MapSource};
use afford_harness::experiment::{self, run_and_save, summary_path};
use afford_harness::output::{self, save_pgm};
use afford_harness::stats::{aggregate, Pooling};
use afford_harness::{verify, Error, Result, Settings};
use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "afford-bandit", version, about = "Affordance discovery as a contextual bandit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one method on one env and seed.
    Train(RunArgs),
    /// Run the methods x seeds matrix (x --envs, if given) and summarize it.
    Sweep(RunArgs),
    /// Re-evaluate a saved parameter file (or the ground truth) on fresh scenes.
    Eval(EvalArgs),
    /// Write heights, mean affordance and info maps of a fresh scene.
    RenderMaps(RenderArgs),
    /// Run the information-gain and gradient self-checks.
    Verify,
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Flat `key = value` config file; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// Comma-separated envs (sweep).
    #[arg(long, value_delimiter = ',')]
    envs: Option<Vec<String>>,
    #[arg(long)]
    method: Option<String>,
    /// Comma-separated methods (sweep).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long = "c-expl")]
    c_expl: Option<f64>,
    #[arg(long = "c-eval")]
    c_eval: Option<f64>,
    /// Ensemble size.
    #[arg(long)]
    ensemble: Option<usize>,
    /// HxW, or N for a square grid.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    orientations: Option<usize>,
    #[arg(long)]
    arch: Option<String>,
    #[arg(long = "learning-rate")]
    learning_rate: Option<f64>,
    #[arg(long = "batch-size")]
    batch_size: Option<usize>,
    #[arg(long)]
    updates: Option<usize>,
    #[arg(long = "eval-episodes")]
    eval_episodes: Option<usize>,
    /// Comma-separated checkpoint steps.
    #[arg(long, value_delimiter = ',')]
    checkpoints: Option<Vec<usize>>,
    #[arg(long = "bootstrap-reps")]
    bootstrap_reps: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn settings(self) -> Result<Settings> {
        let base = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        let flags = Settings {
            env: self.env,
            envs: self.envs,
            method: self.method,
            methods: self.methods,
            seed: self.seed,
            seeds: self.seeds,
            budget: self.budget,
            warmup: self.warmup,
            eval_checkpoints: self.checkpoints,
            eval_episodes: self.eval_episodes,
            c_expl: self.c_expl,
            c_eval: self.c_eval,
            ensemble: self.ensemble,
            grid: self.grid,
            orientations: self.orientations,
            arch: self.arch,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            updates_per_interaction: self.updates,
            bootstrap_reps: self.bootstrap_reps,
            out: self.out,
            ..Settings::default()
        };
        Ok(base.overlay(flags))
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Parameter file written by `train` or `sweep`.
    #[arg(long, required_unless_present = "oracle")]
    params: Option<PathBuf>,
    /// Use the env's hidden ground truth instead of a model.
    #[arg(long, conflicts_with = "params")]
    oracle: bool,
    #[arg(long, default_value = "shape_grasp")]
    env: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    #[arg(long = "c-eval", default_value_t = 0.1)]
    c_eval: f64,
    /// Grid for --oracle runs; a model's own grid is used otherwise.
    #[arg(long, default_value = "32x32")]
    grid: String,
    #[arg(long, default_value_t = 8)]
    orientations: usize,
}

#[derive(Debug, Args)]
struct RenderArgs {
    #[arg(long)]
    params: PathBuf,
    #[arg(long, default_value = "shape_grasp")]
    env: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "maps")]
    out: PathBuf,
}

fn train(args: RunArgs) -> Result<()> {
    let settings = args.settings()?;
    let cfg = settings.run_config(settings.method_kind()?, settings.env_kind()?, settings.base_seed())?;
    let out = settings.out_dir();
    let (outcome, paths) = run_and_save(&cfg, &out)?;
    let result = experiment::result_of(&cfg, &outcome);
    for &(t, rate) in &result.checkpoints {
        println!("{} {} seed={} t={t} success_rate={rate:.3}", result.method, result.env, result.seed);
    }
    let summary = aggregate(&[result], settings.reps(), settings.base_seed())?;
    output::save_summary(&summary, &summary_path(&out))?;
    println!("log={}", paths.log.display());
    println!("params={}", paths.params.display());
    Ok(())
}

fn sweep(args: RunArgs) -> Result<()> {
    let settings = args.settings()?;
    let configs = experiment::sweep_configs(&settings)?;
    let out = settings.out_dir();
    let (_, summary) = experiment::sweep(&configs, &out, settings.reps(), settings.base_seed())?;
    println!("{:<10} {:<12} {:>5} {:>5} {:>6} {:>6} {:>6}", "method", "env", "t", "n", "mean", "lo", "hi");
    for r in summary.rows.iter().filter(|r| r.pooling != Pooling::Runs) {
        println!(
            "{:<10} {:<12} {:>5} {:>5} {:>6.3} {:>6.3} {:>6.3}",
            r.method, r.env, r.checkpoint, r.seed_count, r.ci.point, r.ci.lo, r.ci.hi
        );
    }
    println!("runs={} summary={}", configs.len(), summary_path(&out).display());
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let kind: envs::EnvKind = args.env.parse()?;
    let (source, grid, q): (Box<dyn MapSource>, _, _) = match &args.params {
        Some(path) => {
            let model = checkpoint::load(path).map_err(|e| annotate(path, e))?;
            let (grid, q) = (model.config().grid, model.config().orientations);
            (Box::new(model), grid, q)
        }
        None => (Box::new(GroundTruthOracle), afford_harness::config::parse_grid(&args.grid)?, args.orientations),
    };
    let env = envs::EnvConfig::new(kind, grid, q);
    env.validate()?;
    let mut streams = EvalStreams::for_checkpoint(args.seed, 0);
    let res = evaluate(source.as_ref(), &env, args.c_eval, args.episodes, &mut streams)?;
    println!("env={kind} episodes={} success_rate={:.4}", args.episodes, res.success_rate);
    Ok(())
}

fn render(args: RenderArgs) -> Result<()> {
    let kind: envs::EnvKind = args.env.parse()?;
    let model = checkpoint::load(&args.params).map_err(|e| annotate(&args.params, e))?;
    let grid = model.config().grid;
    let env = envs::EnvConfig::new(kind, grid, model.config().orientations);
    env.validate()?;
    let mut rng = rng::stream(args.seed, tags::EVAL_SCENES);
    let state = envs::reset(&env, &mut rng, 0)?;
    let (mean, info) = mean_and_info(&model.predict_all(state.scene())?, state.scene().mask())?;
    let stem = format!("{kind}_seed{}", args.seed);
    for (what, values) in [
        ("scene", state.scene().heights().to_vec()),
        ("afford", mean.max_over_orientations()),
        ("info", info.max_over_orientations()),
    ] {
        let path = args.out.join(format!("{stem}_{what}.pgm"));
        save_pgm(&values, grid.width, grid.height, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn annotate(path: &std::path::Path, e: afford_core::Error) -> Error {
    match e {
        afford_core::Error::Io(io) => Error::io(path, io),
        other => Error::Core(other),
    }
}

fn run_verify() -> Result<bool> {
    let mut ok = true;
    for c in verify::run_all()? {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    Ok(ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a).map(|_| true),
        Command::Sweep(a) => sweep(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::RenderMaps(a) => render(a).map(|_| true),
        Command::Verify => run_verify(),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
