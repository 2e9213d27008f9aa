use clap::{Args, Parser, Subcommand};
use evopath::envs::{evaluate_success, landscape_oracle};
use evopath::policy::load_policy;
use evopath::seeds::StreamFactory;
use evopath::transfer::TransferMethod;
use evopath_cli::config::{parse_config, ConfigError, ExperimentConfig};
use evopath_cli::experiment::{
    parse_alpha, prepare_expert, run_experiment, run_one, FamilyHandle, RunError,
};
use evopath_cli::metrics::write_metrics_csv;
use std::path::PathBuf;
use std::process::ExitCode;

const EXIT_OK: u8 = 0;
const EXIT_RUNTIME: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_TIMEOUT: u8 = 3;

#[derive(Parser)]
#[command(
    name = "evopath",
    about = "Policy transfer across morphing environments via guided path search"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Flat key = value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Transfer method: deps or linear.
    #[arg(long)]
    method: Option<String>,
    /// Environment family id: landscape or grasp-reacher.
    #[arg(long)]
    env: Option<String>,
    /// Worker threads (0 = automatic).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one transfer (one seed, one method) and write its artifacts.
    Transfer(Common),
    /// Train the source-environment expert and write the policy document.
    TrainExpert(Common),
    /// Evaluate a saved policy at a point of the evolution cube.
    Eval(EvalArgs),
    /// Exact grid maximin oracle for the landscape family.
    Oracle(OracleArgs),
    /// Multi-seed comparison of both methods; writes metrics.csv + summary.
    Compare(Common),
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Policy document to evaluate.
    #[arg(long)]
    policy: PathBuf,
    /// Evolution parameter: scalar (broadcast) or comma list.
    #[arg(long, default_value = "0")]
    alpha: String,
    #[arg(long, default_value_t = 100)]
    episodes: usize,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    /// Grid resolution per axis.
    #[arg(long)]
    grid: Option<usize>,
}

fn load_config(common: &Common) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = match &common.config {
        Some(path) => parse_config(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.out = out.clone();
    }
    if let Some(env) = &common.env {
        cfg.env = Some(env.clone());
    }
    if let Some(method) = &common.method {
        cfg.method = TransferMethod::from_id(method).ok_or_else(|| {
            ConfigError::Invalid(format!("unknown method {method:?} (deps or linear)"))
        })?;
    }
    if let Some(threads) = common.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn init_threads(cfg: &ExperimentConfig) {
    if cfg.threads > 0 {
        if let Err(e) =
            rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global()
        {
            log::warn!("thread pool already initialized: {e}");
        }
    }
}

fn cmd_transfer(common: &Common) -> Result<u8, RunError> {
    let cfg = load_config(common)?;
    init_threads(&cfg);
    let family = FamilyHandle::build(&cfg)?;
    let seed = cfg.seed;
    std::fs::create_dir_all(&cfg.out).map_err(RunError::runtime)?;
    let seed_dir = cfg.out.join(format!("seed{seed}"));
    let expert = prepare_expert(&cfg, &family, seed, Some(&seed_dir))?;
    let (row, record, policy) = run_one(&cfg, &family, &expert, cfg.method, seed)?;
    let dir = cfg.out.join(format!("{}_seed{seed}", cfg.method.id()));
    std::fs::create_dir_all(&dir).map_err(RunError::runtime)?;
    std::fs::write(dir.join("path_record.json"), record.to_json())
        .map_err(RunError::runtime)?;
    evopath::policy::save_policy(&policy, &dir.join("policy.json"))
        .map_err(RunError::runtime)?;
    write_metrics_csv(&[row.clone()], &cfg.out.join("metrics.csv"))
        .map_err(RunError::runtime)?;
    println!(
        "{} seed {seed}: reached_target={} train_iters={} sim_epochs={} (jacobian {}, \
         training {}, evaluation {})",
        cfg.method.id(),
        row.reached_target,
        row.train_iters,
        row.sim_epochs_total,
        row.sim_epochs_jacobian,
        row.sim_epochs_training,
        row.sim_epochs_evaluation
    );
    Ok(if record.timed_out { EXIT_TIMEOUT } else { EXIT_OK })
}

fn cmd_train_expert(common: &Common) -> Result<u8, RunError> {
    let cfg = load_config(common)?;
    init_threads(&cfg);
    let family = FamilyHandle::build(&cfg)?;
    let seed_dir = cfg.out.join(format!("seed{}", cfg.seed));
    std::fs::create_dir_all(&seed_dir).map_err(RunError::runtime)?;
    let expert = prepare_expert(&cfg, &family, cfg.seed, Some(&seed_dir))?;
    let path = seed_dir.join("expert_policy.json");
    evopath::policy::save_policy(&expert, &path).map_err(RunError::runtime)?;
    println!("expert policy written to {}", path.display());
    Ok(EXIT_OK)
}

fn cmd_eval(args: &EvalArgs) -> Result<u8, RunError> {
    let cfg = load_config(&args.common)?;
    init_threads(&cfg);
    let family = FamilyHandle::build(&cfg)?;
    let policy = load_policy(&args.policy).map_err(RunError::runtime)?;
    let alpha = parse_alpha(&args.alpha, family.as_dyn().dim())?;
    let rate = evaluate_success(
        &policy,
        family.as_dyn(),
        &alpha,
        args.episodes.max(1),
        cfg.transfer.rl.gamma,
        &StreamFactory::new(cfg.seed).child("eval"),
    );
    println!(
        "success rate {rate:.4} over {} episodes at alpha = {:?}",
        args.episodes.max(1),
        alpha.values()
    );
    Ok(EXIT_OK)
}

fn cmd_oracle(args: &OracleArgs) -> Result<u8, RunError> {
    let mut cfg = load_config(&args.common)?;
    if cfg.env.is_none() {
        cfg.env = Some("landscape".into());
    }
    if cfg.env.as_deref() != Some("landscape") {
        return Err(RunError::Runtime("the oracle only supports the landscape env".into()));
    }
    let grid = args.grid.unwrap_or(cfg.oracle_grid_resolution);
    let oracle = landscape_oracle(&cfg.landscape, grid).map_err(RunError::runtime)?;
    let doc = serde_json::json!({
        "grid_resolution": grid,
        "maximin": oracle.maximin,
        "path": oracle.path,
    });
    println!("{}", serde_json::to_string_pretty(&doc).expect("oracle serializes"));
    Ok(EXIT_OK)
}

fn cmd_compare(common: &Common) -> Result<u8, RunError> {
    let cfg = load_config(common)?;
    init_threads(&cfg);
    let artifacts =
        run_experiment(&cfg, &[TransferMethod::Deps, TransferMethod::Linear])?;
    println!(
        "wrote {} rows to {}",
        artifacts.rows.len(),
        artifacts.out_dir.join("metrics.csv").display()
    );
    Ok(EXIT_OK)
}

fn dispatch(cli: &Cli) -> Result<u8, RunError> {
    match &cli.cmd {
        Cmd::Transfer(c) => cmd_transfer(c),
        Cmd::TrainExpert(c) => cmd_train_expert(c),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Oracle(a) => cmd_oracle(a),
        Cmd::Compare(c) => cmd_compare(c),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(RunError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(RunError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
