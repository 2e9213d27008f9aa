//! The multi-seed experiment runner: per seed, train (or load) one expert,
//! run each requested method from that same expert snapshot, and write
//! path records, policy documents, metrics rows, and the summary.

use crate::config::{ConfigError, ExperimentConfig};
use crate::metrics::{summarize, write_metrics_csv, MetricsRow};
use evopath::envs::{
    make_demo_trajectory, EnvFamily, LandscapeFamily, ReacherFamily,
};
use evopath::expert::{reverse_curriculum_train, save_demo, ExpertError};
use evopath::policy::{load_policy, save_policy, GaussianMlpPolicy};
use evopath::seeds::StreamFactory;
use evopath::transfer::{run_transfer, PathRecord, TransferMethod};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Runtime(String),
}

impl RunError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        RunError::Runtime(e.to_string())
    }
}

#[derive(Clone)]
pub enum FamilyHandle {
    Landscape(Arc<LandscapeFamily>),
    Reacher(Arc<ReacherFamily>),
}

impl FamilyHandle {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, RunError> {
        match cfg.env_id()? {
            "landscape" => Ok(FamilyHandle::Landscape(Arc::new(
                LandscapeFamily::new(cfg.landscape.clone()).map_err(RunError::runtime)?,
            ))),
            "grasp-reacher" => Ok(FamilyHandle::Reacher(Arc::new(ReacherFamily::new()))),
            other => Err(RunError::Runtime(format!("unknown env {other:?}"))),
        }
    }

    pub fn as_dyn(&self) -> &dyn EnvFamily {
        match self {
            FamilyHandle::Landscape(f) => f.as_ref(),
            FamilyHandle::Reacher(f) => f.as_ref(),
        }
    }
}

pub struct Artifacts {
    pub rows: Vec<MetricsRow>,
    pub out_dir: PathBuf,
    pub any_timeout: bool,
}

fn ensure_dir(path: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(path)
        .map_err(|e| RunError::Runtime(format!("create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text)
        .map_err(|e| RunError::Runtime(format!("write {}: {e}", path.display())))
}

/// Train or load the expert for one seed. The same snapshot feeds every
/// method, so the comparison isolates the path search itself.
pub fn prepare_expert(
    cfg: &ExperimentConfig,
    family: &FamilyHandle,
    seed: u64,
    out_seed_dir: Option<&Path>,
) -> Result<GaussianMlpPolicy, RunError> {
    let streams = StreamFactory::new(seed);
    match family {
        FamilyHandle::Landscape(f) => {
            // the bandit has no learnable behavior; any policy will do
            let mut rng = streams.stream("policy-init");
            Ok(GaussianMlpPolicy::new(
                f.obs_dim(),
                f.act_dim(),
                &[32, 32],
                f.id(),
                &mut rng,
            ))
        }
        FamilyHandle::Reacher(f) => {
            if let Some(path) = &cfg.expert_policy_path {
                let policy = load_policy(path).map_err(RunError::runtime)?;
                if policy.env_id != f.id()
                    || policy.obs_dim() != f.obs_dim()
                    || policy.act_dim() != f.act_dim()
                {
                    return Err(RunError::Runtime(format!(
                        "expert policy {} does not match env {}",
                        path.display(),
                        f.id()
                    )));
                }
                return Ok(policy);
            }
            let demo = make_demo_trajectory(f, streams.stream("demo"))
                .map_err(RunError::runtime)?;
            let mut rng = streams.stream("policy-init");
            let init = GaussianMlpPolicy::new(
                f.obs_dim(),
                f.act_dim(),
                &[32, 32],
                f.id(),
                &mut rng,
            );
            let outcome = reverse_curriculum_train(
                f.as_ref(),
                &demo,
                &init,
                &cfg.expert,
                &cfg.transfer.rl,
                &streams.child("expert"),
            )
            .map_err(|e| match e {
                ExpertError::Stalled { furthest_index, train_iters } => RunError::Runtime(
                    format!(
                        "expert training stalled at demo index {furthest_index} after \
                         {train_iters} iterations (seed {seed})"
                    ),
                ),
                other => RunError::runtime(other),
            })?;
            if let Some(dir) = out_seed_dir {
                ensure_dir(dir)?;
                save_demo(&demo, &dir.join("demo.json")).map_err(RunError::runtime)?;
                save_policy(&outcome.policy, &dir.join("expert_policy.json"))
                    .map_err(RunError::runtime)?;
                write_text(
                    &dir.join("expert_log.json"),
                    &serde_json::to_string_pretty(&outcome.log).expect("log serializes"),
                )?;
            }
            Ok(outcome.policy)
        }
    }
}

pub fn run_one(
    cfg: &ExperimentConfig,
    family: &FamilyHandle,
    expert: &GaussianMlpPolicy,
    method: TransferMethod,
    seed: u64,
) -> Result<(MetricsRow, PathRecord, GaussianMlpPolicy), RunError> {
    let streams = StreamFactory::new(seed).child(&format!("transfer/{}", method.id()));
    let start = std::time::Instant::now();
    let outcome = run_transfer(method, family.as_dyn(), expert, &cfg.transfer, &streams)
        .map_err(RunError::runtime)?;
    let wall = start.elapsed().as_secs_f64();
    let record = outcome.record;
    debug_assert!(record.ledger_consistent());
    let row = MetricsRow {
        seed,
        method: method.id().to_string(),
        env: family.as_dyn().id().to_string(),
        sim_epochs_total: record.cumulative.total_epochs(),
        sim_epochs_jacobian: record.cumulative.jacobian,
        sim_epochs_training: record.cumulative.training,
        sim_epochs_evaluation: record.cumulative.evaluation,
        train_iters: record.cumulative.train_iters,
        reached_target: record.reached_target,
        wall_time_s: wall,
    };
    Ok((row, record, outcome.policy))
}

/// Run every (seed, method) cell, writing all artifacts under the output
/// directory. Per-seed timeouts become rows with `reached_target = false`;
/// the run continues.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    methods: &[TransferMethod],
) -> Result<Artifacts, RunError> {
    cfg.validate()?;
    let family = FamilyHandle::build(cfg)?;
    ensure_dir(&cfg.out)?;
    let mut rows = Vec::new();
    let mut any_timeout = false;
    for &seed in &cfg.seeds {
        let seed_dir = cfg.out.join(format!("seed{seed}"));
        let expert = prepare_expert(cfg, &family, seed, Some(&seed_dir))?;
        for &method in methods {
            let (row, record, policy) = run_one(cfg, &family, &expert, method, seed)?;
            any_timeout |= record.timed_out;
            let dir = cfg.out.join(format!("{}_seed{seed}", method.id()));
            ensure_dir(&dir)?;
            write_text(&dir.join("path_record.json"), &record.to_json())?;
            save_policy(&policy, &dir.join("policy.json")).map_err(RunError::runtime)?;
            log::info!(
                "seed {seed} {}: train_iters={} epochs={} reached={}",
                method.id(),
                row.train_iters,
                row.sim_epochs_total,
                row.reached_target
            );
            rows.push(row);
        }
    }
    write_metrics_csv(&rows, &cfg.out.join("metrics.csv")).map_err(RunError::runtime)?;
    let env = cfg.env_id()?.to_string();
    let summary = summarize(&rows, &env, &cfg.seeds);
    write_text(
        &cfg.out.join("summary.json"),
        &serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )?;
    Ok(Artifacts { rows, out_dir: cfg.out.clone(), any_timeout })
}

/// Parse an alpha argument: a scalar broadcast over the cube or a comma
/// list of the family's dimension.
pub fn parse_alpha(
    raw: &str,
    dim: usize,
) -> Result<evopath::evo::EvolutionParameter, RunError> {
    let parts: Result<Vec<f64>, _> =
        raw.split(',').map(|p| p.trim().parse::<f64>()).collect();
    let values =
        parts.map_err(|_| RunError::Runtime(format!("bad alpha {raw:?}: expected numbers")))?;
    let values = if values.len() == 1 { vec![values[0]; dim] } else { values };
    if values.len() != dim {
        return Err(RunError::Runtime(format!(
            "alpha has {} components, env dimension is {dim}",
            values.len()
        )));
    }
    evopath::evo::EvolutionParameter::new(values).map_err(RunError::runtime)
}
