//! Flat `key = value` experiment configuration. Unknown keys are rejected
//! and every error carries the offending line number. All defaults live
//! here; command-line flags override the file.

use evopath::envs::LandscapeConfig;
use evopath::expert::ReverseCurriculumConfig;
use evopath::transfer::{TransferConfig, TransferMethod};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{file}:{line}: {message}")]
    Line { file: String, line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error("missing required key `env` (set it in the config file or pass --env)")]
    MissingEnv,
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub env: Option<String>,
    pub method: TransferMethod,
    pub seeds: Vec<u64>,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub transfer: TransferConfig,
    pub landscape: LandscapeConfig,
    pub expert: ReverseCurriculumConfig,
    pub expert_policy_path: Option<PathBuf>,
    pub oracle_grid_resolution: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            env: None,
            method: TransferMethod::Deps,
            seeds: vec![0, 1, 2, 3, 4],
            seed: 0,
            out: PathBuf::from("out"),
            threads: 0,
            transfer: TransferConfig::default(),
            landscape: LandscapeConfig::default(),
            expert: ReverseCurriculumConfig::default(),
            expert_policy_path: None,
            oracle_grid_resolution: 21,
        }
    }
}

impl ExperimentConfig {
    pub fn env_id(&self) -> Result<&str, ConfigError> {
        self.env.as_deref().ok_or(ConfigError::MissingEnv)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if let Some(env) = &self.env {
            if !evopath::envs::FAMILY_IDS.contains(&env.as_str()) {
                return Err(ConfigError::Invalid(format!(
                    "unknown env {env:?}; known: {}",
                    evopath::envs::FAMILY_IDS.join(", ")
                )));
            }
        }
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seeds must be nonempty".into()));
        }
        self.transfer
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.landscape
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Invalid(format!("read {}: {e}", path.display())))?;
    parse_config_str(&text, &path.display().to_string())
}

pub fn parse_config_str(text: &str, file: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    // barrier center needs the final dim; remember where it was set
    let mut barrier_center_raw: Option<(usize, String)> = None;
    for (idx, raw_line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw_line.find('#') {
            Some(pos) => &raw_line[..pos],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| ConfigError::Line {
            file: file.to_string(),
            line: line_no,
            message,
        };
        let Some((key, value)) = line.split_once('=') else {
            return Err(err(format!("expected `key = value`, got {line:?}")));
        };
        let key = key.trim();
        let value = value.trim();
        if value.is_empty() {
            return Err(err(format!("empty value for key `{key}`")));
        }
        apply_key(&mut cfg, key, value, &mut barrier_center_raw, line_no)
            .map_err(err)?;
    }
    if let Some((line_no, raw)) = barrier_center_raw {
        cfg.landscape.barrier_center = parse_center(&raw, cfg.landscape.dim).map_err(|m| {
            ConfigError::Line { file: file.to_string(), line: line_no, message: m }
        })?;
    } else if cfg.landscape.barrier_center.len() != cfg.landscape.dim {
        cfg.landscape.barrier_center = vec![0.5; cfg.landscape.dim];
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_center(raw: &str, dim: usize) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = raw.split(',').map(str::trim).collect();
    let values: Result<Vec<f64>, _> = parts.iter().map(|p| p.parse::<f64>()).collect();
    let values = values.map_err(|e| format!("bad landscape.barrier_center: {e}"))?;
    if values.len() == 1 {
        Ok(vec![values[0]; dim])
    } else if values.len() == dim {
        Ok(values)
    } else {
        Err(format!(
            "landscape.barrier_center has {} components, landscape.dim is {dim}",
            values.len()
        ))
    }
}

fn apply_key(
    cfg: &mut ExperimentConfig,
    key: &str,
    value: &str,
    barrier_center_raw: &mut Option<(usize, String)>,
    line_no: usize,
) -> Result<(), String> {
    fn real(value: &str, key: &str) -> Result<f64, String> {
        value.parse::<f64>().map_err(|_| format!("key `{key}` expects a number, got {value:?}"))
    }
    fn integer(value: &str, key: &str) -> Result<u64, String> {
        value.parse::<u64>().map_err(|_| {
            format!("key `{key}` expects a nonnegative integer, got {value:?}")
        })
    }
    fn boolean(value: &str, key: &str) -> Result<bool, String> {
        match value {
            "true" => Ok(true),
            "false" => Ok(false),
            _ => Err(format!("key `{key}` expects true/false, got {value:?}")),
        }
    }
    fn positive(v: f64, key: &str) -> Result<f64, String> {
        if v > 0.0 && v.is_finite() {
            Ok(v)
        } else {
            Err(format!("key `{key}` must be positive, got {v}"))
        }
    }

    match key {
        "env" => cfg.env = Some(value.to_string()),
        "method" => {
            cfg.method = TransferMethod::from_id(value)
                .ok_or_else(|| format!("unknown method {value:?} (deps or linear)"))?;
        }
        "seeds" => {
            let seeds: Result<Vec<u64>, _> =
                value.split(',').map(|s| s.trim().parse::<u64>()).collect();
            cfg.seeds = seeds.map_err(|_| format!("key `seeds` expects integers, got {value:?}"))?;
        }
        "seed" => cfg.seed = integer(value, key)?,
        "out" => cfg.out = PathBuf::from(value),
        "threads" => cfg.threads = integer(value, key)? as usize,

        "xi" => cfg.transfer.xi = positive(real(value, key)?, key)?,
        "n_probes" => cfg.transfer.n_probes = integer(value, key)?.max(1) as usize,
        "probes_per_point" => {
            cfg.transfer.probes_per_point = integer(value, key)?.max(1) as usize
        }
        "lambda" => cfg.transfer.lambda = real(value, key)?,
        "lambda1" => cfg.transfer.lambda1 = real(value, key)?,
        "q" => cfg.transfer.q = real(value, key)?,
        "n_curriculum_iters" => {
            cfg.transfer.n_curriculum_iters = integer(value, key)? as usize
        }
        "eval_episodes" => cfg.transfer.eval_episodes = integer(value, key)?.max(1) as usize,
        "early_stop" => cfg.transfer.early_stop = boolean(value, key)?,
        "recheck_after_train" => cfg.transfer.recheck_after_train = boolean(value, key)?,
        "max_steps" => cfg.transfer.max_steps = integer(value, key)? as usize,
        "max_train_iters" => cfg.transfer.max_train_iters = integer(value, key)?,
        "target_success" => cfg.transfer.target_success = real(value, key)?,

        "gamma" => cfg.transfer.rl.gamma = positive(real(value, key)?, key)?,
        "gae_lambda" => cfg.transfer.rl.gae_lambda = real(value, key)?,
        "npg_step" => cfg.transfer.rl.npg_step = positive(real(value, key)?, key)?,
        "batch" => cfg.transfer.rl.batch = integer(value, key)?.max(1) as usize,
        "cg_iters" => cfg.transfer.rl.cg_iters = integer(value, key)?.max(1) as usize,
        "cg_damping" => cfg.transfer.rl.cg_damping = positive(real(value, key)?, key)?,
        "value_epochs" => cfg.transfer.rl.value_epochs = integer(value, key)? as usize,
        "value_lr" => cfg.transfer.rl.value_lr = positive(real(value, key)?, key)?,

        "landscape.dim" => {
            cfg.landscape.dim = integer(value, key)?.max(1) as usize;
        }
        "landscape.barrier_height" => cfg.landscape.barrier_height = real(value, key)?,
        "landscape.barrier_width" => cfg.landscape.barrier_width = real(value, key)?,
        "landscape.barrier_center" => {
            *barrier_center_raw = Some((line_no, value.to_string()));
        }
        "landscape.noise_sigma" => cfg.landscape.noise_sigma = real(value, key)?,
        "landscape.q_success" => cfg.landscape.q_success = real(value, key)?,

        "expert.stride" => cfg.expert.stride = integer(value, key)?.max(1) as usize,
        "expert.promote_threshold" => cfg.expert.promote_threshold = real(value, key)?,
        "expert.noise_scale" => cfg.expert.noise_scale = real(value, key)?,
        "expert.max_outer_iters" => cfg.expert.max_outer_iters = integer(value, key)?,
        "expert.window" => cfg.expert.window = integer(value, key)?.max(1) as usize,
        "expert.final_target" => cfg.expert.final_target = real(value, key)?,
        "expert.cert_episodes" => cfg.expert.cert_episodes = integer(value, key)?.max(1) as usize,
        "expert.policy_path" => cfg.expert_policy_path = Some(PathBuf::from(value)),

        "oracle.grid_resolution" => {
            cfg.oracle_grid_resolution = integer(value, key)?.max(2) as usize
        }

        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}
