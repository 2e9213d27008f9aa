//! Parameterized environment families. A family maps an evolution parameter
//! to a concrete episodic environment; two desk-scale families are provided
//! and registered by string id: `landscape` (analytic bandit with a barrier)
//! and `grasp-reacher` (point-mass reacher with a two-channel grip
//! crossfade).

pub mod landscape;
pub mod reacher;

use crate::evo::{EvolutionParameter, ParamSpace};
use crate::exec::map_indexed;
use crate::policy::GaussianMlpPolicy;
use crate::seeds::StreamFactory;
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;
use thiserror::Error;

pub use landscape::{
    landscape_oracle, landscape_oracle_within, landscape_reward, landscape_value,
    LandscapeConfig, LandscapeFamily, OraclePath,
};
pub use reacher::{make_demo_trajectory, scripted_action, ReacherFamily};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("unknown environment family {0:?}")]
    UnknownFamily(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("state reset unsupported for this family")]
    StateResetUnsupported,
    #[error("invalid state vector: {0}")]
    InvalidState(String),
    #[error("oracle unsupported: {0}")]
    OracleUnsupported(String),
    #[error("scripted demonstration failed: {0}")]
    DemoFailed(String),
}

#[derive(Clone, Debug)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// One episodic environment instance, owned by a single rollout worker.
pub trait Env: Send {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Start a fresh episode from the nominal initial-state distribution.
    fn reset(&mut self) -> Vec<f64>;
    /// Advance one step. Panics if the episode is already done.
    fn step(&mut self, action: &[f64]) -> Step;
    fn done(&self) -> bool;
    /// True iff a reward of 1 was emitted this episode.
    fn succeeded(&self) -> bool;
    fn elapsed(&self) -> usize;
    /// Full internal state, sufficient to reproduce dynamics from here.
    fn state_vec(&self) -> Vec<f64>;
    /// Replace the internal state (fresh episode clock), returning the
    /// observation.
    fn reset_to_state(&mut self, state: &[f64]) -> Result<Vec<f64>, EnvError>;
    fn observe(&self) -> Vec<f64>;
}

/// Immutable, shareable factory producing environments for any point of the
/// evolution cube.
pub trait EnvFamily: Send + Sync {
    fn id(&self) -> &'static str;
    fn dim(&self) -> usize;
    fn space(&self) -> &ParamSpace;
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Whether policy training has any effect for this family.
    fn trainable(&self) -> bool;
    fn supports_state_reset(&self) -> bool;
    fn instantiate(&self, alpha: &EvolutionParameter, noise: ChaCha8Rng) -> Box<dyn Env>;
}

pub const FAMILY_IDS: &[&str] = &["landscape", "grasp-reacher"];

pub fn make_family(
    id: &str,
    landscape_cfg: LandscapeConfig,
) -> Result<Arc<dyn EnvFamily>, EnvError> {
    match id {
        "landscape" => Ok(Arc::new(LandscapeFamily::new(landscape_cfg)?)),
        "grasp-reacher" => Ok(Arc::new(ReacherFamily::new())),
        other => Err(EnvError::UnknownFamily(other.to_string())),
    }
}

#[derive(Clone, Copy, Debug)]
pub struct EpisodeOutcome {
    pub discounted_return: f64,
    pub success: bool,
    pub steps: usize,
}

/// Run one full episode with the stochastic policy; `env_noise` drives the
/// environment, `act` the action sampling.
pub fn run_episode(
    policy: &GaussianMlpPolicy,
    family: &dyn EnvFamily,
    alpha: &EvolutionParameter,
    gamma: f64,
    env_noise: ChaCha8Rng,
    act: &mut ChaCha8Rng,
) -> EpisodeOutcome {
    let mut env = family.instantiate(alpha, env_noise);
    let mut obs = env.reset();
    let mut ret = 0.0;
    let mut disc = 1.0;
    let mut steps = 0;
    while !env.done() {
        let (action, _) = policy
            .sample_action(&obs, act)
            .expect("environment produced a finite observation");
        let step = env.step(&action);
        ret += disc * step.reward;
        disc *= gamma;
        obs = step.obs;
        steps += 1;
    }
    EpisodeOutcome { discounted_return: ret, success: env.succeeded(), steps }
}

/// Fraction of episodes that reach success. Episodes run in parallel with
/// per-episode streams; the caller ledgers `episodes` under its purpose.
pub fn evaluate_success(
    policy: &GaussianMlpPolicy,
    family: &dyn EnvFamily,
    alpha: &EvolutionParameter,
    episodes: usize,
    gamma: f64,
    streams: &StreamFactory,
) -> f64 {
    assert!(episodes >= 1);
    let outcomes = map_indexed(episodes, |i| {
        let mut act = streams.stream(&format!("ep{i:04}/act"));
        run_episode(
            policy,
            family,
            alpha,
            gamma,
            streams.stream(&format!("ep{i:04}/env")),
            &mut act,
        )
    });
    outcomes.iter().filter(|o| o.success).count() as f64 / episodes as f64
}
