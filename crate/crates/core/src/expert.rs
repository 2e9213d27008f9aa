//! Source-environment expert training: episodes start from states along a
//! demonstration trajectory, first near the goal, then progressively earlier
//! (initial-state reverse movement + policy update) until the nominal
//! initial-state distribution is solved.

use crate::envs::{evaluate_success, Env, EnvError, EnvFamily};
use crate::evo::EvolutionParameter;
use crate::policy::{GaussianMlpPolicy, ValueFunction};
use crate::rl::{train_iteration, EpisodeProvider, EpochLedger, RlConfig};
use crate::seeds::{standard_normal, StreamFactory};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExpertError {
    #[error("family does not support reset-to-state")]
    Unsupported,
    #[error("invalid demonstration: {0}")]
    InvalidDemo(String),
    #[error(
        "curriculum stalled after {train_iters} train iterations; furthest index reached {furthest_index}"
    )]
    Stalled { furthest_index: usize, train_iters: u64 },
    #[error(transparent)]
    Env(#[from] EnvError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReverseCurriculumConfig {
    /// Demo states to move backward per promotion.
    pub stride: usize,
    /// Sliding-window success rate required to promote a stage.
    pub promote_threshold: f64,
    /// Gaussian jitter (std) on the start position.
    pub noise_scale: f64,
    /// Budget on total train iterations.
    pub max_outer_iters: u64,
    /// Sliding window length, in trajectories.
    pub window: usize,
    /// Success rate required from the nominal initial-state distribution.
    pub final_target: f64,
    /// Episodes for the final certification.
    pub cert_episodes: usize,
}

impl Default for ReverseCurriculumConfig {
    fn default() -> Self {
        Self {
            stride: 5,
            promote_threshold: 0.667,
            noise_scale: 0.02,
            max_outer_iters: 2000,
            window: 20,
            final_target: 0.9,
            cert_episodes: 100,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StageLog {
    pub index: usize,
    pub iters: u64,
    pub window_rate: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ExpertLog {
    /// Completed (promoted) stages, in order.
    pub stages: Vec<StageLog>,
    pub ledger: EpochLedger,
    pub final_success: f64,
    pub certifications: Vec<f64>,
}

pub struct ExpertOutcome {
    pub policy: GaussianMlpPolicy,
    pub value: ValueFunction,
    pub log: ExpertLog,
}

struct StageProvider<'a> {
    family: &'a dyn EnvFamily,
    alpha: EvolutionParameter,
    /// Demo state to start from; None means the nominal distribution.
    state: Option<&'a [f64]>,
    jitter: f64,
}

impl EpisodeProvider for StageProvider<'_> {
    fn family(&self) -> &dyn EnvFamily {
        self.family
    }

    fn alpha(&self, _i: usize, _rng: &mut ChaCha8Rng) -> EvolutionParameter {
        self.alpha.clone()
    }

    fn init(&self, _i: usize, env: &mut dyn Env, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self.state {
            None => env.reset(),
            Some(state) => {
                let mut jittered = state.to_vec();
                jittered[0] += self.jitter * standard_normal(rng);
                jittered[1] += self.jitter * standard_normal(rng);
                env.reset_to_state(&jittered)
                    .expect("demo states are valid for the source environment")
            }
        }
    }
}

/// Train an expert for the source environment (alpha = 0) by reverse
/// curriculum over the demo states. Returns the trained policy once the
/// certification at the nominal distribution reaches `final_target`.
pub fn reverse_curriculum_train(
    family: &dyn EnvFamily,
    demo: &[Vec<f64>],
    policy_init: &GaussianMlpPolicy,
    cfg: &ReverseCurriculumConfig,
    rl: &RlConfig,
    streams: &StreamFactory,
) -> Result<ExpertOutcome, ExpertError> {
    if !family.supports_state_reset() || !family.trainable() {
        return Err(ExpertError::Unsupported);
    }
    if demo.len() < 2 {
        return Err(ExpertError::InvalidDemo(format!("{} states", demo.len())));
    }
    assert!(cfg.stride >= 1);
    let alpha0 = EvolutionParameter::zeros(family.dim());
    let mut policy = policy_init.clone();
    let mut value =
        ValueFunction::new(family.obs_dim(), &[32, 32], &mut streams.stream("value-init"));
    let mut log = ExpertLog::default();

    let mut index = demo.len().saturating_sub(cfg.stride);
    let mut window: VecDeque<bool> = VecDeque::with_capacity(cfg.window);
    let mut stage_iters = 0u64;
    let mut furthest = index;
    let mut iter = 0u64;
    loop {
        if log.ledger.train_iters >= cfg.max_outer_iters {
            return Err(ExpertError::Stalled {
                furthest_index: furthest,
                train_iters: log.ledger.train_iters,
            });
        }
        let provider = StageProvider {
            family,
            alpha: alpha0.clone(),
            state: if index == 0 { None } else { Some(&demo[index]) },
            jitter: cfg.noise_scale,
        };
        let adapt_norm = !policy.obs_norm.frozen;
        let outcome = train_iteration(
            &mut policy,
            &mut value,
            &provider,
            rl,
            &streams.child(&format!("iter{iter:05}")),
            &mut log.ledger,
            adapt_norm,
        );
        iter += 1;
        stage_iters += 1;
        let successes = (outcome.success_rate * outcome.trajectories as f64).round() as usize;
        for t in 0..outcome.trajectories {
            if window.len() == cfg.window {
                window.pop_front();
            }
            window.push_back(t < successes);
        }
        if window.len() < cfg.window {
            continue;
        }
        let window_rate =
            window.iter().filter(|s| **s).count() as f64 / window.len() as f64;

        if index > 0 {
            if window_rate >= cfg.promote_threshold {
                log.stages.push(StageLog { index, iters: stage_iters, window_rate });
                index = index.saturating_sub(cfg.stride);
                furthest = furthest.min(index);
                window.clear();
                stage_iters = 0;
                if index == 0 {
                    // nominal stage trains under frozen statistics
                    policy.obs_norm.freeze();
                }
            }
        } else if window_rate >= cfg.final_target {
            let rate = evaluate_success(
                &policy,
                family,
                &alpha0,
                cfg.cert_episodes,
                rl.gamma,
                &streams.child(&format!("cert{iter:05}")),
            );
            log.ledger.evaluation += cfg.cert_episodes as u64;
            log.certifications.push(rate);
            if rate >= cfg.final_target {
                log.stages.push(StageLog { index: 0, iters: stage_iters, window_rate });
                log.final_success = rate;
                policy.obs_norm.freeze();
                return Ok(ExpertOutcome { policy, value, log });
            }
            window.clear();
        }
    }
}

/// Demo trajectory file: JSON list of env-state vectors per timestep.
pub fn save_demo(demo: &[Vec<f64>], path: &Path) -> std::io::Result<()> {
    let text = serde_json::to_string_pretty(demo).expect("demo serializes");
    std::fs::write(path, text)
}

pub fn load_demo(path: &Path) -> Result<Vec<Vec<f64>>, ExpertError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExpertError::InvalidDemo(format!("read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| ExpertError::InvalidDemo(format!("parse {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::reacher::ReacherFamily;
    use crate::envs::{make_demo_trajectory, LandscapeConfig, LandscapeFamily};

    #[test]
    fn landscape_rejected() {
        let fam = LandscapeFamily::new(LandscapeConfig::default()).unwrap();
        let mut rng = StreamFactory::new(1).stream("p");
        let policy = GaussianMlpPolicy::new(1, 1, &[32, 32], "landscape", &mut rng);
        let err = reverse_curriculum_train(
            &fam,
            &[vec![0.0], vec![0.0]],
            &policy,
            &ReverseCurriculumConfig::default(),
            &RlConfig::default(),
            &StreamFactory::new(2),
        );
        assert!(matches!(err, Err(ExpertError::Unsupported)));
    }

    #[test]
    fn tiny_demo_rejected() {
        let fam = ReacherFamily::new();
        let mut rng = StreamFactory::new(3).stream("p");
        let policy = GaussianMlpPolicy::new(6, 2, &[32, 32], "grasp-reacher", &mut rng);
        let err = reverse_curriculum_train(
            &fam,
            &[vec![0.0; 5]],
            &policy,
            &ReverseCurriculumConfig::default(),
            &RlConfig::default(),
            &StreamFactory::new(4),
        );
        assert!(matches!(err, Err(ExpertError::InvalidDemo(_))));
    }

    #[test]
    fn first_stage_promotes_quickly() {
        // near-goal starts make the sparse reward dense: the first stage
        // must clear its window threshold within 100 iterations
        let fam = ReacherFamily::new();
        let mut rng = StreamFactory::new(5).stream("p");
        let policy = GaussianMlpPolicy::new(6, 2, &[32, 32], "grasp-reacher", &mut rng);
        let demo = make_demo_trajectory(&fam, StreamFactory::new(6).stream("demo")).unwrap();
        let cfg = ReverseCurriculumConfig { max_outer_iters: 120, ..Default::default() };
        let result = reverse_curriculum_train(
            &fam,
            &demo,
            &policy,
            &cfg,
            &RlConfig::default(),
            &StreamFactory::new(7),
        );
        let stages = match &result {
            Ok(out) => out.log.stages.clone(),
            Err(ExpertError::Stalled { .. }) => {
                // budget exhausted before the nominal stage: fine, we only
                // need the first stage promotion here
                Vec::new()
            }
            Err(e) => panic!("{e}"),
        };
        // recover the stage log even on stall by re-running with a logger:
        // simpler: the first stage must have promoted, i.e. either stages is
        // nonempty or the run finished
        if let Err(ExpertError::Stalled { furthest_index, .. }) = &result {
            assert!(
                *furthest_index < demo.len().saturating_sub(cfg.stride),
                "first stage never promoted within 120 iters"
            );
        } else {
            assert!(!stages.is_empty());
            assert!(stages[0].iters <= 100, "first stage took {} iters", stages[0].iters);
        }
    }

    #[test]
    fn stage_indices_never_increase() {
        let fam = ReacherFamily::new();
        let mut rng = StreamFactory::new(8).stream("p");
        let policy = GaussianMlpPolicy::new(6, 2, &[32, 32], "grasp-reacher", &mut rng);
        let demo = make_demo_trajectory(&fam, StreamFactory::new(9).stream("demo")).unwrap();
        let cfg = ReverseCurriculumConfig {
            stride: demo.len() / 4,
            max_outer_iters: 400,
            ..Default::default()
        };
        let result = reverse_curriculum_train(
            &fam,
            &demo,
            &policy,
            &cfg,
            &RlConfig::default(),
            &StreamFactory::new(10),
        );
        let stages = match result {
            Ok(out) => out.log.stages,
            Err(ExpertError::Stalled { .. }) => return, // monotonicity holds vacuously
            Err(e) => panic!("{e}"),
        };
        for pair in stages.windows(2) {
            assert!(pair[1].index < pair[0].index);
        }
    }

    #[test]
    fn demo_file_round_trip() {
        let fam = ReacherFamily::new();
        let demo = make_demo_trajectory(&fam, StreamFactory::new(11).stream("demo")).unwrap();
        let dir = std::env::temp_dir().join("evopath-demo-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("demo.json");
        save_demo(&demo, &path).unwrap();
        let back = load_demo(&path).unwrap();
        assert_eq!(demo, back);
        std::fs::remove_file(&path).ok();
    }
}
