//! Path search through the evolution cube with joint policy fine-tuning,
//! plus the fixed linear-path baseline.
//!
//! Each step evaluates a success-rate gate at the next candidate point. When
//! the gate fails, the guided method probes episode returns on a sphere
//! around the current point, estimates the return gradient w.r.t. the
//! evolution parameter by least squares, blends the normalized gradient with
//! a normalized pull toward the target corner, and fine-tunes the policy on
//! robots drawn along the new direction with a shrinking-range randomized
//! curriculum. The baseline keeps a fixed uniform direction and the same
//! gate and curriculum. Every simulated episode is ledgered by purpose.

use crate::envs::{evaluate_success, run_episode, EnvFamily};
use crate::evo::{clamp_box, sample_sphere, EvoError, EvolutionParameter, SphereSample};
use crate::exec::map_indexed;
use crate::linalg::{cholesky_solve, unit};
use crate::policy::{GaussianMlpPolicy, ValueFunction};
use crate::rl::{train_iteration, EpisodeProvider, EpochLedger, RlConfig};
use crate::seeds::StreamFactory;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("invalid transfer config: {0}")]
    InvalidConfig(String),
    #[error("expert success rate {rate:.3} below gate q = {q:.3} at the source environment")]
    ExpertBelowGate { rate: f64, q: f64 },
    #[error("non-finite probe returns")]
    NonFiniteProbes,
    #[error("jacobian solve failed: {0}")]
    Solve(String),
    #[error(transparent)]
    Evo(#[from] EvoError),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransferConfig {
    /// Evolution progression step size (sphere radius).
    pub xi: f64,
    /// Sphere probes per Jacobian estimate.
    pub n_probes: usize,
    /// Episodes per probe point.
    pub probes_per_point: usize,
    /// Pull weight toward the target corner.
    pub lambda: f64,
    /// Curriculum range shrink ratio.
    pub lambda1: f64,
    /// Success-rate gate.
    pub q: f64,
    /// Curriculum iterations per triggered step.
    pub n_curriculum_iters: usize,
    /// Episodes per gate evaluation.
    pub eval_episodes: usize,
    /// Exit the curriculum once the gate is met (a faithful fixed-length
    /// loop runs when false).
    pub early_stop: bool,
    /// Re-check the gate after training and hold position on failure;
    /// deviates from the plain advance-after-training loop and is logged.
    pub recheck_after_train: bool,
    pub max_steps: usize,
    pub max_train_iters: u64,
    /// Success rate that counts as having reached the target task.
    pub target_success: f64,
    pub rl: RlConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            xi: 0.03,
            n_probes: 72,
            probes_per_point: 1,
            lambda: 1.0,
            lambda1: 0.995,
            q: 0.667,
            n_curriculum_iters: 50,
            eval_episodes: 12,
            early_stop: true,
            recheck_after_train: false,
            max_steps: 5000,
            max_train_iters: 20_000,
            target_success: 0.8,
            rl: RlConfig::default(),
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<(), TransferError> {
        let bad = |m: String| Err(TransferError::InvalidConfig(m));
        if !(self.xi > 0.0) || !self.xi.is_finite() {
            return bad(format!("xi must be positive, got {}", self.xi));
        }
        if self.n_probes < 1 {
            return bad("n_probes must be >= 1".into());
        }
        if self.probes_per_point < 1 {
            return bad("probes_per_point must be >= 1".into());
        }
        if self.lambda < 0.0 {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.lambda1 > 0.0 && self.lambda1 < 1.0) {
            return bad(format!("lambda1 must be in (0,1), got {}", self.lambda1));
        }
        if !(self.q > 0.0 && self.q <= 1.0) {
            return bad(format!("q must be in (0,1], got {}", self.q));
        }
        if self.eval_episodes < 1 {
            return bad("eval_episodes must be >= 1".into());
        }
        if !(self.target_success > 0.0 && self.target_success <= 1.0) {
            return bad(format!("target_success must be in (0,1], got {}", self.target_success));
        }
        Ok(())
    }
}

/// Least-squares estimate of the return gradient w.r.t. alpha.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JacobianEstimate {
    pub j: Vec<f64>,
    pub residual_norm: f64,
    pub n_probes: usize,
    pub rho0: f64,
}

/// Mean episode discounted returns at the probe points: index 0 is the
/// center (delta = 0), then one entry per sphere probe. Probe points are
/// clamped into the cube before instantiation. Runs `(n+1)*m` episodes.
pub fn probe_returns(
    policy: &GaussianMlpPolicy,
    family: &dyn EnvFamily,
    alpha: &EvolutionParameter,
    deltas: &SphereSample,
    m: usize,
    gamma: f64,
    streams: &StreamFactory,
) -> (f64, Vec<f64>) {
    assert!(m >= 1);
    let n = deltas.len();
    let outcomes = map_indexed((n + 1) * m, |idx| {
        let (probe, rep) = (idx / m, idx % m);
        let point = if probe == 0 {
            alpha.clone()
        } else {
            let mut raw = alpha.values().to_vec();
            for (r, d) in raw.iter_mut().zip(&deltas.deltas[probe - 1]) {
                *r += d;
            }
            clamp_box(&raw)
        };
        let label = format!("probe{probe:03}/rep{rep:02}");
        let mut act = streams.stream(&format!("{label}/act"));
        run_episode(policy, family, &point, gamma, streams.stream(&format!("{label}/env")), &mut act)
            .discounted_return
    });
    let mean_of = |probe: usize| -> f64 {
        outcomes[probe * m..(probe + 1) * m].iter().sum::<f64>() / m as f64
    };
    let rho0 = mean_of(0);
    let rho: Vec<f64> = (1..=n).map(mean_of).collect();
    (rho0, rho)
}

/// Ridge-stabilized least squares `J ~ (D^T D + eps I)^-1 D^T (rho - rho0)`.
/// The ridge starts at machine scale and escalates only if the normal
/// equations are numerically rank deficient, so full-rank noiseless probes
/// recover the exact gradient.
pub fn lsq_jacobian(
    deltas: &SphereSample,
    rho: &[f64],
    rho0: f64,
) -> Result<JacobianEstimate, TransferError> {
    let n = deltas.len();
    assert!(n >= 1 && rho.len() == n);
    if !rho0.is_finite() || rho.iter().any(|r| !r.is_finite()) {
        return Err(TransferError::NonFiniteProbes);
    }
    let d = deltas.deltas[0].len();
    let mut ata = vec![0.0; d * d];
    let mut atr = vec![0.0; d];
    for (delta, r) in deltas.deltas.iter().zip(rho) {
        if delta.iter().any(|x| !x.is_finite()) {
            return Err(TransferError::NonFiniteProbes);
        }
        let resid = r - rho0;
        for i in 0..d {
            atr[i] += delta[i] * resid;
            for j in i..d {
                ata[i * d + j] += delta[i] * delta[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            ata[i * d + j] = ata[j * d + i];
        }
    }
    let scale = (0..d).map(|i| ata[i * d + i]).sum::<f64>() / d as f64;
    let mut eps = scale.max(f64::MIN_POSITIVE) * 1e-12;
    for _attempt in 0..8 {
        let mut work = ata.clone();
        for i in 0..d {
            work[i * d + i] += eps;
        }
        match cholesky_solve(&mut work, &atr) {
            Ok(j) => {
                let mut residual2 = 0.0;
                for (delta, r) in deltas.deltas.iter().zip(rho) {
                    let pred: f64 = delta.iter().zip(&j).map(|(x, y)| x * y).sum();
                    let e = pred - (r - rho0);
                    residual2 += e * e;
                }
                return Ok(JacobianEstimate {
                    j,
                    residual_norm: residual2.sqrt(),
                    n_probes: n,
                    rho0,
                });
            }
            Err(_) => eps *= 100.0,
        }
    }
    Err(TransferError::Solve(format!("normal equations not solvable at ridge {eps:.3e}")))
}

/// Blend the unit gradient with the unit pull toward the target and rescale
/// to step length xi. Falls back to the pure pull when the gradient is
/// degenerate or the two terms cancel exactly.
pub fn evolution_direction(
    j: &[f64],
    alpha: &EvolutionParameter,
    lambda: f64,
    xi: f64,
) -> Vec<f64> {
    assert!(!alpha.is_target(), "direction undefined at the target corner");
    let pull: Vec<f64> = alpha.values().iter().map(|a| 1.0 - a).collect();
    let u = unit(&pull, 1e-300).expect("alpha != 1 gives a nonzero pull");
    let fallback = || u.iter().map(|x| x * xi).collect::<Vec<f64>>();
    let Some(j_hat) = unit(j, 1e-12) else {
        return fallback();
    };
    let blend: Vec<f64> = j_hat.iter().zip(&u).map(|(a, b)| a + lambda * b).collect();
    match unit(&blend, 1e-12) {
        Some(dir) => dir.iter().map(|x| x * xi).collect(),
        None => fallback(),
    }
}

/// Curriculum interval for iteration `e`: `(1 - lambda1^e, 1)`.
pub fn beta_interval(e: u32, lambda1: f64) -> (f64, f64) {
    (1.0 - lambda1.powi(e as i32), 1.0)
}

pub fn sample_beta<R: rand::Rng>(e: u32, lambda1: f64, rng: &mut R) -> f64 {
    let (lo, hi) = beta_interval(e, lambda1);
    lo + (hi - lo) * rng.gen::<f64>()
}

/// Episodes along the pending direction: each trajectory draws a fresh beta
/// and trains on the robot at `clamp(alpha + beta * l)`.
pub struct CurriculumProvider<'a> {
    pub family: &'a dyn EnvFamily,
    pub base: &'a EvolutionParameter,
    pub direction: &'a [f64],
    pub e: u32,
    pub lambda1: f64,
}

impl EpisodeProvider for CurriculumProvider<'_> {
    fn family(&self) -> &dyn EnvFamily {
        self.family
    }

    fn alpha(&self, _i: usize, rng: &mut ChaCha8Rng) -> EvolutionParameter {
        let beta = sample_beta(self.e, self.lambda1, rng);
        let mut raw = self.base.values().to_vec();
        for (r, l) in raw.iter_mut().zip(self.direction) {
            *r += beta * l;
        }
        clamp_box(&raw)
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CurriculumOutcome {
    pub iters_run: usize,
    pub early_stopped: bool,
}

/// Randomized-progression fine-tuning (the "train pi" phase of a triggered
/// step). With early stopping, the gate at `alpha + l` is re-evaluated once
/// the training batch itself looks close to the gate, and the loop exits as
/// soon as the gate is met.
#[allow(clippy::too_many_arguments)]
pub fn curriculum_train(
    policy: &mut GaussianMlpPolicy,
    value: &mut ValueFunction,
    family: &dyn EnvFamily,
    alpha: &EvolutionParameter,
    direction: &[f64],
    cfg: &TransferConfig,
    ledger: &mut EpochLedger,
    streams: &StreamFactory,
) -> CurriculumOutcome {
    let mut out = CurriculumOutcome::default();
    let next = {
        let mut raw = alpha.values().to_vec();
        for (r, l) in raw.iter_mut().zip(direction) {
            *r += l;
        }
        clamp_box(&raw)
    };
    // success threshold at which the training batch makes a gate pass
    // plausible enough to spend an evaluation on
    let prefilter = (cfg.q - 1.5 / cfg.rl.batch as f64).max(0.0);
    for e in 0..cfg.n_curriculum_iters {
        let provider = CurriculumProvider {
            family,
            base: alpha,
            direction,
            e: e as u32,
            lambda1: cfg.lambda1,
        };
        let iter_streams = streams.child(&format!("e{e:03}"));
        let outcome =
            train_iteration(policy, value, &provider, &cfg.rl, &iter_streams, ledger, false);
        out.iters_run += 1;
        if cfg.early_stop && outcome.success_rate >= prefilter {
            let rate = evaluate_success(
                policy,
                family,
                &next,
                cfg.eval_episodes,
                cfg.rl.gamma,
                &iter_streams.child("gate"),
            );
            ledger.evaluation += cfg.eval_episodes as u64;
            if rate >= cfg.q {
                out.early_stopped = true;
                break;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransferMethod {
    Deps,
    Linear,
}

impl TransferMethod {
    pub fn id(&self) -> &'static str {
        match self {
            TransferMethod::Deps => "deps",
            TransferMethod::Linear => "linear",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        match id {
            "deps" => Some(TransferMethod::Deps),
            "linear" => Some(TransferMethod::Linear),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub index: usize,
    /// Iterate before stepping.
    pub alpha: Vec<f64>,
    /// Gate success rate at clamp(alpha + incoming l).
    pub gate_success: f64,
    pub triggered: bool,
    pub jacobian: Option<JacobianEstimate>,
    /// Direction used to advance from this iterate.
    pub direction: Vec<f64>,
    pub advanced: bool,
    pub curriculum: CurriculumOutcome,
    pub epochs: EpochLedger,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct FinalTraining {
    pub epochs: EpochLedger,
    pub evals: Vec<f64>,
    pub final_success: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PathRecord {
    pub schema_version: u32,
    pub method: String,
    pub env_id: String,
    pub seed: u64,
    pub config: TransferConfig,
    pub steps: Vec<StepRecord>,
    pub final_alpha: Vec<f64>,
    /// Fine-tuning at the target corner until the target success rate.
    pub final_training: FinalTraining,
    pub cumulative: EpochLedger,
    pub reached_target: bool,
    pub timed_out: bool,
}

pub const PATH_RECORD_SCHEMA_VERSION: u32 = 1;

/// One-shot validations (the expert precondition and the final target
/// certification) use at least this many episodes; the per-step gate keeps
/// the configured `eval_episodes`, where a noisy read only costs an extra
/// retraining pass rather than a wrong verdict.
pub const VALIDATION_MIN_EPISODES: usize = 48;

pub struct TransferOutcome {
    pub policy: GaussianMlpPolicy,
    pub value: ValueFunction,
    pub record: PathRecord,
}

/// Guided path search (gradient blend + curriculum), the full loop.
pub fn deps_transfer(
    family: &dyn EnvFamily,
    expert: &GaussianMlpPolicy,
    cfg: &TransferConfig,
    streams: &StreamFactory,
) -> Result<TransferOutcome, TransferError> {
    run_transfer(TransferMethod::Deps, family, expert, cfg, streams)
}

/// Fixed uniform-direction baseline: same gate and curriculum, no probing.
pub fn linear_transfer(
    family: &dyn EnvFamily,
    expert: &GaussianMlpPolicy,
    cfg: &TransferConfig,
    streams: &StreamFactory,
) -> Result<TransferOutcome, TransferError> {
    run_transfer(TransferMethod::Linear, family, expert, cfg, streams)
}

pub fn run_transfer(
    method: TransferMethod,
    family: &dyn EnvFamily,
    expert: &GaussianMlpPolicy,
    cfg: &TransferConfig,
    streams: &StreamFactory,
) -> Result<TransferOutcome, TransferError> {
    cfg.validate()?;
    let d = family.dim();
    let mut policy = expert.clone();
    let mut value = ValueFunction::new(
        family.obs_dim(),
        &[32, 32],
        &mut streams.stream("value-init"),
    );
    let mut cumulative = EpochLedger::default();

    // the expert must already meet the gate on the source environment; for
    // non-trainable bandit families the loop is pure path search and the
    // check is vacuous
    if family.trainable() {
        let episodes = cfg.eval_episodes.max(VALIDATION_MIN_EPISODES);
        let rate = evaluate_success(
            &policy,
            family,
            &EvolutionParameter::zeros(d),
            episodes,
            cfg.rl.gamma,
            &streams.child("expert-gate"),
        );
        cumulative.evaluation += episodes as u64;
        if rate < cfg.q {
            return Err(TransferError::ExpertBelowGate { rate, q: cfg.q });
        }
    }

    let mut alpha = EvolutionParameter::zeros(d);
    let mut l: Vec<f64> = match method {
        TransferMethod::Deps => {
            sample_sphere(&mut streams.stream("init-l"), d, cfg.xi, 1)?.deltas.remove(0)
        }
        TransferMethod::Linear => vec![cfg.xi / (d as f64).sqrt(); d],
    };

    let mut steps: Vec<StepRecord> = Vec::new();
    let mut timed_out = false;
    let mut k = 0usize;
    while !alpha.is_target() {
        if k >= cfg.max_steps || cumulative.train_iters >= cfg.max_train_iters {
            timed_out = true;
            log::warn!(
                "{} transfer hit the budget at step {k} (train iters {})",
                method.id(),
                cumulative.train_iters
            );
            break;
        }
        let skey = streams.child(&format!("step{k:04}"));
        let mut epochs = EpochLedger::default();

        let candidate = {
            let mut raw = alpha.values().to_vec();
            for (r, li) in raw.iter_mut().zip(&l) {
                *r += li;
            }
            clamp_box(&raw)
        };
        let gate = evaluate_success(
            &policy,
            family,
            &candidate,
            cfg.eval_episodes,
            cfg.rl.gamma,
            &skey.child("gate"),
        );
        epochs.evaluation += cfg.eval_episodes as u64;
        let triggered = gate < cfg.q;

        let mut jacobian = None;
        let mut curriculum = CurriculumOutcome::default();
        if triggered {
            if method == TransferMethod::Deps {
                let deltas =
                    sample_sphere(&mut skey.stream("deltas"), d, cfg.xi, cfg.n_probes)?;
                let (rho0, rho) = probe_returns(
                    &policy,
                    family,
                    &alpha,
                    &deltas,
                    cfg.probes_per_point,
                    cfg.rl.gamma,
                    &skey.child("probe"),
                );
                epochs.jacobian +=
                    ((cfg.n_probes + 1) * cfg.probes_per_point) as u64;
                let estimate = lsq_jacobian(&deltas, &rho, rho0)?;
                l = evolution_direction(&estimate.j, &alpha, cfg.lambda, cfg.xi);
                jacobian = Some(estimate);
            }
            if family.trainable() {
                curriculum = curriculum_train(
                    &mut policy,
                    &mut value,
                    family,
                    &alpha,
                    &l,
                    cfg,
                    &mut epochs,
                    &skey.child("train"),
                );
            }
        }

        let mut advanced = true;
        if triggered && cfg.recheck_after_train {
            let next = {
                let mut raw = alpha.values().to_vec();
                for (r, li) in raw.iter_mut().zip(&l) {
                    *r += li;
                }
                clamp_box(&raw)
            };
            let rate = evaluate_success(
                &policy,
                family,
                &next,
                cfg.eval_episodes,
                cfg.rl.gamma,
                &skey.child("recheck"),
            );
            epochs.evaluation += cfg.eval_episodes as u64;
            if rate < cfg.q {
                advanced = false;
                log::warn!(
                    "recheck_after_train holding at step {k}: rate {rate:.3} < q (deviation \
                     from the plain advance-after-training loop)"
                );
            }
        }

        cumulative.add(&epochs);
        steps.push(StepRecord {
            index: k,
            alpha: alpha.values().to_vec(),
            gate_success: gate,
            triggered,
            jacobian,
            direction: l.clone(),
            advanced,
            curriculum,
            epochs,
        });
        if advanced {
            let mut raw = alpha.values().to_vec();
            for (r, li) in raw.iter_mut().zip(&l) {
                *r += li;
            }
            let mut next = clamp_box(&raw);
            // Persisting l across fast-path steps can stall: the clamp may
            // absorb the whole step at a face, or a stale lateral direction
            // may stop shrinking the distance to the target (freshly
            // blended directions at lambda >= 1 always shrink it, by the
            // pull-positivity bound). Both cases re-aim at the pull.
            let standstill = next.values() == alpha.values();
            let stale_no_progress = !triggered
                && cfg.lambda >= 1.0
                && next.distance_to_target() >= alpha.distance_to_target();
            if standstill || stale_no_progress {
                l = evolution_direction(&vec![0.0; d], &alpha, cfg.lambda, cfg.xi);
                log::debug!("step {k}: stale direction made no progress, re-aimed at the target");
                let mut raw = alpha.values().to_vec();
                for (r, li) in raw.iter_mut().zip(&l) {
                    *r += li;
                }
                next = clamp_box(&raw);
            }
            alpha = next;
        }
        k += 1;
    }

    // fine-tune at the target until the target success rate certifies
    let mut final_training = FinalTraining::default();
    let mut reached_target = false;
    if !timed_out {
        let target = EvolutionParameter::ones(d);
        let fkey = streams.child("final");
        let cert_episodes = cfg.eval_episodes.max(VALIDATION_MIN_EPISODES);
        let mut round = 0usize;
        loop {
            // cheap screen with the step-gate sample size, then a larger
            // certification so a mediocre policy cannot pass on eval luck
            let screen = evaluate_success(
                &policy,
                family,
                &target,
                cfg.eval_episodes,
                cfg.rl.gamma,
                &fkey.child(&format!("eval{round:04}")),
            );
            final_training.epochs.evaluation += cfg.eval_episodes as u64;
            final_training.evals.push(screen);
            final_training.final_success = screen;
            if screen >= cfg.target_success {
                let cert = evaluate_success(
                    &policy,
                    family,
                    &target,
                    cert_episodes,
                    cfg.rl.gamma,
                    &fkey.child(&format!("cert{round:04}")),
                );
                final_training.epochs.evaluation += cert_episodes as u64;
                final_training.final_success = cert;
                if cert >= cfg.target_success {
                    reached_target = true;
                    break;
                }
            }
            if !family.trainable() {
                break;
            }
            if cumulative.train_iters + final_training.epochs.train_iters
                >= cfg.max_train_iters
            {
                timed_out = true;
                break;
            }
            let provider = crate::rl::FixedAlpha { family, alpha: target.clone() };
            train_iteration(
                &mut policy,
                &mut value,
                &provider,
                &cfg.rl,
                &fkey.child(&format!("iter{round:04}")),
                &mut final_training.epochs,
                false,
            );
            round += 1;
        }
        cumulative.add(&final_training.epochs);
    }

    let record = PathRecord {
        schema_version: PATH_RECORD_SCHEMA_VERSION,
        method: method.id().to_string(),
        env_id: family.id().to_string(),
        seed: streams.root_seed(),
        config: cfg.clone(),
        steps,
        final_alpha: alpha.values().to_vec(),
        final_training,
        cumulative,
        reached_target,
        timed_out,
    };
    Ok(TransferOutcome { policy, value, record })
}

impl PathRecord {
    /// Ledger conservation: cumulative counters equal the sum of per-step
    /// counters plus the final training stage.
    pub fn ledger_consistent(&self) -> bool {
        let mut sum = EpochLedger::default();
        for s in &self.steps {
            sum.add(&s.epochs);
        }
        sum.add(&self.final_training.epochs);
        sum == self.cumulative
    }

    pub fn triggered_steps(&self) -> usize {
        self.steps.iter().filter(|s| s.triggered).count()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("path record serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{landscape_value, LandscapeConfig, LandscapeFamily};
    use crate::linalg::{dot, norm2};
    use proptest::prelude::*;

    fn unit_policy(seed: u64) -> GaussianMlpPolicy {
        let mut rng = StreamFactory::new(seed).stream("pol");
        GaussianMlpPolicy::new(1, 1, &[32, 32], "landscape", &mut rng)
    }

    fn landscape() -> LandscapeFamily {
        LandscapeFamily::new(LandscapeConfig::default()).unwrap()
    }

    #[test]
    fn probe_returns_exact_on_noiseless_landscape() {
        let fam = landscape();
        let policy = unit_policy(1);
        let alpha = EvolutionParameter::new(vec![0.4, 0.3]).unwrap();
        let mut rng = StreamFactory::new(2).stream("deltas");
        let deltas = sample_sphere(&mut rng, 2, 0.03, 72).unwrap();
        let (rho0, rho) =
            probe_returns(&policy, &fam, &alpha, &deltas, 1, 0.995, &StreamFactory::new(3).child("p"));
        assert_eq!(rho.len(), 72);
        assert_eq!(rho0, landscape_value(alpha.values(), fam.config()));
        for (r, dvec) in rho.iter().zip(&deltas.deltas) {
            let point = clamp_box(&[alpha.values()[0] + dvec[0], alpha.values()[1] + dvec[1]]);
            assert_eq!(*r, landscape_value(point.values(), fam.config()));
        }
        // deterministic given the same streams
        let (r0b, rb) =
            probe_returns(&policy, &fam, &alpha, &deltas, 1, 0.995, &StreamFactory::new(3).child("p"));
        assert_eq!(rho0, r0b);
        assert_eq!(rho, rb);
    }

    #[test]
    fn lsq_axis_probes_hand_example() {
        // axis probes of f(a) = 2 a1 - a2 + 5 at the origin
        let deltas = SphereSample {
            deltas: vec![
                vec![0.1, 0.0],
                vec![0.0, 0.1],
                vec![-0.1, 0.0],
                vec![0.0, -0.1],
            ],
            radius: 0.1,
        };
        let est = lsq_jacobian(&deltas, &[5.2, 4.9, 4.8, 5.1], 5.0).unwrap();
        assert!((est.j[0] - 2.0).abs() < 1e-9, "{:?}", est.j);
        assert!((est.j[1] + 1.0).abs() < 1e-9);
        assert!(est.residual_norm < 1e-9);
        assert_eq!(est.n_probes, 4);
    }

    #[test]
    fn lsq_flat_returns_zero_jacobian() {
        let mut rng = StreamFactory::new(4).stream("d");
        let deltas = sample_sphere(&mut rng, 5, 0.03, 16).unwrap();
        let est = lsq_jacobian(&deltas, &[3.5; 16], 3.5).unwrap();
        assert!(norm2(&est.j) < 1e-12);
    }

    #[test]
    fn lsq_recovers_random_linear_gradient() {
        let streams = StreamFactory::new(5);
        for d in [2usize, 8, 40] {
            let mut rng = streams.stream(&format!("g{d}"));
            let g: Vec<f64> =
                (0..d).map(|_| crate::seeds::standard_normal(&mut rng)).collect();
            let deltas = sample_sphere(&mut rng, d, 0.03, 2 * d).unwrap();
            let rho0 = 1.3;
            let rho: Vec<f64> =
                deltas.deltas.iter().map(|dv| rho0 + dot(dv, &g)).collect();
            let est = lsq_jacobian(&deltas, &rho, rho0).unwrap();
            let err = crate::linalg::sub(&est.j, &g);
            assert!(
                norm2(&err) < 1e-6 * norm2(&g).max(1.0),
                "d={d}: err {}",
                norm2(&err)
            );
        }
    }

    #[test]
    fn lsq_rejects_non_finite() {
        let deltas = SphereSample { deltas: vec![vec![0.1, 0.0]], radius: 0.1 };
        assert!(matches!(
            lsq_jacobian(&deltas, &[f64::NAN], 0.0),
            Err(TransferError::NonFiniteProbes)
        ));
    }

    #[test]
    fn direction_frozen_example() {
        // unit J = (1,0), u = (0.70711, 0.70711), blended and rescaled
        let alpha = EvolutionParameter::zeros(2);
        let l = evolution_direction(&[3.0, 0.0], &alpha, 1.0, 0.03);
        assert!((l[0] - 0.0277164).abs() < 1e-6, "{l:?}");
        assert!((l[1] - 0.0114805).abs() < 1e-6);
        assert!((norm2(&l) - 0.03).abs() < 1e-12 * 0.03);
    }

    #[test]
    fn direction_limits() {
        let alpha = EvolutionParameter::new(vec![0.2, 0.6, 0.1]).unwrap();
        let j = vec![-0.4, 0.8, 0.1];

        // huge pull weight: within 1e-5 rad of the pull direction
        let l = evolution_direction(&j, &alpha, 1e6, 0.03);
        let pull: Vec<f64> = alpha.values().iter().map(|a| 1.0 - a).collect();
        let cos = dot(&l, &pull) / (norm2(&l) * norm2(&pull));
        assert!(cos.min(1.0).acos() < 1e-5, "angle {}", cos.min(1.0).acos());

        // zero pull weight: parallel to J
        let l0 = evolution_direction(&j, &alpha, 0.0, 0.03);
        let cos0 = dot(&l0, &j) / (norm2(&l0) * norm2(&j));
        assert!((cos0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn direction_fallbacks() {
        let alpha = EvolutionParameter::new(vec![0.5, 0.5]).unwrap();
        let pull_only = evolution_direction(&[0.0, 0.0], &alpha, 1.0, 0.03);
        let u = [0.5f64.sqrt(), 0.5f64.sqrt()];
        assert!((pull_only[0] - 0.03 * u[0]).abs() < 1e-12);
        assert!((pull_only[1] - 0.03 * u[1]).abs() < 1e-12);

        // exact cancellation at lambda = 1: J = -u
        let j: Vec<f64> = u.iter().map(|x| -x).collect();
        let l = evolution_direction(&j, &alpha, 1.0, 0.03);
        assert!((dot(&l, &u) - 0.03).abs() < 1e-9, "fallback is the pull direction");
    }

    #[test]
    fn direction_1d_always_forward_when_lambda_above_one() {
        let alpha = EvolutionParameter::new(vec![0.4]).unwrap();
        for j in [-5.0, -1.0, -1e-9, 0.0, 2.0] {
            let l = evolution_direction(&[j], &alpha, 1.1, 0.03);
            assert!((l[0] - 0.03).abs() < 1e-12, "J = {j} gave {l:?}");
        }
    }

    proptest! {
        #[test]
        fn direction_norm_and_pull_positivity(
            j in proptest::collection::vec(-5.0f64..5.0, 4),
            a in proptest::collection::vec(0.0f64..0.999, 4),
            lambda in 0.0f64..4.0,
        ) {
            let alpha = EvolutionParameter::new(a).unwrap();
            let l = evolution_direction(&j, &alpha, lambda, 0.03);
            prop_assert!((norm2(&l) - 0.03).abs() < 1e-12 * 0.03);
            // the projection of the unnormalized blend onto the pull unit
            // vector is at least lambda - 1
            if let Some(j_hat) = unit(&j, 1e-12) {
                let pull: Vec<f64> = alpha.values().iter().map(|x| 1.0 - x).collect();
                let u = unit(&pull, 1e-300).unwrap();
                let blend: Vec<f64> = j_hat.iter().zip(&u).map(|(x, y)| x + lambda * y).collect();
                prop_assert!(dot(&blend, &u) >= lambda - 1.0 - 1e-12);
            }
        }
    }

    #[test]
    fn beta_interval_examples() {
        let (lo0, hi0) = beta_interval(0, 0.995);
        assert_eq!((lo0, hi0), (0.0, 1.0));
        let (lo500, _) = beta_interval(500, 0.995);
        assert!((lo500 - 0.9184).abs() < 1e-4, "lo at e=500: {lo500}");
        // interval shrinks to {1}
        let (lo_big, _) = beta_interval(10_000, 0.995);
        assert!(1.0 - lo_big < 1e-12);
    }

    #[test]
    fn beta_samples_in_interval() {
        let mut rng = StreamFactory::new(6).stream("beta");
        for e in [0u32, 100, 500] {
            let (lo, hi) = beta_interval(e, 0.995);
            for _ in 0..500 {
                let b = sample_beta(e, 0.995, &mut rng);
                assert!(b >= lo && b < hi);
            }
        }
    }

    fn landscape_cfg() -> TransferConfig {
        TransferConfig { max_train_iters: 1_000_000, ..TransferConfig::default() }
    }

    #[test]
    fn deps_reaches_target_exactly_on_landscape() {
        let fam = landscape();
        let policy = unit_policy(7);
        let out =
            deps_transfer(&fam, &policy, &landscape_cfg(), &StreamFactory::new(11)).unwrap();
        assert!(!out.record.timed_out);
        assert_eq!(out.record.final_alpha, vec![1.0, 1.0]);
        assert_eq!(out.record.steps[0].alpha, vec![0.0, 0.0]);
        assert!(out.record.reached_target); // f(1) = 1 - tiny >= q_success
        assert!(out.record.ledger_consistent());
        // jacobian epochs are exactly (n+1)*m per triggered step
        let expected = out.record.triggered_steps() as u64 * 73;
        assert_eq!(out.record.cumulative.jacobian, expected);
        assert!(out.record.cumulative.train_iters == 0, "bandit has no training");
    }

    #[test]
    fn linear_path_is_uniform_and_probe_free() {
        let fam = landscape();
        let policy = unit_policy(8);
        let out =
            linear_transfer(&fam, &policy, &landscape_cfg(), &StreamFactory::new(12)).unwrap();
        assert!(!out.record.timed_out);
        assert_eq!(out.record.cumulative.jacobian, 0);
        let xi_comp = 0.03 / 2f64.sqrt();
        for (k, step) in out.record.steps.iter().enumerate() {
            let want = (k as f64 * xi_comp).min(1.0);
            for a in &step.alpha {
                assert!((a - want).abs() < 1e-9, "step {k}: {a} vs {want}");
            }
        }
        assert_eq!(out.record.final_alpha, vec![1.0, 1.0]);
    }

    #[test]
    fn deps_in_huge_lambda_limit_matches_linear_sequence() {
        // with a huge pull weight the guided direction collapses onto the
        // pull; on the noiseless landscape the alpha sequences coincide
        let fam = landscape();
        let policy = unit_policy(9);
        let cfg_big_lambda = TransferConfig { lambda: 1e6, ..landscape_cfg() };
        let deps =
            run_transfer(TransferMethod::Deps, &fam, &policy, &cfg_big_lambda, &StreamFactory::new(13))
                .unwrap();
        let linear =
            run_transfer(TransferMethod::Linear, &fam, &policy, &landscape_cfg(), &StreamFactory::new(13))
                .unwrap();
        assert_eq!(deps.record.steps.len(), linear.record.steps.len());
        for (a, b) in deps.record.steps.iter().zip(&linear.record.steps) {
            for (x, y) in a.alpha.iter().zip(&b.alpha) {
                assert!((x - y).abs() < 1e-3, "step {}: {x} vs {y}", a.index);
            }
        }
    }

    #[test]
    fn one_dimensional_march_is_arithmetic() {
        let cfg1 = LandscapeConfig {
            dim: 1,
            barrier_center: vec![0.5],
            barrier_height: 0.0,
            q_success: -10.0, // gate always passes; pure fast-path march
            ..LandscapeConfig::default()
        };
        let fam = LandscapeFamily::new(cfg1).unwrap();
        let policy = unit_policy(10);
        let cfg = TransferConfig { lambda: 1.1, ..landscape_cfg() };
        let out = linear_transfer(&fam, &policy, &cfg, &StreamFactory::new(14)).unwrap();
        for (k, step) in out.record.steps.iter().enumerate() {
            assert!((step.alpha[0] - (k as f64 * 0.03).min(1.0)).abs() < 1e-12);
        }
        assert_eq!(out.record.final_alpha, vec![1.0]);
        assert_eq!(out.record.steps.len(), 34); // ceil(1/0.03)
    }

    #[test]
    fn path_record_byte_determinism() {
        let fam = landscape();
        let policy = unit_policy(15);
        let a = deps_transfer(&fam, &policy, &landscape_cfg(), &StreamFactory::new(16)).unwrap();
        let b = deps_transfer(&fam, &policy, &landscape_cfg(), &StreamFactory::new(16)).unwrap();
        assert_eq!(a.record.to_json(), b.record.to_json());
        let c = deps_transfer(&fam, &policy, &landscape_cfg(), &StreamFactory::new(17)).unwrap();
        assert_ne!(a.record.to_json(), c.record.to_json());
    }

    #[test]
    fn absorbing_ball_iterates() {
        // direction + clamp dynamics only: with lambda = 1.1 and adversarial
        // random unit gradients the iterate enters the absorbing ball and
        // stays; with aligned gradients it arrives exactly
        let (d, lambda, xi) = (8usize, 1.1, 0.03);
        let radius = xi * (lambda + 1.0) / (2.0 * (lambda - 1.0)) + xi;
        let mut rng = StreamFactory::new(18).stream("adv");
        for _rep in 0..3 {
            let mut alpha = EvolutionParameter::zeros(d);
            let mut entered_at = None;
            for step in 0..3000 {
                let j = sample_sphere(&mut rng, d, 1.0, 1).unwrap().deltas.remove(0);
                let l = evolution_direction(&j, &alpha, lambda, xi);
                let mut raw = alpha.values().to_vec();
                for (r, li) in raw.iter_mut().zip(&l) {
                    *r += li;
                }
                alpha = clamp_box(&raw);
                let dist = alpha.distance_to_target();
                if entered_at.is_none() && dist <= radius {
                    entered_at = Some(step);
                }
                if entered_at.is_some() {
                    assert!(dist <= radius + 1e-12, "left the ball: {dist}");
                }
                if alpha.is_target() {
                    break;
                }
            }
            assert!(entered_at.is_some(), "never entered the absorbing ball");
        }

        // aligned gradient: exact arrival within ceil(sqrt(D)/xi) + 1 steps
        let mut alpha = EvolutionParameter::zeros(d);
        let budget = ((d as f64).sqrt() / xi).ceil() as usize + 1;
        let mut arrived = None;
        for step in 0..budget + 8 {
            let pull: Vec<f64> = alpha.values().iter().map(|a| 1.0 - a).collect();
            let u = unit(&pull, 1e-300).unwrap();
            let l = evolution_direction(&u, &alpha, lambda, xi);
            let mut raw = alpha.values().to_vec();
            for (r, li) in raw.iter_mut().zip(&l) {
                *r += li;
            }
            alpha = clamp_box(&raw);
            if alpha.is_target() {
                arrived = Some(step + 1);
                break;
            }
        }
        assert!(arrived.unwrap() <= budget, "{arrived:?} vs budget {budget}");
    }

    #[test]
    fn config_validation() {
        let mut cfg = TransferConfig::default();
        cfg.xi = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TransferConfig::default();
        cfg.lambda1 = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = TransferConfig::default();
        cfg.q = 0.0;
        assert!(cfg.validate().is_err());
        assert!(TransferConfig::default().validate().is_ok());
    }

    #[test]
    fn max_steps_cap_yields_timeout_not_crash() {
        let fam = landscape();
        let policy = unit_policy(19);
        let cfg = TransferConfig { max_steps: 3, ..landscape_cfg() };
        let out = deps_transfer(&fam, &policy, &cfg, &StreamFactory::new(20)).unwrap();
        assert!(out.record.timed_out);
        assert!(!out.record.reached_target);
        assert_eq!(out.record.steps.len(), 3);
        assert!(out.record.ledger_consistent());
    }
}
