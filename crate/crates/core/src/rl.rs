//! Rollout collection, generalized advantage estimation, value regression,
//! and natural policy gradient updates.
//!
//! Episodes fan out across workers (one env and RNG stream each) and all
//! gradient reductions run in fixed episode order, so results are identical
//! for any thread count.

use crate::envs::{Env, EnvFamily};
use crate::evo::EvolutionParameter;
use crate::exec::map_indexed;
use crate::linalg::{axpy, dot, norm2};
use crate::policy::{GaussianMlpPolicy, ObsNorm, ValueFunction};
use crate::seeds::StreamFactory;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct RlConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    /// KL step budget for the natural gradient update.
    pub npg_step: f64,
    /// Trajectories per training batch.
    pub batch: usize,
    pub cg_iters: usize,
    pub cg_damping: f64,
    pub value_epochs: usize,
    pub value_lr: f64,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            gamma: 0.995,
            gae_lambda: 0.97,
            npg_step: 0.0001,
            batch: 12,
            cg_iters: 10,
            cg_damping: 1e-4,
            value_epochs: 10,
            value_lr: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DoneReason {
    Success,
    Horizon,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Observation before each action, length T.
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub done: DoneReason,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut disc = 1.0;
        let mut total = 0.0;
        for r in &self.rewards {
            total += disc * r;
            disc *= gamma;
        }
        total
    }

    pub fn succeeded(&self) -> bool {
        self.done == DoneReason::Success
    }
}

/// Episode counters split by purpose, plus the train-iteration counter.
/// Every episode and every policy update increments exactly once.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpochLedger {
    pub jacobian: u64,
    pub training: u64,
    pub evaluation: u64,
    pub train_iters: u64,
}

impl EpochLedger {
    pub fn total_epochs(&self) -> u64 {
        self.jacobian + self.training + self.evaluation
    }

    pub fn add(&mut self, other: &EpochLedger) {
        self.jacobian += other.jacobian;
        self.training += other.training;
        self.evaluation += other.evaluation;
        self.train_iters += other.train_iters;
    }
}

/// Chooses the environment and starting state for each episode of a batch.
pub trait EpisodeProvider: Sync {
    fn family(&self) -> &dyn EnvFamily;

    fn alpha(&self, i: usize, rng: &mut ChaCha8Rng) -> EvolutionParameter;

    /// Initialize the episode, returning the first observation.
    fn init(&self, _i: usize, env: &mut dyn Env, _rng: &mut ChaCha8Rng) -> Vec<f64> {
        env.reset()
    }
}

/// Fixed evolution parameter, nominal resets.
pub struct FixedAlpha<'a> {
    pub family: &'a dyn EnvFamily,
    pub alpha: EvolutionParameter,
}

impl EpisodeProvider for FixedAlpha<'_> {
    fn family(&self) -> &dyn EnvFamily {
        self.family
    }

    fn alpha(&self, _i: usize, _rng: &mut ChaCha8Rng) -> EvolutionParameter {
        self.alpha.clone()
    }
}

/// Collect `batch` complete episodes. Per-episode draws come from streams
/// labeled by episode index, so the batch is reproducible under any
/// scheduling.
pub fn collect_rollouts<P: EpisodeProvider>(
    policy: &GaussianMlpPolicy,
    provider: &P,
    batch: usize,
    streams: &StreamFactory,
    ledger: &mut EpochLedger,
) -> Vec<Trajectory> {
    assert!(batch >= 1, "batch must be >= 1");
    let trajs = map_indexed(batch, |i| {
        let mut alpha_rng = streams.stream(&format!("ep{i:03}/alpha"));
        let alpha = provider.alpha(i, &mut alpha_rng);
        let mut env = provider.family().instantiate(&alpha, streams.stream(&format!("ep{i:03}/env")));
        let mut init_rng = streams.stream(&format!("ep{i:03}/init"));
        let mut obs = provider.init(i, env.as_mut(), &mut init_rng);
        let mut act_rng = streams.stream(&format!("ep{i:03}/act"));
        let mut traj = Trajectory {
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            log_probs: Vec::new(),
            done: DoneReason::Horizon,
        };
        while !env.done() {
            let (action, log_prob) = policy
                .sample_action(&obs, &mut act_rng)
                .expect("environment produced a finite observation");
            let step = env.step(&action);
            traj.obs.push(obs);
            traj.actions.push(action);
            traj.rewards.push(step.reward);
            traj.log_probs.push(log_prob);
            obs = step.obs;
        }
        traj.done = if env.succeeded() { DoneReason::Success } else { DoneReason::Horizon };
        traj
    });
    ledger.training += batch as u64;
    trajs
}

/// GAE recursion `A_t = d_t + (gamma lambda) A_{t+1}` with
/// `d_t = r_t + gamma V(s_{t+1}) - V(s_t)` and `V(terminal) = 0`.
pub fn compute_gae(
    traj: &Trajectory,
    value_fn: &ValueFunction,
    norm: &ObsNorm,
    gamma: f64,
    gae_lambda: f64,
    horizon: usize,
) -> Vec<f64> {
    let t_len = traj.len();
    let mut values = Vec::with_capacity(t_len + 1);
    for (t, obs) in traj.obs.iter().enumerate() {
        values.push(value_fn.value(norm, obs, t, horizon));
    }
    values.push(0.0); // terminal
    let mut adv = vec![0.0; t_len];
    let mut acc = 0.0;
    for t in (0..t_len).rev() {
        let delta = traj.rewards[t] + gamma * values[t + 1] - values[t];
        acc = delta + gamma * gae_lambda * acc;
        adv[t] = acc;
    }
    adv
}

/// Normalize advantages to zero mean and unit standard deviation across the
/// whole batch; with zero spread only the mean is removed.
pub fn normalize_advantages(advantages: &mut [Vec<f64>]) {
    let n: usize = advantages.iter().map(|a| a.len()).sum();
    if n == 0 {
        return;
    }
    let mean: f64 = advantages.iter().flatten().sum::<f64>() / n as f64;
    let var: f64 =
        advantages.iter().flatten().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt();
    for a in advantages.iter_mut().flatten() {
        *a -= mean;
        if std > 1e-8 {
            *a /= std;
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ValueFitReport {
    pub pre: f64,
    pub post: f64,
    pub epochs_run: usize,
}

fn value_batch(
    value: &ValueFunction,
    norm: &ObsNorm,
    trajs: &[Trajectory],
    gamma: f64,
    horizon: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for traj in trajs {
        // returns-to-go
        let mut rtg = vec![0.0; traj.len()];
        let mut acc = 0.0;
        for t in (0..traj.len()).rev() {
            acc = traj.rewards[t] + gamma * acc;
            rtg[t] = acc;
        }
        for (t, obs) in traj.obs.iter().enumerate() {
            inputs.push(value.input(norm, obs, t, horizon));
            targets.push(rtg[t]);
        }
    }
    (inputs, targets)
}

fn value_loss_grad(
    value: &ValueFunction,
    inputs: &[Vec<f64>],
    targets: &[f64],
    chunks: &[(usize, usize)],
    want_grad: bool,
) -> (f64, Vec<f64>) {
    let n = inputs.len() as f64;
    let partials = map_indexed(chunks.len(), |ci| {
        let (lo, hi) = chunks[ci];
        let mut grad = if want_grad { vec![0.0; value.mlp().n_params()] } else { Vec::new() };
        let mut loss = 0.0;
        for k in lo..hi {
            let (out, cache) = value.mlp().forward(&inputs[k]);
            let err = out[0] - targets[k];
            loss += err * err / n;
            if want_grad {
                value.mlp().backward_into(&cache, &[2.0 * err / n], &mut grad);
            }
        }
        (loss, grad)
    });
    let mut loss = 0.0;
    let mut grad = if want_grad { vec![0.0; value.mlp().n_params()] } else { Vec::new() };
    for (l, g) in partials {
        loss += l;
        if want_grad {
            axpy(1.0, &g, &mut grad);
        }
    }
    (loss, grad)
}

/// Regression toward empirical discounted returns by gradient descent with
/// per-epoch backtracking, so the training loss never increases.
pub fn fit_value(
    value: &mut ValueFunction,
    norm: &ObsNorm,
    trajs: &[Trajectory],
    cfg: &RlConfig,
    horizon: usize,
) -> ValueFitReport {
    assert!(!trajs.is_empty(), "fit_value needs at least one trajectory");
    let (inputs, targets) = value_batch(value, norm, trajs, cfg.gamma, horizon);
    let chunks = episode_chunks(trajs);
    let (pre, _) = value_loss_grad(value, &inputs, &targets, &chunks, false);
    let mut loss = pre;
    let mut lr = cfg.value_lr;
    let mut epochs_run = 0;
    for _ in 0..cfg.value_epochs {
        let (_, grad) = value_loss_grad(value, &inputs, &targets, &chunks, true);
        let gnorm = norm2(&grad);
        if gnorm < 1e-12 {
            break;
        }
        let mut accepted = false;
        for _ in 0..12 {
            let mut candidate = value.clone();
            axpy(-lr, &grad, candidate.mlp_mut().params_mut());
            let (cand_loss, _) = value_loss_grad(&candidate, &inputs, &targets, &chunks, false);
            if cand_loss <= loss {
                *value = candidate;
                loss = cand_loss;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        if !accepted {
            break;
        }
        epochs_run += 1;
    }
    value.last_loss = Some(loss);
    ValueFitReport { pre, post: loss, epochs_run }
}

fn episode_chunks(trajs: &[Trajectory]) -> Vec<(usize, usize)> {
    // fixed per-episode sample ranges; reduction order never depends on the
    // thread count
    let mut chunks = Vec::with_capacity(trajs.len());
    let mut off = 0;
    for t in trajs {
        chunks.push((off, off + t.len()));
        off += t.len();
    }
    chunks
}

/// Per-sample score gradients, stored per episode as a row-major block.
struct ScoreBlock {
    rows: usize,
    data: Vec<f64>,
}

fn score_blocks(policy: &GaussianMlpPolicy, trajs: &[Trajectory]) -> Vec<ScoreBlock> {
    let p = policy.n_params();
    map_indexed(trajs.len(), |i| {
        let traj = &trajs[i];
        let mut data = vec![0.0; traj.len() * p];
        for (t, (obs, act)) in traj.obs.iter().zip(&traj.actions).enumerate() {
            policy
                .log_prob_grad_into(obs, act, &mut data[t * p..(t + 1) * p])
                .expect("rollout observations are finite");
        }
        ScoreBlock { rows: traj.len(), data }
    })
}

fn fisher_vector_product(blocks: &[ScoreBlock], v: &[f64], damping: f64, n: f64) -> Vec<f64> {
    let p = v.len();
    let partials = map_indexed(blocks.len(), |bi| {
        let block = &blocks[bi];
        let mut acc = vec![0.0; p];
        for r in 0..block.rows {
            let row = &block.data[r * p..(r + 1) * p];
            let c = dot(row, v);
            axpy(c, row, &mut acc);
        }
        acc
    });
    let mut out = vec![0.0; p];
    for part in partials {
        axpy(1.0, &part, &mut out);
    }
    for (o, vi) in out.iter_mut().zip(v) {
        *o = *o / n + damping * vi;
    }
    out
}

fn conjugate_gradient<F>(fvp: F, b: &[f64], iters: usize, tol: f64) -> (Vec<f64>, f64, usize)
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = vec![0.0; b.len()];
    let mut r = b.to_vec();
    let mut d = b.to_vec();
    let mut rs = dot(&r, &r);
    let target = tol * norm2(b);
    let mut used = 0;
    for _ in 0..iters {
        if rs.sqrt() <= target {
            break;
        }
        let fd = fvp(&d);
        let alpha = rs / dot(&d, &fd).max(1e-300);
        axpy(alpha, &d, &mut x);
        axpy(-alpha, &fd, &mut r);
        let rs_new = dot(&r, &r);
        let beta = rs_new / rs;
        for (di, ri) in d.iter_mut().zip(&r) {
            *di = ri + beta * *di;
        }
        rs = rs_new;
        used += 1;
    }
    (x, rs.sqrt(), used)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NpgDiagnostics {
    pub updated: bool,
    pub skip_reason: Option<String>,
    pub grad_norm: f64,
    pub step_scale: f64,
    pub cg_residual: f64,
    pub cg_iters_used: usize,
}

/// One natural policy gradient step:
/// `g = mean(score * A)`, solve `(F + damping I) x = g` by conjugate
/// gradient with Fisher-vector products from score outer products, then step
/// `dw = sqrt(2 delta / (g.x + eps)) * x`. Non-finite gradients or
/// non-positive curvature skip the update (the iteration still counts).
pub fn npg_update(
    policy: &GaussianMlpPolicy,
    trajs: &[Trajectory],
    advantages: &[Vec<f64>],
    cfg: &RlConfig,
) -> (GaussianMlpPolicy, NpgDiagnostics) {
    assert!(!trajs.is_empty(), "npg_update needs a nonempty batch");
    let n: usize = trajs.iter().map(|t| t.len()).sum();
    let p = policy.n_params();
    let blocks = score_blocks(policy, trajs);

    let mut g = vec![0.0; p];
    for (block, adv) in blocks.iter().zip(advantages) {
        debug_assert_eq!(block.rows, adv.len());
        for (r, a) in adv.iter().enumerate() {
            axpy(a / n as f64, &block.data[r * p..(r + 1) * p], &mut g);
        }
    }
    let grad_norm = norm2(&g);
    let mut diag = NpgDiagnostics {
        updated: false,
        skip_reason: None,
        grad_norm,
        step_scale: 0.0,
        cg_residual: 0.0,
        cg_iters_used: 0,
    };
    if !grad_norm.is_finite() {
        diag.skip_reason = Some("non-finite gradient".into());
        log::warn!("npg update skipped: non-finite gradient");
        return (policy.clone(), diag);
    }
    if grad_norm == 0.0 {
        diag.skip_reason = Some("zero gradient".into());
        return (policy.clone(), diag);
    }

    let (x, residual, used) = conjugate_gradient(
        |v| fisher_vector_product(&blocks, v, cfg.cg_damping, n as f64),
        &g,
        cfg.cg_iters,
        1e-6,
    );
    diag.cg_residual = residual;
    diag.cg_iters_used = used;
    if residual > 1e-6 * grad_norm && used == cfg.cg_iters {
        log::debug!("cg exhausted {used} iters, residual {residual:.3e}");
    }
    let gx = dot(&g, &x);
    if !gx.is_finite() || gx <= 0.0 {
        diag.skip_reason = Some(format!("non-positive curvature g.x = {gx}"));
        log::warn!("npg update skipped: g.x = {gx}");
        return (policy.clone(), diag);
    }
    let scale = (2.0 * cfg.npg_step / (gx + 1e-12)).sqrt();
    diag.step_scale = scale;
    let mut params = policy.params();
    axpy(scale, &x, &mut params);
    if params.iter().any(|w| !w.is_finite()) {
        diag.skip_reason = Some("non-finite parameters after step".into());
        log::warn!("npg update skipped: non-finite parameters");
        return (policy.clone(), diag);
    }
    diag.updated = true;
    (policy.with_params(&params), diag)
}

/// Mean KL divergence `KL(old || new)` over the batch states, in closed form
/// for diagonal Gaussians.
pub fn mean_kl(
    old: &GaussianMlpPolicy,
    new: &GaussianMlpPolicy,
    trajs: &[Trajectory],
) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for traj in trajs {
        for obs in &traj.obs {
            let mu1 = old.mean_action(obs).unwrap();
            let mu2 = new.mean_action(obs).unwrap();
            for j in 0..mu1.len() {
                let (ls1, ls2) = (old.log_std()[j], new.log_std()[j]);
                let (v1, v2) = ((2.0 * ls1).exp(), (2.0 * ls2).exp());
                let d = mu2[j] - mu1[j];
                total += ls2 - ls1 + (v1 + d * d) / (2.0 * v2) - 0.5;
            }
            count += 1;
        }
    }
    total / count as f64
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IterationOutcome {
    pub trajectories: usize,
    pub timesteps: usize,
    pub mean_return: f64,
    pub success_rate: f64,
    pub updated: bool,
    pub skip_reason: Option<String>,
    pub value_fit: Option<ValueFitReport>,
}

/// One full training iteration: collect a batch, update the policy unless
/// the batch is reward-dead, regress the value baseline, then (optionally)
/// absorb the batch into the observation statistics.
pub fn train_iteration<P: EpisodeProvider>(
    policy: &mut GaussianMlpPolicy,
    value: &mut ValueFunction,
    provider: &P,
    cfg: &RlConfig,
    streams: &StreamFactory,
    ledger: &mut EpochLedger,
    update_obs_norm: bool,
) -> IterationOutcome {
    let horizon = provider.family().horizon();
    let trajs = collect_rollouts(policy, provider, cfg.batch, streams, ledger);
    ledger.train_iters += 1;
    let timesteps: usize = trajs.iter().map(|t| t.len()).sum();
    let mean_return =
        trajs.iter().map(|t| t.discounted_return(cfg.gamma)).sum::<f64>() / trajs.len() as f64;
    let success_rate =
        trajs.iter().filter(|t| t.succeeded()).count() as f64 / trajs.len() as f64;

    let dead = trajs.iter().all(|t| t.rewards.iter().all(|r| *r == 0.0));
    let mut outcome = IterationOutcome {
        trajectories: trajs.len(),
        timesteps,
        mean_return,
        success_rate,
        updated: false,
        skip_reason: None,
        value_fit: None,
    };
    if dead {
        // sparse-reward dead batch: g would be pure value-noise; skip but
        // keep the ledger honest
        outcome.skip_reason = Some("dead batch (no reward)".into());
        return outcome;
    }

    let mut advantages: Vec<Vec<f64>> = trajs
        .iter()
        .map(|t| compute_gae(t, value, &policy.obs_norm, cfg.gamma, cfg.gae_lambda, horizon))
        .collect();
    normalize_advantages(&mut advantages);
    let (new_policy, diag) = npg_update(policy, &trajs, &advantages, cfg);
    outcome.updated = diag.updated;
    outcome.skip_reason = diag.skip_reason;
    *policy = new_policy;
    outcome.value_fit = Some(fit_value(value, &policy.obs_norm.clone(), &trajs, cfg, horizon));
    if update_obs_norm {
        for traj in &trajs {
            for obs in &traj.obs {
                policy.obs_norm.update(obs);
            }
        }
    }
    outcome
}
