//! Gaussian MLP policy and value network with hand-written forward and
//! backward passes. Parameters live in one flat `f64` vector so the natural
//! gradient machinery can treat the policy as a point in parameter space.

pub mod doc;
pub mod value;

use crate::seeds::standard_normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use doc::{load_policy, save_policy, PolicyDocument, FORMAT_VERSION};
pub use value::ValueFunction;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("non-finite observation component {index}")]
    NonFiniteInput { index: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("policy document rejected: {0}")]
    Document(String),
}

/// Multilayer perceptron: tanh hidden units, linear output. Parameters are
/// flattened per layer as row-major weights followed by biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Post-activation values kept from a forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    activations: Vec<Vec<f64>>,
}

impl Mlp {
    pub fn zeros(dims: Vec<usize>) -> Self {
        assert!(dims.len() >= 2);
        let n = Self::param_count(&dims);
        Self { dims, params: vec![0.0; n] }
    }

    /// Scaled Gaussian init: hidden layers std 1/sqrt(fan_in), output layer
    /// additionally scaled by `out_scale`; biases zero.
    pub fn init<R: rand::Rng>(dims: Vec<usize>, out_scale: f64, rng: &mut R) -> Self {
        let mut mlp = Self::zeros(dims);
        let layers = mlp.dims.len() - 1;
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (mlp.dims[l], mlp.dims[l + 1]);
            let std = (1.0 / n_in as f64).sqrt() * if l + 1 == layers { out_scale } else { 1.0 };
            for w in &mut mlp.params[off..off + n_in * n_out] {
                *w = std * standard_normal(rng);
            }
            off += n_in * n_out + n_out; // biases stay zero
        }
        mlp
    }

    pub fn param_count(dims: &[usize]) -> usize {
        dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offsets(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        // (offset, n_in, n_out) per layer
        let mut off = 0;
        self.dims.windows(2).map(move |w| {
            let item = (off, w[0], w[1]);
            off += w[0] * w[1] + w[1];
            item
        })
    }

    pub fn forward(&self, input: &[f64]) -> (Vec<f64>, ForwardCache) {
        debug_assert_eq!(input.len(), self.in_dim());
        let layers = self.dims.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.to_vec());
        let mut x = input.to_vec();
        for (l, (off, n_in, n_out)) in self.layer_offsets().enumerate() {
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut z = b.to_vec();
            for i in 0..n_in {
                let xi = x[i];
                let row = &w[i * n_out..(i + 1) * n_out];
                for (zj, wj) in z.iter_mut().zip(row) {
                    *zj += xi * wj;
                }
            }
            if l + 1 < layers {
                for zj in &mut z {
                    *zj = zj.tanh();
                }
            }
            activations.push(z.clone());
            x = z;
        }
        (x, ForwardCache { activations })
    }

    pub fn forward_only(&self, input: &[f64]) -> Vec<f64> {
        self.forward(input).0
    }

    /// Reverse-mode gradient of `dout . output` w.r.t. all parameters,
    /// accumulated into `grad` (same layout as `params`).
    pub fn backward_into(&self, cache: &ForwardCache, dout: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let layers = self.dims.len() - 1;
        let offsets: Vec<(usize, usize, usize)> = self.layer_offsets().collect();
        let mut delta = dout.to_vec();
        for l in (0..layers).rev() {
            let (off, n_in, n_out) = offsets[l];
            let a_prev = &cache.activations[l];
            let w = &self.params[off..off + n_in * n_out];
            let gw = off;
            let gb = off + n_in * n_out;
            for (j, dj) in delta.iter().enumerate() {
                grad[gb + j] += dj;
            }
            let mut d_prev = vec![0.0; n_in];
            for i in 0..n_in {
                let ai = a_prev[i];
                let row = &w[i * n_out..(i + 1) * n_out];
                let grow = &mut grad[gw + i * n_out..gw + (i + 1) * n_out];
                let mut acc = 0.0;
                for ((g, wj), dj) in grow.iter_mut().zip(row).zip(&delta) {
                    *g += ai * dj;
                    acc += wj * dj;
                }
                d_prev[i] = acc;
            }
            if l > 0 {
                // hidden activations are tanh; a' = 1 - a^2
                for (dp, a) in d_prev.iter_mut().zip(a_prev) {
                    *dp *= 1.0 - a * a;
                }
            }
            delta = d_prev;
        }
    }
}

/// Running observation statistics, frozen after expert training so the
/// normalization carried into transfer cannot drift.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsNorm {
    pub mean: Vec<f64>,
    m2: Vec<f64>,
    count: u64,
    pub frozen: bool,
}

impl ObsNorm {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], m2: vec![0.0; dim], count: 0, frozen: false }
    }

    pub fn from_frozen(mean: Vec<f64>, std: Vec<f64>) -> Self {
        // store std^2*(n-1) with a nominal n of 2 so std() round-trips
        let m2 = std.iter().map(|s| s * s).collect();
        Self { mean, m2, count: 2, frozen: true }
    }

    pub fn update(&mut self, obs: &[f64]) {
        if self.frozen {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for i in 0..self.mean.len() {
            let delta = obs[i] - self.mean[i];
            self.mean[i] += delta / n;
            self.m2[i] += delta * (obs[i] - self.mean[i]);
        }
    }

    pub fn std(&self) -> Vec<f64> {
        if self.count < 2 {
            return vec![1.0; self.mean.len()];
        }
        let n = (self.count - 1) as f64;
        self.m2.iter().map(|m| (m / n).sqrt().max(1e-6)).collect()
    }

    pub fn freeze(&mut self) {
        if self.count >= 2 {
            // collapse to frozen mean/std form
            let std = self.std();
            self.m2 = std.iter().map(|s| s * s).collect();
            self.count = 2;
        }
        self.frozen = true;
    }

    pub fn normalize(&self, obs: &[f64]) -> Vec<f64> {
        if self.count < 2 {
            return obs.to_vec();
        }
        let n = (self.count - 1) as f64;
        obs.iter()
            .zip(self.mean.iter().zip(&self.m2))
            .map(|(x, (m, m2))| (x - m) / (m2 / n).sqrt().max(1e-6))
            .collect()
    }
}

/// Diagonal-Gaussian policy head on an MLP mean, with a state-independent
/// learnable log standard deviation appended to the parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMlpPolicy {
    mlp: Mlp,
    log_std: Vec<f64>,
    pub obs_norm: ObsNorm,
    pub env_id: String,
}

const LOG_2PI: f64 = 1.8378770664093453;

impl GaussianMlpPolicy {
    pub fn new<R: rand::Rng>(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        env_id: &str,
        rng: &mut R,
    ) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(obs_dim);
        dims.extend_from_slice(hidden);
        dims.push(act_dim);
        Self {
            mlp: Mlp::init(dims, 0.01, rng),
            log_std: vec![0.0; act_dim],
            obs_norm: ObsNorm::identity(obs_dim),
            env_id: env_id.to_string(),
        }
    }

    pub fn from_parts(mlp: Mlp, log_std: Vec<f64>, obs_norm: ObsNorm, env_id: String) -> Self {
        assert_eq!(mlp.out_dim(), log_std.len());
        Self { mlp, log_std, obs_norm, env_id }
    }

    pub fn obs_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.mlp.out_dim()
    }

    pub fn hidden(&self) -> &[usize] {
        &self.mlp.dims()[1..self.mlp.dims().len() - 1]
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    /// Full parameter vector: MLP parameters followed by log_std.
    pub fn n_params(&self) -> usize {
        self.mlp.n_params() + self.log_std.len()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.mlp.params().to_vec();
        p.extend_from_slice(&self.log_std);
        p
    }

    /// Copy-on-write update: returns a new policy with the given parameters.
    pub fn with_params(&self, params: &[f64]) -> Self {
        assert_eq!(params.len(), self.n_params());
        let split = self.mlp.n_params();
        let mut mlp = self.mlp.clone();
        mlp.params_mut().copy_from_slice(&params[..split]);
        Self {
            mlp,
            log_std: params[split..].to_vec(),
            obs_norm: self.obs_norm.clone(),
            env_id: self.env_id.clone(),
        }
    }

    fn check_obs(&self, obs: &[f64]) -> Result<(), PolicyError> {
        if obs.len() != self.obs_dim() {
            return Err(PolicyError::DimMismatch { expected: self.obs_dim(), got: obs.len() });
        }
        for (i, v) in obs.iter().enumerate() {
            if !v.is_finite() {
                return Err(PolicyError::NonFiniteInput { index: i });
            }
        }
        Ok(())
    }

    /// Deterministic mean action.
    pub fn mean_action(&self, obs: &[f64]) -> Result<Vec<f64>, PolicyError> {
        self.check_obs(obs)?;
        Ok(self.mlp.forward_only(&self.obs_norm.normalize(obs)))
    }

    /// Draw `a = mean + exp(log_std) * nu` and return the exact
    /// diagonal-Gaussian log density at `a`.
    pub fn sample_action<R: rand::Rng>(
        &self,
        obs: &[f64],
        rng: &mut R,
    ) -> Result<(Vec<f64>, f64), PolicyError> {
        let mean = self.mean_action(obs)?;
        let mut action = Vec::with_capacity(mean.len());
        let mut log_prob = 0.0;
        for (m, ls) in mean.iter().zip(&self.log_std) {
            let nu = standard_normal(rng);
            action.push(m + ls.exp() * nu);
            log_prob += -0.5 * nu * nu - ls - 0.5 * LOG_2PI;
        }
        Ok((action, log_prob))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64, PolicyError> {
        let mean = self.mean_action(obs)?;
        if action.len() != mean.len() {
            return Err(PolicyError::DimMismatch { expected: mean.len(), got: action.len() });
        }
        let mut lp = 0.0;
        for ((m, a), ls) in mean.iter().zip(action).zip(&self.log_std) {
            let z = (a - m) / ls.exp();
            lp += -0.5 * z * z - ls - 0.5 * LOG_2PI;
        }
        Ok(lp)
    }

    /// Exact analytic score `d log pi(a|s) / d params` over the full
    /// parameter vector (MLP weights, then log_std).
    pub fn log_prob_grad(&self, obs: &[f64], action: &[f64]) -> Result<Vec<f64>, PolicyError> {
        let mut grad = vec![0.0; self.n_params()];
        self.log_prob_grad_into(obs, action, &mut grad)?;
        Ok(grad)
    }

    pub fn log_prob_grad_into(
        &self,
        obs: &[f64],
        action: &[f64],
        grad: &mut [f64],
    ) -> Result<(), PolicyError> {
        self.check_obs(obs)?;
        if action.len() != self.act_dim() {
            return Err(PolicyError::DimMismatch { expected: self.act_dim(), got: action.len() });
        }
        debug_assert_eq!(grad.len(), self.n_params());
        let normed = self.obs_norm.normalize(obs);
        let (mean, cache) = self.mlp.forward(&normed);
        let split = self.mlp.n_params();
        // d logp / d mean_j = (a_j - mu_j) / sigma_j^2
        let mut dmean = vec![0.0; mean.len()];
        for (j, ((m, a), ls)) in mean.iter().zip(action).zip(&self.log_std).enumerate() {
            let inv_var = (-2.0 * ls).exp();
            let diff = a - m;
            dmean[j] = diff * inv_var;
            // d logp / d log_std_j = diff^2 / sigma^2 - 1
            grad[split + j] += diff * diff * inv_var - 1.0;
        }
        self.mlp.backward_into(&cache, &dmean, &mut grad[..split]);
        Ok(())
    }
}
