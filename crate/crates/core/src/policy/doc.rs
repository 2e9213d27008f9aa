//! Policy document: a versioned JSON snapshot of the policy parameters,
//! observation statistics, and environment binding. Arrays are row-major.

use super::{GaussianMlpPolicy, Mlp, ObsNorm, PolicyError};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PolicyDocument {
    pub format_version: u32,
    pub env_id: String,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden: Vec<usize>,
    /// Per layer, row-major `fan_in x fan_out`.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub log_std: Vec<f64>,
    pub obs_mean: Vec<f64>,
    pub obs_std: Vec<f64>,
}

impl PolicyDocument {
    pub fn from_policy(policy: &GaussianMlpPolicy) -> Self {
        let dims = policy.mlp().dims().to_vec();
        let params = policy.mlp().params();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut off = 0;
        for w in dims.windows(2) {
            let (n_in, n_out) = (w[0], w[1]);
            weights.push(params[off..off + n_in * n_out].to_vec());
            off += n_in * n_out;
            biases.push(params[off..off + n_out].to_vec());
            off += n_out;
        }
        let mut norm = policy.obs_norm.clone();
        norm.freeze();
        Self {
            format_version: FORMAT_VERSION,
            env_id: policy.env_id.clone(),
            obs_dim: policy.obs_dim(),
            act_dim: policy.act_dim(),
            hidden: policy.hidden().to_vec(),
            weights,
            biases,
            log_std: policy.log_std().to_vec(),
            obs_mean: norm.mean.clone(),
            obs_std: norm.std(),
        }
    }

    pub fn into_policy(self) -> Result<GaussianMlpPolicy, PolicyError> {
        if self.format_version != FORMAT_VERSION {
            return Err(PolicyError::Document(format!(
                "unsupported format_version {} (expected {FORMAT_VERSION})",
                self.format_version
            )));
        }
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.obs_dim);
        dims.extend_from_slice(&self.hidden);
        dims.push(self.act_dim);
        if self.weights.len() != dims.len() - 1 || self.biases.len() != dims.len() - 1 {
            return Err(PolicyError::Document(format!(
                "expected {} layers, got {} weight / {} bias blocks",
                dims.len() - 1,
                self.weights.len(),
                self.biases.len()
            )));
        }
        let mut mlp = Mlp::zeros(dims.clone());
        let mut off = 0;
        for (l, w) in dims.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            if self.weights[l].len() != n_in * n_out {
                return Err(PolicyError::Document(format!(
                    "layer {l}: expected {} weights, got {}",
                    n_in * n_out,
                    self.weights[l].len()
                )));
            }
            if self.biases[l].len() != n_out {
                return Err(PolicyError::Document(format!(
                    "layer {l}: expected {n_out} biases, got {}",
                    self.biases[l].len()
                )));
            }
            mlp.params_mut()[off..off + n_in * n_out].copy_from_slice(&self.weights[l]);
            off += n_in * n_out;
            mlp.params_mut()[off..off + n_out].copy_from_slice(&self.biases[l]);
            off += n_out;
        }
        if self.log_std.len() != self.act_dim {
            return Err(PolicyError::Document(format!(
                "log_std length {} does not match act_dim {}",
                self.log_std.len(),
                self.act_dim
            )));
        }
        if self.obs_mean.len() != self.obs_dim || self.obs_std.len() != self.obs_dim {
            return Err(PolicyError::Document("observation statistics length mismatch".into()));
        }
        let all_finite = mlp.params().iter().all(|v| v.is_finite())
            && self.log_std.iter().all(|v| v.is_finite())
            && self.obs_mean.iter().all(|v| v.is_finite())
            && self.obs_std.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(PolicyError::Document("non-finite parameter value".into()));
        }
        let norm = ObsNorm::from_frozen(self.obs_mean, self.obs_std);
        Ok(GaussianMlpPolicy::from_parts(mlp, self.log_std, norm, self.env_id))
    }
}

pub fn save_policy(policy: &GaussianMlpPolicy, path: &Path) -> std::io::Result<()> {
    let doc = PolicyDocument::from_policy(policy);
    let text = serde_json::to_string_pretty(&doc).expect("policy document serializes");
    std::fs::write(path, text)
}

pub fn load_policy(path: &Path) -> Result<GaussianMlpPolicy, PolicyError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| PolicyError::Document(format!("read {}: {e}", path.display())))?;
    let doc: PolicyDocument = serde_json::from_str(&text)
        .map_err(|e| PolicyError::Document(format!("parse {}: {e}", path.display())))?;
    doc.into_policy()
}
