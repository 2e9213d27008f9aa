//! State-value baseline: an MLP over the normalized observation plus a
//! normalized time feature (sparse terminal rewards make value strongly
//! time-dependent).

use super::{Mlp, ObsNorm};

#[derive(Clone, Debug)]
pub struct ValueFunction {
    mlp: Mlp,
    /// Regression loss from the most recent fit, if any.
    pub last_loss: Option<f64>,
}

impl ValueFunction {
    pub fn new<R: rand::Rng>(obs_dim: usize, hidden: &[usize], rng: &mut R) -> Self {
        let mut dims = Vec::with_capacity(hidden.len() + 2);
        dims.push(obs_dim + 1); // + time feature
        dims.extend_from_slice(hidden);
        dims.push(1);
        Self { mlp: Mlp::init(dims, 0.1, rng), last_loss: None }
    }

    pub fn in_dim(&self) -> usize {
        self.mlp.in_dim()
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp {
        &mut self.mlp
    }

    /// Build the network input from a raw observation and elapsed steps.
    pub fn input(&self, norm: &ObsNorm, obs: &[f64], t: usize, horizon: usize) -> Vec<f64> {
        let mut x = norm.normalize(obs);
        x.push(t as f64 / horizon as f64);
        x
    }

    pub fn value_of_input(&self, input: &[f64]) -> f64 {
        self.mlp.forward_only(input)[0]
    }

    pub fn value(&self, norm: &ObsNorm, obs: &[f64], t: usize, horizon: usize) -> f64 {
        self.value_of_input(&self.input(norm, obs, t, horizon))
    }
}
