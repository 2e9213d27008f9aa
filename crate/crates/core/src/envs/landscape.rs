//! Analytic reward landscape over the evolution cube: a quadratic basin
//! rising toward the target corner minus a Gaussian barrier in the interior.
//! The family is a one-step bandit (no learnable behavior), which isolates
//! path search from policy optimization, and a grid maximin oracle provides
//! ground truth for path quality.

use super::{Env, EnvError, EnvFamily, Step};
use crate::evo::{EvolutionParameter, ParamSpace};
use crate::seeds::standard_normal;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LandscapeConfig {
    pub dim: usize,
    pub barrier_height: f64,
    pub barrier_center: Vec<f64>,
    pub barrier_width: f64,
    pub noise_sigma: f64,
    /// Success indicator threshold: an episode succeeds iff its (noisy)
    /// reward reaches this value.
    pub q_success: f64,
}

impl Default for LandscapeConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            barrier_height: 0.8,
            barrier_center: vec![0.5, 0.5],
            barrier_width: 0.15,
            noise_sigma: 0.0,
            q_success: 0.3,
        }
    }
}

impl LandscapeConfig {
    pub fn with_dim(dim: usize) -> Self {
        Self { dim, barrier_center: vec![0.5; dim], ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.dim < 1 {
            return Err(EnvError::InvalidConfig("landscape dim must be >= 1".into()));
        }
        if self.barrier_center.len() != self.dim {
            return Err(EnvError::InvalidConfig(format!(
                "barrier center has {} components, dim is {}",
                self.barrier_center.len(),
                self.dim
            )));
        }
        if self.barrier_height < 0.0 {
            return Err(EnvError::InvalidConfig("barrier height must be >= 0".into()));
        }
        if !(self.barrier_width > 0.0) {
            return Err(EnvError::InvalidConfig("barrier width must be > 0".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(EnvError::InvalidConfig("noise sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// Noiseless landscape value
/// `f(a) = 1 - ||1-a||^2/D - B*exp(-||a-c||^2/(2 w^2))`.
pub fn landscape_value(alpha: &[f64], cfg: &LandscapeConfig) -> f64 {
    let d = cfg.dim as f64;
    let dist2: f64 = alpha.iter().map(|&a| (1.0 - a) * (1.0 - a)).sum();
    let bar2: f64 = alpha
        .iter()
        .zip(&cfg.barrier_center)
        .map(|(&a, &c)| (a - c) * (a - c))
        .sum();
    let w2 = cfg.barrier_width * cfg.barrier_width;
    1.0 - dist2 / d - cfg.barrier_height * (-bar2 / (2.0 * w2)).exp()
}

/// Landscape value plus observation noise; deterministic when sigma is 0.
pub fn landscape_reward<R: rand::Rng>(alpha: &[f64], cfg: &LandscapeConfig, rng: &mut R) -> f64 {
    let mut v = landscape_value(alpha, cfg);
    if cfg.noise_sigma > 0.0 {
        v += cfg.noise_sigma * standard_normal(rng);
    }
    v
}

pub struct LandscapeFamily {
    cfg: LandscapeConfig,
    space: ParamSpace,
}

impl LandscapeFamily {
    pub fn new(cfg: LandscapeConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let names = (0..cfg.dim).map(|i| format!("alpha_{i}")).collect();
        let space = ParamSpace::new(vec![0.0; cfg.dim], vec![1.0; cfg.dim], names)
            .expect("landscape space is well-formed");
        Ok(Self { cfg, space })
    }

    pub fn config(&self) -> &LandscapeConfig {
        &self.cfg
    }
}

impl EnvFamily for LandscapeFamily {
    fn id(&self) -> &'static str {
        "landscape"
    }

    fn dim(&self) -> usize {
        self.cfg.dim
    }

    fn space(&self) -> &ParamSpace {
        &self.space
    }

    fn obs_dim(&self) -> usize {
        1
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        1
    }

    fn trainable(&self) -> bool {
        false
    }

    fn supports_state_reset(&self) -> bool {
        false
    }

    fn instantiate(&self, alpha: &EvolutionParameter, noise: ChaCha8Rng) -> Box<dyn Env> {
        Box::new(LandscapeEnv {
            value: landscape_value(alpha.values(), &self.cfg),
            noise_sigma: self.cfg.noise_sigma,
            q_success: self.cfg.q_success,
            rng: noise,
            done: false,
            succeeded: false,
            started: false,
        })
    }
}

struct LandscapeEnv {
    value: f64,
    noise_sigma: f64,
    q_success: f64,
    rng: ChaCha8Rng,
    done: bool,
    succeeded: bool,
    started: bool,
}

impl Env for LandscapeEnv {
    fn obs_dim(&self) -> usize {
        1
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn horizon(&self) -> usize {
        1
    }

    fn reset(&mut self) -> Vec<f64> {
        self.done = false;
        self.succeeded = false;
        self.started = true;
        vec![0.0]
    }

    fn step(&mut self, _action: &[f64]) -> Step {
        assert!(self.started && !self.done, "step on a finished episode");
        let mut reward = self.value;
        if self.noise_sigma > 0.0 {
            reward += self.noise_sigma * standard_normal(&mut self.rng);
        }
        self.done = true;
        self.succeeded = reward >= self.q_success;
        Step { obs: vec![0.0], reward, done: true }
    }

    fn done(&self) -> bool {
        self.done
    }

    fn succeeded(&self) -> bool {
        self.succeeded
    }

    fn elapsed(&self) -> usize {
        usize::from(self.done)
    }

    fn state_vec(&self) -> Vec<f64> {
        Vec::new()
    }

    fn reset_to_state(&mut self, _state: &[f64]) -> Result<Vec<f64>, EnvError> {
        Err(EnvError::StateResetUnsupported)
    }

    fn observe(&self) -> Vec<f64> {
        vec![0.0]
    }
}

/// A grid path and the minimum landscape value along it.
#[derive(Clone, Debug)]
pub struct OraclePath {
    /// Grid points from the source corner to the target corner.
    pub path: Vec<Vec<f64>>,
    /// Exact maximin value on the grid (min over counted path nodes,
    /// maximized over paths).
    pub maximin: f64,
}

struct HeapItem {
    key: f64,
    node: usize,
}

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.node == other.node
    }
}
impl Eq for HeapItem {}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key.total_cmp(&other.key).then(self.node.cmp(&other.node))
    }
}

/// Exact maximin path search from the source corner to the target corner on
/// the discretized cube: a Dijkstra variant maximizing the minimum node
/// value along the path, with per-axis moves. Exponential in D; refuses
/// D > 3.
pub fn landscape_oracle(
    cfg: &LandscapeConfig,
    grid_resolution: usize,
) -> Result<OraclePath, EnvError> {
    landscape_oracle_within(cfg, grid_resolution, |_| true)
}

/// Same maximin search, but only nodes with `counted(alpha) == true`
/// contribute to a path's minimum; other nodes are traversable for free.
pub fn landscape_oracle_within<F>(
    cfg: &LandscapeConfig,
    grid_resolution: usize,
    counted: F,
) -> Result<OraclePath, EnvError>
where
    F: Fn(&[f64]) -> bool,
{
    cfg.validate().map_err(|e| EnvError::OracleUnsupported(e.to_string()))?;
    if cfg.dim > 3 {
        return Err(EnvError::OracleUnsupported(format!(
            "grid oracle is exponential in dimension; got D = {}",
            cfg.dim
        )));
    }
    if grid_resolution < 2 {
        return Err(EnvError::OracleUnsupported("grid resolution must be >= 2".into()));
    }
    let d = cfg.dim;
    let res = grid_resolution;
    let n_nodes = res.pow(d as u32);
    let coord = |node: usize| -> Vec<usize> {
        let mut c = Vec::with_capacity(d);
        let mut rest = node;
        for _ in 0..d {
            c.push(rest % res);
            rest /= res;
        }
        c
    };
    let alpha_of = |node: usize| -> Vec<f64> {
        coord(node).iter().map(|&i| i as f64 / (res - 1) as f64).collect()
    };
    let weight = |node: usize| -> f64 {
        let a = alpha_of(node);
        if counted(&a) {
            landscape_value(&a, cfg)
        } else {
            f64::INFINITY
        }
    };

    let start = 0usize;
    let goal = n_nodes - 1;
    let mut best = vec![f64::NEG_INFINITY; n_nodes];
    let mut parent = vec![usize::MAX; n_nodes];
    let mut heap = BinaryHeap::new();
    best[start] = weight(start);
    heap.push(HeapItem { key: best[start], node: start });
    while let Some(HeapItem { key, node }) = heap.pop() {
        if key < best[node] {
            continue;
        }
        if node == goal {
            break;
        }
        let c = coord(node);
        let mut stride = 1;
        for axis in 0..d {
            for dir in [-1isize, 1] {
                let ci = c[axis] as isize + dir;
                if ci < 0 || ci >= res as isize {
                    continue;
                }
                let next = (node as isize + dir * stride as isize) as usize;
                let cand = key.min(weight(next));
                if cand > best[next] {
                    best[next] = cand;
                    parent[next] = node;
                    heap.push(HeapItem { key: cand, node: next });
                }
            }
            stride *= res;
        }
    }

    if best[goal] == f64::NEG_INFINITY {
        return Err(EnvError::OracleUnsupported("target unreachable".into()));
    }
    let mut path = Vec::new();
    let mut node = goal;
    loop {
        path.push(alpha_of(node));
        if node == start {
            break;
        }
        node = parent[node];
    }
    path.reverse();
    Ok(OraclePath { path, maximin: best[goal] })
}
