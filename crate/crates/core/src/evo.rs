//! Evolution-parameter arithmetic: the unit cube, interpolation between
//! source and target physical parameters, sphere sampling, clamping, and
//! distances.

use crate::seeds::standard_normal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvoError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Point in `[0,1]^D` giving per-dimension progress of the source-to-target
/// interpolation. Components are guaranteed in-range after construction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionParameter {
    values: Vec<f64>,
}

impl EvolutionParameter {
    pub fn new(values: Vec<f64>) -> Result<Self, EvoError> {
        if values.is_empty() {
            return Err(EvoError::InvalidArgument("dimension must be >= 1".into()));
        }
        for (i, v) in values.iter().enumerate() {
            if !(0.0..=1.0).contains(v) {
                return Err(EvoError::InvalidArgument(format!(
                    "component {i} = {v} outside [0,1]"
                )));
            }
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1);
        Self { values: vec![0.0; dim] }
    }

    pub fn ones(dim: usize) -> Self {
        assert!(dim >= 1);
        Self { values: vec![1.0; dim] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Exact-equality test against the all-ones corner; reachable because
    /// clamping snaps saturated components to exactly 1.
    pub fn is_target(&self) -> bool {
        self.values.iter().all(|&v| v == 1.0)
    }

    pub fn distance_to_target(&self) -> f64 {
        distance_to_target(self)
    }
}

/// Source/target physical parameter vectors and the alpha -> theta map.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamSpace {
    theta_source: Vec<f64>,
    theta_target: Vec<f64>,
    dim_names: Vec<String>,
}

impl ParamSpace {
    pub fn new(
        theta_source: Vec<f64>,
        theta_target: Vec<f64>,
        dim_names: Vec<String>,
    ) -> Result<Self, EvoError> {
        if theta_source.is_empty() {
            return Err(EvoError::InvalidArgument("dimension must be >= 1".into()));
        }
        if theta_source.len() != theta_target.len() {
            return Err(EvoError::DimensionMismatch {
                expected: theta_source.len(),
                got: theta_target.len(),
            });
        }
        if dim_names.len() != theta_source.len() {
            return Err(EvoError::DimensionMismatch {
                expected: theta_source.len(),
                got: dim_names.len(),
            });
        }
        for (i, a) in dim_names.iter().enumerate() {
            if dim_names[..i].contains(a) {
                return Err(EvoError::InvalidArgument(format!("duplicate dim name {a:?}")));
            }
        }
        Ok(Self { theta_source, theta_target, dim_names })
    }

    pub fn dim(&self) -> usize {
        self.theta_source.len()
    }

    pub fn theta_source(&self) -> &[f64] {
        &self.theta_source
    }

    pub fn theta_target(&self) -> &[f64] {
        &self.theta_target
    }

    pub fn dim_names(&self) -> &[String] {
        &self.dim_names
    }

    /// Componentwise convex combination `theta = (1-a)*theta_S + a*theta_T`.
    /// Exact at the endpoints: alpha = 0 gives theta_S, alpha = 1 theta_T.
    pub fn interpolate(&self, alpha: &EvolutionParameter) -> Result<Vec<f64>, EvoError> {
        if alpha.dim() != self.dim() {
            return Err(EvoError::DimensionMismatch { expected: self.dim(), got: alpha.dim() });
        }
        Ok(self
            .theta_source
            .iter()
            .zip(&self.theta_target)
            .zip(alpha.values())
            .map(|((&s, &t), &a)| (1.0 - a) * s + a * t)
            .collect())
    }
}

/// Batch of direction vectors on the sphere of radius `radius` in alpha-space.
#[derive(Clone, Debug)]
pub struct SphereSample {
    pub deltas: Vec<Vec<f64>>,
    pub radius: f64,
}

impl SphereSample {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

/// Uniform sample on the (D-1)-sphere of radius `xi`: normalize a standard
/// Gaussian draw and scale. Rejection-free except for the measure-zero
/// near-origin redraw.
pub fn sample_sphere<R: rand::Rng>(
    rng: &mut R,
    dim: usize,
    xi: f64,
    n: usize,
) -> Result<SphereSample, EvoError> {
    if dim < 1 {
        return Err(EvoError::InvalidArgument("dimension must be >= 1".into()));
    }
    if !(xi > 0.0) || !xi.is_finite() {
        return Err(EvoError::InvalidArgument(format!("radius must be positive, got {xi}")));
    }
    if n < 1 {
        return Err(EvoError::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut deltas = Vec::with_capacity(n);
    for _ in 0..n {
        loop {
            let g: Vec<f64> = (0..dim).map(|_| standard_normal(rng)).collect();
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                deltas.push(g.into_iter().map(|x| x / norm * xi).collect());
                break;
            }
        }
    }
    Ok(SphereSample { deltas, radius: xi })
}

/// Componentwise projection onto `[0,1]^D`. Saturated components are snapped
/// to exactly 0 or 1, which makes the `alpha == 1` termination test exact.
pub fn clamp_box(raw: &[f64]) -> EvolutionParameter {
    EvolutionParameter {
        values: raw.iter().map(|&v| v.max(0.0).min(1.0)).collect(),
    }
}

/// Euclidean distance to the all-ones target corner.
pub fn distance_to_target(alpha: &EvolutionParameter) -> f64 {
    alpha
        .values()
        .iter()
        .map(|&a| (1.0 - a) * (1.0 - a))
        .sum::<f64>()
        .sqrt()
}
