//! Transfer of control policies across a family of morphing environments.
//!
//! A source and a target environment are joined by linear interpolation of
//! their physical parameters over an evolution cube `[0,1]^D`. The library
//! walks a path through that cube: it estimates the gradient of episode
//! return with respect to the evolution parameter from sphere probes, blends
//! it with a pull toward the target corner, and fine-tunes the policy with a
//! randomized curriculum at every step that falls below a success-rate gate.
//!
//! Crate layout:
//! - [`evo`]: evolution-parameter arithmetic (cube, interpolation, spheres)
//! - [`envs`]: desk-scale environment families with exact oracles
//! - [`policy`]: Gaussian MLP policy / value function with manual gradients
//! - [`rl`]: rollouts, advantages, natural-gradient updates
//! - [`transfer`]: the path-search loop and the linear baseline
//! - [`expert`]: reverse-curriculum training of the source expert
//! - [`exec`], [`seeds`]: deterministic parallel execution and RNG streams

pub mod envs;
pub mod evo;
pub mod exec;
pub mod expert;
pub mod linalg;
pub mod policy;
pub mod rl;
pub mod seeds;
pub mod transfer;

pub use evo::{clamp_box, distance_to_target, sample_sphere, EvolutionParameter, ParamSpace};
pub use seeds::StreamFactory;
