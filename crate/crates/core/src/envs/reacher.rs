//! Grasp-handoff reacher: a point mass that must reach and hold the origin.
//! Two actuation channels crossfade along the evolution cube: a "hand"
//! channel that fades out and a "servo" channel that fades in. Grip quality
//! `Q = max(hand, servo)` scales the success tolerance, so a path that
//! saturates the servo before releasing the hand keeps the task easy while
//! the straight diagonal passes through a `Q = 0.5` pinch.

use super::{Env, EnvError, EnvFamily, Step};
use crate::evo::{EvolutionParameter, ParamSpace};
use crate::seeds::standard_normal;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const DIM: usize = 8;
pub const DT: f64 = 0.05;
pub const HOLD_STEPS: usize = 10;
pub const HORIZON: usize = 200;
/// Scripted demonstration controller gains.
pub const PD_KP: f64 = 2.0;
pub const PD_KD: f64 = 1.5;

pub const IDX_HAND_GAIN: usize = 0;
pub const IDX_SERVO_GAIN: usize = 1;
pub const IDX_MASS: usize = 2;
pub const IDX_DAMPING: usize = 3;
pub const IDX_ACTION_SCALE: usize = 4;
pub const IDX_BASE_TOLERANCE: usize = 5;
pub const IDX_START_RADIUS: usize = 6;
pub const IDX_DYN_NOISE: usize = 7;

/// Physical parameters of one instantiated reacher.
#[derive(Clone, Copy, Debug)]
pub struct Phys {
    pub hand_gain: f64,
    pub servo_gain: f64,
    pub mass: f64,
    pub damping: f64,
    pub action_scale: f64,
    pub base_tolerance: f64,
    pub start_radius: f64,
    pub dyn_noise: f64,
}

impl Phys {
    fn from_theta(theta: &[f64]) -> Self {
        Self {
            hand_gain: theta[IDX_HAND_GAIN],
            servo_gain: theta[IDX_SERVO_GAIN],
            mass: theta[IDX_MASS],
            damping: theta[IDX_DAMPING],
            action_scale: theta[IDX_ACTION_SCALE],
            base_tolerance: theta[IDX_BASE_TOLERANCE],
            start_radius: theta[IDX_START_RADIUS],
            dyn_noise: theta[IDX_DYN_NOISE],
        }
    }

    pub fn grip_quality(&self) -> f64 {
        self.hand_gain.max(self.servo_gain)
    }

    /// Success tolerance; the 0.25 floor keeps the task feasible at Q = 0.5.
    pub fn eps_eff(&self) -> f64 {
        self.base_tolerance * (0.25 + 0.75 * self.grip_quality())
    }
}

pub struct ReacherFamily {
    space: ParamSpace,
}

impl Default for ReacherFamily {
    fn default() -> Self {
        Self::new()
    }
}

impl ReacherFamily {
    pub fn new() -> Self {
        let space = ParamSpace::new(
            vec![1.0, 0.0, 1.0, 0.05, 1.0, 0.15, 1.0, 0.0],
            vec![0.0, 1.0, 1.5, 0.15, 0.8, 0.10, 1.2, 0.01],
            vec![
                "hand_gain".into(),
                "servo_gain".into(),
                "mass".into(),
                "damping".into(),
                "action_scale".into(),
                "base_tolerance".into(),
                "start_radius".into(),
                "dyn_noise".into(),
            ],
        )
        .expect("reacher space is well-formed");
        Self { space }
    }

    pub fn phys(&self, alpha: &EvolutionParameter) -> Phys {
        let theta = self.space.interpolate(alpha).expect("alpha dimension matches");
        Phys::from_theta(&theta)
    }
}

impl EnvFamily for ReacherFamily {
    fn id(&self) -> &'static str {
        "grasp-reacher"
    }

    fn dim(&self) -> usize {
        DIM
    }

    fn space(&self) -> &ParamSpace {
        &self.space
    }

    fn obs_dim(&self) -> usize {
        6
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn trainable(&self) -> bool {
        true
    }

    fn supports_state_reset(&self) -> bool {
        true
    }

    fn instantiate(&self, alpha: &EvolutionParameter, noise: ChaCha8Rng) -> Box<dyn Env> {
        Box::new(ReacherEnv {
            phys: self.phys(alpha),
            p: [0.0; 2],
            v: [0.0; 2],
            t: 0,
            hold: 0,
            done: true,
            succeeded: false,
            rng: noise,
        })
    }
}

struct ReacherEnv {
    phys: Phys,
    p: [f64; 2],
    v: [f64; 2],
    t: usize,
    hold: usize,
    done: bool,
    succeeded: bool,
    rng: ChaCha8Rng,
}

impl ReacherEnv {
    fn obs(&self) -> Vec<f64> {
        // [p, v, goal - p] with the goal at the origin
        vec![self.p[0], self.p[1], self.v[0], self.v[1], -self.p[0], -self.p[1]]
    }
}

impl Env for ReacherEnv {
    fn obs_dim(&self) -> usize {
        6
    }

    fn act_dim(&self) -> usize {
        2
    }

    fn horizon(&self) -> usize {
        HORIZON
    }

    fn reset(&mut self) -> Vec<f64> {
        let angle = self.rng.gen::<f64>() * std::f64::consts::TAU;
        self.p = [self.phys.start_radius * angle.cos(), self.phys.start_radius * angle.sin()];
        self.v = [0.0; 2];
        self.t = 0;
        self.hold = 0;
        self.done = false;
        self.succeeded = false;
        self.obs()
    }

    fn step(&mut self, action: &[f64]) -> Step {
        assert!(!self.done, "step on a finished episode");
        debug_assert_eq!(action.len(), 2);
        let gain = self.phys.action_scale * (self.phys.hand_gain + self.phys.servo_gain);
        for i in 0..2 {
            let a = action[i].clamp(-1.0, 1.0);
            let mut v = (1.0 - self.phys.damping) * self.v[i]
                + gain * a * DT / self.phys.mass;
            if self.phys.dyn_noise > 0.0 {
                v += self.phys.dyn_noise * standard_normal(&mut self.rng);
            }
            self.v[i] = v;
            self.p[i] += v * DT;
        }
        self.t += 1;
        let dist = (self.p[0] * self.p[0] + self.p[1] * self.p[1]).sqrt();
        if dist <= self.phys.eps_eff() {
            self.hold += 1;
        } else {
            self.hold = 0;
        }
        let mut reward = 0.0;
        if self.hold >= HOLD_STEPS {
            reward = 1.0;
            self.succeeded = true;
            self.done = true;
        } else if self.t >= HORIZON {
            self.done = true;
        }
        Step { obs: self.obs(), reward, done: self.done }
    }

    fn done(&self) -> bool {
        self.done
    }

    fn succeeded(&self) -> bool {
        self.succeeded
    }

    fn elapsed(&self) -> usize {
        self.t
    }

    fn state_vec(&self) -> Vec<f64> {
        vec![self.p[0], self.p[1], self.v[0], self.v[1], self.hold as f64]
    }

    fn reset_to_state(&mut self, state: &[f64]) -> Result<Vec<f64>, EnvError> {
        if state.len() != 5 {
            return Err(EnvError::InvalidState(format!(
                "expected 5 components, got {}",
                state.len()
            )));
        }
        if state.iter().any(|v| !v.is_finite()) {
            return Err(EnvError::InvalidState("non-finite component".into()));
        }
        let hold = state[4];
        if hold < 0.0 || hold > HOLD_STEPS as f64 || hold.fract() != 0.0 {
            return Err(EnvError::InvalidState(format!("bad hold counter {hold}")));
        }
        self.p = [state[0], state[1]];
        self.v = [state[2], state[3]];
        self.hold = hold as usize;
        self.t = 0;
        self.done = false;
        self.succeeded = false;
        Ok(self.obs())
    }

    fn observe(&self) -> Vec<f64> {
        self.obs()
    }
}

/// Scripted PD controller used to generate demonstrations at alpha = 0.
pub fn scripted_action(state: &[f64]) -> Vec<f64> {
    let (p, v) = (&state[0..2], &state[2..4]);
    (0..2)
        .map(|i| (-PD_KP * p[i] - PD_KD * v[i]).clamp(-1.0, 1.0))
        .collect()
}

/// Run the scripted controller at alpha = 0 and record the state sequence
/// (initial state plus one state per step). The sequence ends in success;
/// a failure indicates a broken environment and is a hard error.
pub fn make_demo_trajectory(
    family: &ReacherFamily,
    noise: ChaCha8Rng,
) -> Result<Vec<Vec<f64>>, EnvError> {
    let alpha = EvolutionParameter::zeros(DIM);
    let mut env = family.instantiate(&alpha, noise);
    env.reset();
    let mut states = vec![env.state_vec()];
    while !env.done() {
        let action = scripted_action(&env.state_vec());
        env.step(&action);
        states.push(env.state_vec());
    }
    if !env.succeeded() {
        return Err(EnvError::DemoFailed(format!(
            "scripted controller did not reach success within {HORIZON} steps"
        )));
    }
    Ok(states)
}
