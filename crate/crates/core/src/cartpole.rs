//! Cart-Pole balancing simulation.
//!
//! Classic pole-balancing dynamics with explicit Euler integration. Failure
//! (reward 0, done) happens when the cart leaves the track or the pole leans
//! past 20 degrees.

use rand::Rng;

use crate::error::{invalid, Result};

pub const GRAVITY: f64 = 9.8;
pub const CART_MASS: f64 = 1.0;
pub const POLE_MASS: f64 = 0.1;
/// Half the pole's length.
pub const POLE_HALF_LENGTH: f64 = 0.5;
pub const FORCE_MAG: f64 = 10.0;
/// Seconds per step.
pub const TAU: f64 = 0.02;
pub const TRACK_LIMIT: f64 = 2.4;
pub const ANGLE_LIMIT_DEG: f64 = 20.0;
pub const ANGLE_LIMIT: f64 = ANGLE_LIMIT_DEG * std::f64::consts::PI / 180.0;
/// Episodes are cut after this many steps (200 s simulated).
pub const MAX_EPISODE_STEPS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CartPoleState {
    pub x: f64,
    pub x_dot: f64,
    /// Pole angle in radians, 0 = upright.
    pub theta: f64,
    pub theta_dot: f64,
}

impl CartPoleState {
    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.x_dot, self.theta, self.theta_dot]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        CartPoleState {
            x: a[0],
            x_dot: a[1],
            theta: a[2],
            theta_dot: a[3],
        }
    }

    pub fn is_failed(&self) -> bool {
        self.x.abs() > TRACK_LIMIT || self.theta.abs() > ANGLE_LIMIT
    }
}

impl std::ops::Neg for CartPoleState {
    type Output = CartPoleState;
    fn neg(self) -> Self {
        CartPoleState {
            x: -self.x,
            x_dot: -self.x_dot,
            theta: -self.theta,
            theta_dot: -self.theta_dot,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub state: CartPoleState,
    pub reward: f64,
    pub done: bool,
}

/// Second derivatives (ẍ, θ̈) at state `s` under horizontal force `force`.
pub fn accelerations(s: &CartPoleState, force: f64) -> (f64, f64) {
    let total_mass = CART_MASS + POLE_MASS;
    let (sin, cos) = s.theta.sin_cos();
    let temp = (force + POLE_MASS * POLE_HALF_LENGTH * s.theta_dot * s.theta_dot * sin) / total_mass;
    let theta_acc = (GRAVITY * sin - cos * temp)
        / (POLE_HALF_LENGTH * (4.0 / 3.0 - POLE_MASS * cos * cos / total_mass));
    let x_acc = temp - POLE_MASS * POLE_HALF_LENGTH * theta_acc * cos / total_mass;
    (x_acc, theta_acc)
}

/// Initial state: every component uniform in [−0.05, 0.05].
pub fn reset<R: Rng + ?Sized>(rng: &mut R) -> CartPoleState {
    let mut draw = || rng.gen_range(-0.05..=0.05);
    CartPoleState {
        x: draw(),
        x_dot: draw(),
        theta: draw(),
        theta_dot: draw(),
    }
}

/// Advances one time step. Action 0 pushes left (−F), action 1 pushes right.
pub fn step(s: &CartPoleState, action: usize) -> Result<StepResult> {
    let force = match action {
        0 => -FORCE_MAG,
        1 => FORCE_MAG,
        a => return invalid(format!("cart-pole action must be 0 or 1, got {a}")),
    };
    let (x_acc, theta_acc) = accelerations(s, force);
    let state = CartPoleState {
        x: s.x + TAU * s.x_dot,
        x_dot: s.x_dot + TAU * x_acc,
        theta: s.theta + TAU * s.theta_dot,
        theta_dot: s.theta_dot + TAU * theta_acc,
    };
    let done = state.is_failed();
    Ok(StepResult {
        state,
        reward: if done { 0.0 } else { 1.0 },
        done,
    })
}
