use rand::RngCore;

use crate::backend::Real;
use crate::cartpole::{self, CartPoleState, MAX_EPISODE_STEPS};
use crate::error::Result;

/// Anything the trainer can run episodes against.
pub trait Environment {
    type State: Clone + std::fmt::Debug;

    fn num_actions(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Self::State;
    /// Returns (next state, reward, done).
    fn step(&mut self, state: &Self::State, action: usize) -> Result<(Self::State, Real, bool)>;
    /// The network input for a state.
    fn observe(&self, state: &Self::State) -> Vec<Real>;
    /// Hard cap on steps per episode.
    fn max_steps(&self) -> usize;
}

/// Cart-Pole with the standard 10,000 step cap.
#[derive(Debug, Clone, Copy)]
pub struct CartPoleEnv {
    pub max_steps: usize,
}

impl Default for CartPoleEnv {
    fn default() -> Self {
        CartPoleEnv {
            max_steps: MAX_EPISODE_STEPS,
        }
    }
}

impl Environment for CartPoleEnv {
    type State = CartPoleState;

    fn num_actions(&self) -> usize {
        2
    }

    fn reset(&mut self, rng: &mut dyn RngCore) -> CartPoleState {
        cartpole::reset(rng)
    }

    fn step(&mut self, state: &CartPoleState, action: usize) -> Result<(CartPoleState, Real, bool)> {
        let r = cartpole::step(state, action)?;
        Ok((r.state, r.reward as Real, r.done))
    }

    fn observe(&self, state: &CartPoleState) -> Vec<Real> {
        state.to_array().iter().map(|&v| v as Real).collect()
    }

    fn max_steps(&self) -> usize {
        self.max_steps
    }
}
