//! Policy-gradient training against an [`Environment`].
//!
//! Each episode is played with the current policy. Afterwards every step is
//! replayed through the net, the return-modulated gradient is injected on the
//! logit blob by the MemoryLoss hook, and parameter diffs accumulate. Weights
//! change once every `episodes_per_batch` episodes.

mod env;
mod gradients;
mod policy;

use std::collections::VecDeque;
use std::ops::ControlFlow;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use env::{CartPoleEnv, Environment};
pub use gradients::{
    discount_rewards, dlogps_sigmoid, dlogps_softmax, modulate_gradients, select_action_sigmoid,
    select_action_softmax,
};
pub use policy::PolicyNet;

use crate::backend::Real;
use crate::error::{invalid, model, Result};
use crate::solver::{Solver, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Sigmoid,
    Softmax,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Sigmoid => "sigmoid",
            Variant::Softmax => "softmax",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Variant::Sigmoid),
            "softmax" => Ok(Variant::Softmax),
            _ => invalid(format!("unknown variant '{s}' (expected sigmoid or softmax)")),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord<S> {
    pub state0: S,
    pub action: usize,
    /// One value for sigmoid, the full distribution for softmax.
    pub aprob: Vec<Real>,
    pub reward: Real,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode<S> {
    pub steps: Vec<StepRecord<S>>,
}

impl<S> Episode<S> {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn total_reward(&self) -> Real {
        self.steps.iter().map(|s| s.reward).sum()
    }
}

/// Per-step gradients of one episode.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch {
    pub dlogps: Vec<Vec<Real>>,
    pub returns: Vec<Real>,
    pub diffs: Vec<Vec<Real>>,
}

impl GradientBatch {
    pub fn from_episode<S>(episode: &Episode<S>, variant: Variant, gamma: Real, normalize: bool) -> Result<Self> {
        let dlogps = episode
            .steps
            .iter()
            .map(|s| match variant {
                Variant::Sigmoid => Ok(vec![dlogps_sigmoid(s.action, s.aprob[0])]),
                Variant::Softmax => dlogps_softmax(&s.aprob, s.action),
            })
            .collect::<Result<Vec<_>>>()?;
        let rewards: Vec<Real> = episode.steps.iter().map(|s| s.reward).collect();
        let returns = discount_rewards(&rewards, gamma, normalize)?;
        let diffs = modulate_gradients(&dlogps, &returns, variant)?;
        Ok(GradientBatch { dlogps, returns, diffs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    pub variant: Variant,
    pub gamma: Real,
    pub episodes_per_batch: usize,
    pub normalize_returns: bool,
    pub max_episodes: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            variant: Variant::Sigmoid,
            gamma: 0.99,
            episodes_per_batch: 10,
            normalize_returns: true,
            max_episodes: 1000,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return invalid(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.episodes_per_batch == 0 {
            return invalid("episodes_per_batch must be positive");
        }
        Ok(())
    }
}

/// Progress record emitted after every episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStats {
    /// Zero-based.
    pub episode: usize,
    pub length: usize,
    pub total_reward: Real,
    pub mean_return_last_100: Real,
    pub mean_length_last_100: Real,
    /// Whether the weights were updated after this episode.
    pub updated: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingStats {
    pub episode_lengths: Vec<usize>,
    pub episode_returns: Vec<Real>,
    pub batch_mean_returns: Vec<Real>,
}

/// Plays one episode with the current policy, without touching gradients.
pub fn run_episode<E: Environment>(
    env: &mut E,
    policy: &mut PolicyNet,
    rng: &mut dyn RngCore,
) -> Result<Episode<E::State>> {
    check_env(env, policy)?;
    let mut state = env.reset(rng);
    let mut steps = Vec::new();
    loop {
        let aprob = policy.probabilities(&env.observe(&state))?;
        let action = match policy.variant() {
            Variant::Sigmoid => select_action_sigmoid(aprob[0], rng)?,
            Variant::Softmax => select_action_softmax(&aprob, rng)?,
        };
        let (next, reward, done) = env.step(&state, action)?;
        steps.push(StepRecord {
            state0: state,
            action,
            aprob,
            reward,
        });
        if done || steps.len() >= env.max_steps() {
            break;
        }
        state = next;
    }
    Ok(Episode { steps })
}

fn check_env<E: Environment>(env: &E, policy: &PolicyNet) -> Result<()> {
    let actions = env.num_actions();
    match policy.variant() {
        Variant::Sigmoid if actions != 2 => {
            model(format!("sigmoid policy chooses between 2 actions, environment has {actions}"))
        }
        Variant::Softmax if policy.width() != actions => model(format!(
            "softmax policy has {} outputs, environment has {actions} actions",
            policy.width()
        )),
        _ => Ok(()),
    }
}

/// Injects an episode's modulated gradients step by step, accumulating
/// parameter diffs.
pub fn accumulate_episode<E: Environment>(
    env: &E,
    policy: &mut PolicyNet,
    episode: &Episode<E::State>,
    batch: &GradientBatch,
) -> Result<()> {
    for (step, diff) in episode.steps.iter().zip(&batch.diffs) {
        policy.accumulate(&env.observe(&step.state0), diff)?;
    }
    Ok(())
}

/// Runs up to `cfg.max_episodes` episodes. The sink sees every episode's
/// statistics and may stop training early by returning `Break`.
pub fn train<E: Environment>(
    env: &mut E,
    policy: &mut PolicyNet,
    solver_cfg: SolverConfig,
    cfg: &TrainerConfig,
    sink: &mut dyn FnMut(&EpisodeStats) -> ControlFlow<()>,
) -> Result<TrainingStats> {
    cfg.validate()?;
    if cfg.variant != policy.variant() {
        return invalid(format!(
            "trainer configured for {} but policy is {}",
            cfg.variant,
            policy.variant()
        ));
    }
    check_env(env, policy)?;
    let mut solver = Solver::new(solver_cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut stats = TrainingStats::default();
    let mut window: VecDeque<(usize, Real)> = VecDeque::with_capacity(100);
    let mut batch_returns = Vec::with_capacity(cfg.episodes_per_batch);

    for episode_index in 0..cfg.max_episodes {
        let episode = run_episode(env, policy, &mut rng)?;
        let grads = GradientBatch::from_episode(&episode, cfg.variant, cfg.gamma, cfg.normalize_returns)?;
        accumulate_episode(env, policy, &episode, &grads)?;

        let total = episode.total_reward();
        batch_returns.push(total);
        let updated = batch_returns.len() == cfg.episodes_per_batch;
        if updated {
            solver.apply_update(policy.net())?;
            stats
                .batch_mean_returns
                .push(batch_returns.iter().sum::<Real>() / batch_returns.len() as Real);
            batch_returns.clear();
        }

        if window.len() == 100 {
            window.pop_front();
        }
        window.push_back((episode.len(), total));
        let n = window.len() as Real;
        let record = EpisodeStats {
            episode: episode_index,
            length: episode.len(),
            total_reward: total,
            mean_return_last_100: window.iter().map(|w| w.1).sum::<Real>() / n,
            mean_length_last_100: window.iter().map(|w| w.0 as Real).sum::<Real>() / n,
            updated,
        };
        stats.episode_lengths.push(episode.len());
        stats.episode_returns.push(total);
        if sink(&record).is_break() {
            break;
        }
    }
    Ok(stats)
}
