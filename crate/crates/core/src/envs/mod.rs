//! Environments, scripted experts and the seeded evaluation harness.

mod cartpole;
mod parity;
mod synthetic;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cartpole::{cartpole_accelerations, CartPole, CartPoleExpert, CARTPOLE_MAX_STEPS};
pub use parity::{parity_oracle_machine, ParityMemoryEnv, PARITY_HORIZON};
pub use synthetic::{SyntheticEnv, SyntheticSpec};

use crate::Result;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("step called after the episode ended; call reset first")]
    StepAfterDone,
    #[error("action {action} out of range for {count} actions")]
    InvalidAction { action: usize, count: usize },
    #[error("invalid synthetic environment spec: {0}")]
    InvalidSpec(String),
    #[error("unknown environment `{0}`")]
    UnknownEnv(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// An episodic environment with discrete actions.
///
/// `reset(seed)` must be reproducible: the same seed and action sequence
/// yield the same trajectory. Stepping a finished episode is an error.
pub trait Environment: Send {
    fn name(&self) -> &str;
    fn obs_dim(&self) -> usize;
    fn action_count(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: usize) -> Result<Step, EnvError>;
    fn boxed_clone(&self) -> Box<dyn Environment>;
}

/// Anything that picks actions from observations and may carry memory
/// between steps of one episode.
pub trait Policy: Send {
    fn reset(&mut self);
    fn act(&mut self, obs: &[f64]) -> Result<usize>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub returns: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalReport {
    pub fn from_returns(seeds: Vec<u64>, returns: Vec<f64>) -> Self {
        let n = returns.len().max(1) as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        Self {
            seeds,
            returns,
            mean,
            std: var.sqrt(),
        }
    }
}

pub fn run_episode<P: Policy + ?Sized>(
    policy: &mut P,
    env: &mut dyn Environment,
    seed: u64,
) -> Result<f64> {
    policy.reset();
    let mut obs = env.reset(seed);
    let mut ret = 0.0;
    loop {
        let action = policy.act(&obs)?;
        let step = env.step(action)?;
        ret += step.reward;
        if step.done {
            return Ok(ret);
        }
        obs = step.obs;
    }
}

/// Runs one episode per seed. Episodes run in parallel on independent
/// clones of the policy and environment; the report is in seed order and
/// does not depend on scheduling.
pub fn evaluate_seeds<P: Policy + Clone>(
    policy: &P,
    env: &dyn Environment,
    seeds: &[u64],
) -> Result<EvalReport> {
    let jobs: Vec<_> = seeds
        .iter()
        .map(|&s| (s, policy.clone(), env.boxed_clone()))
        .collect();
    let returns = jobs
        .into_par_iter()
        .map(|(seed, mut p, mut e)| run_episode(&mut p, e.as_mut(), seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport::from_returns(seeds.to_vec(), returns))
}

/// Evaluates on seeds `seed_base .. seed_base + episodes`.
pub fn evaluate<P: Policy + Clone>(
    policy: &P,
    env: &dyn Environment,
    episodes: usize,
    seed_base: u64,
) -> Result<EvalReport> {
    evaluate_seeds(policy, env, &seed_range(seed_base, episodes))
}

pub fn seed_range(base: u64, count: usize) -> Vec<u64> {
    (0..count as u64).map(|i| base + i).collect()
}

/// Built-in environments by name: `cartpole`, `parity`.
pub fn env_by_name(name: &str) -> Result<Box<dyn Environment>, EnvError> {
    match name {
        "cartpole" => Ok(Box::new(CartPole::new())),
        "parity" => Ok(Box::new(ParityMemoryEnv::new())),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}
