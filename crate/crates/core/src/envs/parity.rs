use rand::Rng;

use super::{EnvError, Environment, Step};
use crate::automaton::{MachineBuilder, MooreMachine};
use crate::{seed, TernaryCode};

pub const PARITY_HORIZON: usize = 3;

/// Memory task: the first observation is `[1, ±1]` carrying a random bit,
/// later observations are `[0, 0]`. The last of three actions earns 1 iff it
/// equals the bit (1 for `+1`, 0 for `-1`). Earlier actions are free.
#[derive(Debug, Clone)]
pub struct ParityMemoryEnv {
    bit: usize,
    t: usize,
}

impl Default for ParityMemoryEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl ParityMemoryEnv {
    pub fn new() -> Self {
        Self {
            bit: 0,
            t: PARITY_HORIZON,
        }
    }

    pub fn bit(&self) -> usize {
        self.bit
    }
}

impl Environment for ParityMemoryEnv {
    fn name(&self) -> &str {
        "parity"
    }

    fn obs_dim(&self) -> usize {
        2
    }

    fn action_count(&self) -> usize {
        2
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.bit = usize::from(seed::rng(seed).gen_bool(0.5));
        self.t = 0;
        vec![1.0, if self.bit == 1 { 1.0 } else { -1.0 }]
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        if self.t >= PARITY_HORIZON {
            return Err(EnvError::StepAfterDone);
        }
        if action > 1 {
            return Err(EnvError::InvalidAction { action, count: 2 });
        }
        self.t += 1;
        let done = self.t == PARITY_HORIZON;
        let reward = if done && action == self.bit { 1.0 } else { 0.0 };
        Ok(Step {
            obs: vec![0.0, 0.0],
            reward,
            done,
        })
    }

    fn boxed_clone(&self) -> Box<dyn Environment> {
        Box::new(self.clone())
    }
}

/// The optimal machine: one decision point at the start, two three-state
/// memory chains, the last state of each labelled with the remembered bit.
/// Observations are the raw codes `++`, `+-` and `00`.
pub fn parity_oracle_machine() -> MooreMachine {
    let code = |s: &str| TernaryCode::parse_symbols(s).expect("literal code");
    MachineBuilder::new(2, 2)
        .auto_state(0, 0)
        .auto_state(1, 0)
        .auto_state(2, 0)
        .auto_state(3, 1)
        .auto_state(4, 0)
        .auto_state(5, 0)
        .auto_state(6, 0)
        .obs(0, code("++"))
        .obs(1, code("+-"))
        .obs(2, code("00"))
        .trans(0, 0, 1, 1)
        .trans(1, 2, 2, 1)
        .trans(2, 2, 3, 1)
        .trans(0, 1, 4, 1)
        .trans(4, 2, 5, 1)
        .trans(5, 2, 6, 1)
        .build()
        .expect("oracle machine is well formed")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::{decision_points, run_policy, DirectCode, Fallback};
    use crate::envs::{evaluate, seed_range, Policy};

    #[test]
    fn oracle_machine_is_optimal() {
        let mm = parity_oracle_machine();
        assert_eq!(decision_points(&mm).len(), 1);
        let r = run_policy(
            &mm,
            &ParityMemoryEnv::new(),
            &seed_range(0, 50),
            Fallback::MostFrequentBranch,
            &DirectCode,
        )
        .unwrap();
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn bit_ignoring_policy_scores_about_half() {
        #[derive(Clone)]
        struct One;
        impl Policy for One {
            fn reset(&mut self) {}
            fn act(&mut self, _: &[f64]) -> crate::Result<usize> {
                Ok(1)
            }
        }
        let r = evaluate(&One, &ParityMemoryEnv::new(), 2000, 0).unwrap();
        assert!((r.mean - 0.5).abs() < 0.05, "{}", r.mean);
    }

    #[test]
    fn horizon_and_step_after_done() {
        let mut env = ParityMemoryEnv::new();
        env.reset(1);
        assert!(!env.step(0).unwrap().done);
        assert!(!env.step(0).unwrap().done);
        assert!(env.step(0).unwrap().done);
        assert_eq!(env.step(0), Err(EnvError::StepAfterDone));
    }
}
