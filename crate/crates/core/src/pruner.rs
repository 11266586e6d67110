//! Functional pruning of decision-point branches.
//!
//! Branches are tried least frequent first. A removed branch's traffic falls
//! back at run time to the state's most frequent remaining branch; a removal
//! is kept only if the machine's mean return on a fixed seed list stays
//! within tolerance of the unpruned baseline.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::automaton::{
    decision_points, run_policy, Fallback, MooreMachine, ObsId, ObservationEncoder, StateId,
};
use crate::envs::{seed_range, Environment, EvalReport};
use crate::Result;

#[derive(Debug, Error)]
pub enum PruneError {
    #[error("evaluation failed after {} attempts: {message}", log.attempts.len())]
    EvaluationFailure { message: String, log: Box<PruneLog> },
    #[error("invalid pruning configuration: {0}")]
    InvalidConfig(String),
}

/// Allowed drop in mean return below the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tolerance {
    Absolute(f64),
    /// `max(fraction · |baseline|, floor)`.
    Relative { fraction: f64, floor: f64 },
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance::Relative {
            fraction: 0.01,
            floor: 0.5,
        }
    }
}

impl Tolerance {
    pub fn allowed_drop(self, baseline: f64) -> f64 {
        match self {
            Tolerance::Absolute(a) => a,
            Tolerance::Relative { fraction, floor } => (fraction * baseline.abs()).max(floor),
        }
    }

    fn is_valid(self) -> bool {
        match self {
            Tolerance::Absolute(a) => a >= 0.0,
            Tolerance::Relative { fraction, floor } => fraction >= 0.0 && floor >= 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PruneConfig {
    pub seeds: Vec<u64>,
    pub tolerance: Tolerance,
    pub max_passes: usize,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self::with_episodes(20, 0)
    }
}

impl PruneConfig {
    /// Evaluates on seeds `seed_base .. seed_base + episodes`.
    pub fn with_episodes(episodes: usize, seed_base: u64) -> Self {
        Self {
            seeds: seed_range(seed_base, episodes),
            tolerance: Tolerance::default(),
            max_passes: 3,
        }
    }

    fn validate(&self) -> Result<(), PruneError> {
        if self.seeds.is_empty() {
            return Err(PruneError::InvalidConfig("no evaluation seeds".into()));
        }
        if !self.tolerance.is_valid() {
            return Err(PruneError::InvalidConfig("negative tolerance".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneAttempt {
    pub pass: usize,
    pub decision_point: StateId,
    pub obs: ObsId,
    pub target: StateId,
    /// Position of the branch in its state's ascending-frequency order.
    pub rank: usize,
    pub measured_return: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneLog {
    pub baseline_return: f64,
    pub allowed_drop: f64,
    pub episodes: usize,
    pub attempts: Vec<PruneAttempt>,
    /// Mean return of the returned machine, measured after pruning.
    pub final_return: Option<f64>,
}

impl PruneLog {
    pub fn accepted(&self) -> impl Iterator<Item = &PruneAttempt> {
        self.attempts.iter().filter(|a| a.accepted)
    }
}

/// For every decision point, its outgoing observations sorted by ascending
/// count, ties to the lower observation id.
pub fn branch_order(
    mm: &MooreMachine,
    counts: &BTreeMap<(StateId, ObsId), u64>,
) -> BTreeMap<StateId, Vec<ObsId>> {
    decision_points(mm)
        .into_iter()
        .map(|s| {
            let mut obs: Vec<ObsId> = mm.outgoing(s).map(|(o, _)| o).collect();
            obs.sort_by_key(|o| (counts.get(&(s, *o)).copied().unwrap_or(0), *o));
            (s, obs)
        })
        .collect()
}

/// The machine's own transition counts.
pub fn transition_counts(mm: &MooreMachine) -> BTreeMap<(StateId, ObsId), u64> {
    mm.transitions().iter().map(|(k, t)| (*k, t.count)).collect()
}

fn measure(
    mm: &MooreMachine,
    env: &dyn Environment,
    seeds: &[u64],
    encoder: &dyn ObservationEncoder,
) -> Result<EvalReport> {
    run_policy(mm, env, seeds, Fallback::MostFrequentBranch, encoder)
}

/// Greedy pruning, repeated until a pass accepts nothing or `max_passes`
/// passes have run. Branches are ordered by the machine's transition
/// counts; the most frequent branch of a state is never removed. States left
/// unreachable are dropped from the returned machine.
pub fn prune(
    mm: &MooreMachine,
    env: &dyn Environment,
    encoder: &dyn ObservationEncoder,
    cfg: &PruneConfig,
) -> Result<(MooreMachine, PruneLog)> {
    cfg.validate()?;
    let baseline = measure(mm, env, &cfg.seeds, encoder)?.mean;
    let mut log = PruneLog {
        baseline_return: baseline,
        allowed_drop: cfg.tolerance.allowed_drop(baseline),
        episodes: cfg.seeds.len(),
        attempts: Vec::new(),
        final_return: None,
    };
    let threshold = baseline - log.allowed_drop;
    let fail = |e: crate::Error, log: &PruneLog| -> crate::Error {
        PruneError::EvaluationFailure {
            message: e.to_string(),
            log: Box::new(log.clone()),
        }
        .into()
    };
    let mut current = mm.clone();
    for pass in 0..cfg.max_passes {
        let mut changed = false;
        let order = branch_order(&current, &transition_counts(&current));
        for (dp, branches) in order {
            for (rank, obs) in branches.into_iter().enumerate() {
                if !decision_points(&current).contains(&dp) {
                    break;
                }
                let Some(t) = current.transition(dp, obs).copied() else {
                    continue;
                };
                if current.most_frequent_branch(dp).map(|(o, _)| o) == Some(obs) {
                    continue;
                }
                let candidate = current.without_transition(dp, obs);
                let r = match measure(&candidate, env, &cfg.seeds, encoder) {
                    Ok(r) => r.mean,
                    Err(e) => return Err(fail(e, &log)),
                };
                let accepted = r >= threshold;
                log.attempts.push(PruneAttempt {
                    pass,
                    decision_point: dp,
                    obs,
                    target: t.target,
                    rank,
                    measured_return: r,
                    accepted,
                });
                if accepted {
                    current = candidate;
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    let pruned = current.prune_unreachable();
    match measure(&pruned, env, &cfg.seeds, encoder) {
        Ok(r) => log.final_return = Some(r.mean),
        Err(e) => return Err(fail(e, &log)),
    }
    Ok((pruned, log))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolicyClass {
    /// No decision points even before pruning.
    OpenLoop,
    /// Decision points existed but pruning removed them all.
    PrunedOpenLoop,
    Reactive,
}

pub fn classify(original: &MooreMachine, pruned: &MooreMachine) -> PolicyClass {
    if decision_points(original).is_empty() {
        PolicyClass::OpenLoop
    } else if decision_points(pruned).is_empty() {
        PolicyClass::PrunedOpenLoop
    } else {
        PolicyClass::Reactive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::{serialize, DirectCode, MachineBuilder};
    use crate::envs::{parity_oracle_machine, ParityMemoryEnv, SyntheticEnv, SyntheticSpec};

    fn counts(pairs: &[((u32, u32), u64)]) -> BTreeMap<(StateId, ObsId), u64> {
        pairs.iter().map(|&((s, o), c)| ((StateId(s), ObsId(o)), c)).collect()
    }

    fn fan(targets: &[(u32, u32, u64)]) -> MooreMachine {
        let mut b = MachineBuilder::new(1, 1);
        for s in 0..4 {
            b.auto_state(s, 0);
        }
        for o in 0..3 {
            b.auto_obs(o);
        }
        for &(o, t, c) in targets {
            b.trans(0, o, t, c);
        }
        b.build().unwrap()
    }

    #[test]
    fn order_is_ascending_with_low_obs_ties() {
        let mm = fan(&[(0, 1, 7), (1, 2, 2), (2, 3, 2)]);
        let order = branch_order(&mm, &transition_counts(&mm));
        assert_eq!(order[&StateId(0)], vec![ObsId(1), ObsId(2), ObsId(0)]);
        let flat = counts(&[((0, 0), 1), ((0, 1), 1), ((0, 2), 1)]);
        assert_eq!(branch_order(&mm, &flat)[&StateId(0)], vec![ObsId(0), ObsId(1), ObsId(2)]);
        let single = fan(&[(0, 1, 4)]);
        assert!(branch_order(&single, &transition_counts(&single)).is_empty());
    }

    fn redundant_env() -> SyntheticEnv {
        let mm = MachineBuilder::new(2, 2)
            .auto_state(0, 0)
            .auto_state(1, 1)
            .auto_state(2, 1)
            .auto_state(3, 0)
            .auto_obs(0)
            .auto_obs(1)
            .auto_obs(2)
            .trans(0, 0, 1, 3)
            .trans(0, 1, 2, 2)
            .trans(1, 2, 3, 3)
            .trans(2, 2, 3, 2)
            .trans(3, 2, 0, 5)
            .build()
            .unwrap();
        let mut spec = SyntheticSpec::new(mm, 9);
        spec.redundant.insert(StateId(0));
        SyntheticEnv::new(spec).unwrap()
    }

    #[test]
    fn redundant_branch_is_pruned_to_open_loop() {
        let env = redundant_env();
        let mm = env.spec().machine.clone();
        for tolerance in [Tolerance::default(), Tolerance::Absolute(0.0)] {
            let cfg = PruneConfig {
                tolerance,
                ..PruneConfig::with_episodes(20, 0)
            };
            let (pruned, log) = prune(&mm, &env, &DirectCode, &cfg).unwrap();
            assert_eq!(decision_points(&pruned).len(), 0);
            assert_eq!(log.final_return, Some(log.baseline_return));
            assert_eq!(log.baseline_return, 9.0);
            assert_eq!(classify(&mm, &pruned), PolicyClass::PrunedOpenLoop);
            // S2 is only reachable through the pruned branch.
            assert!(!pruned.contains_state(StateId(2)));
            for (k, t) in pruned.transitions() {
                assert_eq!(mm.transitions().get(k), Some(t));
            }
        }
    }

    #[test]
    fn strategic_branch_survives() {
        let mm = parity_oracle_machine();
        let cfg = PruneConfig {
            tolerance: Tolerance::Absolute(0.3),
            ..PruneConfig::with_episodes(100, 0)
        };
        let env = ParityMemoryEnv::new();
        let (pruned, log) = prune(&mm, &env, &DirectCode, &cfg).unwrap();
        assert_eq!(decision_points(&pruned).len(), 1);
        assert_eq!(log.attempts.len(), 1);
        let a = &log.attempts[0];
        assert!(!a.accepted);
        assert!(log.baseline_return - a.measured_return > 0.4, "{}", a.measured_return);
        assert_eq!(serialize(&pruned), serialize(&mm));
        assert_eq!(classify(&mm, &pruned), PolicyClass::Reactive);
    }

    #[test]
    fn open_loop_classification() {
        let mm = fan(&[(0, 1, 3), (1, 1, 1)]);
        assert_eq!(classify(&mm, &mm), PolicyClass::OpenLoop);
    }

    #[test]
    fn pruning_is_reproducible() {
        let env = redundant_env();
        let mm = env.spec().machine.clone();
        let cfg = PruneConfig::default();
        let a = prune(&mm, &env, &DirectCode, &cfg).unwrap();
        let b = prune(&mm, &env, &DirectCode, &cfg).unwrap();
        assert_eq!(serialize(&a.0), serialize(&b.0));
        assert_eq!(serde_json::to_string(&a.1).unwrap(), serde_json::to_string(&b.1).unwrap());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let env = redundant_env();
        let mm = env.spec().machine.clone();
        let empty = PruneConfig::with_episodes(0, 0);
        assert!(prune(&mm, &env, &DirectCode, &empty).is_err());
        let negative = PruneConfig {
            tolerance: Tolerance::Absolute(-1.0),
            ..PruneConfig::default()
        };
        assert!(prune(&mm, &env, &DirectCode, &negative).is_err());
    }

    #[test]
    fn tolerance_rules() {
        assert_eq!(Tolerance::default().allowed_drop(500.0), 5.0);
        assert_eq!(Tolerance::default().allowed_drop(-10.0), 0.5);
        assert_eq!(Tolerance::Absolute(0.2).allowed_drop(100.0), 0.2);
    }
}
