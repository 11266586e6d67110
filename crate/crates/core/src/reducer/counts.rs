use std::collections::BTreeMap;

use serde::Serialize;

use super::ReduceError;
use crate::automaton::{step, Fallback, MooreMachine, ObsId, StateId, Trace};

/// One replayed step: `(state, observation, next state)`.
pub(crate) type Hop = (StateId, ObsId, StateId);

/// Replays every trace with exact binding and no fallback.
pub(crate) fn replay(mm: &MooreMachine, traces: &[Trace]) -> Result<Vec<Vec<Hop>>, ReduceError> {
    traces
        .iter()
        .enumerate()
        .map(|(ti, trace)| {
            let mut state = mm.start();
            trace
                .steps
                .iter()
                .enumerate()
                .map(|(si, tuple)| {
                    let fail = |message: String| ReduceError::ReplayMismatch {
                        trace: ti,
                        step: si,
                        message,
                    };
                    let code = &mm.state(state).expect("machine state").code;
                    if *code != tuple.h {
                        return Err(fail(format!("expected hidden code {code}, trace has {}", tuple.h)));
                    }
                    let obs = mm
                        .obs_id(&tuple.f)
                        .ok_or_else(|| fail(format!("observation code {} not in alphabet", tuple.f)))?;
                    let (next, action) =
                        step(mm, state, obs, Fallback::Fail).map_err(|e| fail(e.to_string()))?;
                    let next_code = &mm.state(next).expect("machine state").code;
                    if *next_code != tuple.hn || action != tuple.a {
                        return Err(fail(format!(
                            "machine moves to {next_code} with action {action}, trace has {} with action {}",
                            tuple.hn, tuple.a
                        )));
                    }
                    let hop = (state, obs, next);
                    state = next;
                    Ok(hop)
                })
                .collect()
        })
        .collect()
}

/// Occupancy and transition counts from one replay of a set of traces.
///
/// `states` counts every time a state is occupied, including the start of
/// each episode; `endings` counts episodes that end in a state. For every
/// state, outgoing transition counts sum to `states - endings`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct VisitCounts {
    pub states: BTreeMap<StateId, u64>,
    pub transitions: BTreeMap<(StateId, ObsId), u64>,
    pub endings: BTreeMap<StateId, u64>,
}

impl VisitCounts {
    pub fn state(&self, s: StateId) -> u64 {
        self.states.get(&s).copied().unwrap_or(0)
    }

    /// Total count over all observations from `from` to `to`.
    pub fn pair(&self, mm: &MooreMachine, from: StateId, to: StateId) -> u64 {
        mm.outgoing(from)
            .filter(|(_, t)| t.target == to)
            .map(|(o, _)| self.transitions.get(&(from, o)).copied().unwrap_or(0))
            .sum()
    }

    pub(crate) fn from_hops(start: StateId, runs: &[Vec<Hop>]) -> Self {
        let mut c = Self::default();
        for run in runs {
            *c.states.entry(start).or_default() += 1;
            let mut last = start;
            for &(s, o, t) in run {
                *c.transitions.entry((s, o)).or_default() += 1;
                *c.states.entry(t).or_default() += 1;
                last = t;
            }
            *c.endings.entry(last).or_default() += 1;
        }
        c
    }
}

/// Replays the traces (exact binding, no fallback) and tallies visits.
pub fn visit_counts(mm: &MooreMachine, traces: &[Trace]) -> Result<VisitCounts, ReduceError> {
    Ok(VisitCounts::from_hops(mm.start(), &replay(mm, traces)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::{rollout_traces, MachineBuilder};
    use crate::envs::{SyntheticEnv, SyntheticSpec};
    use crate::automaton::DirectCode;

    fn chain_traces(mm: &MooreMachine, path: &[(u32, u32)]) -> Trace {
        let code = |s: u32| mm.state(StateId(s)).unwrap().code.clone();
        let mut steps = Vec::new();
        let mut cur = mm.start().0;
        for &(o, t) in path {
            steps.push(crate::automaton::TransitionTuple {
                h: code(cur),
                a: mm.action(StateId(t)).unwrap(),
                f: mm.obs_code(ObsId(o)).unwrap().clone(),
                hn: code(t),
            });
            cur = t;
        }
        Trace { ret: 0.0, steps }
    }

    #[test]
    fn chain_is_visited_once_each() {
        let mm = MachineBuilder::new(1, 1)
            .auto_state(0, 0)
            .auto_state(1, 1)
            .auto_state(2, 0)
            .auto_obs(0)
            .trans(0, 0, 1, 1)
            .trans(1, 0, 2, 1)
            .build()
            .unwrap();
        let c = visit_counts(&mm, &[chain_traces(&mm, &[(0, 1), (0, 2)])]).unwrap();
        assert_eq!(c.states.values().copied().collect::<Vec<_>>(), vec![1, 1, 1]);
        assert_eq!(c.endings[&StateId(2)], 1);
    }

    #[test]
    fn two_state_loop_three_times() {
        let mm = MachineBuilder::new(1, 1)
            .auto_state(0, 0)
            .auto_state(1, 1)
            .auto_obs(0)
            .trans(0, 0, 1, 3)
            .trans(1, 0, 0, 3)
            .build()
            .unwrap();
        let t = chain_traces(&mm, &[(0, 1), (0, 0), (0, 1), (0, 0), (0, 1), (0, 0)]);
        let c = visit_counts(&mm, &[t]).unwrap();
        assert_eq!(c.state(StateId(1)), 3);
        // Start occupied at the beginning plus three returns.
        assert_eq!(c.state(StateId(0)), 4);
    }

    #[test]
    fn wrong_trace_is_a_replay_mismatch() {
        let mm = MachineBuilder::new(1, 1)
            .auto_state(0, 0)
            .auto_state(1, 1)
            .auto_obs(0)
            .auto_obs(1)
            .trans(0, 0, 1, 1)
            .build()
            .unwrap();
        let mut t = chain_traces(&mm, &[(0, 1)]);
        t.steps[0].a = 0;
        assert!(matches!(visit_counts(&mm, &[t.clone()]), Err(ReduceError::ReplayMismatch { .. })));
        t.steps[0].a = 1;
        t.steps[0].f = mm.obs_code(ObsId(1)).unwrap().clone();
        assert!(visit_counts(&mm, &[t]).is_err());
    }

    /// Six-state machine driven by a synthetic environment; the tallies are
    /// checked against a direct count of the recorded hops.
    #[test]
    fn counts_match_hand_tally_and_flow_balance() {
        let mm = MachineBuilder::new(2, 1)
            .auto_state(0, 0)
            .auto_state(1, 1)
            .auto_state(2, 0)
            .auto_state(3, 1)
            .auto_state(4, 0)
            .auto_state(5, 1)
            .auto_obs(0)
            .auto_obs(1)
            .trans(0, 0, 1, 1)
            .trans(0, 1, 2, 1)
            .trans(1, 0, 3, 1)
            .trans(2, 0, 3, 1)
            .trans(3, 0, 4, 1)
            .trans(3, 1, 5, 1)
            .trans(4, 0, 0, 1)
            .trans(5, 0, 0, 1)
            .build()
            .unwrap();
        let env = SyntheticEnv::new(SyntheticSpec::new(mm.clone(), 13)).unwrap();
        let traces = rollout_traces(&mm, &mut env.clone(), &[1, 2, 3], Fallback::Fail, &DirectCode).unwrap();
        let c = visit_counts(&mm, &traces).unwrap();

        let mut hand: BTreeMap<StateId, u64> = BTreeMap::new();
        for t in &traces {
            *hand.entry(StateId(0)).or_default() += 1;
            for tuple in &t.steps {
                let id = mm.states().iter().find(|(_, r)| r.code == tuple.hn).unwrap().0;
                *hand.entry(*id).or_default() += 1;
            }
        }
        assert_eq!(c.states, hand);
        assert_eq!(c.transitions.values().sum::<u64>(), 39);
        for (&s, &v) in &c.states {
            let out: u64 = c.transitions.range((s, ObsId(0))..=(s, ObsId(u32::MAX))).map(|(_, n)| n).sum();
            assert_eq!(out, v - c.endings.get(&s).copied().unwrap_or(0));
        }
    }
}
