use std::collections::{BTreeMap, HashMap};

use super::{AutomatonError, MooreMachine, ObsId, StateId, StateRecord, Trace, Transition};
use crate::TernaryCode;

#[derive(Default)]
struct Interner {
    ids: HashMap<TernaryCode, u32>,
    codes: Vec<TernaryCode>,
}

impl Interner {
    fn intern(&mut self, code: &TernaryCode) -> u32 {
        if let Some(&id) = self.ids.get(code) {
            return id;
        }
        let id = self.codes.len() as u32;
        self.ids.insert(code.clone(), id);
        self.codes.push(code.clone());
        id
    }
}

/// Builds a machine with one edge per distinct `(h, f)` pair in the traces.
///
/// State and observation ids are assigned in first-seen order. The action of
/// a tuple labels its successor state `hn`; a state that is never entered
/// (normally only the start state) takes the action of its first outgoing
/// tuple, which is never emitted by [`super::step`].
pub fn build_from_traces(traces: &[Trace]) -> Result<MooreMachine, AutomatonError> {
    let first = traces
        .iter()
        .flat_map(|t| t.steps.first())
        .next()
        .ok_or(AutomatonError::EmptyInput)?;
    let (hidden_len, obs_len) = (first.h.len(), first.f.len());

    let mut states = Interner::default();
    let mut observations = Interner::default();
    let mut entered: HashMap<u32, usize> = HashMap::new();
    let mut left: HashMap<u32, usize> = HashMap::new();
    let mut edges: BTreeMap<(StateId, ObsId), (Transition, usize)> = BTreeMap::new();

    for tuple in traces.iter().flat_map(|t| &t.steps) {
        for (what, code, expected) in [
            ("hidden code", &tuple.h, hidden_len),
            ("next hidden code", &tuple.hn, hidden_len),
            ("observation code", &tuple.f, obs_len),
        ] {
            if code.len() != expected {
                return Err(AutomatonError::DimensionMismatch {
                    what,
                    expected,
                    found: code.len(),
                });
            }
        }
        let s = states.intern(&tuple.h);
        let o = observations.intern(&tuple.f);
        let t = states.intern(&tuple.hn);

        match entered.get(&t) {
            Some(&prev) if prev != tuple.a => {
                return Err(AutomatonError::ConflictingLabel {
                    state: tuple.hn.to_string(),
                    first: prev,
                    second: tuple.a,
                })
            }
            Some(_) => {}
            None => {
                entered.insert(t, tuple.a);
            }
        }
        left.entry(s).or_insert(tuple.a);

        let key = (StateId(s), ObsId(o));
        match edges.get_mut(&key) {
            Some((edge, action)) => {
                if edge.target != StateId(t) || *action != tuple.a {
                    return Err(AutomatonError::ConflictingTransition {
                        state: tuple.h.to_string(),
                        obs: tuple.f.to_string(),
                        first_target: states.codes[edge.target.0 as usize].to_string(),
                        first_action: *action,
                        second_target: tuple.hn.to_string(),
                        second_action: tuple.a,
                    });
                }
                edge.count += 1;
            }
            None => {
                edges.insert(
                    key,
                    (
                        Transition {
                            target: StateId(t),
                            count: 1,
                        },
                        tuple.a,
                    ),
                );
            }
        }
    }

    let state_map = states
        .codes
        .iter()
        .enumerate()
        .map(|(i, code)| {
            let i = i as u32;
            let action = entered.get(&i).or_else(|| left.get(&i)).copied().unwrap_or(0);
            (
                StateId(i),
                StateRecord {
                    action,
                    code: code.clone(),
                },
            )
        })
        .collect();
    let obs_map = observations
        .codes
        .into_iter()
        .enumerate()
        .map(|(i, c)| (ObsId(i as u32), c))
        .collect();
    let transitions = edges.into_iter().map(|(k, (t, _))| (k, t)).collect();
    MooreMachine::new(hidden_len, obs_len, StateId(0), state_map, obs_map, transitions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::{stats, TransitionTuple};

    fn code(v: &[i8]) -> TernaryCode {
        TernaryCode::new(v.to_vec()).unwrap()
    }

    fn tuple(h: &[i8], a: usize, f: &[i8], hn: &[i8]) -> TransitionTuple {
        TransitionTuple {
            h: code(h),
            a,
            f: code(f),
            hn: code(hn),
        }
    }

    fn abc() -> Trace {
        Trace {
            ret: 2.0,
            steps: vec![tuple(&[1], 0, &[0], &[0]), tuple(&[0], 1, &[1], &[-1])],
        }
    }

    #[test]
    fn chain_of_three() {
        let mm = build_from_traces(&[abc()]).unwrap();
        let s = stats(&mm);
        assert_eq!((s.states, s.transitions), (3, 2));
        assert!(mm.transitions().values().all(|t| t.count == 1));
        assert_eq!(mm.start(), StateId(0));
        assert_eq!(mm.state(StateId(0)).unwrap().code, code(&[1]));
        assert_eq!(mm.action(StateId(2)), Some(1));
    }

    #[test]
    fn duplicate_traces_double_counts() {
        let mm = build_from_traces(&[abc(), abc()]).unwrap();
        assert_eq!(mm.transitions().len(), 2);
        assert!(mm.transitions().values().all(|t| t.count == 2));
    }

    #[test]
    fn empty_input() {
        assert_eq!(build_from_traces(&[]), Err(AutomatonError::EmptyInput));
        let empty = Trace {
            ret: 0.0,
            steps: vec![],
        };
        assert_eq!(build_from_traces(&[empty]), Err(AutomatonError::EmptyInput));
    }

    #[test]
    fn conflicting_target_is_an_error() {
        let t = Trace {
            ret: 0.0,
            steps: vec![tuple(&[1], 0, &[0], &[0]), tuple(&[0], 1, &[1], &[1])],
        };
        let bad = Trace {
            ret: 0.0,
            steps: vec![tuple(&[1], 0, &[0], &[-1])],
        };
        assert!(matches!(
            build_from_traces(&[t, bad]),
            Err(AutomatonError::ConflictingTransition { .. })
        ));
    }

    #[test]
    fn conflicting_action_is_an_error() {
        let t = Trace {
            ret: 0.0,
            steps: vec![tuple(&[1], 0, &[0], &[0]), tuple(&[1], 1, &[0], &[0])],
        };
        assert!(build_from_traces(&[t]).is_err());
    }

    #[test]
    fn dimension_mismatch() {
        let t = Trace {
            ret: 0.0,
            steps: vec![tuple(&[1], 0, &[0], &[0]), tuple(&[0, 1], 1, &[1], &[1])],
        };
        assert!(matches!(
            build_from_traces(&[t]),
            Err(AutomatonError::DimensionMismatch { .. })
        ));
    }
}
