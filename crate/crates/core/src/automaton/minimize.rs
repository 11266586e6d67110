use std::collections::{BTreeMap, HashMap};

use super::{MooreMachine, ObsId, StateId, StateRecord, Transition};

/// Successor of `state` on `obs` after completion with the most frequent
/// branch; `None` for a dead end.
fn completed(mm: &MooreMachine, state: StateId, obs: ObsId) -> Option<StateId> {
    mm.transition(state, obs)
        .or_else(|| mm.most_frequent_branch(state).map(|(_, t)| t))
        .map(|t| t.target)
}

/// Minimal machine with the same run behaviour under the most-frequent-branch
/// fallback.
///
/// Unreachable states are dropped, every row is completed with its most
/// frequent branch, and the states are partitioned by action label (dead ends
/// apart) and refined until stable. Quotient states are numbered densely in
/// order of their smallest member and keep that member's code. Counts of
/// merged transitions are summed. Completion arcs are left out again when the
/// quotient's own fallback already reproduces them, otherwise they are kept
/// with count 1.
pub fn minimize(mm: &MooreMachine) -> MooreMachine {
    let states: Vec<StateId> = mm.reachable().into_iter().collect();
    let alphabet: Vec<ObsId> = mm.observations().keys().copied().collect();

    let mut block: HashMap<StateId, usize> = HashMap::new();
    {
        let mut keys = HashMap::new();
        for &s in &states {
            let key = (mm.action(s).unwrap(), mm.is_terminal(s));
            let n = keys.len();
            block.insert(s, *keys.entry(key).or_insert(n));
        }
    }
    loop {
        let mut keys: HashMap<(usize, Vec<Option<usize>>), usize> = HashMap::new();
        let mut next = HashMap::with_capacity(states.len());
        for &s in &states {
            let row = alphabet
                .iter()
                .map(|&o| completed(mm, s, o).map(|t| block[&t]))
                .collect();
            let n = keys.len();
            next.insert(s, *keys.entry((block[&s], row)).or_insert(n));
        }
        let stable = keys.len() == block.values().collect::<std::collections::HashSet<_>>().len();
        block = next;
        if stable {
            break;
        }
    }

    // Dense ids in order of the smallest member (states are sorted).
    let mut rename: HashMap<usize, StateId> = HashMap::new();
    let mut reps: Vec<StateId> = Vec::new();
    for &s in &states {
        rename.entry(block[&s]).or_insert_with(|| {
            reps.push(s);
            StateId(reps.len() as u32 - 1)
        });
    }
    let class = |s: StateId| rename[&block[&s]];

    let new_states: BTreeMap<StateId, StateRecord> = reps
        .iter()
        .map(|&r| (class(r), mm.state(r).unwrap().clone()))
        .collect();

    let mut explicit: BTreeMap<(StateId, ObsId), Transition> = BTreeMap::new();
    for (&(s, o), t) in mm.transitions() {
        if !block.contains_key(&s) {
            continue;
        }
        explicit
            .entry((class(s), o))
            .and_modify(|e| e.count += t.count)
            .or_insert(Transition {
                target: class(t.target),
                count: t.count,
            });
    }

    let mut transitions = explicit.clone();
    for &r in &reps {
        let c = class(r);
        let Some(&default) = explicit
            .range((c, ObsId(0))..=(c, ObsId(u32::MAX)))
            .fold(None, |best: Option<&Transition>, (_, t)| match best {
                Some(b) if b.count >= t.count => best,
                _ => Some(t),
            })
        else {
            continue;
        };
        let missing: Vec<(ObsId, StateId)> = alphabet
            .iter()
            .filter(|&&o| !explicit.contains_key(&(c, o)))
            .map(|&o| (o, class(completed(mm, r, o).unwrap())))
            .collect();
        let kept: Vec<_> = missing.iter().filter(|(_, t)| *t != default.target).collect();
        // Count-1 arcs could displace the fallback only when it has count 1.
        let displaced = default.count == 1 && !kept.is_empty();
        for (o, t) in &missing {
            if displaced || *t != default.target {
                transitions.insert((c, *o), Transition { target: *t, count: 1 });
            }
        }
    }

    MooreMachine::new(
        mm.hidden_len(),
        mm.obs_len(),
        class(mm.start()),
        new_states,
        mm.observations().clone(),
        transitions,
    )
    .expect("quotient of a valid machine is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::automaton::figure_machine;
    use crate::automaton::{equivalent, MachineBuilder};

    #[test]
    fn minimal_machine_keeps_its_states() {
        let mm = MachineBuilder::new(1, 1)
            .auto_state(0, 0)
            .auto_state(1, 1)
            .auto_obs(0)
            .trans(0, 0, 1, 2)
            .trans(1, 0, 0, 2)
            .build()
            .unwrap();
        assert_eq!(minimize(&mm), mm);
    }

    #[test]
    fn one_state_machine_is_unchanged() {
        let mm = MachineBuilder::new(1, 1)
            .auto_state(0, 0)
            .auto_obs(0)
            .auto_obs(1)
            .trans(0, 1, 0, 3)
            .build()
            .unwrap();
        assert_eq!(minimize(&mm), mm);
    }

    #[test]
    fn identical_rows_merge() {
        // S1 and S2 both have action 1 and loop back to S0.
        let mm = MachineBuilder::new(2, 1)
            .auto_state(0, 0)
            .auto_state(1, 1)
            .auto_state(2, 1)
            .auto_obs(0)
            .auto_obs(1)
            .trans(0, 0, 1, 1)
            .trans(0, 1, 2, 1)
            .trans(1, 0, 0, 1)
            .trans(2, 0, 0, 1)
            .build()
            .unwrap();
        let min = minimize(&mm);
        assert_eq!(min.states().len(), 2);
        assert!(equivalent(&mm, &min, 6).unwrap());
        assert_eq!(min.transition(StateId(1), ObsId(0)).unwrap().count, 2);
    }

    #[test]
    fn figure_machine_minimizes_equivalently() {
        let mm = figure_machine();
        let min = minimize(&mm);
        assert!(min.states().len() <= mm.states().len());
        assert!(equivalent(&mm, &min, 10).unwrap());
        assert_eq!(minimize(&min).states().len(), min.states().len());
    }

    #[test]
    fn unreachable_states_are_dropped() {
        let mm = MachineBuilder::new(1, 1).auto_state(0, 0).auto_state(1, 1).auto_obs(0).build().unwrap();
        assert_eq!(minimize(&mm).states().len(), 1);
    }
}
