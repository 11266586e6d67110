use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::AutomatonError;
use crate::TernaryCode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObsId(pub u32);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "S{}", self.0)
    }
}

impl fmt::Display for ObsId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "O{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateRecord {
    pub action: usize,
    pub code: TernaryCode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transition {
    pub target: StateId,
    pub count: u64,
}

/// A Moore machine with a partial transition function.
///
/// Values are immutable once built; all analyses take `&MooreMachine` and
/// return new machines or views.
#[derive(Debug, Clone)]
pub struct MooreMachine {
    hidden_len: usize,
    obs_len: usize,
    start: StateId,
    states: BTreeMap<StateId, StateRecord>,
    obs: BTreeMap<ObsId, TernaryCode>,
    obs_index: HashMap<TernaryCode, ObsId>,
    transitions: BTreeMap<(StateId, ObsId), Transition>,
}

impl PartialEq for MooreMachine {
    fn eq(&self, other: &Self) -> bool {
        self.hidden_len == other.hidden_len
            && self.obs_len == other.obs_len
            && self.start == other.start
            && self.states == other.states
            && self.obs == other.obs
            && self.transitions == other.transitions
    }
}

impl MooreMachine {
    /// Checks every structural invariant and builds the machine.
    pub fn new(
        hidden_len: usize,
        obs_len: usize,
        start: StateId,
        states: BTreeMap<StateId, StateRecord>,
        obs: BTreeMap<ObsId, TernaryCode>,
        transitions: BTreeMap<(StateId, ObsId), Transition>,
    ) -> Result<Self, AutomatonError> {
        let invalid = |m: String| Err(AutomatonError::Invalid(m));
        if !states.contains_key(&start) {
            return invalid(format!("start state {start} is not a state"));
        }
        for (id, s) in &states {
            if s.code.len() != hidden_len {
                return invalid(format!(
                    "state {id} code has length {}, expected {hidden_len}",
                    s.code.len()
                ));
            }
        }
        let mut obs_index = HashMap::with_capacity(obs.len());
        for (id, code) in &obs {
            if code.len() != obs_len {
                return invalid(format!(
                    "observation {id} code has length {}, expected {obs_len}",
                    code.len()
                ));
            }
            if obs_index.insert(code.clone(), *id).is_some() {
                return invalid(format!("observation code {code} appears twice"));
            }
        }
        for (&(s, o), t) in &transitions {
            if !states.contains_key(&s) || !states.contains_key(&t.target) {
                return invalid(format!("transition {s} --{o}--> {} has an unknown state", t.target));
            }
            if !obs.contains_key(&o) {
                return invalid(format!("transition {s} --{o}--> {} has an unknown observation", t.target));
            }
            if t.count == 0 {
                return invalid(format!("transition {s} --{o}--> {} has zero count", t.target));
            }
        }
        Ok(Self {
            hidden_len,
            obs_len,
            start,
            states,
            obs,
            obs_index,
            transitions,
        })
    }

    pub fn hidden_len(&self) -> usize {
        self.hidden_len
    }

    pub fn obs_len(&self) -> usize {
        self.obs_len
    }

    pub fn start(&self) -> StateId {
        self.start
    }

    pub fn states(&self) -> &BTreeMap<StateId, StateRecord> {
        &self.states
    }

    pub fn state(&self, id: StateId) -> Option<&StateRecord> {
        self.states.get(&id)
    }

    pub fn contains_state(&self, id: StateId) -> bool {
        self.states.contains_key(&id)
    }

    pub fn action(&self, id: StateId) -> Option<usize> {
        self.states.get(&id).map(|s| s.action)
    }

    pub fn observations(&self) -> &BTreeMap<ObsId, TernaryCode> {
        &self.obs
    }

    pub fn obs_code(&self, id: ObsId) -> Option<&TernaryCode> {
        self.obs.get(&id)
    }

    pub fn obs_id(&self, code: &TernaryCode) -> Option<ObsId> {
        self.obs_index.get(code).copied()
    }

    /// Exact match, otherwise the observation at the smallest Hamming distance
    /// (ties to the lowest id). `None` only for an empty alphabet or a code of
    /// the wrong length.
    pub fn bind_code(&self, code: &TernaryCode) -> Option<ObsId> {
        if code.len() != self.obs_len {
            return None;
        }
        if let Some(id) = self.obs_id(code) {
            return Some(id);
        }
        self.obs
            .iter()
            .min_by_key(|(id, c)| (c.hamming(code), **id))
            .map(|(id, _)| *id)
    }

    pub fn transitions(&self) -> &BTreeMap<(StateId, ObsId), Transition> {
        &self.transitions
    }

    pub fn transition(&self, state: StateId, obs: ObsId) -> Option<&Transition> {
        self.transitions.get(&(state, obs))
    }

    pub fn outgoing(&self, state: StateId) -> impl Iterator<Item = (ObsId, &Transition)> + '_ {
        self.transitions
            .range((state, ObsId(0))..=(state, ObsId(u32::MAX)))
            .map(|(&(_, o), t)| (o, t))
    }

    pub fn successors(&self, state: StateId) -> BTreeSet<StateId> {
        self.outgoing(state).map(|(_, t)| t.target).collect()
    }

    pub fn is_terminal(&self, state: StateId) -> bool {
        self.outgoing(state).next().is_none()
    }

    /// Outgoing transition with the highest count, ties to the lowest
    /// observation id.
    pub fn most_frequent_branch(&self, state: StateId) -> Option<(ObsId, &Transition)> {
        self.outgoing(state)
            .fold(None, |best: Option<(ObsId, &Transition)>, (o, t)| match best {
                Some((_, bt)) if bt.count >= t.count => best,
                _ => Some((o, t)),
            })
    }

    /// States reachable from the start state.
    pub fn reachable(&self) -> BTreeSet<StateId> {
        let mut seen = BTreeSet::from([self.start]);
        let mut stack = vec![self.start];
        while let Some(s) = stack.pop() {
            for (_, t) in self.outgoing(s) {
                if seen.insert(t.target) {
                    stack.push(t.target);
                }
            }
        }
        seen
    }

    /// Observation ids that label at least one transition.
    pub fn used_observations(&self) -> BTreeSet<ObsId> {
        self.transitions.keys().map(|&(_, o)| o).collect()
    }

    pub(crate) fn without_transition(&self, state: StateId, obs: ObsId) -> Self {
        let mut m = self.clone();
        m.transitions.remove(&(state, obs));
        m
    }

    /// Drops states that cannot be reached from the start, along with their
    /// transitions.
    pub(crate) fn prune_unreachable(&self) -> Self {
        let keep = self.reachable();
        let mut m = self.clone();
        m.states.retain(|id, _| keep.contains(id));
        m.transitions.retain(|(s, _), _| keep.contains(s));
        m
    }
}

/// Incremental construction of a machine by hand.
#[derive(Debug, Clone, Default)]
pub struct MachineBuilder {
    hidden_len: usize,
    obs_len: usize,
    start: Option<StateId>,
    states: BTreeMap<StateId, StateRecord>,
    obs: BTreeMap<ObsId, TernaryCode>,
    transitions: BTreeMap<(StateId, ObsId), Transition>,
}

impl MachineBuilder {
    pub fn new(hidden_len: usize, obs_len: usize) -> Self {
        Self {
            hidden_len,
            obs_len,
            ..Self::default()
        }
    }

    pub fn state(&mut self, id: u32, action: usize, code: TernaryCode) -> &mut Self {
        self.states.insert(StateId(id), StateRecord { action, code });
        self
    }

    /// State whose code is derived from its id.
    pub fn auto_state(&mut self, id: u32, action: usize) -> &mut Self {
        let code = TernaryCode::from_index(id as usize, self.hidden_len);
        self.state(id, action, code)
    }

    pub fn obs(&mut self, id: u32, code: TernaryCode) -> &mut Self {
        self.obs.insert(ObsId(id), code);
        self
    }

    pub fn auto_obs(&mut self, id: u32) -> &mut Self {
        let code = TernaryCode::from_index(id as usize, self.obs_len);
        self.obs(id, code)
    }

    pub fn start(&mut self, id: u32) -> &mut Self {
        self.start = Some(StateId(id));
        self
    }

    pub fn trans(&mut self, from: u32, obs: u32, to: u32, count: u64) -> &mut Self {
        self.transitions.insert(
            (StateId(from), ObsId(obs)),
            Transition {
                target: StateId(to),
                count,
            },
        );
        self
    }

    pub fn build(&self) -> Result<MooreMachine, AutomatonError> {
        let start = self
            .start
            .or_else(|| self.states.keys().next().copied())
            .ok_or_else(|| AutomatonError::Invalid("machine has no states".into()))?;
        MooreMachine::new(
            self.hidden_len,
            self.obs_len,
            start,
            self.states.clone(),
            self.obs.clone(),
            self.transitions.clone(),
        )
    }
}

/// The counts reported per machine in the results tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineStats {
    pub decision_points: usize,
    pub states: usize,
    pub observations: usize,
    pub transitions: usize,
    pub mean_return: Option<f64>,
    pub episodes_evaluated: usize,
}

/// States whose outgoing transitions reach at least two distinct successors.
/// Several observations leading to the same successor do not count.
pub fn decision_points(mm: &MooreMachine) -> Vec<StateId> {
    mm.states()
        .keys()
        .copied()
        .filter(|&s| {
            let mut targets = mm.outgoing(s).map(|(_, t)| t.target);
            match targets.next() {
                Some(first) => targets.any(|t| t != first),
                None => false,
            }
        })
        .collect()
}

pub fn stats(mm: &MooreMachine) -> MachineStats {
    MachineStats {
        decision_points: decision_points(mm).len(),
        states: mm.states().len(),
        observations: mm.used_observations().len(),
        transitions: mm.transitions().len(),
        mean_return: None,
        episodes_evaluated: 0,
    }
}

impl MachineStats {
    pub fn with_returns(mut self, mean: f64, episodes: usize) -> Self {
        self.mean_return = Some(mean);
        self.episodes_evaluated = episodes;
        self
    }
}
